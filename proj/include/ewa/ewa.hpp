#ifndef EWA_EWA_HPP
#define EWA_EWA_HPP

#include "ewa/compatibility.hpp"
#include "ewa/core.hpp"
#include "ewa/experiment.hpp"
#include "ewa/io.hpp"
#include "ewa/lasso.hpp"
#include "ewa/model.hpp"
#include "ewa/orthonormal.hpp"
#include "ewa/quadrature.hpp"
#include "ewa/random.hpp"
#include "ewa/sampler.hpp"
#include "ewa/special.hpp"
#include "ewa/trace.hpp"

#endif  // EWA_EWA_HPP
