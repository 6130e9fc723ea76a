#ifndef ASMCMC_HPP
#define ASMCMC_HPP

#include "asmcmc/core.hpp"
#include "asmcmc/diagnostics.hpp"
#include "asmcmc/estimators.hpp"
#include "asmcmc/experiments.hpp"
#include "asmcmc/models.hpp"
#include "asmcmc/samplers.hpp"
#include "asmcmc/smc.hpp"
#include "asmcmc/subspace.hpp"
#include "asmcmc/trace.hpp"

#endif  // ASMCMC_HPP
