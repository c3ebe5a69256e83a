#pragma once

#include "hqinf/analytic_limits.hpp"
#include "hqinf/arrival_models.hpp"
#include "hqinf/limit_paths.hpp"
#include "hqinf/quadrature.hpp"
#include "hqinf/queue_sim.hpp"
#include "hqinf/random.hpp"
#include "hqinf/scaling_empirics.hpp"
#include "hqinf/service_models.hpp"
#include "hqinf/statistics.hpp"
