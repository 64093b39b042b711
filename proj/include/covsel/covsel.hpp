#pragma once

#include "covsel/baselines.hpp"
#include "covsel/clustering.hpp"
#include "covsel/config.hpp"
#include "covsel/coords.hpp"
#include "covsel/diagnostics.hpp"
#include "covsel/errors.hpp"
#include "covsel/gradblock.hpp"
#include "covsel/linalg.hpp"
#include "covsel/metric.hpp"
#include "covsel/pool_io.hpp"
#include "covsel/result.hpp"
#include "covsel/rng.hpp"
#include "covsel/select.hpp"
#include "covsel/stages.hpp"
#include "covsel/stats.hpp"
#include "covsel/synth.hpp"
#include "covsel/weights.hpp"
