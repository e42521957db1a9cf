#pragma once

// Umbrella header.

#include "xbarsim/circuit.hpp"
#include "xbarsim/error.hpp"
#include "xbarsim/mapping.hpp"
#include "xbarsim/model_spec.hpp"
#include "xbarsim/nn.hpp"
#include "xbarsim/pruning.hpp"
#include "xbarsim/rng.hpp"
#include "xbarsim/tiling.hpp"
#include "xbarsim/harness/config.hpp"
#include "xbarsim/harness/io.hpp"
#include "xbarsim/harness/pipeline.hpp"
#include "xbarsim/harness/report.hpp"
#include "xbarsim/harness/sweep.hpp"
