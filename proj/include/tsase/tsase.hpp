#pragma once

// Umbrella header for the whole toolkit.

#include "tsase/am.hpp"
#include "tsase/experiment.hpp"
#include "tsase/lnrt.hpp"
#include "tsase/scada.hpp"
#include "tsase/vulnerability.hpp"
