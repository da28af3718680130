#pragma once

// Umbrella header: the whole library.

#include "iskf/errors.hpp"
#include "iskf/experiment.hpp"
#include "iskf/filters.hpp"
#include "iskf/io.hpp"
#include "iskf/model.hpp"
#include "iskf/riccati.hpp"
#include "iskf/satfun.hpp"
#include "iskf/sim.hpp"
#include "iskf/tune.hpp"
#include "iskf/version.hpp"
