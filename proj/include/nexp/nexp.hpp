#pragma once

// Umbrella header.
#include "axioms.hpp"
#include "bsde.hpp"
#include "config.hpp"
#include "driver.hpp"
#include "error.hpp"
#include "experiments.hpp"
#include "fbsde.hpp"
#include "lsmc.hpp"
#include "meanfield.hpp"
#include "merton.hpp"
#include "net_checks.hpp"
#include "nets.hpp"
#include "oracles.hpp"
#include "parallel.hpp"
#include "regression.hpp"
#include "report.hpp"
#include "rng.hpp"
#include "sensitivity.hpp"
#include "stochastic.hpp"
