#pragma once

// Umbrella header: fairness-aware classification training via per-group
// example reweighting driven by Lagrange multipliers.

#include "fairgrad/core.hpp"
#include "fairgrad/rng.hpp"
#include "fairgrad/dataset.hpp"
#include "fairgrad/fairness.hpp"
#include "fairgrad/model.hpp"
#include "fairgrad/trainer.hpp"
#include "fairgrad/report.hpp"
