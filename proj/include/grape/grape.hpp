#pragma once

// Umbrella header for the GRAPE green food recommender library.

#include "grape/ablate.hpp"
#include "grape/checkpoint.hpp"
#include "grape/config.hpp"
#include "grape/dataset.hpp"
#include "grape/errors.hpp"
#include "grape/grad_check.hpp"
#include "grape/losses.hpp"
#include "grape/metrics.hpp"
#include "grape/model.hpp"
#include "grape/optim.hpp"
#include "grape/report.hpp"
#include "grape/rng.hpp"
#include "grape/synth.hpp"
#include "grape/tape.hpp"
#include "grape/tensor.hpp"
#include "grape/train.hpp"
