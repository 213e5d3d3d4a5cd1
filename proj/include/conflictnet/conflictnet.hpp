// Umbrella header.
#pragma once

#include "conflictnet/checkpoint.hpp"
#include "conflictnet/data/dataset.hpp"
#include "conflictnet/data/ppm.hpp"
#include "conflictnet/data/synth.hpp"
#include "conflictnet/experiment.hpp"
#include "conflictnet/gradcheck.hpp"
#include "conflictnet/metrics.hpp"
#include "conflictnet/model.hpp"
#include "conflictnet/training.hpp"
