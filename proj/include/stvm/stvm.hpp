#pragma once

// Umbrella header for the whole library.

#include "augment.hpp"
#include "checkpoint.hpp"
#include "config.hpp"
#include "data.hpp"
#include "error.hpp"
#include "eval.hpp"
#include "experiment.hpp"
#include "metric.hpp"
#include "mocm.hpp"
#include "optim.hpp"
#include "png_io.hpp"
#include "rng.hpp"
#include "segnet.hpp"
#include "teacher.hpp"
#include "tensor.hpp"
#include "trainer.hpp"
