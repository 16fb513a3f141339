#pragma once

// Umbrella header for the library.

#include "mcgnn/capping.hpp"
#include "mcgnn/checkpoint.hpp"
#include "mcgnn/data.hpp"
#include "mcgnn/error.hpp"
#include "mcgnn/harness.hpp"
#include "mcgnn/linalg.hpp"
#include "mcgnn/model.hpp"
#include "mcgnn/reference.hpp"
#include "mcgnn/rng.hpp"
#include "mcgnn/training.hpp"
