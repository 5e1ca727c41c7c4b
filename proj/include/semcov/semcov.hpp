#pragma once

// Everything in one include.

#include "semcov/ablation.hpp"
#include "semcov/checkpoint.hpp"
#include "semcov/coverage.hpp"
#include "semcov/dam.hpp"
#include "semcov/data.hpp"
#include "semcov/encoder.hpp"
#include "semcov/errors.hpp"
#include "semcov/metrics.hpp"
#include "semcov/model.hpp"
#include "semcov/objectives.hpp"
#include "semcov/presets.hpp"
#include "semcov/sdm.hpp"
#include "semcov/svg.hpp"
#include "semcov/trainer.hpp"
