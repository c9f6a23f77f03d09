#pragma once

#include "cmad/analysis.hpp"
#include "cmad/baselines.hpp"
#include "cmad/data.hpp"
#include "cmad/detection.hpp"
#include "cmad/encoders.hpp"
#include "cmad/errors.hpp"
#include "cmad/io.hpp"
#include "cmad/models.hpp"
#include "cmad/numerics.hpp"
#include "cmad/objective.hpp"
#include "cmad/training.hpp"
