#pragma once

#include "nvde/autodiff.hpp"
#include "nvde/fit.hpp"
#include "nvde/geometry.hpp"
#include "nvde/heads.hpp"
#include "nvde/io.hpp"
#include "nvde/metrics.hpp"
#include "nvde/objective.hpp"
#include "nvde/optim.hpp"
#include "nvde/parallel.hpp"
#include "nvde/pipeline.hpp"
#include "nvde/posefit.hpp"
#include "nvde/projection.hpp"
#include "nvde/renderer.hpp"
#include "nvde/rng.hpp"
#include "nvde/synthoracle.hpp"
#include "nvde/tensor.hpp"
#include "nvde/vde.hpp"
