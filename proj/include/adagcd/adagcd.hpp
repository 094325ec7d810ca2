#pragma once

#include "adagcd/archive.hpp"
#include "adagcd/autodiff.hpp"
#include "adagcd/backbone.hpp"
#include "adagcd/clusterer.hpp"
#include "adagcd/data/augment.hpp"
#include "adagcd/data/image.hpp"
#include "adagcd/data/split.hpp"
#include "adagcd/data/synthetic.hpp"
#include "adagcd/decoder.hpp"
#include "adagcd/error.hpp"
#include "adagcd/eval.hpp"
#include "adagcd/matrix.hpp"
#include "adagcd/nn.hpp"
#include "adagcd/pipeline/checkpoint.hpp"
#include "adagcd/pipeline/config.hpp"
#include "adagcd/pipeline/evaluate.hpp"
#include "adagcd/pipeline/metrics.hpp"
#include "adagcd/pipeline/model.hpp"
#include "adagcd/pipeline/optimizer.hpp"
#include "adagcd/pipeline/sweep.hpp"
#include "adagcd/pipeline/train.hpp"
#include "adagcd/representation.hpp"
#include "adagcd/rng.hpp"
