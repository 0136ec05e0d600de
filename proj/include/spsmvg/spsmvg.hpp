#pragma once

#include "spsmvg/checkpoint.hpp"
#include "spsmvg/dataset.hpp"
#include "spsmvg/errors.hpp"
#include "spsmvg/gradcheck.hpp"
#include "spsmvg/image.hpp"
#include "spsmvg/manifest.hpp"
#include "spsmvg/model.hpp"
#include "spsmvg/mvgraph.hpp"
#include "spsmvg/numerics.hpp"
#include "spsmvg/pipeline.hpp"
#include "spsmvg/ranking.hpp"
#include "spsmvg/rng.hpp"
#include "spsmvg/synth.hpp"
#include "spsmvg/training.hpp"
#include "spsmvg/views.hpp"
