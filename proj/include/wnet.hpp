#pragma once

#include "wnet/core.hpp"
#include "wnet/datagen.hpp"
#include "wnet/png_io.hpp"
#include "wnet/distfield.hpp"
#include "wnet/neighbors.hpp"
#include "wnet/losses.hpp"
#include "wnet/tensor.hpp"
#include "wnet/layers.hpp"
#include "wnet/tape.hpp"
#include "wnet/network.hpp"
#include "wnet/clusterer.hpp"
#include "wnet/metrics.hpp"
#include "wnet/pipeline.hpp"
#include "wnet/trainer.hpp"
#include "wnet/checkpoint.hpp"
#include "wnet/experiments.hpp"
#include "wnet/dataset_io.hpp"
