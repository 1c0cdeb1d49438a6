#pragma once

#include "gmmc/centroids.hpp"
#include "gmmc/checkpoint.hpp"
#include "gmmc/config.hpp"
#include "gmmc/data.hpp"
#include "gmmc/eval.hpp"
#include "gmmc/model.hpp"
#include "gmmc/net.hpp"
#include "gmmc/sampler.hpp"
#include "gmmc/train.hpp"
#include "gmmc/vecops.hpp"
