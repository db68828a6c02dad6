#pragma once

#include "mmlip/adam.hpp"
#include "mmlip/anomaly.hpp"
#include "mmlip/autoencoder.hpp"
#include "mmlip/bounds.hpp"
#include "mmlip/commands.hpp"
#include "mmlip/config.hpp"
#include "mmlip/errors.hpp"
#include "mmlip/estimator.hpp"
#include "mmlip/fusion.hpp"
#include "mmlip/io.hpp"
#include "mmlip/linalg.hpp"
#include "mmlip/mlp.hpp"
#include "mmlip/random.hpp"
#include "mmlip/stats.hpp"
#include "mmlip/synthdata.hpp"
#include "mmlip/train.hpp"
