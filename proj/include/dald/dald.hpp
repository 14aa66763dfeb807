#pragma once

#include "dald/acquisition.hpp"
#include "dald/coverage.hpp"
#include "dald/error.hpp"
#include "dald/experiment.hpp"
#include "dald/feature_pool.hpp"
#include "dald/head.hpp"
#include "dald/kernel.hpp"
#include "dald/loop.hpp"
#include "dald/metrics.hpp"
#include "dald/random.hpp"
