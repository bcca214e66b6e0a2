#pragma once

#include "fedmobile/data.hpp"
#include "fedmobile/error.hpp"
#include "fedmobile/experiment.hpp"
#include "fedmobile/federated.hpp"
#include "fedmobile/gradcheck.hpp"
#include "fedmobile/graph.hpp"
#include "fedmobile/losses.hpp"
#include "fedmobile/matrix.hpp"
#include "fedmobile/metrics.hpp"
#include "fedmobile/model.hpp"
#include "fedmobile/rng.hpp"
