#pragma once

#include "fedadt/data.hpp"
#include "fedadt/dataset.hpp"
#include "fedadt/distill.hpp"
#include "fedadt/error.hpp"
#include "fedadt/experiment.hpp"
#include "fedadt/federation.hpp"
#include "fedadt/metrics.hpp"
#include "fedadt/nn.hpp"
#include "fedadt/rng.hpp"
#include "fedadt/simengine.hpp"
#include "fedadt/strategies.hpp"
