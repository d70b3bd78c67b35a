#pragma once

#include "bwfl/action.hpp"
#include "bwfl/bound.hpp"
#include "bwfl/config.hpp"
#include "bwfl/datasets.hpp"
#include "bwfl/error.hpp"
#include "bwfl/experiment.hpp"
#include "bwfl/federation.hpp"
#include "bwfl/metrics.hpp"
#include "bwfl/planted.hpp"
#include "bwfl/qnn.hpp"
#include "bwfl/random.hpp"
#include "bwfl/rl.hpp"
#include "bwfl/wireless.hpp"
