#pragma once

// umbrella header: the full library in include order

#include "wind/base.hpp"
#include "wind/game.hpp"
#include "wind/solvers.hpp"
#include "wind/sampled.hpp"
#include "wind/experiments.hpp"
#include "wind/io.hpp"
