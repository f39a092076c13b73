// Umbrella header.
#pragma once

#include "fedsel/data.hpp"
#include "fedsel/experiment.hpp"
#include "fedsel/matrix.hpp"
#include "fedsel/nn.hpp"
#include "fedsel/protocol.hpp"
#include "fedsel/rng.hpp"
#include "fedsel/selection.hpp"
