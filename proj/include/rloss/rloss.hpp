#pragma once

#include "rloss/affinity.hpp"
#include "rloss/errors.hpp"
#include "rloss/grid.hpp"
#include "rloss/losses.hpp"
#include "rloss/meanfield.hpp"
#include "rloss/pnm_io.hpp"
#include "rloss/scribbles.hpp"
#include "rloss/trainer.hpp"
