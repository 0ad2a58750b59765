#pragma once

#include "freehunch/errors.hpp"
#include "freehunch/matrix_core.hpp"
#include "freehunch/dct.hpp"
#include "freehunch/observation.hpp"
#include "freehunch/score_oracle.hpp"
#include "freehunch/moments.hpp"
#include "freehunch/tracker.hpp"
#include "freehunch/guidance.hpp"
#include "freehunch/samplers.hpp"
#include "freehunch/metrics.hpp"
#include "freehunch/experiments.hpp"
#include "freehunch/config.hpp"
