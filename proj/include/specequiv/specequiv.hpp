#pragma once

#include "specequiv/contour.hpp"
#include "specequiv/csv.hpp"
#include "specequiv/empirical.hpp"
#include "specequiv/equivalent.hpp"
#include "specequiv/error.hpp"
#include "specequiv/fixedpoint.hpp"
#include "specequiv/model.hpp"
#include "specequiv/qve.hpp"
#include "specequiv/rng.hpp"
#include "specequiv/semimetric.hpp"
