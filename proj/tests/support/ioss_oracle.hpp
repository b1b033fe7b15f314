#pragma once

#include <span>

#include "gpi/data_model.hpp"

namespace gpi::testing {

/// Reference IOSS: per-column min-max scaling, then the symmetric Hausdorff
/// distance from an exhaustive scan of all point pairs, divided by sqrt(d).
double brute_force_ioss(const Matrix& q, std::span<const int> t);

}  // namespace gpi::testing
