#pragma once

#include <cstdint>

#include "gpi/tarnet.hpp"

namespace gpi::testing {

struct GradientCheck {
  std::size_t coordinates = 0;
  std::size_t mismatches = 0;
  double max_error = 0.0;  // |analytic - numeric| / max(1, |analytic|, |numeric|)
};

/// Compares gradients() with central differences of loss_ate / loss_late
/// (step h) for every parameter, dropout masks held fixed when given.
GradientCheck check_gradients(const TarNetModel& model, const Dataset& data, std::span<const std::size_t> rows,
                              const DropoutMasks* masks, double h = 1e-4, double tolerance = 1e-5);

/// Smallest |pre-activation| of any rectifier on the batch, computed with a
/// naive forward pass. Central differences are only meaningful when this
/// exceeds the perturbation's effect.
double min_rectifier_margin(const TarNetModel& model, const Dataset& data, std::span<const std::size_t> rows);

struct GradientInstance {
  TarNetModel model;
  Dataset data;
  std::vector<std::size_t> rows;
  std::optional<DropoutMasks> masks;
};

/// Seeded random small model and batch. Alternates plain, dropout and
/// IV-mode variants by seed; draws are repeated from derived seeds until every
/// rectifier is at least `margin` away from its kink.
GradientInstance random_gradient_instance(std::uint64_t seed, double margin = 1e-2);

}  // namespace gpi::testing
