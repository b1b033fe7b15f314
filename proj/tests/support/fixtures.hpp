#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gpi/data_model.hpp"
#include "gpi/rng.hpp"

namespace gpi::testing {

/// Fresh empty directory under the system temp dir.
std::filesystem::path scratch_dir(const std::string& name);

/// n rows of N(0,1) entries.
Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed);

/// Balanced random treatment vector (at least one unit per arm).
std::vector<int> random_treatment(std::size_t n, std::uint64_t seed);

/// Dataset with ids "u0".."u{n-1}", random R and treatment, and
/// y = 3 t + sum(first two R columns) + noise.
Dataset small_dataset(std::size_t n, Eigen::Index d_r, std::uint64_t seed, bool with_perceived = false);

}  // namespace gpi::testing
