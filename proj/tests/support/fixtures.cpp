#include "fixtures.hpp"

namespace gpi::testing {

std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("gpi-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.normal();
  }
  return m;
}

std::vector<int> random_treatment(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<int> t(n);
  for (auto& v : t) v = rng.bernoulli(0.5) ? 1 : 0;
  t[0] = 0;
  t[n - 1] = 1;
  return t;
}

Dataset small_dataset(std::size_t n, Eigen::Index d_r, std::uint64_t seed, bool with_perceived) {
  Rng rng(derive_seed(seed, "fixture-noise"));
  Matrix r = random_matrix(static_cast<Eigen::Index>(n), d_r, derive_seed(seed, "fixture-r"));
  std::vector<int> t = random_treatment(n, derive_seed(seed, "fixture-t"));
  Vector y(static_cast<Eigen::Index>(n));
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) {
    const auto e = static_cast<Eigen::Index>(i);
    y[e] = 3.0 * t[i] + r(e, 0) + (d_r > 1 ? r(e, 1) : 0.0) + 0.1 * rng.normal();
    ids.push_back("u" + std::to_string(i));
  }
  std::optional<std::vector<int>> tt;
  if (with_perceived) {
    tt = t;
    for (std::size_t i = 0; i < n; ++i) {
      if (t[i] == 1 && rng.bernoulli(0.2)) (*tt)[i] = 0;
    }
  }
  return Dataset::from_columns(std::move(ids), std::move(y), std::move(t), std::move(tt), std::move(r));
}

}  // namespace gpi::testing
