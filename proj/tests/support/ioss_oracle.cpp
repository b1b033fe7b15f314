#include "ioss_oracle.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace gpi::testing {

namespace {

using Point = std::vector<double>;

double distance(const Point& a, const Point& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
  return std::sqrt(s);
}

double directed(const std::vector<Point>& from, const std::vector<Point>& to) {
  double worst = 0.0;
  for (const auto& p : from) {
    std::vector<double> d;
    for (const auto& q : to) d.push_back(distance(p, q));
    worst = std::max(worst, *std::min_element(d.begin(), d.end()));
  }
  return worst;
}

}  // namespace

double brute_force_ioss(const Matrix& q, std::span<const int> t) {
  const auto n = static_cast<std::size_t>(q.rows());
  const auto d = static_cast<std::size_t>(q.cols());
  std::vector<Point> arms[2];
  std::vector<double> lo(d), hi(d);
  for (std::size_t k = 0; k < d; ++k) {
    lo[k] = hi[k] = q(0, static_cast<Eigen::Index>(k));
    for (std::size_t i = 1; i < n; ++i) {
      lo[k] = std::min(lo[k], q(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)));
      hi[k] = std::max(hi[k], q(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)));
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    Point p(d);
    for (std::size_t k = 0; k < d; ++k) {
      const double v = q(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
      p[k] = hi[k] > lo[k] ? (v - lo[k]) / (hi[k] - lo[k]) : 0.5;
    }
    arms[t[i]].push_back(std::move(p));
  }
  const double h = std::max(directed(arms[1], arms[0]), directed(arms[0], arms[1]));
  return h / std::sqrt(static_cast<double>(d));
}

}  // namespace gpi::testing
