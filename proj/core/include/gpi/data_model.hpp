#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace gpi {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// One unit: outcome, binary treatment feature, optional perceived treatment
/// and the internal representation of the treatment object.
struct Observation {
  std::string id;
  double y = 0.0;
  int t = 0;
  std::optional<int> t_tilde;
  Eigen::RowVectorXd r;
};

/// Validated, immutable collection of observations stored column-wise.
///
/// Invariants enforced by every factory: t and t_tilde in {0,1}, finite y and
/// representations, unique ids, at least one unit in each treatment arm.
class Dataset {
 public:
  static Dataset from_columns(std::vector<std::string> ids, Vector y, std::vector<int> t,
                              std::optional<std::vector<int>> t_tilde, Matrix r);
  static Dataset from_observations(std::span<const Observation> observations);

  std::size_t size() const noexcept { return ids_.size(); }
  Eigen::Index d_r() const noexcept { return r_.cols(); }
  bool has_perceived() const noexcept { return t_tilde_.has_value(); }

  const std::vector<std::string>& ids() const noexcept { return ids_; }
  const Vector& y() const noexcept { return y_; }
  const std::vector<int>& t() const noexcept { return t_; }
  /// Empty when the dataset carries no perceived treatment.
  std::span<const int> t_tilde() const noexcept {
    return t_tilde_ ? std::span<const int>(*t_tilde_) : std::span<const int>();
  }
  const Matrix& representations() const noexcept { return r_; }

  Observation observation(std::size_t i) const;

  std::size_t treated_count() const noexcept;

 private:
  Dataset() = default;

  std::vector<std::string> ids_;
  Vector y_;
  std::vector<int> t_;
  std::optional<std::vector<int>> t_tilde_;
  Matrix r_;
};

enum class Dtype : std::uint8_t { F32 = 0, F64 = 1 };

inline constexpr std::array<char, 6> kRepresentationMagic{'G', 'P', 'I', 'R', '1', '\0'};
inline constexpr std::uint32_t kRepresentationVersion = 1;
inline constexpr std::size_t kRepresentationHeaderBytes = 6 + 4 + 8 + 8 + 1;

/// Fixed little-endian header of a representation file.
struct RepresentationFileHeader {
  std::array<char, 6> magic = kRepresentationMagic;
  std::uint32_t version = kRepresentationVersion;
  std::uint64_t n = 0;
  std::uint64_t d_r = 0;
  Dtype dtype = Dtype::F32;

  std::size_t payload_bytes() const noexcept {
    return static_cast<std::size_t>(n * d_r) * (dtype == Dtype::F32 ? 4 : 8);
  }
};

RepresentationFileHeader read_representation_header(const std::filesystem::path& path);

/// Reads the row-major payload, upcasting f32 to double.
Matrix read_representations(const std::filesystem::path& path);

/// Writes `matrix` row-major. f32 is the canonical on-disk dtype; values that
/// are exactly representable in f32 round-trip bit-exactly.
void write_representations(const Matrix& matrix, const std::filesystem::path& path,
                           Dtype dtype = Dtype::F32);

/// Encodes the representation file in memory (header followed by payload).
std::vector<unsigned char> encode_representations(const Matrix& matrix, Dtype dtype = Dtype::F32);

/// Row ids of a representation file come from the sidecar `<path>.ids` (one id
/// per line). Without a sidecar, row i has id "i".
std::filesystem::path ids_sidecar_path(const std::filesystem::path& representations_path);
std::vector<std::string> read_row_ids(const std::filesystem::path& representations_path,
                                      std::size_t n);
void write_row_ids(const std::filesystem::path& representations_path,
                   std::span<const std::string> ids);

struct LabelRow {
  std::string id;
  double y = 0.0;
  int t = 0;
  std::optional<int> t_tilde;
};

/// Parses a comma-delimited labels table with header `id,y,t[,t_tilde]`.
std::vector<LabelRow> read_labels(const std::filesystem::path& path);
void write_labels(const std::filesystem::path& path, const Dataset& dataset);

/// Joins representation rows to labels by id. Row order follows the
/// representation file.
Dataset load_dataset(const std::filesystem::path& representations_path,
                     const std::filesystem::path& labels_path);

/// Writes representations (f32), the ids sidecar and the labels table.
void save_dataset(const Dataset& dataset, const std::filesystem::path& representations_path,
                  const std::filesystem::path& labels_path);

}  // namespace gpi
