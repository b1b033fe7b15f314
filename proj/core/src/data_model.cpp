#include "gpi/data_model.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "gpi/error.hpp"
#include "gpi/kv_report.hpp"

namespace gpi {

namespace {

void check_binary(int value, const std::string& id, const char* column) {
  if (value != 0 && value != 1) {
    fail(ErrorKind::Validation, std::string(column) + " must be 0 or 1 (id '" + id + "', got " +
                                    std::to_string(value) + ")");
  }
}

template <typename T>
void put_le(std::vector<unsigned char>& out, T value) {
  for (std::size_t b = 0; b < sizeof(T); ++b) {
    out.push_back(static_cast<unsigned char>((value >> (8 * b)) & 0xFF));
  }
}

template <typename T>
T get_le(const unsigned char* p) {
  T value = 0;
  for (std::size_t b = 0; b < sizeof(T); ++b) {
    value |= static_cast<T>(p[b]) << (8 * b);
  }
  return value;
}

std::vector<unsigned char> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

RepresentationFileHeader decode_header(const std::vector<unsigned char>& bytes,
                                       const std::string& name) {
  if (bytes.size() < kRepresentationHeaderBytes) {
    fail(ErrorKind::Format, name + ": file shorter than the representation header");
  }
  RepresentationFileHeader h;
  for (std::size_t i = 0; i < 6; ++i) h.magic[i] = static_cast<char>(bytes[i]);
  if (h.magic != kRepresentationMagic) fail(ErrorKind::Format, name + ": bad magic");
  h.version = get_le<std::uint32_t>(bytes.data() + 6);
  if (h.version != kRepresentationVersion) {
    fail(ErrorKind::Format, name + ": unsupported version " + std::to_string(h.version));
  }
  h.n = get_le<std::uint64_t>(bytes.data() + 10);
  h.d_r = get_le<std::uint64_t>(bytes.data() + 18);
  const auto code = bytes[26];
  if (code > 1) fail(ErrorKind::Format, name + ": unknown dtype code " + std::to_string(code));
  h.dtype = static_cast<Dtype>(code);
  if (h.n == 0 || h.d_r == 0) fail(ErrorKind::Format, name + ": empty matrix");
  const std::size_t elem = h.dtype == Dtype::F32 ? 4 : 8;
  if (h.n > (UINT64_MAX / h.d_r) / elem) fail(ErrorKind::Format, name + ": size overflow");
  if (bytes.size() - kRepresentationHeaderBytes != h.payload_bytes()) {
    fail(ErrorKind::Format, name + ": payload length " +
                                std::to_string(bytes.size() - kRepresentationHeaderBytes) +
                                " does not match n*d_R*size(dtype) = " +
                                std::to_string(h.payload_bytes()));
  }
  return h;
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    auto comma = line.find(',', start);
    cells.push_back(line.substr(start, comma == std::string_view::npos ? comma : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return cells;
}

double parse_real(std::string_view s, const std::string& what) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    fail(ErrorKind::Validation, what + ": not a number: '" + std::string(s) + "'");
  }
  return v;
}

int parse_int(std::string_view s, const std::string& what) {
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    fail(ErrorKind::Validation, what + ": not an integer: '" + std::string(s) + "'");
  }
  return v;
}

}  // namespace

Dataset Dataset::from_columns(std::vector<std::string> ids, Vector y, std::vector<int> t,
                              std::optional<std::vector<int>> t_tilde, Matrix r) {
  const std::size_t n = ids.size();
  if (static_cast<std::size_t>(y.size()) != n || t.size() != n ||
      static_cast<std::size_t>(r.rows()) != n || (t_tilde && t_tilde->size() != n)) {
    fail(ErrorKind::Shape, "dataset columns have inconsistent lengths");
  }
  if (n == 0) fail(ErrorKind::DegenerateData, "dataset is empty");
  if (r.cols() == 0) fail(ErrorKind::Shape, "representation width must be positive");

  std::unordered_set<std::string_view> seen;
  seen.reserve(n);
  std::size_t treated = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!seen.insert(ids[i]).second) fail(ErrorKind::Join, "duplicate id '" + ids[i] + "'");
    check_binary(t[i], ids[i], "t");
    if (t_tilde) check_binary((*t_tilde)[i], ids[i], "t_tilde");
    if (!std::isfinite(y[static_cast<Eigen::Index>(i)])) {
      fail(ErrorKind::Validation, "non-finite y for id '" + ids[i] + "'");
    }
    if (!r.row(static_cast<Eigen::Index>(i)).allFinite()) {
      fail(ErrorKind::Validation, "non-finite representation for id '" + ids[i] + "'");
    }
    treated += static_cast<std::size_t>(t[i]);
  }
  if (treated == 0 || treated == n) {
    fail(ErrorKind::DegenerateData,
         treated == 0 ? "no treated units (all t=0)" : "no control units (all t=1)");
  }

  Dataset d;
  d.ids_ = std::move(ids);
  d.y_ = std::move(y);
  d.t_ = std::move(t);
  d.t_tilde_ = std::move(t_tilde);
  d.r_ = std::move(r);
  return d;
}

Dataset Dataset::from_observations(std::span<const Observation> observations) {
  const std::size_t n = observations.size();
  if (n == 0) fail(ErrorKind::DegenerateData, "dataset is empty");
  const Eigen::Index d = observations.front().r.size();
  const bool perceived = observations.front().t_tilde.has_value();
  std::vector<std::string> ids(n);
  Vector y(static_cast<Eigen::Index>(n));
  std::vector<int> t(n);
  std::optional<std::vector<int>> tt;
  if (perceived) tt.emplace(n);
  Matrix r(static_cast<Eigen::Index>(n), d);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& o = observations[i];
    if (o.r.size() != d) fail(ErrorKind::Shape, "observation '" + o.id + "' has wrong d_R");
    if (o.t_tilde.has_value() != perceived) {
      fail(ErrorKind::Validation, "observation '" + o.id + "': t_tilde must be present on all rows or none");
    }
    ids[i] = o.id;
    y[static_cast<Eigen::Index>(i)] = o.y;
    t[i] = o.t;
    if (perceived) (*tt)[i] = *o.t_tilde;
    r.row(static_cast<Eigen::Index>(i)) = o.r;
  }
  return from_columns(std::move(ids), std::move(y), std::move(t), std::move(tt), std::move(r));
}

Observation Dataset::observation(std::size_t i) const {
  Observation o;
  o.id = ids_.at(i);
  o.y = y_[static_cast<Eigen::Index>(i)];
  o.t = t_[i];
  if (t_tilde_) o.t_tilde = (*t_tilde_)[i];
  o.r = r_.row(static_cast<Eigen::Index>(i));
  return o;
}

std::size_t Dataset::treated_count() const noexcept {
  std::size_t c = 0;
  for (int v : t_) c += static_cast<std::size_t>(v);
  return c;
}

RepresentationFileHeader read_representation_header(const std::filesystem::path& path) {
  return decode_header(read_bytes(path), path.string());
}

Matrix read_representations(const std::filesystem::path& path) {
  const auto bytes = read_bytes(path);
  const auto h = decode_header(bytes, path.string());
  Matrix m(static_cast<Eigen::Index>(h.n), static_cast<Eigen::Index>(h.d_r));
  const unsigned char* p = bytes.data() + kRepresentationHeaderBytes;
  double* out = m.data();
  const std::size_t count = h.n * h.d_r;
  if (h.dtype == Dtype::F32) {
    for (std::size_t i = 0; i < count; ++i, p += 4) {
      out[i] = static_cast<double>(std::bit_cast<float>(get_le<std::uint32_t>(p)));
    }
  } else {
    for (std::size_t i = 0; i < count; ++i, p += 8) {
      out[i] = std::bit_cast<double>(get_le<std::uint64_t>(p));
    }
  }
  if (!m.allFinite()) fail(ErrorKind::Validation, path.string() + ": non-finite value in payload");
  return m;
}

std::vector<unsigned char> encode_representations(const Matrix& matrix, Dtype dtype) {
  if (matrix.rows() < 1 || matrix.cols() < 1) {
    fail(ErrorKind::Validation, "representation matrix must have n, d_R >= 1");
  }
  if (!matrix.allFinite()) fail(ErrorKind::Validation, "representation matrix has non-finite entries");
  std::vector<unsigned char> out;
  const std::size_t count = static_cast<std::size_t>(matrix.size());
  out.reserve(kRepresentationHeaderBytes + count * (dtype == Dtype::F32 ? 4 : 8));
  out.insert(out.end(), kRepresentationMagic.begin(), kRepresentationMagic.end());
  put_le<std::uint32_t>(out, kRepresentationVersion);
  put_le<std::uint64_t>(out, static_cast<std::uint64_t>(matrix.rows()));
  put_le<std::uint64_t>(out, static_cast<std::uint64_t>(matrix.cols()));
  out.push_back(static_cast<unsigned char>(dtype));
  const double* p = matrix.data();  // row-major storage
  for (std::size_t i = 0; i < count; ++i) {
    if (dtype == Dtype::F32) {
      put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(p[i])));
    } else {
      put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(p[i]));
    }
  }
  return out;
}

void write_representations(const Matrix& matrix, const std::filesystem::path& path, Dtype dtype) {
  const auto bytes = encode_representations(matrix, dtype);
  write_file_atomic(path, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

std::filesystem::path ids_sidecar_path(const std::filesystem::path& representations_path) {
  auto p = representations_path;
  p += ".ids";
  return p;
}

std::vector<std::string> read_row_ids(const std::filesystem::path& representations_path,
                                      std::size_t n) {
  const auto sidecar = ids_sidecar_path(representations_path);
  std::vector<std::string> ids;
  if (!std::filesystem::exists(sidecar)) {
    ids.reserve(n);
    for (std::size_t i = 0; i < n; ++i) ids.push_back(std::to_string(i));
    return ids;
  }
  std::istringstream in(read_text_file(sidecar));
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    ids.push_back(line);
  }
  if (ids.size() != n) {
    fail(ErrorKind::Join, sidecar.string() + ": " + std::to_string(ids.size()) +
                              " ids for " + std::to_string(n) + " representation rows");
  }
  return ids;
}

void write_row_ids(const std::filesystem::path& representations_path,
                   std::span<const std::string> ids) {
  std::string content;
  for (const auto& id : ids) {
    content += id;
    content += '\n';
  }
  write_file_atomic(ids_sidecar_path(representations_path), content);
}

std::vector<LabelRow> read_labels(const std::filesystem::path& path) {
  std::istringstream in(read_text_file(path));
  std::string line;
  auto next_line = [&]() -> bool {
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty()) return true;
    }
    return false;
  };
  if (!next_line()) fail(ErrorKind::Format, path.string() + ": empty labels file");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // BOM
  const auto header = split_commas(line);
  bool perceived = false;
  if (header.size() == 4 && header[3] == "t_tilde") {
    perceived = true;
  } else if (header.size() != 3) {
    fail(ErrorKind::Format, path.string() + ": header must be id,y,t[,t_tilde]");
  }
  if (header[0] != "id" || header[1] != "y" || header[2] != "t") {
    fail(ErrorKind::Format, path.string() + ": header must be id,y,t[,t_tilde]");
  }
  std::vector<LabelRow> rows;
  std::size_t line_no = 1;
  while (next_line()) {
    ++line_no;
    const auto cells = split_commas(line);
    if (cells.size() != header.size()) {
      fail(ErrorKind::Format, path.string() + ": line " + std::to_string(line_no) + " has " +
                                  std::to_string(cells.size()) + " columns");
    }
    LabelRow row;
    row.id = std::string(cells[0]);
    if (row.id.empty()) fail(ErrorKind::Format, path.string() + ": empty id on line " + std::to_string(line_no));
    row.y = parse_real(cells[1], "y for id '" + row.id + "'");
    if (!std::isfinite(row.y)) fail(ErrorKind::Validation, "non-finite y for id '" + row.id + "'");
    row.t = parse_int(cells[2], "t for id '" + row.id + "'");
    check_binary(row.t, row.id, "t");
    if (perceived) {
      row.t_tilde = parse_int(cells[3], "t_tilde for id '" + row.id + "'");
      check_binary(*row.t_tilde, row.id, "t_tilde");
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_labels(const std::filesystem::path& path, const Dataset& dataset) {
  std::string out = dataset.has_perceived() ? "id,y,t,t_tilde\n" : "id,y,t\n";
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    out += dataset.ids()[i];
    out += ',';
    out += format_double(dataset.y()[static_cast<Eigen::Index>(i)]);
    out += ',';
    out += std::to_string(dataset.t()[i]);
    if (dataset.has_perceived()) {
      out += ',';
      out += std::to_string(dataset.t_tilde()[i]);
    }
    out += '\n';
  }
  write_file_atomic(path, out);
}

Dataset load_dataset(const std::filesystem::path& representations_path,
                     const std::filesystem::path& labels_path) {
  Matrix r = read_representations(representations_path);
  const auto n = static_cast<std::size_t>(r.rows());
  auto ids = read_row_ids(representations_path, n);
  auto labels = read_labels(labels_path);
  if (labels.size() != n) {
    fail(ErrorKind::Join, "labels have " + std::to_string(labels.size()) + " rows but representations have " +
                              std::to_string(n));
  }
  std::unordered_map<std::string_view, std::size_t> by_id;
  by_id.reserve(n);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!by_id.emplace(labels[i].id, i).second) {
      fail(ErrorKind::Join, "duplicate id '" + labels[i].id + "' in labels");
    }
  }
  const bool perceived = !labels.empty() && labels.front().t_tilde.has_value();
  Vector y(static_cast<Eigen::Index>(n));
  std::vector<int> t(n);
  std::optional<std::vector<int>> tt;
  if (perceived) tt.emplace(n);
  std::unordered_set<std::string_view> used;
  for (std::size_t i = 0; i < n; ++i) {
    auto it = by_id.find(ids[i]);
    if (it == by_id.end()) fail(ErrorKind::Join, "representation row id '" + ids[i] + "' missing from labels");
    if (!used.insert(ids[i]).second) fail(ErrorKind::Join, "duplicate representation row id '" + ids[i] + "'");
    const auto& row = labels[it->second];
    y[static_cast<Eigen::Index>(i)] = row.y;
    t[i] = row.t;
    if (perceived) (*tt)[i] = *row.t_tilde;
  }
  return Dataset::from_columns(std::move(ids), std::move(y), std::move(t), std::move(tt), std::move(r));
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& representations_path,
                  const std::filesystem::path& labels_path) {
  write_representations(dataset.representations(), representations_path, Dtype::F32);
  write_row_ids(representations_path, dataset.ids());
  write_labels(labels_path, dataset);
}

}  // namespace gpi
