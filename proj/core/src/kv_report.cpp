#include "gpi/kv_report.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "gpi/error.hpp"

namespace gpi {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

}  // namespace

std::string format_double(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

void KvDocument::set(std::string_view section, std::string_view key, std::string value) {
  for (auto& e : entries_) {
    if (e.section == section && e.key == key) {
      e.value = std::move(value);
      return;
    }
  }
  entries_.push_back({std::string(section), std::string(key), std::move(value)});
}

void KvDocument::set(std::string_view section, std::string_view key, double value) {
  set(section, key, format_double(value));
}

void KvDocument::set(std::string_view section, std::string_view key, long long value) {
  set(section, key, std::to_string(value));
}

void KvDocument::set(std::string_view section, std::string_view key, unsigned long long value) {
  set(section, key, std::to_string(value));
}

std::optional<std::string> KvDocument::get(std::string_view dotted_key) const {
  std::string_view section;
  std::string_view key = dotted_key;
  if (auto dot = dotted_key.rfind('.'); dot != std::string_view::npos) {
    section = dotted_key.substr(0, dot);
    key = dotted_key.substr(dot + 1);
  }
  for (const auto& e : entries_) {
    if (e.section == section && e.key == key) return e.value;
  }
  return std::nullopt;
}

std::string KvDocument::serialize() const {
  // Unnamed section first, then the others in first-appearance order.
  std::vector<std::string> sections{""};
  for (const auto& e : entries_) {
    bool seen = false;
    for (const auto& s : sections) seen = seen || s == e.section;
    if (!seen) sections.push_back(e.section);
  }
  std::ostringstream out;
  bool first_block = true;
  for (const auto& s : sections) {
    if (!s.empty()) {
      if (!first_block) out << '\n';
      out << '[' << s << "]\n";
    }
    first_block = out.tellp() == 0;
    for (const auto& e : entries_) {
      if (e.section == s) out << e.key << " = " << e.value << '\n';
    }
  }
  return out.str();
}

KvDocument KvDocument::parse(std::string_view text) {
  KvDocument doc;
  std::string section;
  std::size_t line_no = 0;
  while (!text.empty()) {
    ++line_no;
    auto nl = text.find('\n');
    std::string_view line = trim(text.substr(0, nl));
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (line.empty() || line.front() == '#' || line.front() == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        fail(ErrorKind::Config, "line " + std::to_string(line_no) + ": unterminated section header");
      }
      section = std::string(trim(line.substr(1, line.size() - 2)));
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      fail(ErrorKind::Config, "line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    auto key = trim(line.substr(0, eq));
    if (key.empty()) {
      fail(ErrorKind::Config, "line " + std::to_string(line_no) + ": empty key");
    }
    doc.set(section, key, std::string(trim(line.substr(eq + 1))));
  }
  return doc;
}

void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot open " + tmp.string() + " for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) fail(ErrorKind::Io, "write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(ErrorKind::Io, "cannot rename " + tmp.string() + ": " + ec.message());
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace gpi
