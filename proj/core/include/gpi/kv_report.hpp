#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace gpi {

/// Flat key-value text document with optional `[section]` headers.
///
///     # comment
///     format_version = 1
///     [estimate]
///     estimand = ATE
///
/// Keys are addressed as "section.key" ("key" for the leading unnamed
/// section). Insertion order is preserved on output, so serialization is
/// byte-stable.
class KvDocument {
 public:
  struct Entry {
    std::string section;
    std::string key;
    std::string value;
  };

  void set(std::string_view section, std::string_view key, std::string value);
  void set(std::string_view section, std::string_view key, double value);
  void set(std::string_view section, std::string_view key, long long value);
  void set(std::string_view section, std::string_view key, unsigned long long value);
  void set(std::string_view section, std::string_view key, int value) {
    set(section, key, static_cast<long long>(value));
  }
  void set(std::string_view section, std::string_view key, std::size_t value) {
    set(section, key, static_cast<unsigned long long>(value));
  }
  void set(std::string_view section, std::string_view key, bool value) {
    set(section, key, std::string(value ? "true" : "false"));
  }
  void set(std::string_view section, std::string_view key, const char* value) {
    set(section, key, std::string(value));
  }

  std::optional<std::string> get(std::string_view dotted_key) const;
  const std::vector<Entry>& entries() const noexcept { return entries_; }

  std::string serialize() const;
  static KvDocument parse(std::string_view text);

 private:
  std::vector<Entry> entries_;
};

/// Shortest decimal text that round-trips to the same double.
std::string format_double(double value);

/// Writes to a temporary sibling and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

std::string read_text_file(const std::filesystem::path& path);

}  // namespace gpi
