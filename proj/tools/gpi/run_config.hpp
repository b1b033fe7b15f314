#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gpi/dml.hpp"
#include "gpi/kv_report.hpp"
#include "gpi/propensity.hpp"
#include "gpi/simulation.hpp"
#include "gpi/tarnet.hpp"

namespace gpi::cli {

/// One configurable key. `key` is "section.name" ("name" for top-level keys)
/// and doubles as the long flag `--section.name`.
struct KeySpec {
  std::string_view key;
  std::string_view default_value;
  std::string_view help;
};

std::span<const KeySpec> key_schema();

/// Sections each command reads (and records in its manifest).
std::vector<std::string_view> sections_for(std::string_view command);

bool is_command(std::string_view command);

/// Fully resolved configuration: defaults, then the config file, then flags.
class RunConfig {
 public:
  /// `file` may be empty. `flags` maps schema keys to flag values.
  static RunConfig resolve(std::string command, const KvDocument& file,
                           const std::map<std::string, std::string>& flags);

  const std::string& command() const noexcept { return command_; }
  std::uint64_t seed() const noexcept { return seed_; }

  std::string text(std::string_view key) const;
  double real(std::string_view key) const;
  long long integer(std::string_view key) const;
  std::size_t count(std::string_view key) const;
  bool boolean(std::string_view key) const;
  bool has(std::string_view key) const;

  NetworkConfig network() const;
  PropensityConfig propensity() const;
  SimulationScenario scenario() const;
  double confidence() const { return real("confidence"); }

  /// Records an extra resolved value (e.g. input hashes) in the manifest.
  void record(std::string key, std::string value);

  /// Manifest: every key the command reads, fully resolved, plus derived
  /// seeds for reference. Feeding it back through --config reproduces the run.
  KvDocument manifest() const;

 private:
  void network_check() const;

  std::string command_;
  std::uint64_t seed_ = 0;
  std::map<std::string, std::string, std::less<>> values_;
};

/// Counter-based sub-seeds of the global seed, one per consumer.
struct DerivedSeeds {
  std::uint64_t folds;
  std::uint64_t network;
  std::uint64_t propensity;
  std::uint64_t ioss;
  std::uint64_t scenario;
  std::uint64_t estimators;
};
DerivedSeeds derive_seeds(std::uint64_t global_seed) noexcept;

/// 64-bit FNV-1a of a file's bytes, as 16 hex digits.
std::string file_fingerprint(const std::filesystem::path& path);

}  // namespace gpi::cli
