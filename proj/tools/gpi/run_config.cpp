#include "run_config.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cstdio>
#include <fstream>

#include "gpi/error.hpp"
#include "gpi/rng.hpp"

namespace gpi::cli {

namespace {

constexpr std::array kSchema{
    KeySpec{"seed", "", "global seed; every random stream is derived from it (required)"},
    KeySpec{"confidence", "0.95", "two-sided confidence level"},
    KeySpec{"input.representations", "", "representation file (ids from <path>.ids)"},
    KeySpec{"input.labels", "", "labels CSV with header id,y,t[,t_tilde]"},
    KeySpec{"input.representations_fnv1a", "", "expected fingerprint of the representation file"},
    KeySpec{"input.labels_fnv1a", "", "expected fingerprint of the labels file"},
    KeySpec{"folds.k", "2", "number of cross-fitting folds"},
    KeySpec{"folds.inner_split_fraction", "0.5", "share of training rows used for the network"},
    KeySpec{"network.d_q", "0", "deconfounder width (0 = d_R/2)"},
    KeySpec{"network.head_hidden", "500", "hidden width of each outcome head"},
    KeySpec{"network.dropout_rate", "0.15", "dropout rate"},
    KeySpec{"network.learning_rate", "0.001", "Adam learning rate"},
    KeySpec{"network.batch_size", "32", "minibatch size"},
    KeySpec{"network.max_epochs", "500", "epoch cap"},
    KeySpec{"network.patience", "15", "early-stopping patience in epochs"},
    KeySpec{"network.val_fraction", "0.2", "validation share of the network training rows"},
    KeySpec{"propensity.kind", "logistic_l2", "logistic_l2 or tree_ensemble"},
    KeySpec{"propensity.regularization", "1", "ridge strength for logistic_l2"},
    KeySpec{"propensity.clip_eps", "0", "clip predictions to [eps, 1-eps]"},
    KeySpec{"propensity.trees", "200", "tree_ensemble size"},
    KeySpec{"propensity.max_depth", "8", "tree depth cap"},
    KeySpec{"propensity.min_leaf", "1", "minimum rows per leaf"},
    KeySpec{"propensity.max_newton_iterations", "100", "logistic_l2 iteration cap"},
    KeySpec{"diagnostics.bins", "50", "propensity histogram bins"},
    KeySpec{"diagnostics.ioss_max_rows", "5000", "per-arm subsample cap for IOSS"},
    KeySpec{"scenario.preset", "weak-separable", "{weak,moderate,strong}-{separable,nonseparable}"},
    KeySpec{"scenario.alpha1", "", "outcome coefficient (default from preset)"},
    KeySpec{"scenario.alpha2", "", "outcome coefficient (default from preset)"},
    KeySpec{"scenario.alpha3", "", "outcome coefficient (default from preset)"},
    KeySpec{"scenario.alpha4", "", "outcome coefficient (default from preset)"},
    KeySpec{"scenario.n", "", "sample size (default from preset)"},
    KeySpec{"scenario.d_r", "", "representation width (default from preset)"},
    KeySpec{"scenario.latent_corr", "", "treatment/confounder latent correlation"},
    KeySpec{"scenario.separability", "", "true or false (default from preset)"},
    KeySpec{"scenario.noise_sd", "", "outcome noise sd"},
    KeySpec{"scenario.compliance_rate", "", "enables perceived treatment when set"},
    KeySpec{"scenario.confounded_perception", "false", "compliance depends on h1"},
    KeySpec{"scenario.design", "conditional", "conditional or superpopulation"},
    KeySpec{"simulate.trials", "200", "Monte Carlo trials (>= 50)"},
    KeySpec{"simulate.estimators", "gpi,diff_in_means", "comma list of gpi, diff_in_means, oracle"},
    KeySpec{"simulate.estimand", "ate", "ate or late"},
    KeySpec{"simulate.diagnostics", "false", "record propensity/IOSS diagnostics per GPI trial"},
    KeySpec{"simulate.export_dataset", "false", "also write the scenario's sample as a dataset"},
};

constexpr std::array<std::string_view, 5> kCommands{"estimate-ate", "estimate-late", "diagnose", "simulate",
                                                    "baseline"};

std::string_view section_of(std::string_view key) {
  const auto dot = key.find('.');
  return dot == std::string_view::npos ? std::string_view{} : key.substr(0, dot);
}

const KeySpec* find_key(std::string_view key) {
  for (const auto& k : kSchema) {
    if (k.key == key) return &k;
  }
  return nullptr;
}

/// Keys the manifest carries that are not configuration.
bool is_informational(std::string_view section, std::string_view key) {
  if (section == "seeds") return true;
  return section.empty() && (key == "format" || key == "format_version" || key == "gpi_version" || key == "command");
}

std::string dotted(std::string_view section, std::string_view key) {
  return section.empty() ? std::string(key) : std::string(section) + "." + std::string(key);
}

}  // namespace

std::span<const KeySpec> key_schema() { return kSchema; }

bool is_command(std::string_view command) {
  return std::find(kCommands.begin(), kCommands.end(), command) != kCommands.end();
}

std::vector<std::string_view> sections_for(std::string_view command) {
  if (command == "baseline") return {"", "input"};
  if (command == "simulate") return {"", "folds", "network", "propensity", "diagnostics", "scenario", "simulate"};
  if (command == "diagnose") return {"", "input", "folds", "network", "propensity", "diagnostics"};
  return {"", "input", "folds", "network", "propensity"};
}

RunConfig RunConfig::resolve(std::string command, const KvDocument& file,
                             const std::map<std::string, std::string>& flags) {
  if (!is_command(command)) fail(ErrorKind::Config, "unknown command '" + command + "'");
  RunConfig cfg;
  cfg.command_ = std::move(command);
  for (const auto& k : kSchema) cfg.values_[std::string(k.key)] = std::string(k.default_value);

  for (const auto& e : file.entries()) {
    if (is_informational(e.section, e.key)) {
      if (e.section.empty() && e.key == "command" && e.value != cfg.command_) {
        fail(ErrorKind::Config, "config file is for command '" + e.value + "', not '" + cfg.command_ + "'");
      }
      continue;
    }
    const std::string key = dotted(e.section, e.key);
    if (!find_key(key)) fail(ErrorKind::Config, "unknown config key '" + key + "'");
    cfg.values_[key] = e.value;
  }
  for (const auto& [key, value] : flags) {
    if (!find_key(key)) fail(ErrorKind::Config, "unknown option '--" + key + "'");
    cfg.values_[key] = value;
  }

  if (cfg.text("seed").empty()) fail(ErrorKind::Config, "a seed is required (--seed or 'seed = ...')");
  cfg.seed_ = static_cast<std::uint64_t>(cfg.integer("seed"));

  const auto sections = sections_for(cfg.command_);
  const bool uses_scenario = std::find(sections.begin(), sections.end(), "scenario") != sections.end();
  if (uses_scenario) {
    // Fill unset scenario keys from the preset so the manifest is explicit.
    const SimulationScenario base = preset_from_name(cfg.text("scenario.preset"));
    auto fill = [&](std::string_view key, std::string value) {
      auto& slot = cfg.values_.find(key)->second;
      if (slot.empty()) slot = std::move(value);
    };
    fill("scenario.alpha1", format_double(base.alpha1));
    fill("scenario.alpha2", format_double(base.alpha2));
    fill("scenario.alpha3", format_double(base.alpha3));
    fill("scenario.alpha4", format_double(base.alpha4));
    fill("scenario.n", std::to_string(base.n));
    fill("scenario.d_r", std::to_string(base.d_r));
    fill("scenario.latent_corr", format_double(base.latent_corr));
    fill("scenario.separability", base.separability ? "true" : "false");
    fill("scenario.noise_sd", format_double(base.noise_sd));
    cfg.scenario().validate();
  }
  cfg.network_check();
  return cfg;
}

std::string RunConfig::text(std::string_view key) const {
  auto it = values_.find(key);
  if (it == values_.end()) fail(ErrorKind::Config, "unknown key '" + std::string(key) + "'");
  return it->second;
}

bool RunConfig::has(std::string_view key) const {
  auto it = values_.find(key);
  return it != values_.end() && !it->second.empty();
}

double RunConfig::real(std::string_view key) const {
  const std::string v = text(key);
  double out = 0.0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    fail(ErrorKind::Config, std::string(key) + ": expected a number, got '" + v + "'");
  }
  return out;
}

long long RunConfig::integer(std::string_view key) const {
  const std::string v = text(key);
  long long out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    // Seeds may use the full unsigned range.
    unsigned long long u = 0;
    auto [p2, e2] = std::from_chars(v.data(), v.data() + v.size(), u);
    if (e2 == std::errc() && p2 == v.data() + v.size()) return static_cast<long long>(u);
    fail(ErrorKind::Config, std::string(key) + ": expected an integer, got '" + v + "'");
  }
  return out;
}

std::size_t RunConfig::count(std::string_view key) const {
  const long long v = integer(key);
  if (v < 0) fail(ErrorKind::Config, std::string(key) + " must be non-negative");
  return static_cast<std::size_t>(v);
}

bool RunConfig::boolean(std::string_view key) const {
  const std::string v = text(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  fail(ErrorKind::Config, std::string(key) + ": expected true or false, got '" + v + "'");
}

NetworkConfig RunConfig::network() const {
  NetworkConfig n;
  n.d_q = static_cast<Eigen::Index>(count("network.d_q"));
  n.head_hidden = static_cast<Eigen::Index>(count("network.head_hidden"));
  n.dropout_rate = real("network.dropout_rate");
  n.learning_rate = real("network.learning_rate");
  n.batch_size = count("network.batch_size");
  n.max_epochs = count("network.max_epochs");
  n.patience = count("network.patience");
  n.val_fraction = real("network.val_fraction");
  n.seed = derive_seeds(seed_).network;
  return n;
}

PropensityConfig RunConfig::propensity() const {
  PropensityConfig p;
  p.kind = parse_propensity_kind(text("propensity.kind"));
  p.regularization = real("propensity.regularization");
  p.clip_eps = real("propensity.clip_eps");
  p.trees = count("propensity.trees");
  p.max_depth = count("propensity.max_depth");
  p.min_leaf = count("propensity.min_leaf");
  p.max_newton_iterations = count("propensity.max_newton_iterations");
  p.seed = derive_seeds(seed_).propensity;
  p.validate();
  return p;
}

SimulationScenario RunConfig::scenario() const {
  SimulationScenario s;
  s.alpha1 = real("scenario.alpha1");
  s.alpha2 = real("scenario.alpha2");
  s.alpha3 = real("scenario.alpha3");
  s.alpha4 = real("scenario.alpha4");
  s.n = count("scenario.n");
  s.d_r = count("scenario.d_r");
  s.latent_corr = real("scenario.latent_corr");
  s.separability = boolean("scenario.separability");
  s.noise_sd = real("scenario.noise_sd");
  if (has("scenario.compliance_rate")) {
    s.iv = IvBlock{real("scenario.compliance_rate"), boolean("scenario.confounded_perception")};
  }
  s.design = parse_simulation_design(text("scenario.design"));
  s.seed = derive_seeds(seed_).scenario;
  return s;
}

void RunConfig::network_check() const {
  // d_r is only known once data is loaded; validate the rest with a stand-in.
  NetworkConfig n = network();
  n.d_r = 2;
  n.d_q = 1;
  n.validate();
  (void)propensity();
  if (!(confidence() > 0.0 && confidence() < 1.0)) fail(ErrorKind::Config, "confidence must lie in (0,1)");
}

void RunConfig::record(std::string key, std::string value) { values_[std::move(key)] = std::move(value); }

KvDocument RunConfig::manifest() const {
  KvDocument doc;
  doc.set("", "format", "gpi-manifest");
  doc.set("", "format_version", 1);
  doc.set("", "command", command_);
  const auto sections = sections_for(command_);
  for (const auto& k : kSchema) {
    const auto section = section_of(k.key);
    if (std::find(sections.begin(), sections.end(), section) == sections.end()) continue;
    const auto name = section.empty() ? k.key : k.key.substr(section.size() + 1);
    doc.set(section, name, text(k.key));
  }
  const DerivedSeeds s = derive_seeds(seed_);
  doc.set("seeds", "folds", static_cast<unsigned long long>(s.folds));
  doc.set("seeds", "network", static_cast<unsigned long long>(s.network));
  doc.set("seeds", "propensity", static_cast<unsigned long long>(s.propensity));
  doc.set("seeds", "ioss", static_cast<unsigned long long>(s.ioss));
  doc.set("seeds", "scenario", static_cast<unsigned long long>(s.scenario));
  doc.set("seeds", "estimators", static_cast<unsigned long long>(s.estimators));
  return doc;
}

DerivedSeeds derive_seeds(std::uint64_t g) noexcept {
  return {derive_seed(g, "cli-folds"),    derive_seed(g, "cli-network"),  derive_seed(g, "cli-propensity"),
          derive_seed(g, "cli-ioss"),     derive_seed(g, "cli-scenario"), derive_seed(g, "cli-estimators")};
}

std::string file_fingerprint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof(buf));
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(h));
  return hex;
}

}  // namespace gpi::cli
