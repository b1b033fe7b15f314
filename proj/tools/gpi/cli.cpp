#include "cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>

#include "gpi/data_model.hpp"
#include "gpi/diagnostics.hpp"
#include "gpi/dml.hpp"
#include "gpi/error.hpp"
#include "gpi/kv_report.hpp"
#include "gpi/simulation.hpp"
#include "run_config.hpp"

namespace gpi::cli {

namespace fs = std::filesystem;

namespace {

class Outputs {
 public:
  explicit Outputs(fs::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) fail(ErrorKind::Io, "cannot create output directory " + dir_.string() + ": " + ec.message());
  }
  const fs::path& dir() const noexcept { return dir_; }
  void write(const fs::path& name, std::string_view content) const {
    if (name.has_parent_path()) fs::create_directories(dir_ / name.parent_path());
    write_file_atomic(dir_ / name, content);
  }

 private:
  fs::path dir_;
};

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

void write_timing(const Outputs& outputs, double seconds) {
  KvDocument doc;
  doc.set("", "format", "gpi-timing");
  doc.set("", "format_version", 1);
  doc.set("", "wall_seconds", seconds);
  outputs.write("timing.ini", doc.serialize());
}

/// Loads the dataset, checking fingerprints recorded by an earlier run.
Dataset load_input(RunConfig& cfg) {
  if (!cfg.has("input.representations") || !cfg.has("input.labels")) {
    fail(ErrorKind::Config, "input.representations and input.labels are required");
  }
  const fs::path reps = cfg.text("input.representations");
  const fs::path labels = cfg.text("input.labels");
  if (!fs::exists(reps)) fail(ErrorKind::Io, "representation file not found: " + reps.string());
  if (!fs::exists(labels)) fail(ErrorKind::Io, "labels file not found: " + labels.string());
  const std::string reps_fp = file_fingerprint(reps);
  const std::string labels_fp = file_fingerprint(labels);
  if (cfg.has("input.representations_fnv1a") && cfg.text("input.representations_fnv1a") != reps_fp) {
    fail(ErrorKind::Io, "representation file differs from the one recorded in the config");
  }
  if (cfg.has("input.labels_fnv1a") && cfg.text("input.labels_fnv1a") != labels_fp) {
    fail(ErrorKind::Io, "labels file differs from the one recorded in the config");
  }
  cfg.record("input.representations_fnv1a", reps_fp);
  cfg.record("input.labels_fnv1a", labels_fp);
  return load_dataset(reps, labels);
}

FoldPlan plan_for(const RunConfig& cfg, const Dataset& data) {
  return make_folds(data.size(), cfg.count("folds.k"), cfg.real("folds.inner_split_fraction"),
                    derive_seeds(cfg.seed()).folds);
}

CrossFitResult cross_fit(const RunConfig& cfg, const Dataset& data, const FoldPlan& plan, bool late) {
  NetworkConfig net = cfg.network();
  net.d_r = data.d_r();
  CrossFitOptions options;
  options.confidence = cfg.confidence();
  return late ? estimate_late(data, plan, net, cfg.propensity(), options)
              : estimate_ate(data, plan, net, cfg.propensity(), options);
}

std::string scores_csv(const Dataset& data, const FoldPlan& plan, const CrossFitResult& fit, bool late) {
  std::string out = "id,fold,t,y,mu0,mu1,pi,score";
  if (late) out += ",t_tilde,m0,m1,numerator,denominator";
  out += '\n';
  const auto& v = fit.values;
  const auto& r = fit.result;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto e = static_cast<Eigen::Index>(i);
    out += data.ids()[i] + ',' + std::to_string(plan.assignment[i] + 1) + ',' + std::to_string(data.t()[i]) + ',' +
           format_double(data.y()[e]) + ',' + format_double(v.mu0[e]) + ',' + format_double(v.mu1[e]) + ',' +
           format_double(v.pi[e]) + ',' + format_double(r.scores[e]);
    if (late) {
      out += ',' + std::to_string(data.t_tilde()[i]) + ',' + format_double(v.m0[e]) + ',' + format_double(v.m1[e]) +
             ',' + format_double(r.numerator_scores[e]) + ',' + format_double(r.denominator_scores[e]);
    }
    out += '\n';
  }
  return out;
}

void print_estimate(std::ostream& out, const EstimateResult& r) {
  out << to_string(r.estimand) << " = " << format_double(r.estimate) << "  SE = " << format_double(r.std_error)
      << "  " << format_double(100.0 * r.confidence) << "% CI [" << format_double(r.ci_low) << ", "
      << format_double(r.ci_high) << "]  n = " << r.n_used << '\n';
}

void run_estimate(RunConfig& cfg, const Outputs& outputs, std::ostream& out, bool late) {
  const Stopwatch clock;
  const Dataset data = load_input(cfg);
  const FoldPlan plan = plan_for(cfg, data);
  const CrossFitResult fit = cross_fit(cfg, data, plan, late);
  outputs.write("estimate.ini", estimate_report(fit).serialize());
  outputs.write("scores.csv", scores_csv(data, plan, fit, late));
  outputs.write("manifest.ini", cfg.manifest().serialize());
  for (const auto& fold : fit.nuisances) {
    std::filesystem::create_directories(outputs.dir() / "models");
    fold.network.save(outputs.dir() / "models" / ("fold" + std::to_string(fold.fold + 1) + ".gpim"));
    for (const auto& w : fold.warnings) out << "warning (fold " << fold.fold + 1 << "): " << w << '\n';
  }
  write_timing(outputs, clock.seconds());
  print_estimate(out, fit.result);
}

void run_diagnose(RunConfig& cfg, const Outputs& outputs, std::ostream& out) {
  const Stopwatch clock;
  const Dataset data = load_input(cfg);
  const FoldPlan plan = plan_for(cfg, data);
  const CrossFitResult fit = cross_fit(cfg, data, plan, false);
  IossOptions io;
  io.max_rows_per_arm = cfg.count("diagnostics.ioss_max_rows");
  io.seed = derive_seeds(cfg.seed()).ioss;
  const DiagnosticsReport report = diagnose(fit, plan, data.t(), cfg.count("diagnostics.bins"), io);

  std::string pscores = "id,fold,t,pi\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    pscores += data.ids()[i] + ',' + std::to_string(plan.assignment[i] + 1) + ',' + std::to_string(data.t()[i]) +
               ',' + format_double(fit.values.pi[static_cast<Eigen::Index>(i)]) + '\n';
  }
  outputs.write("diagnostics.ini", diagnostics_report(report).serialize());
  outputs.write("pscore_histogram.csv", histogram_csv(report.pscores));
  outputs.write("pscores.csv", pscores);
  outputs.write("manifest.ini", cfg.manifest().serialize());
  write_timing(outputs, clock.seconds());
  out << "IOSS = " << format_double(report.ioss) << "  extreme_fraction = "
      << format_double(report.pscores.extreme_fraction) << "  control share below 0.05 = "
      << format_double(report.control_fraction_below_005) << '\n';
  for (const auto& note : report.notes) out << "note: " << note << '\n';
}

std::vector<EstimatorKind> parse_estimators(const std::string& list) {
  std::vector<EstimatorKind> kinds;
  std::size_t start = 0;
  while (start <= list.size()) {
    const auto comma = list.find(',', start);
    const std::string item = list.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    if (!item.empty()) kinds.push_back(parse_estimator_kind(item));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  if (kinds.empty()) fail(ErrorKind::Config, "simulate.estimators is empty");
  return kinds;
}

void run_simulate(RunConfig& cfg, const Outputs& outputs, std::ostream& out) {
  const Stopwatch clock;
  const SimulationScenario scenario = cfg.scenario();
  EstimatorConfig ec;
  ec.network = cfg.network();
  ec.network.d_r = static_cast<Eigen::Index>(scenario.d_r);
  ec.propensity = cfg.propensity();
  ec.k_folds = cfg.count("folds.k");
  ec.inner_split_fraction = cfg.real("folds.inner_split_fraction");
  ec.confidence = cfg.confidence();
  const std::string estimand = cfg.text("simulate.estimand");
  if (estimand != "ate" && estimand != "late") fail(ErrorKind::Config, "simulate.estimand must be ate or late");
  ec.late = estimand == "late";
  ec.diagnostics = cfg.boolean("simulate.diagnostics");
  ec.seed = derive_seeds(cfg.seed()).estimators;
  MonteCarloOptions options;
  options.estimators = parse_estimators(cfg.text("simulate.estimators"));

  const MCReport report = run_monte_carlo(scenario, ec, cfg.count("simulate.trials"), options);
  outputs.write("mc_summary.ini", mc_summary_report(report).serialize());
  outputs.write("mc_trials.csv", mc_records_csv(report));
  if (cfg.boolean("simulate.export_dataset")) {
    const SimulatedSample sample = generate_sample(scenario);
    save_dataset(sample.data, outputs.dir() / "dataset.gpir", outputs.dir() / "labels.csv");
    std::string truth = "id,h1,h2";
    if (scenario.iv) truth += ",complier";
    truth += '\n';
    for (std::size_t i = 0; i < sample.truth.t.size(); ++i) {
      truth += sample.data.ids()[i] + ',' + std::to_string(sample.truth.h1[i]) + ',' +
               format_double(sample.truth.h2[i]);
      if (scenario.iv) truth += ',' + std::to_string(sample.truth.compliers[i]);
      truth += '\n';
    }
    outputs.write("truth.csv", truth);
  }
  outputs.write("manifest.ini", cfg.manifest().serialize());
  KvDocument timing = mc_timing_report(report);
  timing.set("", "wall_seconds", clock.seconds());
  outputs.write("timing.ini", timing.serialize());

  for (const auto& s : report.summaries) {
    out << to_string(s.estimator) << ": bias = " << format_double(s.bias) << "  rmse = " << format_double(s.rmse)
        << "  coverage = " << format_double(s.coverage) << "  avg CI length = " << format_double(s.avg_ci_length)
        << "  failures = " << s.failures << '\n';
  }
}

void run_baseline(RunConfig& cfg, const Outputs& outputs, std::ostream& out) {
  const Stopwatch clock;
  const Dataset data = load_input(cfg);
  const EstimateResult r = difference_in_means(data, cfg.confidence());
  outputs.write("estimate.ini", estimate_report(r).serialize());
  outputs.write("manifest.ini", cfg.manifest().serialize());
  write_timing(outputs, clock.seconds());
  print_estimate(out, r);
}

void dispatch(RunConfig& cfg, const fs::path& output_dir, std::ostream& out) {
  const Outputs outputs(output_dir);
  const std::string& c = cfg.command();
  if (c == "estimate-ate") {
    run_estimate(cfg, outputs, out, false);
  } else if (c == "estimate-late") {
    run_estimate(cfg, outputs, out, true);
  } else if (c == "diagnose") {
    run_diagnose(cfg, outputs, out);
  } else if (c == "simulate") {
    run_simulate(cfg, outputs, out);
  } else {
    run_baseline(cfg, outputs, out);
  }
}

/// Short aliases for the most common keys.
const std::map<std::string, std::string>& aliases() {
  static const std::map<std::string, std::string> a{
      {"input.representations", "--representations"}, {"input.labels", "--labels"},
      {"folds.k", "--folds"},                         {"scenario.preset", "--preset"},
      {"simulate.trials", "--trials"},                {"simulate.estimators", "--estimators"},
  };
  return a;
}

struct CommandOptions {
  std::string config_path;
  std::string output_dir;
  bool export_dataset = false;
  std::map<std::string, std::string> values;
  std::vector<std::pair<std::string, CLI::Option*>> options;
};

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"GPI: causal effects of features embedded in unstructured objects", "gpi"};
  app.require_subcommand(1);
  const std::vector<std::pair<std::string, std::string>> commands{
      {"estimate-ate", "cross-fitted ATE with the deconfounder network"},
      {"estimate-late", "cross-fitted LATE using the perceived treatment"},
      {"diagnose", "propensity distribution and IOSS"},
      {"simulate", "Monte Carlo study on a synthetic scenario"},
      {"baseline", "difference in means"},
      {"run", "re-run from a config or manifest (command taken from the file)"},
  };
  std::map<std::string, std::unique_ptr<CommandOptions>> per_command;
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    auto opts = std::make_unique<CommandOptions>();
    sub->add_option("--config", opts->config_path, "key-value config file (flags override it)");
    sub->add_option("-o,--output-dir", opts->output_dir, "directory for outputs")->required();
    if (name == "run") sub->get_option("--config")->required();
    for (const auto& spec : key_schema()) {
      std::string flag = "--" + std::string(spec.key);
      if (auto it = aliases().find(std::string(spec.key)); it != aliases().end()) flag += "," + it->second;
      auto* opt = sub->add_option(flag, opts->values[std::string(spec.key)], std::string(spec.help));
      opts->options.emplace_back(std::string(spec.key), opt);
    }
    sub->add_flag("--export-dataset", opts->export_dataset, "same as --simulate.export_dataset true");
    per_command[name] = std::move(opts);
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  if (!reversed.empty()) reversed.pop_back();  // program name
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e, out, err);
      return 0;
    }
    err << "error [config]: " << e.what() << '\n';
    return exit_code(ErrorKind::Config);
  }

  try {
    const auto* sub = app.get_subcommands().front();
    const CommandOptions& opts = *per_command.at(sub->get_name());
    std::map<std::string, std::string> flags;
    for (const auto& [key, opt] : opts.options) {
      if (opt->count() > 0) flags[key] = opts.values.at(key);
    }
    if (opts.export_dataset) flags["simulate.export_dataset"] = "true";
    KvDocument file;
    if (!opts.config_path.empty()) {
      if (!fs::exists(opts.config_path)) fail(ErrorKind::Io, "config file not found: " + opts.config_path);
      file = KvDocument::parse(read_text_file(opts.config_path));
    }
    std::string command = sub->get_name();
    if (command == "run") {
      const auto c = file.get("command");
      if (!c) fail(ErrorKind::Config, "config file has no 'command' key");
      command = *c;
    }
    RunConfig cfg = RunConfig::resolve(command, file, flags);
    dispatch(cfg, opts.output_dir, out);
    return 0;
  } catch (const Error& e) {
    err << "error [" << to_string(e.kind()) << "]: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    err << "error [internal]: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace gpi::cli
