#include "red/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "red/binary_io.hpp"
#include "red/config.hpp"
#include "red/csv.hpp"
#include "red/dataset.hpp"
#include "red/envsuite.hpp"
#include "red/error.hpp"
#include "red/harness.hpp"
#include "red/rng.hpp"
#include "red/sampler.hpp"

namespace red::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::uint64_t parse_u64(const std::string& text, const std::string& what) {
  std::uint64_t v = 0;
  const auto* end = text.data() + text.size();
  auto res = std::from_chars(text.data(), end, v);
  if (text.empty() || res.ec != std::errc{} || res.ptr != end) {
    throw ConfigError(what + " must be an unsigned 64-bit integer, got \"" + text + "\"");
  }
  return v;
}

std::optional<std::uint64_t> env_root_seed() {
  const char* v = std::getenv(kRootSeedEnv);
  if (!v) return std::nullopt;
  return parse_u64(v, kRootSeedEnv);
}

struct ExperimentOptions {
  std::string config_path;
  std::vector<std::string> sets;
  std::string out_dir;
  std::size_t jobs = 0;
};

void add_experiment_options(CLI::App* cmd, ExperimentOptions& o) {
  cmd->add_option("-c,--config", o.config_path, "Experiment config (JSON)")->check(CLI::ExistingFile);
  cmd->add_option("--set", o.sets, "Override a config field, e.g. --set sampler.alpha=1.0")
      ->allow_extra_args(false);
  cmd->add_option("-o,--out", o.out_dir, "Run directory for report.json and CSV tables")->required();
  cmd->add_option("-j,--jobs", o.jobs, "Concurrent runs (overrides config jobs)")
      ->check(CLI::PositiveNumber);
}

// Config document after overrides; the raw form is kept so commands can
// tell which fields were set explicitly.
struct LoadedConfig {
  ExperimentConfig cfg;
  json doc;
};

LoadedConfig load_config(const ExperimentOptions& o) {
  const std::string text = o.config_path.empty() ? "{}" : io::read_file(o.config_path);
  LoadedConfig lc;
  const std::string merged = apply_overrides(text, o.sets);
  lc.doc = json::parse(merged);
  lc.cfg = parse_experiment_config(merged);
  if (auto seed = env_root_seed()) lc.cfg.root_seed = *seed;
  if (o.jobs) lc.cfg.jobs = o.jobs;
  return lc;
}

std::vector<PreparedTask> prepare_all(const ExperimentConfig& cfg) {
  std::vector<PreparedTask> tasks;
  for (const auto& src : cfg.task_list()) tasks.push_back(prepare_task(src, cfg.root_seed));
  return tasks;
}

std::string fixed(double v, int digits = 2) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

void print_arm(std::ostream& out, const ArmResult& a) {
  out << a.task << "  " << a.arm << "  " << fixed(a.mean) << " +- " << fixed(a.std) << "  ("
      << a.n_completed << "/" << a.seeds.size() << " seeds)\n";
  for (const auto& w : a.warnings) out << "  warning: " << w << "\n";
}

int finish_report(const ExperimentReport& report, const std::string& out_dir, std::ostream& out,
                  std::ostream& err) {
  write_report(report, out_dir);
  for (const auto& a : report.runs) print_arm(out, a);
  out << "wrote " << (fs::path(out_dir) / "report.json").string() << "\n";
  const bool aborted = std::any_of(report.runs.begin(), report.runs.end(),
                                   [](const ArmResult& a) { return a.any_aborted(); });
  if (aborted) {
    err << "error: at least one seed aborted on a non-finite loss\n";
    return kRuntime;
  }
  return kOk;
}

// ---- dataset commands ----------------------------------------------------

struct DataOptions {
  std::string data;
  std::string preset;
  std::optional<std::uint64_t> seed;
  std::size_t n_trajectories = 0;
};

void add_data_options(CLI::App* cmd, DataOptions& o) {
  auto* data = cmd->add_option("-d,--data", o.data, "Dataset file (.ords)")->check(CLI::ExistingFile);
  auto* preset = cmd->add_option("-p,--preset", o.preset, "Generate from a named preset instead");
  data->excludes(preset);
  cmd->add_option("--seed", o.seed, "Generator seed (preset only)");
  cmd->add_option("--n-trajectories", o.n_trajectories, "Override the preset trajectory count");
}

void check_preset(const std::string& name) {
  const auto& names = preset_names();
  if (std::find(names.begin(), names.end(), name) == names.end()) {
    std::string list;
    for (const auto& n : names) list += (list.empty() ? "" : ", ") + n;
    throw CLI::ValidationError("--preset", "unknown preset \"" + name + "\" (expected one of: " + list + ")");
  }
}

std::uint64_t default_dataset_seed(const std::string& preset) {
  return derive_seed(env_root_seed().value_or(0), "dataset/" + preset);
}

OfflineDataset build_dataset(const DataOptions& o) {
  if (!o.data.empty()) return load_dataset(o.data);
  if (o.preset.empty()) throw CLI::RequiredError("--data or --preset");
  check_preset(o.preset);
  GeneratorConfig gen = preset_config(o.preset, o.seed.value_or(default_dataset_seed(o.preset)));
  if (o.n_trajectories) gen.n_trajectories = o.n_trajectories;
  return generate_dataset(gen);
}

int cmd_gen(const DataOptions& o, const std::string& out_path, std::ostream& out) {
  if (o.preset.empty()) throw CLI::RequiredError("--preset");
  const OfflineDataset ds = build_dataset(o);
  save_dataset(ds, out_path);
  const TrajectoryReturns tr = compute_trajectory_returns(ds);
  out << "wrote " << out_path << ": " << ds.size() << " transitions, " << ds.num_trajectories()
      << " trajectories, return min " << csv::num(tr.r_min) << ", max " << csv::num(tr.r_max)
      << ", env " << ds.meta().env_name << ", checksum " << io::hex64(dataset_checksum(ds)) << "\n";
  return kOk;
}

int cmd_stats(const DataOptions& o, std::size_t bins, const std::string& csv_path, std::ostream& out) {
  const OfflineDataset ds = build_dataset(o);
  const TrajectoryReturns tr = compute_trajectory_returns(ds);
  const ReturnSummary s = summarize_returns(tr);
  const Histogram h = return_histogram(tr, bins);
  std::size_t at_min = 0;
  for (double r : tr.returns) at_min += r == tr.r_min ? 1 : 0;
  out << "env            " << ds.meta().env_name << "\n"
      << "transitions    " << s.n_transitions << "\n"
      << "trajectories   " << s.n_trajectories << "\n"
      << "checksum       " << io::hex64(dataset_checksum(ds)) << "\n"
      << "return mean    " << csv::num(s.mean) << "\n"
      << "return median  " << csv::num(s.median) << "\n"
      << "return min     " << csv::num(s.min) << "  (" << at_min << " trajectories)\n"
      << "return max     " << csv::num(s.max) << "\n"
      << "right skewed   " << (s.right_skewed() ? "yes" : "no") << "\n"
      << "histogram\n";
  for (std::size_t i = 0; i < h.counts.size(); ++i) {
    out << "  [" << fixed(h.bin_edges[i], 3) << ", " << fixed(h.bin_edges[i + 1], 3) << "]  "
        << h.counts[i] << "\n";
  }
  if (!csv_path.empty()) io::write_file(csv_path, histogram_csv(h));
  return kOk;
}

struct PreviewOptions {
  std::string mode = "return_resample";
  double alpha = 1.0;
  double p_base = 0.0;
  double fraction = 0.1;
  std::size_t top = 5;
  std::string csv_path;
  std::vector<double> sweep;
};

int cmd_preview(const DataOptions& d, const PreviewOptions& o, std::ostream& out) {
  const OfflineDataset ds = build_dataset(d);
  const TrajectoryReturns tr = compute_trajectory_returns(ds);
  SamplerSpec spec{parse_sampler_mode(o.mode), o.alpha, o.p_base, o.fraction, 0};
  spec.validate();

  auto distribution = [&](const SamplerSpec& s) {
    const auto w = sampler_weights(s, ds, tr);
    const bool exponent = s.mode == SamplerMode::kReturnResample || s.mode == SamplerMode::kRewardResample;
    return std::make_pair(w, sampling_distribution(w, exponent ? s.alpha : 1.0));
  };

  if (!o.sweep.empty()) {
    csv::Writer w{"p_base", "max_deviation", "zero_mass_fraction"};
    for (double pb : o.sweep) {
      SamplerSpec s = spec;
      s.mode = SamplerMode::kReturnResample;
      s.p_base = pb;
      const auto summary = summarize_distribution(distribution(s).second.probs, 0);
      w.row({csv::num(pb), csv::num(summary.max_deviation), csv::num(summary.zero_mass_fraction)});
    }
    out << w.str();
    if (!o.csv_path.empty()) io::write_file(o.csv_path, w.str());
    return kOk;
  }

  const auto [weights, dist] = distribution(spec);
  const auto summary = summarize_distribution(dist.probs, o.top);
  out << "mode " << to_string(spec.mode) << ", alpha " << csv::num(spec.alpha) << ", p_base "
      << csv::num(spec.p_base);
  if (spec.mode == SamplerMode::kTopFraction) out << ", fraction " << csv::num(spec.fraction);
  out << "\n";
  out << "transitions " << summary.n << "\n";
  if (summary.uniform) {
    out << "uniform, deviation 0\n";
  } else {
    out << "non-uniform, deviation " << csv::num(summary.max_deviation) << "\n";
  }
  if (dist.uniform_fallback) out << "warning: all weights zero, fell back to uniform\n";
  out << "zero-mass fraction " << csv::num(summary.zero_mass_fraction) << "\n";
  out << "highest:";
  for (const auto& [i, p] : summary.top) out << " " << i << ":" << csv::num(p);
  out << "\nlowest:";
  for (const auto& [i, p] : summary.bottom) out << " " << i << ":" << csv::num(p);
  out << "\n";
  if (!o.csv_path.empty()) io::write_file(o.csv_path, distribution_csv(weights, dist.probs));
  return kOk;
}

// ---- experiment commands -------------------------------------------------

int cmd_train(const ExperimentOptions& o, std::ostream& out, std::ostream& err) {
  const auto lc = load_config(o);
  ExperimentReport report{"train", lc.cfg, {prepare_task(lc.cfg.dataset, lc.cfg.root_seed)}, {}, {}};
  report.runs.push_back(run_training(lc.cfg, report.tasks.front(), "train", lc.cfg.jobs));
  return finish_report(report, o.out_dir, out, err);
}

int cmd_dered(const ExperimentOptions& o, std::ostream& out, std::ostream& err) {
  auto lc = load_config(o);
  if (!lc.cfg.dered) lc.cfg.dered = DeredConfig{};
  ExperimentReport report{"dered", lc.cfg, {prepare_task(lc.cfg.dataset, lc.cfg.root_seed)}, {}, {}};
  auto res = two_stage_train(lc.cfg, report.tasks.front(), lc.cfg.jobs, fs::path(o.out_dir) / "checkpoints");
  report.runs = {res.stage1, res.stage2};
  report.heads_unchanged = res.heads_unchanged;
  const int code = finish_report(report, o.out_dir, out, err);
  const double delta = res.stage2.mean - res.stage1.mean;
  out << "stage2 - stage1: " << fixed(delta) << (delta > 0 ? " (improved)" : "") << "\n";
  return code;
}

int cmd_sweep(const ExperimentOptions& o, std::ostream& out, std::ostream& err) {
  const auto lc = load_config(o);
  ExperimentReport report{"sweep", lc.cfg, prepare_all(lc.cfg), {}, {}};
  report.runs = sweep_pbase(lc.cfg, report.tasks, lc.cfg.jobs).cells;
  return finish_report(report, o.out_dir, out, err);
}

int cmd_compare(const ExperimentOptions& o, std::ostream& out, std::ostream& err) {
  auto lc = load_config(o);
  // The rebalance comparison defaults to the conservative-Q family.
  if (!lc.doc.contains("algo") || !lc.doc["algo"].contains("family")) {
    lc.cfg.algo.family = Family::kConservativeQ;
  }
  ExperimentReport report{"compare", lc.cfg, prepare_all(lc.cfg), {}, {}};
  report.runs = compare_rebalance_methods(lc.cfg, report.tasks, lc.cfg.jobs).cells;
  return finish_report(report, o.out_dir, out, err);
}

// ---- report --------------------------------------------------------------

struct Cell {
  double mean = 0.0;
  double std = 0.0;
  std::size_t n = 0;
};

int cmd_report(const std::vector<std::string>& dirs, const std::string& out_dir, std::ostream& out) {
  std::vector<std::string> tasks, arms;
  std::map<std::pair<std::string, std::string>, Cell> cells;
  std::vector<std::string> first_tasks;
  for (std::size_t d = 0; d < dirs.size(); ++d) {
    const fs::path path = fs::path(dirs[d]) / "report.json";
    json doc;
    try {
      doc = json::parse(io::read_file(path));
    } catch (const json::exception& e) {
      throw ConfigError(path.string() + ": not a valid report (" + e.what() + ")");
    }
    if (doc.value("format_version", 0) != 1 || !doc.contains("runs") || !doc["runs"].is_array()) {
      throw ConfigError(path.string() + ": unsupported report schema");
    }
    std::vector<std::string> run_tasks;
    for (const auto& r : doc["runs"]) {
      const std::string task = r.at("task");
      if (std::find(run_tasks.begin(), run_tasks.end(), task) == run_tasks.end()) run_tasks.push_back(task);
    }
    std::sort(run_tasks.begin(), run_tasks.end());
    if (d == 0) {
      first_tasks = run_tasks;
    } else if (run_tasks != first_tasks) {
      std::vector<std::string> offenders;
      std::set_symmetric_difference(run_tasks.begin(), run_tasks.end(), first_tasks.begin(),
                                    first_tasks.end(), std::back_inserter(offenders));
      std::string list;
      for (const auto& t : offenders) list += (list.empty() ? "" : ", ") + t;
      throw ConfigError(path.string() + ": tasks differ from " + dirs[0] + " (" + list + ")");
    }
    for (const auto& r : doc["runs"]) {
      const std::string task = r.at("task");
      std::string arm = r.at("arm");
      if (cells.count({task, arm})) arm = fs::path(dirs[d]).filename().string() + "/" + arm;
      if (cells.count({task, arm})) throw ConfigError("duplicate arm \"" + arm + "\" for task " + task);
      cells[{task, arm}] = {r.at("mean").get<double>(), r.at("std").get<double>(),
                            r.at("n_completed").get<std::size_t>()};
      if (std::find(tasks.begin(), tasks.end(), task) == tasks.end()) tasks.push_back(task);
      if (std::find(arms.begin(), arms.end(), arm) == arms.end()) arms.push_back(arm);
    }
  }

  csv::Writer w{"task", "arm", "mean", "std", "n_seeds", "best"};
  std::vector<std::vector<std::string>> text = {{"task"}};
  text[0].insert(text[0].end(), arms.begin(), arms.end());
  for (const auto& t : tasks) {
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& a : arms) {
      auto it = cells.find({t, a});
      if (it != cells.end()) best = std::max(best, it->second.mean);
    }
    std::vector<std::string> row = {t};
    for (const auto& a : arms) {
      auto it = cells.find({t, a});
      if (it == cells.end()) {
        row.push_back("-");
        continue;
      }
      const Cell& c = it->second;
      const bool is_best = c.mean == best;
      w.row({t, a, csv::num(c.mean), csv::num(c.std), std::to_string(c.n), is_best ? "1" : "0"});
      row.push_back(fixed(c.mean) + " +- " + fixed(c.std) + (is_best ? " *" : ""));
    }
    text.push_back(row);
  }

  std::vector<std::size_t> width(text[0].size(), 0);
  for (const auto& row : text) {
    for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
  }
  std::ostringstream table;
  for (const auto& row : text) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      table << (i ? "  " : "") << std::left << std::setw(static_cast<int>(width[i])) << row[i];
    }
    table << "\n";
  }
  out << table.str();
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    io::write_file(fs::path(out_dir) / "merged.csv", w.str());
    io::write_file(fs::path(out_dir) / "merged.txt", table.str());
  }
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Return-based data rebalancing for offline RL: datasets, samplers, training and reports",
               "red-offline"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every subcommand");

  DataOptions data;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen", "Generate a dataset from a preset");
  add_data_options(gen, data);
  gen->add_option("-o,--out", gen_out, "Output .ords file")->required();

  std::size_t bins = 10;
  std::string stats_csv;
  auto* stats = app.add_subcommand("stats", "Return statistics and histogram of a dataset");
  add_data_options(stats, data);
  stats->add_option("--bins", bins, "Histogram bins")->check(CLI::PositiveNumber);
  stats->add_option("--csv", stats_csv, "Write the histogram as CSV");

  PreviewOptions preview;
  auto* prev = app.add_subcommand("rebalance-preview", "Inspect a sampling distribution");
  add_data_options(prev, data);
  prev->add_option("--mode", preview.mode, "uniform | return_resample | reward_resample | top_fraction");
  prev->add_option("--alpha", preview.alpha, "Rebalance exponent");
  prev->add_option("--p-base", preview.p_base, "Base probability added to normalized returns");
  prev->add_option("--fraction", preview.fraction, "Kept fraction for top_fraction");
  prev->add_option("--top", preview.top, "Entries shown at each end");
  prev->add_option("--csv", preview.csv_path, "Write index,weight,probability CSV");
  prev->add_option("--sweep", preview.sweep, "p_base values; prints deviation per value")->delimiter(',');

  ExperimentOptions exp;
  auto* train = app.add_subcommand("train", "Single-stage training");
  auto* dered = app.add_subcommand("dered", "Two-stage training: uniform, then rebalanced finetuning");
  auto* sweep = app.add_subcommand("sweep", "p_base sweep (columns include the uniform limit)");
  auto* compare = app.add_subcommand("compare", "Compare uniform, return, reward and top-fraction sampling");
  for (auto* c : {train, dered, sweep, compare}) add_experiment_options(c, exp);

  std::vector<std::string> report_dirs;
  std::string report_out;
  auto* report = app.add_subcommand("report", "Merge run directories into one comparison table");
  report->add_option("dirs", report_dirs, "Run directories")->required()->check(CLI::ExistingDirectory);
  report->add_option("-o,--out", report_out, "Directory for merged.csv and merged.txt");

  std::vector<const char*> argv = {"red-offline"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen(data, gen_out, out);
    if (stats->parsed()) return cmd_stats(data, bins, stats_csv, out);
    if (prev->parsed()) return cmd_preview(data, preview, out);
    if (train->parsed()) return cmd_train(exp, out, err);
    if (dered->parsed()) return cmd_dered(exp, out, err);
    if (sweep->parsed()) return cmd_sweep(exp, out, err);
    if (compare->parsed()) return cmd_compare(exp, out, err);
    if (report->parsed()) return cmd_report(report_dirs, report_out, out);
  } catch (const CLI::Error& e) {
    err << "error: " << e.what() << "\n" << app.help() << "\n";
    return kUsage;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kUsage;
}

}  // namespace red::cli
