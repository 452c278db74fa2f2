#include "red/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstring>
#include <exception>
#include <map>
#include <mutex>
#include <numeric>
#include <thread>

#include "json.hpp"
#include "red/binary_io.hpp"
#include "red/csv.hpp"
#include "red/error.hpp"

namespace red {

using nlohmann::json;

std::uint64_t algo_seed(std::uint64_t root, std::uint64_t seed) {
  return derive_seed(root, "algo/" + std::to_string(seed));
}

std::uint64_t sampler_seed(std::uint64_t root, const std::string& arm, std::uint64_t seed) {
  return derive_seed(root, "sampler/" + arm + "/" + std::to_string(seed));
}

std::uint64_t eval_seed(std::uint64_t root, const std::string& arm, std::uint64_t seed) {
  return derive_seed(root, "eval/" + arm + "/" + std::to_string(seed));
}

namespace {

// Reference scores cost 2e4 rollouts, so MDPs are built once per process.
std::shared_ptr<const Mdp> cached_mdp(const std::string& name) {
  static std::mutex mu;
  static std::map<std::string, std::shared_ptr<const Mdp>> cache;
  std::lock_guard lock(mu);
  auto& slot = cache[name];
  if (!slot) slot = make_mdp(name);
  return slot;
}

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

}  // namespace

PreparedTask prepare_task(std::string name, OfflineDataset ds) {
  PreparedTask t;
  t.name = std::move(name);
  t.mdp = cached_mdp(ds.meta().env_name);
  if (ds.meta().obs_dim != t.mdp->obs_dim() || ds.meta().action.kind != ActionSpace::Kind::kDiscrete ||
      ds.meta().action.size != t.mdp->num_actions()) {
    throw ConfigError("dataset shape does not match environment " + t.mdp->name());
  }
  t.checksum = dataset_checksum(ds);
  t.returns = compute_trajectory_returns(ds);
  t.dataset = std::make_shared<const OfflineDataset>(std::move(ds));
  return t;
}

PreparedTask prepare_task(const DatasetSource& src, std::uint64_t root_seed) {
  if (!src.path.empty()) return prepare_task(src.path, load_dataset(src.path));
  const std::uint64_t seed = src.seed ? *src.seed : derive_seed(root_seed, "dataset/" + src.preset);
  GeneratorConfig gen = preset_config(src.preset, seed);
  if (src.n_trajectories) gen.n_trajectories = src.n_trajectories;
  return prepare_task(src.preset, generate_dataset(gen));
}

double normalized_score(double raw, const ReferenceScores& refs) {
  if (!(refs.expert > refs.random)) {
    throw Error("degenerate reference scores: expert must exceed random");
  }
  return 100.0 * (raw - refs.random) / (refs.expert - refs.random);
}

std::vector<std::uint64_t> eval_schedule(std::size_t total_steps, std::size_t eval_every) {
  if (eval_every == 0) throw ConfigError("eval_every must be positive");
  std::vector<std::uint64_t> out;
  for (std::size_t s = eval_every; s <= total_steps; s += eval_every) out.push_back(s);
  if (out.empty() || out.back() != total_steps) out.push_back(total_steps);
  return out;
}

double evaluate_policy(const Mdp& mdp, const LearnerState& state, std::size_t episodes, Rng& rng) {
  const GreedyPolicy greedy = extract_policy(state);
  const PolicyFn fn = [&](std::size_t, std::span<const double> obs) { return greedy(obs); };
  double total = 0.0;
  for (std::size_t e = 0; e < episodes; ++e) total += run_episode(mdp, fn, rng).ret;
  return total / static_cast<double>(episodes);
}

double final_k_mean(const std::vector<EvalPoint>& curve, std::size_t final_k, std::size_t* used,
                    std::vector<std::string>* warnings, bool normalized) {
  if (curve.empty()) throw Error("no evaluations to aggregate");
  std::size_t k = final_k;
  if (k > curve.size()) {
    if (warnings) {
      warnings->push_back("final_k=" + std::to_string(final_k) + " clamped to " +
                          std::to_string(curve.size()) + " available evaluations");
    }
    k = curve.size();
  }
  if (used) *used = k;
  double sum = 0.0;
  for (std::size_t i = curve.size() - k; i < curve.size(); ++i) {
    sum += normalized ? curve[i].normalized : curve[i].raw;
  }
  return sum / static_cast<double>(k);
}

bool ArmResult::any_aborted() const {
  return std::any_of(seeds.begin(), seeds.end(), [](const SeedRun& s) { return s.aborted; });
}

void aggregate(ArmResult& arm) {
  std::vector<double> finals;
  for (const auto& s : arm.seeds) {
    if (!s.aborted) finals.push_back(s.final_normalized);
  }
  arm.n_completed = finals.size();
  arm.mean = 0.0;
  arm.std = 0.0;
  if (finals.empty()) return;
  arm.mean = std::accumulate(finals.begin(), finals.end(), 0.0) / static_cast<double>(finals.size());
  if (finals.size() > 1) {
    double ss = 0.0;
    for (double f : finals) ss += (f - arm.mean) * (f - arm.mean);
    arm.std = std::sqrt(ss / static_cast<double>(finals.size() - 1));
  }
}

namespace {

// Runs fn(0..n-1) on up to `jobs` threads; rethrows the first failure.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex mu;
  std::vector<std::thread> workers;
  for (std::size_t w = 0; w < jobs; ++w) {
    workers.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n;) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : workers) t.join();
  if (error) std::rethrow_exception(error);
}

// Trains `state` for `steps` batches from a freshly built sampler and
// fills the curve, losses and timing of `out`.
void run_stage(LearnerState& state, const AlgoConfig& algo, const EvalConfig& ev,
               const PreparedTask& task, SamplerSpec spec, std::uint64_t eval_rng_seed,
               std::size_t steps, SeedRun& out) {
  spec.seed = out.sampler_seed;
  const auto t_build = Clock::now();
  WeightedSampler sampler = build_sampler(spec, *task.dataset, task.returns);
  out.sampler_build_seconds = seconds_since(t_build);
  out.sampler_uniform_fallback = sampler.uniform_fallback();
  if (sampler.uniform_fallback()) {
    out.warnings.push_back("all sampling weights were zero; fell back to uniform");
  }

  Rng eval_rng(eval_rng_seed);
  const auto& refs = task.mdp->reference_scores();
  const auto schedule = eval_schedule(steps, ev.eval_every);
  std::size_t next_eval = 0;
  LossRecord last;
  const auto t_train = Clock::now();
  try {
    for (std::size_t step = 0; step <= steps; ++step) {
      if (step > 0) last = train_step(state, algo, *task.dataset, sampler);
      while (next_eval < schedule.size() && schedule[next_eval] == step) {
        const double raw = evaluate_policy(*task.mdp, state, ev.episodes_per_eval, eval_rng);
        out.curve.push_back({step, raw, normalized_score(raw, refs)});
        out.losses.emplace_back(step, last);
        ++next_eval;
      }
    }
  } catch (const NanAbort& e) {
    out.aborted = true;
    out.abort_reason = e.what();
  }
  out.train_seconds = seconds_since(t_train);
  if (!out.aborted) {
    out.final_normalized = final_k_mean(out.curve, ev.final_k, &out.final_k_used, &out.warnings);
    out.final_raw = final_k_mean(out.curve, ev.final_k, nullptr, nullptr, false);
  }
}

ArmResult make_arm(const PreparedTask& task, const ArmSpec& spec, std::size_t n_seeds) {
  ArmResult arm;
  arm.task = task.name;
  arm.arm = spec.label;
  arm.sampler = spec.sampler;
  arm.sampler.seed = 0;
  arm.dataset_checksum = task.checksum;
  arm.refs = task.mdp->reference_scores();
  arm.seeds.resize(n_seeds);
  return arm;
}

void collect_warnings(ArmResult& arm) {
  for (const auto& s : arm.seeds) {
    for (const auto& w : s.warnings) arm.warnings.push_back("seed " + std::to_string(s.seed) + ": " + w);
    if (s.aborted) {
      arm.warnings.push_back("seed " + std::to_string(s.seed) + " aborted: " + s.abort_reason);
    }
  }
}

}  // namespace

std::vector<ArmResult> run_arms(const ExperimentConfig& cfg, const std::vector<PreparedTask>& tasks,
                                const std::vector<ArmSpec>& arms, std::size_t jobs) {
  cfg.validate();
  const auto& seeds = cfg.eval.seeds;
  std::vector<ArmResult> results;
  for (const auto& task : tasks) {
    for (const auto& a : arms) results.push_back(make_arm(task, a, seeds.size()));
  }
  const std::size_t per_task = arms.size() * seeds.size();
  parallel_for(tasks.size() * per_task, jobs, [&](std::size_t job) {
    const std::size_t t = job / per_task;
    const std::size_t a = (job % per_task) / seeds.size();
    const std::size_t k = job % seeds.size();
    const auto& task = tasks[t];
    SeedRun& run = results[t * arms.size() + a].seeds[k];
    run.seed = seeds[k];
    run.algo_seed = algo_seed(cfg.root_seed, run.seed);
    run.sampler_seed = sampler_seed(cfg.root_seed, arms[a].label, run.seed);
    LearnerState state = init_learner(cfg.algo, task.mdp->obs_dim(), task.mdp->num_actions(),
                                      run.algo_seed);
    run_stage(state, cfg.algo, cfg.eval, task, arms[a].sampler,
              eval_seed(cfg.root_seed, arms[a].label, run.seed), cfg.algo.total_steps, run);
  });
  for (auto& r : results) {
    collect_warnings(r);
    aggregate(r);
  }
  return results;
}

ArmResult run_training(const ExperimentConfig& cfg, const PreparedTask& task, const std::string& arm,
                       std::size_t jobs) {
  return run_arms(cfg, {task}, {{arm, cfg.sampler}}, jobs).front();
}

bool heads_equal(const nn::Mlp& a, const nn::Mlp& b) {
  if (!a.same_structure(b)) return false;
  for (std::size_t l = 0; l < a.num_layers(); ++l) {
    if (!a.is_head(l)) continue;
    const auto& la = a.layers()[l];
    const auto& lb = b.layers()[l];
    // Bitwise comparison so -0.0 vs 0.0 or NaN payloads count as changes.
    if (std::memcmp(la.w.data(), lb.w.data(), sizeof(double) * la.w.size()) != 0 ||
        std::memcmp(la.b.data(), lb.b.data(), sizeof(double) * la.b.size()) != 0) {
      return false;
    }
  }
  return true;
}

DeredResult two_stage_train(const ExperimentConfig& cfg, const PreparedTask& task, std::size_t jobs,
                            const std::filesystem::path& checkpoint_dir) {
  cfg.validate();
  if (!cfg.dered) throw ConfigError("two-stage training needs a \"dered\" section");
  const DeredConfig& d = *cfg.dered;
  const auto& seeds = cfg.eval.seeds;
  const std::string stage2_label = d.freeze_head ? "dered" : "dered_all_layers";

  DeredResult res;
  res.stage1 = make_arm(task, {"stage1", {SamplerMode::kUniform}}, seeds.size());
  res.stage2 = make_arm(task, {stage2_label, cfg.sampler}, seeds.size());
  res.heads_unchanged.assign(seeds.size(), false);
  res.stage1_states.resize(seeds.size());
  res.stage2_states.resize(seeds.size());
  if (!checkpoint_dir.empty()) std::filesystem::create_directories(checkpoint_dir);

  AlgoConfig algo = cfg.algo;
  parallel_for(seeds.size(), jobs, [&](std::size_t k) {
    const std::uint64_t seed = seeds[k];
    SeedRun& r1 = res.stage1.seeds[k];
    SeedRun& r2 = res.stage2.seeds[k];
    r1.seed = r2.seed = seed;
    r1.algo_seed = r2.algo_seed = algo_seed(cfg.root_seed, seed);
    r1.sampler_seed = sampler_seed(cfg.root_seed, "stage1", seed);
    r2.sampler_seed = sampler_seed(cfg.root_seed, "stage2", seed);

    LearnerState s1 = init_learner(algo, task.mdp->obs_dim(), task.mdp->num_actions(), r1.algo_seed);
    run_stage(s1, algo, cfg.eval, task, SamplerSpec{SamplerMode::kUniform},
              eval_seed(cfg.root_seed, "stage1", seed), d.stage1_steps, r1);
    res.stage1_states[k] = s1;
    if (r1.aborted) {
      r2.aborted = true;
      r2.abort_reason = "stage 1 aborted";
      return;
    }

    const std::string ckpt = serialize_learner(s1);
    if (!checkpoint_dir.empty()) {
      io::write_file(checkpoint_dir / ("stage1_seed" + std::to_string(seed) + ".orck"), ckpt);
    }
    LearnerState s2 = parse_learner(ckpt, algo, task.mdp->obs_dim(), task.mdp->num_actions());
    reset_optimizers(s2, algo, d.backbone_lr_mult, d.freeze_head);

    if (d.stage2_steps == 0) {
      // No training: the stage-2 evaluation is the stage-1 final one.
      r2.curve = {r1.curve.back()};
      r2.losses = {r1.losses.back()};
      r2.final_normalized = final_k_mean(r2.curve, cfg.eval.final_k, &r2.final_k_used, &r2.warnings);
      r2.final_raw = r2.curve.back().raw;
    } else {
      run_stage(s2, algo, cfg.eval, task, cfg.sampler, eval_seed(cfg.root_seed, "stage2", seed),
                d.stage2_steps, r2);
    }
    bool same = heads_equal(s1.q, s2.q);
    if (s2.has_v()) same = same && heads_equal(s1.v, s2.v);
    if (s2.has_policy()) same = same && heads_equal(s1.policy, s2.policy);
    res.heads_unchanged[k] = same;
    res.stage2_states[k] = std::move(s2);
  });
  for (auto* arm : {&res.stage1, &res.stage2}) {
    collect_warnings(*arm);
    aggregate(*arm);
  }
  return res;
}

std::string sweep_label(double p_base) { return std::isinf(p_base) ? "inf" : csv::num(p_base); }

namespace {

Table make_table(const std::vector<PreparedTask>& tasks, const std::vector<ArmSpec>& arms,
                 std::vector<ArmResult> cells) {
  Table t;
  for (const auto& task : tasks) t.rows.push_back(task.name);
  for (const auto& a : arms) t.columns.push_back(a.label);
  t.cells = std::move(cells);
  return t;
}

}  // namespace

Table sweep_pbase(const ExperimentConfig& cfg, const std::vector<PreparedTask>& tasks,
                  std::size_t jobs) {
  if (cfg.sweep_values.empty()) throw ConfigError("sweep_values must be non-empty");
  std::vector<ArmSpec> arms;
  for (double v : cfg.sweep_values) {
    SamplerSpec spec = cfg.sampler;
    if (std::isinf(v)) {
      spec = SamplerSpec{SamplerMode::kUniform};
    } else {
      spec.mode = SamplerMode::kReturnResample;
      spec.p_base = v;
    }
    arms.push_back({sweep_label(v), spec});
  }
  return make_table(tasks, arms, run_arms(cfg, tasks, arms, jobs));
}

std::vector<ArmSpec> rebalance_arms(const SamplerSpec& base) {
  std::vector<ArmSpec> arms;
  for (SamplerMode m : {SamplerMode::kUniform, SamplerMode::kReturnResample,
                        SamplerMode::kRewardResample, SamplerMode::kTopFraction}) {
    SamplerSpec s = base;
    s.mode = m;
    arms.push_back({to_string(m), s});
  }
  return arms;
}

Table compare_rebalance_methods(const ExperimentConfig& cfg, const std::vector<PreparedTask>& tasks,
                                std::size_t jobs) {
  const auto arms = rebalance_arms(cfg.sampler);
  return make_table(tasks, arms, run_arms(cfg, tasks, arms, jobs));
}

namespace {

json sampler_json(const SamplerSpec& s) {
  return {{"mode", to_string(s.mode)}, {"alpha", s.alpha}, {"p_base", s.p_base}, {"fraction", s.fraction}};
}

json seed_json(const SeedRun& s) {
  json curve = json::array();
  for (const auto& p : s.curve) {
    curve.push_back({{"step", p.step}, {"raw", p.raw}, {"normalized", p.normalized}});
  }
  json j = {{"seed", s.seed},
            {"algo_seed", io::hex64(s.algo_seed)},
            {"sampler_seed", io::hex64(s.sampler_seed)},
            {"curve", curve},
            {"final_k_used", s.final_k_used},
            {"aborted", s.aborted},
            {"sampler_uniform_fallback", s.sampler_uniform_fallback},
            {"warnings", s.warnings}};
  if (s.aborted) {
    j["abort_reason"] = s.abort_reason;
    j["final_raw"] = nullptr;
    j["final_normalized"] = nullptr;
  } else {
    j["final_raw"] = s.final_raw;
    j["final_normalized"] = s.final_normalized;
  }
  return j;
}

json arm_json(const ArmResult& a) {
  json seeds = json::array();
  for (const auto& s : a.seeds) seeds.push_back(seed_json(s));
  return {{"task", a.task},
          {"arm", a.arm},
          {"sampler", sampler_json(a.sampler)},
          {"dataset_checksum", io::hex64(a.dataset_checksum)},
          {"reference_scores", {{"random", a.refs.random}, {"expert", a.refs.expert}}},
          {"seeds", seeds},
          {"mean", a.mean},
          {"std", a.std},
          {"n_seeds", a.seeds.size()},
          {"n_completed", a.n_completed},
          {"warnings", a.warnings}};
}

json task_json(const PreparedTask& t) {
  const Histogram h = return_histogram(t.returns, 10);
  json bins = json::array();
  for (std::size_t i = 0; i < h.counts.size(); ++i) {
    bins.push_back({{"lo", h.bin_edges[i]}, {"hi", h.bin_edges[i + 1]}, {"count", h.counts[i]}});
  }
  const ReturnSummary s = summarize_returns(t.returns);
  return {{"name", t.name},
          {"env", t.mdp->name()},
          {"dataset_checksum", io::hex64(t.checksum)},
          {"n_transitions", s.n_transitions},
          {"n_trajectories", s.n_trajectories},
          {"return_mean", s.mean},
          {"return_median", s.median},
          {"return_min", s.min},
          {"return_max", s.max},
          {"return_histogram", bins}};
}

}  // namespace

std::string report_json(const ExperimentReport& report) {
  json runs = json::array();
  for (const auto& r : report.runs) runs.push_back(arm_json(r));
  json tasks = json::array();
  for (const auto& t : report.tasks) tasks.push_back(task_json(t));
  json j = {{"kind", report.kind},
            {"format_version", 1},
            {"config", json::parse(experiment_config_json(report.config))},
            {"tasks", tasks},
            {"runs", runs}};
  if (!report.heads_unchanged.empty()) j["heads_unchanged"] = report.heads_unchanged;
  return j.dump(2) + "\n";
}

std::string timing_json(const ExperimentReport& report) {
  json runs = json::array();
  for (const auto& r : report.runs) {
    for (const auto& s : r.seeds) {
      const double total = s.sampler_build_seconds + s.train_seconds;
      runs.push_back({{"task", r.task},
                      {"arm", r.arm},
                      {"seed", s.seed},
                      {"sampler_build_seconds", s.sampler_build_seconds},
                      {"train_seconds", s.train_seconds},
                      {"overhead_fraction", total > 0.0 ? s.sampler_build_seconds / total : 0.0}});
    }
  }
  json doc = {{"runs", runs}};
  // A two-stage run is one training pipeline per seed: both sampler builds
  // against the wall-clock of both stages.
  if (report.kind == "dered" && report.runs.size() == 2) {
    json pipelines = json::array();
    const auto& s1 = report.runs[0].seeds;
    const auto& s2 = report.runs[1].seeds;
    for (std::size_t k = 0; k < s1.size() && k < s2.size(); ++k) {
      const double build = s1[k].sampler_build_seconds + s2[k].sampler_build_seconds;
      const double total = build + s1[k].train_seconds + s2[k].train_seconds;
      pipelines.push_back({{"task", report.runs[0].task},
                           {"seed", s1[k].seed},
                           {"sampler_build_seconds", build},
                           {"total_seconds", total},
                           {"overhead_fraction", total > 0.0 ? build / total : 0.0}});
    }
    doc["pipelines"] = pipelines;
  }
  return doc.dump(2) + "\n";
}

std::string table_csv(const std::vector<ArmResult>& runs) {
  csv::Writer w{"task", "arm", "mean", "std", "n_seeds"};
  for (const auto& r : runs) {
    w.row({r.task, r.arm, csv::num(r.mean), csv::num(r.std), std::to_string(r.n_completed)});
  }
  return w.str();
}

std::string wide_csv(const std::vector<ArmResult>& runs) {
  std::vector<std::string> tasks, arms;
  for (const auto& r : runs) {
    if (std::find(tasks.begin(), tasks.end(), r.task) == tasks.end()) tasks.push_back(r.task);
    if (std::find(arms.begin(), arms.end(), r.arm) == arms.end()) arms.push_back(r.arm);
  }
  std::vector<std::string> header = {"task"};
  header.insert(header.end(), arms.begin(), arms.end());
  csv::Writer w(header);
  for (const auto& t : tasks) {
    std::vector<std::string> row = {t};
    for (const auto& a : arms) {
      auto it = std::find_if(runs.begin(), runs.end(),
                             [&](const ArmResult& r) { return r.task == t && r.arm == a; });
      row.push_back(it == runs.end() ? "" : csv::num(it->mean));
    }
    w.row(row);
  }
  return w.str();
}

std::string curves_csv(const std::vector<ArmResult>& runs) {
  csv::Writer w{"task", "arm", "seed", "step", "raw", "normalized"};
  for (const auto& r : runs) {
    for (const auto& s : r.seeds) {
      for (const auto& p : s.curve) {
        w.row({r.task, r.arm, std::to_string(s.seed), std::to_string(p.step), csv::num(p.raw),
               csv::num(p.normalized)});
      }
    }
  }
  return w.str();
}

void write_report(const ExperimentReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  io::write_file(dir / "report.json", report_json(report));
  io::write_file(dir / "timing.json", timing_json(report));
  io::write_file(dir / "table.csv", table_csv(report.runs));
  io::write_file(dir / "table_wide.csv", wide_csv(report.runs));
  io::write_file(dir / "curves.csv", curves_csv(report.runs));
  const auto loss_dir = dir / "losses";
  std::filesystem::create_directories(loss_dir);
  for (const auto& r : report.runs) {
    for (const auto& s : r.seeds) {
      std::string text = loss_csv_header();
      for (const auto& [step, l] : s.losses) text += loss_csv_row(step, l);
      io::write_file(loss_dir / (r.task + "__" + r.arm + "__seed" + std::to_string(s.seed) + ".csv"), text);
    }
  }
}

}  // namespace red
