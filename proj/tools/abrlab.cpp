// abrlab: trace-driven laboratory for meta-RL bitrate adaptation.
//
// Subcommands: estimate, fit-dist, gen-traces, train, run, eval, plot.
// Exit codes: 0 success, 1 usage, 2 data error, 3 runtime error.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <string>
#include <vector>

#include "abrlab/bwest.hpp"
#include "abrlab/config.hpp"
#include "abrlab/harness.hpp"
#include "abrlab/meta_rl.hpp"
#include "abrlab/svg_plot.hpp"
#include "abrlab/taskspace.hpp"
#include "abrlab/trace_io.hpp"
#include "abrlab/tracegen.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonOpts {
  std::string config_file;
  std::vector<std::string> overrides;
  std::uint64_t seed = 1;
  std::string out_dir;
};

void add_config_options(CLI::App* cmd, CommonOpts& opts, bool with_out = true) {
  cmd->add_option("--config", opts.config_file, "config file (key = value lines)");
  cmd->add_option("-D,--define", opts.overrides, "override a config key, e.g. -D inner_lr=0.002");
  cmd->add_option("--seed", opts.seed, "random seed (printed at start)");
  if (with_out) cmd->add_option("--out", opts.out_dir, "output directory")->required();
}

abrlab::LabConfig make_config(const CommonOpts& opts) {
  abrlab::LabConfig cfg;
  if (!opts.config_file.empty()) cfg = abrlab::LabConfig::from_file(opts.config_file);
  for (const auto& kv : opts.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw abrlab::ParseError("override '" + kv + "' is not key=value");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.seed = opts.seed;
  cfg.validate();
  std::printf("seed = %llu\n", static_cast<unsigned long long>(opts.seed));
  return cfg;
}

// Every artifact written under --out is listed in a manifest together with
// the config hash that produced it.
class Manifest {
 public:
  Manifest(fs::path dir, const abrlab::LabConfig& cfg, std::string command)
      : dir_(std::move(dir)), command_(std::move(command)) {
    fs::create_directories(dir_);
    char hex[32];
    std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(cfg.hash()));
    config_hash_ = hex;
  }

  fs::path path(const std::string& rel) {
    auto p = dir_ / rel;
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    artifacts_.push_back(rel);
    return p;
  }

  void write() const {
    json j;
    j["command"] = command_;
    j["config_hash"] = config_hash_;
    j["artifacts"] = json::array();
    for (const auto& rel : artifacts_) {
      json a;
      a["path"] = rel;
      std::error_code ec;
      const auto sz = fs::file_size(dir_ / rel, ec);
      a["bytes"] = ec ? 0 : static_cast<std::int64_t>(sz);
      j["artifacts"].push_back(a);
    }
    std::ofstream out(dir_ / "manifest.json", std::ios::binary);
    out << j.dump(2) << "\n";
  }

 private:
  fs::path dir_;
  std::string command_;
  std::string config_hash_;
  std::vector<std::string> artifacts_;
};

std::vector<abrlab::NetTrace> load_corpus(const std::string& dir) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".csv")
      files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw abrlab::DataError("no .csv traces under '" + dir + "'");
  std::vector<abrlab::NetTrace> corpus;
  corpus.reserve(files.size());
  for (const auto& f : files) corpus.push_back(abrlab::load_trace(f.string()));
  return corpus;
}

// --------------------------------------------------------------------------

int cmd_estimate(const CommonOpts& common, const std::string& input, const std::string& output,
                 bool retro, double delta_mu) {
  const auto cfg = make_config(common);
  const auto feedback = abrlab::load_feedback(input);
  abrlab::BandwidthEstimator est(
      {static_cast<std::size_t>(std::lround(cfg.dprop_window_s / cfg.feedback_s)),
       cfg.dprop_sigma_ms, cfg.dprop_cap_ms});
  std::vector<abrlab::EstimateStep> steps;
  steps.reserve(feedback.size());
  for (const auto& fb : feedback) steps.push_back(est.update(fb, delta_mu));
  if (retro) steps = abrlab::retro_adjust(std::move(steps));
  std::ofstream out(output, std::ios::binary);
  if (!out) throw abrlab::DataError("cannot write '" + output + "'");
  out << "t_s,b_hat_mbps,full_pipe\n";
  for (const auto& s : steps)
    out << abrlab::csv::format(s.t_s) << "," << abrlab::csv::format(s.b_hat) << ","
        << (s.full_pipe ? 1 : 0) << "\n";
  std::printf("estimate: %zu rows -> %s\n", steps.size(), output.c_str());
  return 0;
}

int cmd_fit_dist(const CommonOpts& common, const std::string& corpus_dir,
                 const std::string& output) {
  const auto cfg = make_config(common);
  const auto corpus = load_corpus(corpus_dir);
  const auto dist = abrlab::fit_distribution(corpus, cfg);
  dist.save(output);
  std::printf("fit-dist: %zu traces, %zu joint bins, %zu d_prop bins -> %s\n", corpus.size(),
              dist.joint.size(), dist.dprop.size(), output.c_str());
  std::printf("corpus stats: dprop_sigma_ms = %.4f  dprop_cap_ms = %.4f  max_bw_mbps = %.4f\n",
              dist.dprop_sigma_ms, dist.dprop_cap_ms, dist.max_bw_mbps);
  return 0;
}

int cmd_gen_traces(const CommonOpts& common, const std::string& dist_file,
                   const std::string& task_spec, int count, int length) {
  auto cfg = make_config(common);
  abrlab::Rng rng(cfg.seed);
  std::vector<abrlab::NetworkState> tasks;
  if (!dist_file.empty()) {
    const auto dist = abrlab::TaskDistribution::load(dist_file);
    if (dist.max_bw_mbps > 0.0) cfg.max_bw_mbps = dist.max_bw_mbps;
    for (int i = 0; i < count; ++i) tasks.push_back(dist.sample(rng));
  } else {
    abrlab::NetworkState task;
    if (std::sscanf(task_spec.c_str(), "%lf,%lf,%lf,%lf", &task.mu, &task.sigma, &task.omega,
                    &task.d_prop_ms) != 4)
      throw abrlab::ParseError("--task expects mu,sigma,omega,dprop_ms");
    task.delta = cfg.delta_floor;
    task.validate(cfg.delta_floor);
    tasks.assign(static_cast<std::size_t>(count), task);
  }
  Manifest manifest(common.out_dir, cfg, "gen-traces");
  const auto gen_cfg = abrlab::tracegen_config_from(cfg);
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    char name[64];
    std::snprintf(name, sizeof(name), "trace_%04zu.csv", i);
    const auto trace =
        abrlab::generate_trajectory(tasks[i], length, cfg.max_bw_mbps, rng, gen_cfg, name);
    abrlab::save_trace(trace, manifest.path(name).string());
  }
  manifest.write();
  std::printf("gen-traces: %zu trajectories of %d s -> %s\n", tasks.size(), length,
              common.out_dir.c_str());
  return 0;
}

int cmd_train(const CommonOpts& common, const std::string& dist_file, int jobs) {
  auto cfg = make_config(common);
  const auto dist = abrlab::TaskDistribution::load(dist_file);
  if (dist.max_bw_mbps > 0.0) cfg.max_bw_mbps = dist.max_bw_mbps;
  if (dist.dprop_sigma_ms > 0.0) cfg.dprop_sigma_ms = dist.dprop_sigma_ms;
  if (dist.dprop_cap_ms > 0.0) cfg.dprop_cap_ms = dist.dprop_cap_ms;
  Manifest manifest(common.out_dir, cfg, "train");

  std::ofstream report(manifest.path("report.csv"), std::ios::binary);
  report << "round,outer_loss,pre_adapt_reward,post_adapt_reward,tasks_done,tasks_failed,wall_ms\n";
  auto checkpoint = [&](int round, const abrlab::MlpParams& theta) {
    char name[64];
    std::snprintf(name, sizeof(name), "checkpoint_%04d.bin", round);
    theta.save(manifest.path(name).string());
  };
  auto on_round = [&](const abrlab::RoundReport& r) {
    report << r.round << "," << abrlab::csv::format(r.outer_loss) << ","
           << abrlab::csv::format(r.mean_pre_reward) << ","
           << abrlab::csv::format(r.mean_post_reward) << "," << r.tasks_done << ","
           << r.tasks_failed << "," << abrlab::csv::format(r.wall_ms) << "\n";
    report.flush();
    std::printf("round %4d  loss %10.4f  pre %8.3f  post %8.3f  (%.0f ms)\n", r.round,
                r.outer_loss, r.mean_pre_reward, r.mean_post_reward, r.wall_ms);
  };
  const auto result = abrlab::meta_train(cfg, dist, cfg.seed, jobs, checkpoint, on_round);
  result.theta0.save(manifest.path("theta0.bin").string());
  manifest.write();
  std::printf("train: %d rounds -> %s/theta0.bin\n", cfg.rounds, common.out_dir.c_str());
  return 0;
}

int cmd_run(const CommonOpts& common, const std::string& trace_file,
            const std::string& checkpoint, const std::string& controller, bool no_meta_test) {
  const auto cfg = make_config(common);
  const auto trace = abrlab::load_trace(trace_file);
  abrlab::RunOptions opts;
  opts.controller = abrlab::controller_from_string(controller);
  if (no_meta_test && opts.controller == abrlab::ControllerKind::kPolicy)
    opts.controller = abrlab::ControllerKind::kPolicyFrozen;
  if (opts.controller != abrlab::ControllerKind::kGcc) {
    if (checkpoint.empty())
      throw abrlab::DataError("run: controller '" + controller + "' needs --checkpoint");
    opts.checkpoint = abrlab::MlpParams::load(checkpoint);
  }
  opts.keep_packet_log = true;
  Manifest manifest(common.out_dir, cfg, "run");
  const auto run = abrlab::run_session(trace, cfg, cfg.seed, opts);
  abrlab::save_metrics_csv(run, manifest.path("metrics.csv").string());
  abrlab::save_events_csv(run, manifest.path("events.csv").string());
  abrlab::save_packets_csv(run, manifest.path("packets.csv").string());
  manifest.write();
  std::printf("run: %s over %s -> mean reward %.3f, stalling %.3f\n", run.controller.c_str(),
              trace.id.c_str(), run.mean_reward(), run.stalling_rate());
  return 0;
}

int cmd_eval(const CommonOpts& common, const std::string& traces_dir,
             const std::string& controllers_csv, const std::string& checkpoint,
             const std::string& seeds_csv, int jobs) {
  const auto cfg = make_config(common);
  const auto corpus = load_corpus(traces_dir);

  std::vector<abrlab::ControllerKind> controllers;
  {
    std::stringstream ss(controllers_csv);
    std::string item;
    while (std::getline(ss, item, ','))
      if (!item.empty()) controllers.push_back(abrlab::controller_from_string(item));
  }
  if (controllers.empty()) throw abrlab::DataError("eval: no controllers given");
  std::vector<std::uint64_t> seeds;
  {
    std::stringstream ss(seeds_csv);
    std::string item;
    while (std::getline(ss, item, ','))
      if (!item.empty()) seeds.push_back(std::stoull(item));
  }
  if (seeds.empty()) seeds.push_back(cfg.seed);

  // Missing checkpoint is a named error before any session runs.
  std::optional<abrlab::MlpParams> theta;
  for (const auto c : controllers) {
    if (c != abrlab::ControllerKind::kGcc && !theta) {
      if (checkpoint.empty())
        throw abrlab::DataError("eval: learned controllers require --checkpoint");
      theta = abrlab::MlpParams::load(checkpoint);
    }
  }

  Manifest manifest(common.out_dir, cfg, "eval");
  struct Job {
    const abrlab::NetTrace* trace;
    abrlab::ControllerKind controller;
    std::uint64_t seed;
  };
  std::vector<Job> jobs_list;
  for (const auto& trace : corpus)
    for (const auto c : controllers)
      for (const auto s : seeds) jobs_list.push_back({&trace, c, s});
  std::vector<abrlab::RunResult> results(jobs_list.size());
  abrlab::detail::parallel_indexed(static_cast<int>(jobs_list.size()), jobs, [&](int i) {
    const auto& job = jobs_list[static_cast<std::size_t>(i)];
    abrlab::RunOptions opts;
    opts.controller = job.controller;
    if (job.controller != abrlab::ControllerKind::kGcc) opts.checkpoint = theta;
    results[static_cast<std::size_t>(i)] = abrlab::run_session(*job.trace, cfg, job.seed, opts);
  });

  std::vector<abrlab::SummaryRow> rows;
  for (const auto c : controllers) {
    std::vector<const abrlab::RunResult*> group;
    for (const auto& r : results)
      if (r.controller == abrlab::to_string(c)) group.push_back(&r);
    rows.push_back(abrlab::summarize(abrlab::to_string(c), group));
  }
  for (const auto& r : results) {
    const auto rel =
        "sessions/" + r.trace_id + "_" + r.controller + "_" + std::to_string(r.seed) + ".csv";
    abrlab::save_metrics_csv(r, manifest.path(rel).string());
  }
  abrlab::save_summary_csv(rows, manifest.path("summary.csv").string());
  manifest.write();
  for (const auto& row : rows)
    std::printf("%-14s sessions %3d  thr %.3f±%.3f  rtt %6.1f±%5.1f  loss %.4f  stall %.4f  "
                "reward %.3f±%.3f\n",
                row.controller.c_str(), row.sessions, row.throughput.mean, row.throughput.stddev,
                row.rtt.mean, row.rtt.stddev, row.loss.mean, row.stalling.mean, row.reward.mean,
                row.reward.stddev);
  return 0;
}

int cmd_plot(const CommonOpts& common, const std::vector<std::string>& metrics_files,
             const std::string& summary_file) {
  const auto cfg = make_config(common);
  Manifest manifest(common.out_dir, cfg, "plot");
  for (const auto& file : metrics_files) {
    const auto table = abrlab::load_csv(file);
    if (table.rows.empty()) throw abrlab::DataError("plot: '" + file + "' has no data rows");
    const auto t = table.values("second");
    abrlab::svg::Panel bw{"bandwidth / estimate (Mbps)",
                          {{"trace", "#444444", t, table.values("bandwidth_mbps")},
                           {"b_hat", "#cc6677", t, table.values("b_hat_mbps")}}};
    abrlab::svg::Panel rate{"chosen bitrate (Mbps)",
                            {{"target", "#4477aa", t, table.values("target_mbps")},
                             {"throughput", "#66aa55", t, table.values("throughput_mbps")}}};
    abrlab::svg::Panel rtt{"RTT (ms)", {{"rtt", "#aa7744", t, table.values("rtt_ms")}}};
    const auto name = fs::path(file).stem().string() + "_timeline.svg";
    abrlab::svg::write_timeline(manifest.path(name).string(), {bw, rate, rtt});
  }
  if (!summary_file.empty()) {
    const auto table = abrlab::load_csv(summary_file);
    if (table.rows.empty()) throw abrlab::DataError("plot: summary has no rows");
    // Controller labels live in the raw CSV text, not the numeric table.
    std::vector<std::string> labels;
    {
      std::ifstream in(summary_file);
      std::string line;
      std::getline(in, line);
      while (std::getline(in, line))
        if (!line.empty()) labels.push_back(abrlab::csv::split(line).front());
    }
    for (const auto* col : {"reward", "throughput_mbps", "stalling_rate"}) {
      const auto vals = table.values(col);
      std::vector<abrlab::svg::Bar> bars;
      for (std::size_t i = 0; i < vals.size() && i < labels.size(); ++i)
        bars.push_back({labels[i], vals[i]});
      abrlab::svg::write_bars(manifest.path(std::string(col) + "_bars.svg").string(), col, bars);
    }
  }
  manifest.write();
  std::printf("plot: wrote figures to %s\n", common.out_dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"trace-driven laboratory for meta-RL bitrate adaptation"};
  app.require_subcommand(1);

  CommonOpts est_opts, fit_opts, gen_opts, train_opts, run_opts, eval_opts, plot_opts;

  auto* est = app.add_subcommand("estimate", "bandwidth estimates from a feedback CSV");
  std::string est_in, est_out;
  bool est_retro = false;
  double est_delta_mu = abrlab::kDeltaFloor.mu;
  est->add_option("--input", est_in, "feedback CSV (t,throughput,loss,delay[,jitter])")
      ->required();
  est->add_option("--output", est_out, "output CSV (t,b_hat,full_pipe)")->required();
  est->add_flag("--retro", est_retro, "apply the offline retroactive adjustment");
  est->add_option("--delta-mu", est_delta_mu, "additive probe value (task range for mu)");
  add_config_options(est, est_opts, /*with_out=*/false);

  auto* fit = app.add_subcommand("fit-dist", "fit the network-state distribution from traces");
  std::string fit_corpus, fit_out;
  fit->add_option("--corpus", fit_corpus, "directory of trace CSVs")->required();
  fit->add_option("--output", fit_out, "distribution file to write")->required();
  add_config_options(fit, fit_opts, /*with_out=*/false);

  auto* gen = app.add_subcommand("gen-traces", "generate synthetic trajectories");
  std::string gen_dist, gen_task;
  int gen_count = 10, gen_length = 60;
  gen->add_option("--dist", gen_dist, "distribution file to sample tasks from");
  gen->add_option("--task", gen_task, "fixed task center mu,sigma,omega,dprop_ms");
  gen->add_option("--count", gen_count, "number of trajectories");
  gen->add_option("--length", gen_length, "trajectory length in seconds");
  add_config_options(gen, gen_opts);

  auto* train = app.add_subcommand("train", "offline meta-training");
  std::string train_dist;
  int train_jobs = 2;
  train->add_option("--dist", train_dist, "distribution file")->required();
  train->add_option("--jobs", train_jobs, "parallel task rollouts");
  add_config_options(train, train_opts);

  auto* run = app.add_subcommand("run", "one serving session over a trace");
  std::string run_trace, run_ckpt, run_controller = "policy";
  bool run_no_meta = false;
  run->add_option("--trace", run_trace, "trace CSV")->required();
  run->add_option("--checkpoint", run_ckpt, "parameter file (theta0)");
  run->add_option("--controller", run_controller, "gcc | policy | policy-frozen");
  run->add_flag("--no-meta-test", run_no_meta, "freeze theta0 (ablation)");
  add_config_options(run, run_opts);

  auto* eval = app.add_subcommand("eval", "run the evaluation suite");
  std::string eval_traces, eval_controllers = "gcc,policy", eval_ckpt, eval_seeds = "1";
  int eval_jobs = 2;
  eval->add_option("--traces", eval_traces, "directory of trace CSVs")->required();
  eval->add_option("--controllers", eval_controllers, "comma list: gcc,policy,policy-frozen");
  eval->add_option("--checkpoint", eval_ckpt, "parameter file for learned controllers");
  eval->add_option("--seeds", eval_seeds, "comma list of seeds");
  eval->add_option("--jobs", eval_jobs, "parallel sessions");
  add_config_options(eval, eval_opts);

  auto* plot = app.add_subcommand("plot", "timeline and bar figures from CSVs");
  std::vector<std::string> plot_metrics;
  std::string plot_summary;
  plot->add_option("--metrics", plot_metrics, "per-second metrics CSV(s)");
  plot->add_option("--summary", plot_summary, "summary CSV");
  add_config_options(plot, plot_opts);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;  // usage error
  }

  try {
    if (est->parsed()) return cmd_estimate(est_opts, est_in, est_out, est_retro, est_delta_mu);
    if (fit->parsed()) return cmd_fit_dist(fit_opts, fit_corpus, fit_out);
    if (gen->parsed()) {
      if (gen_dist.empty() == gen_task.empty())
        throw abrlab::DataError("gen-traces: give exactly one of --dist or --task");
      return cmd_gen_traces(gen_opts, gen_dist, gen_task, gen_count, gen_length);
    }
    if (train->parsed()) return cmd_train(train_opts, train_dist, train_jobs);
    if (run->parsed()) return cmd_run(run_opts, run_trace, run_ckpt, run_controller, run_no_meta);
    if (eval->parsed())
      return cmd_eval(eval_opts, eval_traces, eval_controllers, eval_ckpt, eval_seeds, eval_jobs);
    if (plot->parsed()) return cmd_plot(plot_opts, plot_metrics, plot_summary);
  } catch (const abrlab::ParseError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 2;
  } catch (const abrlab::DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "runtime error: %s\n", e.what());
    return 3;
  }
  return 1;
}
