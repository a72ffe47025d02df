// merlin: bandwidth-estimation laboratory. One binary, subcommand per stage:
// generate traces, collect expert demonstrations, clone the expert, finetune
// online, benchmark, and run the feature/data studies. Every command writes a
// run manifest sufficient to reproduce its outputs bit for bit.
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "merlin/bc.hpp"
#include "merlin/config.hpp"
#include "merlin/demo.hpp"
#include "merlin/errors.hpp"
#include "merlin/eval.hpp"
#include "merlin/ppo.hpp"
#include "merlin/ukf.hpp"
#include "merlin/util.hpp"

namespace {

using merlin::ConfigError;
using merlin::ContractError;
using merlin::DataError;
using ordered_json = nlohmann::ordered_json;

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  size_t start = 0;
  while (start <= s.size()) {
    const size_t end = s.find(sep, start);
    if (end == std::string::npos) {
      out.push_back(s.substr(start));
      break;
    }
    out.push_back(s.substr(start, end - start));
    start = end + 1;
  }
  return out;
}

std::vector<merlin::ProfileTag> parse_profiles(const std::string& list) {
  std::vector<merlin::ProfileTag> tags;
  for (const std::string& name : split(list, ',')) {
    if (!name.empty()) tags.push_back(merlin::profile_from_string(name));
  }
  if (tags.empty()) throw ConfigError("profile list is empty");
  return tags;
}

merlin::FeatureMask parse_mask(const std::string& list) {
  if (list == "full" || list == "all") return merlin::full_feature_mask();
  merlin::FeatureMask mask{};
  for (const std::string& name : split(list, ',')) {
    if (name.empty()) continue;
    mask[static_cast<size_t>(merlin::feature_group_from_string(name))] = true;
  }
  bool any = false;
  for (bool b : mask) any = any || b;
  if (!any) throw ConfigError("feature mask is empty");
  return mask;
}

// Subset list: ';' between subsets, '+' within; the words full and singles
// expand to the full set and each group alone.
std::vector<merlin::FeatureMask> parse_subsets(const std::string& list) {
  std::vector<merlin::FeatureMask> subsets;
  for (const std::string& token : split(list, ';')) {
    if (token.empty()) continue;
    if (token == "full" || token == "all") {
      subsets.push_back(merlin::full_feature_mask());
    } else if (token == "singles") {
      for (size_t g = 0; g < merlin::kFeatureGroupCount; ++g) {
        merlin::FeatureMask m{};
        m[g] = true;
        subsets.push_back(m);
      }
    } else {
      merlin::FeatureMask m{};
      for (const std::string& name : split(token, '+')) {
        m[static_cast<size_t>(merlin::feature_group_from_string(name))] = true;
      }
      subsets.push_back(m);
    }
  }
  if (subsets.empty()) throw ConfigError("subset list is empty");
  return subsets;
}

// Trace sources: a path to a trace file, a directory of trace files, or a
// generator spec profile:N / stable:KBPS:N seeded from the command seed.
std::vector<merlin::NetworkTrace> build_traces(const std::string& specs, uint64_t seed,
                                               int64_t duration_ms) {
  std::vector<merlin::NetworkTrace> traces;
  uint64_t index = 0;
  for (const std::string& spec : split(specs, ',')) {
    if (spec.empty()) continue;
    if (std::filesystem::is_directory(spec)) {
      std::vector<std::string> files;
      for (const auto& entry : std::filesystem::directory_iterator(spec)) {
        const std::string p = entry.path().string();
        if (p.ends_with(".jsonl") || p.ends_with(".jsonl.gz")) files.push_back(p);
      }
      std::sort(files.begin(), files.end());
      if (files.empty()) throw DataError("no trace files in directory: " + spec);
      for (const std::string& f : files) traces.push_back(merlin::load_trace(f));
      continue;
    }
    if (std::filesystem::exists(spec)) {
      traces.push_back(merlin::load_trace(spec));
      continue;
    }
    const std::vector<std::string> parts = split(spec, ':');
    if (parts.size() == 3 && parts[0] == "stable") {
      const double kbps = merlin::parse_double(parts[1], "stable trace rate");
      const int64_t n = merlin::parse_int(parts[2], "stable trace count");
      for (int64_t i = 0; i < n; ++i) {
        traces.push_back(merlin::make_stable_trace(
            kbps, duration_ms, merlin::derive_seed(seed, 11000 + index++)));
      }
      continue;
    }
    if (parts.size() == 2) {
      const merlin::ProfileTag tag = merlin::profile_from_string(parts[0]);
      const int64_t n = merlin::parse_int(parts[1], "trace count");
      for (int64_t i = 0; i < n; ++i) {
        traces.push_back(merlin::generate_trace(
            tag, merlin::derive_seed(seed, 11000 + index++), duration_ms));
      }
      continue;
    }
    throw ConfigError("cannot interpret trace spec '" + spec +
                      "' (path, directory, profile:N, or stable:KBPS:N)");
  }
  if (traces.empty()) throw ContractError("trace list is empty");
  return traces;
}

merlin::PpoEnv parse_target(const std::string& target, int64_t duration_ms) {
  merlin::PpoEnv env;
  env.duration_ms = duration_ms;
  const std::vector<std::string> parts = split(target, ':');
  if (parts.size() == 2 && parts[0] == "stable") {
    env.stable_kbps = merlin::parse_double(parts[1], "stable target rate");
    return env;
  }
  env.profile_mix = parse_profiles(target);
  return env;
}

struct ManifestWriter {
  std::string command;
  std::vector<std::string> argv;  // normalized: resolved seed included
  uint64_t seed = 0;
  std::vector<std::string> outputs;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  void write(const std::string& path) const {
    ordered_json j;
    j["version"] = merlin::kVersion;
    j["command"] = command;
    j["argv"] = argv;
    j["seed"] = seed;
    j["outputs"] = outputs;
    j["wall_clock_s"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    merlin::write_text_file(path, j.dump(2) + "\n");
    std::printf("manifest: %s\n", path.c_str());
  }
};

// Flag state shared by the subcommands that take it.
struct Common {
  uint64_t seed = 0;
  bool seed_given = false;
  int jobs = 1;
  std::string config_file;
};

merlin::SystemConfig load_sys(const Common& c) {
  return c.config_file.empty() ? merlin::SystemConfig{}
                               : merlin::load_system_config(c.config_file);
}

uint64_t final_seed(const Common& c, uint64_t fallback = 1) {
  return merlin::resolve_seed(c.seed_given ? &c.seed : nullptr, fallback);
}

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--seed", c.seed, "global seed (falls back to MERLIN_SEED, then 1)")
      ->each([&c](const std::string&) { c.seed_given = true; });
  cmd->add_option("--jobs", c.jobs, "worker threads; 1 is the reference behavior");
  cmd->add_option("--config", c.config_file, "key=value file for reward/filter constants");
}

int dispatch(const std::vector<std::string>& args);

int cmd_rerun(const std::string& manifest_path) {
  const ordered_json j = ordered_json::parse(merlin::read_text_file(manifest_path));
  std::vector<std::string> argv;
  for (const auto& a : j.at("argv")) argv.push_back(a.get<std::string>());
  if (argv.empty()) throw DataError("manifest has an empty argv");
  std::printf("rerunning: %s\n", j.at("command").get<std::string>().c_str());
  return dispatch(argv);
}

int dispatch(const std::vector<std::string>& args) {
  CLI::App app{"bandwidth estimation laboratory"};
  app.require_subcommand(1);

  // ---- gen-traces ----
  auto* gen = app.add_subcommand("gen-traces", "generate network trace files");
  Common gen_c;
  int gen_n = 10;
  std::string gen_profiles = "low_bw,high_bw,fluctuating_bw,burst_loss,lte";
  double gen_duration_s = 60.0;
  std::string gen_out;
  add_common(gen, gen_c);
  gen->add_option("--n", gen_n, "traces to generate")->check(CLI::PositiveNumber);
  gen->add_option("--profiles", gen_profiles, "comma list of workload profiles");
  gen->add_option("--duration-s", gen_duration_s, "trace length in seconds");
  gen->add_option("--out-dir", gen_out, "output directory")->required();

  // ---- collect ----
  auto* collect = app.add_subcommand("collect", "record expert demonstration calls");
  Common col_c;
  int col_n = 10;
  std::string col_profiles = "low_bw,high_bw,fluctuating_bw,burst_loss,lte";
  double col_duration_s = 60.0;
  std::string col_out;
  add_common(collect, col_c);
  collect->add_option("--n", col_n, "number of calls")->check(CLI::PositiveNumber);
  collect->add_option("--profiles", col_profiles, "comma list of workload profiles");
  collect->add_option("--duration-s", col_duration_s, "call length in seconds");
  collect->add_option("--out", col_out, "demonstration file (.jsonl or .jsonl.gz)")
      ->required();

  // ---- train-bc ----
  auto* train = app.add_subcommand("train-bc", "clone the expert from demonstrations");
  Common tr_c;
  std::string tr_demos, tr_out, tr_curve, tr_from, tr_mask = "full", tr_arch = "lstm";
  int tr_epochs = 1000, tr_batch = 256, tr_hidden = 128, tr_fc = 64;
  double tr_lr = 0.001, tr_holdout = 0.1, tr_early = 0.0;
  add_common(train, tr_c);
  train->add_option("--demos", tr_demos, "demonstration file")->required();
  train->add_option("--out", tr_out, "trained parameter file")->required();
  train->add_option("--curve", tr_curve, "training curve CSV path");
  train->add_option("--from", tr_from, "resume from this parameter file");
  train->add_option("--epochs", tr_epochs, "training epochs");
  train->add_option("--batch", tr_batch, "trajectories per optimizer step");
  train->add_option("--lr", tr_lr, "Adam learning rate");
  train->add_option("--holdout", tr_holdout, "holdout fraction");
  train->add_option("--early-stop", tr_early, "stop once holdout MSE is below this");
  train->add_option("--mask", tr_mask, "feature groups to keep (comma list or full)");
  train->add_option("--arch", tr_arch, "network architecture: lstm or mlp");
  train->add_option("--hidden", tr_hidden, "recurrent width");
  train->add_option("--fc-dim", tr_fc, "decode head width");

  // ---- finetune ----
  auto* ft = app.add_subcommand("finetune", "online personalization against a target link");
  Common ft_c;
  std::string ft_policy, ft_target = "stable:1000", ft_out, ft_curve;
  int ft_episodes = 75;
  double ft_kl = 0.3, ft_duration_s = 60.0, ft_lr = 3e-4, ft_kl_target = 0.01;
  bool ft_scratch = false;
  std::string ft_arch = "lstm";
  add_common(ft, ft_c);
  ft->add_option("--policy", ft_policy, "pretrained parameter file");
  ft->add_option("--target", ft_target,
                 "training link: stable:KBPS or comma list of profiles");
  ft->add_option("--episodes", ft_episodes, "training episodes");
  ft->add_option("--kl", ft_kl, "initial KL penalty coefficient");
  ft->add_option("--kl-target", ft_kl_target, "adaptive KL target");
  ft->add_option("--lr", ft_lr, "policy learning rate");
  ft->add_option("--duration-s", ft_duration_s, "episode length in seconds");
  ft->add_flag("--scratch", ft_scratch, "ignore --policy and train from random init");
  ft->add_option("--arch", ft_arch, "architecture when training from scratch");
  ft->add_option("--out", ft_out, "output parameter file")->required();
  ft->add_option("--curve", ft_curve, "reward curve CSV path");

  // ---- eval ----
  auto* ev = app.add_subcommand("eval", "closed-loop benchmark of estimators");
  Common ev_c;
  std::string ev_estimators, ev_traces, ev_report = "report";
  double ev_duration_s = 60.0;
  bool ev_co_expert = false;
  add_common(ev, ev_c);
  ev->add_option("--estimators", ev_estimators,
                 "comma list: ukf, overshoot, undershoot, constant:K, policy:PATH")
      ->required();
  ev->add_option("--traces", ev_traces,
                 "comma list of files, directories, profile:N, stable:KBPS:N")
      ->required();
  ev->add_option("--duration-s", ev_duration_s, "generated trace length in seconds");
  ev->add_option("--report-dir", ev_report, "report output directory");
  ev->add_flag("--co-expert", ev_co_expert,
               "co-run the expert filter for estimate-error columns (automatic for "
               "policy estimators)");

  // ---- ablate ----
  auto* ab = app.add_subcommand("ablate", "retrain per feature subset and compare");
  Common ab_c;
  std::string ab_demos, ab_subsets = "full;singles;recv_rate+media_type";
  std::string ab_report = "ablation";
  int ab_epochs = 100, ab_batch = 256;
  double ab_lr = 0.001;
  std::string ab_arch = "lstm";
  add_common(ab, ab_c);
  ab->add_option("--demos", ab_demos, "demonstration file")->required();
  ab->add_option("--subsets", ab_subsets,
                 "';' separated subsets; '+' joins groups; full and singles expand");
  ab->add_option("--epochs", ab_epochs, "epochs per subset");
  ab->add_option("--batch", ab_batch, "batch size");
  ab->add_option("--lr", ab_lr, "learning rate");
  ab->add_option("--arch", ab_arch, "architecture");
  ab->add_option("--report-dir", ab_report, "output directory");

  // ---- scaling ----
  auto* sc = app.add_subcommand("scaling", "holdout MSE versus training-set size");
  Common sc_c;
  std::string sc_demos, sc_sizes = "100,300,1000", sc_report = "scaling";
  int sc_epochs = 100, sc_batch = 256;
  double sc_lr = 0.001;
  std::string sc_arch = "lstm";
  add_common(sc, sc_c);
  sc->add_option("--demos", sc_demos, "demonstration file")->required();
  sc->add_option("--sizes", sc_sizes, "ascending comma list of training sizes");
  sc->add_option("--epochs", sc_epochs, "epochs per size");
  sc->add_option("--batch", sc_batch, "batch size");
  sc->add_option("--lr", sc_lr, "learning rate");
  sc->add_option("--arch", sc_arch, "architecture");
  sc->add_option("--report-dir", sc_report, "output directory");

  // ---- rerun ----
  auto* rr = app.add_subcommand("rerun", "re-execute a command from its manifest");
  std::string rr_manifest;
  rr->add_option("--manifest", rr_manifest, "manifest JSON path")->required();

  std::vector<const char*> argv_c;
  argv_c.push_back("merlin");
  for (const std::string& a : args) argv_c.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv_c.size()), argv_c.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  if (rr->parsed()) return cmd_rerun(rr_manifest);

  if (gen->parsed()) {
    const uint64_t seed = final_seed(gen_c);
    const auto tags = parse_profiles(gen_profiles);
    const int64_t duration_ms = static_cast<int64_t>(gen_duration_s * 1000.0);
    std::filesystem::create_directories(gen_out);
    ManifestWriter mw;
    mw.command = "gen-traces";
    mw.seed = seed;
    for (int i = 0; i < gen_n; ++i) {
      const merlin::NetworkTrace trace =
          merlin::generate_trace(tags[static_cast<size_t>(i) % tags.size()],
                                 merlin::derive_seed(seed, 11000 + static_cast<uint64_t>(i)),
                                 duration_ms);
      char name[64];
      std::snprintf(name, sizeof(name), "trace_%04d.jsonl", i);
      const std::string path = gen_out + "/" + name;
      merlin::save_trace(trace, path);
      mw.outputs.push_back(path);
    }
    mw.argv = {"gen-traces",          "--n",       std::to_string(gen_n),
               "--profiles",          gen_profiles, "--duration-s",
               merlin::format_double(gen_duration_s), "--out-dir", gen_out,
               "--seed",              std::to_string(seed)};
    mw.write(gen_out + "/manifest.json");
    return 0;
  }

  if (collect->parsed()) {
    const uint64_t seed = final_seed(col_c);
    merlin::CollectConfig cc;
    cc.n = col_n;
    cc.profile_mix = parse_profiles(col_profiles);
    cc.seed = seed;
    cc.duration_ms = static_cast<int64_t>(col_duration_s * 1000.0);
    cc.jobs = col_c.jobs;
    ManifestWriter mw;
    mw.command = "collect";
    mw.seed = seed;
    const merlin::DemoSet set = merlin::collect(cc);
    merlin::save_demos(set, col_out);
    std::printf("collected %d calls (%zu steps total) -> %s\n", cc.n,
                [&] {
                  size_t total = 0;
                  for (const auto& t : set.trajectories) total += t.steps.size();
                  return total;
                }(),
                col_out.c_str());
    mw.outputs.push_back(col_out);
    mw.argv = {"collect",      "--n",        std::to_string(col_n),
               "--profiles",   col_profiles, "--duration-s",
               merlin::format_double(col_duration_s), "--out", col_out,
               "--seed",       std::to_string(seed),  "--jobs",
               std::to_string(col_c.jobs)};
    mw.write(col_out + ".manifest.json");
    return 0;
  }

  if (train->parsed()) {
    const uint64_t seed = final_seed(tr_c);
    merlin::BcConfig cfg;
    cfg.shape.arch = merlin::arch_from_string(tr_arch);
    cfg.shape.hidden = tr_hidden;
    cfg.shape.fc_dim = tr_fc;
    cfg.epochs = tr_epochs;
    cfg.batch_size = tr_batch;
    cfg.lr = tr_lr;
    cfg.holdout_fraction = tr_holdout;
    cfg.early_stop_mse = tr_early;
    cfg.mask = parse_mask(tr_mask);
    cfg.seed = seed;
    cfg.jobs = tr_c.jobs;
    cfg.verbose = true;
    const merlin::DemoSet demos = merlin::load_demos(tr_demos);
    std::unique_ptr<merlin::PolicyParams> from;
    if (!tr_from.empty()) {
      from = std::make_unique<merlin::PolicyParams>(merlin::load_params(tr_from));
      cfg.shape = from->shape();
    }
    ManifestWriter mw;
    mw.command = "train-bc";
    mw.seed = seed;
    const merlin::BcResult result = merlin::train_bc(demos, cfg, from.get());
    merlin::save_params(result.params, tr_out);
    std::printf("best holdout MSE %s at epoch %d -> %s\n",
                merlin::format_double(result.best_holdout_mse).c_str(),
                result.best_epoch, tr_out.c_str());
    mw.outputs.push_back(tr_out);
    if (!tr_curve.empty()) {
      merlin::save_training_curve(result.curve, tr_curve);
      mw.outputs.push_back(tr_curve);
    }
    mw.argv = {"train-bc", "--demos", tr_demos, "--out", tr_out,
               "--epochs", std::to_string(tr_epochs), "--batch", std::to_string(tr_batch),
               "--lr", merlin::format_double(tr_lr), "--holdout",
               merlin::format_double(tr_holdout), "--early-stop",
               merlin::format_double(tr_early), "--mask", tr_mask, "--arch", tr_arch,
               "--hidden", std::to_string(tr_hidden), "--fc-dim", std::to_string(tr_fc),
               "--seed", std::to_string(seed), "--jobs", std::to_string(tr_c.jobs)};
    if (!tr_from.empty()) {
      mw.argv.push_back("--from");
      mw.argv.push_back(tr_from);
    }
    if (!tr_curve.empty()) {
      mw.argv.push_back("--curve");
      mw.argv.push_back(tr_curve);
    }
    mw.write(tr_out + ".manifest.json");
    return 0;
  }

  if (ft->parsed()) {
    const uint64_t seed = final_seed(ft_c);
    if (ft_kl != 0.1 && ft_kl != 0.3 && ft_kl != 0.5 && ft_kl != 0.7 && ft_kl != 0.9) {
      std::fprintf(stderr,
                   "warning: --kl %g is outside the studied set {0.1,0.3,0.5,0.7,0.9}\n",
                   ft_kl);
    }
    const merlin::SystemConfig sys = load_sys(ft_c);
    merlin::PpoConfig cfg;
    cfg.initial_kl_penalty = ft_kl;
    cfg.kl_target = ft_kl_target;
    cfg.lr = ft_lr;
    cfg.total_episodes = ft_episodes;
    cfg.seed = seed;
    cfg.jobs = ft_c.jobs;
    cfg.reward_weights = sys.reward;
    cfg.verbose = true;
    const merlin::PpoEnv env = parse_target(ft_target, static_cast<int64_t>(ft_duration_s * 1000.0));
    ManifestWriter mw;
    mw.command = "finetune";
    mw.seed = seed;
    merlin::PpoResult result = [&] {
      if (ft_scratch) {
        merlin::PolicyShape shape;
        shape.arch = merlin::arch_from_string(ft_arch);
        return merlin::train_from_scratch(shape, env, cfg);
      }
      if (ft_policy.empty()) {
        throw ConfigError("finetune needs --policy (or --scratch)");
      }
      return merlin::finetune(merlin::load_params(ft_policy), env, cfg);
    }();
    merlin::save_params(result.params, ft_out);
    mw.outputs.push_back(ft_out);
    if (!ft_curve.empty()) {
      merlin::save_reward_curve(result.curve, ft_curve);
      mw.outputs.push_back(ft_curve);
    }
    if (!result.curve.points.empty()) {
      std::printf("final episode QoE %s -> %s\n",
                  merlin::format_double(result.curve.points.back().mean_qoe).c_str(),
                  ft_out.c_str());
    } else {
      std::printf("no episodes requested; parameters copied to %s\n", ft_out.c_str());
    }
    mw.argv = {"finetune", "--target", ft_target, "--episodes",
               std::to_string(ft_episodes), "--kl", merlin::format_double(ft_kl),
               "--kl-target", merlin::format_double(ft_kl_target), "--lr",
               merlin::format_double(ft_lr), "--duration-s",
               merlin::format_double(ft_duration_s), "--out", ft_out, "--seed",
               std::to_string(seed), "--jobs", std::to_string(ft_c.jobs)};
    if (ft_scratch) {
      mw.argv.push_back("--scratch");
      mw.argv.push_back("--arch");
      mw.argv.push_back(ft_arch);
    } else {
      mw.argv.push_back("--policy");
      mw.argv.push_back(ft_policy);
    }
    if (!ft_curve.empty()) {
      mw.argv.push_back("--curve");
      mw.argv.push_back(ft_curve);
    }
    if (!ft_c.config_file.empty()) {
      mw.argv.push_back("--config");
      mw.argv.push_back(ft_c.config_file);
    }
    mw.write(ft_out + ".manifest.json");
    return 0;
  }

  if (ev->parsed()) {
    const uint64_t seed = final_seed(ev_c);
    merlin::BenchmarkConfig cfg;
    cfg.sys = load_sys(ev_c);
    for (const std::string& spec : split(ev_estimators, ',')) {
      if (!spec.empty()) cfg.estimator_specs.push_back(spec);
    }
    cfg.traces = build_traces(ev_traces, seed, static_cast<int64_t>(ev_duration_s * 1000.0));
    cfg.seed = seed;
    cfg.jobs = ev_c.jobs;
    cfg.co_run_expert = ev_co_expert;
    for (const std::string& spec : cfg.estimator_specs) {
      if (spec.rfind("policy:", 0) == 0) cfg.co_run_expert = true;
    }
    ManifestWriter mw;
    mw.command = "eval";
    mw.seed = seed;
    const merlin::ComparisonReport report = merlin::run_benchmark(cfg);
    merlin::save_report(report, ev_report);
    for (const merlin::EstimatorSummary& s : report.summaries) {
      std::printf("%-24s episodes %3d faults %d qoe %.4f rate %.0f kbps delay %.1f ms "
                  "loss %.4f\n",
                  s.name.c_str(), s.episodes, s.faults, s.metrics.mean_qoe.mean,
                  s.metrics.recv_rate_kbps.mean, s.metrics.avg_delay_ms.mean,
                  s.metrics.loss_rate.mean);
    }
    mw.outputs.push_back(ev_report + "/episodes.csv");
    mw.outputs.push_back(ev_report + "/summary.json");
    mw.argv = {"eval", "--estimators", ev_estimators, "--traces", ev_traces,
               "--duration-s", merlin::format_double(ev_duration_s), "--report-dir",
               ev_report, "--seed", std::to_string(seed), "--jobs",
               std::to_string(ev_c.jobs)};
    if (cfg.co_run_expert) mw.argv.push_back("--co-expert");
    if (!ev_c.config_file.empty()) {
      mw.argv.push_back("--config");
      mw.argv.push_back(ev_c.config_file);
    }
    mw.write(ev_report + "/manifest.json");
    return 0;
  }

  if (ab->parsed()) {
    const uint64_t seed = final_seed(ab_c);
    merlin::BcConfig cfg;
    cfg.shape.arch = merlin::arch_from_string(ab_arch);
    cfg.epochs = ab_epochs;
    cfg.batch_size = ab_batch;
    cfg.lr = ab_lr;
    cfg.seed = seed;
    cfg.jobs = ab_c.jobs;
    const merlin::DemoSet demos = merlin::load_demos(ab_demos);
    const std::vector<merlin::FeatureMask> subsets = parse_subsets(ab_subsets);
    ManifestWriter mw;
    mw.command = "ablate";
    mw.seed = seed;
    const std::vector<merlin::AblationResult> results =
        merlin::ablate_features(demos, subsets, cfg);
    std::filesystem::create_directories(ab_report);
    merlin::TextWriter summary(ab_report + "/ablation.csv");
    summary.write_line("subset,median_mse,mean_mse,n");
    for (const merlin::AblationResult& r : results) {
      std::string safe = r.name;
      for (char& c : safe) {
        if (c == '+') c = '_';
      }
      const std::string cdf_path = ab_report + "/cdf_" + safe + ".csv";
      merlin::save_cdf(r.per_trajectory_mse, cdf_path);
      mw.outputs.push_back(cdf_path);
      summary.write_line(r.name + "," + merlin::format_double(r.median_mse) + "," +
                         merlin::format_double(r.mean_mse) + "," +
                         std::to_string(r.per_trajectory_mse.size()));
      std::printf("%-40s median MSE %s\n", r.name.c_str(),
                  merlin::format_double(r.median_mse).c_str());
    }
    summary.close();
    mw.outputs.push_back(ab_report + "/ablation.csv");
    mw.argv = {"ablate", "--demos", ab_demos, "--subsets", ab_subsets, "--epochs",
               std::to_string(ab_epochs), "--batch", std::to_string(ab_batch), "--lr",
               merlin::format_double(ab_lr), "--arch", ab_arch, "--report-dir", ab_report,
               "--seed", std::to_string(seed), "--jobs", std::to_string(ab_c.jobs)};
    mw.write(ab_report + "/manifest.json");
    return 0;
  }

  if (sc->parsed()) {
    const uint64_t seed = final_seed(sc_c);
    merlin::BcConfig cfg;
    cfg.shape.arch = merlin::arch_from_string(sc_arch);
    cfg.epochs = sc_epochs;
    cfg.batch_size = sc_batch;
    cfg.lr = sc_lr;
    cfg.seed = seed;
    cfg.jobs = sc_c.jobs;
    std::vector<int> sizes;
    for (const std::string& s : split(sc_sizes, ',')) {
      if (!s.empty()) sizes.push_back(static_cast<int>(merlin::parse_int(s, "size")));
    }
    const merlin::DemoSet demos = merlin::load_demos(sc_demos);
    ManifestWriter mw;
    mw.command = "scaling";
    mw.seed = seed;
    const std::vector<merlin::ScalingPoint> points =
        merlin::data_scaling_study(demos, sizes, cfg);
    std::filesystem::create_directories(sc_report);
    merlin::TextWriter out(sc_report + "/scaling.csv");
    out.write_line("size,holdout_mse");
    for (const merlin::ScalingPoint& p : points) {
      out.write_line(std::to_string(p.size) + "," + merlin::format_double(p.holdout_mse));
      std::printf("size %6d holdout MSE %s\n", p.size,
                  merlin::format_double(p.holdout_mse).c_str());
    }
    out.close();
    mw.outputs.push_back(sc_report + "/scaling.csv");
    mw.argv = {"scaling", "--demos", sc_demos, "--sizes", sc_sizes, "--epochs",
               std::to_string(sc_epochs), "--batch", std::to_string(sc_batch), "--lr",
               merlin::format_double(sc_lr), "--arch", sc_arch, "--report-dir", sc_report,
               "--seed", std::to_string(seed), "--jobs", std::to_string(sc_c.jobs)};
    mw.write(sc_report + "/manifest.json");
    return 0;
  }

  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    return dispatch(args);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const DataError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const ContractError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const merlin::NumericalError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  } catch (const merlin::EstimatorFault& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "unexpected error: %s\n", e.what());
    return 1;
  }
}
