#include "merlin/eval.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include <json.hpp>

#include "merlin/errors.hpp"
#include "merlin/parallel.hpp"
#include "merlin/stats.hpp"
#include "merlin/ukf.hpp"
#include "merlin/util.hpp"

namespace merlin {
namespace {

using ordered_json = nlohmann::ordered_json;

constexpr uint64_t kMediaStream = 9000;
constexpr uint64_t kEpisodeStream = 10000;

class ConstantEstimator final : public Estimator {
 public:
  explicit ConstantEstimator(double kbps) : kbps_(kbps) {}
  void reset(uint64_t) override {}
  double estimate_kbps(const Observation&, const StepContext&) override { return kbps_; }
  std::unique_ptr<Estimator> clone() const override {
    return std::make_unique<ConstantEstimator>(kbps_);
  }

 private:
  double kbps_;
};

double welch_p_or_degenerate(std::span<const double> a, std::span<const double> b,
                             bool* degenerate) {
  if (a.size() < 2 || b.size() < 2) {
    *degenerate = true;
    return mean_of(a.empty() ? b : a) == mean_of(b.empty() ? a : b) ? 1.0 : 0.0;
  }
  if (sample_variance(a) + sample_variance(b) == 0.0) {
    *degenerate = true;
    return mean_of(a) == mean_of(b) ? 1.0 : 0.0;
  }
  return welch_t_test(a, b).p;
}

MeanCi ci_of(const std::vector<double>& xs) {
  if (xs.empty()) return {};
  return mean_ci(xs);
}

// Deterministic shared split used by the ablation and scaling studies.
void split_demos(const DemoSet& demos, double holdout_fraction, uint64_t seed,
                 std::vector<int>& train_ids, std::vector<int>& hold_ids) {
  const int n = static_cast<int>(demos.trajectories.size());
  if (n < 2) throw ContractError("need at least two trajectories to split");
  std::vector<int> ids(static_cast<size_t>(n));
  std::iota(ids.begin(), ids.end(), 0);
  Rng rng = Rng(seed).fork(4000);
  rng.shuffle(ids);
  int n_hold = static_cast<int>(std::floor(holdout_fraction * n));
  n_hold = std::clamp(n_hold, 1, n - 1);
  train_ids.assign(ids.begin(), ids.end() - n_hold);
  hold_ids.assign(ids.end() - n_hold, ids.end());
}

DemoSet subset_demos(const DemoSet& demos, std::span<const int> ids) {
  DemoSet out;
  out.manifest = demos.manifest;
  out.manifest.entries.clear();
  for (int id : ids) {
    if (id < static_cast<int>(demos.manifest.entries.size())) {
      out.manifest.entries.push_back(demos.manifest.entries[static_cast<size_t>(id)]);
    }
    out.trajectories.push_back(demos.trajectories[static_cast<size_t>(id)]);
  }
  return out;
}

}  // namespace

std::unique_ptr<Estimator> make_estimator(const std::string& spec,
                                          const SystemConfig& sys) {
  if (spec == "ukf" || spec == "tracking_ukf") {
    return std::make_unique<UkfEstimator>(sys.ukf);
  }
  if (spec == "overshoot") return std::make_unique<ConstantEstimator>(2000.0);
  if (spec == "undershoot") return std::make_unique<ConstantEstimator>(300.0);
  if (spec.rfind("constant:", 0) == 0) {
    try {
      return std::make_unique<ConstantEstimator>(
          parse_double(spec.substr(9), "constant estimator rate"));
    } catch (const DataError&) {
      throw ConfigError("estimator spec has a malformed rate: '" + spec + "'");
    }
  }
  if (spec.rfind("policy:", 0) == 0) {
    auto params = std::make_shared<PolicyParams>(load_params(spec.substr(7)));
    return std::make_unique<PolicyEstimator>(std::move(params));
  }
  throw ConfigError("unknown estimator spec '" + spec +
                    "' (valid: ukf, tracking_ukf, overshoot, undershoot, "
                    "constant:K, policy:PATH)");
}

ComparisonReport run_benchmark(const BenchmarkConfig& cfg) {
  if (cfg.estimator_specs.empty()) throw ContractError("no estimators given");
  if (cfg.traces.empty()) throw ContractError("no traces given");

  const int n_est = static_cast<int>(cfg.estimator_specs.size());
  const int n_ep = static_cast<int>(cfg.traces.size());

  // Prototype instances; each episode gets a fresh clone.
  std::vector<std::unique_ptr<Estimator>> protos;
  for (const std::string& spec : cfg.estimator_specs) {
    protos.push_back(make_estimator(spec, cfg.sys));
  }
  const UkfEstimator shadow_proto(cfg.sys.ukf);

  ComparisonReport report;
  report.episodes.resize(static_cast<size_t>(n_est) * n_ep);
  parallel_for(n_est * n_ep, cfg.jobs, [&](int idx) {
    const int e = idx / n_ep;
    const int i = idx % n_ep;
    const NetworkTrace& trace = cfg.traces[static_cast<size_t>(i)];
    const MediaConfig media =
        sample_call_config(derive_seed(cfg.seed, kMediaStream + static_cast<uint64_t>(i)));
    EpisodeRecord rec;
    rec.estimator = cfg.estimator_specs[static_cast<size_t>(e)];
    rec.episode = i;
    rec.profile = trace.profile;
    rec.trace_seed = trace.seed;
    try {
      const std::unique_ptr<Estimator> est = protos[static_cast<size_t>(e)]->clone();
      std::unique_ptr<Estimator> shadow;
      EpisodeOptions opts;
      opts.mask = cfg.mask;
      opts.reward_weights = cfg.sys.reward;
      if (cfg.co_run_expert) {
        shadow = shadow_proto.clone();
        opts.shadow = shadow.get();
      }
      rec.metrics = run_episode(trace, media, *est,
                                derive_seed(cfg.seed, kEpisodeStream + static_cast<uint64_t>(i)),
                                opts)
                        .second;
    } catch (const EstimatorFault& ex) {
      rec.fault = true;
      rec.fault_message = ex.what();
    } catch (const NumericalError& ex) {
      rec.fault = true;
      rec.fault_message = ex.what();
    }
    report.episodes[static_cast<size_t>(idx)] = std::move(rec);
  });

  // Summaries in estimator order.
  for (int e = 0; e < n_est; ++e) {
    EstimatorSummary s;
    s.name = cfg.estimator_specs[static_cast<size_t>(e)];
    std::vector<double> rate, loss, delay, qoe, est_rate, rel_err;
    for (int i = 0; i < n_ep; ++i) {
      const EpisodeRecord& rec = report.episodes[static_cast<size_t>(e) * n_ep + i];
      if (rec.fault) {
        ++s.faults;
        continue;
      }
      ++s.episodes;
      rate.push_back(rec.metrics.recv_rate_kbps);
      loss.push_back(rec.metrics.loss_rate);
      delay.push_back(rec.metrics.avg_delay_ms);
      qoe.push_back(rec.metrics.mean_qoe);
      est_rate.push_back(rec.metrics.mean_estimate_kbps);
      if (rec.metrics.has_expert) rel_err.push_back(rec.metrics.rel_err_vs_expert);
    }
    s.metrics.recv_rate_kbps = ci_of(rate);
    s.metrics.loss_rate = ci_of(loss);
    s.metrics.avg_delay_ms = ci_of(delay);
    s.metrics.mean_qoe = ci_of(qoe);
    s.metrics.mean_estimate_kbps = ci_of(est_rate);
    if (!rel_err.empty()) s.metrics.mean_rel_err_vs_expert = mean_of(rel_err);
    report.summaries.push_back(std::move(s));
  }

  for (int a = 0; a < n_est; ++a) {
    for (int b = a + 1; b < n_est; ++b) {
      PairwiseTest t;
      t.a = cfg.estimator_specs[static_cast<size_t>(a)];
      t.b = cfg.estimator_specs[static_cast<size_t>(b)];
      const auto collect = [&](int e, const char* metric) {
        return metric_samples(report, cfg.estimator_specs[static_cast<size_t>(e)], metric);
      };
      bool degenerate = false;
      t.p_qoe = welch_p_or_degenerate(collect(a, "mean_qoe"), collect(b, "mean_qoe"),
                                      &degenerate);
      t.p_delay = welch_p_or_degenerate(collect(a, "avg_delay_ms"),
                                        collect(b, "avg_delay_ms"), &degenerate);
      t.p_loss = welch_p_or_degenerate(collect(a, "loss_rate"), collect(b, "loss_rate"),
                                       &degenerate);
      t.p_rate = welch_p_or_degenerate(collect(a, "recv_rate_kbps"),
                                       collect(b, "recv_rate_kbps"), &degenerate);
      t.degenerate = degenerate;
      report.tests.push_back(std::move(t));
    }
  }
  return report;
}

std::vector<double> metric_samples(const ComparisonReport& report,
                                   const std::string& estimator,
                                   const std::string& metric) {
  std::vector<double> out;
  for (const EpisodeRecord& rec : report.episodes) {
    if (rec.estimator != estimator || rec.fault) continue;
    if (metric == "mean_qoe") out.push_back(rec.metrics.mean_qoe);
    else if (metric == "avg_delay_ms") out.push_back(rec.metrics.avg_delay_ms);
    else if (metric == "loss_rate") out.push_back(rec.metrics.loss_rate);
    else if (metric == "recv_rate_kbps") out.push_back(rec.metrics.recv_rate_kbps);
    else if (metric == "mean_estimate_kbps") out.push_back(rec.metrics.mean_estimate_kbps);
    else if (metric == "rel_err_vs_expert") out.push_back(rec.metrics.rel_err_vs_expert);
    else throw ConfigError("unknown metric: " + metric);
  }
  return out;
}

void save_report(const ComparisonReport& report, const std::string& dir) {
  std::filesystem::create_directories(dir);
  {
    TextWriter out(dir + "/episodes.csv");
    out.write_line(
        "estimator,episode,profile,trace_seed,steps,recv_rate_kbps,loss_rate,"
        "avg_delay_ms,mean_qoe,mean_estimate_kbps,mse_vs_expert,rel_err_vs_expert,fault");
    for (const EpisodeRecord& r : report.episodes) {
      out.write_line(r.estimator + "," + std::to_string(r.episode) + "," +
                     to_string(r.profile) + "," + std::to_string(r.trace_seed) + "," +
                     std::to_string(r.metrics.steps) + "," +
                     format_double(r.metrics.recv_rate_kbps) + "," +
                     format_double(r.metrics.loss_rate) + "," +
                     format_double(r.metrics.avg_delay_ms) + "," +
                     format_double(r.metrics.mean_qoe) + "," +
                     format_double(r.metrics.mean_estimate_kbps) + "," +
                     format_double(r.metrics.mse_vs_expert) + "," +
                     format_double(r.metrics.rel_err_vs_expert) + "," +
                     (r.fault ? "1" : "0"));
    }
    out.close();
  }
  ordered_json summary;
  summary["estimators"] = ordered_json::array();
  const auto ci_json = [](const MeanCi& ci) {
    ordered_json j;
    j["mean"] = ci.mean;
    j["lo"] = ci.lo;
    j["hi"] = ci.hi;
    j["n"] = ci.n;
    return j;
  };
  for (const EstimatorSummary& s : report.summaries) {
    ordered_json j;
    j["name"] = s.name;
    j["episodes"] = s.episodes;
    j["faults"] = s.faults;
    j["recv_rate_kbps"] = ci_json(s.metrics.recv_rate_kbps);
    j["loss_rate"] = ci_json(s.metrics.loss_rate);
    j["avg_delay_ms"] = ci_json(s.metrics.avg_delay_ms);
    j["mean_qoe"] = ci_json(s.metrics.mean_qoe);
    j["mean_estimate_kbps"] = ci_json(s.metrics.mean_estimate_kbps);
    j["mean_rel_err_vs_expert"] = s.metrics.mean_rel_err_vs_expert;
    summary["estimators"].push_back(j);
  }
  summary["welch_tests"] = ordered_json::array();
  for (const PairwiseTest& t : report.tests) {
    ordered_json j;
    j["a"] = t.a;
    j["b"] = t.b;
    j["p_qoe"] = t.p_qoe;
    j["p_delay"] = t.p_delay;
    j["p_loss"] = t.p_loss;
    j["p_rate"] = t.p_rate;
    j["degenerate"] = t.degenerate;
    summary["welch_tests"].push_back(j);
  }
  write_text_file(dir + "/summary.json", summary.dump(2) + "\n");
}

std::string mask_name(const FeatureMask& mask) {
  std::string name;
  for (size_t g = 0; g < mask.size(); ++g) {
    if (!mask[g]) continue;
    if (!name.empty()) name += "+";
    name += to_string(static_cast<FeatureGroup>(g));
  }
  return name.empty() ? "none" : name;
}

std::vector<AblationResult> ablate_features(const DemoSet& demos,
                                            const std::vector<FeatureMask>& subsets,
                                            const BcConfig& base) {
  if (subsets.empty()) throw ContractError("no feature subsets given");
  std::vector<int> train_ids, hold_ids;
  split_demos(demos, base.holdout_fraction > 0.0 ? base.holdout_fraction : 0.1,
              base.seed, train_ids, hold_ids);
  const DemoSet train_set = subset_demos(demos, train_ids);
  const DemoSet hold_set = subset_demos(demos, hold_ids);

  std::vector<AblationResult> results;
  for (const FeatureMask& mask : subsets) {
    BcConfig cfg = base;
    cfg.mask = mask;
    cfg.holdout_fraction = 0.0;  // the study holds out its own shared split
    const BcResult trained = train_bc(train_set, cfg);
    AblationResult row;
    row.name = mask_name(mask);
    row.mask = mask;
    row.per_trajectory_mse = evaluate_mse(trained.params, hold_set, mask, cfg.jobs);
    row.median_mse = median_of(row.per_trajectory_mse);
    row.mean_mse = mean_of(row.per_trajectory_mse);
    results.push_back(std::move(row));
  }
  return results;
}

std::vector<ScalingPoint> data_scaling_study(const DemoSet& demos,
                                             std::span<const int> sizes,
                                             const BcConfig& base) {
  if (sizes.empty()) throw ContractError("no sizes given");
  for (size_t i = 0; i < sizes.size(); ++i) {
    if (sizes[i] < 1) throw ContractError("sizes must be positive");
    if (i > 0 && sizes[i] <= sizes[i - 1]) {
      throw ContractError("sizes must be strictly ascending");
    }
  }
  std::vector<int> train_ids, hold_ids;
  split_demos(demos, base.holdout_fraction > 0.0 ? base.holdout_fraction : 0.1,
              base.seed, train_ids, hold_ids);
  if (sizes.back() > static_cast<int>(train_ids.size())) {
    throw ContractError("largest size exceeds the training pool (" +
                        std::to_string(train_ids.size()) + ")");
  }
  const DemoSet hold_set = subset_demos(demos, hold_ids);

  std::vector<ScalingPoint> points;
  for (int size : sizes) {
    const std::span<const int> ids(train_ids.data(), static_cast<size_t>(size));
    const DemoSet train_set = subset_demos(demos, ids);
    BcConfig cfg = base;
    cfg.holdout_fraction = 0.0;
    const BcResult trained = train_bc(train_set, cfg);
    const std::vector<double> mses =
        evaluate_mse(trained.params, hold_set, cfg.mask, cfg.jobs);
    points.push_back({size, mean_of(mses)});
  }
  return points;
}

}  // namespace merlin
