#pragma once

// Per-scenario evaluation of a synthesizer over held-out patients and the
// report aggregation (scenario mean +- std across patients, tier means,
// grand mean).

#include <torch/torch.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmgan/cache.hpp"
#include "mmgan/conditioning.hpp"
#include "mmgan/error.hpp"
#include "mmgan/metrics.hpp"
#include "mmgan/networks.hpp"
#include "mmgan/scenario.hpp"
#include "mmgan/stats.hpp"
#include "mmgan/trainer.hpp"

namespace mmgan {

struct EvalOptions {
  bool renormalize = true;
  double i_max = 1.0;
  // Only this channel is scored when set (many-to-one evaluation).
  std::optional<int> only_channel;
};

struct MetricRow {
  std::string scenario;
  int tier = 0;
  std::string patient;
  std::string sequence;
  ImageMetrics metrics;
};

struct MetricSummary {
  ImageMetrics mean;
  ImageMetrics std;  // population std
  std::size_t n = 0;
};

struct ScenarioSummary {
  std::string scenario;
  int tier = 0;
  MetricSummary summary;                          // across patients
  std::map<std::string, ImageMetrics> per_patient;  // mean over the scenario's missing sequences
};

struct TierSummary {
  int tier = 0;
  MetricSummary summary;  // across the member scenario means
};

struct MetricsReport {
  std::vector<std::string> channels;
  std::vector<MetricRow> rows;
  std::vector<ScenarioSummary> scenarios;
  std::vector<TierSummary> tiers;
  MetricSummary grand;  // across scenario means

  const ScenarioSummary& scenario(const std::string& s) const {
    for (const auto& r : scenarios) {
      if (r.scenario == s) return r;
    }
    throw InvalidScenario("scenario '" + s + "' not in report");
  }
  const TierSummary& tier(int t) const {
    for (const auto& r : tiers) {
      if (r.tier == t) return r;
    }
    throw InvalidScenario("tier " + std::to_string(t) + " not in report");
  }
};

inline MetricSummary summarize(std::span<const ImageMetrics> xs) {
  MetricSummary s;
  s.n = xs.size();
  if (xs.empty()) return s;
  const double n = static_cast<double>(xs.size());
  for (const auto& m : xs) {
    s.mean.mse += m.mse;
    s.mean.psnr += m.psnr;
    s.mean.ssim += m.ssim;
  }
  s.mean.mse /= n;
  s.mean.psnr /= n;
  s.mean.ssim /= n;
  for (const auto& m : xs) {
    s.std.mse += (m.mse - s.mean.mse) * (m.mse - s.mean.mse);
    s.std.psnr += (m.psnr - s.mean.psnr) * (m.psnr - s.mean.psnr);
    s.std.ssim += (m.ssim - s.mean.ssim) * (m.ssim - s.mean.ssim);
  }
  s.std.mse = std::sqrt(s.std.mse / n);
  s.std.psnr = std::sqrt(s.std.psnr / n);
  s.std.ssim = std::sqrt(s.std.ssim / n);
  return s;
}

// Rebuilds every aggregate from `report.rows`. Rows are sorted first, so the
// result does not depend on the order patients were processed in.
inline void aggregate(MetricsReport& report) {
  auto& rows = report.rows;
  std::sort(rows.begin(), rows.end(), [](const MetricRow& a, const MetricRow& b) {
    return std::tie(a.scenario, a.patient, a.sequence) < std::tie(b.scenario, b.patient, b.sequence);
  });
  report.scenarios.clear();
  report.tiers.clear();
  // scenario -> patient -> per-sequence metrics
  std::map<std::string, std::map<std::string, std::vector<ImageMetrics>>> grouped;
  std::map<std::string, int> tiers;
  for (const auto& r : rows) {
    grouped[r.scenario][r.patient].push_back(r.metrics);
    tiers[r.scenario] = r.tier;
  }
  std::vector<ImageMetrics> scenario_means;
  std::map<int, std::vector<ImageMetrics>> tier_members;
  for (const auto& [scenario, patients] : grouped) {
    ScenarioSummary s;
    s.scenario = scenario;
    s.tier = tiers[scenario];
    std::vector<ImageMetrics> patient_scores;
    for (const auto& [patient, seqs] : patients) {
      const auto m = summarize(seqs).mean;
      s.per_patient[patient] = m;
      patient_scores.push_back(m);
    }
    s.summary = summarize(patient_scores);
    scenario_means.push_back(s.summary.mean);
    tier_members[s.tier].push_back(s.summary.mean);
    report.scenarios.push_back(std::move(s));
  }
  for (const auto& [tier, members] : tier_members) report.tiers.push_back({tier, summarize(members)});
  report.grand = summarize(scenario_means);
}

// Predictor: (ground truth [N, C, H, W], scenario) -> synthesized [N, C, H, W].
// Only the scenario's missing channels of the result are scored.
template <class Predictor>
MetricsReport evaluate_model(Predictor&& predict, std::span<const CachedPatient> patients,
                             std::span<const Scenario> scenarios, const std::vector<std::string>& channels,
                             const EvalOptions& opts = {}) {
  MetricsReport report;
  report.channels = channels;
  for (const auto& s : scenarios) {
    if (s.channels() != static_cast<int>(channels.size())) {
      throw ShapeMismatch("scenario '" + s.str() + "' does not match " + std::to_string(channels.size()) + " channels");
    }
    for (const auto& p : patients) {
      const auto& st = p.slices;
      if (st.channels != channels.size()) {
        throw ShapeMismatch("patient '" + p.meta.patient_id + "' has " + std::to_string(st.channels) + " channels");
      }
      torch::Tensor out;
      try {
        out = predict(to_tensor(st), s).contiguous().to(torch::kFloat);
      } catch (const Error& e) {
        throw Error(std::string(e.what()) + " [scenario " + s.str() + ", patient " + p.meta.patient_id + "]");
      }
      const std::vector<std::int64_t> want{static_cast<std::int64_t>(st.count), static_cast<std::int64_t>(st.channels),
                                           static_cast<std::int64_t>(st.height), static_cast<std::int64_t>(st.width)};
      if (out.sizes().vec() != want) {
        throw ShapeMismatch("prediction for patient '" + p.meta.patient_id + "' scenario " + s.str() + " has shape " +
                            detail::shape_str(out));
      }
      SliceStack pred = st;
      std::memcpy(pred.data.data(), out.data_ptr<float>(), pred.data.size() * sizeof(float));
      for (int k : s.missing_indices()) {
        if (opts.only_channel && k != *opts.only_channel) continue;
        const auto truth = st.channel_volume(static_cast<std::size_t>(k));
        const auto synth = pred.channel_volume(static_cast<std::size_t>(k));
        MetricRow row;
        row.scenario = s.str();
        row.tier = difficulty_tier(s);
        row.patient = p.meta.patient_id;
        row.sequence = channels[static_cast<std::size_t>(k)];
        try {
          row.metrics = volume_metrics(synth.data, truth.data, st.count, static_cast<int>(st.height),
                                       static_cast<int>(st.width), opts.renormalize, opts.i_max);
        } catch (const ConstantImage&) {
          // A constant prediction carries no structure; score it as all zeros
          // against the renormalized truth. A constant truth is an error.
          const auto t = renormalize_01(truth.data);
          const std::vector<float> flat(t.size(), 0.0f);
          row.metrics.mse = mse(flat, t);
          row.metrics.psnr = psnr_from_mse(row.metrics.mse, opts.i_max);
          row.metrics.ssim = ssim_volume(flat, t, st.count, static_cast<int>(st.height), static_cast<int>(st.width),
                                         opts.i_max);
        }
        report.rows.push_back(std::move(row));
      }
    }
  }
  aggregate(report);
  return report;
}

// Wraps a generator as a predictor: impute, forward in evaluation mode
// without gradients, at most `batch` slices at a time. The generator's batch
// norm uses batch statistics, so slices are split into near-equal chunks
// rather than leaving a small remainder.
inline auto generator_predictor(Generator g, Imputation imputation = Imputation::Zeros, std::int64_t batch = 16) {
  return [g, imputation, batch](const torch::Tensor& real, const Scenario& s) mutable {
    torch::NoGradGuard no_grad;
    g->eval();
    const std::int64_t n = real.size(0);
    const std::int64_t chunks = std::max<std::int64_t>(1, (n + batch - 1) / batch);
    const std::int64_t step = (n + chunks - 1) / chunks;
    std::vector<torch::Tensor> parts;
    for (std::int64_t i = 0; i < n; i += step) {
      const auto x = real.slice(0, i, std::min(i + step, n));
      parts.push_back(g->forward(impute(x, s, imputation)));
    }
    return torch::cat(parts, 0);
  };
}

// ---------------------------------------------------------------------------
// Paired comparison against a baseline report

struct ScenarioComparison {
  std::string scenario;
  std::string metric;
  std::optional<StatTestResult> result;
  std::string degenerate;
};

inline double metric_value(const ImageMetrics& m, const std::string& metric) {
  if (metric == "mse") return m.mse;
  if (metric == "psnr") return m.psnr;
  if (metric == "ssim") return m.ssim;
  throw ConfigError("unknown metric '" + metric + "'");
}

// Wilcoxon signed-rank test per scenario over the patients both reports share.
inline std::vector<ScenarioComparison> compare_reports(const MetricsReport& a, const MetricsReport& b,
                                                       const std::string& metric = "ssim") {
  std::vector<ScenarioComparison> out;
  for (const auto& sa : a.scenarios) {
    const auto it = std::find_if(b.scenarios.begin(), b.scenarios.end(),
                                 [&](const ScenarioSummary& s) { return s.scenario == sa.scenario; });
    if (it == b.scenarios.end()) continue;
    std::vector<double> xa, xb;
    for (const auto& [patient, m] : sa.per_patient) {
      const auto jt = it->per_patient.find(patient);
      if (jt == it->per_patient.end()) continue;
      xa.push_back(metric_value(m, metric));
      xb.push_back(metric_value(jt->second, metric));
    }
    ScenarioComparison c{sa.scenario, metric, std::nullopt, {}};
    try {
      c.result = wilcoxon_signed_rank(xa, xb);
    } catch (const Error& e) {
      c.degenerate = e.what();
    }
    out.push_back(std::move(c));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Output

inline nlohmann::json to_json(const ImageMetrics& m) { return {{"mse", m.mse}, {"psnr", m.psnr}, {"ssim", m.ssim}}; }

inline nlohmann::json to_json(const MetricSummary& s) {
  return {{"mean", to_json(s.mean)}, {"std", to_json(s.std)}, {"n", s.n}};
}

inline nlohmann::json to_json(const StatTestResult& r) {
  return {{"test", to_string(r.test)}, {"statistic", r.statistic}, {"p_value", r.p_value},
          {"n1", r.n1},                {"n2", r.n2},               {"exact", r.exact}};
}

inline nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json scen = nlohmann::json::array();
  for (const auto& s : r.scenarios) {
    nlohmann::json pp = nlohmann::json::object();
    for (const auto& [p, m] : s.per_patient) pp[p] = to_json(m);
    scen.push_back({{"scenario", s.scenario}, {"tier", s.tier}, {"summary", to_json(s.summary)}, {"patients", pp}});
  }
  nlohmann::json tiers = nlohmann::json::array();
  for (const auto& t : r.tiers) tiers.push_back({{"tier", t.tier}, {"summary", to_json(t.summary)}});
  return {{"channels", r.channels}, {"scenarios", scen}, {"tiers", tiers}, {"grand", to_json(r.grand)}};
}

inline constexpr const char* kReportHeader = "kind,scenario,tier,patient,sequence,mse,psnr,ssim,mse_std,psnr_std,ssim_std,n";

inline std::string report_line(const std::string& kind, const std::string& scenario, const std::string& tier,
                               const std::string& patient, const std::string& sequence, const ImageMetrics& m,
                               const std::optional<ImageMetrics>& sd, std::size_t n) {
  char buf[512];
  if (sd) {
    std::snprintf(buf, sizeof(buf), "%s,%s,%s,%s,%s,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%zu", kind.c_str(), scenario.c_str(),
                  tier.c_str(), patient.c_str(), sequence.c_str(), m.mse, m.psnr, m.ssim, sd->mse, sd->psnr, sd->ssim, n);
  } else {
    std::snprintf(buf, sizeof(buf), "%s,%s,%s,%s,%s,%.9g,%.9g,%.9g,,,,%zu", kind.c_str(), scenario.c_str(),
                  tier.c_str(), patient.c_str(), sequence.c_str(), m.mse, m.psnr, m.ssim, n);
  }
  return buf;
}

inline void write_report_csv(const std::filesystem::path& path, const MetricsReport& r) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << kReportHeader << "\n";
  for (const auto& row : r.rows) {
    out << report_line("row", row.scenario, std::to_string(row.tier), row.patient, row.sequence, row.metrics,
                       std::nullopt, 1)
        << "\n";
  }
  for (const auto& s : r.scenarios) {
    out << report_line("scenario", s.scenario, std::to_string(s.tier), "", "", s.summary.mean, s.summary.std,
                       s.summary.n)
        << "\n";
  }
  for (const auto& t : r.tiers) {
    out << report_line("tier", "", std::to_string(t.tier), "", "", t.summary.mean, t.summary.std, t.summary.n) << "\n";
  }
  out << report_line("grand", "", "", "", "", r.grand.mean, r.grand.std, r.grand.n) << "\n";
}

}  // namespace mmgan
