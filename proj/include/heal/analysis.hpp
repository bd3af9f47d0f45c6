#pragma once

// Pair-agreement intersections and distribution summaries, plus the
// per-dimension report.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "heal/core.hpp"
#include "heal/error.hpp"
#include "heal/json_io.hpp"
#include "heal/metrics.hpp"
#include "heal/numeric.hpp"

namespace heal {

/// A gold-standard preference: the gold indicator is strictly greater on
/// better_id than on worse_id.
struct PreferredPair {
  std::string prompt_id;
  std::string better_id;
  std::string worse_id;

  friend auto operator<=>(const PreferredPair&, const PreferredPair&) = default;
};

using PairSet = std::set<PreferredPair>;

namespace detail {

inline std::vector<const HypothesisSpace*> spaces_by_prompt_id(const ScoredDataset& ds) {
  std::vector<const HypothesisSpace*> out;
  out.reserve(ds.spaces.size());
  for (const auto& s : ds.spaces) out.push_back(&s);
  std::sort(out.begin(), out.end(),
            [](auto* a, auto* b) { return a->prompt_id < b->prompt_id; });
  return out;
}

}  // namespace detail

/// Every strictly gold-ordered hypothesis pair, oriented toward the higher
/// gold value. Ordered by prompt_id, then lexicographic hypothesis ids.
inline std::vector<PreferredPair> gold_preferred_pairs(const ScoredDataset& ds,
                                                       const IndicatorConfig& gold) {
  std::vector<PreferredPair> pairs;
  for (const HypothesisSpace* space : detail::spaces_by_prompt_id(ds)) {
    std::vector<std::pair<std::string, double>> scored;
    scored.reserve(space->size());
    for (const auto& h : space->hypotheses) scored.emplace_back(h.id, indicator_value(h, gold));
    std::sort(scored.begin(), scored.end());
    for (std::size_t i = 0; i + 1 < scored.size(); ++i) {
      for (std::size_t j = i + 1; j < scored.size(); ++j) {
        const auto& [id_i, g_i] = scored[i];
        const auto& [id_j, g_j] = scored[j];
        if (g_i > g_j) {
          pairs.push_back({space->prompt_id, id_i, id_j});
        } else if (g_j > g_i) {
          pairs.push_back({space->prompt_id, id_j, id_i});
        }
      }
    }
  }
  return pairs;
}

/// Pairs on which a method holds the gold preference: strictly greater
/// indicator on better_id. Method ties count as disagreement.
inline PairSet agreement_set(const std::vector<PreferredPair>& pairs, const ScoredDataset& ds,
                             const IndicatorConfig& method) {
  std::map<std::pair<std::string_view, std::string_view>, const Hypothesis*> index;
  for (const auto& space : ds.spaces) {
    for (const auto& h : space.hypotheses) index[{space.prompt_id, h.id}] = &h;
  }
  auto lookup = [&](const std::string& prompt_id, const std::string& id) -> const Hypothesis& {
    const auto it = index.find({prompt_id, id});
    if (it == index.end()) {
      throw Error(ErrorCode::UnknownKey,
                  "(" + prompt_id + ", " + id + ") referenced by a pair is not in the dataset");
    }
    return *it->second;
  };
  PairSet held;
  for (const auto& p : pairs) {
    const double better = indicator_value(lookup(p.prompt_id, p.better_id), method);
    const double worse = indicator_value(lookup(p.prompt_id, p.worse_id), method);
    if (better > worse) held.insert(p);
  }
  return held;
}

/// Exclusive intersection sizes. Subset masks index method_names: bit i set
/// means method_names[i] agrees. Mask 0 holds pairs no method agrees on.
struct UpsetTable {
  std::vector<std::string> method_names;  // sorted
  std::vector<std::size_t> exclusive_counts;  // size 2^k, indexed by mask
  std::size_t total_pairs = 0;

  [[nodiscard]] std::string subset_label(std::uint32_t mask) const {
    std::string out;
    for (std::size_t i = 0; i < method_names.size(); ++i) {
      if (!(mask & (1u << i))) continue;
      if (!out.empty()) out += '+';
      out += method_names[i];
    }
    return out;
  }

  [[nodiscard]] std::size_t count(const std::set<std::string>& subset) const {
    std::uint32_t mask = 0;
    for (const auto& name : subset) {
      const auto it = std::find(method_names.begin(), method_names.end(), name);
      if (it == method_names.end()) {
        throw Error(ErrorCode::InvalidArgument, "unknown method '" + name + "'");
      }
      mask |= 1u << static_cast<std::uint32_t>(it - method_names.begin());
    }
    return exclusive_counts.at(mask);
  }
};

inline constexpr std::size_t kMaxUpsetMethods = 16;

inline UpsetTable upset_intersections(const std::vector<PreferredPair>& pairs,
                                      const std::map<std::string, PairSet>& agreement_sets) {
  if (agreement_sets.size() > kMaxUpsetMethods) {
    throw Error(ErrorCode::InvalidArgument,
                "at most " + std::to_string(kMaxUpsetMethods) + " methods per upset table");
  }
  UpsetTable table;
  table.total_pairs = pairs.size();
  table.exclusive_counts.assign(std::size_t{1} << agreement_sets.size(), 0);

  std::map<PreferredPair, std::uint32_t> membership;
  for (const auto& p : pairs) membership.emplace(p, 0u);
  if (membership.size() != pairs.size()) {
    throw Error(ErrorCode::InvalidArgument, "pair universe contains duplicates");
  }
  std::uint32_t bit = 0;
  for (const auto& [name, held] : agreement_sets) {
    table.method_names.push_back(name);
    for (const auto& p : held) {
      const auto it = membership.find(p);
      if (it == membership.end()) {
        throw Error(ErrorCode::UnknownPair, "method '" + name + "' agrees on a pair (" +
                                                p.prompt_id + ", " + p.better_id + ", " +
                                                p.worse_id + ") outside the universe");
      }
      it->second |= 1u << bit;
    }
    ++bit;
  }
  for (const auto& [p, mask] : membership) ++table.exclusive_counts[mask];
  return table;
}

/// CSV: subset,count. One row per subset in mask order; the none-subset has
/// an empty label.
inline std::string upset_csv(const UpsetTable& table) {
  std::string out = "subset,count\n";
  for (std::uint32_t mask = 0; mask < table.exclusive_counts.size(); ++mask) {
    out += table.subset_label(mask) + "," + std::to_string(table.exclusive_counts[mask]) + "\n";
  }
  return out;
}

struct KdePoint {
  double x = 0.0;
  double density = 0.0;
};

struct DensitySummary {
  std::vector<double> bin_edges;
  std::vector<double> masses;
  std::optional<std::vector<KdePoint>> kde_points;
  double bandwidth = 0.0;  // only meaningful with kde_points
  double median = 0.0;
  std::size_t count = 0;
};

inline constexpr std::size_t kKdePoints = 128;

namespace detail {

// Linear-interpolation quantile of sorted data.
inline double quantile_sorted(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

// Silverman's rule of thumb, 0.9 * min(sd, IQR / 1.34) * n^(-1/5), falling
// back to whichever spread is nonzero and to 1 for constant data.
inline double silverman_bandwidth(const std::vector<double>& sorted) {
  const auto n = static_cast<double>(sorted.size());
  double sd = 0.0;
  if (sorted.size() > 1) {
    const double mean = numeric::mean(sorted);
    numeric::CompensatedSum ss;
    for (double x : sorted) ss.add((x - mean) * (x - mean));
    sd = std::sqrt(ss.value() / (n - 1.0));
  }
  const double iqr = quantile_sorted(sorted, 0.75) - quantile_sorted(sorted, 0.25);
  double spread = std::min(sd, iqr / 1.34);
  if (!(spread > 0.0)) spread = std::max(sd, iqr / 1.34);
  if (!(spread > 0.0)) return 1.0;
  return 0.9 * spread * std::pow(n, -0.2);
}

}  // namespace detail

/// Equal-width histogram over [min, max] with the lower median. A single-point
/// range is widened by 0.5 on each side. with_kde adds a Gaussian KDE sampled
/// at 128 evenly spaced points spanning [min - 3h, max + 3h].
inline DensitySummary density_summary(std::vector<double> values, std::size_t bins,
                                      bool with_kde) {
  if (values.empty()) throw Error(ErrorCode::EmptyInput, "no values to summarize");
  if (bins == 0) throw Error(ErrorCode::InvalidArgument, "bins must be positive");
  if (!std::all_of(values.begin(), values.end(), [](double x) { return std::isfinite(x); })) {
    throw Error(ErrorCode::NonFiniteValue, "values must be finite");
  }
  std::sort(values.begin(), values.end());

  DensitySummary out;
  out.count = values.size();
  out.median = values[(values.size() - 1) / 2];

  double lo = values.front();
  double hi = values.back();
  if (lo == hi) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double width = (hi - lo) / static_cast<double>(bins);
  out.bin_edges.resize(bins + 1);
  for (std::size_t i = 0; i < bins; ++i) out.bin_edges[i] = lo + static_cast<double>(i) * width;
  out.bin_edges[bins] = hi;

  std::vector<std::size_t> counts(bins, 0);
  for (double x : values) {
    auto idx = static_cast<std::size_t>(
        std::clamp((x - lo) / width, 0.0, static_cast<double>(bins - 1)));
    // Snap to the edges actually reported so every value lies in [left, right).
    while (idx > 0 && x < out.bin_edges[idx]) --idx;
    while (idx + 1 < bins && x >= out.bin_edges[idx + 1]) ++idx;
    ++counts[idx];
  }
  out.masses.resize(bins);
  const auto n = static_cast<double>(values.size());
  for (std::size_t i = 0; i < bins; ++i) out.masses[i] = static_cast<double>(counts[i]) / n;

  if (with_kde) {
    const double h = detail::silverman_bandwidth(values);
    out.bandwidth = h;
    const double x0 = values.front() - 3.0 * h;
    const double x1 = values.back() + 3.0 * h;
    const double step = (x1 - x0) / static_cast<double>(kKdePoints - 1);
    const double norm = 1.0 / (n * h * std::sqrt(2.0 * std::numbers::pi));
    std::vector<KdePoint> pts(kKdePoints);
    for (std::size_t i = 0; i < kKdePoints; ++i) {
      const double x = i + 1 == kKdePoints ? x1 : x0 + static_cast<double>(i) * step;
      numeric::CompensatedSum acc;
      for (double v : values) {
        const double z = (x - v) / h;
        acc.add(std::exp(-0.5 * z * z));
      }
      pts[i] = {x, norm * acc.value()};
    }
    out.kde_points = std::move(pts);
  }
  return out;
}

/// CSV: a "# median=..,count=.." metadata row, then bin_left,bin_right,mass.
inline std::string density_csv(const DensitySummary& d) {
  std::string out = "# median=" + jsonio::format_real(d.median) +
                    ",count=" + std::to_string(d.count) + "\n";
  out += "bin_left,bin_right,mass\n";
  for (std::size_t i = 0; i < d.masses.size(); ++i) {
    out += jsonio::format_real(d.bin_edges[i]) + "," + jsonio::format_real(d.bin_edges[i + 1]) +
           "," + jsonio::format_real(d.masses[i]) + "\n";
  }
  return out;
}

inline std::string kde_csv(const DensitySummary& d) {
  std::string out = "x,density\n";
  if (!d.kde_points) return out;
  for (const auto& p : *d.kde_points) {
    out += jsonio::format_real(p.x) + "," + jsonio::format_real(p.density) + "\n";
  }
  return out;
}

/// All values of one indicator across the dataset, in prompt_id then
/// hypothesis order.
inline std::vector<double> collect_indicator(const ScoredDataset& ds, const IndicatorConfig& cfg) {
  std::vector<double> out;
  for (const HypothesisSpace* space : detail::spaces_by_prompt_id(ds)) {
    for (const auto& h : space->hypotheses) out.push_back(indicator_value(h, cfg));
  }
  return out;
}

struct JointPoint {
  std::string prompt_id;
  std::string hypothesis_id;
  double gold_value = 0.0;
  double indicator_value = 0.0;
};

/// Raw (gold, indicator) point cloud plus both marginals.
struct JointSummary {
  std::vector<JointPoint> points;
  DensitySummary gold_marginal;
  DensitySummary indicator_marginal;
};

inline JointSummary joint_summary(const ScoredDataset& ds, const IndicatorConfig& gold,
                                  const IndicatorConfig& indicator, std::size_t bins,
                                  bool with_kde) {
  JointSummary out;
  std::vector<double> gs, is;
  for (const HypothesisSpace* space : detail::spaces_by_prompt_id(ds)) {
    for (const auto& h : space->hypotheses) {
      out.points.push_back({space->prompt_id, h.id, indicator_value(h, gold),
                            indicator_value(h, indicator)});
      gs.push_back(out.points.back().gold_value);
      is.push_back(out.points.back().indicator_value);
    }
  }
  out.gold_marginal = density_summary(std::move(gs), bins, with_kde);
  out.indicator_marginal = density_summary(std::move(is), bins, with_kde);
  return out;
}

namespace detail {

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

}  // namespace detail

inline std::string joint_csv(const JointSummary& j) {
  std::string out = "prompt_id,hypothesis_id,gold_value,indicator_value\n";
  for (const auto& p : j.points) {
    out += detail::csv_field(p.prompt_id) + "," + detail::csv_field(p.hypothesis_id) + "," +
           jsonio::format_real(p.gold_value) + "," + jsonio::format_real(p.indicator_value) + "\n";
  }
  return out;
}

/// Outcome of evaluating the model indicator against one gold dimension.
struct DimensionResult {
  std::optional<EvalReport> report;              // absent when the dimension was skipped
  std::map<std::string, std::size_t> skip_reasons;  // filled when skipped
};

inline const std::vector<std::string>& default_dimensions() {
  static const std::vector<std::string> dims = {"helpfulness", "correctness", "coherence",
                                                "complexity", "verbosity"};
  return dims;
}

/// Runs evaluate_dataset once per gold dimension. A dimension with no
/// evaluable space is reported as skipped; one present nowhere is an error.
inline std::map<std::string, DimensionResult> multidim_report(
    const ScoredDataset& ds, const IndicatorConfig& model,
    const std::vector<std::string>& dimensions) {
  if (dimensions.empty()) throw Error(ErrorCode::InvalidArgument, "no dimensions requested");
  std::map<std::string, DimensionResult> out;
  for (const auto& dim : dimensions) {
    const bool present = std::any_of(ds.spaces.begin(), ds.spaces.end(), [&](const auto& s) {
      return std::any_of(s.hypotheses.begin(), s.hypotheses.end(),
                         [&](const Hypothesis& h) { return h.gold_scores.contains(dim); });
    });
    if (!present) throw Error(ErrorCode::UnknownDimension, "dimension '" + dim + "' is present nowhere");
    DimensionResult r;
    try {
      r.report = evaluate_dataset(ds, model, IndicatorConfig::gold(dim));
    } catch (const AllSkippedError& e) {
      r.skip_reasons = e.reasons();
    }
    out.emplace(dim, std::move(r));
  }
  return out;
}

}  // namespace heal
