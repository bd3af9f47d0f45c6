#pragma once

// Ranking accuracy (tie-corrected Kendall tau-b mapped onto [0, 1]) and
// preference strength correlation (per-prompt Pearson) over hypothesis spaces.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <exception>
#include <map>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "heal/core.hpp"
#include "heal/error.hpp"
#include "heal/numeric.hpp"

namespace heal {

struct PairClassification {
  std::size_t concordant = 0;
  std::size_t discordant = 0;
  std::size_t tied_first_only = 0;
  std::size_t tied_second_only = 0;
  std::size_t tied_both = 0;
  std::size_t total_pairs = 0;

  /// T1: pairs tied in the first ranking.
  [[nodiscard]] std::size_t ties_first() const noexcept { return tied_first_only + tied_both; }
  /// T2: pairs tied in the second ranking.
  [[nodiscard]] std::size_t ties_second() const noexcept { return tied_second_only + tied_both; }

  friend bool operator==(const PairClassification&, const PairClassification&) = default;
};

namespace detail {

inline void check_pair_inputs(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::LengthMismatch, "value vectors have lengths " + std::to_string(a.size()) +
                                               " and " + std::to_string(b.size()));
  }
  if (a.size() < 2) throw Error(ErrorCode::TooShort, "need at least 2 values");
  auto finite = [](double x) { return std::isfinite(x); };
  if (!std::all_of(a.begin(), a.end(), finite) || !std::all_of(b.begin(), b.end(), finite)) {
    throw Error(ErrorCode::NonFiniteValue, "value vectors must be finite");
  }
}

inline int sign_of_difference(double x, double y) noexcept { return (x > y) - (x < y); }

inline bool is_constant(std::span<const double> xs) noexcept {
  return std::all_of(xs.begin(), xs.end(), [&](double x) { return x == xs.front(); });
}

}  // namespace detail

/// Classifies every unordered index pair of two index-aligned value vectors.
/// Ties are exact floating-point equality.
inline PairClassification classify_pairs(std::span<const double> a, std::span<const double> b) {
  detail::check_pair_inputs(a, b);
  PairClassification pc;
  const std::size_t n = a.size();
  pc.total_pairs = n * (n - 1) / 2;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const int sa = detail::sign_of_difference(a[i], a[j]);
      const int sb = detail::sign_of_difference(b[i], b[j]);
      if (sa == 0 && sb == 0) {
        ++pc.tied_both;
      } else if (sa == 0) {
        ++pc.tied_first_only;
      } else if (sb == 0) {
        ++pc.tied_second_only;
      } else if (sa == sb) {
        ++pc.concordant;
      } else {
        ++pc.discordant;
      }
    }
  }
  return pc;
}

/// (C - D) / sqrt((T0 - T1)(T0 - T2)). Throws Degenerate when either ranking
/// is fully tied; callers skip such spaces with SkipReason::AllTied.
inline double kendall_tau_b(const PairClassification& pc) {
  const std::size_t sum = pc.concordant + pc.discordant + pc.tied_first_only +
                          pc.tied_second_only + pc.tied_both;
  if (sum != pc.total_pairs) {
    throw Error(ErrorCode::InvalidArgument, "pair buckets do not sum to total_pairs");
  }
  const std::size_t untied_first = pc.total_pairs - pc.ties_first();
  const std::size_t untied_second = pc.total_pairs - pc.ties_second();
  if (untied_first == 0 || untied_second == 0) {
    throw Error(ErrorCode::Degenerate, "all pairs tied in at least one ranking");
  }
  const double numerator =
      static_cast<double>(pc.concordant) - static_cast<double>(pc.discordant);
  double tau;
  if (untied_first == untied_second) {
    tau = numerator / static_cast<double>(untied_first);
  } else {
    tau = numerator /
          std::sqrt(static_cast<double>(untied_first) * static_cast<double>(untied_second));
  }
  return std::clamp(tau, -1.0, 1.0);
}

/// Maps tau_b in [-1, 1] linearly onto [0, 1].
inline double ranking_accuracy(double tau_b) {
  if (!(tau_b >= -1.0 && tau_b <= 1.0)) {
    throw Error(ErrorCode::OutOfRange, "tau_b " + std::to_string(tau_b) + " outside [-1, 1]");
  }
  return (tau_b + 1.0) / 2.0;
}

/// Pearson correlation with population moments, computed in two passes over
/// compensated sums. Throws ZeroVariance when either input is constant.
inline double pearson(std::span<const double> a, std::span<const double> b) {
  detail::check_pair_inputs(a, b);
  if (detail::is_constant(a) || detail::is_constant(b)) {
    throw Error(ErrorCode::ZeroVariance, "constant input has no variance");
  }
  const double mean_a = numeric::mean(a);
  const double mean_b = numeric::mean(b);
  numeric::CompensatedSum saa, sbb, sab;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - mean_a;
    const double db = b[i] - mean_b;
    saa.add(da * da);
    sbb.add(db * db);
    sab.add(da * db);
  }
  // Divisors by n cancel between covariance and the standard deviations.
  const double denom = std::sqrt(saa.value()) * std::sqrt(sbb.value());
  if (!(denom > 0.0)) throw Error(ErrorCode::ZeroVariance, "variance underflowed to zero");
  return std::clamp(sab.value() / denom, -1.0, 1.0);
}

/// Index-aligned indicator values for a space, in hypothesis order.
inline std::vector<double> indicator_values(const HypothesisSpace& space,
                                            const IndicatorConfig& cfg) {
  std::vector<double> out;
  out.reserve(space.size());
  for (const auto& h : space.hypotheses) out.push_back(indicator_value(h, cfg));
  return out;
}

/// RA and PSC for one (x, Y_x^(1), Y_x^(2)) tuple. Degenerate cases become
/// per-metric skip reasons; missing fields propagate as errors, except a gold
/// dimension absent from some hypotheses, which skips the whole space.
inline PromptResult evaluate_space(const HypothesisSpace& space, const IndicatorConfig& ind_a,
                                   const IndicatorConfig& ind_b) {
  const auto too_few = PromptResult{MetricOutcome::skipped(SkipReason::TooFewHypotheses),
                                    MetricOutcome::skipped(SkipReason::TooFewHypotheses)};
  if (space.size() < 2) return too_few;
  for (const IndicatorConfig* ind : {&ind_a, &ind_b}) {
    if (ind->kind != IndicatorKind::GoldDimension) continue;
    const bool complete = std::all_of(space.hypotheses.begin(), space.hypotheses.end(),
                                      [&](const Hypothesis& h) { return has_indicator(h, *ind); });
    if (!complete) return too_few;
  }

  const auto a = indicator_values(space, ind_a);
  const auto b = indicator_values(space, ind_b);

  PromptResult result;
  try {
    result.ra = MetricOutcome::of(ranking_accuracy(kendall_tau_b(classify_pairs(a, b))));
  } catch (const Error& e) {
    if (e.code() != ErrorCode::Degenerate) throw;
    result.ra = MetricOutcome::skipped(SkipReason::AllTied);
  }
  try {
    result.psc = MetricOutcome::of(pearson(a, b));
  } catch (const Error& e) {
    if (e.code() != ErrorCode::ZeroVariance) throw;
    result.psc = MetricOutcome::skipped(SkipReason::ZeroVariance);
  }
  return result;
}

struct EvalOptions {
  unsigned threads = 1;
};

/// Evaluates every space and averages each metric over its non-skipped
/// prompts. The reduction runs in prompt_id order regardless of threading.
inline EvalReport evaluate_dataset(const ScoredDataset& ds, const IndicatorConfig& ind_a,
                                   const IndicatorConfig& ind_b, EvalOptions opts = {}) {
  if (ds.spaces.empty()) throw Error(ErrorCode::EmptyDataset, "dataset has no hypothesis spaces");

  std::vector<PromptResult> results(ds.spaces.size());
  const std::size_t workers =
      std::clamp<std::size_t>(opts.threads, 1, std::max<std::size_t>(1, ds.spaces.size()));
  if (workers == 1) {
    for (std::size_t i = 0; i < ds.spaces.size(); ++i) {
      results[i] = evaluate_space(ds.spaces[i], ind_a, ind_b);
    }
  } else {
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = w; i < ds.spaces.size(); i += workers) {
            results[i] = evaluate_space(ds.spaces[i], ind_a, ind_b);
          }
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  EvalReport report;
  report.model = ind_a;
  report.gold = ind_b;
  for (std::size_t i = 0; i < ds.spaces.size(); ++i) {
    if (!report.per_prompt.emplace(ds.spaces[i].prompt_id, results[i]).second) {
      throw Error(ErrorCode::DuplicatePromptId,
                  "duplicate prompt id '" + ds.spaces[i].prompt_id + "'");
    }
  }

  numeric::CompensatedSum ra_sum, psc_sum;
  std::map<std::string, std::size_t> ra_reasons, psc_reasons;
  for (const auto& [id, r] : report.per_prompt) {
    if (r.ra.ok()) {
      ra_sum.add(*r.ra.value);
      ++report.ra_evaluated;
    } else {
      ++report.ra_skipped;
      ++ra_reasons[std::string(to_string(*r.ra.skip))];
    }
    if (r.psc.ok()) {
      psc_sum.add(*r.psc.value);
      ++report.psc_evaluated;
    } else {
      ++report.psc_skipped;
      ++psc_reasons[std::string(to_string(*r.psc.skip))];
    }
  }
  if (report.ra_evaluated == 0) throw AllSkippedError("ra", ra_reasons);
  if (report.psc_evaluated == 0) throw AllSkippedError("psc", psc_reasons);
  report.dataset_ra =
      std::clamp(ra_sum.value() / static_cast<double>(report.ra_evaluated), 0.0, 1.0);
  report.dataset_psc =
      std::clamp(psc_sum.value() / static_cast<double>(report.psc_evaluated), -1.0, 1.0);

  report.metadata = {
      {"aggregation", "unweighted mean over non-skipped prompts"},
      {"degenerate_prompts", "skipped, not imputed"},
      {"likelihood_space", "log"},
      {"ra_mapping", "(tau_b + 1) / 2"},
      {"ties", "exact floating-point equality"},
  };
  return report;
}

}  // namespace heal
