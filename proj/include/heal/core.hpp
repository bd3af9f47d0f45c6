#pragma once

// Domain types shared by every other module.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "heal/error.hpp"
#include "heal/numeric.hpp"

namespace heal {

/// One candidate response. token_logprobs are natural-log conditional
/// probabilities of each response token as recorded by the scorer.
struct Hypothesis {
  std::string id;
  std::string text;
  std::optional<std::vector<double>> token_logprobs;
  std::optional<std::size_t> token_count;
  std::map<std::string, double> gold_scores;

  /// |y|: the explicit token_count, else the number of recorded logprobs.
  [[nodiscard]] std::optional<std::size_t> length() const {
    if (token_count) return token_count;
    if (token_logprobs) return token_logprobs->size();
    return std::nullopt;
  }

  friend bool operator==(const Hypothesis&, const Hypothesis&) = default;
};

struct HypothesisSpace {
  std::string prompt_id;
  std::string prompt_text;
  std::vector<Hypothesis> hypotheses;

  [[nodiscard]] std::size_t size() const noexcept { return hypotheses.size(); }

  friend bool operator==(const HypothesisSpace&, const HypothesisSpace&) = default;
};

struct ScoredDataset {
  std::vector<HypothesisSpace> spaces;
  std::map<std::string, std::string> metadata;

  [[nodiscard]] const HypothesisSpace* find(std::string_view prompt_id) const {
    auto it = std::find_if(spaces.begin(), spaces.end(),
                           [&](const HypothesisSpace& s) { return s.prompt_id == prompt_id; });
    return it == spaces.end() ? nullptr : &*it;
  }

  friend bool operator==(const ScoredDataset&, const ScoredDataset&) = default;
};

enum class IndicatorKind { LogLikelihood, LengthNormalizedLogLikelihood, GoldDimension };

/// Selects the scalar that orders a hypothesis space.
struct IndicatorConfig {
  IndicatorKind kind = IndicatorKind::LogLikelihood;
  std::string dimension;  // only for GoldDimension

  static IndicatorConfig log_likelihood() { return {IndicatorKind::LogLikelihood, {}}; }
  static IndicatorConfig length_normalized() {
    return {IndicatorKind::LengthNormalizedLogLikelihood, {}};
  }
  static IndicatorConfig gold(std::string dimension) {
    if (dimension.empty()) {
      throw Error(ErrorCode::InvalidArgument, "gold dimension name must be nonempty");
    }
    return {IndicatorKind::GoldDimension, std::move(dimension)};
  }

  /// Short form accepted by parse_indicator: "ll", "ll-norm" or "gold:<dim>".
  [[nodiscard]] std::string label() const {
    switch (kind) {
      case IndicatorKind::LogLikelihood: return "ll";
      case IndicatorKind::LengthNormalizedLogLikelihood: return "ll-norm";
      case IndicatorKind::GoldDimension: return "gold:" + dimension;
    }
    return {};
  }

  friend bool operator==(const IndicatorConfig&, const IndicatorConfig&) = default;
};

inline IndicatorConfig parse_indicator(std::string_view spec) {
  if (spec == "ll") return IndicatorConfig::log_likelihood();
  if (spec == "ll-norm") return IndicatorConfig::length_normalized();
  if (spec.starts_with("gold:")) return IndicatorConfig::gold(std::string(spec.substr(5)));
  throw Error(ErrorCode::InvalidArgument,
              "unknown indicator '" + std::string(spec) + "' (expected ll, ll-norm or gold:<dim>)");
}

/// Checks the per-hypothesis invariants. Throws Error(InvalidArgument).
inline void validate(const Hypothesis& h) {
  if (h.id.empty()) throw Error(ErrorCode::InvalidArgument, "hypothesis id must be nonempty");
  if (h.token_logprobs) {
    if (h.token_count && *h.token_count != h.token_logprobs->size()) {
      throw Error(ErrorCode::InvalidArgument,
                  "hypothesis '" + h.id + "': token_count " + std::to_string(*h.token_count) +
                      " does not match " + std::to_string(h.token_logprobs->size()) +
                      " token_logprobs");
    }
    for (double lp : *h.token_logprobs) {
      if (!std::isfinite(lp)) {
        throw Error(ErrorCode::NonFiniteValue, "hypothesis '" + h.id + "': non-finite logprob");
      }
      if (lp > 0.0) {
        throw Error(ErrorCode::InvalidArgument,
                    "hypothesis '" + h.id + "': token logprob above 0 is not a log-probability");
      }
    }
  }
  for (const auto& [dim, score] : h.gold_scores) {
    if (dim.empty()) {
      throw Error(ErrorCode::InvalidArgument, "hypothesis '" + h.id + "': empty dimension name");
    }
    if (!std::isfinite(score)) {
      throw Error(ErrorCode::NonFiniteValue,
                  "hypothesis '" + h.id + "': non-finite gold score '" + dim + "'");
    }
  }
}

inline void validate(const HypothesisSpace& space) {
  std::set<std::string_view> seen;
  for (const auto& h : space.hypotheses) {
    validate(h);
    if (!seen.insert(h.id).second) {
      throw Error(ErrorCode::DuplicateHypothesisId,
                  "prompt '" + space.prompt_id + "': duplicate hypothesis id '" + h.id + "'");
    }
  }
}

inline void validate(const ScoredDataset& ds) {
  std::set<std::string_view> seen;
  for (const auto& space : ds.spaces) {
    if (space.prompt_id.empty()) {
      throw Error(ErrorCode::InvalidArgument, "prompt_id must be nonempty");
    }
    if (!seen.insert(space.prompt_id).second) {
      throw Error(ErrorCode::DuplicatePromptId, "duplicate prompt id '" + space.prompt_id + "'");
    }
    validate(space);
  }
}

[[nodiscard]] inline bool has_indicator(const Hypothesis& h, const IndicatorConfig& cfg) {
  switch (cfg.kind) {
    case IndicatorKind::LogLikelihood: return h.token_logprobs.has_value();
    case IndicatorKind::LengthNormalizedLogLikelihood:
      return h.token_logprobs.has_value() && h.length().has_value();
    case IndicatorKind::GoldDimension: return h.gold_scores.contains(cfg.dimension);
  }
  return false;
}

/// I(x, y) for one hypothesis.
inline double indicator_value(const Hypothesis& h, const IndicatorConfig& cfg) {
  switch (cfg.kind) {
    case IndicatorKind::LogLikelihood:
    case IndicatorKind::LengthNormalizedLogLikelihood: {
      if (!h.token_logprobs) {
        throw Error(ErrorCode::MissingField, "hypothesis '" + h.id + "' has no token_logprobs");
      }
      const double total = numeric::sum(*h.token_logprobs);
      if (cfg.kind == IndicatorKind::LogLikelihood) return total;
      const auto n = h.length();
      if (!n) throw Error(ErrorCode::MissingField, "hypothesis '" + h.id + "' has no token_count");
      if (*n == 0) throw Error(ErrorCode::ZeroLength, "hypothesis '" + h.id + "' has zero tokens");
      return total / static_cast<double>(*n);
    }
    case IndicatorKind::GoldDimension: {
      auto it = h.gold_scores.find(cfg.dimension);
      if (it == h.gold_scores.end()) {
        throw Error(ErrorCode::MissingField,
                    "hypothesis '" + h.id + "' has no gold score '" + cfg.dimension + "'");
      }
      return it->second;
    }
  }
  throw Error(ErrorCode::InvalidArgument, "unknown indicator kind");
}

enum class SkipReason { TooFewHypotheses, ZeroVariance, AllTied };

inline std::string_view to_string(SkipReason r) {
  switch (r) {
    case SkipReason::TooFewHypotheses: return "TooFewHypotheses";
    case SkipReason::ZeroVariance: return "ZeroVariance";
    case SkipReason::AllTied: return "AllTied";
  }
  return "Unknown";
}

/// A metric value or the reason it could not be computed for a prompt.
struct MetricOutcome {
  std::optional<double> value;
  std::optional<SkipReason> skip;

  static MetricOutcome of(double v) { return {v, std::nullopt}; }
  static MetricOutcome skipped(SkipReason r) { return {std::nullopt, r}; }
  [[nodiscard]] bool ok() const noexcept { return value.has_value(); }

  friend bool operator==(const MetricOutcome&, const MetricOutcome&) = default;
};

struct PromptResult {
  MetricOutcome ra;
  MetricOutcome psc;

  friend bool operator==(const PromptResult&, const PromptResult&) = default;
};

/// Per-prompt and dataset-level ranking accuracy (RA) and preference strength
/// correlation (PSC). Dataset values are unweighted means over non-skipped
/// prompts; per_prompt is keyed (and therefore reduced) in prompt_id order.
struct EvalReport {
  std::map<std::string, PromptResult> per_prompt;
  double dataset_ra = 0.0;
  double dataset_psc = 0.0;
  std::size_t ra_evaluated = 0;
  std::size_t ra_skipped = 0;
  std::size_t psc_evaluated = 0;
  std::size_t psc_skipped = 0;
  IndicatorConfig model;
  IndicatorConfig gold;
  std::map<std::string, std::string> metadata;
};

}  // namespace heal
