#pragma once

// Desk-scale preference-optimization lab. A tabular autoregressive policy over
// a tiny vocabulary is trained on pairs drawn from a gold ordering, and the
// re-ranking of its fully enumerable hypothesis space is measured.
//
// Token 0 is the stop token. Sequences are at most max_len tokens and end with
// exactly one stop. The context at depth max_len - 1 is forced: stop has
// probability 1 there and carries no logits, which keeps the hypothesis space
// finite and its total probability exactly 1.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "heal/analysis.hpp"
#include "heal/core.hpp"
#include "heal/error.hpp"
#include "heal/metrics.hpp"
#include "heal/numeric.hpp"

namespace heal::toylab {

using Token = int;
using Sequence = std::vector<Token>;

inline constexpr Token kStop = 0;
inline constexpr int kMaxVocab = 8;
inline constexpr int kMaxLength = 4;

/// "2-1-0" style rendering used for hypothesis ids and spec files.
inline std::string to_string(const Sequence& y) {
  std::string out;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (i) out += '-';
    out += std::to_string(y[i]);
  }
  return out;
}

inline Sequence parse_sequence(std::string_view s) {
  Sequence y;
  std::size_t start = 0;
  while (start <= s.size()) {
    const std::size_t end = std::min(s.find('-', start), s.size());
    const auto part = s.substr(start, end - start);
    if (part.empty() || part.find_first_not_of("0123456789") != std::string_view::npos) {
      throw Error(ErrorCode::InvalidArgument, "malformed token sequence '" + std::string(s) + "'");
    }
    y.push_back(std::stoi(std::string(part)));
    start = end + 1;
  }
  return y;
}

/// Logit vectors for every non-forced context of every prompt, flattened.
/// A context is a prefix of non-stop tokens of length < max_len - 1, indexed
/// by depth then by its base-(V-1) digits.
class LogitTable {
 public:
  LogitTable() = default;
  LogitTable(int vocab_size, int max_len, int prompt_count)
      : vocab_(vocab_size), max_len_(max_len), prompts_(prompt_count) {
    if (vocab_size < 2 || vocab_size > kMaxVocab) {
      throw Error(ErrorCode::InvalidArgument, "vocab_size must be in [2, 8]");
    }
    if (max_len < 1 || max_len > kMaxLength) {
      throw Error(ErrorCode::InvalidArgument, "max_len must be in [1, 4]");
    }
    if (prompt_count < 1) throw Error(ErrorCode::InvalidArgument, "prompt_count must be positive");
    std::size_t width = 1;
    for (int d = 0; d + 1 < max_len; ++d) {
      depth_offset_.push_back(contexts_);
      contexts_ += width;
      width *= static_cast<std::size_t>(vocab_ - 1);
    }
    data_.assign(static_cast<std::size_t>(prompts_) * contexts_ * vocab_, 0.0);
  }

  [[nodiscard]] int vocab_size() const noexcept { return vocab_; }
  [[nodiscard]] int max_len() const noexcept { return max_len_; }
  [[nodiscard]] int prompt_count() const noexcept { return prompts_; }
  [[nodiscard]] std::size_t contexts_per_prompt() const noexcept { return contexts_; }
  [[nodiscard]] bool forced(std::size_t depth) const noexcept {
    return depth + 1 == static_cast<std::size_t>(max_len_);
  }

  /// Context index of a non-forced prefix (non-stop tokens, depth < L - 1).
  [[nodiscard]] std::size_t context_index(std::span<const Token> prefix) const {
    if (prefix.size() + 1 >= static_cast<std::size_t>(max_len_)) {
      throw Error(ErrorCode::InvalidArgument, "prefix reaches the forced-stop depth");
    }
    std::size_t code = 0;
    for (Token t : prefix) {
      if (t <= kStop || t >= vocab_) {
        throw Error(ErrorCode::TokenOutOfRange, "prefix token " + std::to_string(t));
      }
      code = code * static_cast<std::size_t>(vocab_ - 1) + static_cast<std::size_t>(t - 1);
    }
    return depth_offset_[prefix.size()] + code;
  }

  [[nodiscard]] std::span<double> row(int prompt, std::size_t context) {
    return {data_.data() + offset(prompt, context), static_cast<std::size_t>(vocab_)};
  }
  [[nodiscard]] std::span<const double> row(int prompt, std::size_t context) const {
    return {data_.data() + offset(prompt, context), static_cast<std::size_t>(vocab_)};
  }

  [[nodiscard]] std::vector<double>& values() noexcept { return data_; }
  [[nodiscard]] const std::vector<double>& values() const noexcept { return data_; }

  [[nodiscard]] double norm() const {
    numeric::CompensatedSum acc;
    for (double x : data_) acc.add(x * x);
    return std::sqrt(acc.value());
  }

  friend bool operator==(const LogitTable&, const LogitTable&) = default;

 private:
  [[nodiscard]] std::size_t offset(int prompt, std::size_t context) const {
    if (prompt < 0 || prompt >= prompts_) {
      throw Error(ErrorCode::InvalidArgument, "prompt index " + std::to_string(prompt));
    }
    if (context >= contexts_) throw Error(ErrorCode::InvalidArgument, "context out of range");
    return (static_cast<std::size_t>(prompt) * contexts_ + context) * static_cast<std::size_t>(vocab_);
  }

  int vocab_ = 0;
  int max_len_ = 0;
  int prompts_ = 0;
  std::size_t contexts_ = 0;
  std::vector<std::size_t> depth_offset_;
  std::vector<double> data_;
};

inline std::vector<double> softmax(std::span<const double> logits) {
  const double peak = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  numeric::CompensatedSum z;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    p[k] = std::exp(logits[k] - peak);
    z.add(p[k]);
  }
  const double total = z.value();
  for (double& x : p) x /= total;
  return p;
}

inline double log_softmax_at(std::span<const double> logits, std::size_t k) {
  const double peak = *std::max_element(logits.begin(), logits.end());
  numeric::CompensatedSum z;
  for (double l : logits) z.add(std::exp(l - peak));
  return logits[k] - peak - std::log(z.value());
}

/// Portable uniform draw in [0, 1) from a 64-bit engine.
inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// pi_theta plus its frozen reference pi_ref.
class ToyPolicy {
 public:
  /// Logits uniform in [-init_scale, init_scale] under seed; the reference is
  /// a copy of the initial logits.
  ToyPolicy(int vocab_size, int max_len, int prompt_count, std::uint64_t seed,
            double init_scale = 0.1)
      : logits_(vocab_size, max_len, prompt_count) {
    std::mt19937_64 rng(seed);
    for (double& x : logits_.values()) x = init_scale * (2.0 * uniform01(rng) - 1.0);
    reference_ = logits_;
  }

  static ToyPolicy uniform(int vocab_size, int max_len, int prompt_count) {
    return ToyPolicy(vocab_size, max_len, prompt_count, 0, 0.0);
  }

  [[nodiscard]] int vocab_size() const noexcept { return logits_.vocab_size(); }
  [[nodiscard]] int max_len() const noexcept { return logits_.max_len(); }
  [[nodiscard]] int prompt_count() const noexcept { return logits_.prompt_count(); }

  [[nodiscard]] LogitTable& logits() noexcept { return logits_; }
  [[nodiscard]] const LogitTable& logits() const noexcept { return logits_; }
  [[nodiscard]] const LogitTable& reference_logits() const noexcept { return reference_; }
  [[nodiscard]] const LogitTable& table(bool reference) const noexcept {
    return reference ? reference_ : logits_;
  }

 private:
  LogitTable logits_;
  LogitTable reference_;
};

/// Throws unless y is a valid terminated sequence for the policy's shape.
inline void check_sequence(const LogitTable& t, const Sequence& y) {
  for (Token tok : y) {
    if (tok < 0 || tok >= t.vocab_size()) {
      throw Error(ErrorCode::TokenOutOfRange, "token " + std::to_string(tok) + " not in vocabulary");
    }
  }
  const auto stop = std::find(y.begin(), y.end(), kStop);
  if (y.empty() || stop != y.end() - 1 || y.size() > static_cast<std::size_t>(t.max_len())) {
    throw Error(ErrorCode::UnterminatedSequence,
                "'" + to_string(y) + "' does not end with its only stop within " +
                    std::to_string(t.max_len()) + " tokens");
  }
}

/// Per-token log-probabilities of y; the forced stop contributes 0.
inline std::vector<double> token_logprobs(const ToyPolicy& policy, int prompt, const Sequence& y,
                                          bool reference = false) {
  const LogitTable& t = policy.table(reference);
  check_sequence(t, y);
  std::vector<double> out;
  out.reserve(y.size());
  for (std::size_t n = 0; n < y.size(); ++n) {
    if (t.forced(n)) {
      out.push_back(0.0);
      continue;
    }
    const auto ctx = t.context_index(std::span<const Token>(y.data(), n));
    out.push_back(log_softmax_at(t.row(prompt, ctx), static_cast<std::size_t>(y[n])));
  }
  return out;
}

/// log pi(y | x) = sum of next-token log-probabilities.
inline double sequence_logprob(const ToyPolicy& policy, int prompt, const Sequence& y,
                               bool reference = false) {
  return numeric::sum(token_logprobs(policy, prompt, y, reference));
}

/// Every terminated sequence of length <= max_len, depth-first with the
/// stop branch first.
inline std::vector<Sequence> enumerate_sequences(int vocab_size, int max_len) {
  std::vector<Sequence> out;
  Sequence prefix;
  auto walk = [&](auto&& self) -> void {
    prefix.push_back(kStop);
    out.push_back(prefix);
    prefix.pop_back();
    if (static_cast<int>(prefix.size()) + 1 >= max_len) return;
    for (Token t = 1; t < vocab_size; ++t) {
      prefix.push_back(t);
      self(self);
      prefix.pop_back();
    }
  };
  walk(walk);
  return out;
}

struct PreferencePair {
  int prompt = 0;
  Sequence chosen;    // y_w
  Sequence rejected;  // y_l
};

inline void check_pair(const LogitTable& t, const PreferencePair& pair) {
  if (pair.chosen == pair.rejected) {
    throw Error(ErrorCode::InvalidArgument, "chosen and rejected sequences are identical");
  }
  check_sequence(t, pair.chosen);
  check_sequence(t, pair.rejected);
}

/// r_phi(x, y) as a lookup table.
struct ToyReward {
  std::map<std::pair<int, Sequence>, double> table;

  [[nodiscard]] double at(int prompt, const Sequence& y) const {
    const auto it = table.find({prompt, y});
    if (it == table.end()) {
      throw Error(ErrorCode::MissingRewardEntry,
                  "no reward for prompt " + std::to_string(prompt) + ", '" + to_string(y) + "'");
    }
    return it->second;
  }
};

/// -log sigma(r(x, y_w) - r(x, y_l)).
inline double reward_bt_loss(const ToyReward& reward, const PreferencePair& pair) {
  return -numeric::log_sigmoid(reward.at(pair.prompt, pair.chosen) -
                               reward.at(pair.prompt, pair.rejected));
}

enum class LossMethod { RewardBT, DPO, ORPO, SimPO };

inline std::string_view to_string(LossMethod m) {
  switch (m) {
    case LossMethod::RewardBT: return "RewardBT";
    case LossMethod::DPO: return "DPO";
    case LossMethod::ORPO: return "ORPO";
    case LossMethod::SimPO: return "SimPO";
  }
  return "Unknown";
}

inline LossMethod parse_loss_method(std::string_view s) {
  for (auto m : {LossMethod::RewardBT, LossMethod::DPO, LossMethod::ORPO, LossMethod::SimPO}) {
    if (s == to_string(m)) return m;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown loss method '" + std::string(s) + "'");
}

/// Objective and optimizer settings. RewardBT trains the policy's own
/// sequence log-likelihood as the Bradley-Terry reward.
struct ToyLossConfig {
  LossMethod method = LossMethod::DPO;
  double beta = 0.1;     // DPO / SimPO
  double gamma = 0.5;    // SimPO margin
  double lambda = 1.0;   // ORPO
  double learning_rate = 0.5;
  std::size_t steps = 2000;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(beta > 0.0) || !std::isfinite(beta)) throw Error(ErrorCode::InvalidArgument, "beta must be positive");
    if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw Error(ErrorCode::InvalidArgument, "gamma must be non-negative");
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw Error(ErrorCode::InvalidArgument, "lambda must be non-negative");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
      throw Error(ErrorCode::InvalidArgument, "learning_rate must be non-negative");
    }
  }
};

namespace detail {

struct PairStats {
  double chosen = 0.0;  // log pi_theta(y_w | x)
  double rejected = 0.0;
  double chosen_ref = 0.0;
  double rejected_ref = 0.0;
  double chosen_len = 0.0;  // |y_w|, stop included
  double rejected_len = 0.0;
};

inline PairStats pair_stats(const ToyPolicy& policy, const PreferencePair& pair, bool with_ref) {
  check_pair(policy.logits(), pair);
  PairStats s;
  s.chosen = sequence_logprob(policy, pair.prompt, pair.chosen);
  s.rejected = sequence_logprob(policy, pair.prompt, pair.rejected);
  if (with_ref) {
    s.chosen_ref = sequence_logprob(policy, pair.prompt, pair.chosen, true);
    s.rejected_ref = sequence_logprob(policy, pair.prompt, pair.rejected, true);
  }
  s.chosen_len = static_cast<double>(pair.chosen.size());
  s.rejected_len = static_cast<double>(pair.rejected.size());
  return s;
}

// log(p / (1 - p)) for log p = n < 0, and its derivative 1 / (1 - p).
inline double log_odds(double n) { return n - std::log(-std::expm1(n)); }
inline double log_odds_slope(double n) { return 1.0 / -std::expm1(n); }

inline void check_orpo_domain(double normalized) {
  if (!(normalized < 0.0) || !std::isfinite(normalized)) {
    throw Error(ErrorCode::DegenerateProbability,
                "length-normalized probability must lie strictly inside (0, 1)");
  }
}

/// Loss of one pair and dL/d(log pi(y_w)), dL/d(log pi(y_l)).
struct PairLoss {
  double loss = 0.0;
  double d_chosen = 0.0;
  double d_rejected = 0.0;
};

inline PairLoss pair_loss_terms(const ToyPolicy& policy, const PreferencePair& pair,
                                const ToyLossConfig& cfg) {
  const bool with_ref = cfg.method == LossMethod::DPO;
  const PairStats s = pair_stats(policy, pair, with_ref);
  PairLoss out;
  switch (cfg.method) {
    case LossMethod::RewardBT: {
      const double margin = s.chosen - s.rejected;
      const double g = numeric::sigmoid(-margin);
      out = {-numeric::log_sigmoid(margin), -g, g};
      break;
    }
    case LossMethod::DPO: {
      const double margin =
          cfg.beta * ((s.chosen - s.chosen_ref) - (s.rejected - s.rejected_ref));
      const double g = numeric::sigmoid(-margin);
      out = {-numeric::log_sigmoid(margin), -cfg.beta * g, cfg.beta * g};
      break;
    }
    case LossMethod::SimPO: {
      const double margin = cfg.beta * s.chosen / s.chosen_len -
                            cfg.beta * s.rejected / s.rejected_len - cfg.gamma;
      const double g = numeric::sigmoid(-margin);
      out = {-numeric::log_sigmoid(margin), -g * cfg.beta / s.chosen_len,
             g * cfg.beta / s.rejected_len};
      break;
    }
    case LossMethod::ORPO: {
      const double nw = s.chosen / s.chosen_len;  // log p_theta(y_w | x)
      const double nl = s.rejected / s.rejected_len;
      check_orpo_domain(nw);
      check_orpo_domain(nl);
      const double u = log_odds(nw) - log_odds(nl);
      const double g = numeric::sigmoid(-u);
      out.loss = -nw - cfg.lambda * numeric::log_sigmoid(u);
      out.d_chosen = (-1.0 - cfg.lambda * g * log_odds_slope(nw)) / s.chosen_len;
      out.d_rejected = (cfg.lambda * g * log_odds_slope(nl)) / s.rejected_len;
      break;
    }
  }
  return out;
}

// grad += coef * d log pi(y) / d logits.
inline void accumulate_sequence_gradient(const ToyPolicy& policy, int prompt, const Sequence& y,
                                         double coef, LogitTable& grad) {
  const LogitTable& t = policy.logits();
  for (std::size_t n = 0; n < y.size(); ++n) {
    if (t.forced(n)) continue;
    const auto ctx = t.context_index(std::span<const Token>(y.data(), n));
    const auto p = softmax(t.row(prompt, ctx));
    auto g = grad.row(prompt, ctx);
    for (std::size_t k = 0; k < p.size(); ++k) {
      g[k] += coef * ((static_cast<std::size_t>(y[n]) == k ? 1.0 : 0.0) - p[k]);
    }
  }
}

}  // namespace detail

/// -log sigma(beta * (log pi/pi_ref (y_w) - log pi/pi_ref (y_l))).
inline double dpo_loss(const ToyPolicy& policy, const PreferencePair& pair,
                       const ToyLossConfig& cfg) {
  ToyLossConfig c = cfg;
  c.method = LossMethod::DPO;
  return detail::pair_loss_terms(policy, pair, c).loss;
}

/// -log p(y_w) - lambda * log sigma(log odds p(y_w) - log odds p(y_l)), with
/// p(y) = exp(log pi(y) / |y|).
inline double orpo_loss(const ToyPolicy& policy, const PreferencePair& pair,
                        const ToyLossConfig& cfg) {
  ToyLossConfig c = cfg;
  c.method = LossMethod::ORPO;
  return detail::pair_loss_terms(policy, pair, c).loss;
}

/// -log sigma(beta/|y_w| log pi(y_w) - beta/|y_l| log pi(y_l) - gamma).
inline double simpo_loss(const ToyPolicy& policy, const PreferencePair& pair,
                         const ToyLossConfig& cfg) {
  ToyLossConfig c = cfg;
  c.method = LossMethod::SimPO;
  return detail::pair_loss_terms(policy, pair, c).loss;
}

/// Bradley-Terry loss with the policy's log-likelihood as the reward.
inline double policy_bt_loss(const ToyPolicy& policy, const PreferencePair& pair) {
  ToyLossConfig c;
  c.method = LossMethod::RewardBT;
  return detail::pair_loss_terms(policy, pair, c).loss;
}

inline double pair_loss(const ToyPolicy& policy, const PreferencePair& pair,
                        const ToyLossConfig& cfg) {
  return detail::pair_loss_terms(policy, pair, cfg).loss;
}

struct LossAndGradient {
  double loss = 0.0;
  LogitTable gradient;
};

/// Mean batch loss and its analytic gradient with respect to every logit.
/// Terms are reduced in batch order.
inline LossAndGradient loss_and_gradient(const ToyPolicy& policy,
                                         std::span<const PreferencePair> batch,
                                         const ToyLossConfig& cfg) {
  if (batch.empty()) throw Error(ErrorCode::EmptyInput, "empty preference batch");
  cfg.validate();
  const auto& shape = policy.logits();
  LossAndGradient out{0.0, LogitTable(shape.vocab_size(), shape.max_len(), shape.prompt_count())};
  const double scale = 1.0 / static_cast<double>(batch.size());
  numeric::CompensatedSum total;
  for (const auto& pair : batch) {
    const auto terms = detail::pair_loss_terms(policy, pair, cfg);
    total.add(terms.loss);
    detail::accumulate_sequence_gradient(policy, pair.prompt, pair.chosen,
                                         scale * terms.d_chosen, out.gradient);
    detail::accumulate_sequence_gradient(policy, pair.prompt, pair.rejected,
                                         scale * terms.d_rejected, out.gradient);
  }
  out.loss = total.value() * scale;
  return out;
}

inline LogitTable loss_gradient(const ToyPolicy& policy, std::span<const PreferencePair> batch,
                                const ToyLossConfig& cfg) {
  return loss_and_gradient(policy, batch, cfg).gradient;
}

inline double batch_loss(const ToyPolicy& policy, std::span<const PreferencePair> batch,
                         const ToyLossConfig& cfg) {
  if (batch.empty()) throw Error(ErrorCode::EmptyInput, "empty preference batch");
  numeric::CompensatedSum total;
  for (const auto& pair : batch) total.add(pair_loss(policy, pair, cfg));
  return total.value() / static_cast<double>(batch.size());
}

struct TrainResult {
  ToyPolicy policy;
  std::vector<double> loss_trace;  // loss before each update
};

/// Full-batch gradient descent for cfg.steps steps.
inline TrainResult train(ToyPolicy policy, std::span<const PreferencePair> pairs,
                         const ToyLossConfig& cfg) {
  if (cfg.steps == 0) throw Error(ErrorCode::InvalidArgument, "steps must be at least 1");
  cfg.validate();
  TrainResult out{std::move(policy), {}};
  out.loss_trace.reserve(cfg.steps);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    auto [loss, grad] = loss_and_gradient(out.policy, pairs, cfg);
    if (!std::isfinite(loss)) throw NonFiniteLossError(step);
    out.loss_trace.push_back(loss);
    auto& theta = out.policy.logits().values();
    const auto& g = grad.values();
    for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= cfg.learning_rate * g[i];
  }
  return out;
}

}  // namespace heal::toylab
