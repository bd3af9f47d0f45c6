#pragma once

// Finite-difference checks for the toy policy losses.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "heal/toylab.hpp"
#include "oracles.hpp"

namespace oracle {

struct GradientCheck {
  double max_relative_error = 0.0;
  double max_abs_error_on_zero = 0.0;  // where the analytic entry is exactly 0
  std::size_t compared = 0;
};

inline GradientCheck check_gradient(heal::toylab::ToyPolicy policy,
                                    const std::vector<heal::toylab::PreferencePair>& batch,
                                    const heal::toylab::ToyLossConfig& cfg, double h = 1e-5) {
  using namespace heal::toylab;
  const auto analytic = loss_gradient(policy, batch, cfg).values();
  auto& theta = policy.logits().values();
  const auto numeric =
      central_differences(theta, [&] { return batch_loss(policy, batch, cfg); }, h);
  GradientCheck out;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    if (analytic[i] == 0.0) {
      out.max_abs_error_on_zero = std::max(out.max_abs_error_on_zero, std::abs(numeric[i]));
      continue;
    }
    const double rel = std::abs(analytic[i] - numeric[i]) /
                       std::max(std::abs(analytic[i]), std::abs(numeric[i]));
    out.max_relative_error = std::max(out.max_relative_error, rel);
    ++out.compared;
  }
  return out;
}

struct ToyInstance {
  heal::toylab::ToyPolicy policy;
  std::vector<heal::toylab::PreferencePair> batch;
  heal::toylab::ToyLossConfig cfg;
};

/// Random instance for the given loss; the policy starts off its reference.
inline ToyInstance random_instance(std::mt19937_64& rng, heal::toylab::LossMethod method) {
  using namespace heal::toylab;
  std::uniform_int_distribution<int> vocab(2, 5), len(2, 4), prompts(1, 3), batch(1, 6);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int v = vocab(rng), l = len(rng), p = prompts(rng);
  ToyPolicy policy(v, l, p, rng(), 0.5 + 1.5 * unit(rng));
  for (double& x : policy.logits().values()) x += 0.5 * (2.0 * unit(rng) - 1.0);
  const auto seqs = enumerate_sequences(v, l);
  std::uniform_int_distribution<std::size_t> pick(0, seqs.size() - 1);
  std::uniform_int_distribution<int> prompt(0, p - 1);
  std::vector<PreferencePair> pairs;
  const int n = batch(rng);
  while (static_cast<int>(pairs.size()) < n) {
    const auto a = pick(rng), b = pick(rng);
    if (a == b) continue;
    pairs.push_back({prompt(rng), seqs[a], seqs[b]});
  }
  ToyLossConfig cfg;
  cfg.method = method;
  cfg.beta = 0.05 + 2.5 * unit(rng);
  cfg.gamma = unit(rng);
  cfg.lambda = 0.1 + 2.0 * unit(rng);
  return {std::move(policy), std::move(pairs), cfg};
}

}  // namespace oracle
