#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "heal/experiment.hpp"
#include "heal/toylab.hpp"
#include "toy_oracles.hpp"

using namespace heal;
using namespace heal::toylab;

namespace {

const double kLn2 = std::numbers::ln2;

double total_probability(const ToyPolicy& policy, int prompt) {
  double total = 0;
  for (const auto& y : enumerate_sequences(policy.vocab_size(), policy.max_len())) {
    total += std::exp(sequence_logprob(policy, prompt, y));
  }
  return total;
}

}  // namespace

TEST(Sequence, StringRoundTrip) {
  const Sequence y{2, 1, 0};
  EXPECT_EQ(to_string(y), "2-1-0");
  EXPECT_EQ(parse_sequence("2-1-0"), y);
  EXPECT_THROW(parse_sequence("2--0"), Error);
  EXPECT_THROW(parse_sequence(""), Error);
}

TEST(Sequence, Validation) {
  const ToyPolicy policy(4, 3, 1, 0);
  EXPECT_NO_THROW(check_sequence(policy.logits(), Sequence{1, 2, 0}));
  try {
    check_sequence(policy.logits(), Sequence{1, 2});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnterminatedSequence);
  }
  try {
    check_sequence(policy.logits(), Sequence{4, 0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::TokenOutOfRange);
  }
  EXPECT_THROW(check_sequence(policy.logits(), Sequence{1, 2, 3, 0}), Error);
  EXPECT_THROW(check_sequence(policy.logits(), Sequence{0, 1, 0}), Error);
}

TEST(Enumerate, CountsAndOrder) {
  const auto seqs = enumerate_sequences(4, 3);
  ASSERT_EQ(seqs.size(), 13u);
  EXPECT_EQ(seqs[0], (Sequence{0}));
  EXPECT_EQ(seqs[1], (Sequence{1, 0}));
  EXPECT_EQ(seqs[2], (Sequence{1, 1, 0}));
  EXPECT_EQ(enumerate_sequences(3, 4).size(), 1u + 2u + 4u + 8u);
  EXPECT_EQ(enumerate_sequences(5, 1).size(), 1u);
}

TEST(Policy, ProbabilitiesSumToOne) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const ToyPolicy policy(3 + static_cast<int>(seed % 3), 2 + static_cast<int>(seed % 3), 2, seed, 3.0);
    for (int p = 0; p < 2; ++p) EXPECT_NEAR(total_probability(policy, p), 1.0, 1e-12);
  }
}

TEST(Policy, UniformLogprobs) {
  const auto policy = ToyPolicy::uniform(4, 4, 1);
  EXPECT_NEAR(sequence_logprob(policy, 0, {1, 2, 0}), -4.1588830833596715, 1e-12);
  const auto lps = token_logprobs(policy, 0, {1, 2, 3, 0});
  EXPECT_EQ(lps.back(), 0.0);
}

TEST(Policy, SeededInitIsDeterministic) {
  EXPECT_EQ(ToyPolicy(4, 3, 2, 7).logits().values(), ToyPolicy(4, 3, 2, 7).logits().values());
  EXPECT_NE(ToyPolicy(4, 3, 2, 7).logits().values(), ToyPolicy(4, 3, 2, 8).logits().values());
}

TEST(Softmax, SumsToOneAndShiftInvariant) {
  const std::vector<double> l{1000.0, 999.0, -5.0};
  const auto p = softmax(l);
  EXPECT_NEAR(p[0] + p[1] + p[2], 1.0, 1e-15);
  std::vector<double> shifted = l;
  for (double& x : shifted) x -= 1234.5;
  EXPECT_NEAR(log_softmax_at(l, 1), log_softmax_at(shifted, 1), 1e-12);
}

TEST(Losses, InvariantUnderContextShift) {
  std::mt19937_64 rng(1);
  for (auto method : {LossMethod::RewardBT, LossMethod::DPO, LossMethod::ORPO, LossMethod::SimPO}) {
    auto inst = oracle::random_instance(rng, method);
    const double before = batch_loss(inst.policy, inst.batch, inst.cfg);
    auto row = inst.policy.logits().row(0, 0);
    for (double& x : row) x += 3.25;
    EXPECT_NEAR(batch_loss(inst.policy, inst.batch, inst.cfg), before, 1e-12);
  }
}

TEST(Losses, DpoAtReferenceIsLn2) {
  const ToyPolicy policy(4, 3, 2, 5, 1.0);
  const auto seqs = enumerate_sequences(4, 3);
  for (double beta : {0.01, 0.05, 0.1, 3.0}) {
    ToyLossConfig cfg;
    cfg.beta = beta;
    for (std::size_t i = 1; i < seqs.size(); ++i) {
      EXPECT_NEAR(dpo_loss(policy, {1, seqs[0], seqs[i]}, cfg), kLn2, 1e-12);
    }
  }
}

TEST(Losses, ClosedFormValues) {
  const auto policy = ToyPolicy::uniform(4, 3, 1);
  // Under the uniform policy log pi("0") = -ln 4, log pi("1-0") = -2 ln 4.
  const PreferencePair pair{0, {0}, {1, 0}};
  ToyLossConfig cfg;
  cfg.beta = 1.0;
  cfg.gamma = 0.2;
  const double ln4 = std::log(4.0);
  // SimPO margin: -ln4 - (-ln4) - gamma = -gamma
  EXPECT_NEAR(simpo_loss(policy, pair, cfg), -numeric::log_sigmoid(-0.2), 1e-14);
  EXPECT_NEAR(policy_bt_loss(policy, pair), -numeric::log_sigmoid(ln4), 1e-14);
  // ORPO: p = 1/4 for both, so the odds term is ln 2.
  cfg.lambda = 0.5;
  EXPECT_NEAR(orpo_loss(policy, pair, cfg), ln4 + 0.5 * kLn2, 1e-14);
  ToyReward reward;
  reward.table[{0, Sequence{0}}] = 1.2;
  reward.table[{0, Sequence{1, 0}}] = 1.0;
  EXPECT_NEAR(reward_bt_loss(reward, pair), 0.5981388693815918, 1e-15);
  EXPECT_THROW(reward_bt_loss(reward, {0, {0}, {2, 0}}), Error);
}

TEST(Gradient, MatchesFiniteDifferences) {
  std::mt19937_64 rng(2024);
  for (auto method : {LossMethod::RewardBT, LossMethod::DPO, LossMethod::ORPO, LossMethod::SimPO}) {
    for (int i = 0; i < 10; ++i) {
      const auto inst = oracle::random_instance(rng, method);
      const auto check = oracle::check_gradient(inst.policy, inst.batch, inst.cfg);
      EXPECT_LT(check.max_relative_error, 1e-4) << to_string(method);
      EXPECT_LT(check.max_abs_error_on_zero, 1e-8) << to_string(method);
      EXPECT_GT(check.compared, 0u);
    }
  }
}

TEST(Gradient, SymmetricBatchCancels) {
  const std::vector<PreferencePair> batch{{0, {1, 2, 0}, {1, 3, 0}}, {0, {1, 3, 0}, {1, 2, 0}}};
  ToyLossConfig cfg;
  const auto at_reference = loss_gradient(ToyPolicy(4, 3, 1, 3, 1.0), batch, cfg);
  for (double x : at_reference.values()) EXPECT_NEAR(x, 0.0, 1e-15);
  const auto uniform = ToyPolicy::uniform(4, 3, 1);
  cfg.gamma = 0.0;
  for (auto method : {LossMethod::RewardBT, LossMethod::SimPO}) {
    cfg.method = method;
    const auto g = loss_gradient(uniform, batch, cfg);
    for (double x : g.values()) EXPECT_NEAR(x, 0.0, 1e-15);
  }
}

TEST(Train, ReachesThreeToOneMinimum) {
  // Two sequences; "0" preferred three times, "1-0" once. The mean DPO loss
  // is minimal where sigma(margin) = 3/4.
  const ToyPolicy policy(2, 2, 1, 11, 0.3);
  const PreferencePair fwd{0, {0}, {1, 0}}, back{0, {1, 0}, {0}};
  const std::vector<PreferencePair> batch{fwd, fwd, fwd, back};
  ToyLossConfig cfg;
  cfg.beta = 1.0;
  cfg.learning_rate = 2.0;
  cfg.steps = 4000;
  const auto result = train(policy, batch, cfg);
  const double margin = sequence_logprob(result.policy, 0, {0}) -
                        sequence_logprob(result.policy, 0, {0}, true) -
                        sequence_logprob(result.policy, 0, {1, 0}) +
                        sequence_logprob(result.policy, 0, {1, 0}, true);
  EXPECT_NEAR(numeric::sigmoid(margin), 0.75, 1e-9);
  EXPECT_LT(loss_gradient(result.policy, batch, cfg).norm(), 1e-6);
  const double optimum = (3 * -std::log(0.75) - std::log(0.25)) / 4;
  EXPECT_NEAR(result.loss_trace.back(), optimum, 1e-12);
}

TEST(Train, ZeroLearningRateIsNoOp) {
  const ToyPolicy policy(4, 3, 2, 4);
  const std::vector<PreferencePair> batch{{0, {1, 0}, {2, 2, 0}}, {1, {0}, {3, 0}}};
  ToyLossConfig cfg;
  cfg.learning_rate = 0.0;
  cfg.steps = 25;
  const auto result = train(policy, batch, cfg);
  EXPECT_EQ(result.policy.logits().values(), policy.logits().values());
  ASSERT_EQ(result.loss_trace.size(), 25u);
  for (double l : result.loss_trace) EXPECT_EQ(l, result.loss_trace.front());
}

TEST(Train, SinglePairDropsBelowLn2) {
  const ToyPolicy policy(3, 3, 1, 9);
  const std::vector<PreferencePair> batch{{0, {2, 1, 0}, {0}}};
  ToyLossConfig cfg;
  cfg.steps = 200;
  const auto result = train(policy, batch, cfg);
  EXPECT_NEAR(result.loss_trace.front(), kLn2, 1e-12);
  EXPECT_LT(batch_loss(result.policy, batch, cfg), kLn2);
}

TEST(Train, TraceNonIncreasingAtSmallStep) {
  for (auto method : {LossMethod::RewardBT, LossMethod::DPO, LossMethod::ORPO, LossMethod::SimPO}) {
    const ToyPolicy policy(3, 3, 2, 21);
    const std::vector<PreferencePair> batch{
        {0, {1, 0}, {2, 1, 0}}, {0, {0}, {2, 0}}, {1, {2, 2, 0}, {1, 0}}};
    ToyLossConfig cfg;
    cfg.method = method;
    cfg.learning_rate = 0.05;
    cfg.steps = 300;
    const auto trace = train(policy, batch, cfg).loss_trace;
    for (std::size_t i = 1; i < trace.size(); ++i) {
      EXPECT_LE(trace[i], trace[i - 1] + 1e-15) << to_string(method) << " step " << i;
    }
  }
}

TEST(Train, Errors) {
  const ToyPolicy policy(3, 3, 1, 0);
  const std::vector<PreferencePair> batch{{0, {1, 0}, {0}}};
  ToyLossConfig cfg;
  cfg.steps = 0;
  EXPECT_THROW(train(policy, batch, cfg), Error);
  cfg.steps = 5;
  cfg.beta = -1.0;
  EXPECT_THROW(train(policy, batch, cfg), Error);
  cfg.beta = 0.1;
  EXPECT_THROW(train(policy, std::vector<PreferencePair>{}, cfg), Error);
  EXPECT_THROW(train(policy, std::vector<PreferencePair>{{0, {1, 0}, {1, 0}}}, cfg), Error);
  EXPECT_THROW(train(policy, std::vector<PreferencePair>{{3, {1, 0}, {0}}}, cfg), Error);
}

TEST(Train, DivergenceIsReported) {
  ExperimentSpec spec;
  spec.loss.method = LossMethod::RewardBT;
  spec.loss.learning_rate = 1e308;
  spec.loss.steps = 10;
  try {
    run_experiment(spec);
    FAIL();
  } catch (const NonFiniteLossError& e) {
    EXPECT_GE(e.step(), 1u);
    EXPECT_EQ(e.code(), ErrorCode::NonFiniteLoss);
  }
}

TEST(Experiment, ZeroStepsLeavesPolicyUnchanged) {
  ExperimentSpec spec;
  spec.loss.steps = 0;
  const auto r = run_experiment(spec);
  EXPECT_EQ(r.before.dataset_ra, r.after.dataset_ra);
  EXPECT_EQ(r.before.dataset_psc, r.after.dataset_psc);
  EXPECT_TRUE(r.loss_trace.empty());
  EXPECT_EQ(r.training_pairs, 4u * 78u);
}

TEST(Experiment, PolicyGoldGivesPerfectBeforeRa) {
  ExperimentSpec spec;
  spec.gold = GoldKind::Policy;
  spec.loss.steps = 0;
  const auto r = run_experiment(spec);
  EXPECT_EQ(r.before.dataset_ra, 1.0);
  EXPECT_NEAR(r.before.dataset_psc, 1.0, 1e-12);
  EXPECT_EQ(r.upset.count({"initial"}) + r.upset.count({"initial", "trained"}), r.upset.total_pairs);
}

TEST(Experiment, TrainingMovesTowardGold) {
  ExperimentSpec spec;
  spec.gold = GoldKind::Teacher;
  spec.loss.steps = 300;
  const auto r = run_experiment(spec);
  EXPECT_GT(r.after.dataset_ra, r.before.dataset_ra);
  EXPECT_GT(r.after.dataset_psc, r.before.dataset_psc);
  spec.pair_rule = PairRule::Flipped;
  EXPECT_LT(run_experiment(spec).after.dataset_ra, r.before.dataset_ra);
}

TEST(Experiment, SampledPairsAreConsistentWithGold) {
  ExperimentSpec spec;
  spec.pair_rule = PairRule::Sample;
  spec.pairs_per_prompt = 10;
  spec.pair_seed = 3;
  const ToyPolicy initial(spec.vocab_size, spec.max_len, spec.prompt_count, spec.loss.seed);
  const auto gold = gold_scores(spec, initial);
  const auto pairs = sample_pairs(spec, gold);
  ASSERT_EQ(pairs.size(), 40u);
  for (const auto& p : pairs) EXPECT_GT(gold.at(p.prompt).at(p.chosen), gold.at(p.prompt).at(p.rejected));
  EXPECT_EQ(sample_pairs(spec, gold).front().chosen, pairs.front().chosen);
  spec.pairs_per_prompt = 79;
  EXPECT_THROW(sample_pairs(spec, gold), Error);
}

TEST(Experiment, GoldTableMustBeTotalOrder) {
  ExperimentSpec spec;
  spec.vocab_size = 2;
  spec.max_len = 2;
  spec.prompt_count = 1;
  spec.gold = GoldKind::Table;
  spec.gold_table[0] = {{Sequence{0}, 1.0}, {Sequence{1, 0}, 1.0}};
  const ToyPolicy initial(2, 2, 1, 0);
  EXPECT_THROW(gold_scores(spec, initial), Error);
  spec.gold_table[0][Sequence{1, 0}] = 2.0;
  EXPECT_NO_THROW(gold_scores(spec, initial));
  spec.gold_table.clear();
  EXPECT_THROW(gold_scores(spec, initial), Error);
}

TEST(Experiment, SpecJsonRoundTripAndDeterminism) {
  const auto doc = nlohmann::json::parse(R"({
    "vocab_size": 3, "max_len": 3, "prompt_count": 2, "indicator": "ll-norm",
    "gold": {"kind": "teacher", "seed": 4, "scale": 2.0},
    "pairs": {"rule": "sample", "per_prompt": 5, "seed": 1},
    "loss": {"method": "SimPO", "beta": 2.5, "gamma": 0.5, "learning_rate": 0.5, "steps": 50, "seed": 2}
  })");
  const auto spec = parse_experiment_spec(doc);
  EXPECT_EQ(spec.loss.method, LossMethod::SimPO);
  EXPECT_EQ(spec.teacher_scale, 2.0);
  EXPECT_EQ(spec.indicator.kind, IndicatorKind::LengthNormalizedLogLikelihood);
  const auto again = parse_experiment_spec(nlohmann::json::parse(to_json(spec).dump()));
  EXPECT_EQ(to_json(again).dump(), to_json(spec).dump());
  EXPECT_EQ(to_json(run_experiment(spec)).dump(), to_json(run_experiment(again)).dump());
}

TEST(Experiment, SpecErrors) {
  using nlohmann::json;
  EXPECT_THROW(parse_experiment_spec(json::array()), Error);
  EXPECT_THROW(parse_experiment_spec(json{{"gold", {{"kind", "oracle"}}}}), Error);
  EXPECT_THROW(parse_experiment_spec(json{{"pairs", {{"rule", "some"}}}}), Error);
  EXPECT_THROW(parse_experiment_spec(json{{"indicator", "gold:x"}}), Error);
  EXPECT_THROW(parse_experiment_spec(json{{"loss", {{"method", "PPO"}}}}), Error);
  EXPECT_THROW(parse_experiment_spec(json{{"vocab_size", "four"}}), Error);
}
