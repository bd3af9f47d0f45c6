#pragma once

// End-to-end toy experiment. Each prompt's full hypothesis space is scored by
// the toy policy before and after training on gold-ordered pairs.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "heal/analysis.hpp"
#include "heal/core.hpp"
#include "heal/metrics.hpp"
#include "heal/report.hpp"
#include "heal/toylab.hpp"

namespace heal::toylab {

inline constexpr const char* kGoldDimension = "gold";

enum class GoldKind {
  Random,  // seeded random permutation ranks per prompt
  Teacher, // log-likelihoods under a hidden tabular policy, so the order is
           // exactly representable by the model class
  Policy,  // the initial policy's own log-likelihoods
  Table,   // explicit scores
};

enum class PairRule {
  All,      // every gold-ordered pair
  Flipped,  // every gold-ordered pair with chosen / rejected swapped
  Sample,   // pairs_per_prompt pairs drawn without replacement
};

struct ExperimentSpec {
  int vocab_size = 4;
  int max_len = 3;
  int prompt_count = 4;
  GoldKind gold = GoldKind::Random;
  std::uint64_t gold_seed = 0;
  double teacher_scale = 1.0;  // GoldKind::Teacher logits uniform in [-scale, scale]
  std::map<int, std::map<Sequence, double>> gold_table;  // GoldKind::Table
  PairRule pair_rule = PairRule::All;
  std::size_t pairs_per_prompt = 0;  // PairRule::Sample
  std::uint64_t pair_seed = 0;
  IndicatorConfig indicator = IndicatorConfig::log_likelihood();
  ToyLossConfig loss;
};

struct ExperimentReport {
  ExperimentSpec spec;
  EvalReport before;
  EvalReport after;
  std::vector<double> loss_trace;
  UpsetTable upset;  // methods "initial" and "trained" against the gold pairs
  std::size_t training_pairs = 0;
};

/// Gold score per prompt and sequence for the spec's gold kind.
inline std::map<int, std::map<Sequence, double>> gold_scores(const ExperimentSpec& spec,
                                                             const ToyPolicy& initial) {
  const auto sequences = enumerate_sequences(spec.vocab_size, spec.max_len);
  std::map<int, std::map<Sequence, double>> gold;
  switch (spec.gold) {
    case GoldKind::Random: {
      std::mt19937_64 rng(spec.gold_seed);
      for (int p = 0; p < spec.prompt_count; ++p) {
        std::vector<double> ranks(sequences.size());
        for (std::size_t i = 0; i < ranks.size(); ++i) ranks[i] = static_cast<double>(i);
        for (std::size_t i = ranks.size(); i > 1; --i) {
          const auto j = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i));
          std::swap(ranks[i - 1], ranks[std::min(j, i - 1)]);
        }
        for (std::size_t i = 0; i < sequences.size(); ++i) gold[p][sequences[i]] = ranks[i];
      }
      break;
    }
    case GoldKind::Teacher: {
      // Separate stream so gold seed s and policy seed s do not share logits.
      std::uint64_t z = spec.gold_seed + 0x9e3779b97f4a7c15ULL * 0x5445ULL;
      z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
      z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
      z ^= z >> 31;
      const ToyPolicy teacher(spec.vocab_size, spec.max_len, spec.prompt_count, z,
                              spec.teacher_scale);
      for (int p = 0; p < spec.prompt_count; ++p) {
        for (const auto& y : sequences) gold[p][y] = sequence_logprob(teacher, p, y);
      }
      break;
    }
    case GoldKind::Policy:
      for (int p = 0; p < spec.prompt_count; ++p) {
        for (const auto& y : sequences) gold[p][y] = sequence_logprob(initial, p, y, true);
      }
      break;
    case GoldKind::Table:
      for (int p = 0; p < spec.prompt_count; ++p) {
        const auto it = spec.gold_table.find(p);
        for (const auto& y : sequences) {
          if (it == spec.gold_table.end() || !it->second.contains(y)) {
            throw Error(ErrorCode::InvalidArgument, "gold table lacks prompt " +
                                                        std::to_string(p) + ", '" + to_string(y) +
                                                        "'");
          }
          gold[p][y] = it->second.at(y);
        }
      }
      break;
  }
  for (const auto& [p, scores] : gold) {
    std::vector<double> vals;
    for (const auto& [y, s] : scores) vals.push_back(s);
    std::sort(vals.begin(), vals.end());
    if (std::adjacent_find(vals.begin(), vals.end()) != vals.end()) {
      throw Error(ErrorCode::InvalidArgument,
                  "gold scores of prompt " + std::to_string(p) + " are not a total order");
    }
  }
  return gold;
}

/// Training pairs from the gold ordering, in prompt then enumeration order.
inline std::vector<PreferencePair> sample_pairs(
    const ExperimentSpec& spec, const std::map<int, std::map<Sequence, double>>& gold) {
  const auto sequences = enumerate_sequences(spec.vocab_size, spec.max_len);
  std::vector<PreferencePair> out;
  std::mt19937_64 rng(spec.pair_seed);
  for (int p = 0; p < spec.prompt_count; ++p) {
    std::vector<PreferencePair> all;
    for (std::size_t i = 0; i + 1 < sequences.size(); ++i) {
      for (std::size_t j = i + 1; j < sequences.size(); ++j) {
        const auto& a = sequences[i];
        const auto& b = sequences[j];
        const bool a_better = gold.at(p).at(a) > gold.at(p).at(b);
        PreferencePair pair{p, a_better ? a : b, a_better ? b : a};
        if (spec.pair_rule == PairRule::Flipped) std::swap(pair.chosen, pair.rejected);
        all.push_back(std::move(pair));
      }
    }
    if (spec.pair_rule == PairRule::Sample) {
      if (spec.pairs_per_prompt == 0 || spec.pairs_per_prompt > all.size()) {
        throw Error(ErrorCode::InvalidArgument,
                    "pairs_per_prompt must be in [1, " + std::to_string(all.size()) + "]");
      }
      // Partial Fisher-Yates; the chosen prefix keeps draw order.
      for (std::size_t i = 0; i < spec.pairs_per_prompt; ++i) {
        const auto span = static_cast<double>(all.size() - i);
        const auto j = i + std::min(static_cast<std::size_t>(uniform01(rng) * span),
                                    all.size() - i - 1);
        std::swap(all[i], all[j]);
      }
      all.resize(spec.pairs_per_prompt);
    }
    for (auto& pair : all) out.push_back(std::move(pair));
  }
  return out;
}

/// Hypothesis spaces "p<index>" with one hypothesis per enumerable sequence,
/// carrying the policy's token trace and the gold score.
inline ScoredDataset policy_dataset(const ToyPolicy& policy,
                                    const std::map<int, std::map<Sequence, double>>& gold) {
  ScoredDataset ds;
  const auto sequences = enumerate_sequences(policy.vocab_size(), policy.max_len());
  for (int p = 0; p < policy.prompt_count(); ++p) {
    HypothesisSpace space{"p" + std::to_string(p), "toy prompt " + std::to_string(p), {}};
    for (const auto& y : sequences) {
      Hypothesis h;
      h.id = to_string(y);
      h.token_logprobs = token_logprobs(policy, p, y);
      h.token_count = y.size();
      h.gold_scores[kGoldDimension] = gold.at(p).at(y);
      space.hypotheses.push_back(std::move(h));
    }
    ds.spaces.push_back(std::move(space));
  }
  ds.metadata["toy.length_counts_stop"] = "true";
  ds.metadata["toy.forced_stop_depth"] = std::to_string(policy.max_len());
  return ds;
}

inline ExperimentReport run_experiment(const ExperimentSpec& spec) {
  spec.loss.validate();
  const ToyPolicy initial(spec.vocab_size, spec.max_len, spec.prompt_count, spec.loss.seed);
  const auto gold = gold_scores(spec, initial);
  const auto pairs = sample_pairs(spec, gold);
  const auto gold_ind = IndicatorConfig::gold(kGoldDimension);

  ExperimentReport report;
  report.spec = spec;
  report.training_pairs = pairs.size();
  const auto before_ds = policy_dataset(initial, gold);
  report.before = evaluate_dataset(before_ds, spec.indicator, gold_ind);

  ToyPolicy trained = initial;
  if (spec.loss.steps > 0) {
    auto result = train(initial, pairs, spec.loss);
    trained = std::move(result.policy);
    report.loss_trace = std::move(result.loss_trace);
  }
  const auto after_ds = policy_dataset(trained, gold);
  report.after = evaluate_dataset(after_ds, spec.indicator, gold_ind);

  const auto gold_pairs = gold_preferred_pairs(before_ds, gold_ind);
  report.upset = upset_intersections(
      gold_pairs, {{"initial", agreement_set(gold_pairs, before_ds, spec.indicator)},
                   {"trained", agreement_set(gold_pairs, after_ds, spec.indicator)}});
  return report;
}

// ---------------------------------------------------------------------------
// JSON spec / report

inline std::string to_string(GoldKind k) {
  switch (k) {
    case GoldKind::Random: return "random";
    case GoldKind::Teacher: return "teacher";
    case GoldKind::Policy: return "policy";
    case GoldKind::Table: return "table";
  }
  return "unknown";
}

inline std::string to_string(PairRule r) {
  switch (r) {
    case PairRule::All: return "all";
    case PairRule::Flipped: return "flipped";
    case PairRule::Sample: return "sample";
  }
  return "unknown";
}

/// Parses the experiment spec document. Absent fields keep their defaults.
inline ExperimentSpec parse_experiment_spec(const nlohmann::json& j) {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::InvalidArgument, what); };
  if (!j.is_object()) fail("experiment spec must be a JSON object");
  ExperimentSpec spec;
  try {
    spec.vocab_size = j.value("vocab_size", spec.vocab_size);
    spec.max_len = j.value("max_len", spec.max_len);
    spec.prompt_count = j.value("prompt_count", spec.prompt_count);
    if (j.contains("indicator")) spec.indicator = parse_indicator(j.at("indicator").get<std::string>());
    if (spec.indicator.kind == IndicatorKind::GoldDimension) fail("indicator must be ll or ll-norm");
    if (j.contains("gold")) {
      const auto& g = j.at("gold");
      const auto kind = g.value("kind", std::string("random"));
      if (kind == "random") {
        spec.gold = GoldKind::Random;
        spec.gold_seed = g.value("seed", std::uint64_t{0});
      } else if (kind == "teacher") {
        spec.gold = GoldKind::Teacher;
        spec.gold_seed = g.value("seed", std::uint64_t{0});
        spec.teacher_scale = g.value("scale", 1.0);
        if (!(spec.teacher_scale > 0.0)) fail("teacher scale must be positive");
      } else if (kind == "policy") {
        spec.gold = GoldKind::Policy;
      } else if (kind == "table") {
        spec.gold = GoldKind::Table;
        for (const auto& [prompt, scores] : g.at("scores").items()) {
          for (const auto& [seq, score] : scores.items()) {
            spec.gold_table[std::stoi(prompt)][parse_sequence(seq)] = score.get<double>();
          }
        }
      } else {
        fail("unknown gold kind '" + kind + "'");
      }
    }
    if (j.contains("pairs")) {
      const auto& p = j.at("pairs");
      const auto rule = p.value("rule", std::string("all"));
      if (rule == "all") {
        spec.pair_rule = PairRule::All;
      } else if (rule == "flipped") {
        spec.pair_rule = PairRule::Flipped;
      } else if (rule == "sample") {
        spec.pair_rule = PairRule::Sample;
        spec.pairs_per_prompt = p.at("per_prompt").get<std::size_t>();
      } else {
        fail("unknown pair rule '" + rule + "'");
      }
      spec.pair_seed = p.value("seed", std::uint64_t{0});
    }
    if (j.contains("loss")) {
      const auto& l = j.at("loss");
      spec.loss.method = parse_loss_method(l.value("method", std::string("DPO")));
      spec.loss.beta = l.value("beta", spec.loss.beta);
      spec.loss.gamma = l.value("gamma", spec.loss.gamma);
      spec.loss.lambda = l.value("lambda", spec.loss.lambda);
      spec.loss.learning_rate = l.value("learning_rate", spec.loss.learning_rate);
      spec.loss.steps = l.value("steps", spec.loss.steps);
      spec.loss.seed = l.value("seed", spec.loss.seed);
    }
  } catch (const nlohmann::json::exception& e) {
    fail(std::string("malformed experiment spec: ") + e.what());
  } catch (const std::logic_error& e) {  // stoi
    fail(std::string("malformed experiment spec: ") + e.what());
  }
  return spec;
}

inline ojson to_json(const ExperimentSpec& spec) {
  ojson j;
  j["vocab_size"] = spec.vocab_size;
  j["max_len"] = spec.max_len;
  j["prompt_count"] = spec.prompt_count;
  j["indicator"] = spec.indicator.label();
  ojson gold;
  gold["kind"] = to_string(spec.gold);
  if (spec.gold == GoldKind::Random || spec.gold == GoldKind::Teacher) gold["seed"] = spec.gold_seed;
  if (spec.gold == GoldKind::Teacher) gold["scale"] = spec.teacher_scale;
  if (spec.gold == GoldKind::Table) {
    ojson scores = ojson::object();
    for (const auto& [p, table] : spec.gold_table) {
      ojson row = ojson::object();
      for (const auto& [y, s] : table) row[to_string(y)] = s;
      scores[std::to_string(p)] = std::move(row);
    }
    gold["scores"] = std::move(scores);
  }
  j["gold"] = std::move(gold);
  ojson pairs;
  pairs["rule"] = to_string(spec.pair_rule);
  if (spec.pair_rule == PairRule::Sample) pairs["per_prompt"] = spec.pairs_per_prompt;
  pairs["seed"] = spec.pair_seed;
  j["pairs"] = std::move(pairs);
  j["loss"] = {{"method", std::string(to_string(spec.loss.method))},
               {"beta", spec.loss.beta},
               {"gamma", spec.loss.gamma},
               {"lambda", spec.loss.lambda},
               {"learning_rate", spec.loss.learning_rate},
               {"steps", spec.loss.steps},
               {"seed", spec.loss.seed}};
  return j;
}

inline ojson to_json(const ExperimentReport& r) {
  ojson j;
  j["config"] = to_json(r.spec);
  j["seed"] = r.spec.loss.seed;
  j["training_pairs"] = r.training_pairs;
  j["before"] = heal::to_json(r.before);
  j["after"] = heal::to_json(r.after);
  j["loss_trace"] = r.loss_trace;
  j["upset"] = heal::to_json(r.upset);
  j["notes"] = {{"sequence_length_counts_stop", true},
                {"stop_forced_at_max_len", true},
                {"likelihood_space", "log"}};
  return j;
}

}  // namespace heal::toylab
