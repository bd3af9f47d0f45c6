#pragma once

// File formats and benchmark construction.
//
// Hypothesis dataset file (JSON Lines, UTF-8, '\n' terminated). Canonical key
// order per record kind:
//   {"kind":"metadata","entries":{...}}                    optional, first line
//   {"kind":"prompt","prompt_id":..,"prompt_text":..}
//   {"kind":"hypothesis","prompt_id":..,"hypothesis_id":..,"text":..,
//    "token_logprobs":[..],"token_count":n,"gold_scores":{..}}
// A prompt record precedes its hypotheses. Optional hypothesis fields are
// omitted when absent. Object keys are sorted; reals use the shortest
// round-tripping decimal.

#include <algorithm>
#include <cstddef>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "heal/core.hpp"
#include "heal/error.hpp"
#include "heal/json_io.hpp"

namespace heal {

// ---------------------------------------------------------------------------
// Dataset files

inline std::string to_jsonl(const ScoredDataset& ds) {
  validate(ds);
  using jsonio::quote;
  std::string out;
  if (!ds.metadata.empty()) {
    out += R"({"kind":"metadata","entries":)" + jsonio::string_object(ds.metadata) + "}\n";
  }
  for (const auto& space : ds.spaces) {
    out += R"({"kind":"prompt","prompt_id":)" + quote(space.prompt_id) +
           R"(,"prompt_text":)" + quote(space.prompt_text) + "}\n";
    for (const auto& h : space.hypotheses) {
      out += R"({"kind":"hypothesis","prompt_id":)" + quote(space.prompt_id) +
             R"(,"hypothesis_id":)" + quote(h.id) + R"(,"text":)" + quote(h.text);
      if (h.token_logprobs) out += R"(,"token_logprobs":)" + jsonio::real_array(*h.token_logprobs);
      if (h.token_count) out += R"(,"token_count":)" + std::to_string(*h.token_count);
      if (!h.gold_scores.empty()) out += R"(,"gold_scores":)" + jsonio::real_object(h.gold_scores);
      out += "}\n";
    }
  }
  return out;
}

inline ScoredDataset parse_dataset(std::istream& in) {
  ScoredDataset ds;
  std::map<std::string, std::size_t, std::less<>> index;
  std::vector<std::set<std::string, std::less<>>> ids;
  bool seen_any = false;

  jsonio::for_each_record(in, [&](const jsonio::Record& rec) {
    const auto kind = rec.string("kind");
    if (kind == "metadata") {
      if (seen_any) throw ParseError(rec.line(), "kind", "metadata record must be the first line");
      rec.expect_keys({"kind", "entries"});
      ds.metadata = rec.string_object("entries");
    } else if (kind == "prompt") {
      rec.expect_keys({"kind", "prompt_id", "prompt_text"});
      HypothesisSpace space;
      space.prompt_id = rec.string("prompt_id", true);
      space.prompt_text = rec.string("prompt_text");
      if (index.contains(space.prompt_id)) {
        throw Error(ErrorCode::DuplicatePromptId, "line " + std::to_string(rec.line()) +
                                                      ": duplicate prompt id '" + space.prompt_id +
                                                      "'");
      }
      index.emplace(space.prompt_id, ds.spaces.size());
      ds.spaces.push_back(std::move(space));
      ids.emplace_back();
    } else if (kind == "hypothesis") {
      rec.expect_keys({"kind", "prompt_id", "hypothesis_id", "text", "token_logprobs",
                       "token_count", "gold_scores"});
      const auto prompt_id = rec.string("prompt_id", true);
      const auto it = index.find(prompt_id);
      if (it == index.end()) {
        throw ParseError(rec.line(), "prompt_id",
                         "no preceding prompt record for '" + prompt_id + "'");
      }
      Hypothesis h;
      h.id = rec.string("hypothesis_id", true);
      h.text = rec.has("text") ? rec.string("text") : std::string{};
      h.token_logprobs = rec.optional_real_array("token_logprobs");
      h.token_count = rec.optional_count("token_count");
      h.gold_scores = rec.optional_real_object("gold_scores").value_or(std::map<std::string, double>{});
      if (h.token_logprobs) {
        if (h.token_count && *h.token_count != h.token_logprobs->size()) {
          throw ParseError(rec.line(), "token_count", "does not match token_logprobs length");
        }
        if (std::any_of(h.token_logprobs->begin(), h.token_logprobs->end(),
                        [](double lp) { return lp > 0.0; })) {
          throw ParseError(rec.line(), "token_logprobs", "log-probabilities must be <= 0");
        }
      }
      if (!ids[it->second].insert(h.id).second) {
        throw Error(ErrorCode::DuplicateHypothesisId,
                    "line " + std::to_string(rec.line()) + ": duplicate hypothesis id '" + h.id +
                        "' in prompt '" + prompt_id + "'");
      }
      ds.spaces[it->second].hypotheses.push_back(std::move(h));
    } else {
      throw ParseError(rec.line(), "kind", "unknown record kind '" + kind + "'");
    }
    seen_any = true;
  });
  return ds;
}

inline ScoredDataset load_dataset(const std::string& path) {
  auto in = jsonio::open_input(path);
  return parse_dataset(in);
}

inline void save_dataset(const ScoredDataset& ds, const std::string& path) {
  jsonio::write_file(path, to_jsonl(ds));
}

// ---------------------------------------------------------------------------
// Raw responses and construction

struct RawResponseRecord {
  std::string prompt_id;
  std::string prompt_text;
  std::string source_model;
  std::string response_text;
  std::map<std::string, std::string> sampling;  // e.g. temperature, top_p, max_tokens
};

/// Reads the raw response file. Unknown fields are ignored so generator
/// output can carry extra provenance.
inline std::vector<RawResponseRecord> parse_raw_responses(std::istream& in) {
  std::vector<RawResponseRecord> out;
  jsonio::for_each_record(in, [&](const jsonio::Record& rec) {
    RawResponseRecord r;
    r.prompt_id = rec.string("prompt_id", true);
    r.prompt_text = rec.string("prompt_text");
    r.source_model = rec.string("source_model", true);
    r.response_text = rec.string("response_text");
    r.sampling = rec.string_object("sampling");
    out.push_back(std::move(r));
  });
  return out;
}

inline std::vector<RawResponseRecord> load_raw_responses(const std::string& path) {
  auto in = jsonio::open_input(path);
  return parse_raw_responses(in);
}

inline std::string to_jsonl(const std::vector<RawResponseRecord>& raw) {
  using jsonio::quote;
  std::string out;
  for (const auto& r : raw) {
    out += "{\"prompt_id\":" + quote(r.prompt_id) + ",\"prompt_text\":" + quote(r.prompt_text) +
           ",\"source_model\":" + quote(r.source_model) +
           ",\"response_text\":" + quote(r.response_text) +
           ",\"sampling\":" + jsonio::string_object(r.sampling) + "}\n";
  }
  return out;
}

struct ConstructionConfig {
  std::size_t min_hypotheses = 8;
  std::size_t max_tokens = 768;
  bool drop_empty = true;
  std::size_t min_chars = 1;
  bool dedupe_exact = true;

  void validate() const {
    if (min_hypotheses < 2) throw Error(ErrorCode::InvalidArgument, "min_hypotheses must be >= 2");
    if (max_tokens == 0) throw Error(ErrorCode::InvalidArgument, "max_tokens must be positive");
  }
};

struct DropCounts {
  std::size_t empty = 0;
  std::size_t too_short = 0;
  std::size_t duplicate = 0;
  std::size_t too_few = 0;  // survivors discarded with a prompt below min_hypotheses

  [[nodiscard]] std::size_t total() const noexcept {
    return empty + too_short + duplicate + too_few;
  }
  friend bool operator==(const DropCounts&, const DropCounts&) = default;
};

struct ConstructionLog {
  std::size_t input_records = 0;
  std::size_t surviving_hypotheses = 0;
  std::size_t prompts_seen = 0;
  std::size_t prompts_kept = 0;
  std::size_t prompts_too_few = 0;
  std::size_t truncated = 0;
  std::size_t prompt_text_conflicts = 0;
  DropCounts drops;
  std::map<std::string, DropCounts> drops_by_model;
  std::map<std::string, std::size_t> kept_by_model;
};

namespace detail {

inline bool is_ascii_space(char c) noexcept {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

inline std::size_t utf8_length(std::string_view s) noexcept {
  return static_cast<std::size_t>(std::count_if(
      s.begin(), s.end(), [](char c) { return (static_cast<unsigned char>(c) & 0xC0) != 0x80; }));
}

/// Cuts text after its max_tokens-th whitespace-delimited token. Returns
/// whether anything was removed.
inline bool truncate_whitespace_tokens(std::string& text, std::size_t max_tokens) {
  std::size_t tokens = 0;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_ascii_space(text[i])) ++i;
    if (i == text.size()) break;
    while (i < text.size() && !is_ascii_space(text[i])) ++i;
    if (++tokens == max_tokens) {
      const bool rest = text.find_first_not_of(" \t\n\r\f\v", i) != std::string::npos;
      if (rest) text.resize(i);
      return rest;
    }
  }
  return false;
}

inline std::string join(const std::set<std::string>& xs, std::string_view sep) {
  std::string out;
  for (const auto& x : xs) {
    if (!out.empty()) out += sep;
    out += x;
  }
  return out;
}

}  // namespace detail

/// Groups raw responses into hypothesis spaces. Drop filters and truncation
/// run before the min_hypotheses floor. Spaces come out sorted by prompt_id; hypothesis ids are
/// "<source_model>#<k>" with k the response's ordinal for that model within
/// the prompt in input order.
inline std::pair<ScoredDataset, ConstructionLog> construct_bench(
    const std::vector<RawResponseRecord>& raw, const ConstructionConfig& cfg = {}) {
  if (raw.empty()) throw Error(ErrorCode::EmptyInput, "no raw response records");
  cfg.validate();

  struct Group {
    std::string prompt_text;
    std::vector<const RawResponseRecord*> records;
  };
  std::map<std::string, Group> groups;
  ConstructionLog log;
  log.input_records = raw.size();
  std::set<std::string> models;
  std::map<std::string, std::set<std::string>> sampling;
  for (const auto& r : raw) {
    if (r.prompt_id.empty() || r.source_model.empty()) {
      throw Error(ErrorCode::InvalidArgument, "raw record with empty prompt_id or source_model");
    }
    auto [it, inserted] = groups.try_emplace(r.prompt_id);
    if (inserted) {
      it->second.prompt_text = r.prompt_text;
    } else if (it->second.prompt_text != r.prompt_text) {
      ++log.prompt_text_conflicts;
    }
    it->second.records.push_back(&r);
    models.insert(r.source_model);
    for (const auto& [k, v] : r.sampling) sampling[k].insert(v);
  }
  log.prompts_seen = groups.size();

  ScoredDataset ds;
  for (const auto& [prompt_id, group] : groups) {
    HypothesisSpace space{prompt_id, group.prompt_text, {}};
    std::map<std::string, std::size_t> ordinal;
    std::set<std::string, std::less<>> texts;
    std::vector<std::string> kept_models;
    std::size_t truncated_here = 0;
    for (const RawResponseRecord* r : group.records) {
      const std::size_t k = ordinal[r->source_model]++;
      auto& by_model = log.drops_by_model[r->source_model];
      const bool blank = std::all_of(r->response_text.begin(), r->response_text.end(),
                                     detail::is_ascii_space);
      if (cfg.drop_empty && blank) {
        ++log.drops.empty;
        ++by_model.empty;
        continue;
      }
      if (detail::utf8_length(r->response_text) < cfg.min_chars) {
        ++log.drops.too_short;
        ++by_model.too_short;
        continue;
      }
      std::string text = r->response_text;
      const bool cut = detail::truncate_whitespace_tokens(text, cfg.max_tokens);
      // Duplicates are judged on the text that enters the space.
      if (cfg.dedupe_exact && !texts.insert(text).second) {
        ++log.drops.duplicate;
        ++by_model.duplicate;
        continue;
      }
      truncated_here += cut ? 1 : 0;
      Hypothesis h;
      h.id = r->source_model + "#" + std::to_string(k);
      h.text = std::move(text);
      space.hypotheses.push_back(std::move(h));
      kept_models.push_back(r->source_model);
    }
    if (space.hypotheses.size() < cfg.min_hypotheses) {
      ++log.prompts_too_few;
      log.drops.too_few += space.hypotheses.size();
      for (const auto& m : kept_models) ++log.drops_by_model[m].too_few;
      continue;
    }
    ++log.prompts_kept;
    log.truncated += truncated_here;
    log.surviving_hypotheses += space.hypotheses.size();
    for (const auto& m : kept_models) ++log.kept_by_model[m];
    ds.spaces.push_back(std::move(space));
  }

  ds.metadata["construction.min_hypotheses"] = std::to_string(cfg.min_hypotheses);
  ds.metadata["construction.max_tokens"] = std::to_string(cfg.max_tokens);
  ds.metadata["construction.min_chars"] = std::to_string(cfg.min_chars);
  ds.metadata["construction.drop_empty"] = cfg.drop_empty ? "true" : "false";
  ds.metadata["construction.dedupe_exact"] = cfg.dedupe_exact ? "true" : "false";
  ds.metadata["construction.truncation"] =
      "whitespace-token proxy; scorer token_count is authoritative";
  ds.metadata["source_models"] = detail::join(models, ",");
  for (const auto& [k, values] : sampling) ds.metadata["sampling." + k] = detail::join(values, ",");
  return {std::move(ds), std::move(log)};
}

// ---------------------------------------------------------------------------
// Score files

struct ScoreRow {
  std::string prompt_id;
  std::string hypothesis_id;
  std::optional<std::vector<double>> token_logprobs;
  std::optional<std::size_t> token_count;
  std::map<std::string, double> gold_scores;
};

inline std::vector<ScoreRow> parse_score_rows(std::istream& in) {
  std::vector<ScoreRow> rows;
  jsonio::for_each_record(in, [&](const jsonio::Record& rec) {
    rec.expect_keys({"prompt_id", "hypothesis_id", "token_logprobs", "token_count", "gold_scores"});
    ScoreRow row;
    row.prompt_id = rec.string("prompt_id", true);
    row.hypothesis_id = rec.string("hypothesis_id", true);
    row.token_logprobs = rec.optional_real_array("token_logprobs");
    row.token_count = rec.optional_count("token_count");
    row.gold_scores =
        rec.optional_real_object("gold_scores").value_or(std::map<std::string, double>{});
    if (row.token_logprobs && row.token_count && *row.token_count != row.token_logprobs->size()) {
      throw ParseError(rec.line(), "token_count", "does not match token_logprobs length");
    }
    rows.push_back(std::move(row));
  });
  return rows;
}

inline std::string to_jsonl(const std::vector<ScoreRow>& rows) {
  using jsonio::quote;
  std::string out;
  for (const auto& r : rows) {
    out += "{\"prompt_id\":" + quote(r.prompt_id) + ",\"hypothesis_id\":" + quote(r.hypothesis_id);
    if (r.token_logprobs) out += ",\"token_logprobs\":" + jsonio::real_array(*r.token_logprobs);
    if (r.token_count) out += ",\"token_count\":" + std::to_string(*r.token_count);
    if (!r.gold_scores.empty()) out += ",\"gold_scores\":" + jsonio::real_object(r.gold_scores);
    out += "}\n";
  }
  return out;
}

namespace detail {

template <typename T>
void merge_field(std::optional<T>& slot, const std::optional<T>& incoming, const char* field,
                 const std::string& key) {
  if (!incoming) return;
  if (slot && *slot != *incoming) {
    throw Error(ErrorCode::ConflictingValue, key + ": different " + field + " already attached");
  }
  slot = incoming;
}

}  // namespace detail

/// Merges score rows into a copy of ds. Re-attaching identical values is a
/// no-op; unresolved keys and conflicting values are errors.
inline ScoredDataset attach_scores(ScoredDataset ds, const std::vector<ScoreRow>& rows) {
  std::map<std::pair<std::string, std::string>, Hypothesis*> index;
  for (auto& space : ds.spaces) {
    for (auto& h : space.hypotheses) index[{space.prompt_id, h.id}] = &h;
  }
  for (const auto& row : rows) {
    const std::string key = "(" + row.prompt_id + ", " + row.hypothesis_id + ")";
    const auto it = index.find({row.prompt_id, row.hypothesis_id});
    if (it == index.end()) throw Error(ErrorCode::UnknownKey, key + " is not in the dataset");
    Hypothesis& h = *it->second;
    detail::merge_field(h.token_logprobs, row.token_logprobs, "token_logprobs", key);
    detail::merge_field(h.token_count, row.token_count, "token_count", key);
    for (const auto& [dim, score] : row.gold_scores) {
      auto [g, inserted] = h.gold_scores.try_emplace(dim, score);
      if (!inserted && g->second != score) {
        throw Error(ErrorCode::ConflictingValue, key + ": different gold score '" + dim + "'");
      }
    }
    if (h.token_logprobs && h.token_count && *h.token_count != h.token_logprobs->size()) {
      throw Error(ErrorCode::ConflictingValue,
                  key + ": token_count disagrees with the attached token_logprobs");
    }
    validate(h);
  }
  return ds;
}

inline ScoredDataset attach_scores(ScoredDataset ds, const std::string& scores_path) {
  auto in = jsonio::open_input(scores_path);
  return attach_scores(std::move(ds), parse_score_rows(in));
}

}  // namespace heal
