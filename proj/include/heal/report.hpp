#pragma once

// JSON renderings of evaluation results. Key order is fixed so identical
// inputs give byte-identical reports.

#include <string>

#include <json.hpp>

#include "heal/analysis.hpp"
#include "heal/core.hpp"
#include "heal/ingest.hpp"

namespace heal {

using ojson = nlohmann::ordered_json;

inline ojson to_json(const MetricOutcome& m) {
  return m.value ? ojson(*m.value) : ojson(nullptr);
}

inline ojson to_json(const EvalReport& r) {
  ojson j;
  j["model"] = r.model.label();
  j["gold"] = r.gold.label();
  j["dataset_ra"] = r.dataset_ra;
  j["dataset_psc"] = r.dataset_psc;
  j["ra_counts"] = {{"evaluated", r.ra_evaluated}, {"skipped", r.ra_skipped}};
  j["psc_counts"] = {{"evaluated", r.psc_evaluated}, {"skipped", r.psc_skipped}};
  ojson per_prompt = ojson::object();
  for (const auto& [id, pr] : r.per_prompt) {
    ojson e;
    e["ra"] = to_json(pr.ra);
    if (pr.ra.skip) e["ra_skip"] = std::string(to_string(*pr.ra.skip));
    e["psc"] = to_json(pr.psc);
    if (pr.psc.skip) e["psc_skip"] = std::string(to_string(*pr.psc.skip));
    per_prompt[id] = std::move(e);
  }
  j["per_prompt"] = std::move(per_prompt);
  ojson meta = ojson::object();
  for (const auto& [k, v] : r.metadata) meta[k] = v;
  j["metadata"] = std::move(meta);
  return j;
}

inline ojson to_json(const DropCounts& d) {
  return {{"empty", d.empty},
          {"too_short", d.too_short},
          {"duplicate", d.duplicate},
          {"too_few", d.too_few}};
}

inline ojson to_json(const ConstructionLog& log) {
  ojson j;
  j["input_records"] = log.input_records;
  j["surviving_hypotheses"] = log.surviving_hypotheses;
  j["prompts_seen"] = log.prompts_seen;
  j["prompts_kept"] = log.prompts_kept;
  j["prompts_too_few"] = log.prompts_too_few;
  j["truncated"] = log.truncated;
  j["prompt_text_conflicts"] = log.prompt_text_conflicts;
  j["drops"] = to_json(log.drops);
  ojson by_model = ojson::object();
  for (const auto& [m, d] : log.drops_by_model) by_model[m] = to_json(d);
  j["drops_by_model"] = std::move(by_model);
  ojson kept = ojson::object();
  for (const auto& [m, n] : log.kept_by_model) kept[m] = n;
  j["kept_by_model"] = std::move(kept);
  return j;
}

inline ojson to_json(const UpsetTable& t) {
  ojson j;
  j["methods"] = t.method_names;
  j["total_pairs"] = t.total_pairs;
  ojson rows = ojson::array();
  for (std::uint32_t mask = 0; mask < t.exclusive_counts.size(); ++mask) {
    rows.push_back({{"subset", t.subset_label(mask)}, {"count", t.exclusive_counts[mask]}});
  }
  j["exclusive_counts"] = std::move(rows);
  return j;
}

inline ojson to_json(const std::map<std::string, DimensionResult>& dims) {
  ojson j = ojson::object();
  for (const auto& [dim, r] : dims) {
    if (r.report) {
      j[dim] = {{"skipped", false},
                {"ra", r.report->dataset_ra},
                {"psc", r.report->dataset_psc},
                {"report", to_json(*r.report)}};
    } else {
      ojson reasons = ojson::object();
      for (const auto& [k, v] : r.skip_reasons) reasons[k] = v;
      j[dim] = {{"skipped", true}, {"skip_reasons", std::move(reasons)}};
    }
  }
  return j;
}

}  // namespace heal
