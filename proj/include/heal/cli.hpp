#pragma once

// The `heal` command-line surface. Run provenance goes to a sibling
// "<out>.manifest.json" so the outputs themselves stay byte-identical across
// identical runs.
//
// Exit codes: 0 success, 2 input/config error, 3 degenerate result (every
// prompt skipped), 4 numeric failure.

#include <chrono>
#include <cstdint>
#include <ctime>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "heal/analysis.hpp"
#include "heal/core.hpp"
#include "heal/error.hpp"
#include "heal/experiment.hpp"
#include "heal/ingest.hpp"
#include "heal/json_io.hpp"
#include "heal/metrics.hpp"
#include "heal/report.hpp"

namespace heal::cli {

inline constexpr const char* kToolVersion = "0.1.0";

enum ExitCode : int { kOk = 0, kInputError = 2, kDegenerate = 3, kNumericFailure = 4 };

inline int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::AllSkipped: return kDegenerate;
    case ErrorCode::NonFiniteLoss:
    case ErrorCode::DegenerateProbability: return kNumericFailure;
    default: return kInputError;
  }
}

/// FNV-1a 64-bit digest, hex encoded with an algorithm prefix.
inline std::string content_hash(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream ss;
  ss << "fnv1a64:" << std::hex << std::setw(16) << std::setfill('0') << h;
  return ss.str();
}

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream ss;
  ss << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return ss.str();
}

/// Run provenance written next to every output file.
struct RunManifest {
  std::string command;
  ojson config_echo = ojson::object();
  std::map<std::string, std::string> input_hashes;
  std::string tool_version = kToolVersion;
  std::string timestamp = utc_timestamp();

  void hash_input(const std::string& path) { input_hashes[path] = content_hash(jsonio::read_file(path)); }

  [[nodiscard]] ojson to_json() const {
    ojson j;
    j["command"] = command;
    j["config"] = config_echo;
    ojson hashes = ojson::object();
    for (const auto& [p, h] : input_hashes) hashes[p] = h;
    j["input_hashes"] = std::move(hashes);
    j["tool_version"] = tool_version;
    j["timestamp"] = timestamp;
    return j;
  }
};

inline void write_output(const std::string& path, std::string_view contents,
                         const RunManifest& manifest) {
  jsonio::write_file(path, contents);
  jsonio::write_file(path + ".manifest.json", manifest.to_json().dump(2) + "\n");
}

/// Reads a JSON object of option values ({"min-hypotheses": 10, ...}); command
/// line flags take precedence over it. Flat keys belong to the subcommand being
/// run; an object-valued key names a subcommand section instead.
class JsonConfig : public CLI::Config {
 public:
  explicit JsonConfig(const CLI::App* app = nullptr) : app_(app) {}

  std::string to_config(const CLI::App* app, bool default_also, bool, std::string) const override {
    nlohmann::json j = nlohmann::json::object();
    for (const CLI::Option* opt : app->get_options({})) {
      if (opt->get_lnames().empty() || !opt->get_configurable()) continue;
      const auto& name = opt->get_lnames().front();
      if (opt->count() > 0) {
        j[name] = opt->results().size() == 1 ? nlohmann::json(opt->results().front())
                                             : nlohmann::json(opt->results());
      } else if (default_also && !opt->get_default_str().empty()) {
        j[name] = opt->get_default_str();
      }
    }
    return j.dump(2);
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(input);
    } catch (const nlohmann::json::exception& e) {
      throw CLI::ConversionError(std::string("config file is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw CLI::ConversionError("config file must hold a JSON object");
    std::vector<std::string> active;
    if (app_ != nullptr) {
      for (const CLI::App* sub : app_->get_subcommands()) active.push_back(sub->get_name());
    }
    std::vector<CLI::ConfigItem> items;
    auto render = [](const nlohmann::json& v) {
      return v.is_string() ? v.get<std::string>() : v.dump();
    };
    auto add = [&](const std::vector<std::string>& parents, const std::string& key,
                   const nlohmann::json& value) {
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = key;
      if (value.is_array()) {
        for (const auto& v : value) item.inputs.push_back(render(v));
      } else {
        item.inputs.push_back(render(value));
      }
      items.push_back(std::move(item));
    };
    for (const auto& [key, value] : j.items()) {
      if (value.is_object()) {
        for (const auto& [k, v] : value.items()) add({key}, k, v);
      } else {
        add(active, key, value);
      }
    }
    return items;
  }

 private:
  const CLI::App* app_;
};

namespace detail {

inline IndicatorConfig model_indicator(const std::string& spec) {
  const auto ind = parse_indicator(spec);
  if (ind.kind == IndicatorKind::GoldDimension) {
    throw Error(ErrorCode::InvalidArgument, "--model must be ll or ll-norm");
  }
  return ind;
}

inline void require_dimension(const ScoredDataset& ds, const std::string& dim) {
  for (const auto& s : ds.spaces) {
    for (const auto& h : s.hypotheses) {
      if (h.gold_scores.contains(dim)) return;
    }
  }
  throw Error(ErrorCode::UnknownDimension, "gold dimension '" + dim + "' is present nowhere");
}

inline std::string fmt(double x) {
  std::ostringstream ss;
  ss << std::setprecision(6) << std::fixed << x;
  return ss.str();
}

}  // namespace detail

struct ConstructArgs {
  std::string raw, out, log;
  ConstructionConfig cfg;
  bool keep_empty = false;
  bool no_dedupe = false;
};

inline int cmd_construct(ConstructArgs args, std::ostream& out) {
  args.cfg.drop_empty = !args.keep_empty;
  args.cfg.dedupe_exact = !args.no_dedupe;
  const auto raw = load_raw_responses(args.raw);
  auto [ds, log] = construct_bench(raw, args.cfg);

  RunManifest manifest;
  manifest.command = "construct";
  manifest.hash_input(args.raw);
  manifest.config_echo = {{"raw", args.raw},
                          {"out", args.out},
                          {"min_hypotheses", args.cfg.min_hypotheses},
                          {"max_tokens", args.cfg.max_tokens},
                          {"min_chars", args.cfg.min_chars},
                          {"drop_empty", args.cfg.drop_empty},
                          {"dedupe_exact", args.cfg.dedupe_exact}};
  write_output(args.out, to_jsonl(ds), manifest);
  if (!args.log.empty()) jsonio::write_file(args.log, heal::to_json(log).dump(2) + "\n");

  out << "records " << log.input_records << ", kept " << log.surviving_hypotheses
      << " hypotheses in " << log.prompts_kept << "/" << log.prompts_seen << " prompts\n"
      << "dropped: empty " << log.drops.empty << ", short " << log.drops.too_short
      << ", duplicate " << log.drops.duplicate << ", too-few " << log.drops.too_few
      << " (" << log.prompts_too_few << " prompts below " << args.cfg.min_hypotheses << ")\n"
      << "truncated to " << args.cfg.max_tokens << " whitespace tokens: " << log.truncated << "\n";
  return kOk;
}

struct AttachArgs {
  std::string dataset, scores, out;
};

inline int cmd_attach(const AttachArgs& args, std::ostream& out) {
  auto ds = attach_scores(load_dataset(args.dataset), args.scores);
  RunManifest manifest;
  manifest.command = "attach";
  manifest.hash_input(args.dataset);
  manifest.hash_input(args.scores);
  manifest.config_echo = {{"dataset", args.dataset}, {"scores", args.scores}, {"out", args.out}};
  write_output(args.out, to_jsonl(ds), manifest);
  out << "attached scores to " << ds.spaces.size() << " prompts\n";
  return kOk;
}

struct EvaluateArgs {
  std::string dataset, gold, out;
  std::string model = "ll";  // ll, ll-norm or both
  unsigned threads = 1;
};

inline int cmd_evaluate(const EvaluateArgs& args, std::ostream& out) {
  const auto ds = load_dataset(args.dataset);
  std::vector<IndicatorConfig> models;
  if (args.model == "both") {
    models = {IndicatorConfig::log_likelihood(), IndicatorConfig::length_normalized()};
  } else {
    models = {detail::model_indicator(args.model)};
  }
  detail::require_dimension(ds, args.gold);
  const auto gold = IndicatorConfig::gold(args.gold);

  ojson report;
  report["dataset"] = args.dataset;
  report["results"] = ojson::array();
  for (const auto& model : models) {
    const auto r = evaluate_dataset(ds, model, gold, {args.threads});
    out << "model=" << model.label() << " gold=" << gold.label()
        << " dataset_ra=" << detail::fmt(r.dataset_ra)
        << " dataset_psc=" << detail::fmt(r.dataset_psc) << " ra_evaluated=" << r.ra_evaluated
        << " ra_skipped=" << r.ra_skipped << " psc_evaluated=" << r.psc_evaluated
        << " psc_skipped=" << r.psc_skipped << "\n";
    report["results"].push_back(heal::to_json(r));
  }
  if (!args.out.empty()) {
    RunManifest manifest;
    manifest.command = "evaluate";
    manifest.hash_input(args.dataset);
    manifest.config_echo = {{"dataset", args.dataset},
                            {"model", args.model},
                            {"gold", args.gold},
                            {"out", args.out},
                            {"threads", args.threads}};
    write_output(args.out, report.dump(2) + "\n", manifest);
  }
  return kOk;
}

struct IntersectArgs {
  std::string dataset, gold, out;
  std::vector<std::string> methods;  // name=indicator
};

inline int cmd_intersect(const IntersectArgs& args, std::ostream& out) {
  if (args.methods.empty()) throw Error(ErrorCode::InvalidArgument, "at least one --method is required");
  const auto ds = load_dataset(args.dataset);
  detail::require_dimension(ds, args.gold);
  std::map<std::string, IndicatorConfig> methods;
  for (const auto& m : args.methods) {
    const auto eq = m.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == m.size()) {
      throw Error(ErrorCode::InvalidArgument, "--method expects name=indicator, got '" + m + "'");
    }
    const auto name = m.substr(0, eq);
    if (name.find('+') != std::string::npos) {
      throw Error(ErrorCode::InvalidArgument, "method names may not contain '+'");
    }
    const auto ind = parse_indicator(m.substr(eq + 1));
    if (ind.kind == IndicatorKind::GoldDimension) detail::require_dimension(ds, ind.dimension);
    if (!methods.emplace(name, ind).second) {
      throw Error(ErrorCode::InvalidArgument, "duplicate method name '" + name + "'");
    }
  }
  const auto pairs = gold_preferred_pairs(ds, IndicatorConfig::gold(args.gold));
  std::map<std::string, PairSet> sets;
  for (const auto& [name, ind] : methods) sets.emplace(name, agreement_set(pairs, ds, ind));
  const auto table = upset_intersections(pairs, sets);

  std::size_t sum = 0;
  for (auto c : table.exclusive_counts) sum += c;
  out << "pairs " << table.total_pairs << ", partition sum " << sum << "\n";
  if (sum != table.total_pairs) {
    throw Error(ErrorCode::InvalidArgument, "upset partition does not cover the pair universe");
  }
  RunManifest manifest;
  manifest.command = "intersect";
  manifest.hash_input(args.dataset);
  manifest.config_echo = {{"dataset", args.dataset}, {"gold", args.gold},
                          {"methods", args.methods}, {"out", args.out},
                          {"gold_ties", "excluded from the pair universe"},
                          {"method_ties", "count as disagreement"}};
  write_output(args.out, upset_csv(table), manifest);
  return kOk;
}

struct DensitiesArgs {
  std::string dataset, indicator = "ll", out, kde_out;
  std::size_t bins = 20;
  bool kde = false;
};

inline int cmd_densities(const DensitiesArgs& args, std::ostream& out) {
  const auto ds = load_dataset(args.dataset);
  const auto ind = parse_indicator(args.indicator);
  if (ind.kind == IndicatorKind::GoldDimension) detail::require_dimension(ds, ind.dimension);
  const auto d = density_summary(collect_indicator(ds, ind), args.bins, args.kde);
  RunManifest manifest;
  manifest.command = "densities";
  manifest.hash_input(args.dataset);
  manifest.config_echo = {{"dataset", args.dataset}, {"indicator", args.indicator},
                          {"bins", args.bins},       {"kde", args.kde},
                          {"out", args.out}};
  write_output(args.out, density_csv(d), manifest);
  if (args.kde) {
    const auto kde_path = args.kde_out.empty() ? args.out + ".kde.csv" : args.kde_out;
    jsonio::write_file(kde_path, kde_csv(d));
    out << "bandwidth " << detail::fmt(d.bandwidth) << ", kde written to " << kde_path << "\n";
  }
  out << "count " << d.count << ", median " << detail::fmt(d.median) << "\n";
  return kOk;
}

struct JointArgs {
  std::string dataset, gold, model = "ll", out;
  std::size_t bins = 20;
  bool kde = false;
};

inline int cmd_joint(const JointArgs& args, std::ostream& out) {
  const auto ds = load_dataset(args.dataset);
  detail::require_dimension(ds, args.gold);
  const auto j = joint_summary(ds, IndicatorConfig::gold(args.gold), parse_indicator(args.model),
                               args.bins, args.kde);
  RunManifest manifest;
  manifest.command = "joint";
  manifest.hash_input(args.dataset);
  manifest.config_echo = {{"dataset", args.dataset}, {"gold", args.gold}, {"model", args.model},
                          {"bins", args.bins},       {"kde", args.kde},   {"out", args.out}};
  write_output(args.out, joint_csv(j), manifest);
  jsonio::write_file(args.out + ".gold.csv", density_csv(j.gold_marginal));
  jsonio::write_file(args.out + ".indicator.csv", density_csv(j.indicator_marginal));
  if (args.kde) {
    jsonio::write_file(args.out + ".gold.kde.csv", kde_csv(j.gold_marginal));
    jsonio::write_file(args.out + ".indicator.kde.csv", kde_csv(j.indicator_marginal));
  }
  out << "points " << j.points.size() << "\n";
  return kOk;
}

struct MultidimArgs {
  std::string dataset, model = "ll", out;
  std::vector<std::string> dims = default_dimensions();
};

inline int cmd_multidim(const MultidimArgs& args, std::ostream& out) {
  const auto ds = load_dataset(args.dataset);
  const auto dims = multidim_report(ds, detail::model_indicator(args.model), args.dims);
  for (const auto& [dim, r] : dims) {
    out << dim << ": ";
    if (r.report) {
      out << "ra=" << detail::fmt(r.report->dataset_ra)
          << " psc=" << detail::fmt(r.report->dataset_psc) << "\n";
    } else {
      out << "skipped\n";
    }
  }
  if (!args.out.empty()) {
    RunManifest manifest;
    manifest.command = "multidim";
    manifest.hash_input(args.dataset);
    manifest.config_echo = {{"dataset", args.dataset}, {"model", args.model},
                            {"dims", args.dims},       {"out", args.out}};
    ojson report;
    report["model"] = args.model;
    report["dimensions"] = heal::to_json(dims);
    write_output(args.out, report.dump(2) + "\n", manifest);
  }
  return kOk;
}

struct ToylabArgs {
  std::string spec, out;
};

inline int cmd_toylab(const ToylabArgs& args, std::ostream& out) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(jsonio::read_file(args.spec));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, "'" + args.spec + "' is not valid JSON: " + e.what());
  }
  const auto spec = toylab::parse_experiment_spec(doc);
  const auto report = toylab::run_experiment(spec);
  RunManifest manifest;
  manifest.command = "toylab";
  manifest.hash_input(args.spec);
  manifest.config_echo = toylab::to_json(spec);
  write_output(args.out, toylab::to_json(report).dump(2) + "\n", manifest);
  out << toylab::to_string(spec.loss.method) << ": before ra=" << detail::fmt(report.before.dataset_ra)
      << " psc=" << detail::fmt(report.before.dataset_psc)
      << ", after ra=" << detail::fmt(report.after.dataset_ra)
      << " psc=" << detail::fmt(report.after.dataset_psc) << "\n";
  return kOk;
}

/// Parses argv and dispatches. Never throws; errors become exit codes with a
/// diagnostic on err.
inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Hypothesis-space evaluation of preference alignment", "heal"};
  app.require_subcommand(1);
  app.config_formatter(std::make_shared<JsonConfig>(&app));
  app.set_config("--config", "", "JSON file of option values; flags override it");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.fallthrough();
  app.set_version_flag("--version", kToolVersion);

  ConstructArgs construct;
  auto* c = app.add_subcommand("construct", "Build hypothesis spaces from raw responses");
  c->add_option("--raw", construct.raw, "Raw response JSON Lines file")->required();
  c->add_option("--out", construct.out, "Output dataset file")->required();
  c->add_option("--log", construct.log, "Optional JSON construction log");
  c->add_option("--min-hypotheses", construct.cfg.min_hypotheses)->capture_default_str();
  c->add_option("--max-tokens", construct.cfg.max_tokens)->capture_default_str();
  c->add_option("--min-chars", construct.cfg.min_chars)->capture_default_str();
  c->add_flag("--keep-empty", construct.keep_empty, "Keep empty responses");
  c->add_flag("--no-dedupe", construct.no_dedupe, "Keep exact duplicates");

  AttachArgs attach;
  auto* a = app.add_subcommand("attach", "Merge a score file into a dataset");
  a->add_option("--dataset", attach.dataset)->required();
  a->add_option("--scores", attach.scores)->required();
  a->add_option("--out", attach.out)->required();

  EvaluateArgs evaluate;
  auto* e = app.add_subcommand("evaluate", "Ranking accuracy and preference strength correlation");
  e->add_option("--dataset", evaluate.dataset)->required();
  e->add_option("--model", evaluate.model, "ll, ll-norm or both")
      ->check(CLI::IsMember({"ll", "ll-norm", "both"}))
      ->capture_default_str();
  e->add_option("--gold", evaluate.gold, "Gold score dimension")->required();
  e->add_option("--out", evaluate.out, "JSON report path");
  e->add_option("--threads", evaluate.threads)->check(CLI::PositiveNumber)->capture_default_str();

  IntersectArgs intersect;
  auto* x = app.add_subcommand("intersect", "Upset intersections of pair agreement sets");
  x->add_option("--dataset", intersect.dataset)->required();
  x->add_option("--gold", intersect.gold)->required();
  x->add_option("--method", intersect.methods, "name=indicator, repeatable");
  x->add_option("--out", intersect.out, "CSV output")->required();

  DensitiesArgs densities;
  auto* d = app.add_subcommand("densities", "Histogram / KDE of an indicator's values");
  d->add_option("--dataset", densities.dataset)->required();
  d->add_option("--indicator", densities.indicator, "ll, ll-norm or gold:<dim>")->capture_default_str();
  d->add_option("--bins", densities.bins)->check(CLI::PositiveNumber)->capture_default_str();
  d->add_flag("--kde", densities.kde, "Also emit a Gaussian KDE");
  d->add_option("--out", densities.out, "CSV output")->required();
  d->add_option("--kde-out", densities.kde_out, "KDE CSV output (default <out>.kde.csv)");

  JointArgs joint;
  auto* jn = app.add_subcommand("joint", "Gold vs indicator point cloud with marginals");
  jn->add_option("--dataset", joint.dataset)->required();
  jn->add_option("--gold", joint.gold)->required();
  jn->add_option("--model", joint.model, "ll, ll-norm or gold:<dim>")->capture_default_str();
  jn->add_option("--bins", joint.bins)->check(CLI::PositiveNumber)->capture_default_str();
  jn->add_flag("--kde", joint.kde);
  jn->add_option("--out", joint.out, "CSV output")->required();

  MultidimArgs multidim;
  auto* m = app.add_subcommand("multidim", "Evaluate against several gold dimensions");
  m->add_option("--dataset", multidim.dataset)->required();
  m->add_option("--model", multidim.model, "ll or ll-norm")->capture_default_str();
  m->add_option("--dims", multidim.dims, "Gold dimensions")->delimiter(',')->capture_default_str();
  m->add_option("--out", multidim.out, "JSON report path");

  ToylabArgs toylab;
  auto* t = app.add_subcommand("toylab", "Run a toy preference-optimization experiment");
  t->add_option("--spec", toylab.spec, "Experiment spec JSON")->required();
  t->add_option("--out", toylab.out, "Experiment report JSON")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& pe) {
    std::ostringstream o, r;
    const int code = app.exit(pe, o, r);
    out << o.str();
    err << r.str();
    return code == 0 ? kOk : kInputError;
  }

  try {
    if (c->parsed()) return cmd_construct(construct, out);
    if (a->parsed()) return cmd_attach(attach, out);
    if (e->parsed()) return cmd_evaluate(evaluate, out);
    if (x->parsed()) return cmd_intersect(intersect, out);
    if (d->parsed()) return cmd_densities(densities, out);
    if (jn->parsed()) return cmd_joint(joint, out);
    if (m->parsed()) return cmd_multidim(multidim, out);
    if (t->parsed()) return cmd_toylab(toylab, out);
  } catch (const AllSkippedError& ex) {
    err << "error: " << ex.what() << "\n";
    for (const auto& [reason, n] : ex.reasons()) err << "  " << reason << ": " << n << "\n";
    return kDegenerate;
  } catch (const NonFiniteLossError& ex) {
    err << "error: " << ex.what() << "\n";
    return kNumericFailure;
  } catch (const Error& ex) {
    err << "error: " << ex.what() << "\n";
    return exit_code_for(ex.code());
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return kInputError;
  }
  return kInputError;
}

}  // namespace heal::cli
