#pragma once

// Command-line front end. dispatch() returns the process exit code:
//   0 success, 1 usage or configuration error, 2 data error, 3 internal failure.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "thor/errors.hpp"
#include "thor/evaluator.hpp"
#include "thor/foundation.hpp"
#include "thor/hkg.hpp"
#include "thor/io.hpp"
#include "thor/model.hpp"
#include "thor/selfcheck.hpp"
#include "thor/splitter.hpp"
#include "thor/trainer.hpp"

namespace thor::cli {

inline constexpr const char* kVersion = "0.1.0";

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kInternal = 3 };

// Path and split keys accepted in config files next to the training keys.
inline const std::vector<std::string>& run_keys() {
  static const std::vector<std::string> keys = {"bundle", "checkpoint", "input", "out",  "method", "seed_count",
                                                "k",      "ratios",     "relation_disjoint", "split_part"};
  return keys;
}

inline bool is_known_key(const std::string& k) {
  return is_train_key(k) || std::find(run_keys().begin(), run_keys().end(), k) != run_keys().end();
}

inline std::string_view trim(std::string_view s) {
  auto ws = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; };
  while (!s.empty() && ws(s.front())) s.remove_prefix(1);
  while (!s.empty() && ws(s.back())) s.remove_suffix(1);
  return s;
}

// Parses "key = value" lines; '#' starts a comment.
inline std::map<std::string, std::string> parse_config_text(const std::string& text, const std::string& origin = "config") {
  std::map<std::string, std::string> out;
  std::istringstream is(text);
  std::string line;
  std::size_t no = 0;
  while (std::getline(is, line)) {
    ++no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string_view::npos) throw ConfigError(origin + ":" + std::to_string(no) + ": expected 'key = value'");
    const std::string key(trim(body.substr(0, eq)));
    const std::string value(trim(body.substr(eq + 1)));
    if (!is_known_key(key)) throw ConfigError(origin + ":" + std::to_string(no) + ": unknown key '" + key + "'");
    out[key] = value;
  }
  return out;
}

inline std::map<std::string, std::string> load_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config_text(ss.str(), path);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string hex(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

// Effective settings: defaults, then config file, then flags.
struct RunConfig {
  TrainConfig train;
  split::SplitConfig split;
  std::map<std::string, std::string> paths;

  void set(const std::string& key, const std::string& value) {
    if (is_train_key(key)) {
      set_train_field(train, key, value);
      if (key == "seed") split.seed = train.seed;
    } else if (key == "method") {
      if (value == "louvain") split.method = split::Method::LouvainCluster;
      else if (value == "khop") split.method = split::Method::KHopSeed;
      else throw ConfigError("method must be 'louvain' or 'khop', got '" + value + "'");
    } else if (key == "seed_count") {
      split.seed_count = detail::parse_number<std::size_t>(key, value);
    } else if (key == "k") {
      split.k = detail::parse_number<std::size_t>(key, value);
    } else if (key == "ratios") {
      std::array<double, 3> r{};
      std::istringstream is(value);
      std::string part;
      std::size_t i = 0;
      while (std::getline(is, part, ',')) {
        if (i >= 3) throw ConfigError("ratios needs three comma-separated values");
        r[i++] = detail::parse_number<double>(key, std::string(trim(part)));
      }
      if (i != 3) throw ConfigError("ratios needs three comma-separated values");
      split::check_ratios(r);
      split.ratios = r;
    } else if (key == "relation_disjoint") {
      split.relation_disjoint = detail::parse_bool(key, value);
    } else if (is_known_key(key)) {
      paths[key] = value;
    } else {
      throw ConfigError("unknown key '" + key + "'");
    }
  }

  std::vector<std::pair<std::string, std::string>> effective() const {
    auto out = train_config_pairs(train);
    std::ostringstream r;
    r << split.ratios[0] << ',' << split.ratios[1] << ',' << split.ratios[2];
    out.emplace_back("method", split.method == split::Method::LouvainCluster ? "louvain" : "khop");
    out.emplace_back("seed_count", std::to_string(split.seed_count));
    out.emplace_back("k", std::to_string(split.k));
    out.emplace_back("ratios", r.str());
    out.emplace_back("relation_disjoint", split.relation_disjoint ? "true" : "false");
    for (const auto& [k, v] : paths) out.emplace_back(k, v);
    return out;
  }

  std::string path(const std::string& key) const {
    auto it = paths.find(key);
    if (it == paths.end() || it->second.empty()) throw ConfigError("missing required setting '" + key + "'");
    return it->second;
  }
};

inline void print_header(std::ostream& out, const std::string& command, const RunConfig& rc) {
  std::string canon;
  for (const auto& [k, v] : rc.effective()) canon += k + "=" + v + "\n";
  out << "# thor " << kVersion << " " << command << "\n";
  out << "# config_hash = " << hex(fnv1a(canon)) << "\n";
  for (const auto& [k, v] : rc.effective()) out << "# " << k << " = " << v << "\n";
}

// Flag storage: every config key is also a --flag (underscores become dashes).
struct FlagSet {
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;

  void add_all(CLI::App* app) {
    std::vector<std::string> keys = train_config_keys();
    keys.insert(keys.end(), run_keys().begin(), run_keys().end());
    for (const auto& k : keys) {
      std::string flag = "--" + k;
      std::replace(flag.begin(), flag.end(), '_', '-');
      options[k] = app->add_option(flag, values[k], "config key '" + k + "'");
    }
  }

  void apply(RunConfig& rc) const {
    for (const auto& [k, opt] : options)
      if (opt->count() > 0) rc.set(k, values.at(k));
  }
};

inline Hkg load_graph_file(const std::string& path) {
  const auto facts = io::read_facts(path);
  return Hkg::from_raw(facts);
}

inline void print_stats(std::ostream& out, const char* title, const fg::FoundationGraph& g) {
  const auto s = fg::graph_stats(g);
  out << title << ": nodes=" << s.nodes << " edges=" << s.edges << "\n";
  for (const auto& [name, count] : s.per_type)
    if (count > 0 || g.kind != fg::GraphKind::RelationalEntity) out << "  " << std::left << std::setw(12) << name << count << "\n";
  out << "  out-degree histogram:";
  for (const auto& [deg, n] : s.out_degree_histogram) out << " " << deg << ":" << n;
  out << "\n";
}

// Parses a query line: TAB-separated fact with exactly one '?' at an entity position.
inline QueryFact parse_query(const Hkg& kg, const std::string& text) {
  std::string line = text;
  // Accept literal "\t" escapes from shells that cannot type tabs.
  for (std::size_t p; (p = line.find("\\t")) != std::string::npos;) line.replace(p, 2, "\t");
  const auto raw = io::parse_fact_line(line);
  std::optional<MaskedPosition> mask;
  auto check_mask = [&](const std::string& name, MaskedPosition m) {
    if (name != "?") return;
    if (mask) throw DataError("query has more than one '?'");
    mask = m;
  };
  check_mask(raw.head, MaskedPosition::head());
  check_mask(raw.tail, MaskedPosition::tail());
  for (std::uint32_t i = 0; i < raw.qualifiers.size(); ++i) check_mask(raw.qualifiers[i].second, MaskedPosition::value(i));
  if (!mask) throw DataError("query needs one '?' at an entity position");
  auto ent = [&](const std::string& n) -> EntityId {
    if (n == "?") return EntityId(0);
    auto id = kg.entities().find(n);
    if (!id) throw VocabularyError("entity '" + n + "' is not in the graph");
    return EntityId(*id);
  };
  auto rel = [&](const std::string& n) -> RelationId {
    auto id = kg.relations().find(n);
    if (!id) throw VocabularyError("relation '" + n + "' is not in the graph");
    return RelationId(*id);
  };
  HyperFact f{ent(raw.head), rel(raw.relation), ent(raw.tail), {}};
  for (const auto& [k, v] : raw.qualifiers) f.qualifiers.push_back({rel(k), ent(v)});
  QueryFact q{f, *mask, std::nullopt, std::nullopt};
  return q;
}

struct Selfcheck {
  bool gradients = false;
  bool equivariance = false;
  bool exclusion = false;
};

inline Selfcheck run_selfcheck(std::ostream& out, std::size_t equivariance_cases) {
  Selfcheck res;
  {
    ModelConfig mc;
    mc.dim = 8;
    mc.layers = 2;
    mc.heads = 1;
    const auto kg = Hkg::from_raw(check::gradient_facts());
    double worst = 0.0;
    std::string worst_name;
    for (const auto& r : check::gradient_check(mc, kg, 11)) {
      if (r.rel_error > worst) worst = r.rel_error, worst_name = r.name;
    }
    res.gradients = worst <= 1e-3;
    out << (res.gradients ? "PASS" : "FAIL") << "  gradients: worst relative error " << worst << " (" << worst_name
        << "), limit 1e-3\n";
  }
  {
    Model model{ModelConfig{}};
    Rng rng(2024);
    auto params = model.init<float>(rng);
    double worst = 0.0;
    std::size_t rank_mismatch = 0;
    for (std::size_t i = 0; i < equivariance_cases; ++i) {
      const auto c = check::equivariance_case(model, params, rng);
      worst = std::max(worst, c.max_abs_diff);
      rank_mismatch += c.ranking_identical ? 0 : 1;
    }
    res.equivariance = worst <= 1e-4 && rank_mismatch == 0;
    out << (res.equivariance ? "PASS" : "FAIL") << "  equivariance: " << equivariance_cases << " cases, max |diff| "
        << worst << ", ranking mismatches " << rank_mismatch << "\n";
  }
  {
    // Incremental exclusion agrees with rebuilding the graphs without the fact.
    Rng rng(77);
    std::size_t bad = 0, cases = 0;
    for (int t = 0; t < 50; ++t) {
      const auto kg = synth::random_hkg(rng);
      for (const auto& name : {"default", "addAllFI", "ultra-alike"}) {
        const auto cfg = fg::preset(name);
        const auto rel = fg::GuardedGraph::relation(kg, cfg);
        const auto ent = fg::GuardedGraph::entity(kg, cfg);
        for (std::uint32_t f = 0; f < kg.fact_count(); ++f) {
          const std::uint32_t ex[] = {f};
          ++cases;
          if (rel.without(rel.edges_removed_by(f)) != fg::build_relation_graph(kg, cfg, ex)) ++bad;
          if (ent.without(ent.edges_removed_by(f)) != fg::build_entity_graph(kg, cfg, ex)) ++bad;
        }
      }
    }
    res.exclusion = bad == 0;
    out << (res.exclusion ? "PASS" : "FAIL") << "  leakage-guard exclusion: " << cases << " cases, " << bad
        << " mismatches\n";
  }
  return res;
}

inline int dispatch(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Hyper-relational knowledge graph link prediction with relation and entity foundation graphs"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_path;
  std::string ablation;
  std::size_t threads = 0;
  app.add_option("--config", config_path, "'key = value' config file; flags override it");
  app.add_option("--ablation", ablation, "interaction preset: default, noR2K, noPrim, addK2K, addShareV, addAllFI, noV2V, noP2V, noV, ultra-alike");
  app.add_option("--threads", threads, "worker threads");
  app.set_version_flag("--version", kVersion);

  FlagSet flags;
  auto* split_cmd = app.add_subcommand("split", "build an inductive bundle from a raw fact file");
  auto* train_cmd = app.add_subcommand("train", "train on a bundle and write a checkpoint");
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a bundle");
  auto* stats_cmd = app.add_subcommand("graph-stats", "foundation graph statistics and edge-list export");
  auto* check_cmd = app.add_subcommand("selfcheck", "gradient, equivariance and exclusion self-checks");
  auto* predict_cmd = app.add_subcommand("predict", "rank entities for one query");
  // Every subcommand accepts every config key as a flag.
  std::vector<FlagSet> per_cmd(6);
  CLI::App* cmds[] = {split_cmd, train_cmd, eval_cmd, stats_cmd, check_cmd, predict_cmd};
  for (std::size_t i = 0; i < 6; ++i) per_cmd[i].add_all(cmds[i]);

  bool transductive = false, raw_ranks = false;
  std::string eval_split = "test", tsv_path, export_rel, export_ent, query_text;
  std::size_t top = 10, equivariance_cases = 100;
  eval_cmd->add_flag("--transductive", transductive, "use the training graph as the inference graph");
  eval_cmd->add_flag("--raw", raw_ranks, "unfiltered ranks");
  eval_cmd->add_option("--on", eval_split, "valid or test")->check(CLI::IsMember({"valid", "test"}));
  eval_cmd->add_option("--tsv", tsv_path, "also write metrics as TSV");
  stats_cmd->add_option("--export-relation", export_rel, "write relation graph edges");
  stats_cmd->add_option("--export-entity", export_ent, "write entity graph edges");
  predict_cmd->add_option("--query", query_text, "TAB-separated fact with '?' at the masked entity")->required();
  predict_cmd->add_option("--top", top, "entities to print");
  check_cmd->add_option("--cases", equivariance_cases, "equivariance cases");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  CLI::App* cmd = nullptr;
  std::size_t idx = 0;
  for (std::size_t i = 0; i < 6; ++i)
    if (cmds[i]->parsed()) cmd = cmds[i], idx = i;

  try {
    RunConfig rc;
    if (!config_path.empty())
      for (const auto& [k, v] : load_config_file(config_path)) rc.set(k, v);
    per_cmd[idx].apply(rc);
    if (!ablation.empty()) rc.train.model.interactions = fg::preset(ablation);
    if (threads > 0) rc.train.threads = threads;
    check_train_config(rc.train);
    print_header(out, cmd->get_name(), rc);

    if (cmd == split_cmd) {
      const auto raw = load_graph_file(rc.path("input"));
      const auto res = split::make_split(raw, rc.split);
      split::write_split(res, rc.split, rc.path("out"));
      out << split::split_report(res, rc.split);
      return kOk;
    }
    if (cmd == train_cmd) {
      const auto bundle = io::load_bundle(rc.path("bundle"));
      out << bundle.diagnostics.report();
      TrainHooks hooks;
      hooks.on_epoch = [&](const EpochRecord& r, ad::ParamStore<float>&) {
        out << "epoch\t" << r.epoch << "\tloss\t" << r.loss << "\tvalid_mrr\t" << r.valid_mrr << "\n" << std::flush;
        return false;
      };
      FitOptions fo;
      fo.checkpoint_path = rc.path("checkpoint");
      const auto ck = fit(bundle, rc.train, hooks, fo);
      out << "best checkpoint: epoch " << ck.epoch << "\n";
      return kOk;
    }
    if (cmd == eval_cmd) {
      const auto bundle = io::load_bundle(rc.path("bundle"));
      auto ck = load(rc.path("checkpoint"));
      Model model(ck.config.model);
      const Hkg& graph = transductive ? bundle.train : bundle.inference;
      const auto& part = eval_split == "valid" ? bundle.valid : bundle.test;
      const auto queries = queries_for(graph, part);
      eval::KnownFacts known(graph.facts());
      for (const auto* p : {&bundle.valid, &bundle.test})
        for (const auto& f : io::map_facts(graph, *p))
          if (f) known.add(*f);
      const auto m = evaluate_model(model, ck.params, graph, queries, known, {!raw_ranks, rc.train.threads});
      out << eval::format_table(m);
      if (!tsv_path.empty()) {
        std::ofstream ts(tsv_path);
        if (!ts) throw IoError("cannot write " + tsv_path);
        ts << eval::format_tsv(m);
      }
      return kOk;
    }
    if (cmd == stats_cmd) {
      Hkg kg;
      if (rc.paths.count("input")) {
        kg = load_graph_file(rc.path("input"));
      } else {
        auto b = io::load_bundle(rc.path("bundle"));
        kg = rc.paths.count("split_part") && rc.paths.at("split_part") == "inference" ? std::move(b.inference) : std::move(b.train);
      }
      out << "facts=" << kg.fact_count() << " entities=" << kg.entity_count() << " relations=" << kg.relation_count()
          << "\n";
      const auto& ic = rc.train.model.interactions;
      const auto rel = fg::build_relation_graph(kg, ic);
      const auto ent = fg::build_entity_graph(kg, ic);
      print_stats(out, "relation graph", rel);
      print_stats(out, "entity graph", ent);
      if (!export_rel.empty()) {
        std::ofstream os(export_rel);
        if (!os) throw IoError("cannot write " + export_rel);
        fg::export_edges(os, rel, &kg.relations().names());
      }
      if (!export_ent.empty()) {
        std::ofstream os(export_ent);
        if (!os) throw IoError("cannot write " + export_ent);
        fg::export_edges(os, ent, &kg.entities().names());
      }
      return kOk;
    }
    if (cmd == check_cmd) {
      const auto r = run_selfcheck(out, equivariance_cases);
      return r.gradients && r.equivariance && r.exclusion ? kOk : kInternal;
    }
    if (cmd == predict_cmd) {
      auto ck = load(rc.path("checkpoint"));
      Model model(ck.config.model);
      const auto kg = load_graph_file(rc.path("input"));
      const auto q = parse_query(kg, query_text);
      GraphContext ctx(kg, ck.config.model.interactions);
      Workspace ws;
      const auto logits = model.score(ck.params, ctx, q, ws);
      const auto probs = dec::probabilities(logits);
      std::vector<std::uint32_t> order(logits.size());
      std::iota(order.begin(), order.end(), 0u);
      std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return logits[a] > logits[b]; });
      for (std::size_t i = 0; i < std::min(top, order.size()); ++i) {
        out << i + 1 << '\t' << kg.entities().name(order[i]) << '\t' << std::setprecision(6) << probs[order[i]] << '\n';
      }
      return kOk;
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return kInternal;
  }
  return kInternal;
}

}  // namespace thor::cli
