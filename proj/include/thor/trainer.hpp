#pragma once

// Masked-entity training: every query is scored against the whole entity
// vocabulary of the training graph with a cross-entropy loss.

#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "thor/autodiff.hpp"
#include "thor/checkpoint.hpp"
#include "thor/errors.hpp"
#include "thor/evaluator.hpp"
#include "thor/hkg.hpp"
#include "thor/io.hpp"
#include "thor/model.hpp"
#include "thor/rng.hpp"

namespace thor {

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 16;
  double lr = 1e-3;
  std::uint64_t seed = 42;
  ModelConfig model;
  bool leakage_guard = true;
  double clip = 1.0;
  std::size_t threads = 1;
  std::size_t checkpoint_every = 0;  // epochs; 0 = only at the end
  std::size_t eval_every = 1;
  std::size_t max_valid_queries = 0;  // 0 = all
};

// ---------------------------------------------------------------------------
// "key = value" view of a TrainConfig, shared by config files and sidecars.

namespace detail {

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw ConfigError("bad boolean for '" + key + "': " + v);
}

template <typename N>
N parse_number(const std::string& key, const std::string& v) {
  std::istringstream is(v);
  N out{};
  if (!(is >> out) || !is.eof()) throw ConfigError("bad number for '" + key + "': " + v);
  if constexpr (std::is_unsigned_v<N>) {
    if (v.find('-') != std::string::npos) throw ConfigError("negative value for '" + key + "': " + v);
  }
  return out;
}

inline std::string interactions_to_string(const fg::InteractionConfig& c) {
  for (const auto& name : fg::preset_names())
    if (fg::preset(name) == c) return name;
  std::string out;
  for (std::size_t i = 0; i < fg::kRelInteractionCount; ++i)
    if (c.relation.test(i)) out += (out.empty() ? "" : ",") + std::string(fg::kRelNames[i]);
  for (std::size_t i = 0; i < fg::kEntInteractionCount; ++i)
    if (c.entity.test(i)) out += (out.empty() ? "" : ",") + std::string(fg::kEntNames[i]);
  return out;
}

inline fg::InteractionConfig interactions_from_string(const std::string& v) {
  if (v.find('_') == std::string::npos) return fg::preset(v);
  std::vector<std::string> names;
  std::string cur;
  for (char ch : v + ",") {
    if (ch == ',') {
      if (!cur.empty()) names.push_back(cur);
      cur.clear();
    } else if (ch != ' ') {
      cur += ch;
    }
  }
  return fg::config_from_names(names);
}

}  // namespace detail

inline const std::vector<std::string>& train_config_keys() {
  static const std::vector<std::string> keys = {
      "epochs", "batch_size", "lr",         "seed",       "dim",           "layers",           "heads",
      "decoder_layers", "residual", "layer_norm", "zero_other", "interactions", "leakage_guard", "clip",
      "threads", "checkpoint_every", "eval_every", "max_valid_queries"};
  return keys;
}

inline bool is_train_key(const std::string& key) {
  for (const auto& k : train_config_keys())
    if (k == key) return true;
  return false;
}

inline void set_train_field(TrainConfig& c, const std::string& key, const std::string& v) {
  using detail::parse_bool;
  using detail::parse_number;
  if (key == "epochs") c.epochs = parse_number<std::size_t>(key, v);
  else if (key == "batch_size") c.batch_size = parse_number<std::size_t>(key, v);
  else if (key == "lr") c.lr = parse_number<double>(key, v);
  else if (key == "seed") c.seed = parse_number<std::uint64_t>(key, v);
  else if (key == "dim") c.model.dim = parse_number<std::size_t>(key, v);
  else if (key == "layers") c.model.layers = parse_number<std::size_t>(key, v);
  else if (key == "heads") c.model.heads = parse_number<std::size_t>(key, v);
  else if (key == "decoder_layers") c.model.decoder_layers = parse_number<std::size_t>(key, v);
  else if (key == "residual") c.model.residual = parse_bool(key, v);
  else if (key == "layer_norm") c.model.layer_norm = parse_bool(key, v);
  else if (key == "zero_other") c.model.zero_other = parse_bool(key, v);
  else if (key == "interactions") c.model.interactions = detail::interactions_from_string(v);
  else if (key == "leakage_guard") c.leakage_guard = parse_bool(key, v);
  else if (key == "clip") c.clip = parse_number<double>(key, v);
  else if (key == "threads") c.threads = parse_number<std::size_t>(key, v);
  else if (key == "checkpoint_every") c.checkpoint_every = parse_number<std::size_t>(key, v);
  else if (key == "eval_every") c.eval_every = parse_number<std::size_t>(key, v);
  else if (key == "max_valid_queries") c.max_valid_queries = parse_number<std::size_t>(key, v);
  else throw ConfigError("unknown config key '" + key + "'");
}

inline void check_train_config(const TrainConfig& c) {
  if (c.batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(c.lr > 0.0)) throw ConfigError("lr must be positive");
  if (c.model.dim == 0) throw ConfigError("dim must be positive");
  if (c.threads == 0) throw ConfigError("threads must be positive");
  if (c.eval_every == 0) throw ConfigError("eval_every must be positive");
  if (!(c.clip > 0.0)) throw ConfigError("clip must be positive");
  c.model.decoder().head_dim();
}

inline std::vector<std::pair<std::string, std::string>> train_config_pairs(const TrainConfig& c) {
  auto b = [](bool x) { return std::string(x ? "true" : "false"); };
  std::ostringstream lr, clip;
  lr << std::setprecision(17) << c.lr;
  clip << std::setprecision(17) << c.clip;
  return {{"epochs", std::to_string(c.epochs)},
          {"batch_size", std::to_string(c.batch_size)},
          {"lr", lr.str()},
          {"seed", std::to_string(c.seed)},
          {"dim", std::to_string(c.model.dim)},
          {"layers", std::to_string(c.model.layers)},
          {"heads", std::to_string(c.model.heads)},
          {"decoder_layers", std::to_string(c.model.decoder_layers)},
          {"residual", b(c.model.residual)},
          {"layer_norm", b(c.model.layer_norm)},
          {"zero_other", b(c.model.zero_other)},
          {"interactions", detail::interactions_to_string(c.model.interactions)},
          {"leakage_guard", b(c.leakage_guard)},
          {"clip", clip.str()},
          {"threads", std::to_string(c.threads)},
          {"checkpoint_every", std::to_string(c.checkpoint_every)},
          {"eval_every", std::to_string(c.eval_every)},
          {"max_valid_queries", std::to_string(c.max_valid_queries)}};
}

// ---------------------------------------------------------------------------

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
  double valid_mrr = std::numeric_limits<double>::quiet_NaN();  // NaN when not evaluated
};

struct Checkpoint {
  ad::ParamStore<float> params;
  TrainConfig config;
  std::size_t epoch = 0;
  std::vector<EpochRecord> history;
};

// Observers for instrumentation and early stopping. Both are optional.
struct TrainHooks {
  // Called once per training query with the size of the candidate set the
  // loss normalizes over.
  std::function<void(const QueryFact&, std::size_t candidates, std::size_t entity_count)> on_candidates;
  // Called after every epoch; returning true stops training.
  std::function<bool(const EpochRecord&, ad::ParamStore<float>&)> on_epoch;
};

class Trainer {
 public:
  Trainer(const Hkg& train, TrainConfig cfg)
      : cfg_(std::move(cfg)), model_(cfg_.model), kg_(&train), ctx_(train, cfg_.model.interactions),
        optimizer_(ad::AdamConfig{cfg_.lr, 0.9, 0.999, 1e-8}), shuffle_rng_(cfg_.seed ^ 0x5deece66dULL) {
    check_train_config(cfg_);
    Rng init_rng(cfg_.seed);
    params_ = model_.init<float>(init_rng);
    queries_ = generate_queries(train);
    workspaces_.resize(cfg_.threads);
  }

  const Model& model() const { return model_; }
  const TrainConfig& config() const { return cfg_; }
  const GraphContext& context() const { return ctx_; }
  ad::ParamStore<float>& params() { return params_; }
  const std::vector<QueryFact>& queries() const { return queries_; }
  TrainHooks& hooks() { return hooks_; }

  // One optimizer step on the mean loss of `batch`.
  double train_step(std::span<const QueryFact> batch) {
    if (batch.empty()) return 0.0;
    params_.zero_grad();
    const float inv = 1.0f / static_cast<float>(batch.size());
    std::vector<double> losses(batch.size());
    auto run = [&](ad::ParamStore<float>& store, Workspace& ws, std::size_t begin, std::size_t end) {
      for (std::size_t i = begin; i < end; ++i) {
        const auto& q = batch[i];
        if (!q.answer) throw DataError("training query without an answer");
        const auto exclude = cfg_.leakage_guard ? q.source_fact : std::nullopt;
        ad::Tape<float> tape;
        auto out = model_.forward(tape, store, ctx_, q, exclude, ws);
        const std::size_t tail = out.entity_count - out.candidates.size();
        if (hooks_.on_candidates) hooks_.on_candidates(q, out.candidates.size() + tail, kg_->entity_count());
        auto l = Model::loss(out);
        losses[i] = static_cast<double>(l.value().data[0]);
        tape.backward(ad::scale(l, inv));
      }
    };
    const std::size_t threads = std::min(cfg_.threads, batch.size());
    if (threads <= 1) {
      run(params_, workspaces_[0], 0, batch.size());
    } else {
      // Static partition; worker gradients are summed in worker order so the
      // result depends only on the thread count, not on scheduling.
      std::vector<ad::ParamStore<float>> stores(threads, params_);
      std::vector<std::thread> pool;
      std::vector<std::exception_ptr> errors(threads);
      const std::size_t chunk = (batch.size() + threads - 1) / threads;
      for (std::size_t w = 0; w < threads; ++w) {
        pool.emplace_back([&, w] {
          try {
            run(stores[w], workspaces_[w], w * chunk, std::min(batch.size(), (w + 1) * chunk));
          } catch (...) {
            errors[w] = std::current_exception();
          }
        });
      }
      for (auto& t : pool) t.join();
      for (auto& e : errors)
        if (e) std::rethrow_exception(e);
      for (std::size_t w = 0; w < threads; ++w)
        for (std::size_t p = 0; p < params_.size(); ++p) {
          auto& g = params_.at(p).grad.data;
          const auto& wg = stores[w].at(p).grad.data;
          for (std::size_t k = 0; k < g.size(); ++k) g[k] += wg[k];
        }
    }
    ad::clip_grad_norm(params_, static_cast<float>(cfg_.clip));
    optimizer_.step(params_);
    double total = 0.0;
    for (double l : losses) total += l;
    return total / static_cast<double>(batch.size());
  }

  // Seeded shuffle, then train_step over consecutive batches. Returns the mean
  // query loss of the epoch.
  double run_epoch() {
    shuffle_rng_.shuffle(queries_);
    double total = 0.0;
    for (std::size_t b = 0; b < queries_.size(); b += cfg_.batch_size) {
      const std::size_t n = std::min(cfg_.batch_size, queries_.size() - b);
      total += train_step(std::span<const QueryFact>(queries_).subspan(b, n)) * static_cast<double>(n);
    }
    return queries_.empty() ? 0.0 : total / static_cast<double>(queries_.size());
  }

 private:
  TrainConfig cfg_;
  Model model_;
  const Hkg* kg_;
  GraphContext ctx_;
  ad::ParamStore<float> params_;
  ad::Adam<float> optimizer_;
  Rng shuffle_rng_;
  std::vector<QueryFact> queries_;
  std::vector<Workspace> workspaces_;
  TrainHooks hooks_;
};

// Scores evaluation queries on a graph with one workspace per worker.
inline eval::Metrics evaluate_model(const Model& model, ad::ParamStore<float>& params, const Hkg& kg,
                                    std::span<const QueryFact> queries, const eval::KnownFacts& known,
                                    eval::EvalOptions opt = {}, const GraphContext* ctx = nullptr,
                                    bool exclude_source = false) {
  std::optional<GraphContext> own;
  if (!ctx) ctx = &own.emplace(kg, model.config().interactions);
  std::vector<Workspace> ws(std::max<std::size_t>(1, opt.threads));
  auto scorer = [&](const QueryFact& q, std::size_t worker) {
    const auto exclude = exclude_source ? q.source_fact : std::nullopt;
    return model.score(params, *ctx, q, ws[worker], exclude);
  };
  return eval::evaluate(scorer, queries, known, opt);
}

// Queries for every entity position of facts mapped into `kg`'s vocabulary;
// facts that do not map are skipped.
inline std::vector<QueryFact> queries_for(const Hkg& kg, std::span<const RawFact> raw) {
  std::vector<QueryFact> out;
  for (const auto& f : io::map_facts(kg, raw)) {
    if (!f) continue;
    out.push_back(make_query(*f, MaskedPosition::head()));
    out.push_back(make_query(*f, MaskedPosition::tail()));
    for (std::uint32_t i = 0; i < f->arity(); ++i) out.push_back(make_query(*f, MaskedPosition::value(i)));
  }
  return out;
}

// Known facts for filtering: inference, valid and test facts in the inference
// graph's vocabulary.
inline eval::KnownFacts known_facts(const io::DatasetBundle& b) {
  eval::KnownFacts k(b.inference.facts());
  for (const auto* part : {&b.valid, &b.test})
    for (const auto& f : io::map_facts(b.inference, *part))
      if (f) k.add(*f);
  return k;
}

// ---------------------------------------------------------------------------
// Checkpoint files: parameters in the binary format plus a text sidecar.

inline std::filesystem::path sidecar_path(const std::filesystem::path& ckpt) {
  auto p = ckpt;
  p += ".meta";
  return p;
}

inline void write_sidecar(std::ostream& os, const Checkpoint& c) {
  os << "# thor checkpoint metadata\n";
  for (const auto& [k, v] : train_config_pairs(c.config)) os << "# " << k << " = " << v << '\n';
  os << "# epoch = " << c.epoch << '\n';
  os << "epoch\tloss\tvalid_mrr\n";
  os << std::setprecision(10);
  for (const auto& r : c.history) os << r.epoch << '\t' << r.loss << '\t' << r.valid_mrr << '\n';
}

inline void save(const Checkpoint& c, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  ad::save_checkpoint(path.string(), c.params);
  std::ofstream os(sidecar_path(path));
  if (!os) throw IoError("cannot write " + sidecar_path(path).string());
  write_sidecar(os, c);
}

inline Checkpoint load(const std::filesystem::path& path) {
  Checkpoint c;
  c.params = ad::load_checkpoint(path.string());
  std::ifstream is(sidecar_path(path));
  if (!is) throw IoError("missing checkpoint metadata " + sidecar_path(path).string());
  std::string line;
  bool table = false;
  while (std::getline(is, line)) {
    if (line.rfind("# ", 0) == 0) {
      const auto eq = line.find(" = ");
      if (eq == std::string::npos) continue;
      const auto key = line.substr(2, eq - 2);
      const auto value = line.substr(eq + 3);
      if (key == "epoch") {
        c.epoch = detail::parse_number<std::size_t>(key, value);
      } else {
        set_train_field(c.config, key, value);
      }
    } else if (line.rfind("epoch\t", 0) == 0) {
      table = true;
    } else if (table && !line.empty()) {
      std::istringstream ls(line);
      EpochRecord r;
      std::string mrr;
      ls >> r.epoch >> r.loss >> mrr;
      r.valid_mrr = mrr == "nan" ? std::numeric_limits<double>::quiet_NaN() : std::stod(mrr);
      c.history.push_back(r);
    }
  }
  return c;
}

struct FitOptions {
  std::optional<std::filesystem::path> checkpoint_path;  // latest; best-valid goes to <path>.best
};

// Trains on bundle.train, validating on bundle.valid against the inference
// graph. Returns the best-validation checkpoint, or the last one when there is
// nothing to validate on.
inline Checkpoint fit(const io::DatasetBundle& bundle, const TrainConfig& cfg, TrainHooks hooks = {},
                      const FitOptions& opt = {}) {
  const auto report = validate(bundle.train);
  if (!report.ok()) throw DataError("training graph is invalid:\n" + report.to_string());
  Trainer trainer(bundle.train, cfg);
  trainer.hooks() = hooks;

  auto valid = queries_for(bundle.inference, bundle.valid);
  if (cfg.max_valid_queries && valid.size() > cfg.max_valid_queries) valid.resize(cfg.max_valid_queries);
  const auto known = known_facts(bundle);
  std::optional<GraphContext> inf_ctx;
  if (!valid.empty()) inf_ctx.emplace(bundle.inference, cfg.model.interactions);

  Checkpoint last{trainer.params(), cfg, 0, {}};
  std::optional<Checkpoint> best;
  double best_mrr = -1.0;
  for (std::size_t e = 1; e <= cfg.epochs; ++e) {
    EpochRecord rec;
    rec.epoch = e;
    rec.loss = trainer.run_epoch();
    if (!valid.empty() && (e % cfg.eval_every == 0 || e == cfg.epochs)) {
      rec.valid_mrr = evaluate_model(trainer.model(), trainer.params(), bundle.inference, valid, known,
                                     {true, cfg.threads}, &*inf_ctx)
                          .mrr_all();
    }
    last.history.push_back(rec);
    last.epoch = e;
    const bool stop = hooks.on_epoch && hooks.on_epoch(rec, trainer.params());
    if (!std::isnan(rec.valid_mrr) && rec.valid_mrr > best_mrr) {
      best_mrr = rec.valid_mrr;
      best = Checkpoint{trainer.params(), cfg, e, last.history};
      if (opt.checkpoint_path) {
        auto p = *opt.checkpoint_path;
        p += ".best";
        save(*best, p);
      }
    }
    if (opt.checkpoint_path && cfg.checkpoint_every && e % cfg.checkpoint_every == 0) {
      last.params = trainer.params();
      save(last, *opt.checkpoint_path);
    }
    if (stop) break;
  }
  last.params = trainer.params();
  if (opt.checkpoint_path) save(last, *opt.checkpoint_path);
  if (best) {
    best->history = last.history;
    return *best;
  }
  return last;
}

}  // namespace thor
