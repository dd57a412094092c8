// Copyright 2026 The nsearch Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "cli.h"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>

#include "nsearch/binary_io.h"
#include "nsearch/config.h"
#include "nsearch/corpus.h"
#include "nsearch/eval.h"
#include "nsearch/hnsw.h"
#include "nsearch/retrieval.h"
#include "nsearch/rng.h"
#include "nsearch/scorer.h"
#include "nsearch/trainer.h"

namespace nsearch::cli {
namespace {

namespace fs = std::filesystem;

class MissingArtifact : public std::runtime_error {
 public:
  MissingArtifact(const std::string& what, const fs::path& path, const std::string& hint)
      : std::runtime_error("missing " + what + " '" + path.string() + "'" +
                           (hint.empty() ? "" : " (" + hint + ")")) {}
};

std::string normalize_key(std::string key) {
  std::replace(key.begin(), key.end(), '-', '_');
  return key;
}

KeyValueConfig normalized(const KeyValueConfig& kv) {
  KeyValueConfig out;
  for (const auto& [k, v] : kv.values()) out.set(normalize_key(k), v);
  return out;
}

// Effective settings for one run: flags over config file over defaults.
// Every value that is read is recorded for the manifest.
class Settings {
 public:
  Settings(KeyValueConfig kv, fs::path out_dir) : kv_(std::move(kv)), out_dir_(std::move(out_dir)) {}

  bool given(const std::string& key) const { return kv_.has(key); }

  std::string str(const std::string& key, const std::string& fallback) {
    return record(key, kv_.get_string(key, fallback));
  }
  double num(const std::string& key, double fallback) {
    const double v = kv_.get_double(key, fallback);
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    record(key, buf);
    return v;
  }
  std::size_t count(const std::string& key, std::size_t fallback) {
    const long long v = kv_.get_int(key, static_cast<long long>(fallback));
    if (v < 0) throw ConfigError("'" + key + "' must be non-negative");
    record(key, std::to_string(v));
    return static_cast<std::size_t>(v);
  }
  bool flag(const std::string& key, bool fallback) {
    const bool v = kv_.get_bool(key, fallback);
    record(key, v ? "true" : "false");
    return v;
  }
  std::vector<std::size_t> list(const std::string& key, const std::vector<std::size_t>& fallback) {
    const auto v = kv_.get_size_list(key, fallback);
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    record(key, s);
    return v;
  }
  // Artifact path: explicit value or `default_name` inside the output dir.
  fs::path input(const std::string& key, const std::string& default_name) {
    const fs::path p = kv_.has(key) ? fs::path(*kv_.get(key)) : out_dir_ / default_name;
    inputs_[key] = p.string();
    return p;
  }
  fs::path output(const std::string& key, const std::string& default_name) {
    const fs::path p = kv_.has(key) ? fs::path(*kv_.get(key)) : out_dir_ / default_name;
    outputs_[key] = p.string();
    return p;
  }

  const fs::path& out_dir() const { return out_dir_; }

  std::string manifest(const std::string& subcommand, const std::string& config_path,
                       std::uint64_t seed, std::size_t threads) const {
    KeyValueConfig m;
    m.set("subcommand", subcommand);
    m.set("tool_version", kToolVersion);
    m.set("config", config_path);
    m.set("seed", std::to_string(seed));
    m.set("threads", std::to_string(threads));
    for (const auto& [k, v] : inputs_) m.set("input." + k, v);
    for (const auto& [k, v] : outputs_) m.set("output." + k, v);
    for (const auto& [k, v] : params_) m.set("param." + k, v);
    return m.to_string();
  }

 private:
  std::string record(const std::string& key, std::string value) {
    params_[key] = value;
    return value;
  }

  KeyValueConfig kv_;
  fs::path out_dir_;
  std::map<std::string, std::string> inputs_, outputs_, params_;
};

void require_file(const fs::path& path, const std::string& what, const std::string& hint) {
  if (!fs::is_regular_file(path)) throw MissingArtifact(what, path, hint);
}

Dataset input_dataset(Settings& s) {
  const auto path = s.input("dataset", "dataset.bin");
  require_file(path, "dataset", "run gen-data or ingest first");
  return load_dataset(path);
}

Scorer input_scorer(Settings& s) {
  const auto path = s.input("checkpoint", "checkpoint.bin");
  require_file(path, "checkpoint", "run train first");
  return load_checkpoint(path);
}

IndexContainer input_index(Settings& s, const Scorer& scorer) {
  const auto path = s.input("index", "index.bin");
  require_file(path, "index", "run build-index first");
  IndexContainer index = load_index(path);
  if (index.embeddings.cols() != scorer.dim() || index.embeddings.rows() != scorer.config().n_items()) {
    throw ShapeError("index does not match the checkpoint: " +
                     std::to_string(index.embeddings.rows()) + "x" +
                     std::to_string(index.embeddings.cols()) + " embeddings vs " +
                     std::to_string(scorer.config().n_items()) + "x" + std::to_string(scorer.dim()));
  }
  return index;
}

std::size_t default_eval_users(std::size_t n_users) { return std::min<std::size_t>(200, n_users / 2); }

// ef/steps are written top layer first, as in "10,20,40"; stored by layer.
RetrievalParams retrieval_params(Settings& s) {
  RetrievalParams p = RetrievalParams::desk_scale();
  std::vector<std::size_t> ef(p.ef.rbegin(), p.ef.rend());
  std::vector<std::size_t> steps(p.steps.rbegin(), p.steps.rend());
  ef = s.list("ef", ef);
  steps = s.list("steps", steps);
  p.ef.assign(ef.rbegin(), ef.rend());
  p.steps.assign(steps.rbegin(), steps.rend());
  p.k = s.count("k", p.k);
  p.early_stop = s.flag("early_stop", true);
  return p;
}

RetrievalMethod retrieval_method(Settings& s) {
  const std::string m = s.str("method", "beam");
  if (m == "beam") return RetrievalMethod::kBeam;
  if (m == "hnsw") return RetrievalMethod::kHnswBaseline;
  throw ConfigError("unknown method '" + m + "' (expected beam or hnsw)");
}

std::vector<UserId> query_users(Settings& s, const Dataset& ds) {
  if (!s.given("users")) return ds.splits.test;
  std::vector<UserId> users;
  for (std::size_t u : s.list("users", {})) {
    const auto id = static_cast<UserId>(u);
    if (!ds.users.count(id)) throw ConfigError("unknown user " + std::to_string(u));
    users.push_back(id);
  }
  return users;
}

std::vector<SweepPoint> parse_grid(const std::string& text) {
  std::vector<SweepPoint> grid;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t end = std::min(text.find(',', start), text.size());
    const std::string item = text.substr(start, end - start);
    const std::size_t colon = item.find(':');
    if (colon == std::string::npos) throw ConfigError("grid entries are ef0:t0, got '" + item + "'");
    const auto ef = parse_size_list(item.substr(0, colon));
    const auto t = parse_size_list(item.substr(colon + 1));
    if (ef.size() != 1 || t.size() != 1) throw ConfigError("bad grid entry '" + item + "'");
    grid.push_back({ef[0], t[0]});
    start = end + 1;
  }
  return grid;
}

struct RunContext {
  Settings& settings;
  std::uint64_t seed;
  std::size_t threads;
  std::ostream& out;
};

// ---- subcommands

void cmd_gen_data(RunContext& c) {
  Settings& s = c.settings;
  const std::size_t users = s.count("users", 1000);
  const std::size_t items = s.count("items", 2000);
  const std::size_t dim = s.count("dim", 16);
  const std::size_t seq_len = s.count("seq_len", 30);
  SyntheticOptions opts;
  opts.n_clusters = s.count("clusters", 0);
  opts.interests_per_user = s.count("interests", 1);
  opts.affinity_temperature = s.num("temperature", opts.affinity_temperature);
  opts.item_noise = s.num("item_noise", opts.item_noise);
  opts.user_noise = s.num("user_noise", opts.user_noise);
  Dataset ds = generate_synthetic(users, items, dim, seq_len, derive_seed(c.seed, "gen-data"), opts);
  ds = split_leave_middle(ds, s.count("eval_users", default_eval_users(users)),
                          derive_seed(c.seed, "split"), s.count("valid_users", 0));
  const auto out = s.output("output", "dataset.bin");
  save_dataset(ds, out);
  c.out << "dataset: " << ds.users.size() << " users, " << ds.n_items() << " items, "
        << ds.n_events() << " events, " << ds.splits.test.size() << " test users -> " << out.string()
        << "\n";
}

void cmd_ingest(RunContext& c) {
  Settings& s = c.settings;
  const auto events = s.input("events", "events.csv");
  require_file(events, "event log", "pass --events");
  std::optional<fs::path> features;
  if (s.given("item_features")) {
    features = s.input("item_features", "");
    require_file(*features, "item feature sidecar", "");
  }
  Dataset ds = load_events(events, s.count("min_events", 10), features);
  ds = split_leave_middle(ds, s.count("eval_users", default_eval_users(ds.users.size())),
                          derive_seed(c.seed, "split"), s.count("valid_users", 0));
  const auto out = s.output("output", "dataset.bin");
  save_dataset(ds, out);
  c.out << "dataset: " << ds.users.size() << " users, " << ds.n_items() << " items, "
        << ds.n_events() << " events, " << ds.splits.test.size() << " test users ("
        << ds.skipped_eval_users << " skipped) -> " << out.string() << "\n";
}

GradientTarget parse_gradient_target(const std::string& name) {
  if (name == "probability") return GradientTarget::kProbability;
  if (name == "logit") return GradientTarget::kLogit;
  throw ConfigError("unknown gradient target '" + name + "' (expected probability or logit)");
}

void cmd_train(RunContext& c) {
  Settings& s = c.settings;
  const Dataset ds = input_dataset(s);
  ScorerConfig sc = make_scorer_config(ds, parse_architecture(s.str("arch", "mlp-attention")));
  sc.feature_dim = s.count("feature_dim", sc.feature_dim);
  sc.max_seq_len = s.count("max_seq_len", sc.max_seq_len);
  sc.activation = parse_activation(s.str("activation", std::string(activation_name(sc.activation))));
  sc.gradient_target = parse_gradient_target(s.str("gradient_target", "probability"));
  sc.init = parse_init_scheme(s.str("init", std::string(init_scheme_name(sc.init))));

  KeyValueConfig train_kv;
  TrainConfig defaults;
  const bool aux = s.flag("aux_enabled", defaults.aux_enabled);
  train_kv.set("aux_enabled", aux ? "true" : "false");
  // Disabling the auxiliary task without naming an epsilon means epsilon 0.
  if (!aux && !s.given("epsilon")) defaults.epsilon = 0.0;
  const char* keys[] = {"learning_rate", "epsilon", "k_neg", "epochs", "batch_users", "aux_weight",
                        "aux_form", "noise", "adam_beta1", "adam_beta2", "adam_eps"};
  const KeyValueConfig defaults_kv = defaults.to_config();
  for (const char* k : keys) train_kv.set(k, s.str(k, *defaults_kv.get(k)));
  TrainConfig tc = TrainConfig::from_config(train_kv, defaults);
  tc.seed = derive_seed(c.seed, "train");

  const Scorer initial = Scorer::create(sc, derive_seed(c.seed, "scorer-init"));
  const TrainResult result = train(ds, initial, tc);
  const auto ckpt = s.output("output", "checkpoint.bin");
  const auto trace = s.output("trace", "loss_trace.csv");
  save_checkpoint(result.scorer, ckpt);
  write_text_file(trace, loss_trace_csv(result.trace));
  const auto& last = result.trace.back();
  c.out << "trained " << architecture_name(sc.architecture) << ": " << result.trace.size()
        << " steps, final l_nce " << last.l_nce << " l_aux " << last.l_aux << ", "
        << result.clamped << " clamped probabilities -> " << ckpt.string() << "\n";
}

void cmd_extract(RunContext& c) {
  Settings& s = c.settings;
  const Scorer scorer = input_scorer(s);
  const auto out = s.output("output", "embeddings.bin");
  const EmbeddingMatrix embs = scorer.item_embeddings();
  save_embeddings(embs, out);
  c.out << "embeddings: " << embs.rows() << "x" << embs.cols() << " -> " << out.string() << "\n";
}

void cmd_build_index(RunContext& c) {
  Settings& s = c.settings;
  const auto in = s.input("embeddings", "embeddings.bin");
  require_file(in, "embeddings", "run extract-embeddings first");
  EmbeddingMatrix embs = load_embeddings(in);
  HnswParams hp;
  hp.M = s.count("hnsw_m", hp.M);
  hp.ef_construction = s.count("ef_construction", hp.ef_construction);
  hp.max_layers = s.count("max_layers", hp.max_layers);
  hp.heuristic = s.flag("heuristic", hp.heuristic);
  hp.seed = derive_seed(c.seed, "hnsw");
  HnswGraph graph = build_index(embs, hp);
  const auto out = s.output("output", "index.bin");
  const bool connected = graph.is_connected(0);
  const std::size_t layers = graph.num_layers();
  save_index(IndexContainer{std::move(graph), std::move(embs)}, out);
  c.out << "index: " << layers << " layers, ground layer "
        << (connected ? "connected" : "NOT connected") << " -> " << out.string() << "\n";
}

void cmd_search(RunContext& c) {
  Settings& s = c.settings;
  const Scorer scorer = input_scorer(s);
  const IndexContainer index = input_index(s, scorer);
  const Dataset ds = input_dataset(s);
  RetrievalRequest req{retrieval_method(s), retrieval_params(s)};
  const auto users = query_users(s, ds);
  const auto queries = make_eval_queries(ds, users);
  std::vector<UserContext> contexts;
  for (const auto& q : queries) contexts.push_back(scorer.user_context(q.context));
  const auto reports =
      search_batch(scorer, index.graph, index.embeddings, contexts, req, c.threads);
  std::string csv = "user_id,rank,item_id,original_item_id,score,items_scored\n";
  char buf[160];
  double scored = 0.0;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    scored += static_cast<double>(r.items_scored);
    for (std::size_t j = 0; j < r.ids.size(); ++j) {
      std::snprintf(buf, sizeof(buf), "%lld,%zu,%u,%lld,%.17g,%zu\n",
                    static_cast<long long>(queries[i].user_id), j + 1, r.ids[j],
                    static_cast<long long>(ds.original_item_ids.at(r.ids[j])), r.scores[j],
                    r.items_scored);
      csv += buf;
    }
  }
  const auto out = s.output("output", "results.csv");
  write_text_file(out, csv);
  c.out << "searched " << reports.size() << " users, mean items_scored "
        << (reports.empty() ? 0.0 : scored / static_cast<double>(reports.size())) << " -> "
        << out.string() << "\n";
}

struct EvalInputs {
  Scorer scorer;
  IndexContainer index;
  PreparedQueries prepared;
};

EvalInputs eval_inputs(RunContext& c, std::size_t m) {
  Settings& s = c.settings;
  Scorer scorer = input_scorer(s);
  IndexContainer index = input_index(s, scorer);
  const Dataset ds = input_dataset(s);
  const auto users = query_users(s, ds);
  if (users.empty()) throw ConfigError("no evaluation users (dataset has an empty test split)");
  const auto queries = make_eval_queries(ds, users);
  PreparedQueries prepared = prepare_queries(scorer, index.embeddings, queries, m, c.threads);
  return {std::move(scorer), std::move(index), std::move(prepared)};
}

void cmd_eval(RunContext& c) {
  Settings& s = c.settings;
  const std::size_t m = s.count("m", 10);
  RetrievalRequest req{retrieval_method(s), retrieval_params(s)};
  const EvalInputs in = eval_inputs(c, m);
  const MetricsRow row = evaluate(in.scorer, in.index.graph, in.index.embeddings, in.prepared, req,
                                  c.threads);
  const auto out = s.output("output", "metrics.csv");
  write_text_file(out, sweep_csv(std::span<const MetricsRow>(&row, 1)));
  c.out << row.method << ": coverage@" << m << " " << row.coverage << ", recall_all "
        << row.recall_all << ", recall_retrieval " << row.recall_retrieval << ", traversed "
        << row.traversed_ratio << " -> " << out.string() << "\n";
}

void cmd_sweep(RunContext& c) {
  Settings& s = c.settings;
  const std::size_t m = s.count("m", 10);
  const RetrievalParams base = retrieval_params(s);
  std::string grid_text;
  for (const auto& p : default_sweep_grid(m, 16 * m, base.steps.front())) {
    grid_text += (grid_text.empty() ? "" : ",") + std::to_string(p.ef0) + ":" + std::to_string(p.t0);
  }
  const auto grid = parse_grid(s.str("grid", grid_text));
  const bool baseline = s.flag("baseline", true);
  const EvalInputs in = eval_inputs(c, m);
  const auto rows = sweep(in.scorer, in.index.graph, in.index.embeddings, in.prepared, base, grid,
                          baseline, c.threads);
  const auto out = s.output("output", "sweep.csv");
  write_text_file(out, sweep_csv(rows));
  c.out << "sweep: " << rows.size() << " rows -> " << out.string() << "\n";
}

void cmd_perturb_hist(RunContext& c) {
  Settings& s = c.settings;
  const std::size_t k = s.count("k", 10);
  const double epsilon = s.num("epsilon", 1e-2);
  const std::size_t bins = s.count("bins", 50);
  const EvalInputs in = eval_inputs(c, k);
  const auto result = perturbation_histogram(in.scorer, in.prepared.contexts, in.index.embeddings, k,
                                             epsilon, derive_seed(c.seed, "perturb-hist"), bins);
  const auto out = s.output("output", "histogram.csv");
  write_text_file(out, histogram_csv(result.histogram));
  c.out << "histogram: " << result.histogram.samples << " samples, mean |dp| "
        << result.histogram.mean << ", max " << result.histogram.max << " -> " << out.string()
        << "\n";
}

struct Subcommand {
  const char* name;
  const char* help;
  std::vector<std::pair<const char*, const char*>> options;
  void (*run)(RunContext&);
};

const std::vector<std::pair<const char*, const char*>> kRetrievalOptions = {
    {"method", "beam or hnsw"},
    {"ef", "per-layer beam widths, top layer first (e.g. 10,20,40)"},
    {"steps", "per-layer step budgets, top layer first (e.g. 1,1,3)"},
    {"k", "number of items to return"},
    {"early-stop", "stop a layer when its frontier empties (true|false)"},
};

std::vector<Subcommand> subcommands() {
  auto with = [](std::vector<std::pair<const char*, const char*>> a,
                 const std::vector<std::pair<const char*, const char*>>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
  };
  const std::vector<std::pair<const char*, const char*>> artifacts = {
      {"checkpoint", "scorer checkpoint"},
      {"index", "index container"},
      {"dataset", "dataset snapshot"},
      {"users", "comma-separated user ids (default: test split)"},
      {"output", "output file"},
  };
  return {
      {"gen-data", "generate a planted-cluster synthetic dataset",
       {{"users", "number of users"}, {"items", "number of items"}, {"dim", "latent dimension"},
        {"seq-len", "events per user"}, {"clusters", "planted clusters (0: items/100)"},
        {"interests", "clusters per user"}, {"temperature", "affinity sharpness"},
        {"item-noise", "item spread around its center"}, {"user-noise", "user spread"},
        {"eval-users", "test users"}, {"valid-users", "validation users"},
        {"output", "dataset file"}},
       cmd_gen_data},
      {"ingest", "read a user,item,category,behavior,timestamp event log",
       {{"events", "event log"}, {"item-features", "item_id,category_id sidecar"},
        {"min-events", "drop users with fewer events"}, {"eval-users", "test users"},
        {"valid-users", "validation users"}, {"output", "dataset file"}},
       cmd_ingest},
      {"train", "train a scorer with NCE and the adversarial auxiliary loss",
       {{"dataset", "dataset snapshot"}, {"arch", "two-sided, mlp-no-attention or mlp-attention"},
        {"feature-dim", "embedding table width"}, {"max-seq-len", "history length cap"},
        {"activation", "tanh, softplus or prelu"},
        {"gradient-target", "probability or logit"}, {"init", "xavier or fan-in"}, {"learning-rate", "Adam step size"},
        {"epsilon", "FGSM max-norm"}, {"k-neg", "negatives per positive"},
        {"epochs", "passes over training users"}, {"batch-users", "users per step"},
        {"aux-enabled", "enable the auxiliary loss (true|false)"},
        {"aux-weight", "auxiliary loss weight"}, {"aux-form", "single or binary-kl"},
        {"noise", "unigram or uniform"}, {"adam-beta1", "Adam beta1"},
        {"adam-beta2", "Adam beta2"}, {"adam-eps", "Adam epsilon"},
        {"output", "checkpoint file"}, {"trace", "loss trace CSV"}},
       cmd_train},
      {"extract-embeddings", "compute frozen item embeddings from a checkpoint",
       {{"checkpoint", "scorer checkpoint"}, {"output", "embeddings file"}},
       cmd_extract},
      {"build-index", "build the HNSW index over item embeddings",
       {{"embeddings", "embeddings file"}, {"hnsw-m", "graph degree M"},
        {"ef-construction", "construction beam"}, {"max-layers", "layer cap"},
        {"heuristic", "diverse neighbor selection (true|false)"}, {"output", "index file"}},
       cmd_build_index},
      {"search", "retrieve top-K items for users", with(artifacts, kRetrievalOptions),
       cmd_search},
      {"eval", "coverage and recall of one retrieval setting",
       with(with(artifacts, kRetrievalOptions), {{"m", "metric cutoff M"}}), cmd_eval},
      {"sweep", "coverage against traversal budget for beam and baseline",
       with(with(artifacts, kRetrievalOptions),
            {{"m", "metric cutoff M"}, {"grid", "ef0:t0 pairs, e.g. 10:1,20:2"},
             {"baseline", "include the greedy baseline (true|false)"}}),
       cmd_sweep},
      {"perturb-hist", "histogram of score changes under random perturbation",
       with(artifacts, {{"k", "top-k items per user"}, {"epsilon", "perturbation max-norm"},
                        {"bins", "histogram bins"}}),
       cmd_perturb_hist},
  };
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"nsearch: approximate retrieval under learned similarity"};
  app.require_subcommand(1);
  std::string config_path, out_dir = ".";
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  app.add_option("--config", config_path, "key = value configuration file");
  app.add_option("--seed", seed, "seed for every random stage");
  app.add_option("--threads", threads, "worker threads for search/eval/sweep");
  app.add_option("--out-dir", out_dir, "directory for default artifact paths");
  app.fallthrough();

  const auto commands = subcommands();
  std::map<std::string, std::map<std::string, std::pair<std::string, CLI::Option*>>> values;
  std::map<CLI::App*, const Subcommand*> by_app;
  for (const auto& cmd : commands) {
    CLI::App* sub = app.add_subcommand(cmd.name, cmd.help);
    by_app[sub] = &cmd;
    auto& vals = values[cmd.name];
    for (const auto& [name, help] : cmd.options) {
      auto& slot = vals[normalize_key(name)];
      slot.second = sub->add_option(std::string("--") + name, slot.first, help);
    }
  }

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << app.help() << "nsearch: error: " << e.what() << "\n";
    return kExitUsage;
  }

  CLI::App* chosen = app.get_subcommands().front();
  const Subcommand& cmd = *by_app.at(chosen);
  try {
    KeyValueConfig merged;
    if (!config_path.empty()) {
      require_file(config_path, "config file", "");
      merged = normalized(KeyValueConfig::load(config_path));
      if (merged.has("seed") && app.get_option("--seed")->count() == 0) {
        seed = static_cast<std::uint64_t>(merged.get_int("seed", 0));
      }
      if (merged.has("threads") && app.get_option("--threads")->count() == 0) {
        threads = static_cast<std::size_t>(merged.get_int("threads", 1));
      }
      if (merged.has("out_dir") && app.get_option("--out-dir")->count() == 0) {
        out_dir = *merged.get("out_dir");
      }
    }
    for (const auto& [key, slot] : values[cmd.name]) {
      if (slot.second->count() > 0) merged.set(key, slot.first);
    }
    if (threads == 0) throw ConfigError("--threads must be at least 1");
    fs::create_directories(out_dir);
    Settings settings(std::move(merged), out_dir);
    RunContext ctx{settings, seed, threads, out};
    cmd.run(ctx);
    const fs::path manifest = fs::path(out_dir) / (std::string(cmd.name) + ".manifest");
    write_text_file(manifest, settings.manifest(cmd.name, config_path, seed, threads));
    return kExitOk;
  } catch (const MissingArtifact& e) {
    err << "nsearch " << cmd.name << ": error: " << e.what() << "\n";
    return kExitMissingArtifact;
  } catch (const std::exception& e) {
    err << "nsearch " << cmd.name << ": error: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace nsearch::cli
