#include "gobert/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "gobert/corpus.hpp"
#include "gobert/embedding.hpp"
#include "gobert/error.hpp"
#include "gobert/evaluator.hpp"
#include "gobert/ontology.hpp"
#include "gobert/random.hpp"
#include "gobert/synthetic.hpp"
#include "gobert/trainer.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace gobert {

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DomainError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DomainError("cannot write " + path.string());
  out << bytes;
}

std::string digest_hex(std::string_view bytes) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "fnv1a64:%016llx", static_cast<unsigned long long>(fnv1a64(bytes)));
  return buf;
}

std::uint64_t default_seed() {
  if (const char* s = std::getenv("GOBERT_SEED")) {
    try {
      return std::stoull(s);
    } catch (const std::exception&) {
      throw UsageError(std::string("GOBERT_SEED is not an integer: ") + s);
    }
  }
  return 0;
}

void write_manifest(const fs::path& dir, const std::string& subcommand, const ordered_json& config,
                    const std::vector<std::string>& inputs, std::uint64_t seed,
                    const ordered_json& counts = ordered_json::object()) {
  ordered_json m;
  m["subcommand"] = subcommand;
  m["config"] = config;
  auto& digests = m["inputs"] = ordered_json::object();
  for (const auto& p : inputs) digests[p] = digest_hex(read_file(p));
  m["seed"] = seed;
  m["tool_version"] = kToolVersion;
  if (!counts.empty()) m["counts"] = counts;
  write_file(dir / "manifest.json", m.dump(1) + "\n");
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

TermId parse_term_arg(const std::string& s) {
  if (!TermId::is_valid(s)) throw UsageError("invalid term id '" + s + "'");
  return TermId(s);
}

// "0..4" or "0,1,2"
std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  try {
    if (auto dots = s.find(".."); dots != std::string::npos) {
      const auto lo = std::stoull(s.substr(0, dots)), hi = std::stoull(s.substr(dots + 2));
      if (hi < lo) throw UsageError("empty seed range " + s);
      for (auto x = lo; x <= hi; ++x) out.push_back(x);
    } else {
      for (const auto& item : split_csv(s)) out.push_back(std::stoull(item));
    }
  } catch (const std::invalid_argument&) {
    throw UsageError("bad seed list '" + s + "'");
  }
  if (out.empty()) throw UsageError("no seeds given");
  return out;
}

struct CorpusDir {
  GoDag dag;
  std::vector<GeneExample> examples;
  CorpusSplit split;
  fs::path obo;

  std::vector<GeneExample> subset(const std::vector<std::string>& genes) const {
    std::unordered_map<std::string, const GeneExample*> by_gene;
    for (const auto& ex : examples) by_gene[ex.gene] = &ex;
    std::vector<GeneExample> out;
    for (const auto& g : genes) {
      auto it = by_gene.find(g);
      if (it == by_gene.end()) throw DomainError("split names unknown gene " + g);
      out.push_back(*it->second);
    }
    return out;
  }
};

CorpusDir load_corpus_dir(const fs::path& dir, const OboOptions& obo_options = {}) {
  CorpusDir c;
  c.obo = fs::absolute(dir / "ontology.obo");
  c.dag = load_obo(c.obo.string(), obo_options);
  std::ifstream corpus(dir / "corpus.jsonl");
  if (!corpus) throw DomainError("missing " + (dir / "corpus.jsonl").string());
  c.examples = read_corpus_jsonl(corpus);
  std::ifstream split(dir / "split.json");
  if (!split) throw DomainError("missing " + (dir / "split.json").string());
  c.split = read_split_json(split);
  return c;
}

// Flags that override TrainConfig / ModelConfig fields.
struct ConfigFlags {
  std::optional<std::string> config_path;
  std::optional<int> epochs, batch_size, warmup_steps, hidden, layers, heads, ffn_dim, dim;
  std::optional<double> lr, lambda, alpha_mask, rho;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> max_len;
  std::optional<std::string> ablation;
  std::optional<std::string> adjacency;

  void add(CLI::App* app) {
    app->add_option("--config", config_path, "JSON file with flat TrainConfig/ModelConfig keys");
    app->add_option("--epochs", epochs);
    app->add_option("--batch-size", batch_size);
    app->add_option("--lr", lr);
    app->add_option("--warmup-steps", warmup_steps);
    app->add_option("--seed", seed, "defaults to $GOBERT_SEED, else 0");
    app->add_option("--lambda", lambda, "weight of the neighborhood loss");
    app->add_option("--alpha-mask", alpha_mask);
    app->add_option("--rho", rho, "negative label down-sampling rate");
    app->add_option("--max-len", max_len);
    app->add_option("--ablation", ablation, "none|no_neighborhood|no_semantics|naive_masking");
    app->add_option("--hidden", hidden);
    app->add_option("--layers", layers);
    app->add_option("--heads", heads);
    app->add_option("--ffn-dim", ffn_dim);
    app->add_option("--dim", dim, "fallback embedding width (defaults to --hidden)");
    app->add_option("--adjacency-kinds", adjacency, "relation kinds feeding neighborhood labels");
  }

  std::pair<TrainConfig, ModelConfig> resolve(json* file_json = nullptr) const {
    TrainConfig train;
    ModelConfig model;
    train.seed = default_seed();
    json j = json::object();
    if (config_path) {
      try {
        j = json::parse(read_file(*config_path));
      } catch (const json::exception& e) {
        throw UsageError("config " + *config_path + ": " + e.what());
      }
      from_json(j, train);
      from_json(j, model);
    }
    if (epochs) train.epochs = *epochs;
    if (batch_size) train.batch_size = *batch_size;
    if (lr) train.lr = *lr;
    if (warmup_steps) train.warmup_steps = *warmup_steps;
    if (seed) train.seed = *seed;
    if (lambda) train.lambda = *lambda;
    if (alpha_mask) train.alpha_mask = *alpha_mask;
    if (rho) train.rho = *rho;
    if (max_len) train.max_len = *max_len;
    if (ablation) train.ablation = ablation_from_string(*ablation);
    if (hidden) model.hidden = *hidden;
    if (layers) model.layers = *layers;
    if (heads) model.heads = *heads;
    if (ffn_dim) model.ffn_dim = *ffn_dim;
    if (file_json) *file_json = j;
    return {train, model};
  }

  int embed_dim(const ModelConfig& model, const json& file_json) const {
    if (dim) return *dim;
    if (file_json.contains("dim")) return file_json.at("dim").get<int>();
    return model.hidden;
  }

  OboOptions obo_options(const json& file_json) const {
    OboOptions o;
    if (adjacency)
      o.adjacency = RelationSet::parse(*adjacency);
    else if (file_json.contains("adjacency_kinds"))
      o.adjacency = RelationSet::parse(file_json.at("adjacency_kinds").get<std::string>());
    return o;
  }
};

ordered_json resolved_json(const TrainConfig& t, const ModelConfig& m) {
  json tj = t, mj = m;
  ordered_json out;
  for (auto& [k, v] : tj.items()) out[k] = v;
  for (auto& [k, v] : mj.items()) out[k] = v;
  return out;
}

EmbeddingMatrix resolve_embeddings(const std::optional<std::string>& path, const GoDag& dag, int fallback_dim,
                                   std::uint64_t seed, std::ostream& err) {
  const Vocabulary vocab(dag);
  if (path) {
    const int dim = detect_embedding_dim(*path);
    auto m = load_embeddings(*path, vocab, dag, dim, seed);
    if (m.fallback_fills) err << "embeddings: " << m.fallback_fills << " terms filled by fallback\n";
    return m;
  }
  return fallback_embeddings(vocab, dag, fallback_dim, seed);
}

// ---------------------------------------------------------------------------
// Subcommands

int cmd_parse_obo(const std::string& obo, const fs::path& out_dir, bool allow_violations,
                  const std::optional<std::string>& adjacency, std::ostream& out, std::ostream& err) {
  OboOptions options;
  options.require_acyclic = false;
  if (adjacency) options.adjacency = RelationSet::parse(*adjacency);
  const auto dag = load_obo(obo, options);
  const auto report = dag.validate();
  fs::create_directories(out_dir);

  std::ostringstream edges, terms;
  dag.write_edge_tsv(edges);
  dag.write_term_json(terms);
  write_file(out_dir / "edges.tsv", edges.str());
  write_file(out_dir / "terms.json", terms.str());

  ordered_json v;
  v["ok"] = report.ok();
  auto& list = v["violations"] = ordered_json::array();
  for (const auto& viol : report.violations) {
    ordered_json e;
    e["kind"] = viol.kind == Violation::Kind::cycle          ? "cycle"
                : viol.kind == Violation::Kind::antisymmetry ? "antisymmetry"
                                                             : "reachability";
    auto& ids = e["terms"] = ordered_json::array();
    for (const auto& t : viol.terms) ids.push_back(t.str());
    e["message"] = viol.message;
    list.push_back(std::move(e));
  }
  write_file(out_dir / "validation.json", v.dump(1) + "\n");

  ordered_json counts;
  counts["terms"] = dag.size();
  counts["non_obsolete"] = dag.label_count();
  counts["edges"] = dag.edges().size();
  counts["unknown_relations"] = dag.parse_stats().unknown_relations;
  counts["dangling_edges"] = dag.parse_stats().dangling_edges;
  counts["violations"] = report.violations.size();
  ordered_json config;
  config["allow_violations"] = allow_violations;
  config["adjacency_kinds"] = options.adjacency.to_string();
  write_manifest(out_dir, "parse-obo", config, {obo}, 0, counts);

  out << "terms " << dag.size() << " (non-obsolete " << dag.label_count() << "), edges " << dag.edges().size()
      << ", violations " << report.violations.size() << "\n";
  for (const auto& viol : report.violations) err << viol.message << "\n";
  return report.ok() || allow_violations ? 0 : 1;
}

struct BuildCorpusArgs {
  std::string annotations, obo;
  fs::path out;
  int k = 10;
  std::string ratios = "0.8,0.1,0.1";
  std::optional<std::uint64_t> seed;
  std::size_t max_len = 64;
  std::optional<std::string> embeddings;
  int dim = 256;
  bool l2_normalize = false;
};

int cmd_build_corpus(const BuildCorpusArgs& a, std::ostream& out) {
  const auto ratio_items = split_csv(a.ratios);
  if (ratio_items.size() != 3) throw UsageError("--ratios needs three comma-separated values");
  std::array<double, 3> ratios{};
  for (std::size_t i = 0; i < 3; ++i) {
    try {
      ratios[i] = std::stod(ratio_items[i]);
    } catch (const std::exception&) {
      throw UsageError("bad ratio '" + ratio_items[i] + "'");
    }
  }
  const auto seed = a.seed.value_or(default_seed());

  const auto dag = load_obo(a.obo);
  std::ifstream ann(a.annotations);
  if (!ann) throw DomainError("cannot open " + a.annotations);
  LoadStats stats;
  auto examples = dedupe_examples(load_annotations(ann, dag, a.max_len, &stats));
  const std::size_t loaded = stats.lines;

  const Vocabulary vocab(dag);
  std::ostringstream sink;
  const auto emb = resolve_embeddings(a.embeddings, dag, a.dim, seed, sink);
  Eigen::MatrixXd points(static_cast<Eigen::Index>(examples.size()), emb.dim());
  for (std::size_t i = 0; i < examples.size(); ++i)
    points.row(static_cast<Eigen::Index>(i)) = gene_embedding(examples[i], dag, vocab, emb, a.l2_normalize).transpose();
  const auto split = kmeans_split(examples, points, a.k, ratios, seed);

  fs::create_directories(a.out);
  std::ostringstream corpus, split_text;
  write_corpus_jsonl(corpus, examples);
  write_split_json(split_text, split);
  write_file(a.out / "corpus.jsonl", corpus.str());
  write_file(a.out / "split.json", split_text.str());
  write_file(a.out / "ontology.obo", read_file(a.obo));

  ordered_json config;
  config["k"] = a.k;
  config["ratios"] = ratios;
  config["max_len"] = a.max_len;
  config["embedding_dim"] = emb.dim();
  config["embedding_source"] = a.embeddings ? "file" : "fallback";
  config["l2_normalize"] = a.l2_normalize;
  ordered_json counts;
  counts["annotation_lines"] = loaded;
  counts["dropped_terms"] = stats.dropped_terms;
  counts["skipped_genes"] = stats.skipped_genes;
  counts["genes"] = examples.size();
  counts["train"] = split.train.size();
  counts["valid"] = split.valid.size();
  counts["test"] = split.test.size();
  std::vector<std::string> inputs{a.annotations, a.obo};
  if (a.embeddings) inputs.push_back(*a.embeddings);
  write_manifest(a.out, "build-corpus", config, inputs, seed, counts);
  out << "genes " << examples.size() << ": train " << split.train.size() << ", valid " << split.valid.size()
      << ", test " << split.test.size() << "\n";
  return 0;
}

struct PretrainArgs {
  fs::path corpus, out;
  std::optional<std::string> embeddings;
  bool fallback = false;
  std::optional<std::string> resume;
  bool record_timing = false;
  ConfigFlags flags;
};

int cmd_pretrain(const PretrainArgs& a, std::ostream& out, std::ostream& err) {
  if (a.embeddings && a.fallback) throw UsageError("--embeddings and --fallback are exclusive");
  if (!a.embeddings && !a.fallback) throw UsageError("one of --embeddings or --fallback is required");
  json file_json;
  auto [train_cfg, model_cfg] = a.flags.resolve(&file_json);
  const auto corpus = load_corpus_dir(a.corpus, a.flags.obo_options(file_json));
  const Vocabulary vocab(corpus.dag);
  model_cfg.vocab_size = vocab.size();
  model_cfg.label_size = vocab.label_count();

  const auto train_set = corpus.subset(corpus.split.train);
  if (train_set.empty()) throw DomainError("training split is empty");

  Checkpoint ckpt;
  if (a.resume) {
    ckpt = load_checkpoint(*a.resume);
    ckpt.train.epochs = train_cfg.epochs;
  } else {
    const auto emb = resolve_embeddings(a.embeddings, corpus.dag, a.flags.embed_dim(model_cfg, file_json),
                                        train_cfg.seed, err);
    ckpt = initial_checkpoint(model_cfg, train_cfg, emb);
  }
  ckpt.extra["obo_path"] = corpus.obo.string();
  ckpt.extra["obo_digest"] = digest_hex(read_file(corpus.obo.string()));
  ckpt.extra["adjacency_kinds"] = corpus.dag.options().adjacency.to_string();

  fs::create_directories(a.out);
  std::ofstream metrics(a.out / "metrics.jsonl", a.resume ? std::ios::app : std::ios::trunc);
  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochMetrics& m, const Checkpoint& state) {
    save_checkpoint((a.out / ("checkpoint_epoch_" + std::to_string(m.epoch) + ".bin")).string(), state);
    metrics << metrics_jsonl_line(m, a.record_timing) << "\n" << std::flush;
    out << "epoch " << m.epoch << " loss_total " << m.loss_total;
    if (m.loss_ex) out << " loss_ex " << *m.loss_ex;
    out << " loss_im " << m.loss_im << "\n";
  };
  train(ckpt, train_set, corpus.dag, hooks);

  std::vector<std::string> inputs{(a.corpus / "corpus.jsonl").string(), (a.corpus / "split.json").string(),
                                  corpus.obo.string()};
  if (a.embeddings) inputs.push_back(*a.embeddings);
  if (a.flags.config_path) inputs.push_back(*a.flags.config_path);
  auto config = resolved_json(ckpt.train, ckpt.model);
  config["embeddings"] = a.embeddings ? "file" : "fallback";
  write_manifest(a.out, "pretrain", config, inputs, ckpt.train.seed, {{"epochs", ckpt.epoch}});
  return 0;
}

struct EvaluateArgs {
  std::string checkpoint;
  fs::path corpus, out;
  std::string seeds = "0..4";
  std::string ks = "1,5";
  std::string split = "test";
  std::optional<double> alpha_mask;
  bool exclude_inputs = false;
  std::string depth_mode = "restrict";
};

EvalOptions eval_options(const std::string& seeds, const std::string& ks, std::optional<double> alpha,
                         bool exclude_inputs, const std::string& depth_mode, const TrainConfig& train) {
  EvalOptions o;
  o.seeds = parse_seeds(seeds);
  o.ks.clear();
  for (const auto& k : split_csv(ks)) {
    try {
      o.ks.push_back(std::stoi(k));
    } catch (const std::exception&) {
      throw UsageError("bad k '" + k + "'");
    }
    if (o.ks.back() < 1) throw UsageError("k must be >= 1");
  }
  if (o.ks.empty()) throw UsageError("no k given");
  o.alpha_mask = alpha.value_or(train.alpha_mask);
  o.exclude_inputs = exclude_inputs;
  o.max_len = train.max_len;
  if (depth_mode == "restrict")
    o.depth_mode = DepthMode::restrict;
  else if (depth_mode == "bucket")
    o.depth_mode = DepthMode::bucket;
  else
    throw UsageError("--depth-mode must be restrict or bucket");
  return o;
}

const std::vector<std::string>& split_genes(const CorpusSplit& split, const std::string& which) {
  if (which == "train") return split.train;
  if (which == "valid") return split.valid;
  if (which == "test") return split.test;
  throw UsageError("--split must be train, valid or test");
}

int cmd_evaluate(const EvaluateArgs& a, std::ostream& out) {
  const auto ckpt = load_checkpoint(a.checkpoint);
  OboOptions obo;
  if (ckpt.extra.contains("adjacency_kinds"))
    obo.adjacency = RelationSet::parse(ckpt.extra.at("adjacency_kinds").get<std::string>());
  const auto corpus = load_corpus_dir(a.corpus, obo);
  if (Vocabulary(corpus.dag).size() != ckpt.model.vocab_size)
    throw DomainError("checkpoint vocabulary does not match the corpus ontology");
  const auto options = eval_options(a.seeds, a.ks, a.alpha_mask, a.exclude_inputs, a.depth_mode, ckpt.train);
  const auto examples = corpus.subset(split_genes(corpus.split, a.split));
  if (examples.empty()) throw DomainError(a.split + " split is empty");
  auto report = evaluate(ckpt.params, examples, corpus.dag, options, std::string(to_string(ckpt.train.ablation)));
  report.config["split"] = a.split;

  fs::create_directories(a.out);
  write_file(a.out / "report.json", report_to_json(report).dump(1) + "\n");
  std::ostringstream table;
  write_report_table(table, std::span<const EvalReport>(&report, 1));
  write_file(a.out / "report.txt", table.str());
  ordered_json config = report.config;
  write_manifest(a.out, "evaluate", config,
                 {a.checkpoint, (a.corpus / "corpus.jsonl").string(), (a.corpus / "split.json").string()},
                 options.seeds.front());
  out << table.str();
  return 0;
}

struct PredictArgs {
  std::string checkpoint;
  std::string terms;
  std::optional<std::string> ns;
  std::optional<int> depth;
  std::optional<std::string> predecessors_of;
  std::optional<std::string> obo;
  std::optional<std::size_t> top;
};

int cmd_predict(const PredictArgs& a, std::ostream& out) {
  std::vector<TermId> known;
  for (const auto& t : split_csv(a.terms)) known.push_back(parse_term_arg(t));
  const bool restricted = a.ns || a.depth;
  if (restricted == a.predecessors_of.has_value())
    throw UsageError("give either --namespace with --depth, or --predecessors-of");
  if (restricted && !(a.ns && a.depth)) throw UsageError("--namespace and --depth go together");
  std::optional<TermId> anchor;
  if (a.predecessors_of) anchor = parse_term_arg(*a.predecessors_of);
  std::optional<Namespace> ns;
  if (a.ns) {
    ns = namespace_from_string(*a.ns);
    if (!ns) throw UsageError("unknown namespace '" + *a.ns + "'");
  }

  const auto ckpt = load_checkpoint(a.checkpoint);
  std::string obo_path;
  if (a.obo)
    obo_path = *a.obo;
  else if (ckpt.extra.contains("obo_path"))
    obo_path = ckpt.extra.at("obo_path").get<std::string>();
  else
    throw UsageError("checkpoint does not record its ontology; pass --obo");
  OboOptions obo;
  if (ckpt.extra.contains("adjacency_kinds"))
    obo.adjacency = RelationSet::parse(ckpt.extra.at("adjacency_kinds").get<std::string>());
  const auto dag = load_obo(obo_path, obo);
  if (Vocabulary(dag).size() != ckpt.model.vocab_size)
    throw DomainError("checkpoint vocabulary does not match " + obo_path);
  for (const auto& t : known)
    if (!dag.find(t)) throw DomainError("unknown term " + t.str());

  const auto ranking = restricted ? restricted_ranking(ckpt.params, known, *ns, *a.depth, dag)
                                  : predecessor_ranking(ckpt.params, known, *anchor, dag);
  const auto limit = a.top.value_or(ranking.terms.size());
  for (std::size_t i = 0; i < std::min(limit, ranking.terms.size()); ++i) {
    const auto& r = ranking.terms[i];
    out << r.rank << '\t' << r.term << '\t' << std::setprecision(6) << r.probability << '\t'
        << dag.term(dag.index_of(r.term)).name << '\n';
  }
  return 0;
}

struct AblationArgs {
  fs::path corpus, out;
  std::optional<std::string> embeddings;
  bool fallback = false;
  std::string seeds = "0..4";
  std::string ks = "1,5";
  ConfigFlags flags;
};

int cmd_ablation(const AblationArgs& a, std::ostream& out, std::ostream& err) {
  if (a.embeddings && a.fallback) throw UsageError("--embeddings and --fallback are exclusive");
  if (!a.embeddings && !a.fallback) throw UsageError("one of --embeddings or --fallback is required");
  json file_json;
  auto [train_cfg, model_cfg] = a.flags.resolve(&file_json);
  const auto corpus = load_corpus_dir(a.corpus, a.flags.obo_options(file_json));
  const Vocabulary vocab(corpus.dag);
  model_cfg.vocab_size = vocab.size();
  model_cfg.label_size = vocab.label_count();
  const auto emb = resolve_embeddings(a.embeddings, corpus.dag, a.flags.embed_dim(model_cfg, file_json),
                                      train_cfg.seed, err);
  const auto options = eval_options(a.seeds, a.ks, std::nullopt, false, "restrict", train_cfg);
  const auto reports = run_ablation_suite(default_ablation_runs(train_cfg), model_cfg,
                                          corpus.subset(corpus.split.train), corpus.subset(corpus.split.test),
                                          corpus.dag, emb, options);
  fs::create_directories(a.out);
  std::ostringstream tsv, table;
  write_report_tsv(tsv, reports);
  write_report_table(table, reports);
  write_file(a.out / "ablation.tsv", tsv.str());
  write_file(a.out / "ablation.txt", table.str());
  auto all = ordered_json::array();
  for (const auto& r : reports) all.push_back(report_to_json(r));
  write_file(a.out / "reports.json", all.dump(1) + "\n");
  std::vector<std::string> inputs{(a.corpus / "corpus.jsonl").string(), (a.corpus / "split.json").string(),
                                  corpus.obo.string()};
  if (a.embeddings) inputs.push_back(*a.embeddings);
  write_manifest(a.out, "ablation", resolved_json(train_cfg, model_cfg), inputs, train_cfg.seed);
  out << table.str();
  return 0;
}

struct SynthArgs {
  fs::path out;
  int terms = 200;
  int genes = 2000;
  int rules = 20;
  int edge_rules = 0;
  std::optional<std::uint64_t> seed;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  const auto seed = a.seed.value_or(default_seed());
  const auto obo = synthetic_obo({.terms = a.terms, .seed = seed});
  const auto dag = parse_obo_text(obo);
  PlantedCorpusOptions po;
  po.genes = a.genes;
  po.rules = a.rules;
  po.edge_rules = a.edge_rules;
  po.seed = seed;
  const auto corpus = planted_corpus(dag, po, seed);
  fs::create_directories(a.out);
  write_file(a.out / "ontology.obo", obo);
  std::ostringstream ann, rules;
  for (const auto& ex : corpus.examples)
    for (const auto& t : ex.terms) ann << ex.gene << '\t' << t << '\n';
  for (const auto& r : corpus.rules) rules << r.premise << '\t' << r.conclusion << '\t' << (r.is_edge ? "edge" : "planted") << '\n';
  write_file(a.out / "annotations.tsv", ann.str());
  write_file(a.out / "rules.tsv", rules.str());
  out << "wrote " << dag.label_count() << " terms, " << corpus.examples.size() << " genes, " << corpus.rules.size()
      << " rules\n";
  return 0;
}

}  // namespace

int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Ontology-informed gene function pretraining"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);

  auto* parse = app.add_subcommand("parse-obo", "Parse and validate an OBO ontology");
  std::string obo_path;
  fs::path parse_out;
  bool allow_violations = false;
  std::optional<std::string> parse_adjacency;
  parse->add_option("--obo", obo_path)->required();
  parse->add_option("--out", parse_out)->required();
  parse->add_flag("--allow-violations", allow_violations);
  parse->add_option("--adjacency-kinds", parse_adjacency);

  auto* build = app.add_subcommand("build-corpus", "Load annotations, deduplicate and split by k-means");
  BuildCorpusArgs build_args;
  build->add_option("--annotations", build_args.annotations)->required();
  build->add_option("--obo", build_args.obo)->required();
  build->add_option("--out", build_args.out)->required();
  build->add_option("--k", build_args.k)->capture_default_str();
  build->add_option("--ratios", build_args.ratios)->capture_default_str();
  build->add_option("--seed", build_args.seed);
  build->add_option("--max-len", build_args.max_len)->capture_default_str();
  build->add_option("--embeddings", build_args.embeddings);
  build->add_option("--dim", build_args.dim, "fallback embedding width")->capture_default_str();
  build->add_flag("--l2-normalize", build_args.l2_normalize, "normalize term vectors before averaging");

  auto* pretrain = app.add_subcommand("pretrain", "Pretrain with the joint objective");
  PretrainArgs pre_args;
  pretrain->add_option("--corpus", pre_args.corpus)->required();
  pretrain->add_option("--out", pre_args.out)->required();
  pretrain->add_option("--embeddings", pre_args.embeddings);
  pretrain->add_flag("--fallback", pre_args.fallback, "use hashed text embeddings");
  pretrain->add_option("--resume", pre_args.resume, "continue from a checkpoint");
  pretrain->add_flag("--record-timing", pre_args.record_timing, "write wall-clock seconds into metrics.jsonl");
  pre_args.flags.add(pretrain);

  auto* eval = app.add_subcommand("evaluate", "Top-k and depth-restricted top-k accuracy");
  EvaluateArgs eval_args;
  eval->add_option("--checkpoint", eval_args.checkpoint)->required();
  eval->add_option("--corpus", eval_args.corpus)->required();
  eval->add_option("--out", eval_args.out)->required();
  eval->add_option("--seeds", eval_args.seeds)->capture_default_str();
  eval->add_option("--k", eval_args.ks)->capture_default_str();
  eval->add_option("--split", eval_args.split)->capture_default_str();
  eval->add_option("--alpha-mask", eval_args.alpha_mask);
  eval->add_flag("--exclude-inputs", eval_args.exclude_inputs);
  eval->add_option("--depth-mode", eval_args.depth_mode)->capture_default_str();

  auto* predict = app.add_subcommand("predict", "Rank candidate terms for a MASK added to known terms");
  PredictArgs pred_args;
  predict->add_option("--checkpoint", pred_args.checkpoint)->required();
  predict->add_option("--terms", pred_args.terms)->required();
  predict->add_option("--namespace", pred_args.ns);
  predict->add_option("--depth", pred_args.depth);
  predict->add_option("--predecessors-of", pred_args.predecessors_of);
  predict->add_option("--obo", pred_args.obo);
  predict->add_option("--top", pred_args.top);

  auto* ablation = app.add_subcommand("ablation", "Train and evaluate the full model and its three ablations");
  AblationArgs abl_args;
  ablation->add_option("--corpus", abl_args.corpus)->required();
  ablation->add_option("--out", abl_args.out)->required();
  ablation->add_option("--embeddings", abl_args.embeddings);
  ablation->add_flag("--fallback", abl_args.fallback);
  ablation->add_option("--seeds", abl_args.seeds)->capture_default_str();
  ablation->add_option("--k", abl_args.ks)->capture_default_str();
  abl_args.flags.add(ablation);

  auto* synth = app.add_subcommand("synth", "Write a synthetic ontology and planted-rule annotations");
  SynthArgs synth_args;
  synth->add_option("--out", synth_args.out)->required();
  synth->add_option("--terms", synth_args.terms)->capture_default_str();
  synth->add_option("--genes", synth_args.genes)->capture_default_str();
  synth->add_option("--rules", synth_args.rules)->capture_default_str();
  synth->add_option("--edge-rules", synth_args.edge_rules)->capture_default_str();
  synth->add_option("--seed", synth_args.seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return 2;
  }

  try {
    if (parse->parsed()) return cmd_parse_obo(obo_path, parse_out, allow_violations, parse_adjacency, out, err);
    if (build->parsed()) return cmd_build_corpus(build_args, out);
    if (pretrain->parsed()) return cmd_pretrain(pre_args, out, err);
    if (eval->parsed()) return cmd_evaluate(eval_args, out);
    if (predict->parsed()) return cmd_predict(pred_args, out);
    if (ablation->parsed()) return cmd_ablation(abl_args, out, err);
    if (synth->parsed()) return cmd_synth(synth_args, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace gobert
