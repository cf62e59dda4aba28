#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "doctest.h"
#include "fixtures.hpp"
#include "gobert/corpus.hpp"
#include "gobert/error.hpp"
#include "gobert/random.hpp"

using namespace gobert;
using fixtures::data;

namespace {

const GoDag& fixture40() {
  static const GoDag dag = load_obo(data("go_40.obo"));
  return dag;
}

std::vector<GeneExample> load(const std::string& text, LoadStats* stats = nullptr, std::size_t max_len = 64) {
  std::istringstream in(text);
  return load_annotations(in, fixture40(), max_len, stats);
}

std::vector<GeneExample> load_file(const std::string& name, LoadStats* stats = nullptr) {
  std::ifstream in(data(name));
  return load_annotations(in, fixture40(), 64, stats);
}

}  // namespace

TEST_CASE("vocabulary layout") {
  const auto& dag = fixture40();
  const Vocabulary vocab(dag);
  CHECK(vocab.size() == 3 + 39);
  CHECK(Vocabulary::kPad == 0);
  CHECK(Vocabulary::kMask == 1);
  CHECK(Vocabulary::kUnk == 2);
  TokenId prev = 0;
  for (TermIndex i = 0; i < static_cast<TermIndex>(dag.size()); ++i) {
    const auto& t = dag.term(i);
    const auto tok = vocab.token_of(dag, t.id);
    if (t.is_obsolete) {
      CHECK(tok == Vocabulary::kUnk);
      continue;
    }
    CHECK(tok > prev);
    prev = tok;
    CHECK(vocab.token_string(dag, tok) == t.id.str());
  }
  CHECK(vocab.token_of(dag, TermId("GO:0000042")) == Vocabulary::kUnk);
  CHECK(vocab.token_string(dag, Vocabulary::kMask) == "[MASK]");
}

TEST_CASE("duplicate annotation lines collapse") {
  const auto ex = load("g1\tGO:0001565\ng1\tGO:0001565\n");
  REQUIRE(ex.size() == 1);
  CHECK(ex[0].terms == std::vector<TermId>{TermId("GO:0001565")});
  CHECK(ex[0].texts.size() == 1);
}

TEST_CASE("obsolete-only gene is skipped") {
  LoadStats stats;
  const auto ex = load("g1\tGO:0009001\ng2\tGO:0001565\n", &stats);
  CHECK(ex.size() == 1);
  CHECK(stats.skipped_genes == 1);
  CHECK(stats.dropped_terms == 1);
}

TEST_CASE("malformed lines report their line number") {
  auto line_of = [](const std::string& text) {
    try {
      load(text);
    } catch (const ParseError& e) {
      return e.line();
    }
    return std::size_t{0};
  };
  CHECK(line_of("g1\tGO:0001565\ng2 GO:0001565\n") == 2);
  CHECK(line_of("g1\tGO:0001565\n\ng2\tGO:1\n") == 3);
  CHECK(line_of("g1\tGO:0001565\textra\n") == 1);
}

TEST_CASE("truncation to max_len keeps the smallest ids") {
  LoadStats stats;
  const auto ex = load("g\tGO:0008480\ng\tGO:0001234\ng\tGO:0003674\n", &stats, 2);
  REQUIRE(ex.size() == 1);
  CHECK(ex[0].terms == std::vector<TermId>{TermId("GO:0001234"), TermId("GO:0003674")});
  CHECK(stats.truncated_genes == 1);
}

TEST_CASE("200-line fixture matches the sort-and-group reference") {
  LoadStats stats;
  const auto examples = load_file("annotations_200.tsv", &stats);
  CHECK(stats.lines == 200);
  std::map<std::string, std::string> ours;
  for (const auto& ex : examples) {
    std::string joined;
    for (const auto& t : ex.terms) joined += (joined.empty() ? "" : ",") + t.str();
    ours[ex.gene] = joined;
    CHECK(std::is_sorted(ex.terms.begin(), ex.terms.end()));
    CHECK(ex.texts.size() == ex.terms.size());
  }
  std::map<std::string, std::string> oracle;
  std::ifstream in(data("annotations_200.grouped"));
  std::string line;
  while (std::getline(in, line)) {
    const auto tab = line.find('\t');
    oracle[line.substr(0, tab)] = line.substr(tab + 1);
  }
  CHECK(ours == oracle);
  CHECK(stats.skipped_genes == 1);

  // first-appearance order
  std::vector<std::string> first_seen;
  std::ifstream raw(data("annotations_200.tsv"));
  while (std::getline(raw, line)) {
    const auto gene = line.substr(0, line.find('\t'));
    if (oracle.count(gene) && std::find(first_seen.begin(), first_seen.end(), gene) == first_seen.end())
      first_seen.push_back(gene);
  }
  std::vector<std::string> order;
  for (const auto& ex : examples) order.push_back(ex.gene);
  CHECK(order == first_seen);
}

TEST_CASE("dedupe") {
  const auto& dag = fixture40();
  SUBCASE("identical sets") {
    std::vector<GeneExample> ex{make_example("a", {TermId("GO:0001565"), TermId("GO:0001234")}, dag),
                                make_example("b", {TermId("GO:0001234"), TermId("GO:0001565")}, dag)};
    const auto kept = dedupe_examples(ex);
    REQUIRE(kept.size() == 1);
    CHECK(kept[0].gene == "a");
  }
  SUBCASE("sets differing by one term") {
    std::vector<GeneExample> ex{make_example("a", {TermId("GO:0001565"), TermId("GO:0001234")}, dag),
                                make_example("b", {TermId("GO:0001565")}, dag)};
    CHECK(dedupe_examples(ex).size() == 2);
  }
  SUBCASE("50-gene fixture with 7 planted duplicates") {
    const auto kept = dedupe_examples(load_file("dedupe_50.tsv"));
    CHECK(load_file("dedupe_50.tsv").size() == 50);
    CHECK(kept.size() == 43);
    std::vector<std::string> expected, got;
    std::ifstream in(data("dedupe_50.expected"));
    std::string g;
    while (std::getline(in, g)) expected.push_back(g);
    for (const auto& ex : kept) got.push_back(ex.gene);
    CHECK(got == expected);
    const auto again = dedupe_examples(kept);
    CHECK(again == kept);
  }
}

TEST_CASE("gene embedding is the mean of term rows") {
  const auto& dag = fixture40();
  const Vocabulary vocab(dag);
  EmbeddingMatrix emb;
  emb.rows = Eigen::MatrixXf::Zero(vocab.size(), 4);
  Rng rng(3);
  for (Eigen::Index r = 3; r < emb.rows.rows(); ++r)
    for (Eigen::Index c = 0; c < 4; ++c) emb.rows(r, c) = static_cast<float>(rng.normal());

  const auto one = make_example("g", {TermId("GO:0001565")}, dag);
  const auto t = vocab.token_of(dag, TermId("GO:0001565"));
  CHECK((gene_embedding(one, dag, vocab, emb) - emb.rows.row(t).transpose().cast<double>()).norm() == 0.0);

  const auto u = vocab.token_of(dag, TermId("GO:0001234"));
  emb.rows.row(u) = -emb.rows.row(t);
  const auto pair = make_example("g", {TermId("GO:0001565"), TermId("GO:0001234")}, dag);
  CHECK(gene_embedding(pair, dag, vocab, emb).norm() == 0.0);

  std::vector<TermId> five{TermId("GO:0001234"), TermId("GO:0003674"), TermId("GO:0004393"),
                           TermId("GO:0007650"), TermId("GO:0008480")};
  const auto ex = make_example("g", five, dag);
  const auto got = gene_embedding(ex, dag, vocab, emb);
  for (int c = 0; c < 4; ++c) {
    long double sum = 0;
    for (const auto& id : five) sum += emb.rows(vocab.token_of(dag, id), c);
    CHECK(got[c] == doctest::Approx(static_cast<double>(sum / 5)).epsilon(1e-12));
  }

  GeneExample empty;
  empty.gene = "e";
  CHECK_THROWS_AS(gene_embedding(empty, dag, vocab, emb), DomainError);
}

TEST_CASE("k-means objective never increases") {
  Rng rng(1);
  Eigen::MatrixXd pts(300, 5);
  for (Eigen::Index i = 0; i < pts.size(); ++i) pts.data()[i] = rng.normal();
  for (int k : {2, 5, 9}) {
    const auto km = kmeans(pts, k, 7);
    REQUIRE(!km.objective.empty());
    for (std::size_t i = 1; i < km.objective.size(); ++i) CHECK(km.objective[i] <= km.objective[i - 1] + 1e-9);
    for (int a : km.assignment) CHECK((a >= 0 && a < k));
  }
  CHECK_THROWS_AS(kmeans(pts.topRows(3), 4, 0), DomainError);
}

TEST_CASE("k-means split") {
  const auto& dag = fixture40();
  std::vector<GeneExample> genes;
  for (int i = 0; i < 90; ++i) genes.push_back(make_example("g" + std::to_string(i), {TermId("GO:0001565")}, dag));

  // three blobs, centers 100x further apart than the spread
  Rng rng(2);
  Eigen::MatrixXd pts(90, 3);
  const Eigen::Matrix3d centers = Eigen::Matrix3d::Identity() * 100.0;
  for (int i = 0; i < 90; ++i)
    for (int c = 0; c < 3; ++c) pts(i, c) = centers(i % 3, c) + rng.normal();

  SUBCASE("well-separated blobs become whole splits") {
    const auto split = kmeans_split(genes, pts, 3, {1.0 / 3, 1.0 / 3, 1.0 / 3}, 11);
    for (const auto* part : {&split.train, &split.valid, &split.test}) {
      REQUIRE(part->size() == 30);
      std::set<int> blobs;
      for (const auto& g : *part) blobs.insert(std::stoi(g.substr(1)) % 3);
      CHECK(blobs.size() == 1);
      // brute-force nearest center agrees with the blob label
      for (const auto& g : *part) {
        const int i = std::stoi(g.substr(1));
        Eigen::Index nearest;
        (centers.rowwise() - pts.row(i)).rowwise().squaredNorm().minCoeff(&nearest);
        CHECK(nearest == i % 3);
      }
    }
  }
  SUBCASE("K=1 puts everything in train") {
    const auto split = kmeans_split(genes, pts, 1, {0.8, 0.1, 0.1}, 0);
    CHECK(split.train.size() == 90);
    CHECK(split.valid.empty());
    CHECK(split.test.empty());
  }
  SUBCASE("disjoint, exhaustive and deterministic") {
    for (std::uint64_t seed : {0, 1, 2}) {
      for (int k : {3, 5, 10}) {
        const auto a = kmeans_split(genes, pts, k, {0.8, 0.1, 0.1}, seed);
        const auto b = kmeans_split(genes, pts, k, {0.8, 0.1, 0.1}, seed);
        CHECK(a.train == b.train);
        CHECK(a.valid == b.valid);
        CHECK(a.test == b.test);
        std::multiset<std::string> all(a.train.begin(), a.train.end());
        all.insert(a.valid.begin(), a.valid.end());
        all.insert(a.test.begin(), a.test.end());
        CHECK(all.size() == 90);
        CHECK(std::set<std::string>(all.begin(), all.end()).size() == 90);
      }
    }
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(kmeans_split(genes, pts, 91, {0.8, 0.1, 0.1}, 0), DomainError);
    CHECK_THROWS_AS(kmeans_split(genes, pts, 3, {0.8, 0.1, 0.2}, 0), DomainError);
    CHECK_THROWS_AS(kmeans_split(genes, pts, 3, {1.2, -0.1, -0.1}, 0), DomainError);
  }
}

TEST_CASE("corpus and split serialization round trip") {
  const auto examples = load_file("annotations_200.tsv");
  std::stringstream ss;
  write_corpus_jsonl(ss, examples);
  CHECK(read_corpus_jsonl(ss) == examples);

  CorpusSplit split;
  split.train = {"a", "b"};
  split.valid = {"c"};
  split.test = {};
  split.seed = 42;
  split.k = 3;
  split.ratios = {0.5, 0.25, 0.25};
  std::stringstream js;
  write_split_json(js, split);
  const auto back = read_split_json(js);
  CHECK(back.train == split.train);
  CHECK(back.valid == split.valid);
  CHECK(back.test == split.test);
  CHECK(back.seed == 42);
  CHECK(back.k == 3);
  CHECK(back.ratios == split.ratios);
}
