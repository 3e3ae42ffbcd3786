#include <cmath>
#include <filesystem>

#include "../oracles.h"
#include "../synthetic.h"
#include "doctest.h"
#include "nsd/crf_tagger.h"
#include "nsd/error.h"
#include "nsd/features.h"
#include "nsd/metrics.h"

using namespace nsd;

TEST_CASE("single-token partition function") {
  TaggerModel m(Objective::kBinary, {"O", "ENT"}, 1);
  m.weight(0, 0) = 0.3;
  m.weight(1, 0) = -1.2;
  m.bias(1) = 0.5;
  m.transition(0, 1) = 5.0;  // irrelevant for one token
  TokenFeatureMatrix x(0, 1);
  x.add_dense_row(std::vector<double>{2.0});
  const double s_o = 0.6;
  const double s_ent = -2.4 + 0.5;
  const double log_z = std::log(std::exp(s_o) + std::exp(s_ent));
  CHECK(log_partition(m, x) == doctest::Approx(log_z).epsilon(1e-14));
  const std::vector<int> gold{1};
  CHECK(log_likelihood_and_grad(m, x, gold).log_likelihood ==
        doctest::Approx(s_ent - log_z).epsilon(1e-14));
}

TEST_CASE("partition, Viterbi and marginals against enumeration") {
  Rng rng(42);
  for (int trial = 0; trial < 60; ++trial) {
    auto inst = oracle::random_instance(rng, 5, 4, 3);
    const auto ref = oracle::enumerate_paths(inst.model, inst.features);
    CHECK(std::abs(log_partition(inst.model, inst.features) - ref.log_z) < 1e-8);
    const auto path = viterbi_decode(inst.model, inst.features);
    const auto e = emissions(inst.model, inst.features);
    CHECK(std::abs(path_score(inst.model, e, path) - ref.best_score) < 1e-9);
    const auto p = posterior_marginals(inst.model, inst.features);
    for (std::size_t i = 0; i < p.rows; ++i) {
      double row = 0.0;
      for (std::size_t t = 0; t < p.cols; ++t) {
        CHECK(std::abs(p(i, t) - ref.marginals[i][t]) < 1e-8);
        row += p(i, t);
      }
      CHECK(std::abs(row - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("zero transitions decouple the chain") {
  Rng rng(3);
  auto inst = oracle::random_instance(rng, 6, 5, 4);
  const std::size_t T = inst.model.num_tags();
  for (std::size_t a = 0; a < T; ++a) {
    for (std::size_t b = 0; b < T; ++b) inst.model.transition(a, b) = 0.0;
  }
  const auto e = oracle::emission_table(inst.model, inst.features);
  const auto path = viterbi_decode(inst.model, inst.features);
  const auto p = posterior_marginals(inst.model, inst.features);
  for (std::size_t i = 0; i < e.size(); ++i) {
    std::size_t best = 0;
    double z = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      if (e[i][t] > e[i][best]) best = t;
      z += std::exp(e[i][t]);
    }
    CHECK(path[i] == static_cast<int>(best));
    for (std::size_t t = 0; t < T; ++t) {
      CHECK(p(i, t) == doctest::Approx(std::exp(e[i][t]) / z).epsilon(1e-12));
    }
  }
}

TEST_CASE("symmetric two-tag chain has uniform marginals") {
  TaggerModel m(Objective::kBinary, {"O", "ENT"}, 2);
  m.transition(0, 0) = m.transition(1, 1) = 0.7;
  m.transition(0, 1) = m.transition(1, 0) = -0.4;
  TokenFeatureMatrix x(0, 2);
  for (int i = 0; i < 4; ++i) x.add_dense_row(std::vector<double>{1.0, -1.0});
  const auto p = posterior_marginals(m, x);
  for (double v : p.data) CHECK(v == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("a dominating transition reroutes the decode") {
  // Tags O, B-x, I-x. Emissions alone favor O, I-x; the O -> I-x transition
  // is forbidden, so the best path becomes B-x, I-x.
  TaggerModel m(Objective::kMultiple, {"O", "B-x", "I-x"}, 2);
  m.weight(0, 0) = 2.0;
  m.weight(1, 0) = 1.5;
  m.weight(2, 1) = 3.0;
  m.transition(0, 2) = -100.0;
  TokenFeatureMatrix x(0, 2);
  x.add_dense_row(std::vector<double>{1.0, 0.0});
  x.add_dense_row(std::vector<double>{0.0, 1.0});
  CHECK(viterbi_decode(m, x) == std::vector<int>{1, 2});
  m.transition(0, 2) = 0.0;
  CHECK(viterbi_decode(m, x) == std::vector<int>{0, 2});
}

TEST_CASE("Viterbi ties go to the lowest tag index") {
  TaggerModel m(Objective::kMultiple, {"O", "B-x", "I-x"}, 1);
  TokenFeatureMatrix x(0, 1);
  for (int i = 0; i < 3; ++i) x.add_dense_row(std::vector<double>{1.0});
  CHECK(viterbi_decode(m, x) == std::vector<int>{0, 0, 0});
}

TEST_CASE("shifting one token's emissions changes nothing") {
  Rng rng(8);
  auto inst = oracle::random_instance(rng, 5, 4, 3);
  const auto path = viterbi_decode(inst.model, inst.features);
  const auto p = posterior_marginals(inst.model, inst.features);
  // Add an always-on feature column via the bias: shifts every token equally,
  // so emulate a single-token shift through a dedicated feature instead.
  const std::size_t d = inst.model.dim();
  TaggerModel shifted(Objective::kMultiple, inst.model.tags(), d + 1);
  for (std::size_t t = 0; t < inst.model.num_tags(); ++t) {
    for (std::size_t f = 0; f < d; ++f) shifted.weight(t, f) = inst.model.weight(t, f);
    shifted.weight(t, d) = 4.2;
    shifted.bias(t) = inst.model.bias(t);
    for (std::size_t s = 0; s < inst.model.num_tags(); ++s) {
      shifted.transition(s, t) = inst.model.transition(s, t);
    }
  }
  TokenFeatureMatrix x(0, d + 1);
  for (std::size_t i = 0; i < inst.features.rows(); ++i) {
    auto row = inst.features.dense_row(i);
    row.push_back(i == 0 ? 1.0 : 0.0);
    x.add_dense_row(row);
  }
  CHECK(viterbi_decode(shifted, x) == path);
  const auto q = posterior_marginals(shifted, x);
  for (std::size_t k = 0; k < p.data.size(); ++k) CHECK(std::abs(q.data[k] - p.data[k]) < 1e-12);
}

TEST_CASE("gradient matches central differences") {
  Rng rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    auto inst = oracle::random_instance(rng, 5, 4, 3);
    const auto analytic = log_likelihood_and_grad(inst.model, inst.features, inst.gold);
    auto &params = inst.model.parameters();
    const double h = 1e-5;
    for (std::size_t k = 0; k < params.size(); ++k) {
      const double saved = params[k];
      params[k] = saved + h;
      const double up = log_likelihood_and_grad(inst.model, inst.features, inst.gold).log_likelihood;
      params[k] = saved - h;
      const double down = log_likelihood_and_grad(inst.model, inst.features, inst.gold).log_likelihood;
      params[k] = saved;
      const double numeric = (up - down) / (2 * h);
      const double scale = std::max({std::abs(numeric), std::abs(analytic.gradient[k]), 1e-3});
      CHECK(std::abs(numeric - analytic.gradient[k]) / scale < 1e-4);
    }
  }
}

TEST_CASE("tag sets per objective") {
  const SlotSchema schema({"a", "b"});
  CHECK(objective_tags(Objective::kBinary, schema) == std::vector<std::string>{"O", "ENT"});
  CHECK(objective_tags(Objective::kMultiple, schema).size() == 5);
  const auto bin = objective_tags(Objective::kBinary, schema);
  CHECK(map_gold_tag(Objective::kBinary, bin, "I-b") == 1);
  CHECK(map_gold_tag(Objective::kBinary, bin, "O") == 0);
  CHECK(map_gold_tag(Objective::kBinary, bin, "NS") == -1);
  const auto multi = objective_tags(Objective::kMultiple, schema);
  CHECK(map_gold_tag(Objective::kMultiple, multi, "B-b") == 3);
  CHECK_THROWS_AS(map_gold_tag(Objective::kMultiple, multi, "B-zzz"), IllegalTag);
  CHECK_THROWS_AS(TaggerModel(Objective::kMultiple, {"O"}, 4), ConfigError);
}

TEST_CASE("dimension checks") {
  TaggerModel m(Objective::kBinary, {"O", "ENT"}, 4);
  TokenFeatureMatrix x(0, 5);
  x.add_dense_row(std::vector<double>(5, 1.0));
  CHECK_THROWS_AS(emissions(m, x), DimensionMismatch);
  TokenFeatureMatrix y(0, 4);
  y.add_dense_row(std::vector<double>(4, 1.0));
  const std::vector<int> wrong{0, 1};
  CHECK_THROWS_AS(log_likelihood_and_grad(m, y, wrong), DimensionMismatch);
}

namespace {

// Two slot types with disjoint vocabularies and fixed contexts.
Corpus separable(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  const std::vector<std::string> colors{"red", "green", "blue", "teal"};
  const std::vector<std::string> towns{"oslo", "lima", "kyoto", "paris"};
  Corpus out;
  for (std::size_t i = 0; i < n; ++i) {
    LabeledUtterance u;
    if (rng.below(2) == 0) {
      u.tokens = {"paint", "it", colors[rng.below(4)]};
      u.tags = {"O", "O", "B-color"};
    } else {
      u.tokens = {"fly", "to", towns[rng.below(4)], "now"};
      u.tags = {"O", "O", "B-town", "O"};
    }
    out.push_back(u);
  }
  return out;
}

}  // namespace

TEST_CASE("separable corpus is learned perfectly") {
  const auto train = separable(60, 1);
  const auto val = separable(30, 2);
  HashedFeatureSpec spec;
  spec.dim = 256;
  CorpusSplit split;
  split.utterances = train;
  const auto schema = derive_schema(split);
  TrainConfig cfg;
  cfg.max_epochs = 50;
  cfg.batch_size = 8;
  const auto result = train_tagger(train, hash_corpus(train, spec), Objective::kMultiple,
                                    schema, cfg, val, hash_corpus(val, spec));
  CHECK(result.epochs_run <= 50);
  CHECK(validation_score(result.model, val, hash_corpus(val, spec)) == 100.0);
}

TEST_CASE("zero learning rate stops after patience and keeps zeros") {
  const auto train = separable(10, 1);
  HashedFeatureSpec spec;
  spec.dim = 64;
  CorpusSplit split;
  split.utterances = train;
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  cfg.patience = 1;
  const auto f = hash_corpus(train, spec);
  const auto result =
      train_tagger(train, f, Objective::kMultiple, derive_schema(split), cfg, train, f);
  CHECK(result.epochs_run == 2);
  for (double p : result.model.parameters()) CHECK(p == 0.0);
}

TEST_CASE("training is deterministic and models serialize exactly") {
  const auto corpus = synthetic::generate(80, 4);
  const auto val = synthetic::generate(20, 5);
  HashedFeatureSpec spec;
  spec.dim = 128;
  CorpusSplit split;
  split.utterances = corpus;
  const auto schema = derive_schema(split);
  TrainConfig cfg;
  cfg.max_epochs = 3;
  cfg.seed = 11;
  const auto f = hash_corpus(corpus, spec);
  const auto vf = hash_corpus(val, spec);
  const auto a = train_tagger(corpus, f, Objective::kMultiple, schema, cfg, val, vf);
  const auto b = train_tagger(corpus, f, Objective::kMultiple, schema, cfg, val, vf);
  CHECK(a.model == b.model);
  const auto bin = train_tagger(corpus, f, Objective::kBinary, schema, cfg, val, vf);
  CHECK(bin.model.num_tags() == 2);

  const auto bytes = serialize_model(a.model);
  CHECK(bytes.size() == 20 + 8 * a.model.parameters().size());
  CHECK(parse_model(bytes, a.model.tags()) == a.model);
  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(parse_model(bad, a.model.tags()), FormatError);
  CHECK_THROWS_AS(parse_model(bytes, {"O", "ENT"}), FormatError);
  const auto path = (std::filesystem::temp_directory_path() / "nsd_model_test.nsdm").string();
  save_model(path, bin.model);
  CHECK(load_model(path, bin.model.tags()) == bin.model);
  std::filesystem::remove(path);
}
