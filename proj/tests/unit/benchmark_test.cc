#include <map>
#include <memory>

#include "../synthetic.h"
#include "doctest.h"
#include "nsd/benchmark.h"
#include "nsd/error.h"

using namespace nsd;

namespace {

const char *kAlbumUtterance =
    "play O\nis B-album\nthis I-album\nmy I-album\nworld I-album\nby O\n"
    "leo B-artist\narnaud I-artist\n";

CorpusSplit split_of(const std::string &text, SplitName name = SplitName::kTrain) {
  CorpusSplit s;
  s.name = name;
  s.utterances = parse_conll(text);
  return s;
}

}  // namespace

TEST_CASE("strategies on the album utterance") {
  const auto train = split_of(kAlbumUtterance);
  const std::vector<std::string> unknown{"album"};
  const std::vector<std::string> expected_tags{"O", "O", "O", "O", "O", "O", "B-artist",
                                               "I-artist"};

  const auto replaced = apply_train_strategy(train, unknown, Strategy::kReplace);
  REQUIRE(replaced.size() == 1);
  CHECK(replaced.utterances[0].tokens == train.utterances[0].tokens);
  CHECK(replaced.utterances[0].tags == expected_tags);

  const auto masked = apply_train_strategy(train, unknown, Strategy::kMask);
  CHECK(masked.utterances[0].tokens ==
        std::vector<std::string>{"play", "MASK", "MASK", "MASK", "MASK", "by", "leo", "arnaud"});
  CHECK(masked.utterances[0].tags == expected_tags);

  std::vector<std::size_t> kept;
  const auto removed = apply_train_strategy(train, unknown, Strategy::kRemove, &kept);
  CHECK(removed.size() == 0);
  CHECK(kept.empty());
}

TEST_CASE("evaluation relabeling") {
  const auto test = split_of(kAlbumUtterance, SplitName::kTest);
  const auto r = relabel_eval_split(test, {"album"});
  CHECK(r.utterances[0].tags == std::vector<std::string>{"O", "NS", "NS", "NS", "NS", "O",
                                                         "B-artist", "I-artist"});
  CHECK(r.utterances[0].tokens == test.utterances[0].tokens);
  CHECK(relabel_eval_split(test, {}).utterances == test.utterances);
  CHECK(relabel_eval_split(r, {"album"}).utterances == r.utterances);
  const auto full = relabel_eval_split(split_of("a B-a\nb I-a\n"), {"a"});
  CHECK(full.utterances[0].tags == std::vector<std::string>{"NS", "NS"});
}

TEST_CASE("unknown type count") {
  SlotSchema one({"a"});
  const auto train = split_of("x B-a\n");
  Rng rng(1);
  CHECK(select_unknown_types(one, train, 0.5, rng) == std::vector<std::string>{"a"});
  CHECK(select_unknown_types(one, train, 0.01, rng).size() == 1);

  std::vector<std::string> types;
  std::string text;
  for (int i = 0; i < 39; ++i) {
    types.push_back("t" + std::to_string(i));
    text += "x B-t" + std::to_string(i) + "\n\n";
  }
  const SlotSchema big(types);
  const auto big_train = split_of(text);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng r(seed);
    CHECK(select_unknown_types(big, big_train, 0.15, r).size() == 6);
    Rng r5(seed);
    CHECK(select_unknown_types(big, big_train, 0.05, r5).size() == 2);
  }
  CHECK_THROWS_AS(
      [&] {
        Rng r(0);
        select_unknown_types(SlotSchema(), train, 0.5, r);
      }(),
      DegenerateSchema);
}

TEST_CASE("weighted sampling follows span counts") {
  std::string text;
  for (int i = 0; i < 90; ++i) text += "x B-a\n\n";
  for (int i = 0; i < 10; ++i) text += "y B-b\n\n";
  const auto train = split_of(text);
  const SlotSchema schema({"a", "b"});
  int a_count = 0;
  Rng rng(12345);
  for (int i = 0; i < 10000; ++i) {
    const auto chosen = select_unknown_types(schema, train, 0.5, rng);
    REQUIRE(chosen.size() == 1);
    a_count += chosen[0] == "a";
  }
  CHECK(std::abs(a_count / 100.0 - 90.0) <= 3.0);
}

TEST_CASE("build benchmark invariants on the synthetic corpus") {
  auto source = std::make_shared<CorpusSplits>(synthetic::splits(300, 80, 80, 5));
  const auto schema = derive_schema(source->train);
  for (auto strategy : {Strategy::kReplace, Strategy::kMask, Strategy::kRemove}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      NsdConfig cfg;
      cfg.proportion = 0.2;
      cfg.strategy = strategy;
      cfg.seed = seed;
      const auto b = build_benchmark(source, schema, cfg);
      CHECK(b.unknown_types.size() == 2);
      CHECK(b.in_domain_schema.size() == schema.size() - 2);
      for (const auto &u : b.splits.train.utterances) {
        for (std::size_t i = 0; i < u.size(); ++i) {
          CHECK(u.tags[i] != "NS");
          CHECK(!references_unknown(u.tags[i], b.unknown_types));
        }
      }
      if (strategy == Strategy::kRemove) {
        CHECK(b.splits.train.size() <= source->train.size());
        for (std::size_t k = 0; k < b.train_source_indices.size(); ++k) {
          const auto &orig = source->train.utterances[b.train_source_indices[k]];
          for (const auto &tag : orig.tags) CHECK(!references_unknown(tag, b.unknown_types));
          CHECK(orig == b.splits.train.utterances[k]);
        }
      } else {
        CHECK(b.splits.train.size() == source->train.size());
      }
      if (strategy == Strategy::kMask) {
        for (std::size_t u = 0; u < source->train.size(); ++u) {
          const auto &orig = source->train.utterances[u];
          const auto &now = b.splits.train.utterances[u];
          for (std::size_t i = 0; i < orig.size(); ++i) {
            CHECK((now.tokens[i] == "MASK") ==
                  references_unknown(orig.tags[i], b.unknown_types));
          }
        }
      }
      for (const auto *pair : {&b.splits.val, &b.splits.test}) {
        const auto &orig = pair == &b.splits.val ? source->val : source->test;
        for (std::size_t u = 0; u < orig.size(); ++u) {
          const auto &o = orig.utterances[u];
          const auto &n = pair->utterances[u];
          CHECK(o.tokens == n.tokens);
          for (std::size_t i = 0; i < o.size(); ++i) {
            if (references_unknown(o.tags[i], b.unknown_types)) {
              CHECK(n.tags[i] == "NS");
            } else {
              CHECK(n.tags[i] == o.tags[i]);
            }
          }
        }
      }
      const auto st = benchmark_stats(b);
      if (strategy != Strategy::kRemove) CHECK(st.removed_train_fraction == 0.0);
      CHECK(st.test.queries == 80);
    }
  }
}

TEST_CASE("explicit unknown types ignore the seed") {
  auto source = std::make_shared<CorpusSplits>(synthetic::splits(100, 30, 30));
  const auto schema = derive_schema(source->train);
  for (std::uint64_t seed : {1, 2, 99}) {
    NsdConfig cfg;
    cfg.explicit_unknown = {"object_name"};
    cfg.strategy = Strategy::kReplace;
    cfg.seed = seed;
    CHECK(build_benchmark(source, schema, cfg).unknown_types ==
          std::vector<std::string>{"object_name"});
  }
}

TEST_CASE("configuration errors") {
  const SlotSchema schema({"a", "b"});
  NsdConfig cfg;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.proportion = 0.5;
  CHECK_NOTHROW(cfg.validate(&schema));
  cfg.explicit_unknown = {"a"};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.proportion.reset();
  cfg.explicit_unknown = {"zzz"};
  CHECK_THROWS_AS(cfg.validate(&schema), ConfigError);
  NsdConfig bad;
  bad.proportion = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK(parse_strategy("Remove") == Strategy::kRemove);
  CHECK_THROWS_AS(parse_strategy("drop"), ConfigError);
}

TEST_CASE("everything removed") {
  auto source = std::make_shared<CorpusSplits>();
  source->train.utterances = parse_conll("x B-a\n");
  source->val.utterances = parse_conll("x B-a\n");
  source->test.utterances = parse_conll("x B-a\n");
  NsdConfig cfg;
  cfg.explicit_unknown = {"a"};
  cfg.strategy = Strategy::kRemove;
  CHECK_THROWS_AS(build_benchmark(source, derive_schema(source->train), cfg),
                  AllTrainRemoved);
}

TEST_CASE("mask strategy refuses corpora that already contain the mask token") {
  auto source = std::make_shared<CorpusSplits>();
  source->train.utterances = parse_conll("MASK O\ny B-a\n\nz B-b\n");
  source->val.utterances = source->train.utterances;
  source->test.utterances = source->train.utterances;
  NsdConfig cfg;
  cfg.explicit_unknown = {"a"};
  cfg.strategy = Strategy::kMask;
  CHECK_THROWS_AS(build_benchmark(source, derive_schema(source->train), cfg), ReservedToken);
  cfg.strategy = Strategy::kReplace;
  CHECK_NOTHROW(build_benchmark(source, derive_schema(source->train), cfg));
}

TEST_CASE("benchmark statistics by hand") {
  auto source = std::make_shared<CorpusSplits>();
  // Train: 4 utterances, one with an "a" span; test: 2 of 3 slot values are "a".
  source->train.utterances =
      parse_conll("p B-a\nq O\n\nr B-b\n\ns B-b\nt I-b\n\nu O\n");
  source->val.utterances = parse_conll("p B-a\n\nr B-b\n");
  source->test.utterances = parse_conll("p B-a\nw B-b\n\nq B-a\nz O\n");
  NsdConfig cfg;
  cfg.explicit_unknown = {"a"};
  cfg.strategy = Strategy::kRemove;
  const auto b = build_benchmark(source, derive_schema(source->train), cfg);
  const auto st = benchmark_stats(b);
  CHECK(st.removed_train_fraction == doctest::Approx(0.25));
  CHECK(st.train.queries == 3);
  CHECK(st.train.slot_values == 2);
  CHECK(st.test.queries == 2);
  CHECK(st.test.queries_with_unknown == 2);
  CHECK(st.test.slot_values == 3);
  CHECK(st.test.unknown_slot_values == 2);
  CHECK(st.test_unknown_value_percentage() == doctest::Approx(200.0 / 3.0));
  CHECK(st.train.in_domain_slot_types == 1);
  CHECK(st.train.unknown_slot_types == 1);
  // Reduced train vocabulary {r, s, t, u}; test tokens p, w, q, z all unseen.
  CHECK(st.oov_word_percentage == doctest::Approx(100.0));
}
