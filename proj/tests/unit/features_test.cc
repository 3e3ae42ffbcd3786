#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>

#include "../synthetic.h"
#include "doctest.h"
#include "nsd/error.h"
#include "nsd/features.h"

using namespace nsd;

namespace {

LabeledUtterance utt(std::vector<std::string> tokens) {
  LabeledUtterance u;
  u.tags.assign(tokens.size(), "O");
  u.tokens = std::move(tokens);
  return u;
}

void put_u32(std::vector<std::uint8_t> *b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b->push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

// Independent writer for the embedding layout.
std::vector<std::uint8_t> nsde(std::uint32_t d, const std::vector<std::vector<float>> &utts,
                               const std::vector<std::uint32_t> &rows,
                               std::uint32_t count_override = 0) {
  std::vector<std::uint8_t> b{'N', 'S', 'D', 'E'};
  put_u32(&b, 1);
  put_u32(&b, d);
  put_u32(&b, count_override ? count_override : static_cast<std::uint32_t>(utts.size()));
  for (std::size_t u = 0; u < utts.size(); ++u) {
    put_u32(&b, rows[u]);
    for (float f : utts[u]) put_u32(&b, std::bit_cast<std::uint32_t>(f));
  }
  return b;
}

}  // namespace

TEST_CASE("one template, one firing") {
  HashedFeatureSpec spec;
  spec.dim = 16;
  spec.templates = kWordIdentity;
  const auto m = hash_features(utt({"play"}), spec);
  REQUIRE(m.rows() == 1);
  CHECK(m.row(0).nnz() == 1);
  CHECK(m.row(0).values[0] == 1.0);
  CHECK(m.row(0).indices[0] < 16);
  CHECK(hash_features(utt({"play"}), spec) == m);
}

TEST_CASE("contains-digit template") {
  HashedFeatureSpec spec;
  spec.dim = 64;
  spec.templates = kContainsDigit;
  const auto digit_index = feature_index(spec, kContainsDigit, "1");
  const auto a1 = hash_features(utt({"a1"}), spec).dense_row(0);
  const auto ab = hash_features(utt({"ab"}), spec);
  CHECK(a1[digit_index] == 1.0);
  CHECK(ab.row(0).nnz() == 0);
}

TEST_CASE("collisions add up") {
  HashedFeatureSpec spec;
  spec.dim = 16;
  spec.templates = kWordIdentity | kLowercaseWord;
  // "play" fires word and lowercase word; both hash somewhere in 16 slots.
  const auto row = hash_features(utt({"play"}), spec).dense_row(0);
  double total = 0.0;
  for (double v : row) total += v;
  CHECK(total == 2.0);
}

TEST_CASE("all templates, boundary sentinels and neighbor dependence") {
  HashedFeatureSpec spec;
  spec.dim = 1 << 16;
  const auto m = hash_features(utt({"Play", "x"}), spec);
  const auto r0 = m.dense_row(0);
  double total = 0.0;
  for (double v : r0) total += v;
  // word, lowercase, 3 prefixes, 3 suffixes, capitalized, previous, next.
  CHECK(total == 11.0);
  CHECK(r0[feature_index(spec, kPreviousWord, "<s>")] >= 1.0);
  CHECK(m.dense_row(1)[feature_index(spec, kNextWord, "</s>")] >= 1.0);
  CHECK(hash_features(utt({"Play", "y"}), spec).dense_row(0) != r0);
}

TEST_CASE("hashing depends only on the utterance") {
  const auto corpus = synthetic::generate(20, 3);
  Corpus reversed(corpus.rbegin(), corpus.rend());
  HashedFeatureSpec spec;
  const auto a = hash_corpus(corpus, spec);
  const auto b = hash_corpus(reversed, spec);
  for (std::size_t u = 0; u < corpus.size(); ++u) {
    const auto &x = a[u];
    const auto &y = b[corpus.size() - 1 - u];
    REQUIRE(x.rows() == y.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) CHECK(x.dense_row(i) == y.dense_row(i));
  }
  HashedFeatureSpec other = spec;
  other.hash_seed = 7;
  CHECK(hash_corpus(corpus, other)[0].dense_row(0) != a[0].dense_row(0));
}

TEST_CASE("hashed feature option validation") {
  HashedFeatureSpec spec;
  spec.dim = 15;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec.dim = 16;
  spec.templates = 0;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
}

TEST_CASE("embedding file: counts propagate") {
  Corpus corpus{utt({"a", "b", "c"}), utt({"a", "b", "c", "d", "e"})};
  std::vector<float> u0(3 * 16), u1(5 * 16);
  for (std::size_t i = 0; i < u0.size(); ++i) u0[i] = 0.25f * static_cast<float>(i);
  for (std::size_t i = 0; i < u1.size(); ++i) u1[i] = -0.5f * static_cast<float>(i);
  const auto bytes = nsde(16, {u0, u1}, {3, 5});
  const auto f = parse_embeddings(bytes, corpus);
  REQUIRE(f.size() == 2);
  CHECK(f[0].rows() == 3);
  CHECK(f[1].rows() == 5);
  CHECK(f[0].dim() == 16);
  CHECK(f[0].dense_row(2)[5] == 0.25 * 37);
  CHECK(f[1].dense_row(4)[15] == -0.5 * 79);
  // Writer round trip is byte-exact.
  CHECK(serialize_embeddings(f) == bytes);
}

TEST_CASE("embedding file errors") {
  Corpus corpus{utt({"a"}), utt({"b", "c"})};
  const std::vector<float> r1(4, 1.0f), r2(8, 1.0f);
  auto good = nsde(4, {r1, r2}, {1, 2});
  CHECK_NOTHROW(parse_embeddings(good, corpus));

  auto bad_magic = good;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(parse_embeddings(bad_magic, corpus), FormatError);
  auto bad_version = good;
  bad_version[4] = 2;
  CHECK_THROWS_AS(parse_embeddings(bad_version, corpus), FormatError);
  auto truncated = good;
  truncated.resize(truncated.size() - 3);
  CHECK_THROWS_AS(parse_embeddings(truncated, corpus), FormatError);

  try {
    parse_embeddings(nsde(4, {r1, r2, r1}, {1, 2, 1}), corpus);
    FAIL("expected AlignmentError");
  } catch (const AlignmentError &e) {
    CHECK(e.utterance() == 2);
  }
  try {
    parse_embeddings(nsde(4, {r1}, {1}), corpus);
    FAIL("expected AlignmentError");
  } catch (const AlignmentError &e) {
    CHECK(e.utterance() == 1);
  }
  try {
    parse_embeddings(nsde(4, {r1, std::vector<float>(12, 1.0f)}, {1, 3}), corpus);
    FAIL("expected AlignmentError");
  } catch (const AlignmentError &e) {
    CHECK(e.utterance() == 1);
  }
  auto with_nan = r2;
  with_nan[5] = std::nanf("");
  CHECK_THROWS_AS(parse_embeddings(nsde(4, {r1, with_nan}, {1, 2}), corpus), NonFiniteValue);
  auto with_inf = r2;
  with_inf[0] = INFINITY;
  CHECK_THROWS_AS(parse_embeddings(nsde(4, {r1, with_inf}, {1, 2}), corpus), NonFiniteValue);
}

TEST_CASE("embedding files on disk through a feature source") {
  const auto dir = std::filesystem::temp_directory_path() / "nsd_features_test";
  std::filesystem::create_directories(dir);
  const auto corpus = synthetic::generate(5, 9);
  HashedFeatureSpec spec;
  spec.dim = 32;
  const auto hashed = hash_corpus(corpus, spec);
  write_embeddings((dir / "val.nsde").string(), hashed);
  const auto source = FeatureSource::parse("file:" + dir.string());
  const auto loaded = extract_features(source, corpus, "val");
  REQUIRE(loaded.size() == hashed.size());
  for (std::size_t u = 0; u < loaded.size(); ++u) {
    for (std::size_t i = 0; i < loaded[u].rows(); ++i) {
      CHECK(loaded[u].dense_row(i) == hashed[u].dense_row(i));
    }
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("feature source strings") {
  auto s = FeatureSource::parse("hashed:d=512,seed=3");
  CHECK(s.kind == FeatureSource::Kind::kHashed);
  CHECK(s.hashed.dim == 512);
  CHECK(s.hashed.hash_seed == 3);
  CHECK(s.to_string() == "hashed:d=512,seed=3");
  CHECK(FeatureSource::parse("hashed").hashed.dim == 4096);
  CHECK(FeatureSource::parse("file:/x/y").directory == "/x/y");
  CHECK_THROWS_AS(FeatureSource::parse("bert"), ConfigError);
  CHECK_THROWS_AS(FeatureSource::parse("hashed:d=abc"), ConfigError);
  CHECK_THROWS_AS(FeatureSource::parse("hashed:d=8"), ConfigError);
  CHECK_THROWS_AS(FeatureSource::parse("hashed:k=8"), ConfigError);
}

TEST_CASE("sparse rows") {
  TokenFeatureMatrix m(0, 10);
  m.add_sparse_row({{3, 1.0}, {1, 2.0}, {3, 1.0}, {5, 0.0}});
  CHECK(m.row(0).nnz() == 2);
  CHECK(m.row(0).indices[0] == 1);
  CHECK(m.row(0).values[1] == 2.0);
  CHECK_THROWS_AS(m.add_sparse_row({{10, 1.0}}), DimensionMismatch);
  CHECK_THROWS_AS(m.add_sparse_row({{1, NAN}}), NonFiniteValue);
  CHECK_THROWS_AS(m.add_dense_row(std::vector<double>(9, 0.0)), DimensionMismatch);
}
