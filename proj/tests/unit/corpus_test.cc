#include <algorithm>

#include "doctest.h"
#include "nsd/corpus.h"
#include "nsd/error.h"

using namespace nsd;

TEST_CASE("parse a single utterance") {
  const auto c = parse_conll("play O\nsong B-music_item\n\n");
  REQUIRE(c.size() == 1);
  CHECK(c[0].tokens == std::vector<std::string>{"play", "song"});
  CHECK(c[0].tags == std::vector<std::string>{"O", "B-music_item"});
}

TEST_CASE("separators: tabs, runs of spaces, CRLF, repeated blank lines") {
  const auto c = parse_conll("a\tO\r\nb   B-x\r\n\r\n\n\nc O\n");
  REQUIRE(c.size() == 2);
  CHECK(c[0].tags[1] == "B-x");
  CHECK(c[1].tokens[0] == "c");
}

TEST_CASE("parse errors") {
  CHECK_THROWS_AS(parse_conll(""), EmptyCorpus);
  CHECK_THROWS_AS(parse_conll("\n\n"), EmptyCorpus);
  try {
    parse_conll("play O B-x\n");
    FAIL("expected MalformedLine");
  } catch (const MalformedLine &e) {
    CHECK(e.line() == 1);
  }
  try {
    parse_conll("a O\n\nb O\nc\n");
    FAIL("expected MalformedLine");
  } catch (const MalformedLine &e) {
    CHECK(e.line() == 4);
  }
  CHECK_THROWS_AS(parse_conll("a X-y\n"), IllegalTag);
  CHECK_THROWS_AS(parse_conll("a B-\n"), IllegalTag);
  CHECK_THROWS_AS(parse_conll("a B-NS\n"), IllegalTag);
}

TEST_CASE("NS only where allowed, MASK only when not reserved") {
  CHECK(parse_conll("a NS\n")[0].tags[0] == "NS");
  ParseOptions train;
  train.allow_novel = false;
  CHECK_THROWS_AS(parse_conll("a NS\n", train), IllegalTag);
  ParseOptions mask;
  mask.reject_mask_token = true;
  CHECK_NOTHROW(parse_conll("MASK O\n"));
  CHECK_THROWS_AS(parse_conll("MASK O\n", mask), ReservedToken);
}

TEST_CASE("serialize is canonical and round-trips") {
  const std::string messy = "a\tO\nb  B-x\n\n\n\nc I-y\n";
  const auto c = parse_conll(messy);
  const std::string canonical = serialize_conll(c);
  CHECK(canonical == "a O\nb B-x\n\nc I-y\n\n");
  CHECK(parse_conll(canonical) == c);
  CHECK(serialize_conll(parse_conll(canonical)) == canonical);
}

TEST_CASE("schema derivation") {
  CorpusSplit train;
  train.utterances = parse_conll("a O\nb B-artist\nc I-artist\nd B-album\ne I-album\n");
  const auto s = derive_schema(train);
  CHECK(s.slot_types() == std::vector<std::string>{"album", "artist"});
  CHECK(s.tag_vocab() ==
        std::vector<std::string>{"O", "B-album", "I-album", "B-artist", "I-artist"});
  CHECK(s.tag_vocab().size() == 2 * s.size() + 1);

  CorpusSplit all_o;
  all_o.utterances = parse_conll("a O\nb O\n");
  CHECK(derive_schema(all_o).slot_types().empty());
  CHECK(derive_schema(all_o).tag_vocab() == std::vector<std::string>{"O"});

  CorpusSplit with_ns;
  with_ns.utterances = parse_conll("a NS\nb B-x\n");
  CHECK(!derive_schema(with_ns).contains("NS"));
  CHECK(derive_schema(with_ns).without({"x"}).size() == 0);
}

TEST_CASE("statistics") {
  CorpusSplits s;
  s.train.utterances = parse_conll("play O\n");
  s.val.utterances = parse_conll("play O\n");
  s.test.utterances = parse_conll("play O\n");
  auto st = compute_stats(s);
  CHECK(st.oov_word_percentage == 0.0);
  CHECK(st.vocabulary_size == 1);

  // Train vocabulary {play, some, Jazz -> jazz}; test tokens: play, Rock,
  // jazz, now -> 2 of 4 unseen.
  s.train.utterances = parse_conll("play O\nsome O\nJazz B-genre\n\nplay O\n");
  s.test.utterances = parse_conll("play O\nRock B-genre\n\njazz B-genre\nnow O\n");
  st = compute_stats(s);
  CHECK(st.vocabulary_size == 3);
  CHECK(st.oov_word_percentage == doctest::Approx(50.0));
  CHECK(st.num_slots == 1);
  CHECK(st.split_sizes.at("train") == 2);
  CHECK(st.split_sizes.at("test") == 2);

  // Case-sensitive: "Jazz" and "jazz" differ, "Rock" unseen.
  st = compute_stats(s, false);
  CHECK(st.vocabulary_size == 3);
  CHECK(st.oov_word_percentage == doctest::Approx(75.0));
}

TEST_CASE("lowercasing makes vocabulary case-blind") {
  CorpusSplits s;
  s.train.utterances = parse_conll("Play O\nthe O\nÉCOLE B-x\nnoël O\n");
  s.val.utterances = s.train.utterances;
  s.test.utterances = s.train.utterances;
  CorpusSplits upper = s;
  for (auto &u : upper.train.utterances) {
    for (auto &t : u.tokens) {
      std::transform(t.begin(), t.end(), t.begin(),
                     [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
    }
  }
  CHECK(compute_stats(s).vocabulary_size == compute_stats(upper).vocabulary_size);
  CHECK(to_lower("ÉCOLE") == "école");
  CHECK(to_lower("NOËL") == "noël");
  CHECK(to_lower("×") == "×");
}

TEST_CASE("BIO warnings") {
  auto warn = [](const std::string &text) { return validate_bio(parse_conll(text)[0]); };
  auto w = warn("a O\nb I-artist\n");
  REQUIRE(w.size() == 1);
  CHECK(w[0].index == 1);
  CHECK(warn("a B-artist\nb I-artist\n").empty());
  w = warn("a B-a\nb I-b\n");
  REQUIRE(w.size() == 1);
  CHECK(w[0].index == 1);
  CHECK(warn("a I-a\n").size() == 1);
}
