#ifndef NSD_CORPUS_H_
#define NSD_CORPUS_H_

#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace nsd {

// The unified label for tokens of slot types outside the in-domain schema.
inline constexpr std::string_view kNovelTag = "NS";
inline constexpr std::string_view kOutsideTag = "O";
// Token substituted for unknown slot values by the Mask strategy.
inline constexpr std::string_view kMaskToken = "MASK";

// A tokenized utterance with one BIO tag per token.
struct LabeledUtterance {
  std::vector<std::string> tokens;
  std::vector<std::string> tags;

  std::size_t size() const { return tokens.size(); }
  bool operator==(const LabeledUtterance &) const = default;
};

using Corpus = std::vector<LabeledUtterance>;

enum class SplitName { kTrain, kVal, kTest };

const char *split_name(SplitName name);

struct CorpusSplit {
  SplitName name = SplitName::kTrain;
  Corpus utterances;

  std::size_t size() const { return utterances.size(); }
};

struct CorpusSplits {
  CorpusSplit train{SplitName::kTrain, {}};
  CorpusSplit val{SplitName::kVal, {}};
  CorpusSplit test{SplitName::kTest, {}};
};

// Slot types in lexicographic order and the BIO tag vocabulary derived from
// them: "O" first, then B-/I- for each type.
class SlotSchema {
 public:
  SlotSchema() : tag_vocab_{std::string(kOutsideTag)} {}
  explicit SlotSchema(std::vector<std::string> slot_types);

  const std::vector<std::string> &slot_types() const { return slot_types_; }
  const std::vector<std::string> &tag_vocab() const { return tag_vocab_; }
  bool contains(std::string_view type) const;
  std::size_t size() const { return slot_types_.size(); }

  // Schema without the given types.
  SlotSchema without(const std::vector<std::string> &types) const;

 private:
  std::vector<std::string> slot_types_;
  std::vector<std::string> tag_vocab_;
};

// Decomposed tag: prefix is 'O', 'B', 'I' or 'N' (for NS).
struct TagParts {
  char prefix = 'O';
  std::string_view type;
};

// Returns false when the tag does not match O | NS | B-<type> | I-<type>.
bool parse_tag(std::string_view tag, TagParts *parts);
bool is_legal_tag(std::string_view tag);
// Slot type of a B-/I- tag, "NS" for NS, empty for O.
std::string_view tag_type(std::string_view tag);

struct ParseOptions {
  // NS tags are only legal in evaluation splits.
  bool allow_novel = true;
  // Reject the reserved MASK token (set when the Mask strategy is selected).
  bool reject_mask_token = false;
};

// Parses "token<ws>tag" lines; blank lines separate utterances.
Corpus parse_conll(std::string_view text, const ParseOptions &options = {});
Corpus read_conll_file(const std::string &path,
                       const ParseOptions &options = {});

// Canonical form: "token tag" lines, one blank line after every utterance.
std::string serialize_conll(const Corpus &corpus);
void write_conll_file(const std::string &path, const Corpus &corpus);

// ASCII and Latin-1 lowercasing of a UTF-8 string.
std::string to_lower(std::string_view word);
void lowercase_tokens(Corpus *corpus);

SlotSchema derive_schema(const CorpusSplit &train);

struct CorpusStats {
  std::size_t vocabulary_size = 0;
  double oov_word_percentage = 0.0;
  std::size_t num_slots = 0;
  std::map<std::string, std::size_t> split_sizes;
};

// Vocabulary over train tokens; OOV over test tokens.
CorpusStats compute_stats(const CorpusSplits &splits, bool lowercase = true);

// Percentage of test word tokens absent from the train vocabulary.
double oov_percentage(const Corpus &train, const Corpus &test, bool lowercase);

struct BioWarning {
  std::size_t index = 0;
  std::string message;
};

// Positions where I-X follows O, another type, or starts the sequence.
std::vector<BioWarning> validate_bio(const LabeledUtterance &utt);

}  // namespace nsd

#endif  // NSD_CORPUS_H_
