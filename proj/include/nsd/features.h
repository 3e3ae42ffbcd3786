#ifndef NSD_FEATURES_H_
#define NSD_FEATURES_H_

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "nsd/corpus.h"

namespace nsd {

// Read-only view of one token's feature vector: parallel index/value arrays,
// indices strictly increasing.
struct FeatureRow {
  std::span<const std::uint32_t> indices;
  std::span<const double> values;

  std::size_t nnz() const { return indices.size(); }
};

// Per-token feature vectors of one utterance, stored row-compressed so that
// sparse hashed features and dense embeddings share one representation.
class TokenFeatureMatrix {
 public:
  TokenFeatureMatrix() = default;
  TokenFeatureMatrix(std::size_t utterance_id, std::size_t dim)
      : utterance_id_(utterance_id), dim_(dim) {}

  // Appends a row given as (index, value) pairs in any order; duplicate
  // indices are summed, zeros dropped.
  void add_sparse_row(std::vector<std::pair<std::uint32_t, double>> entries);
  // Appends a dense row of exactly dim() values.
  void add_dense_row(std::span<const double> values);

  std::size_t utterance_id() const { return utterance_id_; }
  std::size_t dim() const { return dim_; }
  std::size_t rows() const { return offsets_.size() - 1; }
  FeatureRow row(std::size_t i) const;
  std::vector<double> dense_row(std::size_t i) const;

  bool operator==(const TokenFeatureMatrix &) const = default;

 private:
  std::size_t utterance_id_ = 0;
  std::size_t dim_ = 0;
  std::vector<std::size_t> offsets_{0};
  std::vector<std::uint32_t> indices_;
  std::vector<double> values_;
};

using FeatureCorpus = std::vector<TokenFeatureMatrix>;

enum FeatureTemplate : std::uint32_t {
  kWordIdentity = 1u << 0,
  kLowercaseWord = 1u << 1,
  kPrefixes = 1u << 2,  // lengths 1-3
  kSuffixes = 1u << 3,  // lengths 1-3
  kContainsDigit = 1u << 4,
  kIsCapitalized = 1u << 5,
  kPreviousWord = 1u << 6,
  kNextWord = 1u << 7,
  kAllTemplates = (1u << 8) - 1,
};

struct HashedFeatureSpec {
  std::size_t dim = 4096;
  std::uint32_t templates = kAllTemplates;
  std::uint64_t hash_seed = 0;

  void validate() const;
};

// Bucket of a (template, value) firing.
std::uint32_t feature_index(const HashedFeatureSpec &spec, std::uint32_t tmpl,
                            std::string_view value);

TokenFeatureMatrix hash_features(const LabeledUtterance &utt,
                                 const HashedFeatureSpec &spec,
                                 std::size_t utterance_id = 0);
FeatureCorpus hash_corpus(const Corpus &corpus, const HashedFeatureSpec &spec);

// NSDE embedding files: "NSDE", u32 version (1), u32 dim, u32 utterance
// count, then per utterance a u32 token count followed by tokens x dim
// little-endian float32 values, row-major.
inline constexpr std::uint32_t kEmbeddingFormatVersion = 1;

FeatureCorpus load_embeddings(const std::string &path, const Corpus &corpus);
FeatureCorpus parse_embeddings(std::span<const std::uint8_t> bytes,
                               const Corpus &corpus);
// Writes dense float32 rows; values must be representable as float.
std::vector<std::uint8_t> serialize_embeddings(const FeatureCorpus &features);
void write_embeddings(const std::string &path, const FeatureCorpus &features);

// Parsed form of the "--features" flag: "hashed[:d=N][,seed=S]" or "file:DIR".
struct FeatureSource {
  enum class Kind { kHashed, kFile } kind = Kind::kHashed;
  HashedFeatureSpec hashed;
  std::string directory;

  static FeatureSource parse(const std::string &text);
  std::string to_string() const;
};

// Features for one split; file sources read DIR/<split>.nsde.
FeatureCorpus extract_features(const FeatureSource &source, const Corpus &corpus,
                               const std::string &split);

}  // namespace nsd

#endif  // NSD_FEATURES_H_
