#ifndef NSD_CRF_TAGGER_H_
#define NSD_CRF_TAGGER_H_

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "nsd/corpus.h"
#include "nsd/features.h"

namespace nsd {

enum class Objective { kBinary, kMultiple };

const char *objective_name(Objective objective);
Objective parse_objective(const std::string &name);

// Label of every non-O token under the binary objective.
inline constexpr std::string_view kEntityTag = "ENT";

// Tag set used by a tagger trained with `objective` on `schema`.
std::vector<std::string> objective_tags(Objective objective,
                                        const SlotSchema &schema);
// Maps a gold tag into the objective's tag set; NS maps to -1.
int map_gold_tag(Objective objective, const std::vector<std::string> &tags,
                 std::string_view tag);

// Dense row-major matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}
  double &operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<const double> row(std::size_t r) const {
    return std::span(data).subspan(r * cols, cols);
  }
};

// Linear emissions plus a first-order transition matrix. Parameters live in
// one flat vector: emission weights (feature-major, d x |T|), emission bias
// (|T|), transitions (|T| x |T|, previous tag major).
class TaggerModel {
 public:
  TaggerModel() = default;
  TaggerModel(Objective objective, std::vector<std::string> tags, std::size_t dim);

  Objective objective() const { return objective_; }
  const std::vector<std::string> &tags() const { return tags_; }
  std::size_t num_tags() const { return tags_.size(); }
  std::size_t dim() const { return dim_; }
  int tag_index(std::string_view tag) const;

  double weight(std::size_t tag, std::size_t feature) const {
    return params_[feature * tags_.size() + tag];
  }
  double &weight(std::size_t tag, std::size_t feature) {
    return params_[feature * tags_.size() + tag];
  }
  double bias(std::size_t tag) const { return params_[bias_offset() + tag]; }
  double &bias(std::size_t tag) { return params_[bias_offset() + tag]; }
  double transition(std::size_t prev, std::size_t cur) const {
    return params_[transition_offset() + prev * tags_.size() + cur];
  }
  double &transition(std::size_t prev, std::size_t cur) {
    return params_[transition_offset() + prev * tags_.size() + cur];
  }

  std::size_t bias_offset() const { return dim_ * tags_.size(); }
  std::size_t transition_offset() const { return bias_offset() + tags_.size(); }
  std::vector<double> &parameters() { return params_; }
  const std::vector<double> &parameters() const { return params_; }

  bool operator==(const TaggerModel &) const = default;

 private:
  Objective objective_ = Objective::kMultiple;
  std::vector<std::string> tags_;
  std::size_t dim_ = 0;
  std::vector<double> params_;
};

// Emission scores, n x |T|.
Matrix emissions(const TaggerModel &model, const TokenFeatureMatrix &features);

// Unnormalized log score of a tag path.
double path_score(const TaggerModel &model, const Matrix &emissions,
                  std::span<const int> path);

struct ForwardBackward {
  Matrix alpha;  // log forward scores
  Matrix beta;   // log backward scores
  double log_partition = 0.0;
};

ForwardBackward forward_backward(const TaggerModel &model, const Matrix &emissions);
double log_partition(const TaggerModel &model, const TokenFeatureMatrix &features);

struct LikelihoodAndGradient {
  double log_likelihood = 0.0;
  std::vector<double> gradient;  // same layout as TaggerModel::parameters()
};

// log p(gold | features) and its gradient (observed minus expected counts).
LikelihoodAndGradient log_likelihood_and_grad(const TaggerModel &model,
                                              const TokenFeatureMatrix &features,
                                              std::span<const int> gold);

// Adds scale * gradient into `gradient`; returns the log-likelihood.
double accumulate_log_likelihood_gradient(const TaggerModel &model,
                                          const TokenFeatureMatrix &features,
                                          std::span<const int> gold, double scale,
                                          std::vector<double> *gradient);

// Highest-scoring path; ties resolve to the lowest tag index.
std::vector<int> viterbi_decode(const TaggerModel &model,
                                const TokenFeatureMatrix &features);
std::vector<std::string> decode_tags(const TaggerModel &model,
                                     const TokenFeatureMatrix &features);

// Per-token posterior marginals, n x |T|; rows sum to one.
Matrix posterior_marginals(const TaggerModel &model,
                           const TokenFeatureMatrix &features);

struct TrainConfig {
  double learning_rate = 0.1;
  std::size_t batch_size = 64;
  std::size_t max_epochs = 30;
  std::size_t patience = 10;
  double l2 = 1e-4;
  std::uint64_t seed = 0;

  void validate() const;
};

struct TrainResult {
  TaggerModel model;
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;
  std::vector<double> val_history;  // selection score after each epoch
};

// Mini-batch gradient ascent from zero initialization with early stopping on
// the validation score: in-domain span F1 (multiple) or entity token F1
// (binary). Gold NS tokens in `val` are left out of the score.
TrainResult train_tagger(const Corpus &train, const FeatureCorpus &train_features,
                         Objective objective, const SlotSchema &schema,
                         const TrainConfig &config, const Corpus &val,
                         const FeatureCorpus &val_features);

// Selection score used during training.
double validation_score(const TaggerModel &model, const Corpus &val,
                        const FeatureCorpus &val_features);

// NSDM model blobs: "NSDM", u32 version (1), u32 objective (0 binary,
// 1 multiple), u32 |T|, u32 d, then W (|T| x d, row-major), b, A as
// little-endian float64. Tag names are supplied by the caller on load.
inline constexpr std::uint32_t kModelFormatVersion = 1;

std::vector<std::uint8_t> serialize_model(const TaggerModel &model);
TaggerModel parse_model(std::span<const std::uint8_t> bytes,
                        std::vector<std::string> tags);
void save_model(const std::string &path, const TaggerModel &model);
TaggerModel load_model(const std::string &path, std::vector<std::string> tags);

}  // namespace nsd

#endif  // NSD_CRF_TAGGER_H_
