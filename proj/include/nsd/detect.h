#ifndef NSD_DETECT_H_
#define NSD_DETECT_H_

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nsd/benchmark.h"
#include "nsd/crf_tagger.h"
#include "nsd/features.h"

namespace nsd {

enum class DetectionMethod { kMsp, kGda };
enum class DetectorObjective { kBinary, kMultiple, kBinaryMultiple };
enum class DistanceStrategy { kMinimum, kDifference };
enum class DistanceMetric { kMahalanobis, kEuclidean };

const char *method_name(DetectionMethod method);
const char *detector_objective_name(DetectorObjective objective);
const char *strategy_name(DistanceStrategy strategy);
const char *metric_name(DistanceMetric metric);
DetectionMethod parse_method(const std::string &name);
DetectorObjective parse_detector_objective(const std::string &name);
DistanceStrategy parse_distance_strategy(const std::string &name);
DistanceMetric parse_metric(const std::string &name);

// ---------------------------------------------------------------------------
// MSP

// Maximum entry of a probability row.
double msp_score(std::span<const double> probabilities);

// Multiple condition: max multiple marginal < theta_multiple.
// Binary condition: both binary probabilities < theta_binary, i.e. the max
// is below it; a two-class row can only satisfy this when theta > 0.5.
struct MspThresholds {
  double binary = 0.0;
  double multiple = 0.0;
};

// One utterance; either marginal matrix may be null when the objective does
// not need it.
std::vector<bool> msp_detect(const Matrix *binary_marginals,
                             const Matrix *multiple_marginals,
                             DetectorObjective objective,
                             const MspThresholds &thresholds);

// ---------------------------------------------------------------------------
// GDA

struct GdaOptions {
  // Ridge added to the pooled covariance; default 1e-3 * trace / d.
  std::optional<double> lambda;
  DistanceMetric metric = DistanceMetric::kMahalanobis;
};

// Per-class means with one shared covariance. Mahalanobis distances are
// computed in whitened coordinates: z = L^-1 x with Sigma = L L^T.
class GdaModel {
 public:
  // `labels[i]` is the class index of `rows[i]` in `class_names`.
  static GdaModel fit(std::span<const FeatureRow> rows, std::span<const int> labels,
                      std::vector<std::string> class_names, std::size_t dim,
                      const GdaOptions &options = {});
  // Model from explicit parameters; `covariance` must be SPD.
  static GdaModel from_parameters(std::vector<std::string> class_names,
                                  const Eigen::MatrixXd &means,
                                  const Eigen::MatrixXd &covariance,
                                  DistanceMetric metric);

  const std::vector<std::string> &class_names() const { return class_names_; }
  std::size_t num_classes() const { return class_names_.size(); }
  std::size_t dim() const { return static_cast<std::size_t>(means_.cols()); }
  DistanceMetric metric() const { return metric_; }
  double lambda() const { return lambda_; }
  // Class means, one row per class.
  const Eigen::MatrixXd &means() const { return means_; }
  // Regularized covariance.
  const Eigen::MatrixXd &covariance() const { return covariance_; }
  Eigen::MatrixXd precision() const;
  const std::vector<std::size_t> &class_counts() const { return counts_; }

  // Distance from x to every class mean under the model's metric.
  std::vector<double> distances(const FeatureRow &x) const;
  std::vector<double> distances(std::span<const double> dense_x) const;

 private:
  void prepare();
  std::vector<double> transform(std::span<const std::uint32_t> indices,
                                std::span<const double> values) const;

  std::vector<std::string> class_names_;
  std::vector<std::size_t> counts_;
  Eigen::MatrixXd means_;
  Eigen::MatrixXd covariance_;
  double lambda_ = 0.0;
  DistanceMetric metric_ = DistanceMetric::kMahalanobis;
  Eigen::MatrixXd whitener_;          // L^-1, lower triangular
  std::vector<std::vector<double>> centers_;  // transformed class means
};

// Class index of every token under a fitting objective; -1 for NS tokens.
std::vector<int> gda_labels(const LabeledUtterance &utt, Objective objective,
                            const std::vector<std::string> &class_names);

GdaModel fit_gda(const Corpus &train, const FeatureCorpus &features,
                 Objective objective, const SlotSchema &in_domain_schema,
                 const GdaOptions &options = {});

struct GdaDecision {
  bool is_novel = false;
  double score = 0.0;  // min distance, or max minus min
  std::vector<double> distances;
};

// Score of a distance vector under a strategy.
double gda_score(std::span<const double> distances, DistanceStrategy strategy);
// minimum: novel iff min > theta; difference: novel iff max - min < theta.
bool gda_flags(double score, DistanceStrategy strategy, double theta);
GdaDecision gda_detect(const GdaModel &model, const FeatureRow &x,
                       DistanceStrategy strategy, double theta);

// ---------------------------------------------------------------------------
// Threshold calibration

// kLowIsNovel: a token is flagged when score < theta (MSP, difference).
// kHighIsNovel: flagged when score > theta (minimum distance).
enum class ScoreOrientation { kLowIsNovel, kHighIsNovel };

struct CalibrationPoint {
  double threshold = 0.0;
  double token_f1 = 0.0;
  double span_f1 = 0.0;
};

struct Calibration {
  double threshold = 0.0;
  double token_f1 = 0.0;  // NS token F1 on val at the chosen threshold
  std::size_t flagged = 0;
  std::vector<CalibrationPoint> curve;  // subsampled sweep
};

struct CalibrationOptions {
  // Tokens with eligible[i] == false are never flagged; empty means all.
  std::span<const bool> eligible;
  // Finite candidates at or below this value are skipped.
  double min_threshold = -std::numeric_limits<double>::infinity();
  // Utterance lengths, used for span F1 on the curve; optional.
  std::span<const std::size_t> utterance_lengths;
  std::size_t curve_points = 101;
};

// Picks theta maximizing NS token F1 over midpoints of consecutive distinct
// scores plus +/-infinity; ties go to the threshold flagging fewer tokens.
Calibration calibrate_threshold(std::span<const double> scores,
                                std::span<const bool> gold_novel,
                                ScoreOrientation orientation,
                                const CalibrationOptions &options = {});

// ---------------------------------------------------------------------------
// End-to-end detection

struct DetectorConfig {
  DetectionMethod method = DetectionMethod::kGda;
  DetectorObjective objective = DetectorObjective::kMultiple;
  DistanceStrategy distance = DistanceStrategy::kMinimum;
  // MSP uses thresholds.multiple / thresholds.binary; GDA uses `threshold`.
  MspThresholds msp;
  double threshold = 0.0;

  void validate() const;
  std::string name() const;
};

struct UtterancePrediction {
  std::vector<std::string> tokens;
  std::vector<std::string> ind_tags;
  std::vector<bool> ns_mask;
  std::vector<std::string> final_tags;
};

using PredictionSet = std::vector<UtterancePrediction>;

// final = NS where the mask is set, otherwise the in-domain tag.
std::vector<std::string> override_tags(const std::vector<std::string> &ind_tags,
                                       const std::vector<bool> &ns_mask);

// Models needed by a detector; members may be null when unused.
struct DetectorModels {
  const TaggerModel *multiple = nullptr;
  const TaggerModel *binary = nullptr;
  const GdaModel *gda = nullptr;
};

// Per-token detector scores for one split.
struct SplitScores {
  // MSP: binary and multiple max-marginals; GDA: strategy score.
  std::vector<std::vector<double>> primary;
  std::vector<std::vector<double>> binary;
};

SplitScores score_split(const DetectorModels &models, const DetectorConfig &cfg,
                        const FeatureCorpus &features);

// Sets the thresholds of `cfg` from val scores and gold NS labels.
struct CalibrationReport {
  std::vector<Calibration> stages;  // one per calibrated threshold sweep
  double token_f1 = 0.0;
};

CalibrationReport calibrate_detector(const DetectorModels &models,
                                     DetectorConfig *cfg, const Corpus &val,
                                     const FeatureCorpus &val_features);

PredictionSet run_detection(const DetectorModels &models, const DetectorConfig &cfg,
                            const Corpus &split, const FeatureCorpus &features);

}  // namespace nsd

#endif  // NSD_DETECT_H_
