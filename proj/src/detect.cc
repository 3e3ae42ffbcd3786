#include "nsd/detect.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "nsd/error.h"
#include "nsd/metrics.h"

namespace nsd {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Rows with at least this fraction of nonzeros are accumulated with dense
// rank updates instead of the sparse outer-product loop.
constexpr double kDenseFraction = 0.25;
constexpr std::size_t kDenseBatch = 256;

void check_aligned(const Corpus &corpus, const FeatureCorpus &features) {
  if (corpus.size() != features.size()) {
    throw AlignmentError(std::min(corpus.size(), features.size()),
                         "corpus and features differ in utterance count");
  }
  for (std::size_t u = 0; u < corpus.size(); ++u) {
    if (corpus[u].size() != features[u].rows()) {
      throw AlignmentError(u, "token count differs from feature rows");
    }
  }
}

// NS spans as maximal runs of set positions.
std::vector<std::pair<std::size_t, std::size_t>> runs(const std::vector<bool> &mask,
                                                      std::size_t begin,
                                                      std::size_t end) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::size_t i = begin;
  while (i < end) {
    if (!mask[i]) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < end && mask[j]) ++j;
    out.emplace_back(i, j);
    i = j;
  }
  return out;
}

double mask_span_f1(const std::vector<bool> &pred, const std::vector<bool> &gold,
                    std::span<const std::size_t> lengths) {
  Prf prf;
  std::size_t offset = 0;
  for (std::size_t len : lengths) {
    auto p = runs(pred, offset, offset + len);
    auto g = runs(gold, offset, offset + len);
    prf.predicted += p.size();
    prf.gold += g.size();
    for (const auto &span : p) {
      prf.true_positives += std::binary_search(g.begin(), g.end(), span);
    }
    offset += len;
  }
  return prf.f1();
}

}  // namespace

const char *method_name(DetectionMethod method) {
  return method == DetectionMethod::kMsp ? "msp" : "gda";
}

const char *detector_objective_name(DetectorObjective objective) {
  switch (objective) {
    case DetectorObjective::kBinary: return "binary";
    case DetectorObjective::kMultiple: return "multiple";
    case DetectorObjective::kBinaryMultiple: return "binary+multiple";
  }
  return "?";
}

const char *strategy_name(DistanceStrategy strategy) {
  return strategy == DistanceStrategy::kMinimum ? "minimum" : "difference";
}

const char *metric_name(DistanceMetric metric) {
  return metric == DistanceMetric::kMahalanobis ? "mahalanobis" : "euclidean";
}

DetectionMethod parse_method(const std::string &name) {
  const auto lower = to_lower(name);
  if (lower == "msp") return DetectionMethod::kMsp;
  if (lower == "gda") return DetectionMethod::kGda;
  throw ConfigError("unknown detection method '" + name + "'");
}

DetectorObjective parse_detector_objective(const std::string &name) {
  if (name == "binary") return DetectorObjective::kBinary;
  if (name == "multiple") return DetectorObjective::kMultiple;
  if (name == "binary+multiple") return DetectorObjective::kBinaryMultiple;
  throw ConfigError("unknown detector objective '" + name + "'");
}

DistanceStrategy parse_distance_strategy(const std::string &name) {
  if (name == "minimum") return DistanceStrategy::kMinimum;
  if (name == "difference") return DistanceStrategy::kDifference;
  throw ConfigError("unknown distance strategy '" + name + "'");
}

DistanceMetric parse_metric(const std::string &name) {
  if (name == "mahalanobis") return DistanceMetric::kMahalanobis;
  if (name == "euclidean") return DistanceMetric::kEuclidean;
  throw ConfigError("unknown distance metric '" + name + "'");
}

double msp_score(std::span<const double> probabilities) {
  double best = 0.0;
  for (double p : probabilities) best = std::max(best, p);
  return best;
}

std::vector<bool> msp_detect(const Matrix *binary_marginals,
                             const Matrix *multiple_marginals,
                             DetectorObjective objective,
                             const MspThresholds &thresholds) {
  const bool use_binary = objective != DetectorObjective::kMultiple;
  const bool use_multiple = objective != DetectorObjective::kBinary;
  if (use_binary && binary_marginals == nullptr) {
    throw MissingMarginals("binary marginals required by the MSP objective");
  }
  if (use_multiple && multiple_marginals == nullptr) {
    throw MissingMarginals("multiple marginals required by the MSP objective");
  }
  if (use_binary && use_multiple && binary_marginals->rows != multiple_marginals->rows) {
    throw DimensionMismatch("binary and multiple marginals differ in length");
  }
  const std::size_t n = use_binary ? binary_marginals->rows : multiple_marginals->rows;
  std::vector<bool> mask(n, true);
  for (std::size_t i = 0; i < n; ++i) {
    if (use_binary) {
      // Both probabilities below theta <=> their max is below theta.
      mask[i] = mask[i] && msp_score(binary_marginals->row(i)) < thresholds.binary;
    }
    if (use_multiple) {
      mask[i] = mask[i] && msp_score(multiple_marginals->row(i)) < thresholds.multiple;
    }
  }
  return mask;
}

namespace {

// Inverse of a lower-triangular block, written into `out` (same shape).
// Recursive 2x2 blocking keeps the work in triangular matrix products:
// [A 0; B C]^-1 = [A^-1 0; -C^-1 B A^-1  C^-1].
void invert_lower(const Eigen::Ref<const Eigen::MatrixXd> &l, Eigen::Ref<Eigen::MatrixXd> out) {
  const Eigen::Index n = l.rows();
  if (n <= 64) {
    out.setIdentity();
    l.triangularView<Eigen::Lower>().solveInPlace(out);
    return;
  }
  const Eigen::Index h = n / 2;
  const Eigen::Index r = n - h;
  invert_lower(l.topLeftCorner(h, h), out.topLeftCorner(h, h));
  invert_lower(l.bottomRightCorner(r, r), out.bottomRightCorner(r, r));
  out.topRightCorner(h, r).setZero();
  Eigen::MatrixXd tmp = l.bottomLeftCorner(r, h) *
                        out.topLeftCorner(h, h).triangularView<Eigen::Lower>();
  out.bottomLeftCorner(r, h).noalias() =
      -(out.bottomRightCorner(r, r).triangularView<Eigen::Lower>() * tmp);
}

}  // namespace

GdaModel GdaModel::fit(std::span<const FeatureRow> rows, std::span<const int> labels,
                       std::vector<std::string> class_names, std::size_t dim,
                       const GdaOptions &options) {
  if (rows.size() != labels.size()) {
    throw DimensionMismatch("GDA: rows and labels differ in length");
  }
  const std::size_t C = class_names.size();
  const auto d = static_cast<Eigen::Index>(dim);
  GdaModel model;
  model.class_names_ = std::move(class_names);
  model.metric_ = options.metric;
  model.counts_.assign(C, 0);

  Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(C), d);
  Eigen::MatrixXd scatter = Eigen::MatrixXd::Zero(d, d);
  std::size_t nnz_total = 0;
  for (const auto &row : rows) nnz_total += row.nnz();
  const bool dense = !rows.empty() &&
                     static_cast<double>(nnz_total) / rows.size() >=
                         kDenseFraction * static_cast<double>(dim);

  Eigen::MatrixXd batch;
  Eigen::Index filled = 0;
  if (dense) batch = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(kDenseBatch), d);
  auto flush = [&] {
    if (filled == 0) return;
    scatter.selfadjointView<Eigen::Lower>().rankUpdate(
        batch.topRows(filled).transpose());
    batch.topRows(filled).setZero();
    filled = 0;
  };

  for (std::size_t i = 0; i < rows.size(); ++i) {
    const int c = labels[i];
    if (c < 0 || static_cast<std::size_t>(c) >= C) {
      throw DimensionMismatch("GDA: label out of range");
    }
    model.counts_[c] += 1;
    const FeatureRow &x = rows[i];
    for (std::size_t a = 0; a < x.nnz(); ++a) {
      if (x.indices[a] >= dim) throw DimensionMismatch("GDA: feature index out of range");
      sums(c, x.indices[a]) += x.values[a];
    }
    if (dense) {
      for (std::size_t a = 0; a < x.nnz(); ++a) batch(filled, x.indices[a]) = x.values[a];
      if (++filled == static_cast<Eigen::Index>(kDenseBatch)) flush();
    } else {
      for (std::size_t a = 0; a < x.nnz(); ++a) {
        for (std::size_t b = 0; b <= a; ++b) {
          scatter(x.indices[a], x.indices[b]) += x.values[a] * x.values[b];
        }
      }
    }
  }
  if (dense) flush();
  for (std::size_t c = 0; c < C; ++c) {
    if (model.counts_[c] == 0) throw EmptyClass(model.class_names_[c]);
  }
  scatter.triangularView<Eigen::StrictlyUpper>() = scatter.transpose();

  Eigen::VectorXd counts(static_cast<Eigen::Index>(C));
  for (std::size_t c = 0; c < C; ++c) counts(c) = static_cast<double>(model.counts_[c]);
  model.means_ = counts.cwiseInverse().asDiagonal() * sums;
  const double n = static_cast<double>(rows.size());
  model.covariance_ =
      (scatter - model.means_.transpose() * counts.asDiagonal() * model.means_) / n;
  // Exact symmetry for the factorization.
  model.covariance_ = 0.5 * (model.covariance_ + model.covariance_.transpose()).eval();

  double lambda = 0.0;
  if (options.lambda) {
    lambda = *options.lambda;
    if (!(lambda > 0.0)) throw ConfigError("GDA regularization must be positive");
  } else {
    lambda = 1e-3 * model.covariance_.trace() / static_cast<double>(dim);
    if (!(lambda > 0.0)) lambda = 1e-3;
  }
  model.lambda_ = lambda;
  model.covariance_.diagonal().array() += lambda;
  model.prepare();
  return model;
}

GdaModel GdaModel::from_parameters(std::vector<std::string> class_names,
                                   const Eigen::MatrixXd &means,
                                   const Eigen::MatrixXd &covariance,
                                   DistanceMetric metric) {
  if (static_cast<std::size_t>(means.rows()) != class_names.size() ||
      covariance.rows() != means.cols() || covariance.cols() != means.cols()) {
    throw DimensionMismatch("GDA: inconsistent parameter shapes");
  }
  GdaModel model;
  model.class_names_ = std::move(class_names);
  model.counts_.assign(model.class_names_.size(), 0);
  model.means_ = means;
  model.covariance_ = covariance;
  model.metric_ = metric;
  model.prepare();
  return model;
}

void GdaModel::prepare() {
  const Eigen::Index d = means_.cols();
  if (metric_ == DistanceMetric::kMahalanobis) {
    Eigen::LLT<Eigen::MatrixXd> llt(covariance_);
    if (llt.info() != Eigen::Success) throw SingularCovariance();
    const Eigen::MatrixXd lower = llt.matrixL();
    for (Eigen::Index k = 0; k < d; ++k) {
      if (!(lower(k, k) > 0.0) || !std::isfinite(lower(k, k))) {
        throw SingularCovariance();
      }
    }
    whitener_.resize(d, d);
    invert_lower(lower, whitener_);
    if (!whitener_.allFinite()) throw SingularCovariance();
  } else {
    whitener_.resize(0, 0);
  }
  centers_.clear();
  std::vector<std::uint32_t> indices;
  std::vector<double> values;
  for (Eigen::Index c = 0; c < means_.rows(); ++c) {
    indices.clear();
    values.clear();
    for (Eigen::Index k = 0; k < d; ++k) {
      if (means_(c, k) != 0.0) {
        indices.push_back(static_cast<std::uint32_t>(k));
        values.push_back(means_(c, k));
      }
    }
    centers_.push_back(transform(indices, values));
  }
}

Eigen::MatrixXd GdaModel::precision() const {
  if (metric_ == DistanceMetric::kEuclidean) {
    return Eigen::MatrixXd::Identity(means_.cols(), means_.cols());
  }
  return whitener_.transpose() * whitener_;
}

std::vector<double> GdaModel::transform(std::span<const std::uint32_t> indices,
                                        std::span<const double> values) const {
  const std::size_t d = dim();
  std::vector<double> z(d, 0.0);
  if (metric_ == DistanceMetric::kEuclidean) {
    for (std::size_t a = 0; a < indices.size(); ++a) z[indices[a]] = values[a];
    return z;
  }
  for (std::size_t a = 0; a < indices.size(); ++a) {
    const std::size_t j = indices[a];
    const double v = values[a];
    const double *column = whitener_.data() + j * d;
    for (std::size_t r = j; r < d; ++r) z[r] += v * column[r];
  }
  return z;
}

std::vector<double> GdaModel::distances(const FeatureRow &x) const {
  for (auto idx : x.indices) {
    if (idx >= dim()) throw DimensionMismatch("GDA: feature index out of range");
  }
  const auto z = transform(x.indices, x.values);
  std::vector<double> out(centers_.size());
  for (std::size_t c = 0; c < centers_.size(); ++c) {
    const auto &m = centers_[c];
    double s = 0.0;
    for (std::size_t k = 0; k < z.size(); ++k) {
      const double diff = z[k] - m[k];
      s += diff * diff;
    }
    out[c] = std::sqrt(s);
  }
  return out;
}

std::vector<double> GdaModel::distances(std::span<const double> dense_x) const {
  if (dense_x.size() != dim()) throw DimensionMismatch("GDA: wrong vector dimension");
  std::vector<std::uint32_t> indices;
  std::vector<double> values;
  for (std::size_t k = 0; k < dense_x.size(); ++k) {
    if (dense_x[k] != 0.0) {
      indices.push_back(static_cast<std::uint32_t>(k));
      values.push_back(dense_x[k]);
    }
  }
  return distances(FeatureRow{indices, values});
}

std::vector<int> gda_labels(const LabeledUtterance &utt, Objective objective,
                            const std::vector<std::string> &class_names) {
  std::vector<int> out;
  out.reserve(utt.size());
  for (const auto &tag : utt.tags) {
    if (tag == kNovelTag) {
      out.push_back(-1);
    } else if (objective == Objective::kBinary) {
      out.push_back(tag == kOutsideTag ? 0 : 1);
    } else {
      auto it = std::find(class_names.begin(), class_names.end(), tag);
      if (it == class_names.end()) throw IllegalTag(0, tag);
      out.push_back(static_cast<int>(it - class_names.begin()));
    }
  }
  return out;
}

GdaModel fit_gda(const Corpus &train, const FeatureCorpus &features,
                 Objective objective, const SlotSchema &in_domain_schema,
                 const GdaOptions &options) {
  check_aligned(train, features);
  if (train.empty()) throw ConfigError("GDA: empty training corpus");
  const auto all_classes = objective_tags(objective, in_domain_schema);
  std::vector<std::size_t> support(all_classes.size(), 0);
  std::vector<std::vector<int>> labels;
  for (const auto &utt : train) {
    labels.push_back(gda_labels(utt, objective, all_classes));
    for (int c : labels.back()) {
      if (c >= 0) support[c] += 1;
    }
  }
  // Tags that never occur in train (e.g. I- of single-token types) carry no
  // cluster; they are left out rather than failing the fit.
  std::vector<int> remap(all_classes.size(), -1);
  std::vector<std::string> classes;
  for (std::size_t c = 0; c < all_classes.size(); ++c) {
    if (support[c] > 0) {
      remap[c] = static_cast<int>(classes.size());
      classes.push_back(all_classes[c]);
    }
  }
  std::vector<FeatureRow> rows;
  std::vector<int> row_labels;
  for (std::size_t u = 0; u < train.size(); ++u) {
    for (std::size_t i = 0; i < train[u].size(); ++i) {
      const int c = labels[u][i];
      if (c < 0) continue;
      rows.push_back(features[u].row(i));
      row_labels.push_back(remap[c]);
    }
  }
  return GdaModel::fit(rows, row_labels, std::move(classes),
                       features.front().dim(), options);
}

double gda_score(std::span<const double> distances, DistanceStrategy strategy) {
  if (distances.empty()) return 0.0;
  const auto [lo, hi] = std::minmax_element(distances.begin(), distances.end());
  return strategy == DistanceStrategy::kMinimum ? *lo : *hi - *lo;
}

bool gda_flags(double score, DistanceStrategy strategy, double theta) {
  return strategy == DistanceStrategy::kMinimum ? score > theta : score < theta;
}

GdaDecision gda_detect(const GdaModel &model, const FeatureRow &x,
                       DistanceStrategy strategy, double theta) {
  GdaDecision decision;
  decision.distances = model.distances(x);
  decision.score = gda_score(decision.distances, strategy);
  decision.is_novel = gda_flags(decision.score, strategy, theta);
  return decision;
}

Calibration calibrate_threshold(std::span<const double> scores,
                                std::span<const bool> gold_novel,
                                ScoreOrientation orientation,
                                const CalibrationOptions &options) {
  const std::size_t n = scores.size();
  if (gold_novel.size() != n) throw DimensionMismatch("calibration: length mismatch");
  const auto &eligible = options.eligible;
  if (!eligible.empty() && eligible.size() != n) {
    throw DimensionMismatch("calibration: eligibility mask length mismatch");
  }
  std::size_t gold_total = 0;
  for (bool g : gold_novel) gold_total += g;
  if (gold_total == 0 || gold_total == n) throw NoNovelInVal();

  // Eligible tokens in flagging order: the first k are flagged by the k-th
  // candidate threshold.
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < n; ++i) {
    if (eligible.empty() || eligible[i]) order.push_back(i);
  }
  const bool low = orientation == ScoreOrientation::kLowIsNovel;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return low ? scores[a] < scores[b] : scores[a] > scores[b];
  });

  struct Candidate {
    double threshold;
    std::size_t flagged;
    std::size_t true_positives;
  };
  std::vector<Candidate> candidates;
  candidates.push_back({low ? -kInf : kInf, 0, 0});
  std::size_t tp = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    tp += gold_novel[order[k]];
    const bool last = k + 1 == order.size();
    if (!last && scores[order[k]] == scores[order[k + 1]]) continue;
    const double threshold =
        last ? (low ? kInf : -kInf)
             : 0.5 * (scores[order[k]] + scores[order[k + 1]]);
    if (!last && threshold <= options.min_threshold) continue;
    candidates.push_back({threshold, k + 1, tp});
  }

  // F1 = 2 TP / (flagged + gold); compared exactly on integers.
  auto better = [&](const Candidate &a, const Candidate &b) {
    const unsigned __int128 lhs =
        static_cast<unsigned __int128>(a.true_positives) * (b.flagged + gold_total);
    const unsigned __int128 rhs =
        static_cast<unsigned __int128>(b.true_positives) * (a.flagged + gold_total);
    if (lhs != rhs) return lhs > rhs;
    return a.flagged < b.flagged;
  };
  const Candidate *best = &candidates.front();
  for (const auto &c : candidates) {
    if (better(c, *best)) best = &c;
  }

  Calibration out;
  out.threshold = best->threshold;
  out.flagged = best->flagged;
  out.token_f1 = 200.0 * static_cast<double>(best->true_positives) /
                 static_cast<double>(best->flagged + gold_total);

  if (options.curve_points > 0) {
    std::vector<std::size_t> picks;
    const std::size_t m = candidates.size();
    const std::size_t points = std::min(options.curve_points, m);
    for (std::size_t j = 0; j < points; ++j) {
      picks.push_back(points == 1 ? 0 : j * (m - 1) / (points - 1));
    }
    picks.push_back(static_cast<std::size_t>(best - candidates.data()));
    std::sort(picks.begin(), picks.end());
    picks.erase(std::unique(picks.begin(), picks.end()), picks.end());
    std::vector<bool> gold_mask(gold_novel.begin(), gold_novel.end());
    for (std::size_t j : picks) {
      const auto &c = candidates[j];
      CalibrationPoint point;
      point.threshold = c.threshold;
      point.token_f1 = 200.0 * static_cast<double>(c.true_positives) /
                       static_cast<double>(c.flagged + gold_total);
      if (!options.utterance_lengths.empty()) {
        std::vector<bool> flagged(n, false);
        for (std::size_t k = 0; k < c.flagged; ++k) flagged[order[k]] = true;
        point.span_f1 = mask_span_f1(flagged, gold_mask, options.utterance_lengths);
      }
      out.curve.push_back(point);
    }
  }
  return out;
}

void DetectorConfig::validate() const {
  if (method == DetectionMethod::kGda &&
      objective == DetectorObjective::kBinaryMultiple) {
    throw ConfigError("GDA does not combine binary and multiple objectives");
  }
}

std::string DetectorConfig::name() const {
  std::string s = std::string(method_name(method)) + "+" +
                  detector_objective_name(objective);
  if (method == DetectionMethod::kGda) s += std::string("+") + strategy_name(distance);
  return s;
}

std::vector<std::string> override_tags(const std::vector<std::string> &ind_tags,
                                       const std::vector<bool> &ns_mask) {
  if (ind_tags.size() != ns_mask.size()) {
    throw DimensionMismatch("NS mask and tags differ in length");
  }
  std::vector<std::string> out(ind_tags.size());
  for (std::size_t i = 0; i < ind_tags.size(); ++i) {
    out[i] = ns_mask[i] ? std::string(kNovelTag) : ind_tags[i];
  }
  return out;
}

namespace {

void check_models(const DetectorModels &models, const DetectorConfig &cfg) {
  cfg.validate();
  if (cfg.method == DetectionMethod::kGda) {
    if (models.gda == nullptr) throw ConfigError("GDA detector needs a fitted GDA model");
    return;
  }
  if (cfg.objective != DetectorObjective::kMultiple && models.binary == nullptr) {
    throw MissingMarginals("MSP objective needs the binary tagger");
  }
  if (cfg.objective != DetectorObjective::kBinary && models.multiple == nullptr) {
    throw MissingMarginals("MSP objective needs the multiple tagger");
  }
}

}  // namespace

SplitScores score_split(const DetectorModels &models, const DetectorConfig &cfg,
                        const FeatureCorpus &features) {
  check_models(models, cfg);
  SplitScores out;
  for (const auto &m : features) {
    std::vector<double> primary;
    std::vector<double> binary;
    if (cfg.method == DetectionMethod::kGda) {
      for (std::size_t i = 0; i < m.rows(); ++i) {
        primary.push_back(gda_score(models.gda->distances(m.row(i)), cfg.distance));
      }
    } else {
      if (cfg.objective != DetectorObjective::kBinary) {
        const Matrix p = posterior_marginals(*models.multiple, m);
        for (std::size_t i = 0; i < p.rows; ++i) primary.push_back(msp_score(p.row(i)));
      }
      if (cfg.objective != DetectorObjective::kMultiple) {
        const Matrix p = posterior_marginals(*models.binary, m);
        for (std::size_t i = 0; i < p.rows; ++i) binary.push_back(msp_score(p.row(i)));
      }
    }
    out.primary.push_back(std::move(primary));
    out.binary.push_back(std::move(binary));
  }
  return out;
}

CalibrationReport calibrate_detector(const DetectorModels &models,
                                     DetectorConfig *cfg, const Corpus &val,
                                     const FeatureCorpus &val_features) {
  check_aligned(val, val_features);
  const SplitScores scores = score_split(models, *cfg, val_features);
  std::vector<double> primary;
  std::vector<double> binary;
  std::vector<bool> gold;
  std::vector<std::size_t> lengths;
  for (std::size_t u = 0; u < val.size(); ++u) {
    primary.insert(primary.end(), scores.primary[u].begin(), scores.primary[u].end());
    binary.insert(binary.end(), scores.binary[u].begin(), scores.binary[u].end());
    for (const auto &tag : val[u].tags) gold.push_back(tag == kNovelTag);
    lengths.push_back(val[u].size());
  }
  const std::vector<char> gold_bytes(gold.begin(), gold.end());
  std::span<const bool> gold_span(reinterpret_cast<const bool *>(gold_bytes.data()),
                                  gold_bytes.size());

  CalibrationReport report;
  CalibrationOptions options;
  options.utterance_lengths = lengths;

  if (cfg->method == DetectionMethod::kGda) {
    const auto orientation = cfg->distance == DistanceStrategy::kMinimum
                                 ? ScoreOrientation::kHighIsNovel
                                 : ScoreOrientation::kLowIsNovel;
    auto c = calibrate_threshold(primary, gold_span, orientation, options);
    cfg->threshold = c.threshold;
    report.token_f1 = c.token_f1;
    report.stages.push_back(std::move(c));
    return report;
  }

  if (cfg->objective == DetectorObjective::kMultiple) {
    auto c = calibrate_threshold(primary, gold_span, ScoreOrientation::kLowIsNovel,
                                 options);
    cfg->msp.multiple = c.threshold;
    report.token_f1 = c.token_f1;
    report.stages.push_back(std::move(c));
    return report;
  }
  CalibrationOptions binary_options = options;
  binary_options.min_threshold = 0.5;
  if (cfg->objective == DetectorObjective::kBinary) {
    auto c = calibrate_threshold(binary, gold_span, ScoreOrientation::kLowIsNovel,
                                 binary_options);
    cfg->msp.binary = c.threshold;
    report.token_f1 = c.token_f1;
    report.stages.push_back(std::move(c));
    return report;
  }

  // Coordinate sweep: multiple with the binary condition open, then each
  // threshold against the other, two passes.
  cfg->msp.binary = kInf;
  std::vector<char> eligible(primary.size());
  for (int pass = 0; pass < 2; ++pass) {
    for (std::size_t i = 0; i < eligible.size(); ++i) {
      eligible[i] = binary[i] < cfg->msp.binary;
    }
    options.eligible = std::span<const bool>(
        reinterpret_cast<const bool *>(eligible.data()), eligible.size());
    auto cm = calibrate_threshold(primary, gold_span, ScoreOrientation::kLowIsNovel,
                                  options);
    cfg->msp.multiple = cm.threshold;
    report.stages.push_back(std::move(cm));

    for (std::size_t i = 0; i < eligible.size(); ++i) {
      eligible[i] = primary[i] < cfg->msp.multiple;
    }
    binary_options.eligible = std::span<const bool>(
        reinterpret_cast<const bool *>(eligible.data()), eligible.size());
    auto cb = calibrate_threshold(binary, gold_span, ScoreOrientation::kLowIsNovel,
                                  binary_options);
    cfg->msp.binary = cb.threshold;
    report.token_f1 = cb.token_f1;
    report.stages.push_back(std::move(cb));
  }
  return report;
}

PredictionSet run_detection(const DetectorModels &models, const DetectorConfig &cfg,
                            const Corpus &split, const FeatureCorpus &features) {
  check_aligned(split, features);
  check_models(models, cfg);
  if (models.multiple == nullptr) {
    throw ConfigError("in-domain predictions need the multiple tagger");
  }
  PredictionSet out;
  out.reserve(split.size());
  for (std::size_t u = 0; u < split.size(); ++u) {
    const auto &m = features[u];
    UtterancePrediction pred;
    pred.tokens = split[u].tokens;
    pred.ind_tags = decode_tags(*models.multiple, m);
    if (cfg.method == DetectionMethod::kGda) {
      for (std::size_t i = 0; i < m.rows(); ++i) {
        pred.ns_mask.push_back(
            gda_detect(*models.gda, m.row(i), cfg.distance, cfg.threshold).is_novel);
      }
    } else {
      Matrix binary;
      Matrix multiple;
      if (cfg.objective != DetectorObjective::kMultiple) {
        binary = posterior_marginals(*models.binary, m);
      }
      if (cfg.objective != DetectorObjective::kBinary) {
        multiple = posterior_marginals(*models.multiple, m);
      }
      pred.ns_mask = msp_detect(&binary, &multiple, cfg.objective, cfg.msp);
    }
    pred.final_tags = override_tags(pred.ind_tags, pred.ns_mask);
    out.push_back(std::move(pred));
  }
  return out;
}

}  // namespace nsd
