#include "nsd/crf_tagger.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <set>

#include "nsd/error.h"
#include "nsd/metrics.h"
#include "nsd/rng.h"

namespace nsd {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Max-shifted log-sum-exp.
double log_sum_exp(std::span<const double> xs) {
  double m = kNegInf;
  for (double x : xs) m = std::max(m, x);
  if (m == kNegInf) return kNegInf;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

void check_features(const TaggerModel &model, const TokenFeatureMatrix &features) {
  if (features.dim() != model.dim()) {
    throw DimensionMismatch("features have dimension " +
                            std::to_string(features.dim()) + ", model expects " +
                            std::to_string(model.dim()));
  }
}

void check_gold(const TaggerModel &model, std::size_t n, std::span<const int> gold) {
  if (gold.size() != n) {
    throw DimensionMismatch("gold path has " + std::to_string(gold.size()) +
                            " tags for " + std::to_string(n) + " tokens");
  }
  for (int g : gold) {
    if (g < 0 || static_cast<std::size_t>(g) >= model.num_tags()) {
      throw DimensionMismatch("gold tag index out of range");
    }
  }
}

void check_aligned(const Corpus &corpus, const FeatureCorpus &features) {
  if (corpus.size() != features.size()) {
    throw AlignmentError(std::min(corpus.size(), features.size()),
                         "corpus has " + std::to_string(corpus.size()) +
                             " utterances, features " +
                             std::to_string(features.size()));
  }
  for (std::size_t u = 0; u < corpus.size(); ++u) {
    if (corpus[u].size() != features[u].rows()) {
      throw AlignmentError(u, "token count differs from feature rows");
    }
  }
}

void put_u32(std::vector<std::uint8_t> *out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out->push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t> *out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out->push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

std::uint64_t get_le(std::span<const std::uint8_t> bytes, std::size_t *pos, int width) {
  if (*pos + width > bytes.size()) throw FormatError("NSDM: truncated file");
  std::uint64_t v = 0;
  for (int i = 0; i < width; ++i) {
    v |= static_cast<std::uint64_t>(bytes[*pos + i]) << (8 * i);
  }
  *pos += width;
  return v;
}

}  // namespace

const char *objective_name(Objective objective) {
  return objective == Objective::kBinary ? "binary" : "multiple";
}

Objective parse_objective(const std::string &name) {
  if (name == "binary") return Objective::kBinary;
  if (name == "multiple") return Objective::kMultiple;
  throw ConfigError("unknown objective '" + name + "'");
}

std::vector<std::string> objective_tags(Objective objective,
                                        const SlotSchema &schema) {
  if (objective == Objective::kBinary) {
    return {std::string(kOutsideTag), std::string(kEntityTag)};
  }
  return schema.tag_vocab();
}

int map_gold_tag(Objective objective, const std::vector<std::string> &tags,
                 std::string_view tag) {
  if (tag == kNovelTag) return -1;
  if (objective == Objective::kBinary) {
    return tag == kOutsideTag ? 0 : 1;
  }
  auto it = std::find(tags.begin(), tags.end(), tag);
  if (it == tags.end()) throw IllegalTag(0, std::string(tag));
  return static_cast<int>(it - tags.begin());
}

TaggerModel::TaggerModel(Objective objective, std::vector<std::string> tags,
                         std::size_t dim)
    : objective_(objective), tags_(std::move(tags)), dim_(dim) {
  if (tags_.size() < 2) throw ConfigError("a tagger needs at least two tags");
  params_.assign(dim_ * tags_.size() + tags_.size() + tags_.size() * tags_.size(),
                 0.0);
}

int TaggerModel::tag_index(std::string_view tag) const {
  auto it = std::find(tags_.begin(), tags_.end(), tag);
  return it == tags_.end() ? -1 : static_cast<int>(it - tags_.begin());
}

Matrix emissions(const TaggerModel &model, const TokenFeatureMatrix &features) {
  check_features(model, features);
  const std::size_t n = features.rows();
  const std::size_t T = model.num_tags();
  const auto &p = model.parameters();
  Matrix e(n, T);
  for (std::size_t i = 0; i < n; ++i) {
    double *out = &e.data[i * T];
    for (std::size_t t = 0; t < T; ++t) out[t] = model.bias(t);
    const FeatureRow row = features.row(i);
    for (std::size_t k = 0; k < row.nnz(); ++k) {
      const double v = row.values[k];
      const double *w = &p[row.indices[k] * T];
      for (std::size_t t = 0; t < T; ++t) out[t] += v * w[t];
    }
  }
  return e;
}

double path_score(const TaggerModel &model, const Matrix &e,
                  std::span<const int> path) {
  double s = 0.0;
  for (std::size_t i = 0; i < path.size(); ++i) {
    s += e(i, path[i]);
    if (i > 0) s += model.transition(path[i - 1], path[i]);
  }
  return s;
}

ForwardBackward forward_backward(const TaggerModel &model, const Matrix &e) {
  const std::size_t n = e.rows;
  const std::size_t T = model.num_tags();
  ForwardBackward fb{Matrix(n, T), Matrix(n, T), 0.0};
  if (n == 0) return fb;
  std::vector<double> scratch(T);
  for (std::size_t t = 0; t < T; ++t) fb.alpha(0, t) = e(0, t);
  for (std::size_t i = 1; i < n; ++i) {
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t s = 0; s < T; ++s) {
        scratch[s] = fb.alpha(i - 1, s) + model.transition(s, t);
      }
      fb.alpha(i, t) = e(i, t) + log_sum_exp(scratch);
    }
  }
  for (std::size_t t = 0; t < T; ++t) fb.beta(n - 1, t) = 0.0;
  for (std::size_t i = n - 1; i-- > 0;) {
    for (std::size_t s = 0; s < T; ++s) {
      for (std::size_t t = 0; t < T; ++t) {
        scratch[t] = model.transition(s, t) + e(i + 1, t) + fb.beta(i + 1, t);
      }
      fb.beta(i, s) = log_sum_exp(scratch);
    }
  }
  fb.log_partition = log_sum_exp(fb.alpha.row(n - 1));
  return fb;
}

double log_partition(const TaggerModel &model, const TokenFeatureMatrix &features) {
  return forward_backward(model, emissions(model, features)).log_partition;
}

double accumulate_log_likelihood_gradient(const TaggerModel &model,
                                          const TokenFeatureMatrix &features,
                                          std::span<const int> gold, double scale,
                                          std::vector<double> *gradient) {
  const Matrix e = emissions(model, features);
  const std::size_t n = e.rows;
  const std::size_t T = model.num_tags();
  check_gold(model, n, gold);
  if (gradient->size() != model.parameters().size()) {
    throw DimensionMismatch("gradient buffer has the wrong size");
  }
  if (n == 0) return 0.0;
  const ForwardBackward fb = forward_backward(model, e);
  const double log_z = fb.log_partition;
  auto &g = *gradient;

  std::vector<double> residual(T);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t t = 0; t < T; ++t) {
      residual[t] = -std::exp(fb.alpha(i, t) + fb.beta(i, t) - log_z);
    }
    residual[gold[i]] += 1.0;
    for (std::size_t t = 0; t < T; ++t) residual[t] *= scale;
    const FeatureRow row = features.row(i);
    for (std::size_t k = 0; k < row.nnz(); ++k) {
      const double v = row.values[k];
      double *w = &g[row.indices[k] * T];
      for (std::size_t t = 0; t < T; ++t) w[t] += v * residual[t];
    }
    double *b = &g[model.bias_offset()];
    for (std::size_t t = 0; t < T; ++t) b[t] += residual[t];
  }

  double *a = &g[model.transition_offset()];
  for (std::size_t i = 1; i < n; ++i) {
    for (std::size_t s = 0; s < T; ++s) {
      for (std::size_t t = 0; t < T; ++t) {
        const double xi = std::exp(fb.alpha(i - 1, s) + model.transition(s, t) +
                                   e(i, t) + fb.beta(i, t) - log_z);
        a[s * T + t] -= scale * xi;
      }
    }
    a[gold[i - 1] * T + gold[i]] += scale;
  }
  return path_score(model, e, gold) - log_z;
}

LikelihoodAndGradient log_likelihood_and_grad(const TaggerModel &model,
                                              const TokenFeatureMatrix &features,
                                              std::span<const int> gold) {
  LikelihoodAndGradient out;
  out.gradient.assign(model.parameters().size(), 0.0);
  out.log_likelihood =
      accumulate_log_likelihood_gradient(model, features, gold, 1.0, &out.gradient);
  return out;
}

std::vector<int> viterbi_decode(const TaggerModel &model,
                                const TokenFeatureMatrix &features) {
  const Matrix e = emissions(model, features);
  const std::size_t n = e.rows;
  const std::size_t T = model.num_tags();
  if (n == 0) return {};
  Matrix delta(n, T);
  std::vector<int> back(n * T, 0);
  for (std::size_t t = 0; t < T; ++t) delta(0, t) = e(0, t);
  for (std::size_t i = 1; i < n; ++i) {
    for (std::size_t t = 0; t < T; ++t) {
      double best = kNegInf;
      int arg = 0;
      for (std::size_t s = 0; s < T; ++s) {
        const double v = delta(i - 1, s) + model.transition(s, t);
        if (v > best) {
          best = v;
          arg = static_cast<int>(s);
        }
      }
      delta(i, t) = e(i, t) + best;
      back[i * T + t] = arg;
    }
  }
  std::vector<int> path(n);
  double best = kNegInf;
  for (std::size_t t = 0; t < T; ++t) {
    if (delta(n - 1, t) > best) {
      best = delta(n - 1, t);
      path[n - 1] = static_cast<int>(t);
    }
  }
  for (std::size_t i = n - 1; i > 0; --i) path[i - 1] = back[i * T + path[i]];
  return path;
}

std::vector<std::string> decode_tags(const TaggerModel &model,
                                     const TokenFeatureMatrix &features) {
  std::vector<std::string> out;
  for (int t : viterbi_decode(model, features)) out.push_back(model.tags()[t]);
  return out;
}

Matrix posterior_marginals(const TaggerModel &model,
                           const TokenFeatureMatrix &features) {
  const Matrix e = emissions(model, features);
  const ForwardBackward fb = forward_backward(model, e);
  Matrix p(e.rows, e.cols);
  for (std::size_t i = 0; i < e.rows; ++i) {
    for (std::size_t t = 0; t < e.cols; ++t) {
      p(i, t) = std::exp(fb.alpha(i, t) + fb.beta(i, t) - fb.log_partition);
    }
  }
  return p;
}

void TrainConfig::validate() const {
  if (learning_rate < 0.0) throw ConfigError("learning rate must be non-negative");
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (max_epochs == 0) throw ConfigError("max epochs must be positive");
  if (patience == 0) throw ConfigError("patience must be at least 1");
  if (l2 < 0.0) throw ConfigError("L2 strength must be non-negative");
}

double validation_score(const TaggerModel &model, const Corpus &val,
                        const FeatureCorpus &val_features) {
  check_aligned(val, val_features);
  if (model.objective() == Objective::kBinary) {
    Prf prf;
    for (std::size_t u = 0; u < val.size(); ++u) {
      const auto path = viterbi_decode(model, val_features[u]);
      for (std::size_t i = 0; i < path.size(); ++i) {
        const auto &gold = val[u].tags[i];
        if (gold == kNovelTag) continue;
        const bool p = path[i] == 1;
        const bool g = gold != kOutsideTag;
        prf.predicted += p;
        prf.gold += g;
        prf.true_positives += p && g;
      }
    }
    return prf.f1();
  }
  Prf prf;
  for (std::size_t u = 0; u < val.size(); ++u) {
    const auto pred = decode_tags(model, val_features[u]);
    const auto &gold = val[u].tags;
    std::vector<bool> novel(gold.size());
    for (std::size_t i = 0; i < gold.size(); ++i) novel[i] = gold[i] == kNovelTag;
    std::set<Span> gold_spans;
    for (auto &s : extract_spans(gold)) {
      if (s.type != kNovelTag) gold_spans.insert(std::move(s));
    }
    for (const auto &s : extract_spans(pred)) {
      bool touches_novel = false;
      for (std::size_t i = s.start; i <= s.end; ++i) touches_novel |= novel[i];
      if (touches_novel) continue;
      prf.predicted += 1;
      prf.true_positives += gold_spans.contains(s);
    }
    prf.gold += gold_spans.size();
  }
  return prf.f1();
}

TrainResult train_tagger(const Corpus &train, const FeatureCorpus &train_features,
                         Objective objective, const SlotSchema &schema,
                         const TrainConfig &config, const Corpus &val,
                         const FeatureCorpus &val_features) {
  config.validate();
  if (train.empty()) throw ConfigError("training corpus is empty");
  check_aligned(train, train_features);
  check_aligned(val, val_features);
  const std::size_t dim = train_features.front().dim();

  TrainResult result;
  result.model = TaggerModel(objective, objective_tags(objective, schema), dim);
  TaggerModel &model = result.model;
  auto &params = model.parameters();

  std::vector<std::vector<int>> gold(train.size());
  for (std::size_t u = 0; u < train.size(); ++u) {
    for (const auto &tag : train[u].tags) {
      const int g = map_gold_tag(objective, model.tags(), tag);
      if (g < 0) throw IllegalTag(0, tag);
      gold[u].push_back(g);
    }
  }

  std::vector<std::size_t> order(train.size());
  for (std::size_t u = 0; u < order.size(); ++u) order[u] = u;
  Rng rng(config.seed);
  std::vector<double> gradient(params.size());
  std::vector<double> best_params = params;
  double best_score = kNegInf;
  std::size_t since_improvement = 0;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      std::fill(gradient.begin(), gradient.end(), 0.0);
      for (std::size_t j = start; j < stop; ++j) {
        const std::size_t u = order[j];
        accumulate_log_likelihood_gradient(model, train_features[u], gold[u], 1.0,
                                           &gradient);
      }
      const double step = config.learning_rate / static_cast<double>(stop - start);
      const double decay = 1.0 - config.learning_rate * config.l2;
      for (std::size_t k = 0; k < params.size(); ++k) {
        params[k] = params[k] * decay + step * gradient[k];
      }
    }
    result.epochs_run = epoch;
    if (val.empty()) {
      best_params = params;
      result.best_epoch = epoch;
      result.val_history.push_back(0.0);
      continue;
    }
    const double score = validation_score(model, val, val_features);
    result.val_history.push_back(score);
    if (score > best_score) {
      best_score = score;
      best_params = params;
      result.best_epoch = epoch;
      since_improvement = 0;
    } else if (++since_improvement >= config.patience) {
      break;
    }
  }
  params = std::move(best_params);
  return result;
}

std::vector<std::uint8_t> serialize_model(const TaggerModel &model) {
  std::vector<std::uint8_t> out{'N', 'S', 'D', 'M'};
  const std::size_t T = model.num_tags();
  const std::size_t d = model.dim();
  put_u32(&out, kModelFormatVersion);
  put_u32(&out, model.objective() == Objective::kBinary ? 0u : 1u);
  put_u32(&out, static_cast<std::uint32_t>(T));
  put_u32(&out, static_cast<std::uint32_t>(d));
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t f = 0; f < d; ++f) put_f64(&out, model.weight(t, f));
  }
  for (std::size_t t = 0; t < T; ++t) put_f64(&out, model.bias(t));
  for (std::size_t s = 0; s < T; ++s) {
    for (std::size_t t = 0; t < T; ++t) put_f64(&out, model.transition(s, t));
  }
  return out;
}

TaggerModel parse_model(std::span<const std::uint8_t> bytes,
                        std::vector<std::string> tags) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "NSDM", 4) != 0) {
    throw FormatError("NSDM: bad magic");
  }
  std::size_t pos = 4;
  const auto version = get_le(bytes, &pos, 4);
  if (version != kModelFormatVersion) {
    throw FormatError("NSDM: unsupported version " + std::to_string(version));
  }
  const auto objective_code = get_le(bytes, &pos, 4);
  if (objective_code > 1) throw FormatError("NSDM: bad objective code");
  const auto T = get_le(bytes, &pos, 4);
  const auto d = get_le(bytes, &pos, 4);
  if (T != tags.size()) {
    throw FormatError("NSDM: model has " + std::to_string(T) + " tags, " +
                      std::to_string(tags.size()) + " names supplied");
  }
  TaggerModel model(objective_code == 0 ? Objective::kBinary : Objective::kMultiple,
                    std::move(tags), d);
  auto f64 = [&] {
    const double v = std::bit_cast<double>(get_le(bytes, &pos, 8));
    if (!std::isfinite(v)) throw NonFiniteValue("NSDM: non-finite parameter");
    return v;
  };
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t f = 0; f < d; ++f) model.weight(t, f) = f64();
  }
  for (std::size_t t = 0; t < T; ++t) model.bias(t) = f64();
  for (std::size_t s = 0; s < T; ++s) {
    for (std::size_t t = 0; t < T; ++t) model.transition(s, t) = f64();
  }
  if (pos != bytes.size()) throw FormatError("NSDM: trailing bytes");
  return model;
}

void save_model(const std::string &path, const TaggerModel &model) {
  const auto bytes = serialize_model(model);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path + "'");
  out.write(reinterpret_cast<const char *>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

TaggerModel load_model(const std::string &path, std::vector<std::string> tags) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return parse_model(bytes, std::move(tags));
}

}  // namespace nsd
