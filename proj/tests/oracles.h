#ifndef NSD_TESTS_ORACLES_H_
#define NSD_TESTS_ORACLES_H_

// Exhaustive-enumeration references for the chain computations. They share
// nothing with the library beyond parameter accessors.

#include <cmath>
#include <vector>

#include "nsd/crf_tagger.h"
#include "nsd/rng.h"

namespace nsd::oracle {

inline std::vector<std::vector<double>> emission_table(const TaggerModel &m,
                                                       const TokenFeatureMatrix &x) {
  std::vector<std::vector<double>> e(x.rows(), std::vector<double>(m.num_tags()));
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto dense = x.dense_row(i);
    for (std::size_t t = 0; t < m.num_tags(); ++t) {
      double s = m.bias(t);
      for (std::size_t f = 0; f < dense.size(); ++f) s += dense[f] * m.weight(t, f);
      e[i][t] = s;
    }
  }
  return e;
}

struct Enumeration {
  double log_z = 0.0;
  double best_score = -INFINITY;
  std::vector<int> best_path;
  std::vector<std::vector<double>> marginals;
};

inline Enumeration enumerate_paths(const TaggerModel &m, const TokenFeatureMatrix &x) {
  const auto e = emission_table(m, x);
  const std::size_t n = x.rows();
  const std::size_t T = m.num_tags();
  std::size_t total = 1;
  for (std::size_t i = 0; i < n; ++i) total *= T;
  std::vector<double> scores(total);
  std::vector<int> path(n);
  double max_score = -INFINITY;
  Enumeration out;
  for (std::size_t code = 0; code < total; ++code) {
    std::size_t c = code;
    // Most significant digit first, so enumeration order is lexicographic.
    for (std::size_t i = n; i-- > 0;) {
      path[i] = static_cast<int>(c % T);
      c /= T;
    }
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      s += e[i][path[i]];
      if (i > 0) s += m.transition(path[i - 1], path[i]);
    }
    scores[code] = s;
    if (s > out.best_score) {
      out.best_score = s;
      out.best_path = path;
    }
    max_score = std::max(max_score, s);
  }
  double z = 0.0;
  for (double s : scores) z += std::exp(s - max_score);
  out.log_z = max_score + std::log(z);
  out.marginals.assign(n, std::vector<double>(T, 0.0));
  for (std::size_t code = 0; code < total; ++code) {
    const double p = std::exp(scores[code] - out.log_z);
    std::size_t c = code;
    for (std::size_t i = n; i-- > 0;) {
      out.marginals[i][c % T] += p;
      c /= T;
    }
  }
  return out;
}

// Random model with N(0,1) parameters and dense N(0,1) features.
struct RandomInstance {
  TaggerModel model;
  TokenFeatureMatrix features;
  std::vector<int> gold;
};

inline RandomInstance random_instance(Rng &rng, std::size_t max_len, std::size_t max_tags,
                                      std::size_t dim) {
  const std::size_t n = 1 + rng.below(max_len);
  const std::size_t T = 2 + rng.below(max_tags - 1);
  std::vector<std::string> tags;
  for (std::size_t t = 0; t < T; ++t) tags.push_back("t" + std::to_string(t));
  RandomInstance r{TaggerModel(Objective::kMultiple, tags, dim), TokenFeatureMatrix(0, dim), {}};
  for (auto &p : r.model.parameters()) p = rng.normal();
  std::vector<double> row(dim);
  for (std::size_t i = 0; i < n; ++i) {
    for (auto &v : row) v = rng.normal();
    r.features.add_dense_row(row);
    r.gold.push_back(static_cast<int>(rng.below(T)));
  }
  return r;
}

}  // namespace nsd::oracle

#endif  // NSD_TESTS_ORACLES_H_
