#ifndef NSD_EXPERIMENT_H_
#define NSD_EXPERIMENT_H_

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "nsd/benchmark.h"
#include "nsd/crf_tagger.h"
#include "nsd/detect.h"
#include "nsd/features.h"
#include "nsd/metrics.h"
#include "nsd/report.h"

namespace nsd {

inline constexpr const char *kToolkitVersion = "0.1.0";

// SGD step used when none is given: 0.1 for hashed indicators, 0.01 for
// dense embedding files.
double default_learning_rate(const FeatureSource &source);

// One detector of the experiment grid.
struct DetectorSpec {
  DetectionMethod method = DetectionMethod::kGda;
  DetectorObjective objective = DetectorObjective::kMultiple;
  DistanceStrategy distance = DistanceStrategy::kMinimum;

  std::string name() const;
  // "gda:multiple:minimum", "msp:binary+multiple", ...
  static DetectorSpec parse(const std::string &text);
};

struct ExperimentConfig {
  std::string train_path;
  std::string val_path;
  std::string test_path;
  // Either proportions or explicit unknown sets (or both) form the first axis.
  std::vector<double> proportions;
  std::vector<std::vector<std::string>> unknown_sets;
  std::vector<Strategy> strategies{Strategy::kRemove};
  std::vector<DetectorSpec> grid{DetectorSpec{}};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  std::string features = "hashed:d=4096";
  std::string output_dir;
  bool lowercase = true;
  std::vector<std::string> open_vocab;
  DistanceMetric metric = DistanceMetric::kMahalanobis;
  std::optional<double> gda_lambda;
  // train.learning_rate is ignored; unset means default_learning_rate().
  TrainConfig train;
  std::optional<double> learning_rate;

  double resolved_learning_rate() const;

  // Throws ConfigError; checks that the corpus files exist.
  void validate() const;

  // Missing fields keep their defaults. "seeds" may be a list, or
  // "num_seeds" with "base_seed" gives base_seed + i.
  static ExperimentConfig from_json(const Json &j);
  Json to_json() const;
};

// A point of the grid: unknown-type spec x strategy x detector.
struct ConfigPoint {
  std::optional<double> proportion;
  std::vector<std::string> unknown_types;
  Strategy strategy = Strategy::kRemove;
  DetectorSpec detector;

  std::string label() const;
};

struct CellResult {
  std::size_t point = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  std::vector<std::string> unknown_types;
  BenchmarkStats benchmark;
  DetectorConfig detector;
  double calibration_f1 = 0.0;
  MetricsReport metrics;
  // Flat scores used for aggregation.
  std::map<std::string, double> scores;
};

struct Summary {
  double mean = 0.0;
  double std = 0.0;
  std::size_t count = 0;
};

struct PointAggregate {
  std::size_t completed = 0;
  std::vector<std::uint64_t> failed_seeds;
  std::map<std::string, Summary> scores;
  std::string error;  // set when every seed failed
};

struct RunReport {
  ExperimentConfig config;
  std::vector<ConfigPoint> points;
  std::vector<CellResult> cells;
  std::vector<PointAggregate> aggregates;
};

// Mean and population standard deviation; throws AllSeedsFailed on empty.
Summary summarize(const std::vector<double> &values);

// Aggregates completed cells per metric; failures are listed, not dropped.
PointAggregate aggregate(const std::vector<const CellResult *> &cells);

// Flat metric names and values of one evaluated cell.
std::map<std::string, double> flat_scores(const MetricsReport &metrics,
                                          const BenchmarkStats &stats,
                                          double calibration_f1);

RunReport run_experiment(const ExperimentConfig &config);

Json to_json(const RunReport &report);
// One row per config point x metric.
std::string report_csv(const RunReport &report);

// Writes report.json and report.csv under the output directory. Refuses to
// overwrite an existing report unless `force` is set.
void write_report(const RunReport &report, const std::string &output_dir,
                  bool force);

}  // namespace nsd

#endif  // NSD_EXPERIMENT_H_
