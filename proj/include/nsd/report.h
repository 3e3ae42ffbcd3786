#ifndef NSD_REPORT_H_
#define NSD_REPORT_H_

#include <string>
#include <vector>

#include "json.hpp"

#include "nsd/benchmark.h"
#include "nsd/corpus.h"
#include "nsd/crf_tagger.h"
#include "nsd/detect.h"
#include "nsd/metrics.h"

namespace nsd {

using Json = nlohmann::json;

// Scores are rounded to this many decimals in JSON output.
inline constexpr int kJsonDecimals = 6;
double round_score(double value);

Json to_json(const Prf &prf);
Json to_json(const RoseScore &rose);
Json to_json(const ErrorCategoryTable &table);
Json to_json(const MetricsReport &report);
Json to_json(const CorpusStats &stats);
Json to_json(const SplitStats &stats);
Json to_json(const BenchmarkStats &stats);
Json to_json(const NsdConfig &config);
Json to_json(const DetectorConfig &config);
Json to_json(const Calibration &calibration);
Json to_json(const CalibrationReport &report);

// Infinite thresholds are written as the strings "inf" / "-inf".
Json threshold_json(double value);
double threshold_from_json(const Json &value);

// Prediction files: "token gold final" per line, blank line between
// utterances. Two-column files (token tag) are read with an empty gold.
struct PredictionFile {
  std::vector<std::vector<std::string>> tokens;
  TagSequences gold;
  TagSequences predicted;
};

std::string serialize_predictions(const PredictionSet &predictions,
                                  const Corpus &gold);
void write_predictions(const std::string &path, const PredictionSet &predictions,
                       const Corpus &gold);
PredictionFile parse_predictions(std::string_view text);
PredictionFile read_predictions(const std::string &path);

// Benchmark directories: train/val/test .conll plus benchmark.json.
void write_benchmark_dir(const std::string &dir, const NsdBenchmark &benchmark,
                         const BenchmarkStats &stats);

struct BenchmarkDir {
  CorpusSplits splits;
  SlotSchema in_domain_schema;
  std::vector<std::string> unknown_types;
  Json metadata;
};

BenchmarkDir read_benchmark_dir(const std::string &dir);

std::string read_text_file(const std::string &path);
// Writes via a temporary file and rename.
void write_text_file(const std::string &path, const std::string &text);

}  // namespace nsd

#endif  // NSD_REPORT_H_
