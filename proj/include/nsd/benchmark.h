#ifndef NSD_BENCHMARK_H_
#define NSD_BENCHMARK_H_

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "nsd/corpus.h"
#include "nsd/rng.h"

namespace nsd {

// How training utterances carrying unknown slot values are handled.
enum class Strategy { kReplace, kMask, kRemove };

const char *strategy_name(Strategy strategy);
Strategy parse_strategy(const std::string &name);

struct NsdConfig {
  std::optional<double> proportion;
  std::vector<std::string> explicit_unknown;
  Strategy strategy = Strategy::kRemove;
  std::uint64_t seed = 0;

  // Throws ConfigError on violations; explicit types are checked against the
  // schema when one is given.
  void validate(const SlotSchema *schema = nullptr) const;
};

// Number of gold spans per slot type.
std::map<std::string, std::size_t> span_counts(const Corpus &corpus);

// Draws max(1, round(proportion * |types|)) types without replacement, each
// draw weighted by the type's span count in train.
std::vector<std::string> select_unknown_types(const SlotSchema &schema,
                                              const CorpusSplit &train,
                                              double proportion, Rng &rng);

// True for B-/I- tags whose type is in the sorted `unknown` list.
bool references_unknown(std::string_view tag,
                        const std::vector<std::string> &unknown);

CorpusSplit apply_train_strategy(const CorpusSplit &train,
                                 const std::vector<std::string> &unknown,
                                 Strategy strategy,
                                 std::vector<std::size_t> *kept_indices = nullptr);

CorpusSplit relabel_eval_split(const CorpusSplit &split,
                               const std::vector<std::string> &unknown);

struct NsdBenchmark {
  CorpusSplits splits;
  std::vector<std::string> unknown_types;  // sorted
  SlotSchema in_domain_schema;
  NsdConfig config;
  // Original-corpus index of every kept train utterance.
  std::vector<std::size_t> train_source_indices;
  // The untransformed corpus the benchmark was built from.
  std::shared_ptr<const CorpusSplits> source;
};

NsdBenchmark build_benchmark(std::shared_ptr<const CorpusSplits> source,
                             const SlotSchema &schema, const NsdConfig &config);

struct SplitStats {
  std::size_t in_domain_slot_types = 0;
  std::size_t unknown_slot_types = 0;
  std::size_t queries = 0;
  std::size_t queries_with_unknown = 0;
  std::size_t slot_values = 0;
  std::size_t unknown_slot_values = 0;
};

struct BenchmarkStats {
  SplitStats train;
  SplitStats val;
  SplitStats test;
  double oov_word_percentage = 0.0;
  double removed_train_fraction = 0.0;

  // Unknown slot values as a share of all test slot values, percent.
  double test_unknown_value_percentage() const;
};

BenchmarkStats benchmark_stats(const NsdBenchmark &benchmark,
                               bool lowercase = true);

}  // namespace nsd

#endif  // NSD_BENCHMARK_H_
