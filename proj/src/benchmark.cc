#include "nsd/benchmark.h"

#include <algorithm>
#include <cmath>

#include "nsd/error.h"
#include "nsd/metrics.h"

namespace nsd {

namespace {

bool has_unknown(const LabeledUtterance &utt,
                 const std::vector<std::string> &unknown) {
  return std::any_of(utt.tags.begin(), utt.tags.end(), [&](const auto &tag) {
    return references_unknown(tag, unknown);
  });
}

std::vector<std::string> sorted_unique(std::vector<std::string> types) {
  std::sort(types.begin(), types.end());
  types.erase(std::unique(types.begin(), types.end()), types.end());
  return types;
}

void check_reserved(const Corpus &corpus) {
  for (const auto &utt : corpus) {
    for (const auto &token : utt.tokens) {
      if (token == kMaskToken) throw ReservedToken(0, token);
    }
  }
}

}  // namespace

const char *strategy_name(Strategy strategy) {
  switch (strategy) {
    case Strategy::kReplace: return "replace";
    case Strategy::kMask: return "mask";
    case Strategy::kRemove: return "remove";
  }
  return "?";
}

Strategy parse_strategy(const std::string &name) {
  std::string lower = to_lower(name);
  if (lower == "replace") return Strategy::kReplace;
  if (lower == "mask") return Strategy::kMask;
  if (lower == "remove") return Strategy::kRemove;
  throw ConfigError("unknown strategy '" + name + "'");
}

void NsdConfig::validate(const SlotSchema *schema) const {
  if (proportion.has_value() == !explicit_unknown.empty()) {
    throw ConfigError("exactly one of proportion / explicit unknown types must be set");
  }
  if (proportion && !(*proportion > 0.0 && *proportion < 1.0)) {
    throw ConfigError("proportion must lie in (0, 1)");
  }
  if (schema != nullptr) {
    for (const auto &type : explicit_unknown) {
      if (!schema->contains(type)) {
        throw ConfigError("unknown type '" + type + "' is not in the slot schema");
      }
    }
  }
}

std::map<std::string, std::size_t> span_counts(const Corpus &corpus) {
  std::map<std::string, std::size_t> counts;
  for (const auto &utt : corpus) {
    for (const auto &span : extract_spans(utt.tags)) counts[span.type] += 1;
  }
  return counts;
}

std::vector<std::string> select_unknown_types(const SlotSchema &schema,
                                              const CorpusSplit &train,
                                              double proportion, Rng &rng) {
  if (schema.size() == 0) throw DegenerateSchema();
  if (!(proportion > 0.0 && proportion < 1.0)) {
    throw ConfigError("proportion must lie in (0, 1)");
  }
  const std::size_t m = schema.size();
  std::size_t k = static_cast<std::size_t>(std::llround(proportion * m));
  k = std::clamp<std::size_t>(k, 1, m);

  const auto counts = span_counts(train.utterances);
  std::vector<std::string> pool = schema.slot_types();
  std::vector<double> weights;
  for (const auto &type : pool) {
    auto it = counts.find(type);
    weights.push_back(it == counts.end() ? 0.0 : static_cast<double>(it->second));
  }

  std::vector<std::string> chosen;
  while (chosen.size() < k) {
    double total = 0.0;
    for (double w : weights) total += w;
    std::size_t pick = pool.size() - 1;
    if (total > 0.0) {
      const double target = rng.uniform() * total;
      double cumulative = 0.0;
      for (std::size_t i = 0; i < pool.size(); ++i) {
        cumulative += weights[i];
        if (target < cumulative) {
          pick = i;
          break;
        }
      }
      // Guard against rounding at the top end landing on a zero weight.
      while (weights[pick] == 0.0) --pick;
    } else {
      pick = rng.below(pool.size());
    }
    chosen.push_back(pool[pick]);
    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(pick));
    weights.erase(weights.begin() + static_cast<std::ptrdiff_t>(pick));
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

bool references_unknown(std::string_view tag,
                        const std::vector<std::string> &unknown) {
  TagParts parts;
  if (!parse_tag(tag, &parts)) return false;
  if (parts.prefix != 'B' && parts.prefix != 'I') return false;
  return std::binary_search(unknown.begin(), unknown.end(), parts.type);
}

CorpusSplit apply_train_strategy(const CorpusSplit &train,
                                 const std::vector<std::string> &unknown_in,
                                 Strategy strategy,
                                 std::vector<std::size_t> *kept_indices) {
  const auto unknown = sorted_unique(unknown_in);
  CorpusSplit out{train.name, {}};
  if (kept_indices) kept_indices->clear();
  for (std::size_t u = 0; u < train.utterances.size(); ++u) {
    const auto &utt = train.utterances[u];
    if (strategy == Strategy::kRemove) {
      if (has_unknown(utt, unknown)) continue;
      out.utterances.push_back(utt);
    } else {
      LabeledUtterance copy = utt;
      for (std::size_t i = 0; i < copy.size(); ++i) {
        if (references_unknown(copy.tags[i], unknown)) {
          copy.tags[i] = std::string(kOutsideTag);
          if (strategy == Strategy::kMask) copy.tokens[i] = std::string(kMaskToken);
        }
      }
      out.utterances.push_back(std::move(copy));
    }
    if (kept_indices) kept_indices->push_back(u);
  }
  return out;
}

CorpusSplit relabel_eval_split(const CorpusSplit &split,
                               const std::vector<std::string> &unknown_in) {
  const auto unknown = sorted_unique(unknown_in);
  CorpusSplit out = split;
  for (auto &utt : out.utterances) {
    for (auto &tag : utt.tags) {
      if (references_unknown(tag, unknown)) tag = std::string(kNovelTag);
    }
  }
  return out;
}

NsdBenchmark build_benchmark(std::shared_ptr<const CorpusSplits> source,
                             const SlotSchema &schema, const NsdConfig &config) {
  config.validate(&schema);
  for (const auto &utt : source->train.utterances) {
    for (const auto &tag : utt.tags) {
      if (tag == kNovelTag) throw IllegalTag(0, tag);
    }
  }
  if (config.strategy == Strategy::kMask) {
    check_reserved(source->train.utterances);
    check_reserved(source->val.utterances);
    check_reserved(source->test.utterances);
  }

  NsdBenchmark b;
  b.config = config;
  if (config.proportion) {
    Rng rng(config.seed);
    b.unknown_types =
        select_unknown_types(schema, source->train, *config.proportion, rng);
  } else {
    b.unknown_types = sorted_unique(config.explicit_unknown);
  }
  b.in_domain_schema = schema.without(b.unknown_types);
  b.splits.train = apply_train_strategy(source->train, b.unknown_types,
                                        config.strategy, &b.train_source_indices);
  if (b.splits.train.utterances.empty()) throw AllTrainRemoved();
  b.splits.val = relabel_eval_split(source->val, b.unknown_types);
  b.splits.test = relabel_eval_split(source->test, b.unknown_types);
  b.source = std::move(source);
  return b;
}

double BenchmarkStats::test_unknown_value_percentage() const {
  return test.slot_values == 0
             ? 0.0
             : 100.0 * static_cast<double>(test.unknown_slot_values) /
                   test.slot_values;
}

BenchmarkStats benchmark_stats(const NsdBenchmark &b, bool lowercase) {
  auto count = [&](const Corpus &corpus) {
    SplitStats s;
    s.in_domain_slot_types = b.in_domain_schema.size();
    s.unknown_slot_types = b.unknown_types.size();
    s.queries = corpus.size();
    for (const auto &utt : corpus) {
      s.queries_with_unknown += has_unknown(utt, b.unknown_types);
      for (const auto &span : extract_spans(utt.tags)) {
        s.slot_values += 1;
        s.unknown_slot_values += std::binary_search(
            b.unknown_types.begin(), b.unknown_types.end(), span.type);
      }
    }
    return s;
  };
  BenchmarkStats stats;
  stats.train = count(b.splits.train.utterances);
  // Evaluation splits are counted on their original tags: adjacent unknown
  // spans merge into one NS span after relabeling.
  stats.val = count(b.source->val.utterances);
  stats.test = count(b.source->test.utterances);
  stats.oov_word_percentage = oov_percentage(
      b.splits.train.utterances, b.splits.test.utterances, lowercase);
  const auto original = b.source->train.size();
  stats.removed_train_fraction =
      original == 0 ? 0.0
                    : 1.0 - static_cast<double>(b.splits.train.size()) / original;
  return stats;
}

}  // namespace nsd
