#ifndef NSD_METRICS_H_
#define NSD_METRICS_H_

#include <array>
#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "nsd/corpus.h"

namespace nsd {

using TagSequence = std::vector<std::string>;
using TagSequences = std::vector<TagSequence>;

TagSequences tags_of(const Corpus &corpus);

// A chunk with inclusive token bounds.
struct Span {
  std::string type;
  std::size_t start = 0;
  std::size_t end = 0;

  std::size_t length() const { return end - start + 1; }
  auto operator<=>(const Span &) const = default;
};

// conlleval chunking. B-x opens a chunk; I-x continues a chunk of type x and
// opens a new one after O, after another type, or at the sequence start.
// Consecutive NS tags form a single NS chunk.
std::vector<Span> extract_spans(std::span<const std::string> tags);

// Micro-averaged counts. Scores are percentages; F1 is 0 when P + R = 0.
struct Prf {
  std::size_t true_positives = 0;
  std::size_t predicted = 0;
  std::size_t gold = 0;

  double precision() const;
  double recall() const;
  double f1() const;
  Prf &operator+=(const Prf &other);
};

// Class of a token for token-level scoring: "O", "NS", or the slot type.
std::string_view token_class(std::string_view tag);

Prf token_f1(const TagSequences &pred, const TagSequences &gold,
             std::string_view cls);
std::map<std::string, Prf> token_f1_by_class(const TagSequences &pred,
                                             const TagSequences &gold);

Prf span_f1(const TagSequences &pred, const TagSequences &gold,
            std::string_view type);
std::map<std::string, Prf> span_f1_by_type(const TagSequences &pred,
                                           const TagSequences &gold);
// Micro over every type except NS.
Prf ind_span_f1(const TagSequences &pred, const TagSequences &gold);

inline constexpr std::array<double, 4> kRoseProportions{0.25, 0.5, 0.75, 1.0};

struct RoseScore {
  double proportion = 1.0;
  std::size_t gold_spans = 0;
  std::size_t correct_gold_spans = 0;
  std::size_t predicted_spans = 0;
  std::size_t credited_predicted_spans = 0;
  double recall = 0.0;     // percent
  double precision = 0.0;  // percent
  double raw = 0.0;        // harmonic mean of the two, percent
  double span_f1 = 0.0;    // NSD span F1, percent
  double reported = 0.0;   // (raw + span_f1) / 2
  bool no_gold_spans = false;
};

// A gold NS span of length L is correct when at least p * L of its tokens are
// predicted NS. A predicted NS span is credited when it overlaps a correct
// gold span, so predictions running past a found span are not punished.
RoseScore rose(const TagSequences &pred, const TagSequences &gold, double p);
double rose_mean(const TagSequences &pred, const TagSequences &gold);

enum ErrorColumn { kErrorO = 0, kErrorOpenVocab = 1, kErrorOtherSlot = 2 };

struct ErrorCategoryTable {
  // Rows: prediction is NS (gold is not) / target is NS (prediction is not).
  std::array<std::size_t, 3> prediction_is_ns_counts{};
  std::array<std::size_t, 3> target_is_ns_counts{};
  std::array<double, 3> prediction_is_ns{};
  std::array<double, 3> target_is_ns{};
  std::vector<std::string> open_vocab_types;
  bool no_errors = true;

  std::size_t total_errors() const;
};

ErrorCategoryTable error_analysis(const TagSequences &pred,
                                  const TagSequences &gold,
                                  const std::vector<std::string> &open_vocab);

struct MetricsReport {
  std::map<std::string, Prf> token_by_class;
  std::map<std::string, Prf> span_by_type;
  Prf ind_span;
  Prf nsd_span;
  Prf nsd_token;
  std::vector<RoseScore> rose_scores;  // one per kRoseProportions entry
  double rose_mean = 0.0;
  ErrorCategoryTable errors;
};

MetricsReport evaluate(const TagSequences &pred, const TagSequences &gold,
                       const std::vector<std::string> &open_vocab = {});

// Fixed-width text table of a report.
std::string format_report(const MetricsReport &report);

}  // namespace nsd

#endif  // NSD_METRICS_H_
