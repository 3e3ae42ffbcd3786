#include "nsd/metrics.h"

#include <algorithm>
#include <cstdio>
#include <set>

#include "nsd/error.h"

namespace nsd {

namespace {

struct Chunk {
  char prefix;  // 'O', 'B' or 'I'
  std::string_view type;
};

Chunk chunk_of(std::string_view tag) {
  TagParts parts;
  if (!parse_tag(tag, &parts)) throw IllegalTag(0, std::string(tag));
  if (parts.prefix == 'N') return {'I', kNovelTag};
  return {parts.prefix, parts.type};
}

bool end_of_chunk(const Chunk &prev, const Chunk &cur) {
  if (prev.prefix == 'O') return false;
  if (cur.prefix == 'B' || cur.prefix == 'O') return true;
  return prev.type != cur.type;
}

bool start_of_chunk(const Chunk &prev, const Chunk &cur) {
  if (cur.prefix == 'B') return true;
  if (cur.prefix == 'O') return false;
  if (prev.prefix == 'O') return true;
  return prev.type != cur.type;
}

void check_aligned(const TagSequences &pred, const TagSequences &gold) {
  if (pred.size() != gold.size()) {
    throw LengthMismatch("prediction has " + std::to_string(pred.size()) +
                         " sequences, gold has " + std::to_string(gold.size()));
  }
  for (std::size_t u = 0; u < pred.size(); ++u) {
    if (pred[u].size() != gold[u].size()) {
      throw LengthMismatch("sequence " + std::to_string(u) + ": prediction has " +
                           std::to_string(pred[u].size()) + " tags, gold has " +
                           std::to_string(gold[u].size()));
    }
  }
}

double percent(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : 100.0 * static_cast<double>(num) / den;
}

double harmonic(double a, double b) {
  return a + b == 0.0 ? 0.0 : 2.0 * a * b / (a + b);
}

std::vector<bool> novel_mask(const TagSequence &tags) {
  std::vector<bool> mask(tags.size());
  for (std::size_t i = 0; i < tags.size(); ++i) mask[i] = tags[i] == kNovelTag;
  return mask;
}

}  // namespace

TagSequences tags_of(const Corpus &corpus) {
  TagSequences out;
  out.reserve(corpus.size());
  for (const auto &utt : corpus) out.push_back(utt.tags);
  return out;
}

std::vector<Span> extract_spans(std::span<const std::string> tags) {
  std::vector<Span> spans;
  Chunk prev{'O', {}};
  std::size_t begin = 0;
  for (std::size_t i = 0; i <= tags.size(); ++i) {
    Chunk cur = i < tags.size() ? chunk_of(tags[i]) : Chunk{'O', {}};
    if (end_of_chunk(prev, cur)) {
      spans.push_back({std::string(prev.type), begin, i - 1});
    }
    if (start_of_chunk(prev, cur)) begin = i;
    prev = cur;
  }
  return spans;
}

double Prf::precision() const { return percent(true_positives, predicted); }
double Prf::recall() const { return percent(true_positives, gold); }
double Prf::f1() const { return harmonic(precision(), recall()); }

Prf &Prf::operator+=(const Prf &other) {
  true_positives += other.true_positives;
  predicted += other.predicted;
  gold += other.gold;
  return *this;
}

std::string_view token_class(std::string_view tag) {
  if (tag == kOutsideTag) return kOutsideTag;
  return tag_type(tag);
}

Prf token_f1(const TagSequences &pred, const TagSequences &gold,
             std::string_view cls) {
  check_aligned(pred, gold);
  Prf prf;
  for (std::size_t u = 0; u < pred.size(); ++u) {
    for (std::size_t i = 0; i < pred[u].size(); ++i) {
      const bool p = token_class(pred[u][i]) == cls;
      const bool g = token_class(gold[u][i]) == cls;
      prf.predicted += p;
      prf.gold += g;
      prf.true_positives += p && g;
    }
  }
  return prf;
}

std::map<std::string, Prf> token_f1_by_class(const TagSequences &pred,
                                             const TagSequences &gold) {
  check_aligned(pred, gold);
  std::map<std::string, Prf> out;
  for (std::size_t u = 0; u < pred.size(); ++u) {
    for (std::size_t i = 0; i < pred[u].size(); ++i) {
      const std::string p(token_class(pred[u][i]));
      const std::string g(token_class(gold[u][i]));
      out[p].predicted += 1;
      out[g].gold += 1;
      if (p == g) out[p].true_positives += 1;
    }
  }
  return out;
}

std::map<std::string, Prf> span_f1_by_type(const TagSequences &pred,
                                           const TagSequences &gold) {
  check_aligned(pred, gold);
  std::map<std::string, Prf> out;
  for (std::size_t u = 0; u < pred.size(); ++u) {
    auto p = extract_spans(pred[u]);
    auto g = extract_spans(gold[u]);
    std::set<Span> gold_set(g.begin(), g.end());
    for (const auto &span : p) {
      auto &prf = out[span.type];
      prf.predicted += 1;
      if (gold_set.contains(span)) prf.true_positives += 1;
    }
    for (const auto &span : g) out[span.type].gold += 1;
  }
  return out;
}

Prf span_f1(const TagSequences &pred, const TagSequences &gold,
            std::string_view type) {
  auto by_type = span_f1_by_type(pred, gold);
  auto it = by_type.find(std::string(type));
  return it == by_type.end() ? Prf{} : it->second;
}

Prf ind_span_f1(const TagSequences &pred, const TagSequences &gold) {
  Prf total;
  for (const auto &[type, prf] : span_f1_by_type(pred, gold)) {
    if (type != kNovelTag) total += prf;
  }
  return total;
}

RoseScore rose(const TagSequences &pred, const TagSequences &gold, double p) {
  check_aligned(pred, gold);
  RoseScore score;
  score.proportion = p;
  for (std::size_t u = 0; u < pred.size(); ++u) {
    const auto pred_ns = novel_mask(pred[u]);
    std::vector<Span> gold_spans;
    for (auto &s : extract_spans(gold[u])) {
      if (s.type == kNovelTag) gold_spans.push_back(std::move(s));
    }
    std::vector<Span> pred_spans;
    for (auto &s : extract_spans(pred[u])) {
      if (s.type == kNovelTag) pred_spans.push_back(std::move(s));
    }
    std::vector<const Span *> correct;
    for (const auto &g : gold_spans) {
      std::size_t hits = 0;
      for (std::size_t i = g.start; i <= g.end; ++i) hits += pred_ns[i];
      if (static_cast<double>(hits) >= p * static_cast<double>(g.length())) {
        correct.push_back(&g);
      }
    }
    for (const auto &s : pred_spans) {
      const bool overlaps = std::any_of(
          correct.begin(), correct.end(), [&](const Span *g) {
            return s.start <= g->end && g->start <= s.end;
          });
      score.credited_predicted_spans += overlaps;
    }
    score.gold_spans += gold_spans.size();
    score.correct_gold_spans += correct.size();
    score.predicted_spans += pred_spans.size();
  }
  score.no_gold_spans = score.gold_spans == 0;
  score.recall = percent(score.correct_gold_spans, score.gold_spans);
  score.precision = percent(score.credited_predicted_spans, score.predicted_spans);
  score.raw = harmonic(score.recall, score.precision);
  score.span_f1 = span_f1(pred, gold, kNovelTag).f1();
  score.reported = (score.raw + score.span_f1) / 2.0;
  return score;
}

double rose_mean(const TagSequences &pred, const TagSequences &gold) {
  double sum = 0.0;
  for (double p : kRoseProportions) sum += rose(pred, gold, p).reported;
  return sum / kRoseProportions.size();
}

std::size_t ErrorCategoryTable::total_errors() const {
  std::size_t total = 0;
  for (int c = 0; c < 3; ++c) {
    total += prediction_is_ns_counts[c] + target_is_ns_counts[c];
  }
  return total;
}

ErrorCategoryTable error_analysis(const TagSequences &pred,
                                  const TagSequences &gold,
                                  const std::vector<std::string> &open_vocab) {
  check_aligned(pred, gold);
  ErrorCategoryTable table;
  table.open_vocab_types = open_vocab;
  auto column = [&](std::string_view tag) {
    if (tag == kOutsideTag) return kErrorO;
    auto type = tag_type(tag);
    return std::find(open_vocab.begin(), open_vocab.end(), type) != open_vocab.end()
               ? kErrorOpenVocab
               : kErrorOtherSlot;
  };
  for (std::size_t u = 0; u < pred.size(); ++u) {
    for (std::size_t i = 0; i < pred[u].size(); ++i) {
      const bool p = pred[u][i] == kNovelTag;
      const bool g = gold[u][i] == kNovelTag;
      if (p && !g) table.prediction_is_ns_counts[column(gold[u][i])] += 1;
      if (g && !p) table.target_is_ns_counts[column(pred[u][i])] += 1;
    }
  }
  const std::size_t total = table.total_errors();
  table.no_errors = total == 0;
  for (int c = 0; c < 3; ++c) {
    table.prediction_is_ns[c] = percent(table.prediction_is_ns_counts[c], total);
    table.target_is_ns[c] = percent(table.target_is_ns_counts[c], total);
  }
  return table;
}

MetricsReport evaluate(const TagSequences &pred, const TagSequences &gold,
                       const std::vector<std::string> &open_vocab) {
  check_aligned(pred, gold);
  MetricsReport report;
  report.token_by_class = token_f1_by_class(pred, gold);
  report.span_by_type = span_f1_by_type(pred, gold);
  for (const auto &[type, prf] : report.span_by_type) {
    if (type != kNovelTag) report.ind_span += prf;
  }
  if (auto it = report.span_by_type.find(std::string(kNovelTag));
      it != report.span_by_type.end()) {
    report.nsd_span = it->second;
  }
  if (auto it = report.token_by_class.find(std::string(kNovelTag));
      it != report.token_by_class.end()) {
    report.nsd_token = it->second;
  }
  double sum = 0.0;
  for (double p : kRoseProportions) {
    report.rose_scores.push_back(rose(pred, gold, p));
    sum += report.rose_scores.back().reported;
  }
  report.rose_mean = sum / kRoseProportions.size();
  report.errors = error_analysis(pred, gold, open_vocab);
  return report;
}

std::string format_report(const MetricsReport &report) {
  std::string out;
  char line[256];
  auto row = [&](const std::string &name, const Prf &prf) {
    std::snprintf(line, sizeof(line), "%-28s %8.2f %8.2f %8.2f %7zu %7zu\n",
                  name.c_str(), prf.precision(), prf.recall(), prf.f1(),
                  prf.predicted, prf.gold);
    out += line;
  };
  std::snprintf(line, sizeof(line), "%-28s %8s %8s %8s %7s %7s\n", "span",
                "P", "R", "F1", "pred", "gold");
  out += line;
  for (const auto &[type, prf] : report.span_by_type) row(type, prf);
  row("[IND]", report.ind_span);
  row("[NSD span]", report.nsd_span);
  row("[NSD token]", report.nsd_token);
  for (const auto &r : report.rose_scores) {
    std::snprintf(line, sizeof(line), "ROSE-%-3.0f%%  %8.2f  (raw %.2f)\n",
                  r.proportion * 100.0, r.reported, r.raw);
    out += line;
  }
  std::snprintf(line, sizeof(line), "ROSE-mean   %8.2f\n", report.rose_mean);
  out += line;
  const auto &e = report.errors;
  std::snprintf(line, sizeof(line), "%-20s %8s %8s %8s\n", "errors (%)", "O",
                "open", "other");
  out += line;
  std::snprintf(line, sizeof(line), "%-20s %8.2f %8.2f %8.2f\n",
                "Prediction is NS", e.prediction_is_ns[0], e.prediction_is_ns[1],
                e.prediction_is_ns[2]);
  out += line;
  std::snprintf(line, sizeof(line), "%-20s %8.2f %8.2f %8.2f\n", "Target is NS",
                e.target_is_ns[0], e.target_is_ns[1], e.target_is_ns[2]);
  out += line;
  return out;
}

}  // namespace nsd
