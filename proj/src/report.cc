#include "nsd/report.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>

#include "nsd/error.h"

namespace nsd {

namespace fs = std::filesystem;

double round_score(double value) {
  if (!std::isfinite(value)) return value;
  const double scale = std::pow(10.0, kJsonDecimals);
  const double r = std::round(value * scale) / scale;
  return r == 0.0 ? 0.0 : r;  // no "-0"
}

Json to_json(const Prf &prf) {
  return {{"precision", round_score(prf.precision())},
          {"recall", round_score(prf.recall())},
          {"f1", round_score(prf.f1())},
          {"true_positives", prf.true_positives},
          {"predicted", prf.predicted},
          {"gold", prf.gold}};
}

Json to_json(const RoseScore &r) {
  return {{"proportion", r.proportion},
          {"gold_spans", r.gold_spans},
          {"correct_gold_spans", r.correct_gold_spans},
          {"predicted_spans", r.predicted_spans},
          {"credited_predicted_spans", r.credited_predicted_spans},
          {"recall", round_score(r.recall)},
          {"precision", round_score(r.precision)},
          {"raw", round_score(r.raw)},
          {"span_f1", round_score(r.span_f1)},
          {"reported", round_score(r.reported)},
          {"no_gold_spans", r.no_gold_spans}};
}

Json to_json(const ErrorCategoryTable &t) {
  static const char *kColumns[] = {"O", "open_vocabulary_slot", "other_slot"};
  Json pred = Json::object();
  Json target = Json::object();
  for (int c = 0; c < 3; ++c) {
    pred[kColumns[c]] = {{"count", t.prediction_is_ns_counts[c]},
                         {"percent", round_score(t.prediction_is_ns[c])}};
    target[kColumns[c]] = {{"count", t.target_is_ns_counts[c]},
                           {"percent", round_score(t.target_is_ns[c])}};
  }
  return {{"prediction_is_ns", pred},
          {"target_is_ns", target},
          {"open_vocabulary_types", t.open_vocab_types},
          {"no_errors", t.no_errors},
          {"total_errors", t.total_errors()}};
}

Json to_json(const MetricsReport &report) {
  Json token = Json::object();
  for (const auto &[cls, prf] : report.token_by_class) token[cls] = to_json(prf);
  Json span = Json::object();
  for (const auto &[type, prf] : report.span_by_type) span[type] = to_json(prf);
  Json rose = Json::array();
  for (const auto &r : report.rose_scores) rose.push_back(to_json(r));
  return {{"token_by_class", token},
          {"span_by_type", span},
          {"ind_span", to_json(report.ind_span)},
          {"nsd_span", to_json(report.nsd_span)},
          {"nsd_token", to_json(report.nsd_token)},
          {"rose", rose},
          {"rose_mean", round_score(report.rose_mean)},
          {"errors", to_json(report.errors)}};
}

Json to_json(const CorpusStats &stats) {
  return {{"vocabulary_size", stats.vocabulary_size},
          {"oov_word_percentage", round_score(stats.oov_word_percentage)},
          {"num_slots", stats.num_slots},
          {"split_sizes", stats.split_sizes}};
}

Json to_json(const SplitStats &s) {
  return {{"in_domain_slot_types", s.in_domain_slot_types},
          {"unknown_slot_types", s.unknown_slot_types},
          {"queries", s.queries},
          {"queries_with_unknown", s.queries_with_unknown},
          {"slot_values", s.slot_values},
          {"unknown_slot_values", s.unknown_slot_values}};
}

Json to_json(const BenchmarkStats &stats) {
  return {{"train", to_json(stats.train)},
          {"val", to_json(stats.val)},
          {"test", to_json(stats.test)},
          {"oov_word_percentage", round_score(stats.oov_word_percentage)},
          {"removed_train_fraction", round_score(stats.removed_train_fraction)},
          {"test_unknown_value_percentage",
           round_score(stats.test_unknown_value_percentage())}};
}

Json to_json(const NsdConfig &config) {
  Json j = {{"strategy", strategy_name(config.strategy)}, {"seed", config.seed}};
  if (config.proportion) j["proportion"] = *config.proportion;
  if (!config.explicit_unknown.empty()) j["unknown_types"] = config.explicit_unknown;
  return j;
}

Json threshold_json(double value) {
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  return value;
}

double threshold_from_json(const Json &value) {
  if (value.is_string()) {
    const auto s = value.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    throw ConfigError("bad threshold '" + s + "'");
  }
  if (!value.is_number()) throw ConfigError("threshold must be a number");
  return value.get<double>();
}

Json to_json(const DetectorConfig &config) {
  Json j = {{"method", method_name(config.method)},
            {"objective", detector_objective_name(config.objective)},
            {"name", config.name()}};
  if (config.method == DetectionMethod::kGda) {
    j["distance"] = strategy_name(config.distance);
    j["threshold"] = threshold_json(config.threshold);
  } else {
    if (config.objective != DetectorObjective::kBinary) {
      j["threshold_multiple"] = threshold_json(config.msp.multiple);
    }
    if (config.objective != DetectorObjective::kMultiple) {
      j["threshold_binary"] = threshold_json(config.msp.binary);
    }
  }
  return j;
}

Json to_json(const Calibration &c) {
  Json curve = Json::array();
  for (const auto &p : c.curve) {
    curve.push_back({{"threshold", threshold_json(p.threshold)},
                     {"token_f1", round_score(p.token_f1)},
                     {"span_f1", round_score(p.span_f1)}});
  }
  return {{"threshold", threshold_json(c.threshold)},
          {"token_f1", round_score(c.token_f1)},
          {"flagged", c.flagged},
          {"curve", curve}};
}

Json to_json(const CalibrationReport &report) {
  Json stages = Json::array();
  for (const auto &s : report.stages) stages.push_back(to_json(s));
  return {{"token_f1", round_score(report.token_f1)}, {"stages", stages}};
}

std::string serialize_predictions(const PredictionSet &predictions,
                                  const Corpus &gold) {
  if (predictions.size() != gold.size()) {
    throw LengthMismatch("predictions and gold differ in utterance count");
  }
  std::string out;
  for (std::size_t u = 0; u < gold.size(); ++u) {
    const auto &p = predictions[u];
    if (p.final_tags.size() != gold[u].size()) {
      throw LengthMismatch("utterance " + std::to_string(u) +
                           ": prediction length differs from gold");
    }
    for (std::size_t i = 0; i < gold[u].size(); ++i) {
      out += gold[u].tokens[i];
      out += ' ';
      out += gold[u].tags[i];
      out += ' ';
      out += p.final_tags[i];
      out += '\n';
    }
    out += '\n';
  }
  return out;
}

void write_predictions(const std::string &path, const PredictionSet &predictions,
                       const Corpus &gold) {
  write_text_file(path, serialize_predictions(predictions, gold));
}

PredictionFile parse_predictions(std::string_view text) {
  PredictionFile out;
  std::vector<std::string> tokens;
  TagSequence gold;
  TagSequence pred;
  std::size_t columns = 0;
  std::size_t line_no = 0;
  auto flush = [&] {
    if (tokens.empty()) return;
    out.tokens.push_back(std::move(tokens));
    out.gold.push_back(std::move(gold));
    out.predicted.push_back(std::move(pred));
    tokens.clear();
    gold.clear();
    pred.clear();
  };
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    std::vector<std::string> fields;
    std::size_t i = 0;
    while (i < line.size()) {
      while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
      std::size_t j = i;
      while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
      if (j > i) fields.emplace_back(line.substr(i, j - i));
      i = j;
    }
    if (fields.empty()) {
      flush();
      continue;
    }
    if (fields.size() != 2 && fields.size() != 3) {
      throw MalformedLine(line_no, std::string(line));
    }
    if (columns == 0) columns = fields.size();
    if (fields.size() != columns) throw MalformedLine(line_no, std::string(line));
    for (std::size_t f = 1; f < fields.size(); ++f) {
      if (!is_legal_tag(fields[f])) throw IllegalTag(line_no, fields[f]);
    }
    tokens.push_back(fields[0]);
    if (columns == 3) gold.push_back(fields[1]);
    pred.push_back(fields.back());
  }
  flush();
  if (out.tokens.empty()) throw EmptyCorpus();
  if (columns == 2) out.gold.clear();
  return out;
}

PredictionFile read_predictions(const std::string &path) {
  return parse_predictions(read_text_file(path));
}

void write_benchmark_dir(const std::string &dir, const NsdBenchmark &benchmark,
                         const BenchmarkStats &stats) {
  fs::create_directories(dir);
  write_conll_file(dir + "/train.conll", benchmark.splits.train.utterances);
  write_conll_file(dir + "/val.conll", benchmark.splits.val.utterances);
  write_conll_file(dir + "/test.conll", benchmark.splits.test.utterances);
  Json meta = {{"config", to_json(benchmark.config)},
               {"unknown_types", benchmark.unknown_types},
               {"in_domain_types", benchmark.in_domain_schema.slot_types()},
               {"stats", to_json(stats)}};
  write_text_file(dir + "/benchmark.json", meta.dump(2) + "\n");
}

BenchmarkDir read_benchmark_dir(const std::string &dir) {
  BenchmarkDir out;
  ParseOptions train_options;
  train_options.allow_novel = false;
  out.splits.train.utterances = read_conll_file(dir + "/train.conll", train_options);
  out.splits.val.utterances = read_conll_file(dir + "/val.conll");
  out.splits.test.utterances = read_conll_file(dir + "/test.conll");
  const std::string meta_path = dir + "/benchmark.json";
  if (fs::exists(meta_path)) {
    try {
      out.metadata = Json::parse(read_text_file(meta_path));
      out.in_domain_schema =
          SlotSchema(out.metadata.at("in_domain_types").get<std::vector<std::string>>());
      out.unknown_types = out.metadata.at("unknown_types").get<std::vector<std::string>>();
    } catch (const Json::exception &e) {
      throw ConfigError(meta_path + ": " + e.what());
    }
  } else {
    out.in_domain_schema = derive_schema(out.splits.train);
  }
  return out;
}

std::string read_text_file(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

void write_text_file(const std::string &path, const std::string &text) {
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("cannot write '" + path + "'");
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw Error("write failed for '" + path + "'");
  }
  fs::rename(tmp, target);
}

}  // namespace nsd
