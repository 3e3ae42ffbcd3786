#include "nsd/experiment.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <set>
#include <sstream>

#include "nsd/error.h"

namespace nsd {

namespace fs = std::filesystem;

double default_learning_rate(const FeatureSource &source) {
  return source.kind == FeatureSource::Kind::kFile ? 0.01 : 0.1;
}

double ExperimentConfig::resolved_learning_rate() const {
  return learning_rate ? *learning_rate : default_learning_rate(FeatureSource::parse(features));
}

std::string DetectorSpec::name() const {
  std::string s = std::string(method_name(method)) + ":" +
                  detector_objective_name(objective);
  if (method == DetectionMethod::kGda) s += std::string(":") + strategy_name(distance);
  return s;
}

DetectorSpec DetectorSpec::parse(const std::string &text) {
  std::vector<std::string> parts;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ':')) parts.push_back(item);
  if (parts.size() < 2 || parts.size() > 3) {
    throw ConfigError("detector must be method:objective[:distance], got '" + text + "'");
  }
  DetectorSpec spec;
  spec.method = parse_method(parts[0]);
  spec.objective = parse_detector_objective(parts[1]);
  if (parts.size() == 3) {
    if (spec.method != DetectionMethod::kGda) {
      throw ConfigError("distance strategy only applies to GDA: '" + text + "'");
    }
    spec.distance = parse_distance_strategy(parts[2]);
  }
  return spec;
}

void ExperimentConfig::validate() const {
  if (seeds.empty()) throw ConfigError("at least one seed is required");
  if (grid.empty()) throw ConfigError("detector grid is empty");
  if (strategies.empty()) throw ConfigError("no strategies given");
  if (proportions.empty() && unknown_sets.empty()) {
    throw ConfigError("give proportions or explicit unknown type sets");
  }
  for (double p : proportions) {
    if (!(p > 0.0 && p < 1.0)) throw ConfigError("proportion must lie in (0, 1)");
  }
  for (const auto &set : unknown_sets) {
    if (set.empty()) throw ConfigError("empty unknown type set");
  }
  std::set<std::uint64_t> unique(seeds.begin(), seeds.end());
  if (unique.size() != seeds.size()) throw ConfigError("duplicate seeds");
  for (const auto &spec : grid) {
    DetectorConfig{spec.method, spec.objective, spec.distance, {}, 0.0}.validate();
  }
  for (const auto *path : {&train_path, &val_path, &test_path}) {
    if (path->empty()) throw ConfigError("train, val and test paths are required");
    if (!fs::exists(*path)) throw ConfigError("file not found: " + *path);
  }
  const auto source = FeatureSource::parse(features);
  if (source.kind == FeatureSource::Kind::kFile) {
    for (auto s : strategies) {
      if (s == Strategy::kMask) {
        throw ConfigError("precomputed features cannot follow the Mask token rewrite");
      }
    }
  }
  if (gda_lambda && !(*gda_lambda > 0.0)) throw ConfigError("gda_lambda must be positive");
  auto resolved = train;
  resolved.learning_rate = resolved_learning_rate();
  resolved.validate();
}

namespace {

template <typename T>
void read_field(const Json &j, const char *key, T *out) {
  if (j.contains(key)) *out = j.at(key).get<T>();
}

const std::set<std::string> kConfigKeys = {
    "train",      "val",        "test",     "proportions", "unknown_sets",
    "strategies", "grid",       "seeds",    "num_seeds",   "base_seed",
    "features",   "output_dir", "lowercase", "open_vocab", "metric",
    "gda_lambda", "training"};

const std::set<std::string> kTrainingKeys = {"learning_rate", "batch_size", "max_epochs",
                                             "patience", "l2"};

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const Json &j) {
  if (!j.is_object()) throw ConfigError("experiment config must be a JSON object");
  for (const auto &[key, _] : j.items()) {
    if (!kConfigKeys.count(key)) throw ConfigError("unknown config field '" + key + "'");
  }
  ExperimentConfig c;
  try {
    read_field(j, "train", &c.train_path);
    read_field(j, "val", &c.val_path);
    read_field(j, "test", &c.test_path);
    read_field(j, "proportions", &c.proportions);
    read_field(j, "unknown_sets", &c.unknown_sets);
    if (j.contains("strategies")) {
      c.strategies.clear();
      for (const auto &s : j.at("strategies")) {
        c.strategies.push_back(parse_strategy(s.get<std::string>()));
      }
    }
    if (j.contains("grid")) {
      c.grid.clear();
      for (const auto &g : j.at("grid")) {
        c.grid.push_back(DetectorSpec::parse(g.get<std::string>()));
      }
    }
    if (j.contains("seeds") && (j.contains("num_seeds") || j.contains("base_seed"))) {
      throw ConfigError("give either seeds or num_seeds/base_seed");
    }
    if (j.contains("seeds")) {
      c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    } else if (j.contains("num_seeds") || j.contains("base_seed")) {
      const auto n = j.value("num_seeds", std::size_t{10});
      const auto base = j.value("base_seed", std::uint64_t{0});
      c.seeds.clear();
      for (std::size_t i = 0; i < n; ++i) c.seeds.push_back(base + i);
    }
    read_field(j, "features", &c.features);
    read_field(j, "output_dir", &c.output_dir);
    read_field(j, "lowercase", &c.lowercase);
    read_field(j, "open_vocab", &c.open_vocab);
    if (j.contains("metric")) c.metric = parse_metric(j.at("metric").get<std::string>());
    if (j.contains("gda_lambda") && !j.at("gda_lambda").is_null()) {
      c.gda_lambda = j.at("gda_lambda").get<double>();
    }
    if (j.contains("training")) {
      const Json &t = j.at("training");
      for (const auto &[key, _] : t.items()) {
        if (!kTrainingKeys.count(key)) {
          throw ConfigError("unknown training field '" + key + "'");
        }
      }
      if (t.contains("learning_rate")) c.learning_rate = t.at("learning_rate").get<double>();
      read_field(t, "batch_size", &c.train.batch_size);
      read_field(t, "max_epochs", &c.train.max_epochs);
      read_field(t, "patience", &c.train.patience);
      read_field(t, "l2", &c.train.l2);
    }
  } catch (const Json::exception &e) {
    throw ConfigError(std::string("bad experiment config: ") + e.what());
  }
  return c;
}

Json ExperimentConfig::to_json() const {
  Json strategies_json = Json::array();
  for (auto s : strategies) strategies_json.push_back(strategy_name(s));
  Json grid_json = Json::array();
  for (const auto &g : grid) grid_json.push_back(g.name());
  Json j = {{"train", train_path},
            {"val", val_path},
            {"test", test_path},
            {"proportions", proportions},
            {"unknown_sets", unknown_sets},
            {"strategies", strategies_json},
            {"grid", grid_json},
            {"seeds", seeds},
            {"features", features},
            {"output_dir", output_dir},
            {"lowercase", lowercase},
            {"open_vocab", open_vocab},
            {"metric", metric_name(metric)},
            {"training",
             {{"learning_rate", resolved_learning_rate()},
              {"batch_size", train.batch_size},
              {"max_epochs", train.max_epochs},
              {"patience", train.patience},
              {"l2", train.l2}}}};
  j["gda_lambda"] = gda_lambda ? Json(*gda_lambda) : Json(nullptr);
  return j;
}

std::string ConfigPoint::label() const {
  std::string s;
  if (proportion) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "p=%g", *proportion);
    s = buf;
  } else {
    s = "unknown=";
    for (std::size_t i = 0; i < unknown_types.size(); ++i) {
      if (i) s += ",";
      s += unknown_types[i];
    }
  }
  return s + "/" + strategy_name(strategy) + "/" + detector.name();
}

Summary summarize(const std::vector<double> &values) {
  if (values.empty()) throw AllSeedsFailed();
  Summary s;
  s.count = values.size();
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  double sq = 0.0;
  for (double v : values) sq += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(sq / static_cast<double>(values.size()));
  return s;
}

PointAggregate aggregate(const std::vector<const CellResult *> &cells) {
  PointAggregate agg;
  std::map<std::string, std::vector<double>> values;
  for (const auto *cell : cells) {
    if (!cell->ok) {
      agg.failed_seeds.push_back(cell->seed);
      continue;
    }
    agg.completed += 1;
    for (const auto &[name, v] : cell->scores) values[name].push_back(v);
  }
  if (agg.completed == 0) throw AllSeedsFailed();
  for (const auto &[name, vs] : values) agg.scores[name] = summarize(vs);
  return agg;
}

std::map<std::string, double> flat_scores(const MetricsReport &m,
                                          const BenchmarkStats &stats,
                                          double calibration_f1) {
  std::map<std::string, double> s;
  s["ind_span_f1"] = m.ind_span.f1();
  s["nsd_span_precision"] = m.nsd_span.precision();
  s["nsd_span_recall"] = m.nsd_span.recall();
  s["nsd_span_f1"] = m.nsd_span.f1();
  s["nsd_token_precision"] = m.nsd_token.precision();
  s["nsd_token_recall"] = m.nsd_token.recall();
  s["nsd_token_f1"] = m.nsd_token.f1();
  for (const auto &r : m.rose_scores) {
    s["rose_" + std::to_string(static_cast<int>(std::lround(r.proportion * 100)))] =
        r.reported;
  }
  s["rose_mean"] = m.rose_mean;
  s["calibration_token_f1"] = calibration_f1;
  s["removed_train_fraction"] = stats.removed_train_fraction;
  s["test_unknown_value_percentage"] = stats.test_unknown_value_percentage();
  s["oov_word_percentage"] = stats.oov_word_percentage;
  s["unknown_slot_types"] = static_cast<double>(stats.train.unknown_slot_types);
  return s;
}

namespace {

struct UnknownSpec {
  std::optional<double> proportion;
  std::vector<std::string> types;
};

FeatureCorpus select_rows(const FeatureCorpus &all, const std::vector<std::size_t> &idx) {
  FeatureCorpus out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(all[i]);
  return out;
}

struct SourceFeatures {
  FeatureCorpus train;
  FeatureCorpus val;
  FeatureCorpus test;
};

}  // namespace

RunReport run_experiment(const ExperimentConfig &config) {
  config.validate();
  RunReport report;
  report.config = config;

  bool any_mask = false;
  for (auto s : config.strategies) any_mask = any_mask || s == Strategy::kMask;
  ParseOptions train_options;
  train_options.allow_novel = false;
  train_options.reject_mask_token = any_mask;
  ParseOptions eval_options;
  eval_options.reject_mask_token = any_mask;
  auto source = std::make_shared<CorpusSplits>();
  source->train.utterances = read_conll_file(config.train_path, train_options);
  source->val.utterances = read_conll_file(config.val_path, eval_options);
  source->test.utterances = read_conll_file(config.test_path, eval_options);
  const SlotSchema schema = derive_schema(source->train);

  const FeatureSource feature_source = FeatureSource::parse(config.features);
  std::optional<SourceFeatures> precomputed;
  if (feature_source.kind == FeatureSource::Kind::kFile) {
    precomputed = SourceFeatures{
        extract_features(feature_source, source->train.utterances, "train"),
        extract_features(feature_source, source->val.utterances, "val"),
        extract_features(feature_source, source->test.utterances, "test")};
  }

  std::vector<UnknownSpec> unknown_specs;
  for (double p : config.proportions) unknown_specs.push_back({p, {}});
  for (const auto &set : config.unknown_sets) unknown_specs.push_back({std::nullopt, set});

  bool need_binary_tagger = false;
  bool need_gda_multiple = false;
  bool need_gda_binary = false;
  for (const auto &spec : config.grid) {
    if (spec.method == DetectionMethod::kMsp) {
      need_binary_tagger = need_binary_tagger || spec.objective != DetectorObjective::kMultiple;
    } else if (spec.objective == DetectorObjective::kBinary) {
      need_gda_binary = true;
    } else {
      need_gda_multiple = true;
    }
  }

  for (const auto &u : unknown_specs) {
    for (auto strategy : config.strategies) {
      const std::size_t first_point = report.points.size();
      for (const auto &spec : config.grid) {
        report.points.push_back({u.proportion, u.types, strategy, spec});
      }
      for (auto seed : config.seeds) {
        std::vector<CellResult> cells(config.grid.size());
        for (std::size_t g = 0; g < cells.size(); ++g) {
          cells[g].point = first_point + g;
          cells[g].seed = seed;
        }
        try {
          NsdConfig nsd;
          nsd.proportion = u.proportion;
          nsd.explicit_unknown = u.types;
          nsd.strategy = strategy;
          nsd.seed = seed;
          const NsdBenchmark bench = build_benchmark(source, schema, nsd);
          const BenchmarkStats stats = benchmark_stats(bench, config.lowercase);
          const Corpus &train = bench.splits.train.utterances;
          const Corpus &val = bench.splits.val.utterances;
          const Corpus &test = bench.splits.test.utterances;

          FeatureCorpus train_f;
          FeatureCorpus val_f;
          FeatureCorpus test_f;
          if (precomputed) {
            train_f = select_rows(precomputed->train, bench.train_source_indices);
            val_f = precomputed->val;
            test_f = precomputed->test;
          } else {
            train_f = hash_corpus(train, feature_source.hashed);
            val_f = hash_corpus(val, feature_source.hashed);
            test_f = hash_corpus(test, feature_source.hashed);
          }

          TrainConfig tc = config.train;
          tc.learning_rate = config.resolved_learning_rate();
          tc.seed = seed;
          const TrainResult multiple =
              train_tagger(train, train_f, Objective::kMultiple, bench.in_domain_schema,
                           tc, val, val_f);
          std::optional<TrainResult> binary;
          if (need_binary_tagger) {
            binary = train_tagger(train, train_f, Objective::kBinary,
                                  bench.in_domain_schema, tc, val, val_f);
          }
          GdaOptions gda_options{config.gda_lambda, config.metric};
          std::optional<GdaModel> gda_multiple;
          std::optional<GdaModel> gda_binary;
          if (need_gda_multiple) {
            gda_multiple = fit_gda(train, train_f, Objective::kMultiple,
                                   bench.in_domain_schema, gda_options);
          }
          if (need_gda_binary) {
            gda_binary = fit_gda(train, train_f, Objective::kBinary,
                                 bench.in_domain_schema, gda_options);
          }

          for (std::size_t g = 0; g < cells.size(); ++g) {
            const auto &spec = config.grid[g];
            CellResult &cell = cells[g];
            cell.unknown_types = bench.unknown_types;
            cell.benchmark = stats;
            try {
              DetectorModels models;
              models.multiple = &multiple.model;
              models.binary = binary ? &binary->model : nullptr;
              if (spec.method == DetectionMethod::kGda) {
                models.gda = spec.objective == DetectorObjective::kBinary
                                 ? &*gda_binary
                                 : &*gda_multiple;
              }
              DetectorConfig dc{spec.method, spec.objective, spec.distance, {}, 0.0};
              const CalibrationReport cal = calibrate_detector(models, &dc, val, val_f);
              const PredictionSet preds = run_detection(models, dc, test, test_f);
              TagSequences pred_tags;
              for (const auto &p : preds) pred_tags.push_back(p.final_tags);
              cell.metrics = evaluate(pred_tags, tags_of(test), config.open_vocab);
              cell.detector = dc;
              cell.calibration_f1 = cal.token_f1;
              cell.scores = flat_scores(cell.metrics, stats, cal.token_f1);
              cell.ok = true;
            } catch (const std::exception &e) {
              cell.error = e.what();
            }
          }
        } catch (const std::exception &e) {
          for (auto &cell : cells) {
            cell.ok = false;
            cell.error = e.what();
          }
        }
        for (auto &cell : cells) report.cells.push_back(std::move(cell));
      }
    }
  }

  for (std::size_t p = 0; p < report.points.size(); ++p) {
    std::vector<const CellResult *> mine;
    for (const auto &cell : report.cells) {
      if (cell.point == p) mine.push_back(&cell);
    }
    try {
      report.aggregates.push_back(aggregate(mine));
    } catch (const AllSeedsFailed &e) {
      PointAggregate failed;
      for (const auto *cell : mine) failed.failed_seeds.push_back(cell->seed);
      failed.error = e.what();
      report.aggregates.push_back(std::move(failed));
    }
  }
  return report;
}

Json to_json(const RunReport &report) {
  Json points = Json::array();
  for (std::size_t p = 0; p < report.points.size(); ++p) {
    const auto &point = report.points[p];
    const auto &agg = report.aggregates[p];
    Json scores = Json::object();
    for (const auto &[name, s] : agg.scores) {
      scores[name] = {{"mean", round_score(s.mean)},
                      {"std", round_score(s.std)},
                      {"count", s.count}};
    }
    Json j = {{"index", p},
              {"label", point.label()},
              {"strategy", strategy_name(point.strategy)},
              {"detector", point.detector.name()},
              {"completed", agg.completed},
              {"failed_seeds", agg.failed_seeds},
              {"scores", scores}};
    if (point.proportion) {
      j["proportion"] = *point.proportion;
    } else {
      j["unknown_types"] = point.unknown_types;
    }
    if (!agg.error.empty()) j["error"] = agg.error;
    points.push_back(std::move(j));
  }
  Json cells = Json::array();
  for (const auto &cell : report.cells) {
    Json j = {{"point", cell.point}, {"seed", cell.seed}, {"ok", cell.ok}};
    if (!cell.ok) {
      j["error"] = cell.error;
    } else {
      Json scores = Json::object();
      for (const auto &[name, v] : cell.scores) scores[name] = round_score(v);
      j["unknown_types"] = cell.unknown_types;
      j["benchmark"] = to_json(cell.benchmark);
      j["detector"] = to_json(cell.detector);
      j["metrics"] = to_json(cell.metrics);
      j["scores"] = scores;
    }
    cells.push_back(std::move(j));
  }
  // The output directory is left out so reports from different locations
  // compare byte for byte.
  Json config = report.config.to_json();
  config.erase("output_dir");
  return {{"toolkit_version", kToolkitVersion},
          {"config", config},
          {"points", points},
          {"cells", cells}};
}

std::string report_csv(const RunReport &report) {
  auto quote = [](const std::string &s) {
    std::string out = "\"";
    for (char c : s) {
      if (c == '"') out += '"';
      out += c;
    }
    return out + "\"";
  };
  std::string out =
      "point,label,proportion,unknown_types,strategy,detector,metric,mean,std,"
      "completed,failed\n";
  char buf[64];
  for (std::size_t p = 0; p < report.points.size(); ++p) {
    const auto &point = report.points[p];
    const auto &agg = report.aggregates[p];
    std::string unknown;
    for (std::size_t i = 0; i < point.unknown_types.size(); ++i) {
      if (i) unknown += ";";
      unknown += point.unknown_types[i];
    }
    std::string prefix = std::to_string(p) + "," + quote(point.label()) + ",";
    if (point.proportion) {
      std::snprintf(buf, sizeof(buf), "%g", *point.proportion);
      prefix += buf;
    }
    prefix += "," + quote(unknown) + "," + strategy_name(point.strategy) + "," +
              quote(point.detector.name()) + ",";
    const std::string suffix = "," + std::to_string(agg.completed) + "," +
                               std::to_string(agg.failed_seeds.size()) + "\n";
    for (const auto &[name, s] : agg.scores) {
      std::snprintf(buf, sizeof(buf), ",%.6f,%.6f", round_score(s.mean),
                    round_score(s.std));
      out += prefix + name + buf + suffix;
    }
  }
  return out;
}

void write_report(const RunReport &report, const std::string &output_dir, bool force) {
  if (output_dir.empty()) throw ConfigError("output directory is not set");
  const std::string json_path = output_dir + "/report.json";
  const std::string csv_path = output_dir + "/report.csv";
  if (!force && (fs::exists(json_path) || fs::exists(csv_path))) {
    throw ConfigError("report exists in '" + output_dir + "'; use --force to overwrite");
  }
  fs::create_directories(output_dir);
  write_text_file(json_path, to_json(report).dump(2) + "\n");
  write_text_file(csv_path, report_csv(report));
}

}  // namespace nsd
