// Command-line front end: corpus statistics, benchmark construction,
// training, detection, scoring and full experiment runs.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "nsd/benchmark.h"
#include "nsd/corpus.h"
#include "nsd/crf_tagger.h"
#include "nsd/detect.h"
#include "nsd/error.h"
#include "nsd/experiment.h"
#include "nsd/features.h"
#include "nsd/metrics.h"
#include "nsd/report.h"

namespace fs = std::filesystem;
using nsd::Json;

namespace {

std::vector<std::string> split_list(const std::string &text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string model_path(const std::string &dir, nsd::Objective objective) {
  return dir + "/model-" + nsd::objective_name(objective) + ".nsdm";
}

void refuse_overwrite(const std::string &path, bool force) {
  if (!force && fs::exists(path)) {
    throw nsd::ConfigError("'" + path + "' exists; use --force to overwrite");
  }
}

struct LoadedModel {
  nsd::TaggerModel model;
  Json meta;
};

LoadedModel load_tagger(const std::string &dir, nsd::Objective objective) {
  const std::string path = model_path(dir, objective);
  Json meta;
  try {
    meta = Json::parse(nsd::read_text_file(path + ".json"));
    auto tags = meta.at("tags").get<std::vector<std::string>>();
    return {nsd::load_model(path, std::move(tags)), meta};
  } catch (const Json::exception &e) {
    throw nsd::FormatError(path + ".json: " + e.what());
  }
}

nsd::CorpusSplits read_splits(const std::string &train, const std::string &val,
                              const std::string &test, bool reject_mask) {
  nsd::ParseOptions train_options;
  train_options.allow_novel = false;
  train_options.reject_mask_token = reject_mask;
  nsd::ParseOptions eval_options;
  eval_options.reject_mask_token = reject_mask;
  nsd::CorpusSplits splits;
  splits.train.utterances = nsd::read_conll_file(train, train_options);
  splits.val.utterances = nsd::read_conll_file(val, eval_options);
  splits.test.utterances = nsd::read_conll_file(test, eval_options);
  return splits;
}

struct EvalInput {
  nsd::TagSequences predicted;
  nsd::TagSequences gold;
};

EvalInput read_eval_input(const std::string &pred_path, const std::string &gold_path) {
  auto pred = nsd::read_predictions(pred_path);
  EvalInput in;
  in.predicted = std::move(pred.predicted);
  if (!gold_path.empty()) {
    in.gold = nsd::tags_of(nsd::read_conll_file(gold_path));
  } else if (!pred.gold.empty()) {
    in.gold = std::move(pred.gold);
  } else {
    throw nsd::ConfigError("two-column prediction file needs --gold");
  }
  return in;
}

}  // namespace

int main(int argc, char **argv) {
  CLI::App app{"Novel slot detection toolkit"};
  app.require_subcommand(0, 1);
  bool show_version = false;
  app.add_flag("--version", show_version, "Print toolkit and file format versions");

  // stats
  auto *stats = app.add_subcommand("stats", "Corpus statistics as JSON");
  std::string st_train, st_val, st_test;
  bool st_no_lower = false;
  stats->add_option("--train", st_train)->required()->check(CLI::ExistingFile);
  stats->add_option("--val", st_val)->required()->check(CLI::ExistingFile);
  stats->add_option("--test", st_test)->required()->check(CLI::ExistingFile);
  stats->add_flag("--no-lowercase", st_no_lower);

  // build
  auto *build = app.add_subcommand("build", "Construct an NSD benchmark");
  std::string b_train, b_val, b_test, b_out, b_strategy = "remove", b_unknown;
  std::optional<double> b_proportion;
  std::uint64_t b_seed = 0;
  bool b_force = false, b_no_lower = false;
  build->add_option("--train", b_train)->required()->check(CLI::ExistingFile);
  build->add_option("--val", b_val)->required()->check(CLI::ExistingFile);
  build->add_option("--test", b_test)->required()->check(CLI::ExistingFile);
  auto *b_prop_opt = build->add_option("--proportion", b_proportion);
  build->add_option("--unknown-types", b_unknown, "Comma-separated slot types")
      ->excludes(b_prop_opt);
  build->add_option("--strategy", b_strategy);
  build->add_option("--seed", b_seed);
  build->add_option("--out", b_out)->required();
  build->add_flag("--force", b_force);
  build->add_flag("--no-lowercase", b_no_lower);

  // train
  auto *train = app.add_subcommand("train", "Train a CRF tagger on a benchmark");
  std::string t_bench, t_objective = "multiple", t_features = "hashed:d=4096", t_out;
  nsd::TrainConfig tcfg;
  bool t_force = false;
  train->add_option("--benchmark", t_bench)->required()->check(CLI::ExistingDirectory);
  train->add_option("--objective", t_objective);
  train->add_option("--features", t_features);
  train->add_option("--out", t_out, "Model directory (default: the benchmark)");
  std::optional<double> t_lr;
  train->add_option("--lr", t_lr, "Default 0.1 for hashed features, 0.01 for files");
  train->add_option("--batch-size", tcfg.batch_size);
  train->add_option("--epochs", tcfg.max_epochs);
  train->add_option("--patience", tcfg.patience);
  train->add_option("--l2", tcfg.l2);
  train->add_option("--seed", tcfg.seed);
  train->add_flag("--force", t_force);

  // detect
  auto *detect = app.add_subcommand("detect", "Run a novel slot detector");
  std::string d_bench, d_method = "gda", d_objective = "multiple", d_distance = "minimum",
                       d_metric = "mahalanobis", d_features, d_models, d_split = "test",
                       d_out;
  std::optional<double> d_threshold, d_threshold_binary, d_lambda;
  bool d_calibrate = false, d_force = false;
  detect->add_option("--benchmark", d_bench)->required()->check(CLI::ExistingDirectory);
  detect->add_option("--method", d_method);
  detect->add_option("--objective", d_objective);
  detect->add_option("--distance", d_distance);
  detect->add_option("--metric", d_metric);
  detect->add_option("--lambda", d_lambda, "GDA covariance ridge");
  detect->add_option("--features", d_features, "Default: as used for training");
  detect->add_option("--models", d_models, "Model directory (default: the benchmark)");
  auto *thr = detect->add_option("--threshold", d_threshold);
  detect->add_option("--threshold-binary", d_threshold_binary);
  detect->add_flag("--calibrate", d_calibrate)->excludes(thr);
  detect->add_option("--split", d_split)->check(CLI::IsMember({"val", "test"}));
  detect->add_option("--out", d_out, "Prediction file (default: <benchmark>/predictions.conll)");
  detect->add_flag("--force", d_force);

  // eval / analyze
  auto *eval = app.add_subcommand("eval", "Score predictions");
  std::string e_pred, e_gold, e_open;
  eval->add_option("--pred", e_pred)->required()->check(CLI::ExistingFile);
  eval->add_option("--gold", e_gold)->check(CLI::ExistingFile);
  eval->add_option("--open-vocab", e_open);
  bool e_json = false;
  eval->add_flag("--json", e_json, "JSON only, without the text table");
  auto *analyze = app.add_subcommand("analyze", "Error category table");
  std::string a_pred, a_gold, a_open;
  analyze->add_option("--pred", a_pred)->required()->check(CLI::ExistingFile);
  analyze->add_option("--gold", a_gold)->check(CLI::ExistingFile);
  analyze->add_option("--open-vocab", a_open);
  bool a_json = false;
  analyze->add_flag("--json", a_json, "JSON only, without the text table");

  // run
  auto *run = app.add_subcommand("run", "Full experiment grid");
  std::string r_config, r_train, r_val, r_test, r_props, r_sets, r_strategies, r_grid,
      r_seeds, r_features, r_out, r_metric, r_open;
  std::optional<std::size_t> r_num_seeds, r_epochs, r_patience, r_batch;
  std::optional<std::uint64_t> r_base_seed;
  std::optional<double> r_lambda, r_lr, r_l2;
  bool r_force = false;
  std::optional<bool> r_lower;
  run->add_option("--config", r_config, "JSON experiment config")->check(CLI::ExistingFile);
  run->add_option("--train", r_train);
  run->add_option("--val", r_val);
  run->add_option("--test", r_test);
  run->add_option("--proportions", r_props, "Comma-separated, e.g. 0.05,0.15,0.3");
  run->add_option("--unknown-sets", r_sets, "Sets separated by ';', types by ','");
  run->add_option("--strategies", r_strategies);
  run->add_option("--grid", r_grid, "e.g. gda:multiple:minimum,msp:binary+multiple");
  run->add_option("--seeds", r_seeds);
  run->add_option("--num-seeds", r_num_seeds);
  run->add_option("--base-seed", r_base_seed);
  run->add_option("--features", r_features);
  run->add_option("--out", r_out);
  run->add_option("--metric", r_metric);
  run->add_option("--lambda", r_lambda);
  run->add_option("--open-vocab", r_open);
  run->add_option("--lr", r_lr);
  run->add_option("--l2", r_l2);
  run->add_option("--epochs", r_epochs);
  run->add_option("--patience", r_patience);
  run->add_option("--batch-size", r_batch);
  run->add_flag("--lowercase,!--no-lowercase", r_lower, "Override the config casing policy");
  run->add_flag("--force", r_force);

  CLI11_PARSE(app, argc, argv);

  try {
    if (show_version) {
      std::printf("nsd %s\nNSDE format %u\nNSDM format %u\n", nsd::kToolkitVersion,
                  nsd::kEmbeddingFormatVersion, nsd::kModelFormatVersion);
      return 0;
    }
    if (app.get_subcommands().empty()) {
      std::cout << app.help();
      return 2;
    }

    if (*stats) {
      const auto splits = read_splits(st_train, st_val, st_test, false);
      std::cout << nsd::to_json(nsd::compute_stats(splits, !st_no_lower)).dump(2) << "\n";
    } else if (*build) {
      nsd::NsdConfig cfg;
      cfg.proportion = b_proportion;
      cfg.explicit_unknown = split_list(b_unknown);
      cfg.strategy = nsd::parse_strategy(b_strategy);
      cfg.seed = b_seed;
      refuse_overwrite(b_out + "/benchmark.json", b_force);
      auto source = std::make_shared<nsd::CorpusSplits>(read_splits(
          b_train, b_val, b_test, cfg.strategy == nsd::Strategy::kMask));
      const auto schema = nsd::derive_schema(source->train);
      const auto bench = nsd::build_benchmark(source, schema, cfg);
      const auto bstats = nsd::benchmark_stats(bench, !b_no_lower);
      nsd::write_benchmark_dir(b_out, bench, bstats);
      std::cout << nsd::to_json(bstats).dump(2) << "\n";
    } else if (*train) {
      const auto objective = nsd::parse_objective(t_objective);
      const std::string out_dir = t_out.empty() ? t_bench : t_out;
      refuse_overwrite(model_path(out_dir, objective), t_force);
      const auto bench = nsd::read_benchmark_dir(t_bench);
      const auto source = nsd::FeatureSource::parse(t_features);
      tcfg.learning_rate = t_lr.value_or(nsd::default_learning_rate(source));
      const auto &tr = bench.splits.train.utterances;
      const auto &va = bench.splits.val.utterances;
      const auto train_f = nsd::extract_features(source, tr, "train");
      const auto val_f = nsd::extract_features(source, va, "val");
      const auto result =
          nsd::train_tagger(tr, train_f, objective, bench.in_domain_schema, tcfg, va, val_f);
      fs::create_directories(out_dir);
      nsd::save_model(model_path(out_dir, objective), result.model);
      Json history = Json::array();
      for (double v : result.val_history) history.push_back(nsd::round_score(v));
      Json meta = {{"objective", nsd::objective_name(objective)},
                   {"tags", result.model.tags()},
                   {"features", source.to_string()},
                   {"epochs_run", result.epochs_run},
                   {"best_epoch", result.best_epoch},
                   {"val_history", history},
                   {"training",
                    {{"learning_rate", tcfg.learning_rate},
                     {"batch_size", tcfg.batch_size},
                     {"max_epochs", tcfg.max_epochs},
                     {"patience", tcfg.patience},
                     {"l2", tcfg.l2},
                     {"seed", tcfg.seed}}}};
      nsd::write_text_file(model_path(out_dir, objective) + ".json", meta.dump(2) + "\n");
      std::cout << meta.dump(2) << "\n";
    } else if (*detect) {
      nsd::DetectorConfig cfg;
      cfg.method = nsd::parse_method(d_method);
      cfg.objective = nsd::parse_detector_objective(d_objective);
      cfg.distance = nsd::parse_distance_strategy(d_distance);
      cfg.validate();
      const std::string model_dir = d_models.empty() ? d_bench : d_models;
      const std::string pred_path =
          d_out.empty() ? d_bench + "/predictions.conll" : d_out;
      const std::string detector_path =
          (fs::path(pred_path).parent_path() / "detector.json").string();
      refuse_overwrite(pred_path, d_force);

      const auto bench = nsd::read_benchmark_dir(d_bench);
      const auto multiple = load_tagger(model_dir, nsd::Objective::kMultiple);
      std::optional<LoadedModel> binary;
      if (cfg.method == nsd::DetectionMethod::kMsp &&
          cfg.objective != nsd::DetectorObjective::kMultiple) {
        binary = load_tagger(model_dir, nsd::Objective::kBinary);
      }
      const auto source = nsd::FeatureSource::parse(
          d_features.empty() ? multiple.meta.value("features", std::string("hashed:d=4096"))
                             : d_features);
      const auto &splits = bench.splits;
      const auto &target = d_split == "val" ? splits.val.utterances : splits.test.utterances;
      const auto val_f = nsd::extract_features(source, splits.val.utterances, "val");
      const auto target_f =
          d_split == "val" ? val_f : nsd::extract_features(source, target, d_split);

      std::optional<nsd::GdaModel> gda;
      if (cfg.method == nsd::DetectionMethod::kGda) {
        const auto train_f =
            nsd::extract_features(source, splits.train.utterances, "train");
        gda = nsd::fit_gda(splits.train.utterances, train_f,
                           cfg.objective == nsd::DetectorObjective::kBinary
                               ? nsd::Objective::kBinary
                               : nsd::Objective::kMultiple,
                           bench.in_domain_schema,
                           nsd::GdaOptions{d_lambda, nsd::parse_metric(d_metric)});
      }
      nsd::DetectorModels models{&multiple.model, binary ? &binary->model : nullptr,
                                 gda ? &*gda : nullptr};
      Json detector_json;
      const bool manual = d_threshold.has_value() || d_threshold_binary.has_value();
      if (manual && !d_calibrate) {
        if (cfg.method == nsd::DetectionMethod::kGda) {
          if (!d_threshold) throw nsd::ConfigError("GDA needs --threshold");
          cfg.threshold = *d_threshold;
        } else {
          if (cfg.objective != nsd::DetectorObjective::kBinary) {
            if (!d_threshold) throw nsd::ConfigError("MSP multiple needs --threshold");
            cfg.msp.multiple = *d_threshold;
          }
          if (cfg.objective != nsd::DetectorObjective::kMultiple) {
            if (!d_threshold_binary) {
              throw nsd::ConfigError("MSP binary needs --threshold-binary");
            }
            cfg.msp.binary = *d_threshold_binary;
          }
        }
        detector_json = nsd::to_json(cfg);
        detector_json["calibrated"] = false;
      } else {
        const auto cal = nsd::calibrate_detector(models, &cfg, splits.val.utterances, val_f);
        detector_json = nsd::to_json(cfg);
        detector_json["calibrated"] = true;
        detector_json["calibration"] = nsd::to_json(cal);
      }
      if (gda) {
        detector_json["metric"] = nsd::metric_name(gda->metric());
        detector_json["lambda"] = gda->lambda();
        detector_json["classes"] = gda->class_names();
      }
      detector_json["features"] = source.to_string();
      const auto preds = nsd::run_detection(models, cfg, target, target_f);
      nsd::write_predictions(pred_path, preds, target);
      nsd::write_text_file(detector_path, detector_json.dump(2) + "\n");
      std::cout << nsd::to_json(cfg).dump(2) << "\n";
    } else if (*eval) {
      const auto in = read_eval_input(e_pred, e_gold);
      const auto report = nsd::evaluate(in.predicted, in.gold, split_list(e_open));
      std::cout << nsd::to_json(report).dump(2) << "\n";
      if (!e_json) std::cout << "\n" << nsd::format_report(report);
    } else if (*analyze) {
      const auto in = read_eval_input(a_pred, a_gold);
      const auto table = nsd::error_analysis(in.predicted, in.gold, split_list(a_open));
      std::cout << nsd::to_json(table).dump(2) << "\n";
      if (a_json) return 0;
      std::printf("%-20s %8s %8s %8s\n", "errors (%)", "O", "open", "other");
      std::printf("%-20s %8.2f %8.2f %8.2f\n", "Prediction is NS", table.prediction_is_ns[0],
                  table.prediction_is_ns[1], table.prediction_is_ns[2]);
      std::printf("%-20s %8.2f %8.2f %8.2f\n", "Target is NS", table.target_is_ns[0],
                  table.target_is_ns[1], table.target_is_ns[2]);
    } else if (*run) {
      nsd::ExperimentConfig cfg;
      if (!r_config.empty()) {
        try {
          cfg = nsd::ExperimentConfig::from_json(Json::parse(nsd::read_text_file(r_config)));
        } catch (const Json::parse_error &e) {
          throw nsd::ConfigError(r_config + ": " + e.what());
        }
      }
      if (!r_train.empty()) cfg.train_path = r_train;
      if (!r_val.empty()) cfg.val_path = r_val;
      if (!r_test.empty()) cfg.test_path = r_test;
      if (!r_props.empty()) {
        cfg.proportions.clear();
        for (const auto &p : split_list(r_props)) {
          try {
            cfg.proportions.push_back(std::stod(p));
          } catch (const std::logic_error &) {
            throw nsd::ConfigError("bad proportion '" + p + "'");
          }
        }
      }
      if (!r_sets.empty()) {
        cfg.unknown_sets.clear();
        std::stringstream ss(r_sets);
        std::string set;
        while (std::getline(ss, set, ';')) cfg.unknown_sets.push_back(split_list(set));
      }
      if (!r_strategies.empty()) {
        cfg.strategies.clear();
        for (const auto &s : split_list(r_strategies)) {
          cfg.strategies.push_back(nsd::parse_strategy(s));
        }
      }
      if (!r_grid.empty()) {
        cfg.grid.clear();
        for (const auto &g : split_list(r_grid)) cfg.grid.push_back(nsd::DetectorSpec::parse(g));
      }
      if (!r_seeds.empty()) {
        cfg.seeds.clear();
        for (const auto &s : split_list(r_seeds)) {
          try {
            cfg.seeds.push_back(std::stoull(s));
          } catch (const std::logic_error &) {
            throw nsd::ConfigError("bad seed '" + s + "'");
          }
        }
      } else if (r_num_seeds || r_base_seed) {
        const std::size_t n = r_num_seeds.value_or(cfg.seeds.size());
        const std::uint64_t base = r_base_seed.value_or(cfg.seeds.empty() ? 0 : cfg.seeds[0]);
        cfg.seeds.clear();
        for (std::size_t i = 0; i < n; ++i) cfg.seeds.push_back(base + i);
      }
      if (!r_features.empty()) cfg.features = r_features;
      if (!r_out.empty()) cfg.output_dir = r_out;
      if (!r_metric.empty()) cfg.metric = nsd::parse_metric(r_metric);
      if (r_lambda) cfg.gda_lambda = r_lambda;
      if (!r_open.empty()) cfg.open_vocab = split_list(r_open);
      if (r_lr) cfg.learning_rate = *r_lr;
      if (r_l2) cfg.train.l2 = *r_l2;
      if (r_epochs) cfg.train.max_epochs = *r_epochs;
      if (r_patience) cfg.train.patience = *r_patience;
      if (r_batch) cfg.train.batch_size = *r_batch;
      if (r_lower) cfg.lowercase = *r_lower;
      if (cfg.output_dir.empty()) throw nsd::ConfigError("--out is required");
      refuse_overwrite(cfg.output_dir + "/report.json", r_force);
      const auto report = nsd::run_experiment(cfg);
      nsd::write_report(report, cfg.output_dir, r_force);
      for (std::size_t p = 0; p < report.points.size(); ++p) {
        const auto &agg = report.aggregates[p];
        std::printf("%-48s", report.points[p].label().c_str());
        if (agg.completed == 0) {
          std::printf("  FAILED: %s\n", agg.error.c_str());
          continue;
        }
        for (const char *name : {"nsd_token_f1", "nsd_span_f1", "ind_span_f1", "rose_mean"}) {
          const auto &s = agg.scores.at(name);
          std::printf("  %s %.2f±%.2f", name, s.mean, s.std);
        }
        std::printf("  (%zu ok, %zu failed)\n", agg.completed, agg.failed_seeds.size());
      }
    }
  } catch (const nsd::Error &e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception &e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
