// carsac: synthetic data, training, estimation and benchmarking.
#include "cli_io.h"

#include "carsac/engine.h"
#include "carsac/evaluation.h"
#include "carsac/geometry.h"
#include "carsac/neural.h"
#include "carsac/synthetic.h"
#include "carsac/training.h"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace {

using carsac::Error;
using carsac::ErrorCode;
using json = nlohmann::json;

struct CommonFlags {
  std::string config;
  std::string model_kind;
  int batches = 0;
  int batch_size = 0;
  std::string budget;
  bool no_consensus = false;
};

void add_engine_flags(CLI::App* cmd, CommonFlags* f) {
  cmd->add_option("--config", f->config, "key = value configuration file");
  cmd->add_option("--model-kind", f->model_kind, "essential or fundamental");
  cmd->add_option("--batches", f->batches, "number of batches");
  cmd->add_option("--batch-size", f->batch_size, "minimal samples per batch");
  cmd->add_option("--budget", f->budget, "batches x batch size, e.g. 4x256");
  cmd->add_flag("--no-consensus", f->no_consensus, "disable the consensus state update");
}

carsac::TrainConfig resolve_config(const CommonFlags& f) {
  carsac::TrainConfig cfg;
  if (!f.config.empty()) carsac::cli::load_config_file(f.config, &cfg);
  if (!f.model_kind.empty()) cfg.engine.kind = carsac::model_kind_from_string(f.model_kind);
  if (!f.budget.empty()) {
    int b = 0;
    int s = 0;
    char x = 0;
    std::istringstream is(f.budget);
    if (!(is >> b >> x >> s) || x != 'x' || !is.eof()) {
      throw Error(ErrorCode::kInvalidArgument, "--budget must look like 4x256");
    }
    cfg.engine.batches = b;
    cfg.engine.batch_size = s;
  }
  if (f.batches > 0) cfg.engine.batches = f.batches;
  if (f.batch_size > 0) cfg.engine.batch_size = f.batch_size;
  if (f.no_consensus) cfg.engine.consensus_update = false;
  return cfg;
}

carsac::MlpBundle load_weights_or_explain(const std::string& path) {
  if (path.empty() || !std::filesystem::exists(path)) {
    throw Error(ErrorCode::kIo, "weights file '" + path +
                                    "' not found; create one with `carsac train`");
  }
  return carsac::load_weights_file(path);
}

json timing_json(const carsac::TimingBreakdown& t) {
  return json{{"state_init", t.state_init}, {"state_update", t.state_update},
              {"decoder", t.decoder},       {"sampling", t.sampling},
              {"solving", t.solving},       {"scoring", t.scoring},
              {"refinement", t.refinement}, {"total", t.total},
              {"learned_share", t.total > 0.0 ? t.learned() / t.total : 0.0}};
}

json matrix_json(const Eigen::Matrix3d& m) {
  json out = json::array();
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) out.push_back(m(r, c));
  }
  return out;
}

void write_json(const std::string& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot open " + path + " for writing");
  out << j.dump(2) << '\n';
  if (!out) throw Error(ErrorCode::kIo, "failed writing " + path);
}

// ---------------------------------------------------------------------------

struct SynthFlags {
  int pairs = -1;
  int n = 0;
  int n_min = 200;
  int n_max = 1000;
  double inlier_rate = -1.0;
  double rate_min = 0.1;
  double rate_max = 0.9;
  double noise = 0.5;
  double overlap = 0.5;
  std::uint64_t seed = 0;
  std::string out_dir;
};

void cmd_synth(const SynthFlags& f) {
  if (f.pairs < 1) throw Error(ErrorCode::kInvalidArgument, "--pairs must be at least 1");
  carsac::SuiteSpec spec;
  spec.pairs = f.pairs;
  spec.n_min = f.n > 0 ? f.n : f.n_min;
  spec.n_max = f.n > 0 ? f.n : f.n_max;
  spec.rate_min = f.inlier_rate >= 0.0 ? f.inlier_rate : f.rate_min;
  spec.rate_max = f.inlier_rate >= 0.0 ? f.inlier_rate : f.rate_max;
  spec.noise_px = f.noise;
  spec.side_overlap = f.overlap;
  spec.seed = f.seed;
  carsac::cli::write_dataset(f.out_dir, carsac::generate_suite(spec));
}

struct TrainFlags {
  CommonFlags common;
  std::string data;
  std::string val;
  int epochs = -1;
  double lr = -1.0;
  std::uint64_t seed = 0;
  std::string out_weights;
  std::string init_weights;
  std::string log;
};

void cmd_train(const TrainFlags& f, bool seed_given) {
  carsac::TrainConfig cfg = resolve_config(f.common);
  if (f.epochs >= 0) cfg.epochs = f.epochs;
  if (f.lr > 0.0) cfg.learning_rate = f.lr;
  if (seed_given) cfg.seed = f.seed;
  const std::vector<carsac::SyntheticPair> train_set = carsac::cli::read_dataset(f.data);
  std::vector<carsac::SyntheticPair> val_set;
  if (!f.val.empty()) val_set = carsac::cli::read_dataset(f.val);

  const carsac::MlpBundle init = f.init_weights.empty() ? carsac::MlpBundle::glorot(cfg.seed)
                                                        : carsac::load_weights_file(f.init_weights);
  const std::string log_path = f.log.empty() ? f.out_weights + ".log" : f.log;
  std::ofstream log(log_path, std::ios::binary);
  if (!log) throw Error(ErrorCode::kIo, "cannot open " + log_path + " for writing");
  log << "epoch train_loss val_loss alpha\n";
  const carsac::TrainResult result =
      carsac::train(train_set, val_set, init, cfg, [&](const carsac::TrainLogEntry& e) {
        log << e.epoch << ' ' << carsac::cli::format_double(e.train_loss) << ' '
            << carsac::cli::format_double(e.val_loss) << ' ' << carsac::cli::format_double(e.alpha)
            << '\n';
        log.flush();
      });
  carsac::save_weights_file(result.bundle, f.out_weights);
}

struct EstimateFlags {
  CommonFlags common;
  std::string matches;
  std::string calib;
  std::string pose;
  std::string weights;
  std::uint64_t seed = 0;
  std::string report;
  bool timing = false;
};

void cmd_estimate(const EstimateFlags& f, bool seed_given) {
  carsac::TrainConfig cfg = resolve_config(f.common);
  if (seed_given) cfg.seed = f.seed;
  cfg.engine.sampler.rng_seed = cfg.seed;
  if (cfg.engine.kind == carsac::ModelKind::kEssential && f.calib.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "--model-kind essential requires --calib");
  }
  const std::vector<carsac::Correspondence> matches = carsac::cli::read_matches(f.matches);
  std::optional<carsac::Calibration> calib;
  if (!f.calib.empty()) calib = carsac::cli::read_calibration(f.calib);
  const carsac::MlpBundle bundle = load_weights_or_explain(f.weights);

  const carsac::PreparedData data = carsac::prepare_data(matches, cfg.engine, calib);
  const carsac::EstimationResult result = carsac::ca_ransac(data, bundle, cfg.engine);

  json report;
  report["model_kind"] = carsac::to_string(result.model.kind());
  report["model"] = matrix_json(result.model.matrix());
  report["batches"] = cfg.engine.batches;
  report["batch_size"] = cfg.engine.batch_size;
  report["per_batch_best_score"] = result.per_batch_best_score;
  report["inlier_probs"] = std::vector<double>(result.inlier_probs.data(),
                                               result.inlier_probs.data() + result.inlier_probs.size());
  if (calib) {
    try {
      const carsac::RelativePose pose = carsac::pose_from_model(result.model, data, *calib);
      report["pose"] = json{{"R", matrix_json(pose.rotation)},
                            {"t", {pose.translation.x(), pose.translation.y(), pose.translation.z()}}};
      if (!f.pose.empty()) {
        report["pose_error_deg"] = carsac::pose_error_deg(pose, carsac::cli::read_pose(f.pose));
      }
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kPoseUndecidable) throw;
      report["pose"] = nullptr;
    }
  }
  if (f.timing) report["timing"] = timing_json(result.timing);
  write_json(f.report, report);
}

struct BenchFlags {
  CommonFlags common;
  std::string data;
  std::string methods = "ca,msac,lmlo";
  std::string weights;
  std::string seeds = "0";
  std::string out;
  bool timing = false;
};

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(s);
  while (std::getline(is, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void cmd_bench(const BenchFlags& f) {
  const carsac::TrainConfig cfg = resolve_config(f.common);
  std::vector<carsac::Method> methods;
  for (const std::string& m : split_commas(f.methods)) methods.push_back(carsac::method_from_string(m));
  if (methods.empty()) throw Error(ErrorCode::kInvalidArgument, "--methods is empty");
  carsac::BenchmarkConfig bcfg;
  bcfg.engine = cfg.engine;
  bcfg.seeds.clear();
  for (const std::string& s : split_commas(f.seeds)) {
    try {
      bcfg.seeds.push_back(std::stoull(s));
    } catch (const std::exception&) {
      throw Error(ErrorCode::kInvalidArgument, "invalid seed '" + s + "'");
    }
  }
  std::optional<carsac::MlpBundle> bundle;
  if (std::find(methods.begin(), methods.end(), carsac::Method::kCa) != methods.end()) {
    bundle = load_weights_or_explain(f.weights);
  }
  const std::vector<carsac::SyntheticPair> dataset = carsac::cli::read_dataset(f.data);
  const std::vector<carsac::MetricReport> reports =
      carsac::benchmark(methods, dataset, bundle ? &*bundle : nullptr, bcfg);

  std::printf("%-8s %8s %8s %8s %9s %9s %6s%s\n", "method", "AUC5", "AUC1", "MAP20", "Med", "Avg",
              "fail", f.timing ? "  learned" : "");
  json out = json::array();
  for (const carsac::MetricReport& r : reports) {
    std::printf("%-8s %8.2f %8.2f %8.2f %9.4f %9.4f %6d", r.method.c_str(), r.auc5, r.auc1, r.map20,
                r.median_deg, r.avg_deg, r.failures);
    if (f.timing) {
      const double share = r.timing.total > 0.0 ? 100.0 * r.timing.learned() / r.timing.total : 0.0;
      std::printf("  %6.1f%%", share);
    }
    std::printf("\n");
    json j{{"method", r.method},         {"auc5", r.auc5},         {"auc1", r.auc1},
           {"map20", r.map20},           {"median_deg", r.median_deg}, {"avg_deg", r.avg_deg},
           {"failures", r.failures},     {"per_pair_errors", r.per_pair_errors}};
    if (f.timing) j["timing"] = timing_json(r.timing);
    out.push_back(j);
  }
  if (!f.out.empty()) write_json(f.out, json{{"batches", bcfg.engine.batches},
                                             {"batch_size", bcfg.engine.batch_size},
                                             {"reports", out}});
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Consensus-adaptive RANSAC for two-view geometry"};
  app.require_subcommand(1);

  SynthFlags synth;
  CLI::App* synth_cmd = app.add_subcommand("synth", "generate a synthetic dataset");
  synth_cmd->add_option("--pairs", synth.pairs, "number of image pairs")->required();
  synth_cmd->add_option("--n", synth.n, "correspondences per pair (fixed)");
  synth_cmd->add_option("--n-min", synth.n_min, "minimum correspondences per pair");
  synth_cmd->add_option("--n-max", synth.n_max, "maximum correspondences per pair");
  synth_cmd->add_option("--inlier-rate", synth.inlier_rate, "inlier rate (fixed)");
  synth_cmd->add_option("--rate-min", synth.rate_min, "minimum inlier rate");
  synth_cmd->add_option("--rate-max", synth.rate_max, "maximum inlier rate");
  synth_cmd->add_option("--noise", synth.noise, "inlier pixel noise sigma");
  synth_cmd->add_option("--overlap", synth.overlap, "side-info overlap in [0, 1]");
  synth_cmd->add_option("--seed", synth.seed, "random seed");
  synth_cmd->add_option("--out-dir", synth.out_dir, "output directory")->required();

  TrainFlags train;
  CLI::App* train_cmd = app.add_subcommand("train", "train the networks on a dataset");
  add_engine_flags(train_cmd, &train.common);
  train_cmd->add_option("--data", train.data, "training dataset directory")->required();
  train_cmd->add_option("--val", train.val, "validation dataset directory");
  train_cmd->add_option("--epochs", train.epochs, "training epochs");
  train_cmd->add_option("--lr", train.lr, "learning rate");
  CLI::Option* train_seed = train_cmd->add_option("--seed", train.seed, "random seed");
  train_cmd->add_option("--init-weights", train.init_weights, "start from these weights");
  train_cmd->add_option("--out-weights", train.out_weights, "output weights file")->required();
  train_cmd->add_option("--log", train.log, "training log (default: <out-weights>.log)");

  EstimateFlags est;
  CLI::App* est_cmd = app.add_subcommand("estimate", "estimate a model for one pair");
  add_engine_flags(est_cmd, &est.common);
  est_cmd->add_option("--matches", est.matches, "matches file")->required();
  est_cmd->add_option("--calib", est.calib, "calibration file");
  est_cmd->add_option("--pose", est.pose, "ground-truth pose file, adds the pose error");
  est_cmd->add_option("--weights", est.weights, "weights file")->required();
  CLI::Option* est_seed = est_cmd->add_option("--seed", est.seed, "random seed");
  est_cmd->add_option("--report", est.report, "output report (JSON)")->required();
  est_cmd->add_flag("--timing", est.timing, "include the timing breakdown");

  BenchFlags bench;
  CLI::App* bench_cmd = app.add_subcommand("bench", "compare methods on a dataset");
  add_engine_flags(bench_cmd, &bench.common);
  bench_cmd->add_option("--data", bench.data, "dataset directory")->required();
  bench_cmd->add_option("--methods", bench.methods, "comma-separated: ca, msac, lmlo, oracle");
  bench_cmd->add_option("--weights", bench.weights, "weights file (for ca)");
  bench_cmd->add_option("--seeds", bench.seeds, "comma-separated seeds");
  bench_cmd->add_option("--out", bench.out, "output report (JSON)");
  bench_cmd->add_flag("--timing", bench.timing, "report the timing breakdown");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*synth_cmd) cmd_synth(synth);
    if (*train_cmd) cmd_train(train, train_seed->count() > 0);
    if (*est_cmd) cmd_estimate(est, est_seed->count() > 0);
    if (*bench_cmd) cmd_bench(bench);
  } catch (const std::exception& e) {
    std::string msg = e.what();
    for (char& c : msg) {
      if (c == '\n') c = ' ';
    }
    std::fprintf(stderr, "carsac: error: %s\n", msg.c_str());
    return 1;
  }
  return 0;
}
