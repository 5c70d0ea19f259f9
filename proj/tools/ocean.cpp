#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ocean/gradcheck_suite.hpp"
#include "ocean/ocean.hpp"

namespace fs = std::filesystem;
using namespace ocean;

namespace {

constexpr int kOk = 0;
constexpr int kConfig = 2;
constexpr int kNumeric = 3;
constexpr int kArtifact = 4;

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string weights;
  bool emit_scores = false;
  std::string online_provider = "none";
  std::vector<std::string> sequences;
  std::vector<std::string> predictions;
  std::vector<std::string> ground_truth;
  std::size_t seeds = 10;
};

RunConfig resolve_config(const Options& o, bool required) {
  RunConfig cfg;
  if (!o.config.empty()) {
    cfg = load_config(o.config);
  } else if (required) {
    throw ConfigError("--config is required");
  }
  if (o.seed) cfg.set_seed(*o.seed);
  cfg.validate();
  return cfg;
}

fs::path require_out(const Options& o) {
  if (o.out.empty()) throw ConfigError("--out is required");
  fs::create_directories(o.out);
  return o.out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path);
  if (!os || !(os << text)) throw ArtifactError("cannot write " + path.string());
}

int cmd_gen(const Options& o) {
  const RunConfig cfg = resolve_config(o, true);
  const fs::path out = require_out(o);
  for (std::size_t k = 0; k < cfg.scene_count; ++k) {
    char name[32];
    std::snprintf(name, sizeof name, "seq_%03zu", k);
    save_sequence(out / name, gen_sequence(cfg.scene_config(k)));
  }
  write_text(out / "config.resolved", to_config_text(cfg));
  std::cout << "generated " << cfg.scene_count << " sequence(s) in " << out.string() << "\n";
  return kOk;
}

template <typename T>
ModelParams<double> run_training(const RunConfig& cfg, const fs::path& out,
                                 const ModelParams<double>* init) {
  TrainHooks hooks;
  hooks.checkpoint_on_failure = out / "last_good.ocwt";
  const std::size_t every = std::max<std::size_t>(1, cfg.train.total_steps() / 20);
  hooks.on_step = [&](const HistoryRow& r) {
    if (r.step % every == 0 || r.step + 1 == cfg.train.total_steps()) {
      std::fprintf(stderr, "step %zu/%zu lr=%.3g loss=%.5f\n", r.step + 1,
                   cfg.train.total_steps(), r.lr, r.loss.total);
    }
  };
  auto result = train<T>(cfg.net, cfg.train, hooks, init);
  write_loss_csv(out / "loss.csv", result.history);
  return std::move(result.params);
}

int cmd_train(const Options& o) {
  const RunConfig cfg = resolve_config(o, true);
  const fs::path out = require_out(o);
  std::optional<ModelParams<double>> init;
  if (!o.weights.empty()) {
    init = load_weights<double>(o.weights);
    check_params(*init, cfg.net);
  }
  write_text(out / "config.resolved", to_config_text(cfg));
  const auto* init_ptr = init ? &*init : nullptr;
  const auto params = cfg.precision == Precision::f32 ? run_training<float>(cfg, out, init_ptr)
                                                      : run_training<double>(cfg, out, init_ptr);
  save_weights(out / "weights.ocwt", params);
  std::cout << "wrote " << (out / "weights.ocwt").string() << " and "
            << (out / "loss.csv").string() << "\n";
  return kOk;
}

nlohmann::json score_json(const Localization& loc) {
  nlohmann::json rows = nlohmann::json::array();
  const auto& s = loc.score;
  for (std::size_t i = 0; i < s.dim(0); ++i) {
    std::vector<double> row(s.dim(1));
    for (std::size_t j = 0; j < s.dim(1); ++j) row[j] = s(i, j);
    rows.push_back(row);
  }
  return {{"peak", {loc.cell_i, loc.cell_j}}, {"score", rows}};
}

template <typename T>
void track_one(const RunConfig& cfg, std::shared_ptr<const ModelParams<T>> params,
               const fs::path& seq_dir, const fs::path& out, bool emit_scores) {
  const Sequence seq = load_sequence(seq_dir);
  Tracker<T> tracker(cfg.net, std::move(params), cfg.track);
  std::vector<BBox> log{seq.gt[0]};
  nlohmann::json frames = nlohmann::json::array();
  tracker.init(seq.frames[0], seq.gt[0]);
  for (std::size_t t = 1; t < seq.frames.size(); ++t) {
    const Localization loc = tracker.step(seq.frames[t]);
    log.push_back(loc.box);
    if (emit_scores) {
      auto j = score_json(loc);
      j["frame"] = t;
      frames.push_back(std::move(j));
    }
  }
  const std::string name = seq_dir.filename().empty() ? seq_dir.parent_path().filename().string()
                                                      : seq_dir.filename().string();
  write_box_log(out / (name + ".txt"), log);
  if (emit_scores) write_text(out / (name + "_scores.json"), frames.dump() + "\n");
}

int cmd_track(const Options& o) {
  const RunConfig cfg = resolve_config(o, false);
  if (o.weights.empty()) throw ConfigError("--weights is required");
  if (o.sequences.empty()) throw ConfigError("track needs at least one sequence directory");
  if (o.online_provider != "none") {
    throw ConfigError("--online-provider: unknown provider '" + o.online_provider +
                      "' (available: none)");
  }
  const fs::path out = require_out(o);
  const auto params = load_weights<double>(o.weights);
  check_params(params, cfg.net);
  for (const auto& dir : o.sequences) {
    if (cfg.precision == Precision::f32) {
      ModelParams<float> p32;
      for (const auto& [name, t] : params) p32.emplace(name, t.cast<float>());
      track_one<float>(cfg, std::make_shared<const ModelParams<float>>(std::move(p32)), dir, out,
                       o.emit_scores);
    } else {
      track_one<double>(cfg, std::make_shared<const ModelParams<double>>(params), dir, out,
                        o.emit_scores);
    }
  }
  return kOk;
}

int cmd_eval(const Options& o) {
  if (o.predictions.empty() || o.predictions.size() != o.ground_truth.size()) {
    throw ConfigError("eval needs matching --pred and --gt lists");
  }
  std::vector<MetricsReport> reports;
  for (std::size_t k = 0; k < o.predictions.size(); ++k) {
    reports.push_back(
        evaluate_continuous(read_box_log(o.predictions[k]), read_box_log(o.ground_truth[k])));
  }
  const std::string text = to_key_value(aggregate(reports));
  if (!o.out.empty()) {
    const fs::path out(o.out);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    write_text(out, text);
  }
  std::cout << text;
  return kOk;
}

int cmd_gradcheck(const Options& o) {
  const std::uint64_t first = o.seed.value_or(1);
  bool ok = true;
  for (std::uint64_t s = first; s < first + o.seeds; ++s) {
    for (const auto& c : gradcheck_suite(s)) {
      std::printf("seed %-3llu %-28s max_rel_err=%.3e tol=%.0e %s\n",
                  static_cast<unsigned long long>(s), c.name.c_str(), c.report.max_rel_err, c.tol,
                  c.report.pass ? "ok" : "FAIL");
      ok = ok && c.report.pass;
    }
  }
  return ok ? kOk : kNumeric;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Object-aware anchor-free tracker"};
  app.require_subcommand(1);
  Options o;

  auto add_config = [&](CLI::App* c) { c->add_option("--config", o.config, "Run configuration file"); };
  auto add_seed = [&](CLI::App* c) { c->add_option("--seed", o.seed, "Run seed"); };

  auto* gen = app.add_subcommand("gen", "Generate synthetic sequences");
  add_config(gen);
  add_seed(gen);
  gen->add_option("--out", o.out, "Output directory");

  auto* tr = app.add_subcommand("train", "Train a model");
  add_config(tr);
  add_seed(tr);
  tr->add_option("--out", o.out, "Output directory");
  tr->add_option("--weights", o.weights, "Initial weights");

  auto* track = app.add_subcommand("track", "Track sequences");
  add_config(track);
  track->add_option("--weights", o.weights, "Model weights");
  track->add_option("--out", o.out, "Output directory for prediction logs");
  track->add_flag("--emit-scores", o.emit_scores, "Write per-frame fused score maps as JSON");
  track->add_option("--online-provider", o.online_provider, "Online score provider (none)");
  track->add_option("sequences", o.sequences, "Sequence directories");

  auto* ev = app.add_subcommand("eval", "Score prediction logs against ground truth");
  ev->add_option("--pred", o.predictions, "Prediction logs")->expected(1, -1);
  ev->add_option("--gt", o.ground_truth, "Ground-truth logs")->expected(1, -1);
  ev->add_option("--out", o.out, "Report file");

  auto* gc = app.add_subcommand("gradcheck", "Run the gradient-check suite");
  add_seed(gc);
  gc->add_option("--seeds", o.seeds, "Number of consecutive seeds");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (gen->parsed()) return cmd_gen(o);
    if (tr->parsed()) return cmd_train(o);
    if (track->parsed()) return cmd_track(o);
    if (ev->parsed()) return cmd_eval(o);
    if (gc->parsed()) return cmd_gradcheck(o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const IngestionError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kConfig;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kNumeric;
  } catch (const ArtifactError& e) {
    std::cerr << "artifact error: " << e.what() << "\n";
    return kArtifact;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kConfig;
}
