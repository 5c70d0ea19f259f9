// Acceptance run: one PASS/FAIL line per criterion on stdout, details on
// stderr. Trained models are cached in OCEAN_CACHE_DIR keyed by their full
// configuration text; delete the directory to retrain from scratch.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ocean/gradcheck_suite.hpp"
#include "ocean/ocean.hpp"
#include "oracles.hpp"

using namespace ocean;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

RunConfig with(std::initializer_list<std::pair<const char*, const char*>> kv) {
  RunConfig cfg;
  for (const auto& [k, v] : kv) set_config_value(cfg, k, v);
  cfg.validate();
  return cfg;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

struct TrainedModel {
  ModelParams<double> params;
  double train_seconds = 0;  // zero when loaded from the cache
};

TrainedModel trained(const std::string& tag, const RunConfig& cfg) {
  const fs::path dir(OCEAN_CACHE_DIR);
  fs::create_directories(dir);
  const fs::path weights = dir / (tag + ".ocwt"), key = dir / (tag + ".cfg");
  const std::string text = to_config_text(cfg);
  if (fs::exists(weights) && fs::exists(key) && slurp(key) == text) {
    std::cerr << "  [cache] " << tag << "\n";
    return {load_weights<double>(weights), 0.0};
  }
  std::cerr << "  [train] " << tag << " (" << cfg.train.total_steps() << " steps)\n";
  const auto t0 = Clock::now();
  auto result = train<double>(cfg.net, cfg.train);
  const double secs = seconds_since(t0);
  save_weights(weights, result.params);
  std::ofstream(key, std::ios::binary) << text;
  return {std::move(result.params), secs};
}

struct SuiteResult {
  std::vector<MetricsReport> continuous;
  std::vector<MetricsReport> restart;
  MetricsReport mean;
  std::size_t restart_failures = 0;
};

SuiteResult run_suite(const RunConfig& cfg, const ModelParams<double>& params,
                      const std::vector<SyntheticSceneConfig>& scenes) {
  auto shared = std::make_shared<const ModelParams<double>>(params);
  SuiteResult out;
  for (const auto& sc : scenes) {
    const auto seq = gen_sequence(sc);
    Tracker<double> a(cfg.net, shared, cfg.track);
    out.continuous.push_back(evaluate_continuous(run_continuous(a, seq), seq.gt));
    Tracker<double> b(cfg.net, shared, cfg.track);
    out.restart.push_back(evaluate_restart(b, seq));
    out.restart_failures += out.restart.back().failures;
  }
  out.mean = aggregate(out.continuous);
  return out;
}

// 1 -----------------------------------------------------------------------
Outcome gradient_suite() {
  const auto t0 = Clock::now();
  double worst_op = 0, worst_total = 0;
  std::string failed;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    for (const auto& c : gradcheck_suite(seed, 1e-4, 1e-3)) {
      const bool total = c.tol > 1e-4;
      (total ? worst_total : worst_op) = std::max(total ? worst_total : worst_op,
                                                  c.report.max_rel_err);
      if (!c.report.pass && failed.empty()) failed = c.name + " seed " + std::to_string(seed);
    }
  }
  const double secs = seconds_since(t0);
  return {failed.empty() && secs < 120,
          fmt("max rel err ops %.2e (tol 1e-4), end-to-end %.2e (tol 1e-3), 10 seeds, %.1fs%s",
              worst_op, worst_total, secs, failed.empty() ? "" : (" first failure " + failed).c_str())};
}

// 2 -----------------------------------------------------------------------
Outcome label_oracles() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<std::size_t> dims(3, 25);
  std::uniform_real_distribution<double> stride(2, 16), offset(-20, 40), pos(-30, 200),
      size(1, 120), radius(4, 40), dist(0, 60);
  std::size_t mismatches = 0;
  for (int n = 0; n < 100; ++n) {
    const GridSpec g{dims(rng), dims(rng), stride(rng), offset(rng)};
    const double x = pos(rng), y = pos(rng);
    const BBox gt{x, y, x + size(rng), y + size(rng)};
    const double r = radius(rng);
    const auto ref = oracle::labels(gt, g, r);
    const auto reg = regression_targets(gt, g);
    mismatches += !(reg.targets == ref.targets) + !(reg.mask == ref.mask);
    mismatches += !(classification_labels_regular(gt, g, r) == ref.regular);
    const auto boxes =
        decode_boxes(oracle::random_tensor(rng, {4, g.height, g.width}, 0, dist(rng) + 1), g);
    const auto oa = objectaware_labels(boxes, gt, reg.mask);
    for (std::size_t i = 0; i < g.height; ++i)
      for (std::size_t j = 0; j < g.width; ++j) {
        const double want = ref.mask(i, j) > 0 ? oracle::iou(box_at(boxes, i, j), gt) : 0.0;
        mismatches += oa(i, j) != want;
      }
  }
  const double secs = seconds_since(t0);
  return {mismatches == 0 && secs < 10,
          fmt("100 random (box, grid) instances, %zu mismatches, %.2fs", mismatches, secs)};
}

// 3 -----------------------------------------------------------------------
Outcome degeneration_identity() {
  std::mt19937_64 rng(33);
  std::uniform_int_distribution<std::size_t> ch(1, 6), sp(3, 14);
  std::size_t aligned_bad = 0, xcorr_bad = 0;
  for (int n = 0; n < 50; ++n) {
    const std::size_t ci = ch(rng), co = ch(rng), h = sp(rng), w = sp(rng);
    const std::size_t k = (n % 2) ? 3 : 5;
    const auto x = oracle::random_tensor(rng, {ci, h, w});
    const auto wt = oracle::random_tensor(rng, {co, ci, k, k});
    kernels::ConvGeometry geo;
    geo.padding = {k / 2, k / 2};
    const OffsetField zero{k, Tensor<double>({2 * k * k, h, w})};
    aligned_bad += !(aligned_conv(x, wt, zero) == kernels::conv2d(x, wt, geo));

    const std::size_t kh = std::min<std::size_t>(h, sp(rng) / 2 + 1),
                      kw = std::min<std::size_t>(w, sp(rng) / 2 + 1);
    const auto kern = oracle::random_tensor(rng, {ci, kh, kw});
    xcorr_bad += !(kernels::depthwise_xcorr(x, kern) == oracle::depthwise_xcorr(x, kern));
  }
  return {aligned_bad == 0 && xcorr_bad == 0,
          fmt("50 instances: aligned_conv(zero offsets) != conv2d in %zu, depthwise_xcorr != "
              "naive in %zu",
              aligned_bad, xcorr_bad)};
}

// 4 -----------------------------------------------------------------------
Outcome round_trip() {
  std::mt19937_64 rng(44);
  const GridSpec g = NetConfig{}.score_grid();
  std::uniform_real_distribution<double> pos(0, 110), size(4, 90);
  auto lattice = [](double v) { return std::round(v * 256) / 256; };
  std::size_t cells = 0, bad = 0;
  for (int n = 0; n < 100; ++n) {
    const double x = lattice(pos(rng)), y = lattice(pos(rng));
    const BBox gt{x, y, x + lattice(size(rng)), y + lattice(size(rng))};
    const auto enc = regression_targets(gt, g);
    const auto boxes = decode_boxes(enc.targets, g);
    for (std::size_t i = 0; i < g.height; ++i)
      for (std::size_t j = 0; j < g.width; ++j)
        if (enc.mask(i, j) > 0) {
          ++cells;
          bad += !(box_at(boxes, i, j) == gt);
        }
  }
  return {bad == 0 && cells > 0,
          fmt("100 boxes on the 1/256 px lattice, %zu in-box cells, %zu inexact", cells, bad)};
}

// 5 -----------------------------------------------------------------------
Outcome overfit_smoke() {
  const auto t0 = Clock::now();
  const RunConfig cfg;
  const auto sample = PairSampler<double>(cfg.net, cfg.train).sample(0);
  auto run = [&] {
    Trainer<double> trainer(cfg.net, cfg.train, init_params(cfg.net, cfg.train.seed));
    std::vector<double> losses;
    for (int s = 0; s < 200; ++s) losses.push_back(trainer.step({sample}, 5e-3, false).total);
    return losses;
  };
  const auto a = run(), b = run();
  const double secs = seconds_since(t0) / 2;
  const double drop = 1 - a.back() / a[9];
  return {drop >= 0.5 && a == b && secs < 300,
          fmt("loss %.4f at step 10 -> %.4f at step 200 (%.0f%% drop), repeat %s, %.1fs", a[9],
              a.back(), 100 * drop, a == b ? "identical" : "DIFFERS", secs)};
}

// 6 -----------------------------------------------------------------------
Outcome end_to_end(const RunConfig& cfg, const TrainedModel& model) {
  std::vector<SyntheticSceneConfig> scenes;
  for (std::uint64_t k = 0; k < 20; ++k) scenes.push_back(easy_scene(100001 + k));
  const auto res = run_suite(cfg, model.params, scenes);
  std::size_t moving = 0, beaten = 0;
  for (std::size_t k = 0; k < scenes.size(); ++k) {
    const auto seq = gen_sequence(scenes[k]);
    StaticBoxTracker still;
    const double base = evaluate_continuous(run_continuous(still, seq), seq.gt).ao;
    std::cerr << fmt("  easy %2zu  AO %.3f  static %.3f  restarts %zu\n", k,
                     res.continuous[k].ao, base, res.restart[k].failures);
    if (scenes[k].velocity_x != 0 || scenes[k].velocity_y != 0) {
      ++moving;
      beaten += res.continuous[k].ao > base;
    }
  }
  const bool timing_ok = model.train_seconds < 1800;
  return {res.mean.ao >= 0.55 && res.restart_failures == 0 && beaten == moving && timing_ok,
          fmt("AO %.3f (>= 0.55), failures %zu (= 0), beats static on %zu/%zu moving, "
              "training %s",
              res.mean.ao, res.restart_failures, beaten, moving,
              model.train_seconds > 0 ? fmt("%.0fs", model.train_seconds).c_str() : "cached")};
}

// 7 -----------------------------------------------------------------------
Outcome ablation(const RunConfig& full_cfg) {
  std::vector<SyntheticSceneConfig> scenes;
  for (std::uint64_t k = 0; k < 50; ++k) scenes.push_back(hard_scene(500001 + k));
  auto mean_ao = [&](const std::string& tag, RunConfig cfg) {
    double sum = 0;
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      cfg.set_seed(seed);
      const auto model = trained(tag + "_s" + std::to_string(seed), cfg);
      const double ao = run_suite(cfg, model.params, scenes).mean.ao;
      std::cerr << fmt("  %s seed %llu: hard AO %.4f\n", tag.c_str(),
                       static_cast<unsigned long long>(seed), ao);
      sum += ao;
    }
    return sum / 3;
  };
  RunConfig regular = full_cfg;
  regular.train.loss.lambda1 = 0;
  regular.track.omega = 0;
  RunConfig single = full_cfg;
  single.net.dilations = {{1, 1}};
  const double full = mean_ao("full", full_cfg);
  const double reg = mean_ao("regular_only", regular);
  const double one = mean_ao("single_branch", single);
  return {full >= reg && full >= one,
          fmt("hard AO: full %.4f vs regular-only %.4f, three-branch %.4f vs single (1,1) %.4f",
              full, reg, full, one)};
}

// 8 -----------------------------------------------------------------------
Outcome invariances() {
  std::mt19937_64 rng(88);
  std::uniform_real_distribution<double> pos(0.2, 5);
  std::size_t bad_penalty = 0, bad_scale = 0, bad_fuse = 0, bad_shift = 0;
  const NetConfig net;
  const GridSpec grid = net.score_grid();
  const SearchRegion region{100, 90, 128, 1.0, net.search_size};
  for (int n = 0; n < 100; ++n) {
    for (int k = 0; k < 5; ++k) bad_penalty += penalty(pos(rng), pos(rng), pos(rng), pos(rng), 0) != 1.0;
    ScoreMaps maps{oracle::random_tensor(rng, {grid.height, grid.width}, 0.01, 1),
                   oracle::random_tensor(rng, {grid.height, grid.width}, 0.01, 1),
                   oracle::random_tensor(rng, {4, grid.height, grid.width}, 2, 40)};
    const BBox prev = BBox::from_center(100, 90, 30, 25);
    TrackHyper flat;
    flat.k_pen = 0;
    const auto loc = localize(maps, grid, region, prev, flat);
    const auto peak = select_peak(fuse_scores(maps.p_o, maps.p_r, flat.omega),
                                  hanning_window(grid.height, grid.width), flat.window_weight);
    bad_penalty += loc.cell_i != peak.i || loc.cell_j != peak.j;

    const double c = std::uniform_real_distribution<double>(0.05, 20)(rng);
    ScoreMaps scaled = maps;
    for (auto& v : scaled.p_o.data()) v *= c;
    for (auto& v : scaled.p_r.data()) v *= c;
    const TrackHyper hyper;
    const auto a = localize(maps, grid, region, prev, hyper);
    const auto b = localize(scaled, grid, region, prev, hyper);
    bad_scale += a.cell_i != b.cell_i || a.cell_j != b.cell_j;

    bad_fuse += !(fuse_scores(maps.p_o, maps.p_r, 0) == maps.p_r);
    bad_fuse += !(fuse_scores(maps.p_o, maps.p_r, 1) == maps.p_o);
    bad_fuse += !(fuse_online(maps.p_o, maps.p_r, 0) == maps.p_r);
    bad_fuse += !(fuse_online(maps.p_o, maps.p_r, 1) == maps.p_o);

    std::uniform_real_distribution<double> corner(40, 70), side(10, 40);
    auto q = [](double v) { return std::round(v * 8) / 8; };
    const double x0 = q(corner(rng)), y0 = q(corner(rng));
    const BBox gt{x0, y0, x0 + q(side(rng)), y0 + q(side(rng))};
    const auto la = make_labels(gt, grid, 16);
    const auto lb = make_labels(gt.translated(grid.stride, grid.stride), grid, 16);
    for (std::size_t i = 0; i + 1 < grid.height; ++i)
      for (std::size_t j = 0; j + 1 < grid.width; ++j) {
        const std::size_t s = i * grid.width + j, t = (i + 1) * grid.width + j + 1;
        bad_shift += la.reg_mask[s] != lb.reg_mask[t] || la.cls_regular[s] != lb.cls_regular[t];
        for (std::size_t ch = 0; ch < 4; ++ch)
          bad_shift += la.reg_targets[ch * grid.cells() + s] != lb.reg_targets[ch * grid.cells() + t];
      }
  }
  const std::size_t total = bad_penalty + bad_scale + bad_fuse + bad_shift;
  return {total == 0, fmt("violations: penalty neutrality %zu, scale invariance %zu, fusion "
                          "endpoints %zu, label translation %zu (100 trials each)",
                          bad_penalty, bad_scale, bad_fuse, bad_shift)};
}

// 9 -----------------------------------------------------------------------
Outcome serialization(const ModelParams<double>& trained_params) {
  auto bytes = [](const ModelParams<double>& p) {
    std::stringstream ss;
    write_weights(ss, p);
    return ss.str();
  };
  auto round_trips = [&](const ModelParams<double>& p) {
    std::stringstream ss(bytes(p));
    const auto back = read_weights<double>(ss);
    return bytes(back) == bytes(p) && back == p;
  };
  const bool rt = round_trips(init_params(NetConfig{}, 17)) && round_trips(trained_params);
  RunConfig small = with({{"train.epochs", "2"}, {"train.pairs_per_epoch", "32"}, {"run.seed", "5"}});
  const auto a = train<double>(small.net, small.train).params;
  const auto b = train<double>(small.net, small.train).params;
  const bool same = bytes(a) == bytes(b);
  return {rt && same, fmt("round trip %s, two same-seed runs %s", rt ? "bit-exact" : "DIFFERS",
                          same ? "byte-identical" : "DIFFER")};
}

}  // namespace

int main() {
  std::cout.setf(std::ios::unitbuf);
  int failures = 0;
  auto report = [&](int id, const char* name, const std::function<Outcome()>& f) {
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << id << "  " << name << ": "
              << o.detail << "\n";
  };

  const RunConfig desk;
  report(1, "gradient suite", gradient_suite);
  report(2, "label oracle equivalence", label_oracles);
  report(3, "degeneration identity", degeneration_identity);
  report(4, "encode/decode round trip", round_trip);
  report(5, "overfit smoke", overfit_smoke);
  TrainedModel model;
  report(6, "end-to-end toy tracking", [&] {
    RunConfig cfg = desk;
    cfg.set_seed(1);
    model = trained("full_s1", cfg);
    return end_to_end(cfg, model);
  });
  report(7, "ablation trend", [&] { return ablation(desk); });
  report(8, "invariance suite", invariances);
  report(9, "serialization", [&] { return serialization(model.params); });
  std::cout << (failures ? std::to_string(failures) + " criterion(s) failed" : "all criteria passed")
            << "\n";
  return failures ? 1 : 0;
}
