#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ocean/metrics.hpp"
#include "ocean/sequence_io.hpp"
#include "ocean/synthetic.hpp"
#include "ocean/train.hpp"
#include "ocean/weights_io.hpp"
#include "oracles.hpp"

using namespace ocean;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("ocean_harness_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

bool same_bits(const ModelParams<double>& a, const ModelParams<double>& b) {
  if (a.size() != b.size()) return false;
  for (const auto& [name, t] : a) {
    const auto it = b.find(name);
    if (it == b.end() || it->second.shape() != t.shape()) return false;
    if (std::memcmp(t.data().data(), it->second.data().data(), t.size() * sizeof(double)) != 0)
      return false;
  }
  return true;
}

struct OracleTracker {
  const std::vector<BBox>* gt = nullptr;
  std::size_t t = 0;
  void init(const Image&, const BBox&) {}
  BBox track(const Image&) { return (*gt)[++t]; }
};

// Returns ground truth except on scripted frames, where it returns a far-away box.
struct ScriptedTracker {
  const std::vector<BBox>* gt = nullptr;
  std::vector<std::size_t> bad;
  std::size_t t = 0;
  std::vector<std::size_t> inits;
  void init(const Image&, const BBox& b) {
    for (std::size_t k = 0; k < gt->size(); ++k)
      if ((*gt)[k] == b) t = k;
    inits.push_back(t);
  }
  BBox track(const Image&) {
    ++t;
    for (auto f : bad)
      if (f == t) return BBox{1000, 1000, 1001, 1001};
    return (*gt)[t];
  }
};

TrainConfig tiny_schedule() {
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.pairs_per_epoch = 8;
  cfg.batch_size = 4;
  cfg.seed = 5;
  return cfg;
}

NetConfig tiny_net() {
  NetConfig n;
  n.backbone_channels = {4, 6, 8, 8};
  n.combined_channels = 8;
  n.head_channels = 8;
  n.tower_depth = 1;
  return n;
}

}  // namespace

TEST(GenSequence, StaticTargetKeepsItsBox) {
  SyntheticSceneConfig cfg;
  cfg.length = 15;
  const auto seq = gen_sequence(cfg);
  ASSERT_EQ(seq.gt.size(), 15u);
  for (const auto& b : seq.gt) EXPECT_EQ(b, seq.gt[0]);
}

TEST(GenSequence, ConstantVelocityUntilTheWall) {
  SyntheticSceneConfig cfg;
  cfg.length = 80;
  cfg.start_x = 40;
  cfg.start_y = 90;
  cfg.velocity_x = 2;
  const auto seq = gen_sequence(cfg);
  const double right = static_cast<double>(cfg.frame_width) - cfg.target_width / 2;
  std::size_t t = 1;
  for (; t < seq.gt.size() && seq.gt[t - 1].cx() + 2 <= right; ++t) {
    EXPECT_DOUBLE_EQ(seq.gt[t].cx(), seq.gt[t - 1].cx() + 2);
    EXPECT_EQ(seq.gt[t].cy(), 90.0);
  }
  ASSERT_LT(t, seq.gt.size());
  EXPECT_LT(seq.gt.back().cx(), right);  // bounced back
  for (const auto& b : seq.gt) {
    EXPECT_GE(b.x0, 0.0);
    EXPECT_LE(b.x1, static_cast<double>(cfg.frame_width));
  }
}

TEST(GenSequence, SeededFramesAreByteIdentical) {
  const auto a = gen_sequence(hard_scene(42, 12));
  const auto b = gen_sequence(hard_scene(42, 12));
  ASSERT_EQ(a.frames.size(), b.frames.size());
  for (std::size_t t = 0; t < a.frames.size(); ++t) EXPECT_EQ(a.frames[t].rgb, b.frames[t].rgb);
  EXPECT_EQ(a.gt, b.gt);
  const auto c = gen_sequence(hard_scene(43, 12));
  EXPECT_NE(a.frames[0].rgb, c.frames[0].rgb);
}

TEST(GenSequence, PresetsStayInsideTheFrame) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed)
    for (const auto& cfg : {easy_scene(seed), hard_scene(seed)}) {
      const auto seq = gen_sequence(cfg);
      for (const auto& b : seq.gt) {
        EXPECT_GE(b.x0, 0.0);
        EXPECT_GE(b.y0, 0.0);
        EXPECT_LE(b.x1, static_cast<double>(cfg.frame_width));
        EXPECT_LE(b.y1, static_cast<double>(cfg.frame_height));
      }
    }
  const auto e = easy_scene(9);
  EXPECT_LE(std::hypot(e.velocity_x, e.velocity_y), 3.0);
  EXPECT_LE(std::abs(e.scale_drift), 0.01);
}

TEST(GenSequence, OversizedTargetIsAConfigError) {
  SyntheticSceneConfig cfg;
  cfg.target_width = 400;
  EXPECT_THROW(gen_sequence(cfg), ConfigError);
}

TEST(Schedule, WarmupThenNonIncreasingDecay) {
  const TrainConfig cfg;
  const std::size_t spe = cfg.steps_per_epoch();
  EXPECT_EQ(spe, 125u);
  EXPECT_EQ(learning_rate(cfg, 0), 1e-3);
  EXPECT_EQ(learning_rate(cfg, spe - 1), 1e-3);
  EXPECT_NEAR(learning_rate(cfg, spe), cfg.peak_lr, 1e-15);
  EXPECT_NEAR(learning_rate(cfg, cfg.total_steps() - 1), 1e-5, 1e-9);
  for (std::size_t s = spe + 1; s < cfg.total_steps(); ++s)
    EXPECT_LE(learning_rate(cfg, s), learning_rate(cfg, s - 1));
}

TEST(Training, OverfitOnOneRepeatedPairHalvesTheLoss) {
  const NetConfig net;
  TrainConfig cfg;
  cfg.seed = 11;
  const auto sample = PairSampler<double>(net, cfg).sample(0);
  Trainer<double> trainer(net, cfg, init_params(net, 11));
  std::vector<double> losses;
  for (int s = 0; s < 200; ++s) losses.push_back(trainer.step({sample}, 5e-3, false).total);
  EXPECT_LE(losses.back(), 0.5 * losses[9]) << losses[9] << " -> " << losses.back();
}

TEST(Training, ZeroLearningRateLeavesParametersUntouched) {
  const NetConfig net = tiny_net();
  TrainConfig cfg = tiny_schedule();
  const auto init = init_params(net, 2);
  Trainer<double> trainer(net, cfg, init);
  const PairSampler<double> sampler(net, cfg);
  for (std::uint64_t k = 0; k < 3; ++k) trainer.step({sampler.sample(k), sampler.sample(k + 7)}, 0.0, false);
  EXPECT_TRUE(same_bits(trainer.params(), init));
}

TEST(Training, FrozenBackboneDoesNotMove) {
  const NetConfig net = tiny_net();
  TrainConfig cfg = tiny_schedule();
  const auto init = init_params(net, 3);
  Trainer<double> trainer(net, cfg, init);
  trainer.step({PairSampler<double>(net, cfg).sample(0)}, 1e-2, true);
  for (const auto& [name, t] : trainer.params()) {
    if (is_backbone_param(name)) {
      EXPECT_EQ(t, init.at(name)) << name;
    } else if (name.find("weight") != std::string::npos) {
      EXPECT_NE(t, init.at(name)) << name;
    }
  }
}

TEST(Training, SameSeedGivesIdenticalHistoryAndWeights) {
  const NetConfig net = tiny_net();
  const auto cfg = tiny_schedule();
  const auto a = train(net, cfg), b = train(net, cfg);
  ASSERT_EQ(a.history.size(), cfg.total_steps());
  ASSERT_EQ(a.history.size(), b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    EXPECT_EQ(a.history[i].loss.total, b.history[i].loss.total);
    EXPECT_EQ(a.history[i].lr, b.history[i].lr);
  }
  EXPECT_TRUE(same_bits(a.params, b.params));
  std::stringstream sa, sb;
  write_weights(sa, a.params);
  write_weights(sb, b.params);
  EXPECT_EQ(sa.str(), sb.str());
  auto other = cfg;
  other.seed = 6;
  EXPECT_FALSE(same_bits(a.params, train(net, other).params));
}

TEST(Training, DivergenceAbortsWithTheLastGoodCheckpoint) {
  const NetConfig net = tiny_net();
  auto cfg = tiny_schedule();
  cfg.grad_clip = 0;
  cfg.warmup_lr = 1e300;
  cfg.peak_lr = 1e300;
  cfg.floor_lr = 1e299;
  const auto dir = scratch("diverge");
  TrainHooks hooks;
  hooks.checkpoint_on_failure = dir / "last_good.ocwt";
  std::size_t completed = 0;
  hooks.on_step = [&](const HistoryRow&) { ++completed; };
  EXPECT_THROW(train(net, cfg, hooks), NumericError);
  ASSERT_TRUE(fs::exists(hooks.checkpoint_on_failure));
  const auto saved = load_weights(hooks.checkpoint_on_failure);
  for (const auto& [name, t] : saved) EXPECT_TRUE(all_finite(t)) << name;
  if (completed == 0) {
    EXPECT_TRUE(same_bits(saved, init_params(net, cfg.seed)));
  }
}

TEST(Training, LossCsvHasTheDocumentedColumns) {
  std::vector<HistoryRow> rows{{0, 1e-3, {1.0, 2.0, 3.0, 6.6}}, {1, 5e-4, {0.5, 0.25, 0.125, 0.9}}};
  const auto path = scratch("csv") / "loss.csv";
  write_loss_csv(path, rows);
  std::ifstream is(path);
  std::string header, first;
  std::getline(is, header);
  std::getline(is, first);
  EXPECT_EQ(header, "step,lr,l_reg,l_o,l_r,total");
  EXPECT_EQ(first.substr(0, 2), "0,");
  EXPECT_NE(first.find(",6.5999999999999996"), std::string::npos);
}

TEST(Metrics, OracleTrackerIsPerfect) {
  const auto seq = gen_sequence(easy_scene(3, 20));
  OracleTracker tr{&seq.gt};
  const auto r = evaluate_continuous(run_continuous(tr, seq), seq.gt);
  EXPECT_EQ(r.ao, 1.0);
  EXPECT_EQ(r.sr50, 1.0);
  EXPECT_EQ(r.auc, 1.0);
  EXPECT_EQ(r.precision20, 1.0);
  EXPECT_EQ(r.failures, 0u);
  EXPECT_EQ(r.frames, 19u);
  OracleTracker again{&seq.gt};
  EXPECT_EQ(evaluate_restart(again, seq).failures, 0u);
}

TEST(Metrics, StaticBoxMatchesAnIndependentOverlapComputation) {
  const auto seq = gen_sequence(easy_scene(17, 40));
  StaticBoxTracker tr;
  const auto r = evaluate_continuous(run_continuous(tr, seq), seq.gt);
  double sum = 0;
  std::size_t close = 0;
  for (std::size_t t = 1; t < seq.gt.size(); ++t) {
    sum += oracle::iou(seq.gt[0], seq.gt[t]);
    const double dx = seq.gt[0].cx() - seq.gt[t].cx(), dy = seq.gt[0].cy() - seq.gt[t].cy();
    close += std::sqrt(dx * dx + dy * dy) <= 20.0;
  }
  EXPECT_NEAR(r.ao, sum / 39.0, 1e-12);
  EXPECT_NEAR(r.precision20, static_cast<double>(close) / 39.0, 1e-15);
}

TEST(Metrics, AucIsTheMeanOfTheThresholdSweep) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<double> ious(137);
  for (auto& v : ious) v = u(rng) < 0.1 ? 0.0 : u(rng);
  ious[3] = 0.5;
  ious[4] = 1.0;
  const auto r = score_frames(ious, std::vector<double>(ious.size(), 0.0), 0);
  double brute = 0;
  for (int k = 0; k <= 20; ++k) {
    const double tau = k * 0.05;
    double hits = 0;
    for (double v : ious) hits += v >= tau ? 1 : 0;
    brute += hits / static_cast<double>(ious.size());
  }
  EXPECT_NEAR(r.auc, brute / 21, 1e-14);
  for (double m : {r.ao, r.sr50, r.auc, r.precision20}) {
    EXPECT_GE(m, 0.0);
    EXPECT_LE(m, 1.0);
  }
}

TEST(Metrics, PrecisionIsOneWhenEveryCentreIsClose) {
  std::vector<BBox> gt, pred;
  for (int t = 0; t < 10; ++t) {
    gt.push_back(BBox::from_center(50 + t, 60, 20, 20));
    pred.push_back(BBox::from_center(50 + t + 13, 60 - 13, 20, 20));
  }
  EXPECT_EQ(evaluate_continuous(pred, gt).precision20, 1.0);
}

TEST(Metrics, ContinuousFailuresCountZeroOverlapRuns) {
  std::vector<BBox> gt(10, BBox{0, 0, 10, 10}), pred = gt;
  const BBox away{50, 50, 60, 60};
  pred[2] = pred[3] = pred[7] = away;
  const auto r = evaluate_continuous(pred, gt);
  EXPECT_EQ(r.failures, 2u);
  EXPECT_NEAR(r.ao, 6.0 / 9.0, 1e-15);
}

TEST(Metrics, RestartSkipsFiveFramesAndReinitialises) {
  const auto seq = gen_sequence(easy_scene(21, 30));
  ScriptedTracker tr{&seq.gt, {4, 20}, 0, {}};
  const auto r = evaluate_restart(tr, seq);
  EXPECT_EQ(r.failures, 2u);
  EXPECT_EQ(tr.inits, (std::vector<std::size_t>{0, 9, 25}));
  // Frames 5..9 and 21..25 are not scored.
  EXPECT_EQ(r.frames, 29u - 10u);
  EXPECT_NEAR(r.ao, 17.0 / 19.0, 1e-15);
}

TEST(Metrics, MalformedInputsAreIngestionErrors) {
  std::vector<BBox> gt(5, BBox{0, 0, 1, 1});
  EXPECT_THROW(evaluate_continuous(gt, {}), IngestionError);
  EXPECT_THROW(evaluate_continuous(std::vector<BBox>(4, BBox{0, 0, 1, 1}), gt), IngestionError);
  std::istringstream bad("1,2,3,4\n1,2,3\n");
  EXPECT_THROW(parse_box_log(bad, "bad"), IngestionError);
  std::istringstream inverted("5,5,1,1\n");
  EXPECT_THROW(parse_box_log(inverted, "inv"), IngestionError);
  EXPECT_THROW(read_box_log("/nonexistent/gt.txt"), IngestionError);
}

TEST(Metrics, AggregateAveragesRatesAndSumsCounts) {
  MetricsReport a, b;
  a.ao = 0.2;
  a.failures = 1;
  a.frames = 10;
  a.sequences = 1;
  b.ao = 0.6;
  b.failures = 2;
  b.frames = 30;
  b.sequences = 1;
  const auto r = aggregate({a, b});
  EXPECT_NEAR(r.ao, 0.4, 1e-15);
  EXPECT_EQ(r.failures, 3u);
  EXPECT_EQ(r.frames, 40u);
  EXPECT_EQ(r.sequences, 2u);
  EXPECT_NE(to_key_value(r).find("ao=0.400000\n"), std::string::npos);
}

TEST(SequenceIo, SaveLoadRoundTrip) {
  const auto dir = scratch("seqio");
  const auto seq = gen_sequence(hard_scene(8, 6));
  save_sequence(dir / "s", seq);
  const auto back = load_sequence(dir / "s");
  ASSERT_EQ(back.frames.size(), 6u);
  for (std::size_t t = 0; t < 6; ++t) EXPECT_EQ(back.frames[t].rgb, seq.frames[t].rgb);
  EXPECT_EQ(back.gt, seq.gt);

  EXPECT_THROW(load_sequence(dir / "missing"), ArtifactError);
  fs::remove(dir / "s" / "groundtruth.txt");
  EXPECT_THROW(load_sequence(dir / "s"), IngestionError);
  write_box_log(dir / "s" / "groundtruth.txt", std::vector<BBox>(5, BBox{0, 0, 2, 2}));
  EXPECT_THROW(load_sequence(dir / "s"), IngestionError);
}
