#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "ocean/metrics.hpp"
#include "ocean/synthetic.hpp"
#include "ocean/tracker.hpp"
#include "oracles.hpp"

using namespace ocean;

namespace {

GridSpec score_grid() { return NetConfig{}.score_grid(); }

SearchRegion identity_region() { return SearchRegion{64, 64, 128, 1.0, 128}; }

// Maps on the 9x9 grid with a single peak and uniform 12 px distances.
ScoreMaps planted(std::size_t pi, std::size_t pj, double peak = 0.9, double floor = 0.1) {
  ScoreMaps m{Tensor<double>({9, 9}, floor), Tensor<double>({9, 9}, floor),
              Tensor<double>({4, 9, 9}, 12.0)};
  m.p_o(pi, pj) = peak;
  m.p_r(pi, pj) = peak;
  return m;
}

ScoreMaps random_maps(std::mt19937_64& rng) {
  return {oracle::random_tensor(rng, {9, 9}, 0.01, 0.99),
          oracle::random_tensor(rng, {9, 9}, 0.01, 0.99),
          oracle::random_tensor(rng, {4, 9, 9}, 2, 40)};
}

std::shared_ptr<const ModelParams<double>> random_params(std::uint64_t seed) {
  return std::make_shared<const ModelParams<double>>(init_params(NetConfig{}, seed));
}

class ConstantProvider : public OnlineScoreProvider {
 public:
  explicit ConstantProvider(double v) : v_(v) {}
  Tensor<double> score(const Image&, const SearchRegion&, const GridSpec& grid) override {
    return Tensor<double>({grid.height, grid.width}, v_);
  }

 private:
  double v_;
};

}  // namespace

TEST(FuseScores, Examples) {
  const Tensor<double> po({2}, std::vector<double>{0.8, 0.3});
  const Tensor<double> pr({2}, std::vector<double>{0.6, 0.9});
  EXPECT_EQ(fuse_scores(po, pr, 0.0), pr);
  EXPECT_EQ(fuse_scores(po, pr, 1.0), po);
  EXPECT_NEAR(fuse_scores(po, pr, 0.07)[0], 0.614, 1e-12);
  EXPECT_THROW(fuse_scores(po, Tensor<double>({3}), 0.5), ShapeError);
}

TEST(Penalty, Examples) {
  EXPECT_EQ(penalty(1.3, 1.3, 20, 20, 0.021), 1.0);
  EXPECT_NEAR(penalty(2.0, 1.0, 10, 10, 0.021), std::exp(-0.021), 1e-15);
  EXPECT_NEAR(penalty(1.0, 1.0, 10, 20, 0.021), 0.979219, 1e-6);
  EXPECT_THROW(penalty(0, 1, 1, 1, 0.021), UsageError);
  EXPECT_THROW(penalty(1, 1, 1, -2, 0.021), UsageError);
  // The literal form grows with the change.
  EXPECT_GT(penalty(2.0, 1.0, 10, 10, 0.021, true), penalty(1.0, 1.0, 10, 10, 0.021, true));
}

TEST(Penalty, NonIncreasingInTheChangeProduct) {
  double prev = 1.0;
  for (double change = 1.0; change < 20; change *= 1.1) {
    const double a = penalty(change, 1.0, 10, 10, 0.021);
    EXPECT_LE(a, prev);
    EXPECT_GT(a, 0.0);
    prev = a;
  }
  // Ratio and size changes combine multiplicatively and symmetrically.
  EXPECT_DOUBLE_EQ(penalty(2, 1, 30, 10, 0.1), penalty(0.5, 1, 10, 30, 0.1));
}

TEST(SmoothScale, Examples) {
  EXPECT_EQ(smooth_scale(10, 20, 1.0), 10.0);
  EXPECT_EQ(smooth_scale(10, 20, 0.0), 20.0);
  EXPECT_NEAR(smooth_scale(10, 20, 0.7), 13.0, 1e-12);
}

TEST(FuseOnline, Examples) {
  const Tensor<double> onl({1}, 0.2), hat({1}, 0.6);
  EXPECT_EQ(fuse_online(onl, hat, 0.0), hat);
  EXPECT_NEAR(fuse_online(onl, hat, 0.5)[0], 0.4, 1e-15);
  EXPECT_THROW(fuse_online(Tensor<double>({2}), hat, 0.5), ShapeError);
}

TEST(ContextSize, SquareBoxDoubles) {
  EXPECT_DOUBLE_EQ(context_size(10, 10), 20.0);
  EXPECT_DOUBLE_EQ(context_size(30, 10), std::sqrt(50.0 * 30.0));
}

TEST(CropAndResize, OutsideFrameUsesChannelMeans) {
  Image img(4, 4);
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 4; ++x) {
      img.at(x, y, 0) = 200;
      img.at(x, y, 1) = static_cast<std::uint8_t>(10 * x);
      img.at(x, y, 2) = 0;
    }
  const auto mean = img.channel_means();
  const auto crop = crop_and_resize<double>(img, -100, -100, 8, 8);
  for (std::size_t c = 0; c < 3; ++c)
    EXPECT_NEAR(crop(c, 0, 0), mean[c] / 255.0 - 0.5, 1e-12);
  EXPECT_THROW(crop_and_resize<double>(img, 2, 2, 0, 8), UsageError);
}

TEST(Localize, PlantedPeakMapsToItsCell) {
  TrackHyper hyper;
  hyper.window_weight = 0;
  hyper.beta = 1;
  const auto grid = score_grid();
  const auto region = identity_region();
  const BBox prev = BBox::from_center(64, 64, 24, 24);
  for (std::size_t i : {0u, 3u, 8u})
    for (std::size_t j : {1u, 4u, 7u}) {
      const auto loc = localize(planted(i, j), grid, region, prev, hyper);
      EXPECT_EQ(loc.cell_i, i);
      EXPECT_EQ(loc.cell_j, j);
      const auto p = feat_to_image(i, j, grid);
      EXPECT_DOUBLE_EQ(loc.box.cx(), p.x);
      EXPECT_DOUBLE_EQ(loc.box.cy(), p.y);
      EXPECT_DOUBLE_EQ(loc.box.width(), 24.0);
    }
}

TEST(Localize, RegionMappingScalesToFrame) {
  TrackHyper hyper;
  hyper.window_weight = 0;
  hyper.beta = 1;
  const SearchRegion region{300, 200, 256, 0.5, 128};
  const auto loc =
      localize(planted(4, 6), score_grid(), region, BBox::from_center(300, 200, 48, 48), hyper);
  // Cell (4,6) sits 16 crop px right of the crop centre: 32 frame px.
  EXPECT_DOUBLE_EQ(loc.box.cx(), 332.0);
  EXPECT_DOUBLE_EQ(loc.box.cy(), 200.0);
  EXPECT_DOUBLE_EQ(loc.box.width(), 48.0);
}

TEST(Localize, ScalingScoresLeavesTheSelectionUnchanged) {
  std::mt19937_64 rng(31);
  const TrackHyper hyper;
  const auto grid = score_grid();
  const BBox prev = BBox::from_center(64, 64, 20, 30);
  for (int trial = 0; trial < 50; ++trial) {
    auto maps = random_maps(rng);
    const auto a = localize(maps, grid, identity_region(), prev, hyper);
    const double k = std::exp(std::uniform_real_distribution<double>(-3, 0)(rng));
    for (auto& v : maps.p_o.data()) v *= k;
    for (auto& v : maps.p_r.data()) v *= k;
    const auto b = localize(maps, grid, identity_region(), prev, hyper);
    EXPECT_EQ(a.cell_i, b.cell_i);
    EXPECT_EQ(a.cell_j, b.cell_j);
    EXPECT_EQ(a.box, b.box);
  }
}

TEST(Localize, ZeroPenaltyMatchesPenaltyFreeSelection) {
  std::mt19937_64 rng(32);
  TrackHyper hyper;
  hyper.k_pen = 0;
  const auto grid = score_grid();
  for (int trial = 0; trial < 50; ++trial) {
    const auto maps = random_maps(rng);
    const auto loc =
        localize(maps, grid, identity_region(), BBox::from_center(64, 64, 20, 30), hyper);
    const auto peak = select_peak(fuse_scores(maps.p_o, maps.p_r, hyper.omega),
                                  hanning_window(9, 9), hyper.window_weight);
    EXPECT_EQ(loc.cell_i, peak.i);
    EXPECT_EQ(loc.cell_j, peak.j);
    EXPECT_EQ(loc.score, peak.score);
  }
}

TEST(Localize, SmoothedSizeLiesBetweenPreviousAndDecoded) {
  std::mt19937_64 rng(33);
  const TrackHyper hyper;
  const auto grid = score_grid();
  for (int trial = 0; trial < 100; ++trial) {
    const auto maps = random_maps(rng);
    const BBox prev = BBox::from_center(64, 64, 10 + trial % 40, 50 - trial % 30);
    const auto loc = localize(maps, grid, identity_region(), prev, hyper);
    const auto decoded = box_at(decode_boxes(maps.distances, grid), loc.cell_i, loc.cell_j);
    const double lo_w = std::min(prev.width(), decoded.width()),
                 hi_w = std::max(prev.width(), decoded.width());
    const double lo_h = std::min(prev.height(), decoded.height()),
                 hi_h = std::max(prev.height(), decoded.height());
    EXPECT_GE(loc.box.width(), lo_w - 1e-9);
    EXPECT_LE(loc.box.width(), hi_w + 1e-9);
    EXPECT_GE(loc.box.height(), lo_h - 1e-9);
    EXPECT_LE(loc.box.height(), hi_h + 1e-9);
  }
}

TEST(Localize, SuppressivePenaltyFavoursUnchangedShapes) {
  TrackHyper hyper;
  hyper.window_weight = 0;
  hyper.k_pen = 0.5;
  ScoreMaps maps{Tensor<double>({9, 9}, 0.1), Tensor<double>({9, 9}, 0.1),
                 Tensor<double>({4, 9, 9}, 12.0)};
  // Two equal peaks: one keeps the previous 24x24 shape, the other is 3x wider.
  maps.p_o(2, 2) = maps.p_r(2, 2) = 0.9;
  maps.p_o(6, 6) = maps.p_r(6, 6) = 0.9;
  maps.distances(0, 2, 2) = maps.distances(2, 2, 2) = 36.0;
  const auto loc = localize(maps, score_grid(), identity_region(),
                            BBox::from_center(64, 64, 24, 24), hyper);
  EXPECT_EQ(loc.cell_i, 6u);
  hyper.literal_penalty = true;
  const auto lit = localize(maps, score_grid(), identity_region(),
                            BBox::from_center(64, 64, 24, 24), hyper);
  EXPECT_EQ(lit.cell_i, 2u);
}

TEST(Tracker, ErrorsAndState) {
  const auto seq = gen_sequence(easy_scene(7, 5));
  Tracker<double> tr(NetConfig{}, random_params(1));
  EXPECT_THROW(tr.step(seq.frames[1]), UsageError);
  EXPECT_THROW(tr.init(seq.frames[0], BBox{10, 10, 10, 30}), UsageError);
  tr.init(seq.frames[0], seq.gt[0]);
  EXPECT_TRUE(tr.initialized());
  EXPECT_NEAR(tr.box().x0, seq.gt[0].x0, 1e-12);
  EXPECT_NEAR(tr.box().y1, seq.gt[0].y1, 1e-12);
  EXPECT_DOUBLE_EQ(tr.prev_ratio(), seq.gt[0].width() / seq.gt[0].height());
  const auto feature = tr.exemplar_feature();
  for (std::size_t t = 1; t < seq.frames.size(); ++t) {
    const auto b = tr.track(seq.frames[t]);
    EXPECT_TRUE(b.valid());
    EXPECT_FALSE(b.degenerate());
  }
  EXPECT_EQ(tr.exemplar_feature(), feature);
  TrackHyper bad;
  bad.omega = 1.5;
  EXPECT_THROW(Tracker<double>(NetConfig{}, random_params(1), bad), ConfigError);
}

TEST(Tracker, DeterministicTrajectories) {
  const auto seq = gen_sequence(hard_scene(3, 12));
  const auto params = random_params(2);
  Tracker<double> a(NetConfig{}, params), b(NetConfig{}, params);
  EXPECT_EQ(run_continuous(a, seq), run_continuous(b, seq));
}

TEST(Tracker, NoProviderAndZeroWeightProviderMatchOfflineMode) {
  const auto seq = gen_sequence(easy_scene(4, 10));
  const auto params = random_params(3);
  Tracker<double> offline(NetConfig{}, params);
  TrackHyper zero;
  zero.omega_online = 0;
  Tracker<double> with_provider(NetConfig{}, params, zero);
  with_provider.set_online_provider(std::make_shared<ConstantProvider>(0.9));
  Tracker<double> again(NetConfig{}, params);
  const auto ref = run_continuous(offline, seq);
  EXPECT_EQ(run_continuous(again, seq), ref);
  EXPECT_EQ(run_continuous(with_provider, seq), ref);
}

TEST(Tracker, TargetLeavingTheFrameDoesNotThrow) {
  SyntheticSceneConfig cfg;
  cfg.length = 30;
  cfg.start_x = 150;
  cfg.start_y = 20;
  cfg.velocity_x = 6;
  cfg.velocity_y = -3;
  cfg.seed = 5;
  const auto seq = gen_sequence(cfg);
  Tracker<double> tr(NetConfig{}, random_params(4));
  std::vector<BBox> log;
  ASSERT_NO_THROW(log = run_continuous(tr, seq));
  for (const auto& b : log) EXPECT_TRUE(b.valid());
}

TEST(Tracker, SinglePrecisionRuns) {
  const auto seq = gen_sequence(easy_scene(8, 4));
  auto p64 = init_params(NetConfig{}, 9);
  ModelParams<float> p32;
  for (const auto& [name, t] : p64) p32.emplace(name, t.cast<float>());
  Tracker<float> tr(NetConfig{}, std::make_shared<const ModelParams<float>>(p32));
  tr.init(seq.frames[0], seq.gt[0]);
  EXPECT_TRUE(tr.track(seq.frames[1]).valid());
}
