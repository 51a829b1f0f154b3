#include <gtest/gtest.h>

#include <numbers>
#include <set>

#include "support/oracles.hpp"

namespace {

using namespace bevscan;
using oracle::Tensor;

BevGrid grid_of(std::size_t nz, std::size_t nx) {
  BevGrid g;
  g.nz = nz;
  g.nx = nx;
  return g;
}

template <typename M>
void fill_params(M& module, double v) {
  ParamList<double> p;
  module.collect("m", p);
  for (auto& [name, t] : p)
    for (auto& x : t.mutable_data()) x = v;
}

// ---------------------------------------------------------------------------
// Patchify

TEST(Patchify, FullGridHasTenThousandTokens) {
  Rng rng(1);
  Patchify<float> p(2, 3, rng);
  NoGradGuard guard;
  EXPECT_EQ(p.patchify(bevscan::Tensor<float>({1, 2, 200, 200})).shape(), (Shape{1, 10000, 3}));
}

TEST(Patchify, TokensFollowRasterOrder) {
  Tensor x({1, 1, 4, 4});
  for (std::size_t i = 0; i < 16; ++i) x.mutable_data()[i] = double(i);
  const auto t = unfold2x2(x);
  ASSERT_EQ(t.shape(), (Shape{1, 4, 4}));
  // token k's first element is the top-left cell of patches (0,0), (0,1), (1,0), (1,1)
  EXPECT_EQ(t[0 * 4], 0.0);
  EXPECT_EQ(t[1 * 4], 2.0);
  EXPECT_EQ(t[2 * 4], 8.0);
  EXPECT_EQ(t[3 * 4], 10.0);
  EXPECT_EQ(t[3 * 4 + 3], 15.0);
}

TEST(Patchify, CanonicalInversePairIsExactIdentity) {
  Rng rng(2);
  const std::size_t D = 3;
  Patchify<double> p(D, 4 * D, rng);
  for (auto* l : {&p.embed, &p.restore}) {
    auto w = l->weight.mutable_data();
    std::fill(w.begin(), w.end(), 0.0);
    for (std::size_t i = 0; i < 4 * D; ++i) w[i * 4 * D + i] = 1.0;
    fill_params(*l, 0.0);
    for (std::size_t i = 0; i < 4 * D; ++i) l->weight.mutable_data()[i * 4 * D + i] = 1.0;
  }
  const auto x = oracle::random({2, D, 6, 8}, rng);
  const auto y = p.unpatchify(p.patchify(x), 6, 8);
  for (std::size_t i = 0; i < x.numel(); ++i) ASSERT_EQ(y[i], x[i]);
}

TEST(Patchify, OddDimsRejected) {
  EXPECT_THROW(unfold2x2(Tensor({1, 1, 5, 4})), ShapeError);
  EXPECT_THROW(fold2x2(Tensor({1, 4, 4}), 4, 5), ShapeError);
  EXPECT_THROW(build_permutation(grid_of(6, 7), ScanKind::Forward), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Permutations

TEST(Permutation, SingleBandFourPatchCycle) {
  // 2x2 patches centered at (x, z) = (-25, -25), (25, -25), (-25, 25), (25, 25)
  BandPartition one_band{1000.0, 2000.0};
  const auto fs = build_permutation(grid_of(4, 4), ScanKind::ForwardSurround, one_band);
  EXPECT_EQ(fs.order, (std::vector<std::size_t>{3, 1, 0, 2}));
  const auto bs = build_permutation(grid_of(4, 4), ScanKind::BackwardSurround, one_band);
  EXPECT_EQ(bs.order, (std::vector<std::size_t>{2, 0, 1, 3}));
  const auto f = build_permutation(grid_of(4, 4), ScanKind::Forward, one_band);
  EXPECT_EQ(f.order, (std::vector<std::size_t>{0, 1, 2, 3}));
}

TEST(Permutation, ClockwiseAngleStartsForward) {
  EXPECT_DOUBLE_EQ(clockwise_angle(0, 1), 0.0);
  EXPECT_DOUBLE_EQ(clockwise_angle(1, 0), std::numbers::pi / 2);
  EXPECT_DOUBLE_EQ(clockwise_angle(0, -1), std::numbers::pi);
  EXPECT_DOUBLE_EQ(clockwise_angle(-1, 0), 3 * std::numbers::pi / 2);
}

void check_permutation_suite(const BevGrid& g) {
  const BandPartition bands;
  const auto f = build_permutation(g, ScanKind::Forward);
  const auto fs = build_permutation(g, ScanKind::ForwardSurround);
  const auto bs = build_permutation(g, ScanKind::BackwardSurround);
  const std::size_t L = (g.nx / 2) * (g.nz / 2);
  const auto centers = patch_centers(g);
  for (const auto* p : {&f, &fs, &bs}) {
    ASSERT_EQ(p->size(), L);
    std::set<std::size_t> seen(p->order.begin(), p->order.end());
    ASSERT_EQ(seen.size(), L);
    ASSERT_EQ(*seen.rbegin(), L - 1);
    for (std::size_t i = 0; i < L; ++i) ASSERT_EQ(p->inverse[p->order[i]], i);
  }
  int prev = 0;
  for (std::size_t i = 0; i < L; ++i) {
    const auto c = centers[fs.order[i]];
    const int band = static_cast<int>(bands.band_of(std::hypot(c.x, c.z)));
    ASSERT_GE(band, prev) << "band order broken at position " << i;
    prev = band;
    ASSERT_EQ(bs.order[i], fs.order[L - 1 - i]);
  }
  const auto want = oracle::band_counts(g);
  for (std::size_t b = 0; b < 3; ++b) ASSERT_EQ(fs.band_sizes[b], want[b]) << "band " << b;
  ASSERT_EQ(want[0] + want[1] + want[2], L);
}

TEST(Permutation, FullGridSuite) {
  check_permutation_suite(BevGrid{});
  const auto fs = build_permutation(BevGrid{}, ScanKind::ForwardSurround);
  EXPECT_EQ(fs.band_sizes[0] + fs.band_sizes[1] + fs.band_sizes[2], 10000u);
  EXPECT_GT(fs.band_sizes[0], 0u);
  EXPECT_GT(fs.band_sizes[2], fs.band_sizes[1]);
}

TEST(Permutation, RandomEvenGridsSuite) {
  Rng rng(3);
  std::uniform_int_distribution<std::size_t> half(2, 20);
  for (int trial = 0; trial < 60; ++trial) {
    const auto g = grid_of(2 * half(rng), 2 * half(rng));
    SCOPED_TRACE(std::to_string(g.nz) + "x" + std::to_string(g.nx));
    check_permutation_suite(g);
  }
}

TEST(Permutation, WithinBandSortedByAngleThenRadius) {
  const auto g = grid_of(40, 40);
  const auto fs = build_permutation(g, ScanKind::ForwardSurround);
  const auto centers = patch_centers(g);
  const BandPartition bands;
  for (std::size_t i = 1; i < fs.size(); ++i) {
    const auto a = centers[fs.order[i - 1]], b = centers[fs.order[i]];
    if (bands.band_of(std::hypot(a.x, a.z)) != bands.band_of(std::hypot(b.x, b.z))) continue;
    const double aa = clockwise_angle(a.x, a.z), ab = clockwise_angle(b.x, b.z);
    ASSERT_LE(aa, ab);
    if (aa == ab) ASSERT_LE(std::hypot(a.x, a.z), std::hypot(b.x, b.z));
  }
}

// ---------------------------------------------------------------------------
// Discretization and scan

TEST(Discretize, ZeroRateKeepsState) { EXPECT_EQ(discretize(0.0, 2.0, 0.3).a_bar, 1.0); }

TEST(Discretize, HalfLifeCase) {
  const auto g = discretize(-1.0, 3.0, std::numbers::ln2);
  EXPECT_NEAR(g.a_bar, 0.5, 1e-15);
  EXPECT_NEAR(g.b_bar, 3.0 * std::numbers::ln2, 1e-15);
}

TEST(Discretize, FirstOrderInputGainAgainstExactHold) {
  // exact hold gain: integral over [0, delta] of exp(a s) ds times b, by Simpson's rule
  double worst = 0;
  for (double a : {-0.1, -1.0, -4.0})
    for (double delta : {0.001, 0.01, 0.1}) {
      const int n = 1000;
      const double hstep = delta / n;
      double integral = 0;
      for (int k = 0; k <= n; ++k) {
        const double w = (k == 0 || k == n) ? 1 : (k % 2 ? 4 : 2);
        integral += w * std::exp(a * k * hstep);
      }
      integral *= hstep / 3;
      const double exact = ((std::exp(a * delta) - 1) / a);
      EXPECT_NEAR(integral, exact, 1e-12);
      worst = std::max(worst, std::abs(discretize(a, 1.0, delta).b_bar - integral));
    }
  RecordProperty("max_input_gain_deviation", std::to_string(worst));
  EXPECT_LT(worst, 0.05);
}

struct ScanInputs {
  Tensor x, delta, A, B, C, D;
  std::size_t batch, L, d, n;
};

ScanInputs random_scan(Rng& rng, std::size_t batch, std::size_t L, std::size_t d, std::size_t n) {
  return {oracle::random({batch, L, d}, rng, -2, 2), oracle::random({batch, L, d}, rng, 0.001, 1.0),
          oracle::random({d, n}, rng, -3, -0.01),    oracle::random({batch, L, n}, rng),
          oracle::random({batch, L, n}, rng),        oracle::random({d}, rng),
          batch, L, d, n};
}

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

TEST(SelectiveScan, SingleStepClosedForm) {
  Rng rng(4);
  auto s = random_scan(rng, 1, 1, 3, 4);
  const auto y = selective_scan(s.x, s.delta, s.A, s.B, s.C, s.D);
  for (std::size_t i = 0; i < 3; ++i) {
    double want = s.D[i] * s.x[i];
    for (std::size_t j = 0; j < 4; ++j) want += s.C[j] * (s.delta[i] * s.B[j] * s.x[i]);
    EXPECT_NEAR(y[i], want, 1e-14);
  }
}

TEST(SelectiveScan, UnitGainsGivePrefixSums) {
  const std::size_t L = 12;
  Tensor x({1, L, 1});
  for (std::size_t t = 0; t < L; ++t) x.mutable_data()[t] = double(t) - 3.5;
  const auto y = selective_scan(x, Tensor::ones({1, L, 1}), Tensor({1, 1}), Tensor::ones({1, L, 1}),
                                Tensor::ones({1, L, 1}), Tensor({1}));
  double prefix = 0;
  for (std::size_t t = 0; t < L; ++t) {
    prefix += x[t];
    EXPECT_DOUBLE_EQ(y[t], prefix);
  }
}

TEST(SelectiveScan, MatchesUnrolledRecurrence) {
  Rng rng(5);
  std::uniform_int_distribution<std::size_t> Ld(1, 64), dd(1, 8), nd(1, 16), bd(1, 2);
  double worst = 0;
  for (int c = 0; c < 200; ++c) {
    auto s = random_scan(rng, bd(rng), Ld(rng), dd(rng), nd(rng));
    const auto y = selective_scan(s.x, s.delta, s.A, s.B, s.C, s.D);
    const auto want = oracle::unrolled_scan(values(s.x), values(s.delta), values(s.A), values(s.B), values(s.C),
                                            values(s.D), s.batch, s.L, s.d, s.n);
    for (std::size_t i = 0; i < want.size(); ++i) worst = std::max(worst, std::abs(y[i] - want[i]));
  }
  EXPECT_LE(worst, 1e-12);
}

TEST(SelectiveScan, StableOnLongSequences) {
  Rng rng(6);
  const std::size_t L = 10000, d = 4, n = 8;
  auto s = random_scan(rng, 1, L, d, n);
  // D = 0 and |C| <= 1: |y| <= n * sup|dt B x| / (1 - sup a_bar)
  const auto y = selective_scan(s.x, s.delta, s.A, s.B, s.C, Tensor({d}));
  double sup_in = 0, sup_abar = 0;
  for (std::size_t t = 0; t < L; ++t)
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        sup_in = std::max(sup_in, std::abs(s.delta[t * d + i] * s.B[t * n + j] * s.x[t * d + i]));
        sup_abar = std::max(sup_abar, std::exp(s.delta[t * d + i] * s.A[i * n + j]));
      }
  ASSERT_LT(sup_abar, 1.0);
  const double bound = double(n) * sup_in / (1 - sup_abar);
  for (double v : y.data()) {
    ASSERT_TRUE(std::isfinite(v));
    ASSERT_LE(std::abs(v), bound);
  }
}

TEST(SelectiveScan, InconsistentShapesRejected) {
  Rng rng(7);
  auto s = random_scan(rng, 1, 5, 2, 3);
  EXPECT_THROW(selective_scan(s.x, s.delta, Tensor({3, 3}), s.B, s.C, s.D), ShapeError);
}

// ---------------------------------------------------------------------------
// EBC block

EbcConfig small_config(std::size_t D, std::vector<ScanKind> branches = {ScanKind::Forward, ScanKind::ForwardSurround,
                                                                         ScanKind::BackwardSurround}) {
  EbcConfig cfg;
  cfg.channels = D;
  cfg.inner = 6;
  cfg.state = 3;
  cfg.branches = std::move(branches);
  return cfg;
}

TEST(EbcBlock, InitialStepSizesGiveContractingTransitions) {
  Rng rng(8);
  EbcBlock<double> blk(small_config(4), grid_of(8, 8), rng);
  for (const auto& br : blk.branches()) {
    for (double v : br.proj_dt.bias.data()) {
      const double dt = std::log1p(std::exp(v));
      EXPECT_GE(dt, 1e-3 - 1e-12);
      EXPECT_LE(dt, 1e-1 + 1e-12);
    }
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(std::exp(br.a_log[j]), double(j + 1), 1e-12);
    for (double v : br.skip.data()) EXPECT_EQ(v, 1.0);
  }
}

TEST(EbcBlock, ZeroWeightsAreResidualIdentity) {
  Rng rng(9);
  EbcBlock<double> blk(small_config(4), grid_of(8, 12), rng);
  fill_params(blk, 0.0);
  const auto f = oracle::random({2, 4, 8, 12}, rng, -5, 5);
  const auto y = blk(f);
  for (std::size_t i = 0; i < f.numel(); ++i) ASSERT_EQ(y[i], f[i]);
}

TEST(EbcBlock, SentinelReturnsToItsPatch) {
  Rng rng(10);
  const std::size_t D = 3;
  const auto g = grid_of(8, 8);
  EbcBlock<double> blk(small_config(D, {ScanKind::ForwardSurround}), g, rng);
  // memoryless branch: identity conv tap, no state input, unit skip; zero biases
  ParamList<double> params;
  blk.collect("ebc", params);
  for (auto& [name, t] : params)
    if (name.ends_with(".bias") || name.ends_with("beta")) std::fill(t.mutable_data().begin(), t.mutable_data().end(), 0.0);
  auto& br = blk.branches()[0];
  std::fill(br.conv_w.mutable_data().begin(), br.conv_w.mutable_data().end(), 0.0);
  for (std::size_t i = 0; i < br.conv_w.dim(0); ++i) br.conv_w.mutable_data()[i * br.conv_w.dim(1)] = 1.0;
  std::fill(br.proj_b.weight.mutable_data().begin(), br.proj_b.weight.mutable_data().end(), 0.0);

  const auto& inv = blk.permutations()[0].inverse;
  std::size_t patch = 0;
  while (patch < inv.size() && inv[patch] == patch) ++patch;
  ASSERT_LT(patch, inv.size()) << "permutation fixes every patch";
  const std::size_t pz = patch / 4, px = patch % 4;
  Tensor f({1, D, 8, 8});
  for (std::size_t c = 0; c < D; ++c) f.mutable_data()[(c * 8 + 2 * pz) * 8 + 2 * px + 1] = 1.0 + double(c);
  const auto y = blk(f);
  double inside = 0;
  for (std::size_t c = 0; c < D; ++c)
    for (std::size_t r = 0; r < 8; ++r)
      for (std::size_t q = 0; q < 8; ++q) {
        const double diff = std::abs(y[(c * 8 + r) * 8 + q] - f[(c * 8 + r) * 8 + q]);
        if (r / 2 == pz && q / 2 == px) inside += diff;
        else ASSERT_EQ(diff, 0.0) << "leak to cell (" << r << ", " << q << ")";
      }
  EXPECT_GT(inside, 1e-6);
}

TEST(EbcBlock, MatchesStraightLineReference) {
  Rng rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t D = 4;
    const auto g = grid_of(8, 10);
    EbcBlock<double> blk(small_config(D), g, rng);
    ParamList<double> params;
    blk.collect("ebc", params);
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    for (auto& [name, t] : params)
      if (!name.ends_with("A_log"))
        for (auto& v : t.mutable_data()) v = u(rng);
    const auto f = oracle::random({1, D, 8, 10}, rng, -2, 2);
    const auto y = blk(f);
    const auto want = oracle::ebc_reference(blk, f);
    double worst = 0;
    for (std::size_t i = 0; i < want.size(); ++i) worst = std::max(worst, std::abs(y[i] - want[i]));
    EXPECT_LE(worst, 1e-9);
  }
}

TEST(EbcBlock, GradientWrtInputMatchesFiniteDifferences) {
  Rng rng(12);
  const std::size_t D = 4;
  auto blk = std::make_shared<EbcBlock<double>>(small_config(D), grid_of(4, 4), rng);
  ParamList<double> params;
  blk->collect("ebc", params);
  for (auto& [name, t] : params)
    if (!name.ends_with("A_log"))
      for (auto& v : t.mutable_data()) v = std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
  const auto rep = oracle::grad_check([blk](const auto& in) { return (*blk)(in[0]); },
                                      {oracle::param({1, D, 4, 4}, rng)}, rng);
  EXPECT_EQ(rep.entries, D * 16);
  EXPECT_LE(rep.max_rel, 1e-4);
}

TEST(EbcBlock, EachBranchIsCausalInItsOwnOrder) {
  Rng rng(13);
  EbcBlock<double> blk(small_config(3), grid_of(8, 8), rng);
  const std::size_t L = 16, din = blk.config().inner;
  const auto x = oracle::random({1, L, din}, rng);
  for (std::size_t s = 0; s < blk.branches().size(); ++s) {
    const auto& order = blk.permutations()[s].order;
    const auto base = blk.scan_branch(x, s);
    for (std::size_t t : {0u, 5u, 11u, 15u}) {
      auto xp = x.clone();
      xp.mutable_data()[order[t] * din + 1] += 0.75;
      const auto y = blk.scan_branch(xp, s);
      for (std::size_t p = 0; p < L; ++p)
        for (std::size_t i = 0; i < din; ++i) {
          if (p < t) ASSERT_EQ(y[p * din + i], base[p * din + i]) << "branch " << s << " leaked to " << p << " from " << t << " diff " << y[p * din + i] - base[p * din + i];
        }
      double changed = 0;
      for (std::size_t i = 0; i < din; ++i) changed += std::abs(y[t * din + i] - base[t * din + i]);
      EXPECT_GT(changed, 0.0);
    }
  }
}

TEST(EbcBlock, ChannelMismatchRejected) {
  Rng rng(14);
  EbcBlock<double> blk(small_config(4), grid_of(4, 4), rng);
  EXPECT_THROW(blk(Tensor({1, 3, 4, 4})), ShapeError);
}

}  // namespace
