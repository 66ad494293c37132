#include <gtest/gtest.h>

#include <numeric>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "socl/vision/structure.hpp"
#include "support.hpp"

namespace {

using namespace socl;
using namespace socl::vision;
using ten::Mat;

TEST(Patchify, OrderAndCount) {
  Volume v({4, 4, 2});
  for (std::size_t i = 0; i < v.voxels.size(); ++i) v.voxels[i] = static_cast<double>(i);
  const Mat p = patchify(v, {2, 2, 2});
  ASSERT_EQ(p.shape(), (ten::Shape{4, 8}));
  // Patch 1 is grid cell (1, 0, 0): x in {2, 3}, y in {0, 1}.
  EXPECT_EQ(p.row_vec(1), (std::vector<double>{2, 3, 6, 7, 18, 19, 22, 23}));
  double total = 0.0;
  for (double x : p.values()) total += x;
  EXPECT_EQ(total, std::accumulate(v.voxels.begin(), v.voxels.end(), 0.0));
  EXPECT_THROW(patchify(v, {3, 2, 2}), ShapeError);
}

TEST(Patchify, GridOf32Patches) {
  VisionDims d;
  d.volume = {32, 32, 16};
  d.patch = {8, 8, 8};
  EXPECT_EQ(d.n_patches(), 32u);
  EXPECT_EQ(patch_grid_extents(d.volume, d.patch), (Extents{4, 4, 2}));
}

TEST(PatchEmbedder, ZeroVolumeGivesBiasAndMapIsAffine) {
  VisionDims d = fixture::tiny_vision_dims();
  ten::Rng rng(4);
  PatchEmbedder e(d, rng);
  for (double& b : e.bias.value.values()) b = rng.normal();
  const auto zero = e.embed_volume(Volume(d.volume));
  for (std::size_t j = 0; j < zero.count(); ++j) EXPECT_EQ(zero.features.row_vec(j), e.bias.value.row_vec(0));

  Volume a(d.volume), b(d.volume), ab(d.volume);
  for (std::size_t i = 0; i < a.voxels.size(); ++i) {
    a.voxels[i] = rng.normal();
    b.voxels[i] = rng.normal();
    ab.voxels[i] = 2.0 * a.voxels[i] - b.voxels[i];
  }
  const Mat fa = e.embed_volume(a).features, fb = e.embed_volume(b).features, fab = e.embed_volume(ab).features;
  Mat lin(fa.rows(), fa.cols());
  for (std::size_t i = 0; i < lin.size(); ++i) lin[i] = 2.0 * fa[i] - fb[i];
  // Affine with bias c: 2(Wa + c) - (Wb + c) = W(2a - b) + c.
  EXPECT_LT(test::max_abs_diff(fab, lin), 1e-12);
}

struct ObserveCase {
  StructureQuerySet q;
  Mat F;
};

ObserveCase random_case(ten::Rng& rng, std::size_t ns, std::size_t nv, std::size_t d) {
  VisionDims dims;
  dims.d_v = dims.d_q = dims.d_a = dims.d_o = d;
  dims.n_structures = ns;
  dims.query_init_scale = 1.0;
  return {StructureQuerySet(dims, rng), rng.normal_mat(nv, d, 1.0)};
}

AttentionResult run(const ObserveCase& c) {
  PatchGrid g;
  g.features = c.F;
  return observe(g, c.q);
}

TEST(Observe, MatchesLoopOracle) {
  ten::Rng rng(11);
  for (int rep = 0; rep < 100; ++rep) {
    const auto c = random_case(rng, 1 + rng.below(5), 1 + rng.below(20), 1 + rng.below(8));
    const auto r = run(c);
    const auto [A, S] = oracle::observe(c.F, c.q.queries.value, c.q.w0.value, c.q.w1.value, c.q.w2.value);
    EXPECT_LT(test::max_abs_diff(r.attention, A), 1e-9);
    EXPECT_LT(test::max_abs_diff(r.tokens, S), 1e-9);
  }
}

// Each row of A^v is a distribution, so every s^v_i lies in the convex hull of
// the projected patches F W2.
TEST(Observe, AttentionRowsAreDistributionsAndTokensConvex) {
  ten::Rng rng(12);
  for (int rep = 0; rep < 30; ++rep) {
    const auto c = random_case(rng, 4, 12, 6);
    const auto r = run(c);
    const Mat v = ten::matmul(c.F, c.q.w2.value);
    for (std::size_t i = 0; i < r.attention.rows(); ++i) {
      double s = 0.0;
      for (double a : r.attention.row_span(i)) {
        EXPECT_GE(a, 0.0);
        s += a;
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
      for (std::size_t o = 0; o < v.cols(); ++o) {
        double lo = INFINITY, hi = -INFINITY;
        for (std::size_t j = 0; j < v.rows(); ++j) {
          lo = std::min(lo, v(j, o));
          hi = std::max(hi, v(j, o));
        }
        EXPECT_GE(r.tokens(i, o), lo - 1e-12);
        EXPECT_LE(r.tokens(i, o), hi + 1e-12);
      }
    }
  }
}

TEST(Observe, PermutingPatchesPermutesAttentionOnly) {
  ten::Rng rng(13);
  auto c = random_case(rng, 3, 10, 5);
  const auto base = run(c);
  std::vector<std::size_t> perm(10);
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm);
  ObserveCase p{c.q, Mat(10, 5)};
  for (std::size_t j = 0; j < 10; ++j)
    for (std::size_t k = 0; k < 5; ++k) p.F(j, k) = c.F(perm[j], k);
  const auto r = run(p);
  EXPECT_LT(test::max_abs_diff(r.tokens, base.tokens), 1e-12);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 10; ++j) EXPECT_NEAR(r.attention(i, j), base.attention(i, perm[j]), 1e-14);
}

// A feature column that is constant across patches moves every logit of a
// row by the same amount, which softmax ignores.
TEST(Observe, ConstantLogitShiftInvariance) {
  ten::Rng rng(14);
  auto c = random_case(rng, 2, 6, 4);
  const auto base = run(c);
  VisionDims dims;
  dims.d_v = 5;
  dims.d_q = dims.d_a = dims.d_o = 4;
  dims.n_structures = 2;
  StructureQuerySet q2(dims, rng);
  q2.queries.value = c.q.queries.value;
  q2.w0.value = c.q.w0.value;
  Mat F2(6, 5, 0.0), W1(5, 4, 0.0), W2(5, 4, 0.0);
  for (std::size_t j = 0; j < 6; ++j) {
    for (std::size_t k = 0; k < 4; ++k) F2(j, k) = c.F(j, k);
    F2(j, 4) = 3.0;
  }
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t k = 0; k < 4; ++k) {
      W1(r, k) = c.q.w1.value(r, k);
      W2(r, k) = c.q.w2.value(r, k);
    }
  for (std::size_t k = 0; k < 4; ++k) W1(4, k) = rng.normal();
  q2.w1.value = W1;
  q2.w2.value = W2;
  PatchGrid g;
  g.features = F2;
  const auto r = observe(g, q2);
  EXPECT_LT(test::max_abs_diff(r.attention, base.attention), 1e-12);
  EXPECT_LT(test::max_abs_diff(r.tokens, base.tokens), 1e-12);
}

TEST(TopK, TiesGoToLowerIndex) {
  const std::vector<double> row{0.1, 0.3, 0.3, 0.2, 0.1};
  EXPECT_EQ(top_k(row, 3), (std::vector<std::size_t>{1, 2, 3}));
  EXPECT_EQ(top_k(row, 5), (std::vector<std::size_t>{1, 2, 3, 0, 4}));
}

TEST(TopK, MatchesSortOracle) {
  ten::Rng rng(15);
  for (int rep = 0; rep < 200; ++rep) {
    std::vector<double> row(1 + rng.below(30));
    for (double& x : row) x = static_cast<double>(rng.below(6)) / 5.0;  // many ties
    const std::size_t k = 1 + rng.below(row.size());
    EXPECT_EQ(top_k(row, k), oracle::top_k(row, k));
  }
}

TEST(SelectPatches, StructureMajorDescending) {
  const Mat A{{0.1, 0.6, 0.3}, {0.5, 0.2, 0.3}};
  const Mat F{{1, 1}, {2, 2}, {3, 3}};
  const auto s = select_patches(A, F, 2);
  ASSERT_EQ(s.entries.size(), 4u);
  EXPECT_EQ(s.entries[0].patch, 1u);
  EXPECT_EQ(s.entries[1].patch, 2u);
  EXPECT_EQ(s.entries[2].structure, 1u);
  EXPECT_EQ(s.entries[2].patch, 0u);
  EXPECT_EQ(s.embeddings, (Mat{{2, 2}, {3, 3}, {1, 1}, {3, 3}}));
  EXPECT_THROW(select_patches(A, F, 4), ParameterError);
  EXPECT_THROW(select_patches(A, Mat(4, 2), 1), ShapeError);
}

TEST(VisionModel, CheckpointRoundTrip) {
  const VisionModel m(fixture::tiny_vision_dims(), 3);
  ten::ArrayTable t;
  m.save_to(t);
  VisionModel back(fixture::tiny_vision_dims(), 99);
  back.load_from(ten::ArrayTable::deserialize(t.serialize()));
  Volume v(fixture::tiny_vision_dims().volume, 0.5);
  EXPECT_EQ(back.features(v).observation.tokens, m.features(v).observation.tokens);
}

TEST(GradCheck, Observe) { EXPECT_LE(fixture::observe_grad_error(), 1e-3); }

}  // namespace
