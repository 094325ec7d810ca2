#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace adagcd;
using adagcd::testing::random_matrix;

namespace {

SlotState slots_with_mask(Matrix slots, std::vector<std::uint8_t> mask) {
  SlotState s;
  s.slots = std::move(slots);
  s.keep_mask = std::move(mask);
  s.keep_prob.assign(s.keep_mask.size(), 0.5);
  return s;
}

// Random orthogonal matrix via Gram-Schmidt on a Gaussian draw.
Matrix random_rotation(std::size_t d, std::uint64_t seed) {
  Matrix q = random_matrix(d, d, seed);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < d; ++k) dot += q(i, k) * q(j, k);
      for (std::size_t k = 0; k < d; ++k) q(i, k) -= dot * q(j, k);
    }
    const double n = linalg::norm(q.row(i));
    for (std::size_t k = 0; k < d; ++k) q(i, k) /= n;
  }
  return q;
}

Matrix unit_rows(Matrix m) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const double n = linalg::norm(m.row(i));
    for (double& v : m.row(i)) v /= n;
  }
  return m;
}

TEST(Pooling, WorkedExamples) {
  const auto one = pool_slots(slots_with_mask(Matrix(2, 2, {0.3, -0.7, 9.0, 9.0}), {1, 0}));
  EXPECT_EQ(one.first, Matrix(1, 2, {0.3, -0.7}));
  EXPECT_EQ(one.second, Matrix(1, 2, {0.3, -0.7}));

  const auto two = pool_slots(slots_with_mask(Matrix(3, 2, {1, 0, 5, 5, 0, 1}), {1, 0, 1}));
  EXPECT_EQ(two.first, Matrix(1, 2, {0.5, 0.5}));
  EXPECT_EQ(two.second, Matrix(1, 2, {1, 1}));

  EXPECT_THROW(pool_slots(slots_with_mask(Matrix(2, 2), {0, 0})), ContractError);
}

TEST(Pooling, InvariantToSlotOrder) {
  const Matrix s = random_matrix(4, 3, 1);
  Matrix r(4, 3);
  const std::size_t perm[4] = {3, 1, 0, 2};
  const std::vector<std::uint8_t> mask{1, 1, 0, 1};
  std::vector<std::uint8_t> pm(4);
  for (std::size_t k = 0; k < 4; ++k) {
    for (std::size_t j = 0; j < 3; ++j) r(k, j) = s(perm[k], j);
    pm[k] = mask[perm[k]];
  }
  const auto a = pool_slots(slots_with_mask(s, mask));
  const auto b = pool_slots(slots_with_mask(r, pm));
  for (std::size_t j = 0; j < 3; ++j) {
    EXPECT_NEAR(a.first[j], b.first[j], 1e-15);
    EXPECT_EQ(a.second[j], b.second[j]);
  }
}

TEST(Fusion, WidthIsThreeTimesFeatureDim) {
  ParameterStore store;
  const Fusion f(store, "fusion", 64, 768, 1);
  const UnifiedVector u = f.fuse(Matrix(1, 768, 0.1), Matrix(1, 64), Matrix(1, 64));
  EXPECT_EQ(u.g_all.cols(), 2304u);
}

TEST(Fusion, ZeroPoolsYieldBiasesAndGlobalIsLocal) {
  ParameterStore store;
  const Fusion f(store, "fusion", 3, 4, 2);
  const Matrix g = random_matrix(1, 4, 3);
  const UnifiedVector u = f.fuse(g, Matrix(1, 3), Matrix(1, 3));
  EXPECT_EQ(u.g_dino(), g);
  EXPECT_EQ(u.pooled_mean_proj(), store.at("fusion.mean_proj.bias").value);
  EXPECT_EQ(u.pooled_max_proj(), store.at("fusion.max_proj.bias").value);

  const Matrix mean = random_matrix(1, 3, 4), mx = random_matrix(1, 3, 5);
  const UnifiedVector a = f.fuse(g, mean, mx);
  const UnifiedVector b = f.fuse(random_matrix(1, 4, 6), mean, mx);
  EXPECT_EQ(a.pooled_mean_proj(), b.pooled_mean_proj());
  EXPECT_EQ(a.pooled_max_proj(), b.pooled_max_proj());
  EXPECT_THROW(f.fuse(Matrix(1, 5), mean, mx), ShapeError);
  EXPECT_THROW(f.fuse(g, Matrix(1, 2), mx), ShapeError);
}

TEST(Projection, OutputsUnitVectors) {
  ParameterStore store;
  const ProjectionHead head(store, "head", 6, ProjectionConfig{16, 5, 3}, 7);
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Matrix z = head.project(random_matrix(1, 6, s, 4.0));
    EXPECT_NEAR(linalg::norm(z.row(0)), 1.0, 1e-12);
  }
  const Matrix x = random_matrix(1, 6, 8);
  EXPECT_EQ(head.project(x), head.project(x));
}

TEST(Contrastive, UnsupOrthogonalPairExample) {
  const Matrix z(2, 2, {1, 0, 0, 1});
  EXPECT_NEAR(unsup_contrastive(z, z, 1.0), std::log(1.0 + 2.0 * std::exp(-1.0)), 1e-14);
  EXPECT_NEAR(unsup_contrastive(z, z, 1.0), 0.5514, 5e-5);
}

TEST(Contrastive, UnsupApproachesZeroWithAntipodalNegatives) {
  const Matrix z(2, 2, {1, 0, -1, 0});
  EXPECT_LT(unsup_contrastive(z, z, 0.01), 1e-40);
  EXPECT_THROW(unsup_contrastive(Matrix(1, 2, {1, 0}), Matrix(1, 2, {1, 0}), 1.0), ContractError);
  EXPECT_THROW(unsup_contrastive(z, z, 0.0), ConfigError);
}

TEST(Contrastive, SupWithOnePairReducesToInfoNce) {
  const Matrix z = unit_rows(random_matrix(2, 3, 1));
  // Two rows sharing a label: each anchor's only candidate is its positive.
  EXPECT_NEAR(sup_contrastive(z, {4, 4}, 0.5), 0.0, 1e-14);
  // Same reduction inside a larger batch: SupCon with pairs equals InfoNCE over the doubled batch.
  const Matrix z1 = unit_rows(random_matrix(3, 4, 2)), z2 = unit_rows(random_matrix(3, 4, 3));
  Matrix stacked(6, 4);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      stacked(i, j) = z1(i, j);
      stacked(3 + i, j) = z2(i, j);
    }
  EXPECT_NEAR(sup_contrastive(stacked, {0, 1, 2, 0, 1, 2}, 0.3), unsup_contrastive(z1, z2, 0.3), 1e-13);
}

TEST(Contrastive, SupAllSameLabelAtEqualSimilarityIsLogBMinusOne) {
  for (std::size_t B : {3u, 5u, 8u}) {
    Matrix z(B, 2);
    for (std::size_t i = 0; i < B; ++i) z(i, 0) = 1.0;
    EXPECT_NEAR(sup_contrastive(z, std::vector<ClassId>(B, 1), 0.1), std::log(static_cast<double>(B - 1)), 1e-12);
  }
}

TEST(Contrastive, SupDegenerateBatchIsError) {
  const Matrix z = unit_rows(random_matrix(3, 2, 4));
  EXPECT_THROW(sup_contrastive(z, {0, 1, 2}, 0.1), ContractError);
  EXPECT_THROW(sup_contrastive(z, {0, 1}, 0.1), ShapeError);
}

TEST(Contrastive, LabelBijectionLeavesSupUnchanged) {
  const Matrix z = unit_rows(random_matrix(6, 3, 5));
  EXPECT_DOUBLE_EQ(sup_contrastive(z, {0, 0, 1, 1, 2, 2}, 0.2), sup_contrastive(z, {7, 7, 3, 3, 9, 9}, 0.2));
}

TEST(Contrastive, LossesAreRotationInvariantAndNonNegative) {
  const Matrix z1 = unit_rows(random_matrix(4, 5, 6)), z2 = unit_rows(random_matrix(4, 5, 7));
  const Matrix q = random_rotation(5, 8);
  const Matrix r1 = linalg::matmul(z1, q), r2 = linalg::matmul(z2, q);
  const std::vector<ClassId> labels{0, 1, 0, 1};
  EXPECT_NEAR(unsup_contrastive(z1, z2, 0.1), unsup_contrastive(r1, r2, 0.1), 1e-10);
  EXPECT_NEAR(sup_contrastive(z1, labels, 0.1), sup_contrastive(r1, labels, 0.1), 1e-10);
  EXPECT_GE(unsup_contrastive(z1, z2, 0.1), 0.0);
  EXPECT_GE(sup_contrastive(z1, labels, 0.1), 0.0);
  EXPECT_THROW(unsup_contrastive(Matrix(2, 2, 1.0), Matrix(2, 2, 1.0), 0.1), ContractError);
}

TEST(OverallLoss, WorkedExamples) {
  LossWeights w;
  EXPECT_EQ(overall_loss(1.0, 1.0, 1.0, w), 1.0);
  LossWeights rec_only{0.0, 0.0, 1.0};
  EXPECT_EQ(overall_loss(0.37, 5.0, 9.0, rec_only), 0.37);
  EXPECT_DOUBLE_EQ(overall_loss(2 * 0.3, 2 * 1.7, 2 * 2.9, w), 2 * overall_loss(0.3, 1.7, 2.9, w));

  Tape t(false);
  const Var one = t.constant(Matrix(1, 1, 1.0));
  EXPECT_EQ(overall_loss(t, one, one, one, w).scalar(), 1.0);
  EXPECT_THROW((LossWeights{0.0, 0.0, 0.0}).validate(), ConfigError);
}

}  // namespace
