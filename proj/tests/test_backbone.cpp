#include <gtest/gtest.h>

#include <filesystem>

#include "test_support.hpp"

using namespace adagcd;

namespace {

BackboneConfig tiny_vit(std::size_t input = 8, std::size_t patch = 4) {
  BackboneConfig c;
  c.input_size = input;
  c.patch_size = patch;
  c.feat_dim = 8;
  c.depth = 2;
  c.heads = 2;
  c.mlp_ratio = 2;
  c.trainable_depth = 1;
  return c;
}

Image noise_image(std::size_t size, std::uint64_t seed) {
  Rng rng(seed);
  Image img(3, size, size);
  for (double& v : img.pixels) v = uniform01(rng);
  return img;
}

TEST(SyntheticBackbone, PositionCodeIsLinearInRowAndColumn) {
  Rng rng(0);
  const SyntheticScene s = make_scene({3}, 3, 5, rng);
  BackboneConfig plain = BackboneConfig::synthetic(6, 8, 0.0);
  BackboneConfig coded = plain;
  coded.position_scale = 2.0;
  const Matrix a = SyntheticBackbone(plain).features(s, 1).local;
  const Matrix b = SyntheticBackbone(coded).features(s, 1).local;
  Matrix code = b;
  code -= a;
  // Corner to corner along a row spans 2·scale along one unit axis.
  auto diff_norm = [&](std::size_t m, std::size_t n) {
    double sq = 0.0;
    for (std::size_t j = 0; j < 6; ++j) sq += (code(m, j) - code(n, j)) * (code(m, j) - code(n, j));
    return std::sqrt(sq);
  };
  EXPECT_NEAR(diff_norm(0, 4), 4.0, 1e-12);
  EXPECT_NEAR(diff_norm(0, 10), 4.0, 1e-12);
  // Centre cell (row 1, col 2) carries no code.
  for (std::size_t j = 0; j < 6; ++j) EXPECT_NEAR(code(7, j), 0.0, 1e-12);
  // Equal steps give equal increments.
  for (std::size_t j = 0; j < 6; ++j) EXPECT_NEAR(code(1, j) - code(0, j), code(2, j) - code(1, j), 1e-12);
  coded.position_scale = -1.0;
  EXPECT_THROW(coded.validate(), ConfigError);
}

TEST(SyntheticBackbone, DeterministicPerNoiseSeed) {
  Rng rng(0);
  const SyntheticScene s = make_scene({0, 1, 2}, 4, 4, rng);
  const SyntheticBackbone bb(BackboneConfig::synthetic(6, 8));
  const FeatureMap a = bb.features(s, 5), b = bb.features(s, 5), c = bb.features(s, 6);
  EXPECT_EQ(a.local, b.local);
  EXPECT_NE(a.local, c.local);
  EXPECT_EQ(a.patch_count(), 16u);
  EXPECT_EQ(a.grid_w, 4u);
}

TEST(SyntheticBackbone, CellsStayNearTheirPartEmbedding) {
  Rng rng(1);
  const SyntheticScene s = make_scene({0, 3, 5, 7}, 6, 6, rng);
  BackboneConfig cfg = BackboneConfig::synthetic(16, 8, 0.05);
  const SyntheticBackbone bb(cfg);
  const FeatureMap fm = bb.features(s, 2);
  for (std::size_t n = 0; n < fm.patch_count(); ++n) {
    const auto own = static_cast<std::size_t>(s.part_map[n]);
    const double d_own = linalg::squared_distance(fm.local.row(n), bb.part_embeddings().row(own));
    for (std::size_t p = 0; p < 8; ++p)
      if (p != own) EXPECT_LT(d_own, linalg::squared_distance(fm.local.row(n), bb.part_embeddings().row(p)));
  }
  Matrix mean(1, 16);
  for (std::size_t n = 0; n < fm.patch_count(); ++n)
    for (std::size_t j = 0; j < 16; ++j) mean[j] += fm.local(n, j) / 36.0;
  for (std::size_t j = 0; j < 16; ++j) EXPECT_NEAR(mean[j], fm.global_vec[j], 1e-12);
}

TEST(SyntheticBackbone, TwoPartScenesAreSeparableByNearestCentroid) {
  // Two classes with 2-part signatures that differ in one part.
  const SyntheticBackbone bb(BackboneConfig::synthetic(8, 4, 0.05));
  Matrix centroid[2] = {Matrix(1, 8), Matrix(1, 8)};
  const std::vector<int> sig[2] = {{0, 1}, {0, 2}};
  std::vector<std::pair<Matrix, int>> test;
  for (int c = 0; c < 2; ++c)
    for (std::uint64_t i = 0; i < 40; ++i) {
      Rng rng(derive_seed(9, {static_cast<std::uint64_t>(c), i}));
      const FeatureMap fm = bb.features(make_scene(sig[c], 4, 4, rng), i);
      if (i < 20) {
        for (std::size_t j = 0; j < 8; ++j) centroid[c][j] += fm.global_vec[j] / 20.0;
      } else {
        test.emplace_back(fm.global_vec, c);
      }
    }
  std::size_t correct = 0;
  for (const auto& [g, c] : test) {
    const int pred = linalg::squared_distance(g.row(0), centroid[0].row(0)) <
                             linalg::squared_distance(g.row(0), centroid[1].row(0))
                         ? 0
                         : 1;
    correct += pred == c;
  }
  EXPECT_GE(correct, 38u);
}

TEST(SyntheticBackbone, PartOutsideVocabularyIsContractViolation) {
  Rng rng(2);
  const SyntheticScene s = make_scene({0, 9}, 3, 3, rng);
  const SyntheticBackbone bb(BackboneConfig::synthetic(4, 5));
  EXPECT_THROW(bb.features(s, 0), ContractError);
}

TEST(VisionTransformer, OutputShapes) {
  ParameterStore store;
  const VisionTransformer vit(store, "backbone", tiny_vit(), 1);
  const FeatureMap fm = vit.features(noise_image(8, 3), 4);
  EXPECT_EQ(fm.local.rows(), 4u);
  EXPECT_EQ(fm.local.cols(), 8u);
  EXPECT_EQ(fm.global_vec.rows(), 1u);
  EXPECT_EQ(fm.grid_h, 2u);
  EXPECT_EQ(fm.image_id, 4);
  EXPECT_TRUE(fm.finite());
}

TEST(VisionTransformer, StandardGeometryGivesFourteenByFourteen) {
  BackboneConfig c;
  EXPECT_EQ(c.grid_side(), 14u);
  EXPECT_EQ(c.patch_count(), 196u);
  BackboneConfig small = tiny_vit(32, 16);
  EXPECT_EQ(small.patch_count(), 4u);
}

TEST(VisionTransformer, TrainableDepthSelectsLastBlocks) {
  ParameterStore store;
  BackboneConfig cfg = tiny_vit();
  VisionTransformer vit(store, "backbone", cfg, 1);
  const auto trainable = vit.trainable_parameters();
  ASSERT_FALSE(trainable.empty());
  for (const Parameter* p : trainable) EXPECT_EQ(p->name.rfind("backbone.blocks.1.", 0), 0u) << p->name;
  EXPECT_FALSE(store.at("backbone.cls_token").trainable);
  EXPECT_FALSE(store.at("backbone.blocks.0.attn.qkv.weight").trainable);

  ParameterStore store0;
  cfg.trainable_depth = 0;
  VisionTransformer frozen(store0, "backbone", cfg, 1);
  EXPECT_TRUE(frozen.trainable_parameters().empty());
}

TEST(VisionTransformer, ConfigurationErrors) {
  BackboneConfig bad = tiny_vit(10, 4);
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = tiny_vit();
  bad.trainable_depth = 3;
  EXPECT_THROW(bad.validate(), ConfigError);
  ParameterStore store;
  const VisionTransformer vit(store, "backbone", tiny_vit(), 1);
  EXPECT_THROW(vit.features(noise_image(12, 0)), ConfigError);
  EXPECT_THROW(extract_features(std::vector<Image>{}, vit), ConfigError);
}

TEST(VisionTransformer, WeightsRoundTripAndMissingTensor) {
  const auto dir = std::filesystem::temp_directory_path() / "adagcd_test_vit";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "w.bin").string();

  ParameterStore s1;
  const VisionTransformer a(s1, "backbone", tiny_vit(), 1);
  write_archive(a.export_weights(), path);

  BackboneConfig cfg = tiny_vit();
  cfg.weights_path = path;
  ParameterStore s2;
  const VisionTransformer b(s2, "enc", cfg, 999);
  const Image img = noise_image(8, 5);
  EXPECT_EQ(a.features(img).local, b.features(img).local);

  TensorArchive partial = a.export_weights();
  partial.tensors.pop_back();
  write_archive(partial, path);
  ParameterStore s3;
  EXPECT_THROW(VisionTransformer(s3, "backbone", cfg, 1), ConfigError);
}

}  // namespace
