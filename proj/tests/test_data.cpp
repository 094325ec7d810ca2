#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "test_support.hpp"

using namespace adagcd;

namespace {

std::vector<LabeledInstance> balanced(std::size_t classes, std::size_t per_class) {
  std::vector<LabeledInstance> out;
  InstanceId id = 0;
  for (std::size_t c = 0; c < classes; ++c)
    for (std::size_t i = 0; i < per_class; ++i) out.push_back({id++, static_cast<ClassId>(c)});
  return out;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("adagcd_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

TEST(Split, CifarScaleCounts) {
  const SplitSpec s = build_split(balanced(100, 500), KnownClassSpec::from_fraction(0.8), 0.5, 0);
  EXPECT_EQ(s.known_classes.size(), 80u);
  EXPECT_EQ(s.labeled_ids.size(), 20000u);
  EXPECT_EQ(s.unlabeled_ids.size(), 30000u);
  EXPECT_NO_THROW(s.validate());
}

TEST(Split, SyntheticScaleCounts) {
  const SplitSpec s = build_split(balanced(10, 100), KnownClassSpec::parse("0.5"), 0.5, 3);
  EXPECT_EQ(s.known_classes, (std::set<ClassId>{0, 1, 2, 3, 4}));
  EXPECT_EQ(s.labeled_ids.size(), 250u);
  EXPECT_EQ(s.unlabeled_ids.size(), 750u);
  for (InstanceId id : s.labeled_ids) EXPECT_LT(s.class_of(id), 5);
}

TEST(Split, DeterministicPerSeedAndSeedSensitive) {
  const auto ds = balanced(6, 20);
  const SplitSpec a = build_split(ds, KnownClassSpec::from_fraction(0.5), 0.5, 11);
  const SplitSpec b = build_split(ds, KnownClassSpec::from_fraction(0.5), 0.5, 11);
  const SplitSpec c = build_split(ds, KnownClassSpec::from_fraction(0.5), 0.5, 12);
  EXPECT_EQ(serialize_split(a), serialize_split(b));
  EXPECT_NE(a.labeled_ids, c.labeled_ids);
}

TEST(Split, SerializationRoundTripsByteForByte) {
  const SplitSpec s = build_split(balanced(4, 7), KnownClassSpec::parse("0,2"), 0.5, 5);
  const std::string text = serialize_split(s);
  std::istringstream in(text);
  const SplitSpec back = parse_split(in);
  EXPECT_EQ(back.known_classes, s.known_classes);
  EXPECT_EQ(back.labeled_ids, s.labeled_ids);
  EXPECT_EQ(back.unlabeled_ids, s.unlabeled_ids);
  EXPECT_EQ(back.seed, 5u);
  EXPECT_EQ(serialize_split(back), text);
}

TEST(Split, MalformedFilesAreIoErrors) {
  std::istringstream missing_header("instance_id,class_id,partition\n0,0,L\n");
  EXPECT_THROW(parse_split(missing_header), IoError);
  std::istringstream bad_partition("seed=0\nknown=0\ninstance_id,class_id,partition\n0,0,X\n");
  EXPECT_THROW(parse_split(bad_partition), IoError);
  std::istringstream novel_labeled("seed=0\nknown=0\ninstance_id,class_id,partition\n0,1,L\n");
  EXPECT_THROW(parse_split(novel_labeled), IoError);
}

TEST(KnownClasses, ParseRule) {
  EXPECT_DOUBLE_EQ(*KnownClassSpec::parse("0.8").fraction, 0.8);
  EXPECT_EQ(KnownClassSpec::parse("3,1,2").classes, (std::vector<ClassId>{3, 1, 2}));
  EXPECT_FALSE(KnownClassSpec::parse("1").fraction.has_value());
  EXPECT_THROW(KnownClassSpec::parse(""), ConfigError);
  EXPECT_THROW(KnownClassSpec::parse("1.5"), ConfigError);
  EXPECT_THROW(KnownClassSpec::parse("a,b"), ConfigError);
  EXPECT_THROW(KnownClassSpec::parse("7").resolve({0, 1}), ConfigError);
}

TEST(KnownClasses, AllKnownWarns) {
  std::vector<std::string> warnings;
  build_split(balanced(3, 4), KnownClassSpec::from_fraction(1.0), 0.5, 0, &warnings);
  ASSERT_EQ(warnings.size(), 1u);
}

TEST(Split, DuplicateIdsAndBadFractionRejected) {
  EXPECT_THROW(build_split({{0, 0}, {0, 1}}, KnownClassSpec::from_fraction(0.5), 0.5, 0), ConfigError);
  EXPECT_THROW(build_split(balanced(2, 2), KnownClassSpec::from_fraction(0.5), 1.0, 0), ConfigError);
}

TEST(Augment, IdentityLeavesScenesAndImagesUnchanged) {
  Rng rng(1);
  const SyntheticScene s = make_scene({1, 2, 3}, 4, 5, rng);
  Rng r2(2);
  EXPECT_EQ(augment_scene(s, AugmentConfig::identity(), r2), s);

  Image img(3, 4, 4);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<double>(i % 7) / 7.0;
  Rng r3(3);
  EXPECT_EQ(augment_image(img, AugmentConfig::identity(), r3), img);
}

TEST(Augment, CertainFlipMirrorsColumns) {
  Rng rng(4);
  const SyntheticScene s = make_scene({0, 1, 2, 3}, 3, 4, rng);
  AugmentConfig cfg = AugmentConfig::identity();
  cfg.flip_prob = 1.0;
  Rng r(5);
  const SyntheticScene f = augment_scene(s, cfg, r);
  for (std::size_t y = 0; y < 3; ++y)
    for (std::size_t x = 0; x < 4; ++x) EXPECT_EQ(f.at(y, x), s.at(y, 3 - x));
}

TEST(Augment, ViewsAreSeededAndDistinct) {
  Rng rng(6);
  SyntheticScene s = make_scene({0, 1, 2}, 6, 6, rng);
  s.instance_id = 9;
  AugmentConfig cfg;
  const auto a = make_views(s, cfg, 100, 0);
  const auto b = make_views(s, cfg, 100, 0);
  const auto c = make_views(s, cfg, 101, 0);
  EXPECT_EQ(a.view1, b.view1);
  EXPECT_EQ(a.view2, b.view2);
  EXPECT_NE(a.view1.noise_seed, a.view2.noise_seed);
  EXPECT_NE(a.view1.noise_seed, c.view1.noise_seed);
  EXPECT_EQ(a.source_id, 9);
}

TEST(Augment, RandomCropHasRequestedSize) {
  Image img(3, 20, 20, 0.5);
  AugmentConfig cfg;
  cfg.output_size = 8;
  const auto v = make_views(img, 3, cfg, 42);
  EXPECT_EQ(v.view1.height, 8u);
  EXPECT_EQ(v.view2.width, 8u);
}

TEST(Synthetic, DatasetShapeAndIds) {
  SyntheticDatasetConfig cfg;
  const SyntheticDataset ds = synthetic_dataset(cfg);
  ASSERT_EQ(ds.scenes.size(), 1000u);
  for (std::size_t i = 0; i < ds.scenes.size(); ++i) {
    const auto& s = ds.scenes[i];
    EXPECT_EQ(s.instance_id, static_cast<InstanceId>(i));
    EXPECT_EQ(s.part_types(), ds.signatures[static_cast<std::size_t>(s.class_id)]);
    EXPECT_GE(s.part_count(), 2u);
    EXPECT_LE(s.part_count(), 4u);
  }
  Rng rng(0);
  EXPECT_THROW(make_scene({0, 1, 2, 3, 4}, 2, 2, rng), ConfigError);
}

// With disjoint part embeddings, class centroids of the global feature separate
// the classes almost perfectly.
TEST(Synthetic, NearestCentroidAboveNinetyFivePercent) {
  SyntheticDatasetConfig cfg;
  cfg.vocab = 40;
  const SyntheticDataset ds = synthetic_dataset(cfg);
  const SyntheticBackbone bb(BackboneConfig::synthetic(16, 40, 0.05));
  std::vector<Matrix> feats;
  Matrix centroids(cfg.n_classes, 16);
  std::vector<double> counts(cfg.n_classes, 0.0);
  for (const auto& s : ds.scenes) {
    feats.push_back(bb.features(s, canonical_noise_seed(0, s.instance_id)).global_vec);
    const auto c = static_cast<std::size_t>(s.class_id);
    if (s.instance_id % 2 == 0) {
      for (std::size_t j = 0; j < 16; ++j) centroids(c, j) += feats.back()[j];
      counts[c] += 1;
    }
  }
  for (std::size_t c = 0; c < cfg.n_classes; ++c)
    for (std::size_t j = 0; j < 16; ++j) centroids(c, j) /= counts[c];
  std::size_t correct = 0, total = 0;
  for (const auto& s : ds.scenes) {
    if (s.instance_id % 2 == 0) continue;
    std::size_t best = 0;
    for (std::size_t c = 1; c < cfg.n_classes; ++c)
      if (linalg::squared_distance(feats[static_cast<std::size_t>(s.instance_id)].row(0), centroids.row(c)) <
          linalg::squared_distance(feats[static_cast<std::size_t>(s.instance_id)].row(0), centroids.row(best)))
        best = c;
    correct += best == static_cast<std::size_t>(s.class_id);
    ++total;
  }
  EXPECT_GT(static_cast<double>(correct) / static_cast<double>(total), 0.95);
}

TEST(ImageIo, PpmRoundTripAndGrayscaleExpansion) {
  const auto dir = temp_dir("image");
  Image img(3, 2, 3);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<double>(i * 15) / 255.0;
  save_ppm(img, (dir / "a.ppm").string());
  const Image back = load_pnm((dir / "a.ppm").string());
  ASSERT_EQ(back.pixels.size(), img.pixels.size());
  for (std::size_t i = 0; i < img.pixels.size(); ++i) EXPECT_NEAR(back.pixels[i], img.pixels[i], 1e-12);

  std::ofstream((dir / "g.pgm").string()) << "P2\n# comment\n2 1\n10\n0 10\n";
  const Image g = load_pnm((dir / "g.pgm").string());
  EXPECT_EQ(g.channels, 3u);
  EXPECT_DOUBLE_EQ(g.at(2, 0, 1), 1.0);
  EXPECT_THROW(load_pnm((dir / "missing.ppm").string()), IoError);
  std::ofstream((dir / "bad.ppm").string()) << "P6\n4 4\n255\nab";
  EXPECT_THROW(load_pnm((dir / "bad.ppm").string()), IoError);
}

TEST(ImageIo, IndexCsvAndFolderScan) {
  const auto dir = temp_dir("index");
  std::filesystem::create_directories(dir / "cat");
  std::filesystem::create_directories(dir / "dog");
  const Image img(3, 2, 2, 0.5);
  save_ppm(img, (dir / "dog" / "b.ppm").string());
  save_ppm(img, (dir / "cat" / "a.ppm").string());
  save_ppm(img, (dir / "cat" / "c.ppm").string());
  const DatasetIndex idx = scan_image_folder(dir.string());
  ASSERT_EQ(idx.entries.size(), 3u);
  EXPECT_EQ(idx.entries[0].class_id, 0);
  EXPECT_EQ(idx.entries[2].class_id, 1);
  EXPECT_EQ(idx.entries[2].id, 2);

  std::ofstream((dir / "index.csv").string()) << "instance_id,path,class_id\n5,cat/a.ppm,3\n6,dog/b.ppm,4\n";
  const DatasetIndex csv = read_index_csv((dir / "index.csv").string());
  ASSERT_EQ(csv.entries.size(), 2u);
  EXPECT_EQ(csv.entries[1].id, 6);
  EXPECT_EQ(csv.entries[1].class_id, 4);
  EXPECT_TRUE(std::filesystem::exists(csv.entries[0].path));
  std::ofstream((dir / "bad.csv").string()) << "1,x.ppm,2\nfoo,y.ppm,3\n";
  EXPECT_THROW(read_index_csv((dir / "bad.csv").string()), IoError);
}

}  // namespace
