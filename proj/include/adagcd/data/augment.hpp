#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "adagcd/data/image.hpp"
#include "adagcd/data/synthetic.hpp"
#include "adagcd/error.hpp"
#include "adagcd/rng.hpp"

namespace adagcd {

struct AugmentConfig {
  // Random resized crop (images).
  bool crop = true;
  double scale_min = 0.08;
  double scale_max = 1.0;
  double ratio_min = 3.0 / 4.0;
  double ratio_max = 4.0 / 3.0;
  std::size_t output_size = 0;  // 0 keeps the source size
  double flip_prob = 0.5;
  // Color jitter strengths (images); 0 disables.
  double brightness = 0.4;
  double contrast = 0.4;
  double saturation = 0.4;
  // Circular translation of synthetic scenes, in cells.
  std::size_t max_shift = 1;
  // Draw fresh backbone noise per view of a synthetic scene.
  bool resample_noise = true;

  static AugmentConfig identity() {
    AugmentConfig a;
    a.crop = false;
    a.flip_prob = 0.0;
    a.brightness = a.contrast = a.saturation = 0.0;
    a.max_shift = 0;
    a.resample_noise = false;
    return a;
  }

  void validate() const {
    if (crop && !(scale_min > 0.0 && scale_min <= scale_max && scale_max <= 1.0))
      throw ConfigError("augment: crop scale range must satisfy 0 < min ≤ max ≤ 1");
    if (crop && !(ratio_min > 0.0 && ratio_min <= ratio_max)) throw ConfigError("augment: invalid crop ratio range");
    if (flip_prob < 0.0 || flip_prob > 1.0) throw ConfigError("augment: flip probability must be in [0, 1]");
    if (brightness < 0 || contrast < 0 || saturation < 0) throw ConfigError("augment: jitter must be ≥ 0");
  }
};

template <typename T>
struct ViewPair {
  T view1;
  T view2;
  InstanceId source_id = 0;
};

// A synthetic scene after augmentation, plus the seed for its backbone noise.
struct SceneView {
  SyntheticScene scene;
  std::uint64_t noise_seed = 0;

  friend bool operator==(const SceneView&, const SceneView&) = default;
};

// Canonical (un-augmented) backbone noise seed of an instance.
inline std::uint64_t canonical_noise_seed(std::uint64_t seed, InstanceId id) {
  return derive_seed(seed, {0xC0FFEE, static_cast<std::uint64_t>(id)});
}

inline constexpr int max_crop_attempts = 10;

inline Image augment_image(const Image& src, const AugmentConfig& cfg, Rng& rng) {
  Image img = src;
  const std::size_t out = cfg.output_size ? cfg.output_size : 0;
  if (cfg.crop) {
    const double area = static_cast<double>(src.height * src.width);
    bool done = false;
    for (int attempt = 0; attempt < max_crop_attempts && !done; ++attempt) {
      const double target = area * std::uniform_real_distribution<double>(cfg.scale_min, cfg.scale_max)(rng);
      const double log_ratio =
          std::uniform_real_distribution<double>(std::log(cfg.ratio_min), std::log(cfg.ratio_max))(rng);
      const double ratio = std::exp(log_ratio);
      const auto w = static_cast<long long>(std::llround(std::sqrt(target * ratio)));
      const auto h = static_cast<long long>(std::llround(std::sqrt(target / ratio)));
      if (w < 1 || h < 1 || w > static_cast<long long>(src.width) || h > static_cast<long long>(src.height)) continue;
      const auto y0 = std::uniform_int_distribution<long long>(0, static_cast<long long>(src.height) - h)(rng);
      const auto x0 = std::uniform_int_distribution<long long>(0, static_cast<long long>(src.width) - w)(rng);
      img = resize_region(src, static_cast<double>(y0), static_cast<double>(x0), static_cast<double>(h),
                          static_cast<double>(w), out ? out : src.height, out ? out : src.width);
      done = true;
    }
    if (!done) throw NumericError("augment: could not draw a non-empty crop in 10 attempts");
  } else if (out) {
    img = resize(src, out, out);
  }
  if (cfg.flip_prob > 0.0 && uniform01(rng) < cfg.flip_prob) img = flip_horizontal(img);
  auto jitter_factor = [&](double strength) {
    return std::uniform_real_distribution<double>(std::max(0.0, 1.0 - strength), 1.0 + strength)(rng);
  };
  if (cfg.brightness > 0.0) {
    const double f = jitter_factor(cfg.brightness);
    for (double& v : img.pixels) v = std::clamp(v * f, 0.0, 1.0);
  }
  if (cfg.contrast > 0.0) {
    const double f = jitter_factor(cfg.contrast);
    double mean = 0.0;
    for (double v : img.pixels) mean += v;
    mean /= static_cast<double>(img.pixels.size());
    for (double& v : img.pixels) v = std::clamp(mean + f * (v - mean), 0.0, 1.0);
  }
  if (cfg.saturation > 0.0 && img.channels == 3) {
    const double f = jitter_factor(cfg.saturation);
    for (std::size_t y = 0; y < img.height; ++y)
      for (std::size_t x = 0; x < img.width; ++x) {
        const double gray = 0.299 * img.at(0, y, x) + 0.587 * img.at(1, y, x) + 0.114 * img.at(2, y, x);
        for (std::size_t c = 0; c < 3; ++c)
          img.at(c, y, x) = std::clamp(gray + f * (img.at(c, y, x) - gray), 0.0, 1.0);
      }
  }
  return img;
}

inline SyntheticScene flip_horizontal(const SyntheticScene& s) {
  SyntheticScene out = s;
  for (std::size_t r = 0; r < s.grid_h; ++r)
    for (std::size_t c = 0; c < s.grid_w; ++c) out.part_map[r * s.grid_w + c] = s.at(r, s.grid_w - 1 - c);
  return out;
}

inline SyntheticScene augment_scene(const SyntheticScene& src, const AugmentConfig& cfg, Rng& rng) {
  SyntheticScene s = src;
  if (cfg.max_shift > 0) {
    const auto m = static_cast<long long>(cfg.max_shift);
    const auto dy = std::uniform_int_distribution<long long>(-m, m)(rng);
    const auto dx = std::uniform_int_distribution<long long>(-m, m)(rng);
    const auto H = static_cast<long long>(s.grid_h), W = static_cast<long long>(s.grid_w);
    for (long long r = 0; r < H; ++r)
      for (long long c = 0; c < W; ++c)
        s.part_map[static_cast<std::size_t>(((r + dy) % H + H) % H * W + ((c + dx) % W + W) % W)] =
            src.part_map[static_cast<std::size_t>(r * W + c)];
  }
  if (cfg.flip_prob > 0.0 && uniform01(rng) < cfg.flip_prob) s = flip_horizontal(s);
  return s;
}

inline ViewPair<Image> make_views(const Image& src, InstanceId id, const AugmentConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng r1(derive_seed(seed, {static_cast<std::uint64_t>(id), 1}));
  Rng r2(derive_seed(seed, {static_cast<std::uint64_t>(id), 2}));
  return {augment_image(src, cfg, r1), augment_image(src, cfg, r2), id};
}

// `base_seed` keys the canonical noise used when noise is not resampled.
inline ViewPair<SceneView> make_views(const SyntheticScene& src, const AugmentConfig& cfg, std::uint64_t seed,
                                      std::uint64_t base_seed) {
  cfg.validate();
  const auto id = static_cast<std::uint64_t>(src.instance_id);
  ViewPair<SceneView> pair;
  pair.source_id = src.instance_id;
  for (int v = 1; v <= 2; ++v) {
    Rng rng(derive_seed(seed, {id, static_cast<std::uint64_t>(v)}));
    SceneView view{augment_scene(src, cfg, rng), 0};
    view.noise_seed = cfg.resample_noise ? derive_seed(seed, {id, static_cast<std::uint64_t>(v), 0x4015})
                                         : canonical_noise_seed(base_seed, src.instance_id);
    (v == 1 ? pair.view1 : pair.view2) = std::move(view);
  }
  return pair;
}

}  // namespace adagcd
