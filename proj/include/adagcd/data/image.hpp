#pragma once

// Images (CHW doubles in [0, 1]), netpbm loading, bilinear resizing, and
// dataset indices (CSV or class-per-directory layout).

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "adagcd/data/split.hpp"
#include "adagcd/error.hpp"

namespace adagcd {

struct Image {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;  // CHW

  Image() = default;
  Image(std::size_t c, std::size_t h, std::size_t w, double fill = 0.0)
      : channels(c), height(h), width(w), pixels(c * h * w, fill) {}

  double& at(std::size_t c, std::size_t y, std::size_t x) { return pixels[(c * height + y) * width + x]; }
  double at(std::size_t c, std::size_t y, std::size_t x) const { return pixels[(c * height + y) * width + x]; }

  friend bool operator==(const Image&, const Image&) = default;
};

inline Image flip_horizontal(const Image& img) {
  Image out(img.channels, img.height, img.width);
  for (std::size_t c = 0; c < img.channels; ++c)
    for (std::size_t y = 0; y < img.height; ++y)
      for (std::size_t x = 0; x < img.width; ++x) out.at(c, y, x) = img.at(c, y, img.width - 1 - x);
  return out;
}

// Bilinear resampling of the region [y0, y0+h) × [x0, x0+w) to out_h × out_w
// (half-pixel centers, edge clamped).
inline Image resize_region(const Image& img, double y0, double x0, double h, double w, std::size_t out_h,
                           std::size_t out_w) {
  Image out(img.channels, out_h, out_w);
  const double sy = h / static_cast<double>(out_h), sx = w / static_cast<double>(out_w);
  for (std::size_t oy = 0; oy < out_h; ++oy) {
    const double fy = std::clamp(y0 + (static_cast<double>(oy) + 0.5) * sy - 0.5, 0.0,
                                 static_cast<double>(img.height - 1));
    const auto y_lo = static_cast<std::size_t>(std::floor(fy));
    const std::size_t y_hi = std::min(y_lo + 1, img.height - 1);
    const double wy = fy - static_cast<double>(y_lo);
    for (std::size_t ox = 0; ox < out_w; ++ox) {
      const double fx = std::clamp(x0 + (static_cast<double>(ox) + 0.5) * sx - 0.5, 0.0,
                                   static_cast<double>(img.width - 1));
      const auto x_lo = static_cast<std::size_t>(std::floor(fx));
      const std::size_t x_hi = std::min(x_lo + 1, img.width - 1);
      const double wx = fx - static_cast<double>(x_lo);
      for (std::size_t c = 0; c < img.channels; ++c) {
        const double top = img.at(c, y_lo, x_lo) * (1 - wx) + img.at(c, y_lo, x_hi) * wx;
        const double bot = img.at(c, y_hi, x_lo) * (1 - wx) + img.at(c, y_hi, x_hi) * wx;
        out.at(c, oy, ox) = top * (1 - wy) + bot * wy;
      }
    }
  }
  return out;
}

inline Image resize(const Image& img, std::size_t out_h, std::size_t out_w) {
  if (img.height == out_h && img.width == out_w) return img;
  return resize_region(img, 0.0, 0.0, static_cast<double>(img.height), static_cast<double>(img.width), out_h,
                       out_w);
}

namespace detail {

inline std::string next_pnm_token(std::istream& in) {
  std::string tok;
  char ch = 0;
  while (in.get(ch)) {
    if (ch == '#') {
      std::string skip;
      std::getline(in, skip);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(ch);
  }
  return tok;
}

}  // namespace detail

// Reads binary or ASCII PPM/PGM. Grayscale is replicated to three channels.
inline Image load_pnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image " + path);
  const std::string magic = detail::next_pnm_token(in);
  const bool color = magic == "P6" || magic == "P3";
  const bool binary = magic == "P6" || magic == "P5";
  if (!color && magic != "P5" && magic != "P2") throw IoError("unsupported image format in " + path);
  std::size_t w = 0, h = 0;
  double maxval = 0;
  try {
    w = std::stoul(detail::next_pnm_token(in));
    h = std::stoul(detail::next_pnm_token(in));
    maxval = std::stod(detail::next_pnm_token(in));
  } catch (const std::exception&) {
    throw IoError("malformed image header in " + path);
  }
  if (w == 0 || h == 0 || maxval <= 0 || maxval > 65535) throw IoError("invalid image header in " + path);
  const std::size_t src_c = color ? 3 : 1;
  Image img(3, h, w);
  const bool wide = maxval > 255;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < src_c; ++c) {
        double v = 0;
        if (binary) {
          unsigned char b[2] = {0, 0};
          if (!in.read(reinterpret_cast<char*>(b), wide ? 2 : 1)) throw IoError("truncated image data in " + path);
          v = wide ? static_cast<double>((b[0] << 8) | b[1]) : static_cast<double>(b[0]);
        } else {
          const std::string tok = detail::next_pnm_token(in);
          if (tok.empty()) throw IoError("truncated image data in " + path);
          v = std::stod(tok);
        }
        v /= maxval;
        if (color) {
          img.at(c, y, x) = v;
        } else {
          for (std::size_t k = 0; k < 3; ++k) img.at(k, y, x) = v;
        }
      }
  return img;
}

inline void save_ppm(const Image& img, const std::string& path) {
  if (img.channels != 3) throw ContractError("save_ppm: expects 3 channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write image " + path);
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const auto b = static_cast<unsigned char>(std::lround(std::clamp(img.at(c, y, x), 0.0, 1.0) * 255.0));
        out.put(static_cast<char>(b));
      }
}

struct IndexEntry {
  InstanceId id = 0;
  std::string path;
  ClassId class_id = 0;
};

struct DatasetIndex {
  std::vector<IndexEntry> entries;

  std::vector<LabeledInstance> labeled_instances() const {
    std::vector<LabeledInstance> out;
    for (const auto& e : entries) out.push_back({e.id, e.class_id});
    return out;
  }
};

// `instance_id,path,class_id` rows; an optional header line is skipped.
// Relative paths are resolved against the CSV's directory.
inline DatasetIndex read_index_csv(const std::string& csv_path) {
  std::ifstream in(csv_path);
  if (!in) throw IoError("cannot open index " + csv_path);
  const auto base = std::filesystem::path(csv_path).parent_path();
  DatasetIndex index;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto c1 = line.find(','), c2 = line.rfind(',');
    if (c1 == std::string::npos || c1 == c2) throw IoError("index: malformed row at line " + std::to_string(line_no));
    const std::string id_s = line.substr(0, c1), path = line.substr(c1 + 1, c2 - c1 - 1), cls_s = line.substr(c2 + 1);
    IndexEntry e;
    try {
      std::size_t p1 = 0, p2 = 0;
      e.id = std::stoll(id_s, &p1);
      e.class_id = std::stoll(cls_s, &p2);
      if (p1 != id_s.size() || p2 != cls_s.size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      if (line_no == 1 && index.entries.empty()) continue;  // header
      throw IoError("index: non-integer id or class at line " + std::to_string(line_no));
    }
    const std::filesystem::path p(path);
    e.path = p.is_absolute() ? path : (base / p).string();
    index.entries.push_back(std::move(e));
  }
  return index;
}

// root/<class>/<image>: classes get ids by sorted directory name, instances by sorted path.
inline DatasetIndex scan_image_folder(const std::string& root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw IoError("not a directory: " + root);
  std::vector<fs::path> class_dirs;
  for (const auto& d : fs::directory_iterator(root))
    if (d.is_directory()) class_dirs.push_back(d.path());
  std::sort(class_dirs.begin(), class_dirs.end());
  std::vector<std::pair<std::string, ClassId>> files;
  for (std::size_t c = 0; c < class_dirs.size(); ++c)
    for (const auto& f : fs::directory_iterator(class_dirs[c]))
      if (f.is_regular_file()) files.emplace_back(f.path().string(), static_cast<ClassId>(c));
  std::sort(files.begin(), files.end());
  DatasetIndex index;
  InstanceId next = 0;
  for (auto& [path, c] : files) index.entries.push_back({next++, path, c});
  return index;
}

}  // namespace adagcd
