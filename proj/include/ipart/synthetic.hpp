#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "ipart/tensor.hpp"

namespace ipart {

enum class PartShape { disk, square, bar };

struct PartTemplate {
  PartShape shape = PartShape::disk;
  std::array<double, 3> color{1.0, 1.0, 1.0};
  double size_min = 3.0;  // disk radius, square half side, bar half length
  double size_max = 5.0;
  double presence = 1.0;  // independent occurrence probability
  double anchor_y = 0.0;  // offset from the object center
  double anchor_x = 0.0;
};

/// Layout and labeling rule for planted-part scenes. The class of a sample is
/// the palette index of the discriminative part's color.
struct SceneSpec {
  Index canvas = 64;
  std::vector<PartTemplate> parts;
  Index classes = 4;
  Index discriminative_part = 0;
  double noise = 0.05;
  double center_jitter = 8.0;
  double anchor_jitter = 2.0;
  double background_min = 0.05;
  double background_max = 0.35;

  /// 64×64 canvas, four parts with presence (1, 1, 0.7, 0.4), four classes.
  static SceneSpec default_spec();
  /// Throws ConfigError when a rule is violated.
  void validate() const;
  std::array<double, 3> class_color(Index label) const;
};

struct Point {
  double y = 0.0;
  double x = 0.0;
};

/// Inclusive pixel box.
struct BoundingBox {
  double y0 = 0.0, x0 = 0.0, y1 = 0.0, x1 = 0.0;

  bool contains(const Point& p) const { return p.y >= y0 && p.y <= y1 && p.x >= x0 && p.x <= x1; }
  double diagonal() const;
};

struct Sample {
  Tensor image;  // 3×H×W in [0,1]
  int label = 0;
  std::vector<int> attributes;   // one binary attribute per part: present or not
  std::vector<Point> landmarks;  // planted part centers; meaningful where present
  std::vector<bool> presence;
  BoundingBox bbox;  // tight box over every planted pixel
};

using Dataset = std::vector<Sample>;

/// Deterministic in (spec, count, seed); sample i draws from its own stream
/// derived from (seed, i), so `threads` does not change the result.
Dataset generate(const SceneSpec& spec, Index count, std::uint64_t seed, int threads = 1);

/// `dir/NNNNNN.ppm` images plus `dir/manifest.csv` with one row per sample:
/// file,label,present_0..present_{P-1},landmark_0_y,landmark_0_x,...,bbox_y0,bbox_x0,bbox_y1,bbox_x1
/// Absent landmarks are written as -1,-1.
void write_dataset(const std::filesystem::path& dir, const Dataset& data);
Dataset read_dataset(const std::filesystem::path& dir);

/// Mixes a seed with a stream tag (splitmix64).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace ipart
