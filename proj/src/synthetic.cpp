#include "ipart/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>
#include <string>

#include "ipart/errors.hpp"
#include "ipart/io.hpp"
#include "ipart/parallel.hpp"

namespace ipart {

namespace {

constexpr std::array<std::array<double, 3>, 8> kPalette{{
    {0.90, 0.10, 0.10},  // red
    {0.10, 0.80, 0.10},  // green
    {0.10, 0.20, 0.90},  // blue
    {0.90, 0.90, 0.10},  // yellow
    {1.00, 0.50, 0.00},  // orange
    {0.50, 0.30, 0.10},  // brown
    {1.00, 0.60, 0.70},  // pink
    {0.50, 0.50, 0.00},  // olive
}};

double half_thickness(const PartTemplate& t, double size) {
  return t.shape == PartShape::bar ? std::max(1.5, size / 4.0) : size;
}

bool covers(const PartTemplate& t, double size, double dy, double dx) {
  switch (t.shape) {
    case PartShape::disk:
      return dy * dy + dx * dx <= size * size;
    case PartShape::square:
      return std::abs(dy) <= size && std::abs(dx) <= size;
    case PartShape::bar:
      return std::abs(dy) <= half_thickness(t, size) && std::abs(dx) <= size;
  }
  return false;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double BoundingBox::diagonal() const {
  const double h = y1 - y0, w = x1 - x0;
  return std::sqrt(h * h + w * w);
}

SceneSpec SceneSpec::default_spec() {
  SceneSpec s;
  s.parts = {
      {PartShape::disk, {0.0, 0.0, 0.0}, 4.0, 6.0, 1.0, 0.0, 0.0},          // class-colored body
      {PartShape::square, {0.95, 0.95, 0.95}, 3.0, 5.0, 1.0, -13.0, -13.0},  // white head
      {PartShape::bar, {0.10, 0.85, 0.85}, 6.0, 9.0, 0.7, 13.0, 0.0},        // cyan bar
      {PartShape::disk, {0.85, 0.10, 0.85}, 2.5, 4.0, 0.4, 0.0, 14.0},       // magenta dot
  };
  return s;
}

std::array<double, 3> SceneSpec::class_color(Index label) const { return kPalette.at(static_cast<std::size_t>(label)); }

void SceneSpec::validate() const {
  if (canvas < 8) throw ConfigError("scene: canvas must be at least 8 pixels");
  if (parts.empty()) throw ConfigError("scene: need at least one part");
  if (classes < 1 || classes > static_cast<Index>(kPalette.size())) {
    throw ConfigError("scene: classes must be in [1, " + std::to_string(kPalette.size()) + "]");
  }
  if (discriminative_part < 0 || discriminative_part >= static_cast<Index>(parts.size())) {
    throw ConfigError("scene: discriminative part index out of range");
  }
  if (parts[static_cast<std::size_t>(discriminative_part)].presence != 1.0) {
    throw ConfigError("scene: the discriminative part must always be present");
  }
  if (!(noise >= 0.0) || center_jitter < 0.0 || anchor_jitter < 0.0) {
    throw ConfigError("scene: noise and jitter must be nonnegative");
  }
  if (!(background_min >= 0.0 && background_min <= background_max && background_max <= 1.0)) {
    throw ConfigError("scene: background range must lie in [0,1]");
  }
  const double mid = (static_cast<double>(canvas) - 1.0) / 2.0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const PartTemplate& t = parts[k];
    if (!(t.presence > 0.0 && t.presence <= 1.0)) {
      throw ConfigError("scene: part " + std::to_string(k) + " presence must lie in (0,1]");
    }
    if (!(t.size_min >= 2.0 && t.size_min <= t.size_max)) {
      throw ConfigError("scene: part " + std::to_string(k) + " needs 2 <= size_min <= size_max");
    }
    const double reach_y = half_thickness(t, t.size_max) + center_jitter + anchor_jitter;
    const double reach_x = t.size_max + center_jitter + anchor_jitter;
    if (mid + t.anchor_y - reach_y < 0.0 || mid + t.anchor_y + reach_y > canvas - 1.0 ||
        mid + t.anchor_x - reach_x < 0.0 || mid + t.anchor_x + reach_x > canvas - 1.0) {
      throw ConfigError("scene: part " + std::to_string(k) + " can leave the canvas");
    }
  }
}

Dataset generate(const SceneSpec& spec, Index count, std::uint64_t seed, int threads) {
  spec.validate();
  if (count < 1) throw ConfigError("generate: count must be positive");
  Dataset data(static_cast<std::size_t>(count));
  const Index size = spec.canvas;
  const double mid = (static_cast<double>(size) - 1.0) / 2.0;
  const std::size_t num_parts = spec.parts.size();

  parallel_for(count, threads, [&](Index i) {
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
    Sample& s = data[static_cast<std::size_t>(i)];

    s.label = static_cast<int>(std::min<Index>(spec.classes - 1, static_cast<Index>(unit(rng) * spec.classes)));
    const double cy = mid + uniform(-spec.center_jitter, spec.center_jitter);
    const double cx = mid + uniform(-spec.center_jitter, spec.center_jitter);
    const double background = uniform(spec.background_min, spec.background_max);

    s.image = Tensor(Shape{3, size, size}, background);
    s.presence.assign(num_parts, false);
    s.attributes.assign(num_parts, 0);
    s.landmarks.assign(num_parts, Point{-1.0, -1.0});
    double y0 = 1e300, x0 = 1e300, y1 = -1e300, x1 = -1e300;

    for (std::size_t k = 0; k < num_parts; ++k) {
      const PartTemplate& t = spec.parts[k];
      // draw every random number even for absent parts, so streams stay aligned
      const bool present = unit(rng) < t.presence;
      const double py = cy + t.anchor_y + uniform(-spec.anchor_jitter, spec.anchor_jitter);
      const double px = cx + t.anchor_x + uniform(-spec.anchor_jitter, spec.anchor_jitter);
      const double psize = uniform(t.size_min, t.size_max);
      if (!present) continue;
      s.presence[k] = true;
      s.attributes[k] = 1;
      s.landmarks[k] = Point{py, px};
      const auto color = static_cast<Index>(k) == spec.discriminative_part ? spec.class_color(s.label) : t.color;
      const Index r = static_cast<Index>(std::ceil(std::max(psize, half_thickness(t, psize)))) + 1;
      for (Index y = static_cast<Index>(std::floor(py)) - r; y <= static_cast<Index>(std::ceil(py)) + r; ++y) {
        for (Index x = static_cast<Index>(std::floor(px)) - r; x <= static_cast<Index>(std::ceil(px)) + r; ++x) {
          if (y < 0 || y >= size || x < 0 || x >= size) continue;
          if (!covers(t, psize, static_cast<double>(y) - py, static_cast<double>(x) - px)) continue;
          for (Index c = 0; c < 3; ++c) s.image(c, y, x) = color[static_cast<std::size_t>(c)];
          y0 = std::min(y0, static_cast<double>(y));
          x0 = std::min(x0, static_cast<double>(x));
          y1 = std::max(y1, static_cast<double>(y));
          x1 = std::max(x1, static_cast<double>(x));
        }
      }
    }
    s.bbox = BoundingBox{y0, x0, y1, x1};

    std::normal_distribution<double> noise(0.0, 1.0);
    for (Index p = 0; p < s.image.size(); ++p) {
      s.image[p] = std::clamp(s.image[p] + spec.noise * noise(rng), 0.0, 1.0);
    }
  });
  return data;
}

void write_dataset(const std::filesystem::path& dir, const Dataset& data) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  if (data.empty()) throw IoError("write_dataset: empty dataset");
  const std::size_t parts = data.front().presence.size();
  std::string manifest = "file,label";
  for (std::size_t k = 0; k < parts; ++k) manifest += ",present_" + std::to_string(k);
  for (std::size_t k = 0; k < parts; ++k) {
    manifest += ",landmark_" + std::to_string(k) + "_y,landmark_" + std::to_string(k) + "_x";
  }
  manifest += ",bbox_y0,bbox_x0,bbox_y1,bbox_x1\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Sample& s = data[i];
    char name[32];
    std::snprintf(name, sizeof name, "%06zu.ppm", i);
    write_ppm(dir / name, s.image);
    manifest += std::string(name) + "," + std::to_string(s.label);
    for (bool p : s.presence) manifest += p ? ",1" : ",0";
    for (std::size_t k = 0; k < parts; ++k) {
      const Point p = s.presence[k] ? s.landmarks[k] : Point{-1.0, -1.0};
      manifest += "," + format_double(p.y) + "," + format_double(p.x);
    }
    manifest += "," + format_double(s.bbox.y0) + "," + format_double(s.bbox.x0) + "," + format_double(s.bbox.y1) +
                "," + format_double(s.bbox.x1) + "\n";
  }
  write_text(dir / "manifest.csv", manifest);
}

Dataset read_dataset(const std::filesystem::path& dir) {
  std::istringstream in(read_text(dir / "manifest.csv"));
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty manifest in " + dir.string());
  std::size_t parts = 0;
  for (std::size_t pos = line.find("present_"); pos != std::string::npos; pos = line.find("present_", pos + 1)) ++parts;
  Dataset data;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ls(line);
    for (std::string f; std::getline(ls, f, ',');) fields.push_back(f);
    if (fields.size() != 2 + 3 * parts + 4) throw IoError("malformed manifest row: " + line);
    Sample s;
    try {
      s.image = read_ppm(dir / fields[0]);
      s.label = std::stoi(fields[1]);
      for (std::size_t k = 0; k < parts; ++k) {
        const bool present = fields[2 + k] == "1";
        s.presence.push_back(present);
        s.attributes.push_back(present ? 1 : 0);
        s.landmarks.push_back(Point{std::stod(fields[2 + parts + 2 * k]), std::stod(fields[3 + parts + 2 * k])});
      }
      const std::size_t b = 2 + 3 * parts;
      s.bbox = BoundingBox{std::stod(fields[b]), std::stod(fields[b + 1]), std::stod(fields[b + 2]),
                           std::stod(fields[b + 3])};
    } catch (const std::logic_error&) {
      throw IoError("malformed manifest row: " + line);
    }
    data.push_back(std::move(s));
  }
  if (data.empty()) throw IoError("manifest in " + dir.string() + " lists no samples");
  return data;
}

}  // namespace ipart
