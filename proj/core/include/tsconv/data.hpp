#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <random>
#include <string>
#include <vector>

#include "tsconv/feature_grid.hpp"
#include "tsconv/geometry.hpp"
#include "tsconv/label_assign.hpp"

namespace tsconv::data {

struct SceneObject {
  Polygon4 polygon;  // clockwise, pixels
  int cls = 0;
  bool difficult = false;
};

struct Scene {
  FeatureGrid image;  // (W,H,C) in [0,1]
  std::vector<SceneObject> objects;
  // Fewer objects were placed than requested.
  bool placement_shortfall = false;
};

struct SynthSpec {
  int width = 64;
  int height = 64;
  int count_min = 1;
  int count_max = 3;
  double size_min = 12.0;  // long side, pixels
  double size_max = 30.0;
  double aspect_min = 1.0;  // long / short
  double aspect_max = 2.5;
  int classes = 3;
  double min_short_side = 6.0;

  friend bool operator==(const SynthSpec&, const SynthSpec&) = default;
};

enum class Texture { kSolid = 0, kStriped = 1, kDotted = 2 };
Texture texture_of(int cls);

// Rotated rectangles with class textures over a noise background.
Scene synth_scene(std::uint64_t seed, const SynthSpec& spec);

// Random horizontal flip and 90-degree rotation (square images only for the
// rotation).
Scene augment(const Scene& scene, std::mt19937_64& rng);
Scene flip_horizontal(const Scene& scene);
Scene rotate90(const Scene& scene);  // clockwise on screen
// Arbitrary-angle rotation about the image center with nearest-neighbour
// resampling; objects leaving the frame are dropped.
Scene rotate_scene(const Scene& scene, double angle);

struct DotaRecord {
  Polygon4 polygon;
  std::string category;
  bool difficult = false;
  bool nonconvex = false;  // polygon replaced by its MERect
  int line = 0;
};

// "x1 y1 ... x4 y4 category difficulty" per line; "imagesource:" and "gsd:"
// lines are skipped. An empty `categories` accepts any name.
std::vector<DotaRecord> parse_dota(std::istream& in, const std::vector<std::string>& categories = {});
std::vector<DotaRecord> parse_dota(const std::filesystem::path& path,
                                   const std::vector<std::string>& categories = {});
std::string format_dota(const Scene& scene, const std::vector<std::string>& categories);

// 8-bit PNG, 1 or 3 channels.
void write_png(const std::filesystem::path& path, const FeatureGrid& image);
FeatureGrid read_png(const std::filesystem::path& path);
// Heatmap scaled so that [lo, hi] maps onto [0, 255].
void write_heatmap(const std::filesystem::path& path, const FeatureGrid& grid, int channel,
                   double lo, double hi);

// Directory layout: images/<name>.png, labelTxt/<name>.txt, manifest.txt
// listing one name per line.
void write_dataset(const std::filesystem::path& dir, const std::vector<Scene>& scenes,
                   const std::vector<std::string>& categories);
std::vector<Scene> read_dataset(const std::filesystem::path& dir,
                                const std::vector<std::string>& categories);

struct LevelGeometry {
  int w = 0;
  int h = 0;
  double stride = 8.0;
};

struct EncodedObject {
  int index = 0;  // position in Scene::objects
  int level = 0;
  int cls = 0;
  Polygon4 polygon;
  assign::GaussianField field;
  // Gliding encoding at every support cell, parallel to field.support.
  std::vector<GghlBox> boxes;
  bool tiny = false;  // only the center cell is encoded
};

struct EncodedTargets {
  std::vector<LevelGeometry> levels;
  std::vector<EncodedObject> objects;
};

// Routes each object to a level by HBB max side and encodes it at every cell
// of its Gaussian region whose anchor lies inside the HBB.
EncodedTargets encode_targets(const Scene& scene, const std::vector<LevelGeometry>& levels);

}  // namespace tsconv::data
