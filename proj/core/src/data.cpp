#include "tsconv/data.hpp"

#include "tsconv/ls_conv.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

namespace tsconv::data {

Texture texture_of(int cls) { return static_cast<Texture>(cls % 3); }

namespace {

bool overlaps(const Polygon4& a, const Polygon4& b) {
  const auto inter = clip_convex(a.v, b.v);
  return inter.size() >= 3 && signed_area(inter) > 1e-9;
}

bool inside_frame(const Polygon4& p, int w, int h, double margin) {
  return std::all_of(p.v.begin(), p.v.end(), [&](const Point& q) {
    return q.x >= margin && q.y >= margin && q.x <= w - margin && q.y <= h - margin;
  });
}

void render(FeatureGrid& img, const MERect& r, Texture tex, const std::array<double, 3>& color) {
  const Polygon4 poly = normalized_clockwise(r.corners());
  const Rect bb = bounding_rect(poly);
  const int x0 = std::max(0, static_cast<int>(std::floor(bb.x0)));
  const int y0 = std::max(0, static_cast<int>(std::floor(bb.y0)));
  const int x1 = std::min(img.width() - 1, static_cast<int>(std::ceil(bb.x1)));
  const int y1 = std::min(img.height() - 1, static_cast<int>(std::ceil(bb.y1)));
  const double c = std::cos(r.angle), s = std::sin(r.angle);
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const Point p{x + 0.5, y + 0.5};
      if (polygon_membership(poly.v, p) >= 0.0) continue;
      const double dx = p.x - r.center.x, dy = p.y - r.center.y;
      const double u = c * dx + s * dy + 0.5 * r.long_side;
      const double v = -s * dx + c * dy + 0.5 * r.short_side;
      double k = 1.0;
      if (tex == Texture::kStriped) {
        k = static_cast<int>(std::floor(u / 3.0)) % 2 == 0 ? 1.0 : 0.3;
      } else if (tex == Texture::kDotted) {
        const double fu = std::fmod(u, 4.0) - 2.0, fv = std::fmod(v, 4.0) - 2.0;
        k = fu * fu + fv * fv < 1.3 ? 1.0 : 0.3;
      }
      for (int ch = 0; ch < img.channels(); ++ch) img.at(x, y, ch) = k * color[static_cast<std::size_t>(ch % 3)];
    }
  }
}

Polygon4 map_polygon(const Polygon4& p, auto&& fn) {
  Polygon4 out;
  for (int i = 0; i < 4; ++i) out.v[static_cast<std::size_t>(i)] = fn(p.v[static_cast<std::size_t>(i)]);
  return normalized_clockwise(out);
}

}  // namespace

Scene synth_scene(std::uint64_t seed, const SynthSpec& spec) {
  if (spec.width < 8 || spec.height < 8 || spec.count_min < 0 || spec.count_max < spec.count_min ||
      spec.size_min <= 0 || spec.size_max < spec.size_min || spec.aspect_min < 1.0 ||
      spec.aspect_max < spec.aspect_min || spec.classes < 1) {
    throw ConfigError("synth_scene: invalid spec");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uni = [&](double a, double b) { return a + (b - a) * unit(rng); };
  Scene scene;
  scene.image = FeatureGrid({spec.width, spec.height, 3});
  for (double& v : scene.image.data()) v = 0.25 * unit(rng);

  const int n = spec.count_min + static_cast<int>(rng() % static_cast<std::uint64_t>(spec.count_max - spec.count_min + 1));
  for (int i = 0; i < n; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
      MERect r;
      r.long_side = uni(spec.size_min, spec.size_max);
      r.short_side = std::max(r.long_side / uni(spec.aspect_min, spec.aspect_max), spec.min_short_side);
      if (r.short_side > r.long_side) std::swap(r.short_side, r.long_side);
      r.angle = uni(0.0, std::numbers::pi);
      r.center = {uni(0.0, spec.width), uni(0.0, spec.height)};
      const Polygon4 poly = normalized_clockwise(r.corners());
      if (!inside_frame(poly, spec.width, spec.height, 1.0)) continue;
      if (std::any_of(scene.objects.begin(), scene.objects.end(),
                      [&](const SceneObject& o) { return overlaps(o.polygon, poly); })) {
        continue;
      }
      const int cls = static_cast<int>(rng() % static_cast<std::uint64_t>(spec.classes));
      const std::array<double, 3> color{uni(0.6, 1.0), uni(0.6, 1.0), uni(0.6, 1.0)};
      render(scene.image, r, texture_of(cls), color);
      scene.objects.push_back({poly, cls, false});
      placed = true;
    }
    if (!placed) scene.placement_shortfall = true;
  }
  return scene;
}

Scene flip_horizontal(const Scene& scene) {
  Scene out = scene;
  const int w = scene.image.width(), h = scene.image.height(), c = scene.image.channels();
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) std::copy_n(scene.image.cell(w - 1 - x, y), c, out.image.cell(x, y));
  }
  for (auto& o : out.objects) o.polygon = map_polygon(o.polygon, [w](Point p) { return Point{w - p.x, p.y}; });
  return out;
}

Scene rotate90(const Scene& scene) {
  const int w = scene.image.width(), h = scene.image.height(), c = scene.image.channels();
  Scene out = scene;
  out.image = FeatureGrid({h, w, c});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) std::copy_n(scene.image.cell(x, y), c, out.image.cell(h - 1 - y, x));
  }
  for (auto& o : out.objects) o.polygon = map_polygon(o.polygon, [h](Point p) { return Point{h - p.y, p.x}; });
  return out;
}

Scene augment(const Scene& scene, std::mt19937_64& rng) {
  Scene out = (rng() & 1u) ? flip_horizontal(scene) : scene;
  if (out.image.width() == out.image.height()) {
    const int turns = static_cast<int>(rng() % 4u);
    for (int t = 0; t < turns; ++t) out = rotate90(out);
  }
  return out;
}

Scene rotate_scene(const Scene& scene, double angle) {
  const int w = scene.image.width(), h = scene.image.height(), ch = scene.image.channels();
  const double cx = 0.5 * w, cy = 0.5 * h, c = std::cos(angle), s = std::sin(angle);
  Scene out;
  out.placement_shortfall = scene.placement_shortfall;
  out.image = FeatureGrid({w, h, ch});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
      const int sx = static_cast<int>(std::floor(c * dx + s * dy + cx));
      const int sy = static_cast<int>(std::floor(-s * dx + c * dy + cy));
      if (sx < 0 || sy < 0 || sx >= w || sy >= h) continue;
      std::copy_n(scene.image.cell(sx, sy), ch, out.image.cell(x, y));
    }
  }
  for (const auto& o : scene.objects) {
    const Polygon4 p = map_polygon(o.polygon, [&](Point q) {
      const double dx = q.x - cx, dy = q.y - cy;
      return Point{c * dx - s * dy + cx, s * dx + c * dy + cy};
    });
    if (inside_frame(p, w, h, 0.0)) out.objects.push_back({p, o.cls, o.difficult});
  }
  return out;
}

std::vector<DotaRecord> parse_dota(std::istream& in, const std::vector<std::string>& categories) {
  std::vector<DotaRecord> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    if (line.starts_with("imagesource:") || line.starts_with("gsd:")) continue;
    std::istringstream ls(line);
    std::vector<std::string> tok;
    for (std::string t; ls >> t;) tok.push_back(t);
    if (tok.size() < 9 || tok.size() > 10) throw ParseError("dota: expected 9 or 10 fields", lineno);
    DotaRecord rec;
    rec.line = lineno;
    Polygon4 p;
    for (int i = 0; i < 8; ++i) {
      double v = 0.0;
      try {
        std::size_t used = 0;
        v = std::stod(tok[static_cast<std::size_t>(i)], &used);
        if (used != tok[static_cast<std::size_t>(i)].size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw ParseError("dota: bad coordinate '" + tok[static_cast<std::size_t>(i)] + "'", lineno);
      }
      if (!std::isfinite(v)) throw ParseError("dota: non-finite coordinate", lineno);
      auto& q = p.v[static_cast<std::size_t>(i / 2)];
      (i % 2 == 0 ? q.x : q.y) = v;
    }
    rec.category = tok[8];
    if (!categories.empty() &&
        std::find(categories.begin(), categories.end(), rec.category) == categories.end()) {
      throw ParseError("dota: unknown category '" + rec.category + "'", lineno);
    }
    if (tok.size() == 10) {
      if (tok[9] != "0" && tok[9] != "1") throw ParseError("dota: difficulty must be 0 or 1", lineno);
      rec.difficult = tok[9] == "1";
    }
    if (std::abs(signed_area(p.v)) < 1e-12) throw ParseError("dota: degenerate polygon", lineno);
    p = normalized_clockwise(p);
    if (!is_convex(p)) {
      rec.nonconvex = true;
      p = normalized_clockwise(merect_of(p).corners());
    }
    rec.polygon = p;
    out.push_back(rec);
  }
  return out;
}

std::vector<DotaRecord> parse_dota(const std::filesystem::path& path,
                                   const std::vector<std::string>& categories) {
  std::ifstream in(path);
  if (!in) throw ParseError("dota: cannot open " + path.string(), 0);
  return parse_dota(in, categories);
}

std::string format_dota(const Scene& scene, const std::vector<std::string>& categories) {
  std::string out;
  char buf[64];
  for (const auto& o : scene.objects) {
    for (const auto& q : o.polygon.v) {
      std::snprintf(buf, sizeof buf, "%.17g %.17g ", q.x, q.y);
      out += buf;
    }
    out += o.cls < static_cast<int>(categories.size()) ? categories[static_cast<std::size_t>(o.cls)]
                                                      : std::to_string(o.cls);
    out += o.difficult ? " 1\n" : " 0\n";
  }
  return out;
}

void write_png(const std::filesystem::path& path, const FeatureGrid& image) {
  const int c = image.channels();
  if (c != 1 && c != 3) throw ShapeError("write_png: need 1 or 3 channels");
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width());
  img.height = static_cast<png_uint_32>(image.height());
  img.format = c == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  std::vector<png_byte> buf(image.size());
  for (std::size_t i = 0; i < buf.size(); ++i) {
    buf[i] = static_cast<png_byte>(std::lround(std::clamp(image[i], 0.0, 1.0) * 255.0));
  }
  if (!png_image_write_to_file(&img, path.string().c_str(), 0, buf.data(), 0, nullptr)) {
    throw Error("write_png: " + std::string(img.message) + " (" + path.string() + ")");
  }
}

FeatureGrid read_png(const std::filesystem::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.string().c_str())) {
    throw ParseError("read_png: " + std::string(img.message) + " (" + path.string() + ")", 0);
  }
  const bool gray = (img.format & PNG_FORMAT_FLAG_COLOR) == 0;
  img.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  const int c = gray ? 1 : 3;
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&img);
    throw ParseError("read_png: " + std::string(img.message), 0);
  }
  FeatureGrid out({static_cast<int>(img.width), static_cast<int>(img.height), c});
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = buf[i] / 255.0;
  return out;
}

void write_heatmap(const std::filesystem::path& path, const FeatureGrid& grid, int channel,
                   double lo, double hi) {
  FeatureGrid g({grid.width(), grid.height(), 1});
  const double span = hi > lo ? hi - lo : 1.0;
  for (int y = 0; y < grid.height(); ++y) {
    for (int x = 0; x < grid.width(); ++x) g.at(x, y, 0) = (grid.at(x, y, channel) - lo) / span;
  }
  write_png(path, g);
}

void write_dataset(const std::filesystem::path& dir, const std::vector<Scene>& scenes,
                   const std::vector<std::string>& categories) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "labelTxt");
  std::ofstream manifest(dir / "manifest.txt");
  char name[32];
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    std::snprintf(name, sizeof name, "scene_%05zu", i);
    write_png(dir / "images" / (std::string(name) + ".png"), scenes[i].image);
    std::ofstream(dir / "labelTxt" / (std::string(name) + ".txt")) << format_dota(scenes[i], categories);
    manifest << name << '\n';
  }
  if (!manifest) throw Error("write_dataset: cannot write manifest in " + dir.string());
}

std::vector<Scene> read_dataset(const std::filesystem::path& dir,
                                const std::vector<std::string>& categories) {
  std::ifstream manifest(dir / "manifest.txt");
  if (!manifest) throw ParseError("dataset: missing manifest.txt in " + dir.string(), 0);
  std::vector<Scene> out;
  std::string name;
  while (std::getline(manifest, name)) {
    if (name.empty()) continue;
    Scene s;
    s.image = read_png(dir / "images" / (name + ".png"));
    for (const auto& r : parse_dota(dir / "labelTxt" / (name + ".txt"), categories)) {
      int cls = 0;
      if (!categories.empty()) {
        cls = static_cast<int>(std::find(categories.begin(), categories.end(), r.category) - categories.begin());
      }
      s.objects.push_back({r.polygon, cls, r.difficult});
    }
    out.push_back(std::move(s));
  }
  return out;
}

EncodedTargets encode_targets(const Scene& scene, const std::vector<LevelGeometry>& levels) {
  if (levels.empty()) throw ContractError("encode_targets: no levels");
  EncodedTargets t;
  t.levels = levels;
  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    const SceneObject& so = scene.objects[i];
    EncodedObject eo;
    eo.index = static_cast<int>(i);
    eo.cls = so.cls;
    eo.polygon = so.polygon;
    const Rect hbb = bounding_rect(so.polygon);
    eo.level = std::min(assign::level_for(std::max(hbb.width(), hbb.height())),
                        static_cast<int>(levels.size()) - 1);
    const LevelGeometry& lg = levels[static_cast<std::size_t>(eo.level)];
    eo.field = assign::gaussian_field(merect_of(so.polygon), lg.w, lg.h, lg.stride);
    std::vector<int> kept;
    for (int c : eo.field.support) {
      const Point a = cell_anchor(c % lg.w, c / lg.w, lg.stride);
      if (a.x >= hbb.x0 && a.x <= hbb.x1 && a.y >= hbb.y0 && a.y <= hbb.y1) kept.push_back(c);
    }
    if (kept.empty()) {
      const Point ctr = eo.field.merect.center;
      const int cx = std::clamp(static_cast<int>(std::floor(ctr.x / lg.stride)), 0, lg.w - 1);
      const int cy = std::clamp(static_cast<int>(std::floor(ctr.y / lg.stride)), 0, lg.h - 1);
      const int c = cy * lg.w + cx;
      eo.field.score[static_cast<std::size_t>(c)] = 1.0;
      eo.field.forced_center = true;
      kept.push_back(c);
      eo.tiny = true;
    }
    eo.field.support = kept;
    for (int c : kept) {
      GghlBox b = encode_gghl(so.polygon, cell_anchor(c % lg.w, c / lg.w, lg.stride));
      for (double& l : b.l) l = std::max(l, 0.0);
      eo.boxes.push_back(b);
    }
    t.objects.push_back(std::move(eo));
  }
  return t;
}

}  // namespace tsconv::data
