#include "tsconv/model.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <random>

#include "tsconv/cs_conv.hpp"

namespace tsconv {

namespace {

void orthogonal_fill(FeatureGrid& w, std::mt19937_64& rng, double gain) {
  const int rows = w.shape().w * w.shape().h;  // fan in
  const int cols = w.shape().f;                // fan out
  std::normal_distribution<double> nd(0.0, 1.0);
  const int big = std::max(rows, cols), small = std::min(rows, cols);
  Eigen::MatrixXd a(big, small);
  for (int i = 0; i < big; ++i) {
    for (int j = 0; j < small; ++j) a(i, j) = nd(rng);
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(big, small);
  const Eigen::MatrixXd r = qr.matrixQR();
  for (int j = 0; j < small; ++j) {
    if (r(j, j) < 0) q.col(j) *= -1.0;
  }
  if (rows < cols) q.transposeInPlace();
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) w[static_cast<std::size_t>(i) * cols + j] = gain * q(i, j);
  }
}

constexpr double kGain = 1.4142135623730951;

}  // namespace

void TsConvModel::add(const std::string& name, Shape shape) {
  index_[name] = static_cast<int>(params_.size());
  params_.push_back({name, FeatureGrid(shape)});
}

int TsConvModel::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter " + name);
  return it->second;
}

std::size_t TsConvModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

TsConvModel::TsConvModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg.num_classes < 1 || cfg.width < 1 || cfg.in_channels < 1) {
    throw ConfigError("model: classes, width and input channels must be positive");
  }
  const int f = cfg.width;
  int cin = cfg.in_channels;
  for (int i = 0; i < 4; ++i) {
    add("backbone.c" + std::to_string(i) + ".w", {9, cin, cfg.stages[i]});
    add("backbone.c" + std::to_string(i) + ".b", {1, 1, cfg.stages[i]});
    cin = cfg.stages[i];
  }
  add("fpn.lat0.w", {1, cfg.stages[2], f});
  add("fpn.lat0.b", {1, 1, f});
  add("fpn.lat1.w", {1, cfg.stages[3], f});
  add("fpn.lat1.b", {1, 1, f});
  add("head.loc_feat.w", {9, f, f});
  add("head.loc_feat.b", {1, 1, f});
  add("head.cls_feat.w", {9, f, f});
  add("head.cls_feat.b", {1, 1, f});
  add("head.init.w", {1, f, 10});
  add("head.init.b", {1, 1, 10});
  if (cfg.head == HeadKind::kTsConv) {
    add("head.gen_loc.w", {1, f, 13});
    add("head.gen_loc.b", {1, 1, 13});
    add("head.gen_cls.w", {1, f, 27});
    add("head.gen_cls.b", {1, 1, 27});
    add("head.gen_dck.w", {1, f, 12});
    add("head.gen_dck.b", {1, 1, 12});
    add("head.ls.w", {9, f + 2, f});
    add("head.cs.w", {9, f, f});
  } else {
    add("head.ls.w", {9, f, f});
    add("head.ls.b", {1, 1, f});
    add("head.cs.w", {9, f, f});
    add("head.cs.b", {1, 1, f});
  }
  add("head.refine.w", {1, f, 8});
  add("head.refine.b", {1, 1, 8});
  add("head.cls.w", {1, f, cfg.num_classes});
  add("head.cls.b", {1, 1, cfg.num_classes});

  std::mt19937_64 rng(seed);
  for (auto& p : params_) {
    const bool is_weight = p.name.ends_with(".w");
    const bool zero_head = p.name.starts_with("head.init") || p.name.starts_with("head.gen") ||
                           p.name.starts_with("head.refine") || p.name.starts_with("head.cls.");
    if (is_weight && !zero_head) orthogonal_fill(p.value, rng, kGain);
  }
  if (cfg.head == HeadKind::kTsConv) {
    // omega starts on the regular 3x3 lattice inside the MERect
    auto& b = params_[static_cast<std::size_t>(index_of("head.gen_cls.b"))].value;
    const double lattice[3] = {1.0 / 6.0, 0.5, 5.0 / 6.0};
    for (int j = 0; j < 9; ++j) {
      b[2 * j] = std::log(lattice[j % 3] / (1.0 - lattice[j % 3]));
      b[2 * j + 1] = std::log(lattice[j / 3] / (1.0 - lattice[j / 3]));
    }
  }
}

std::vector<ad::Var> TsConvModel::bind(ad::Tape& tape, bool requires_grad) const {
  std::vector<ad::Var> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(tape.leaf(p.value, requires_grad));
  return out;
}

std::array<int, 2> TsConvModel::level_size(int image_w, int image_h, int level) {
  const int s = static_cast<int>(kLevelStrides[static_cast<std::size_t>(level)]);
  const int m = static_cast<int>(kLevelStrides.back());
  const int pw = (image_w + m - 1) / m * m, ph = (image_h + m - 1) / m * m;
  return {pw / s, ph / s};
}

FeatureGrid pad_to_multiple(const FeatureGrid& image, int multiple) {
  const Shape s = image.shape();
  const int pw = (s.w + multiple - 1) / multiple * multiple;
  const int ph = (s.h + multiple - 1) / multiple * multiple;
  if (pw == s.w && ph == s.h) return image;
  FeatureGrid out({pw, ph, s.f});
  for (int y = 0; y < s.h; ++y) std::copy_n(image.cell(0, y), s.w * s.f, out.cell(0, y));
  return out;
}

std::vector<ad::Var> TsConvModel::features(ad::Tape& tape, std::span<const ad::Var> bound,
                                           const FeatureGrid& image) const {
  if (image.channels() != cfg_.in_channels) {
    throw ShapeError("model: expected " + std::to_string(cfg_.in_channels) + " image channels");
  }
  auto p = [&](const char* name) { return bound[static_cast<std::size_t>(index_of(name))]; };
  ad::Var x = tape.constant(pad_to_multiple(image, static_cast<int>(kLevelStrides.back())));
  std::array<ad::Var, 4> c;
  for (int i = 0; i < 4; ++i) {
    const std::string n = "backbone.c" + std::to_string(i);
    x = ad::leaky_relu(ad::conv2d(x, p((n + ".w").c_str()), p((n + ".b").c_str()), 3, 2));
    c[static_cast<std::size_t>(i)] = x;
  }
  ad::Var p1 = ad::leaky_relu(ad::conv2d(c[3], p("fpn.lat1.w"), p("fpn.lat1.b"), 1, 1));
  ad::Var p0 = ad::leaky_relu(ad::add(ad::conv2d(c[2], p("fpn.lat0.w"), p("fpn.lat0.b"), 1, 1),
                                      ad::upsample_nearest(p1, 2)));
  return {p0, p1};
}

MERect safe_merect(const GghlBox& box) {
  try {
    return merect_of(decode_gghl(box).polygon);
  } catch (const Error&) {
    const double w = std::max(box.l[1] + box.l[3], 1e-3);
    const double h = std::max(box.l[0] + box.l[2], 1e-3);
    MERect r;
    r.center = {box.anchor.x + 0.5 * (box.l[1] - box.l[3]), box.anchor.y + 0.5 * (box.l[2] - box.l[0])};
    r.long_side = std::max(w, h);
    r.short_side = std::min(w, h);
    r.angle = w >= h ? 0.0 : std::numbers::pi / 2;
    return r;
  }
}

std::vector<LevelOutput> TsConvModel::forward(ad::Tape& tape, std::span<const ad::Var> bound,
                                              const FeatureGrid& image,
                                              const std::vector<PositionSet>* positives,
                                              const std::vector<FeatureGrid>* plan_boxes) const {
  if (bound.size() != params_.size()) throw ContractError("model: parameter binding size mismatch");
  auto p = [&](const char* name) { return bound[static_cast<std::size_t>(index_of(name))]; };
  const auto levels = features(tape, bound, image);
  if (positives && positives->size() != levels.size()) {
    throw ContractError("model: need one positive set per level");
  }
  if (plan_boxes && plan_boxes->size() != levels.size()) {
    throw ContractError("model: need one plan box grid per level");
  }
  const bool ts = cfg_.head == HeadKind::kTsConv;
  std::vector<LevelOutput> outs;
  for (std::size_t k = 0; k < levels.size(); ++k) {
    LevelOutput o;
    o.stride = kLevelStrides[k];
    const double stride = o.stride;
    const ad::Var& feat = levels[k];
    const int w = feat.shape().w, h = feat.shape().h;

    ad::Var loc_feat = ad::leaky_relu(ad::conv2d(feat, p("head.loc_feat.w"), p("head.loc_feat.b"), 3, 1));
    ad::Var cls_feat = ad::leaky_relu(ad::conv2d(feat, p("head.cls_feat.w"), p("head.cls_feat.b"), 3, 1));
    ad::Var raw = ad::conv2d(loc_feat, p("head.init.w"), p("head.init.b"), 1, 1);

    const double lc = cfg_.log_l_clamp;
    using D10 = Dual<10>;
    const ad::Var raw_in[] = {raw};
    ad::Var head = ad::map_cells<10, 10>(raw_in, nullptr, [stride, lc](int, int, const D10* r, const double*, D10* out) {
      for (int n = 0; n < 4; ++n) out[n] = stride * exp(sc::clamp(r[n], D10(-lc), D10(lc)));
      const D10 width = out[1] + out[3], height = out[0] + out[2];
      auto sig = [](const D10& v) { return 1.0 / (1.0 + exp(-v)); };
      out[4] = sig(r[4]) * width;
      out[5] = sig(r[5]) * height;
      out[6] = sig(r[6]) * width;
      out[7] = sig(r[7]) * height;
      out[8] = sig(r[8]);
      out[9] = sig(r[9]);
    });
    o.init = ad::slice_channels(head, 0, 9);
    o.obj = ad::slice_channels(head, 9, 1);

    if (positives) {
      o.positives = (*positives)[k];
      if (o.positives.width() != w || o.positives.height() != h) {
        throw ShapeError("model: positive set does not match level " + std::to_string(k));
      }
    } else {
      o.positives = PositionSet(w, h);
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          if (o.obj.value().at(x, y, 0) > cfg_.prefilter) o.positives.insert(x, y);
        }
      }
    }

    ad::Var ls_out, cs_out;
    if (ts) {
      ad::Var gl = ad::sigmoid(ad::conv2d(loc_feat, p("head.gen_loc.w"), p("head.gen_loc.b"), 1, 1));
      ad::Var gc = ad::sigmoid(ad::conv2d(cls_feat, p("head.gen_cls.w"), p("head.gen_cls.b"), 1, 1));
      ad::Var gk = ad::conv2d(ad::global_avg_pool(cls_feat), p("head.gen_dck.w"), p("head.gen_dck.b"), 1, 1);
      o.sigma = ad::slice_channels(gl, 0, 4);
      o.m_loc = ad::slice_channels(gl, 4, 9);
      o.omega = ad::slice_channels(gc, 0, 18);
      o.m_cls = ad::slice_channels(gc, 18, 9);
      o.lambda = ad::sigmoid(ad::slice_channels(gk, 0, 4));
      o.beta = ad::softmax_channels(ad::slice_channels(gk, 4, 8));

      ad::Var box = plan_boxes ? tape.constant((*plan_boxes)[k]) : ad::detach(ad::slice_channels(o.init, 0, 8));
      if (box.shape() != Shape{w, h, 8}) throw ShapeError("model: plan boxes must be " + Shape{w, h, 8}.str());
      o.loc_coords = ls::loc_plan_coords(box, o.sigma, o.positives, stride);
      ls_out = ad::leaky_relu(
          ls::ls_conv_forward(ls::embed_coords(loc_feat), p("head.ls.w"), o.loc_coords, o.m_loc));

      o.merects = FeatureGrid({w, h, 5});
      const FeatureGrid& iv = box.value();
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          if (!o.positives.contains(x, y)) continue;
          const double* c = iv.cell(x, y);
          GghlBox b;
          std::copy_n(c, 4, b.l.begin());
          std::copy_n(c + 4, 4, b.s.begin());
          b.anchor = cell_anchor(x, y, stride);
          const MERect r = safe_merect(b);
          double* m = o.merects.cell(x, y);
          m[0] = r.center.x;
          m[1] = r.center.y;
          m[2] = r.long_side;
          m[3] = r.short_side;
          m[4] = r.angle;
        }
      }
      o.cls_coords = cs::cls_plan_coords(o.omega, o.merects, o.positives, stride);
      cs_out = ad::leaky_relu(
          cs::cs_conv_forward(cls_feat, p("head.cs.w"), o.lambda, o.beta, o.cls_coords, o.m_cls));
    } else {
      ls_out = ad::leaky_relu(ad::conv2d(loc_feat, p("head.ls.w"), p("head.ls.b"), 3, 1));
      cs_out = ad::leaky_relu(ad::conv2d(cls_feat, p("head.cs.w"), p("head.cs.b"), 3, 1));
    }

    ad::Var draw = ad::conv2d(ls_out, p("head.refine.w"), p("head.refine.b"), 1, 1);
    const double dc = cfg_.log_delta_clamp;
    using D17 = Dual<17>;
    const ad::Var ref_in[] = {o.init, draw};
    o.refined = ad::map_cells<17, 9>(ref_in, nullptr, [dc](int, int, const D17* in, const double*, D17* out) {
      std::array<D17, 4> l, s, dl, ds, lo, so;
      for (int n = 0; n < 4; ++n) {
        l[n] = in[n];
        s[n] = in[4 + n];
        dl[n] = exp(sc::clamp(in[9 + n], D17(-dc), D17(dc)));
        ds[n] = exp(sc::clamp(in[13 + n], D17(-dc), D17(dc)));
      }
      ls::refine_box<D17>(l, s, dl, ds, lo, so);
      for (int n = 0; n < 4; ++n) {
        out[n] = lo[n];
        out[4 + n] = so[n];
      }
      out[8] = in[8];
    });
    o.cls = ad::sigmoid(ad::conv2d(cs_out, p("head.cls.w"), p("head.cls.b"), 1, 1));
    outs.push_back(std::move(o));
  }
  return outs;
}

LevelPrediction snapshot(const LevelOutput& out) {
  return {out.stride, out.obj.value(), out.refined.value(), out.cls.value()};
}

std::vector<Detection> decode(std::span<const LevelPrediction> levels, double conf_thresh,
                              double hbb_ratio) {
  std::vector<Detection> dets;
  for (const auto& lv : levels) {
    const int w = lv.obj.width(), h = lv.obj.height();
    const int nc = lv.cls.channels();
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double* c = lv.cls.cell(x, y);
        const int best = static_cast<int>(std::max_element(c, c + nc) - c);
        const double score = lv.obj.at(x, y, 0) * c[best];
        if (!(score > conf_thresh)) continue;
        const double* r = lv.refined.cell(x, y);
        GghlBox b;
        std::copy_n(r, 4, b.l.begin());
        std::copy_n(r + 4, 4, b.s.begin());
        b.anchor = cell_anchor(x, y, lv.stride);
        b.area_ratio = r[8];
        DecodedBox d;
        try {
          d = decode_gghl(b);
        } catch (const DegenerateBox&) {
          continue;
        }
        dets.push_back({b.area_ratio > hbb_ratio ? rect_polygon(d.hbb) : d.polygon, best, score});
      }
    }
  }
  return dets;
}

}  // namespace tsconv
