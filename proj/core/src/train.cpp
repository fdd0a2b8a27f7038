#include "tsconv/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>
#include <sstream>

namespace tsconv {

std::vector<data::LevelGeometry> level_geometry(int image_w, int image_h) {
  std::vector<data::LevelGeometry> out;
  for (int k = 0; k < static_cast<int>(kLevelStrides.size()); ++k) {
    const auto [w, h] = TsConvModel::level_size(image_w, image_h, k);
    out.push_back({w, h, kLevelStrides[static_cast<std::size_t>(k)]});
  }
  return out;
}

std::vector<PositionSet> candidate_positions(const data::EncodedTargets& targets, double threshold) {
  std::vector<PositionSet> out;
  for (const auto& lg : targets.levels) out.emplace_back(lg.w, lg.h);
  for (const auto& o : targets.objects) {
    auto& ps = out[static_cast<std::size_t>(o.level)];
    for (int c : o.field.support) {
      if (o.field.at(c) > threshold) ps.insert(c % ps.width(), c / ps.width());
    }
  }
  return out;
}

namespace {

GghlBox box_at(const FeatureGrid& g, int x, int y, double stride) {
  const double* c = g.cell(x, y);
  GghlBox b;
  std::copy_n(c, 4, b.l.begin());
  std::copy_n(c + 4, 4, b.s.begin());
  b.area_ratio = c[8];
  b.anchor = cell_anchor(x, y, stride);
  return b;
}

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

ImageLoss image_loss(const TsConvModel& model, ad::Tape& tape, std::span<const ad::Var> bound,
                     const FeatureGrid& image, const data::EncodedTargets& targets,
                     const AssignOptions& options, double gamma) {
  ImageLoss out;
  const auto candidates = candidate_positions(targets, options.threshold);
  out.outputs = model.forward(tape, bound, image, &candidates);
  const int nc = model.config().num_classes;
  const std::size_t nlev = out.outputs.size();
  if (targets.levels.size() != nlev) throw ShapeError("image_loss: level count mismatch");
  out.maps.resize(nlev);
  out.targets.resize(nlev);

  for (std::size_t k = 0; k < nlev; ++k) {
    const LevelOutput& lo = out.outputs[k];
    const auto& lg = targets.levels[k];
    if (lo.obj.shape().w != lg.w || lo.obj.shape().h != lg.h) {
      throw ShapeError("image_loss: targets encoded for a different image size");
    }
    std::vector<const data::EncodedObject*> objs;
    for (const auto& o : targets.objects) {
      if (o.level == static_cast<int>(k)) objs.push_back(&o);
    }
    if (options.kind == AssignerKind::kDtla) {
      std::vector<assign::ObjectEvidence> ev;
      const FeatureGrid& refined = lo.refined.value();
      const FeatureGrid& cls = lo.cls.value();
      for (const auto* o : objs) {
        assign::ObjectEvidence e{&o->field, FeatureGrid({lg.w, lg.h, 1}), FeatureGrid({lg.w, lg.h, 1})};
        for (std::size_t j = 0; j < o->field.support.size(); ++j) {
          const int c = o->field.support[j];
          const int x = c % lg.w, y = c / lg.w;
          e.loc[static_cast<std::size_t>(c)] = assign::loc_score(box_at(refined, x, y, lg.stride), o->boxes[j]).score;
          e.cls[static_cast<std::size_t>(c)] = cls.at(x, y, o->cls);
        }
        ev.push_back(std::move(e));
      }
      assign::DtlaParams p;
      p.threshold = options.threshold;
      p.theta = options.theta;
      p.iter = options.iter;
      p.iter_max = options.iter_max;
      out.maps[k] = assign::assign_dtla(ev, lg.w, lg.h, p);
    } else {
      std::vector<const assign::GaussianField*> fields;
      for (const auto* o : objs) fields.push_back(&o->field);
      out.maps[k] = assign::assign_gghl_static(fields, lg.w, lg.h, options.threshold);
    }

    auto& t = out.targets[k];
    t.assign = &out.maps[k];
    t.box = FeatureGrid({lg.w, lg.h, 9});
    t.cls = FeatureGrid({lg.w, lg.h, nc});
    const auto& map = out.maps[k];
    for (std::size_t i = 0; i < map.cells(); ++i) {
      if (map.tag[i] != assign::Tag::kPositive) continue;
      const auto* o = objs[static_cast<std::size_t>(map.owner[i])];
      const auto it = std::find(o->field.support.begin(), o->field.support.end(), static_cast<int>(i));
      const GghlBox& b = o->boxes[static_cast<std::size_t>(it - o->field.support.begin())];
      double* dst = t.box.data().data() + i * 9;
      std::copy(b.l.begin(), b.l.end(), dst);
      std::copy(b.s.begin(), b.s.end(), dst + 4);
      dst[8] = b.area_ratio;
      t.cls[i * static_cast<std::size_t>(nc) + static_cast<std::size_t>(o->cls)] = 1.0;
    }
  }

  std::vector<loss::LevelPreds> preds;
  for (const auto& lo : out.outputs) preds.push_back({lo.obj, lo.init, lo.refined, lo.cls});
  out.terms = loss::total_loss(out.targets, preds, gamma);
  return out;
}

std::vector<data::Scene> training_scenes(const RunConfig& cfg) {
  if (cfg.data != "synth") {
    auto scenes = data::read_dataset(cfg.data, cfg.classes);
    if (scenes.empty()) throw ParseError("dataset " + cfg.data + " is empty", 0);
    return scenes;
  }
  std::vector<data::Scene> out;
  for (int i = 0; i < cfg.train_scenes; ++i) {
    out.push_back(data::synth_scene(mix(cfg.seed * 0x100000001b3ULL + static_cast<std::uint64_t>(i)), cfg.synth));
  }
  return out;
}

std::vector<data::Scene> validation_scenes(const RunConfig& cfg) {
  std::vector<data::Scene> out;
  for (int i = 0; i < cfg.val_scenes; ++i) {
    out.push_back(data::synth_scene(mix(cfg.val_seed * 0x100000001b3ULL + static_cast<std::uint64_t>(i)), cfg.synth));
  }
  return out;
}

Trainer::Trainer(const RunConfig& cfg, std::vector<data::Scene> scenes)
    : cfg_(cfg), scenes_(std::move(scenes)), model_(cfg.model, cfg.seed), rng_(mix(cfg.seed + 17)) {
  cfg_.validate();
  if (scenes_.empty()) throw ContractError("trainer: no training scenes");
  for (const auto& p : model_.params()) velocity_.emplace_back(p.value.size(), 0.0);
  cache_.resize(scenes_.size());
  cached_.assign(scenes_.size(), false);
  order_.resize(scenes_.size());
  std::iota(order_.begin(), order_.end(), 0);
  std::shuffle(order_.begin(), order_.end(), rng_);
}

double Trainer::lr_at(long iter) const {
  if (cfg_.iterations <= 0) return cfg_.lr;
  const double t = std::clamp(static_cast<double>(iter) / static_cast<double>(cfg_.iterations), 0.0, 1.0);
  return cfg_.lr_min + 0.5 * (cfg_.lr - cfg_.lr_min) * (1.0 + std::cos(std::numbers::pi * t));
}

const data::EncodedTargets& Trainer::targets_for(std::size_t index, const data::Scene& scene, bool cached) {
  const auto geo = level_geometry(scene.image.width(), scene.image.height());
  if (!cached) {
    scratch_ = data::encode_targets(scene, geo);
    return scratch_;
  }
  if (!cached_[index]) {
    cache_[index] = data::encode_targets(scene, geo);
    cached_[index] = true;
  }
  return cache_[index];
}

StepResult Trainer::step() {
  StepResult r;
  r.iteration = iter_;
  r.lr = lr_at(iter_);
  ad::Tape tape;
  const auto bound = model_.bind(tape, true);
  AssignOptions opt;
  opt.kind = cfg_.assigner;
  opt.threshold = cfg_.threshold;
  opt.theta = cfg_.theta;
  opt.iter = iter_;
  opt.iter_max = std::max(1L, cfg_.iterations);

  std::vector<ad::Var> totals;
  const double inv_b = 1.0 / cfg_.batch;
  for (int b = 0; b < cfg_.batch; ++b) {
    if (cursor_ == order_.size()) {
      std::shuffle(order_.begin(), order_.end(), rng_);
      cursor_ = 0;
    }
    const std::size_t idx = order_[cursor_++];
    const data::Scene* scene = &scenes_[idx];
    data::Scene augmented;
    bool cached = true;
    if (cfg_.augment == Augment::kFlipRot90) {
      augmented = data::augment(*scene, rng_);
      cached = false;
    } else if (cfg_.augment == Augment::kRotate) {
      std::uniform_real_distribution<double> ang(0.0, 2.0 * std::numbers::pi);
      augmented = data::rotate_scene(*scene, ang(rng_));
      cached = false;
    }
    if (!cached) scene = &augmented;
    const auto& targets = targets_for(idx, *scene, cached);
    ImageLoss il = image_loss(model_, tape, bound, scene->image, targets, opt, cfg_.gamma);
    const auto& rep = il.terms.report;
    if (!std::isfinite(rep.total)) {
      std::ostringstream os;
      os << "non-finite loss at iteration " << iter_ << " (scene " << idx << "): obj=" << rep.obj
         << " loc=" << rep.loc << " cls=" << rep.cls;
      for (std::size_t k = 0; k < il.maps.size(); ++k) {
        const auto& m = il.maps[k];
        for (std::size_t i = 0; i < m.cells(); ++i) {
          if (m.tag[i] != assign::Tag::kPositive && std::isfinite(il.outputs[k].obj.value()[i])) continue;
          os << "\n  level " << k << " cell (" << i % static_cast<std::size_t>(m.w) << ","
             << i / static_cast<std::size_t>(m.w) << ") tag=" << assign::tag_name(m.tag[i])
             << " F=" << m.f[i] << " L=" << m.l[i] << " D=" << m.d[i]
             << " obj=" << il.outputs[k].obj.value()[i];
        }
      }
      throw NumericError(os.str());
    }
    r.report.obj += rep.obj * inv_b;
    r.report.loc += rep.loc * inv_b;
    r.report.cls += rep.cls * inv_b;
    r.report.total += rep.total * inv_b;
    r.report.m_pos += rep.m_pos;
    r.report.m_neg += rep.m_neg;
    r.report.m_sneg += rep.m_sneg;
    totals.push_back(il.terms.total);
  }
  ad::Var total = totals.front();
  for (std::size_t i = 1; i < totals.size(); ++i) total = ad::add(total, totals[i]);
  total = ad::scale(total, inv_b);
  tape.backward(total);

  auto& params = model_.params();
  std::vector<std::vector<double>> grads(params.size());
  double sq = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    grads[i] = bound[i].grad();
    for (double g : grads[i]) sq += g * g;
  }
  r.grad_norm = std::sqrt(sq);
  if (!std::isfinite(r.grad_norm)) throw NumericError("non-finite gradient at iteration " + std::to_string(iter_));
  const double clip = cfg_.grad_clip > 0 && r.grad_norm > cfg_.grad_clip ? cfg_.grad_clip / r.grad_norm : 1.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& w = params[i].value.data();
    auto& v = velocity_[i];
    const bool decay = params[i].name.ends_with(".w");
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double g = grads[i][j] * clip + (decay ? cfg_.weight_decay * w[j] : 0.0);
      v[j] = cfg_.momentum * v[j] + g;
      w[j] -= r.lr * v[j];
    }
  }
  ++iter_;
  return r;
}

std::string Trainer::metrics_header() {
  return "iter\tlr\tgrad_norm\tloss_obj\tloss_loc\tloss_cls\tloss_total\tm_pos\tm_neg\tm_sneg";
}

std::string Trainer::metrics_line(const StepResult& r) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "\t%.17g\t%.17g", r.lr, r.grad_norm);
  std::string line = r.report.line(r.iteration);
  const auto tab = line.find('\t');
  return line.substr(0, tab) + buf + line.substr(tab);
}

std::vector<Detection> predict(const TsConvModel& model, const FeatureGrid& image, double conf,
                               double nms) {
  ad::Tape tape;
  const auto bound = model.bind(tape, false);
  const auto outs = model.forward(tape, bound, image, nullptr);
  std::vector<LevelPrediction> preds;
  for (const auto& o : outs) preds.push_back(snapshot(o));
  return nms_rotated(decode(preds, conf, model.config().hbb_ratio), nms);
}

DatasetEval evaluate_model(const TsConvModel& model, std::span<const data::Scene> scenes,
                           double conf, double nms) {
  std::vector<std::vector<Detection>> dets;
  std::vector<std::vector<GroundTruth>> gts;
  DatasetEval out;
  for (const auto& s : scenes) {
    dets.push_back(predict(model, s.image, conf, nms));
    out.detections += dets.back().size();
    std::vector<GroundTruth> g;
    for (const auto& o : s.objects) g.push_back({o.polygon, o.cls, o.difficult});
    gts.push_back(std::move(g));
  }
  const auto thr = coco_thresholds();
  out.result = evaluate(dets, gts, model.config().num_classes, thr);
  const MatchStats m = matched_iou(dets, gts, 0.5);
  out.mean_iou = m.mean_iou;
  out.matched = m.matched;
  return out;
}

}  // namespace tsconv
