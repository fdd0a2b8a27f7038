#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "tsconv/checkpoint.hpp"
#include "tsconv/config.hpp"
#include "tsconv/cs_conv.hpp"
#include "tsconv/data.hpp"
#include "tsconv/train.hpp"

namespace fs = std::filesystem;
using namespace tsconv;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

RunConfig load_config(const std::string& path, std::optional<std::uint64_t> seed) {
  RunConfig cfg = path.empty() ? RunConfig{} : RunConfig::load(path);
  if (seed) cfg.seed = *seed;
  cfg.validate();
  return cfg;
}

void write_eval(std::ostream& os, const DatasetEval& ev, const RunConfig& cfg) {
  os << ev.result.to_text(cfg.classes);
  char buf[128];
  std::snprintf(buf, sizeof buf, "matched\t%zu\tmean_iou=%.6f\tdetections=%zu\n", ev.matched, ev.mean_iou,
                ev.detections);
  os << buf;
}

int cmd_train(const std::string& config_path, std::optional<std::uint64_t> seed, const fs::path& out) {
  const RunConfig cfg = load_config(config_path, seed);
  fs::create_directories(out);
  const auto scenes = training_scenes(cfg);
  const auto val = validation_scenes(cfg);
  Trainer trainer(cfg, scenes);
  std::ofstream metrics(out / "metrics.tsv");
  metrics << Trainer::metrics_header() << '\n';
  std::ofstream evals;
  if (cfg.eval_every > 0) evals.open(out / "eval.tsv");
  try {
    while (!trainer.done()) {
      const StepResult r = trainer.step();
      metrics << Trainer::metrics_line(r) << '\n';
      const long it = trainer.iteration();
      if (cfg.checkpoint_every > 0 && it % cfg.checkpoint_every == 0) {
        save_checkpoint(out / ("iter_" + std::to_string(it)), trainer.model(), cfg);
      }
      if (cfg.eval_every > 0 && it % cfg.eval_every == 0) {
        const auto ev = evaluate_model(trainer.model(), val.empty() ? scenes : val, cfg.conf, cfg.nms);
        evals << "iter\t" << it << '\n';
        write_eval(evals, ev, cfg);
        evals.flush();
      }
    }
  } catch (const NumericError&) {
    metrics.flush();
    save_checkpoint(out / "failed", trainer.model(), cfg);
    throw;
  }
  save_checkpoint(out / "model", trainer.model(), cfg);
  const auto ev = evaluate_model(trainer.model(), val.empty() ? scenes : val, cfg.conf, cfg.nms);
  write_eval(std::cout, ev, cfg);
  return kOk;
}

std::vector<data::Scene> eval_scenes(const RunConfig& cfg, const std::string& data_dir) {
  if (!data_dir.empty()) return data::read_dataset(data_dir, cfg.classes);
  return cfg.val_scenes > 0 ? validation_scenes(cfg) : training_scenes(cfg);
}

int cmd_eval(const fs::path& checkpoint, const std::string& data_dir, std::optional<double> conf,
             const fs::path& out) {
  auto ck = load_checkpoint(checkpoint);
  const auto scenes = eval_scenes(ck.config, data_dir);
  const auto ev = evaluate_model(ck.model, scenes, conf.value_or(ck.config.conf), ck.config.nms);
  if (out.empty()) {
    write_eval(std::cout, ev, ck.config);
  } else {
    std::ofstream os(out);
    write_eval(os, ev, ck.config);
  }
  return kOk;
}

int cmd_synth(const std::string& config_path, std::optional<std::uint64_t> seed, const fs::path& out,
              std::optional<int> count) {
  RunConfig cfg = load_config(config_path, seed);
  if (count) cfg.train_scenes = *count;
  cfg.validate();
  RunConfig synth_cfg = cfg;
  synth_cfg.data = "synth";
  data::write_dataset(out, training_scenes(synth_cfg), cfg.classes);
  return kOk;
}

void write_points_csv(const LevelOutput& lo, const ad::Var& coords, int level, std::ostream& all) {
  const FeatureGrid& c = coords.value();
  for (int y = 0; y < c.height(); ++y) {
    for (int x = 0; x < c.width(); ++x) {
      if (!lo.positives.contains(x, y)) continue;
      for (int j = 0; j < 9; ++j) {
        const double px = (c.at(x, y, 2 * j) + 0.5) * lo.stride;
        const double py = (c.at(x, y, 2 * j + 1) + 0.5) * lo.stride;
        all << level << ',' << x << ',' << y << ',' << j << ',' << px << ',' << py << '\n';
      }
    }
  }
}

int cmd_inspect(const fs::path& checkpoint, const std::string& data_dir, int index, const std::string& what,
                const fs::path& out) {
  static const std::vector<std::string> kinds{"gaussian", "assignment", "loc_points", "cls_points", "dck"};
  if (std::find(kinds.begin(), kinds.end(), what) == kinds.end()) {
    throw UsageError("inspect: unknown --what '" + what + "' (gaussian, assignment, loc_points, cls_points, dck)");
  }
  auto ck = load_checkpoint(checkpoint);
  const auto scenes = eval_scenes(ck.config, data_dir);
  if (index < 0 || index >= static_cast<int>(scenes.size())) {
    throw UsageError("inspect: --index out of range (dataset has " + std::to_string(scenes.size()) + " scenes)");
  }
  const data::Scene& scene = scenes[static_cast<std::size_t>(index)];
  fs::create_directories(out);
  const int iw = scene.image.width(), ih = scene.image.height();
  const auto targets = data::encode_targets(scene, level_geometry(iw, ih));

  if (what == "gaussian") {
    FeatureGrid full({iw, ih, 1});
    for (const auto& o : targets.objects) {
      for (int y = 0; y < ih; ++y) {
        for (int x = 0; x < iw; ++x) {
          double& v = full.at(x, y, 0);
          v = std::max(v, assign::gaussian_score(o.field.merect, {x + 0.5, y + 0.5}));
        }
      }
    }
    data::write_heatmap(out / "gaussian.png", full, 0, 0.0, 1.0);
    std::ofstream csv(out / "gaussian.csv");
    csv.precision(17);
    csv << "object,level,x,y,F\n";
    for (const auto& o : targets.objects) {
      for (int c : o.field.support) {
        csv << o.index << ',' << o.level << ',' << c % o.field.width() << ',' << c / o.field.width() << ','
            << o.field.at(c) << '\n';
      }
    }
    for (std::size_t k = 0; k < targets.levels.size(); ++k) {
      const auto& lg = targets.levels[k];
      FeatureGrid lvl({lg.w, lg.h, 1});
      for (const auto& o : targets.objects) {
        if (o.level != static_cast<int>(k)) continue;
        for (std::size_t i = 0; i < lvl.size(); ++i) lvl[i] = std::max(lvl[i], o.field.score[i]);
      }
      data::write_heatmap(out / ("gaussian_L" + std::to_string(k) + ".png"), lvl, 0, 0.0, 1.0);
    }
    return kOk;
  }

  ad::Tape tape;
  const auto bound = ck.model.bind(tape, false);
  if (what == "assignment") {
    AssignOptions opt;
    opt.kind = ck.config.assigner;
    opt.threshold = ck.config.threshold;
    opt.theta = ck.config.theta;
    opt.iter_max = std::max(1L, ck.config.iterations);
    opt.iter = ck.config.iterations;
    const auto il = image_loss(ck.model, tape, bound, scene.image, targets, opt, ck.config.gamma);
    for (std::size_t k = 0; k < il.maps.size(); ++k) {
      const auto& m = il.maps[k];
      std::ofstream(out / ("assignment_L" + std::to_string(k) + ".csv")) << m.to_csv();
      FeatureGrid tags({m.w, m.h, 1});
      for (std::size_t i = 0; i < m.cells(); ++i) tags[i] = static_cast<double>(m.tag[i]);
      data::write_heatmap(out / ("assignment_L" + std::to_string(k) + ".png"), tags, 0, 0.0, 3.0);
    }
    return kOk;
  }

  const auto outs = ck.model.forward(tape, bound, scene.image, nullptr);
  if (ck.model.config().head != HeadKind::kTsConv) {
    throw UsageError("inspect: " + what + " needs a checkpoint with TS-Conv heads");
  }
  if (what == "loc_points" || what == "cls_points") {
    std::ofstream csv(out / (what + ".csv"));
    csv.precision(17);
    csv << "level,cell_x,cell_y,tap,x,y\n";
    for (std::size_t k = 0; k < outs.size(); ++k) {
      const auto& lo = outs[k];
      write_points_csv(lo, what == "loc_points" ? lo.loc_coords : lo.cls_coords, static_cast<int>(k), csv);
    }
    return kOk;
  }
  // dck
  std::ofstream csv(out / "dck.csv");
  csv.precision(17);
  csv << "level,kind,index,value\n";
  const int iks = ck.model.index_of("head.cs.w");
  for (std::size_t k = 0; k < outs.size(); ++k) {
    const auto& lo = outs[k];
    for (int i = 0; i < 4; ++i) csv << k << ",lambda," << i << ',' << lo.lambda.value()[static_cast<std::size_t>(i)] << '\n';
    for (int i = 0; i < 8; ++i) csv << k << ",beta," << i << ',' << lo.beta.value()[static_cast<std::size_t>(i)] << '\n';
    const ad::Var eff = cs::dck_effective_kernel(bound[static_cast<std::size_t>(iks)], lo.lambda, lo.beta);
    const FeatureGrid& e = eff.value();
    const int cout = e.channels();
    for (int tap = 0; tap < 9; ++tap) {
      csv << k << ",kernel00," << tap << ',' << e[static_cast<std::size_t>(tap) * cout] << '\n';
    }
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tsconv: oriented object detection with task-sensitive sampling convolutions"};
  app.require_subcommand(1);

  std::string config_path, data_dir, what;
  std::optional<std::uint64_t> seed;
  std::optional<double> conf;
  std::optional<int> count;
  std::string out, checkpoint;
  int index = 0;

  auto* train = app.add_subcommand("train", "train a model and write a checkpoint and metrics");
  train->add_option("--config", config_path, "key=value run configuration");
  train->add_option("--seed", seed, "override the configured seed");
  train->add_option("--out", out, "output directory")->required();

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--checkpoint", checkpoint, "checkpoint prefix (without extension)")->required();
  eval->add_option("--data", data_dir, "dataset directory (default: scenes from the stored config)");
  eval->add_option("--conf", conf, "confidence threshold override");
  eval->add_option("--out", out, "write the report to this file");

  auto* inspect = app.add_subcommand("inspect", "dump heatmaps, assignments and sampling points");
  inspect->add_option("--checkpoint", checkpoint, "checkpoint prefix")->required();
  inspect->add_option("--data", data_dir, "dataset directory (default: scenes from the stored config)");
  inspect->add_option("--index", index, "scene index");
  inspect->add_option("--what", what, "gaussian | assignment | loc_points | cls_points | dck")->required();
  inspect->add_option("--out", out, "output directory")->required();

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset directory");
  synth->add_option("--config", config_path, "key=value run configuration");
  synth->add_option("--seed", seed, "override the configured seed");
  synth->add_option("--count", count, "number of scenes (default: train_scenes)");
  synth->add_option("--out", out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*train) return cmd_train(config_path, seed, out);
    if (*eval) return cmd_eval(checkpoint, data_dir, conf, out);
    if (*inspect) return cmd_inspect(checkpoint, data_dir, index, what, out);
    if (*synth) return cmd_synth(config_path, seed, out, count);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
  return kUsage;
}
