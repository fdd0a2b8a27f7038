#include "tsconv/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

namespace tsconv {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const char* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError("config: bad value for " + key + ": '" + v + "'");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::exception&) {
  }
  throw ConfigError("config: bad value for " + key + ": '" + v + "'");
}

struct Entry {
  const char* key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

#define TSCONV_INT(KEY, FIELD, TYPE)                                                     \
  Entry {                                                                                \
    KEY, [](const RunConfig& c) { return std::to_string(c.FIELD); },                     \
        [](RunConfig& c, const std::string& v) { c.FIELD = parse_number<TYPE>(KEY, v); } \
  }
#define TSCONV_REAL(KEY, FIELD)                                                      \
  Entry {                                                                            \
    KEY, [](const RunConfig& c) { return fmt(c.FIELD); },                            \
        [](RunConfig& c, const std::string& v) { c.FIELD = parse_double(KEY, v); }   \
  }

// `ref` returns the enum field of a config.
template <class E, class Ref>
Entry enum_entry(const char* key, Ref ref, std::vector<std::pair<E, const char*>> names) {
  return Entry{key,
               [ref, names](const RunConfig& c) {
                 for (const auto& [e, n] : names) {
                   if (ref(c) == e) return std::string(n);
                 }
                 return std::string("?");
               },
               [key, ref, names](RunConfig& c, const std::string& v) {
                 for (const auto& [e, n] : names) {
                   if (v == n) {
                     ref(c) = e;
                     return;
                   }
                 }
                 throw ConfigError(std::string("config: bad value for ") + key + ": '" + v + "'");
               }};
}

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = [] {
    std::vector<Entry> t{
        TSCONV_INT("seed", seed, std::uint64_t),
        Entry{"data", [](const RunConfig& c) { return c.data; },
              [](RunConfig& c, const std::string& v) { c.data = v; }},
        TSCONV_INT("train_scenes", train_scenes, int),
        TSCONV_INT("val_seed", val_seed, std::uint64_t),
        TSCONV_INT("val_scenes", val_scenes, int),
        TSCONV_INT("synth.width", synth.width, int),
        TSCONV_INT("synth.height", synth.height, int),
        TSCONV_INT("synth.count_min", synth.count_min, int),
        TSCONV_INT("synth.count_max", synth.count_max, int),
        TSCONV_REAL("synth.size_min", synth.size_min),
        TSCONV_REAL("synth.size_max", synth.size_max),
        TSCONV_REAL("synth.aspect_min", synth.aspect_min),
        TSCONV_REAL("synth.aspect_max", synth.aspect_max),
        TSCONV_REAL("synth.min_short_side", synth.min_short_side),
        Entry{"classes",
              [](const RunConfig& c) {
                std::string s;
                for (std::size_t i = 0; i < c.classes.size(); ++i) s += (i ? "," : "") + c.classes[i];
                return s;
              },
              [](RunConfig& c, const std::string& v) {
                c.classes.clear();
                std::stringstream ss(v);
                for (std::string item; std::getline(ss, item, ',');) c.classes.push_back(trim(item));
              }},
        TSCONV_INT("model.width", model.width, int),
        Entry{"model.stages",
              [](const RunConfig& c) {
                std::string s;
                for (std::size_t i = 0; i < c.model.stages.size(); ++i) s += (i ? "," : "") + std::to_string(c.model.stages[i]);
                return s;
              },
              [](RunConfig& c, const std::string& v) {
                std::stringstream ss(v);
                std::size_t i = 0;
                for (std::string item; std::getline(ss, item, ',');) {
                  if (i >= c.model.stages.size()) throw ConfigError("config: model.stages takes 4 values");
                  c.model.stages[i++] = parse_number<int>("model.stages", trim(item));
                }
                if (i != c.model.stages.size()) throw ConfigError("config: model.stages takes 4 values");
              }},
        TSCONV_REAL("model.prefilter", model.prefilter),
        TSCONV_REAL("model.log_l_clamp", model.log_l_clamp),
        TSCONV_REAL("model.log_delta_clamp", model.log_delta_clamp),
        TSCONV_REAL("model.hbb_ratio", model.hbb_ratio),
        TSCONV_INT("iterations", iterations, long),
        TSCONV_INT("batch", batch, int),
        TSCONV_REAL("lr", lr),
        TSCONV_REAL("lr_min", lr_min),
        TSCONV_REAL("momentum", momentum),
        TSCONV_REAL("weight_decay", weight_decay),
        TSCONV_REAL("grad_clip", grad_clip),
        TSCONV_REAL("threshold", threshold),
        TSCONV_REAL("theta", theta),
        TSCONV_REAL("gamma", gamma),
        TSCONV_REAL("nms", nms),
        TSCONV_REAL("conf", conf),
        TSCONV_INT("eval_every", eval_every, long),
        TSCONV_INT("checkpoint_every", checkpoint_every, long),
    };
    t.push_back(enum_entry<HeadKind>("model.head", [](auto& c) -> auto& { return c.model.head; },
                                     {{HeadKind::kTsConv, "tsconv"}, {HeadKind::kPlain, "plain"}}));
    t.push_back(enum_entry<AssignerKind>("assigner", [](auto& c) -> auto& { return c.assigner; },
                                         {{AssignerKind::kDtla, "dtla"}, {AssignerKind::kStatic, "static"}}));
    t.push_back(enum_entry<Augment>("augment", [](auto& c) -> auto& { return c.augment; },
                                    {{Augment::kNone, "none"},
                                     {Augment::kFlipRot90, "flip_rot90"},
                                     {Augment::kRotate, "rotate"}}));
    return t;
  }();
  return table;
}

#undef TSCONV_INT
#undef TSCONV_REAL

void check(bool ok, const std::string& what) {
  if (!ok) throw ConfigError("config: " + what);
}

}  // namespace

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig c;
  std::istringstream in(text);
  std::string line;
  std::set<std::string> seen;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config: line " + std::to_string(lineno) + " is not key=value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto& table = entries();
    auto it = std::find_if(table.begin(), table.end(), [&](const Entry& e) { return key == e.key; });
    if (it == table.end()) throw ConfigError("config: unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigError("config: duplicate key '" + key + "'");
    it->set(c, value);
  }
  c.model.num_classes = static_cast<int>(c.classes.size());
  c.synth.classes = c.model.num_classes;
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string RunConfig::serialize() const {
  std::string out;
  for (const auto& e : entries()) out += std::string(e.key) + " = " + e.get(*this) + "\n";
  return out;
}

void RunConfig::validate() const {
  check(!data.empty(), "data must not be empty");
  check(train_scenes >= 1 && train_scenes <= 100000, "train_scenes in [1, 100000]");
  check(val_scenes >= 0 && val_scenes <= 100000, "val_scenes in [0, 100000]");
  check(synth.width >= 16 && synth.width <= 4096 && synth.height >= 16 && synth.height <= 4096,
        "synth image size in [16, 4096]");
  check(synth.count_min >= 0 && synth.count_max >= synth.count_min && synth.count_max <= 64,
        "synth counts 0 <= min <= max <= 64");
  check(synth.size_min > 0 && synth.size_max >= synth.size_min, "synth sizes 0 < min <= max");
  check(synth.aspect_min >= 1 && synth.aspect_max >= synth.aspect_min, "synth aspects 1 <= min <= max");
  check(synth.min_short_side > 0, "synth.min_short_side > 0");
  check(!classes.empty() && classes.size() <= 64, "classes: 1 to 64 names");
  for (const auto& n : classes) {
    check(!n.empty() && n.find_first_of(" \t") == std::string::npos, "class names must be non-empty words");
  }
  check(model.width >= 1 && model.width <= 256, "model.width in [1, 256]");
  for (int st : model.stages) check(st >= 1 && st <= 512, "model.stages entries in [1, 512]");
  check(model.prefilter >= 0 && model.prefilter < 1, "model.prefilter in [0, 1)");
  check(model.log_l_clamp > 0 && model.log_l_clamp <= 10, "model.log_l_clamp in (0, 10]");
  check(model.log_delta_clamp > 0 && model.log_delta_clamp <= 5, "model.log_delta_clamp in (0, 5]");
  check(model.hbb_ratio > 0 && model.hbb_ratio <= 1.0, "model.hbb_ratio in (0, 1]");
  check(iterations >= 0 && iterations <= 100000000, "iterations in [0, 1e8]");
  check(batch >= 1 && batch <= 1024, "batch in [1, 1024]");
  check(lr > 0 && lr <= 10 && lr_min >= 0 && lr_min <= lr, "0 <= lr_min <= lr <= 10, lr > 0");
  check(momentum >= 0 && momentum < 1, "momentum in [0, 1)");
  check(weight_decay >= 0 && weight_decay < 1, "weight_decay in [0, 1)");
  check(grad_clip >= 0, "grad_clip >= 0");
  check(threshold > 0 && threshold < 1, "threshold in (0, 1)");
  check(theta >= 0 && theta <= 1, "theta in [0, 1]");
  check(gamma >= 0 && gamma <= 10, "gamma in [0, 10]");
  check(nms > 0 && nms <= 1, "nms in (0, 1]");
  check(conf >= 0 && conf < 1, "conf in [0, 1)");
  check(eval_every >= 0 && checkpoint_every >= 0, "cadences >= 0");
}

}  // namespace tsconv
