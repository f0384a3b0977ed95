#include "casdet/pipeline/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "casdet/error.hpp"

namespace casdet::pipeline {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("'" + key + "' expects a number, got '" + v + "'");
  }
  return out;
}

long long to_int(const std::string& key, const std::string& v) {
  long long out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("'" + key + "' expects an integer, got '" + v + "'");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("'" + key + "' expects true or false, got '" + v + "'");
}

template <typename T, typename Fn>
std::vector<T> to_list(const std::string& key, const std::string& v, Fn conv) {
  std::vector<T> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) throw ConfigError("'" + key + "' has an empty list item");
    out.push_back(static_cast<T>(conv(key, item)));
  }
  if (out.empty()) throw ConfigError("'" + key + "' expects a comma-separated list");
  return out;
}

// Shortest text that parses back to the same double.
std::string num(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

template <typename T>
std::string join(const std::vector<T>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ",";
    if constexpr (std::is_floating_point_v<T>) {
      out += num(xs[i]);
    } else {
      out += std::to_string(xs[i]);
    }
  }
  return out;
}

using Setter = std::function<void(TrainConfig&, const std::string& key, const std::string& v)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> t;
    t["seed"] = [](TrainConfig& c, const std::string& k, const std::string& v) {
      const long long s = to_int(k, v);
      if (s < 0) throw ConfigError("seed must be non-negative");
      c.seed = static_cast<std::uint64_t>(s);
    };
    t["image_size"] = [](TrainConfig& c, const std::string& k, const std::string& v) {
      c.scene.image_size = static_cast<int>(to_int(k, v));
    };
    t["num_classes"] = [](TrainConfig& c, const std::string& k, const std::string& v) {
      c.scene.num_classes = static_cast<int>(to_int(k, v));
      c.model.num_classes = c.scene.num_classes;
    };
    t["min_objects"] = [](TrainConfig& c, const std::string& k, const std::string& v) {
      c.scene.min_objects = static_cast<int>(to_int(k, v));
    };
    t["max_objects"] = [](TrainConfig& c, const std::string& k, const std::string& v) {
      c.scene.max_objects = static_cast<int>(to_int(k, v));
    };
    t["min_object_size"] = [](TrainConfig& c, const std::string& k, const std::string& v) {
      c.scene.min_object_size = to_double(k, v);
    };
    t["max_object_size"] = [](TrainConfig& c, const std::string& k, const std::string& v) {
      c.scene.max_object_size = to_double(k, v);
    };
    t["train_scenes"] = [](TrainConfig& c, const std::string& k, const std::string& v) {
      c.train_scenes = static_cast<int>(to_int(k, v));
    };
    t["val_scenes"] = [](TrainConfig& c, const std::string& k, const std::string& v) {
      c.val_scenes = static_cast<int>(to_int(k, v));
    };
    t["channels"] = [](TrainConfig& c, const std::string& k, const std::string& v) {
      c.model.channels = static_cast<int>(to_int(k, v));
    };
    t["head_depth"] = [](TrainConfig& c, const std::string& k, const std::string& v) {
      c.model.head_depth = static_cast<int>(to_int(k, v));
    };
    t["fcm"] = [](TrainConfig& c, const std::string& k, const std::string& v) {
      c.model.use_fcm = to_bool(k, v);
    };
    t["prior_pi"] = [](TrainConfig& c, const std::string& k, const std::string& v) {
      c.model.prior_pi = to_double(k, v);
    };
    t["anchor.strides"] = [](TrainConfig& c, const std::string& k, const std::string& v) {
      c.anchors.level_strides = to_list<int>(k, v, to_int);
      c.model.level_strides = c.anchors.level_strides;
    };
    t["anchor.scales"] = [](TrainConfig& c, const std::string& k, const std::string& v) {
      c.anchors.scales = to_list<double>(k, v, to_double);
      c.model.anchors_per_location = c.anchors.anchors_per_location();
    };
    t["anchor.ratios"] = [](TrainConfig& c, const std::string& k, const std::string& v) {
      c.anchors.aspect_ratios = to_list<double>(k, v, to_double);
      c.model.anchors_per_location = c.anchors.anchors_per_location();
    };
    t["focal_alpha"] = [](TrainConfig& c, const std::string& k, const std::string& v) {
      c.loss.focal_alpha = to_double(k, v);
    };
    t["focal_gamma"] = [](TrainConfig& c, const std::string& k, const std::string& v) {
      c.loss.focal_gamma = to_double(k, v);
    };
    t["smooth_l1_beta"] = [](TrainConfig& c, const std::string& k, const std::string& v) {
      c.loss.smooth_l1_beta = to_double(k, v);
    };
    t["epochs"] = [](TrainConfig& c, const std::string& k, const std::string& v) {
      c.epochs = static_cast<int>(to_int(k, v));
    };
    t["batch_size"] = [](TrainConfig& c, const std::string& k, const std::string& v) {
      c.batch_size = static_cast<int>(to_int(k, v));
    };
    t["lr"] = [](TrainConfig& c, const std::string& k, const std::string& v) {
      c.lr = to_double(k, v);
    };
    t["momentum"] = [](TrainConfig& c, const std::string& k, const std::string& v) {
      c.momentum = to_double(k, v);
    };
    t["weight_decay"] = [](TrainConfig& c, const std::string& k, const std::string& v) {
      c.weight_decay = to_double(k, v);
    };
    t["warmup_iters"] = [](TrainConfig& c, const std::string& k, const std::string& v) {
      c.warmup_iters = static_cast<int>(to_int(k, v));
    };
    t["lr_steps"] = [](TrainConfig& c, const std::string& k, const std::string& v) {
      c.lr_steps = v == "none" ? std::vector<int>{} : to_list<int>(k, v, to_int);
    };
    t["grad_clip"] = [](TrainConfig& c, const std::string& k, const std::string& v) {
      c.grad_clip = to_double(k, v);
    };
    t["hflip"] = [](TrainConfig& c, const std::string& k, const std::string& v) {
      c.hflip = to_bool(k, v);
    };
    t["nms_threshold"] = [](TrainConfig& c, const std::string& k, const std::string& v) {
      c.inference.nms_threshold = to_double(k, v);
    };
    t["score_threshold"] = [](TrainConfig& c, const std::string& k, const std::string& v) {
      c.inference.score_threshold = to_double(k, v);
    };
    t["top_k"] = [](TrainConfig& c, const std::string& k, const std::string& v) {
      c.inference.top_k = static_cast<int>(to_int(k, v));
    };
    t["ensemble_mode"] = [](TrainConfig& c, const std::string& k, const std::string& v) {
      if (v == "average") {
        c.inference.ensemble_mode = EnsembleMode::kAverage;
      } else if (v == "last") {
        c.inference.ensemble_mode = EnsembleMode::kLast;
      } else {
        throw ConfigError("'" + k + "' must be 'average' or 'last', got '" + v + "'");
      }
    };
    t["clip_refined_boxes"] = [](TrainConfig& c, const std::string& k, const std::string& v) {
      c.inference.clip_refined_boxes = to_bool(k, v);
    };
    return t;
  }();
  return table;
}

// stage.<n>.<field>, n is 1-based.
bool apply_stage_key(TrainConfig& c, const std::string& key, const std::string& v) {
  if (key.rfind("stage.", 0) != 0) return false;
  const auto dot = key.find('.', 6);
  if (dot == std::string::npos) throw ConfigError("unknown config key '" + key + "'");
  const std::string idx = key.substr(6, dot - 6);
  const std::string field = key.substr(dot + 1);
  const long long n = to_int(key, idx);
  if (n < 1 || n > static_cast<long long>(c.stages.size())) {
    throw ConfigError("'" + key + "' refers to stage " + idx + " but num_stages is " +
                      std::to_string(c.stages.size()));
  }
  auto& s = c.stages[static_cast<std::size_t>(n - 1)];
  if (field == "t_fg") {
    s.t_fg = to_double(key, v);
  } else if (field == "t_bg") {
    s.t_bg = to_double(key, v);
  } else if (field == "lambda") {
    s.lambda = to_double(key, v);
  } else if (field == "alpha") {
    s.alpha = to_double(key, v);
  } else if (field == "delta_std") {
    const auto l = to_list<double>(key, v, to_double);
    if (l.size() != 4) throw ConfigError("'" + key + "' expects 4 values (dx, dy, dw, dh)");
    c.model.delta_std.resize(c.stages.size(), {1.0, 1.0, 1.0, 1.0});
    c.model.delta_std[static_cast<std::size_t>(n - 1)] = {l[0], l[1], l[2], l[3]};
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
  return true;
}

}  // namespace

assignment::StageConfig default_stage(int index) {
  assignment::StageConfig s;
  s.t_fg = 0.5 + 0.1 * index;
  s.t_bg = index == 0 ? 0.4 : s.t_fg - 0.1;
  s.lambda = 2.0;
  s.alpha = 1.0;
  return s;
}

TrainConfig default_config() {
  TrainConfig c;
  c.anchors.level_strides = {8, 16};
  c.anchors.scales = {12.0, 17.0};
  c.anchors.aspect_ratios = {1.0};
  c.model.level_strides = c.anchors.level_strides;
  c.model.anchors_per_location = c.anchors.anchors_per_location();
  c.model.num_classes = c.scene.num_classes;
  c.model.num_stages = 2;
  for (int i = 0; i < c.model.num_stages; ++i) c.stages.push_back(default_stage(i));
  return c;
}

void TrainConfig::validate() const {
  if (scene.image_size < 8) throw ConfigError("image_size must be >= 8");
  if (scene.num_classes < 1 || scene.num_classes > 3) {
    throw ConfigError("num_classes must be 1..3 (disk, square, triangle)");
  }
  if (scene.min_objects < 0 || scene.max_objects < scene.min_objects) {
    throw ConfigError("need 0 <= min_objects <= max_objects");
  }
  if (!(scene.min_object_size > 0.0 && scene.max_object_size >= scene.min_object_size &&
        scene.max_object_size <= scene.image_size)) {
    throw ConfigError("object sizes must satisfy 0 < min <= max <= image_size");
  }
  if (scene.min_object_size * scene.min_object_size < 16.0) {
    throw ConfigError("min_object_size must give an area of at least 16 px^2");
  }
  if (train_scenes < 1 || val_scenes < 1) throw ConfigError("scene counts must be >= 1");
  model.validate();
  if (model.level_strides != anchors.level_strides) {
    throw ConfigError("model levels and anchor strides disagree");
  }
  if (model.anchors_per_location != anchors.anchors_per_location()) {
    throw ConfigError("anchors_per_location does not match the anchor spec");
  }
  (void)geometry::generate_anchors(image_size(), anchors);
  if (static_cast<int>(stages.size()) != model.num_stages) {
    throw ConfigError("expected " + std::to_string(model.num_stages) +
                      " stage configs, got " + std::to_string(stages.size()));
  }
  for (const auto& s : stages) s.validate();
  if (!(loss.focal_alpha >= 0.0 && loss.focal_alpha <= 1.0)) {
    throw ConfigError("focal_alpha must lie in [0,1]");
  }
  if (!(loss.focal_gamma >= 0.0)) throw ConfigError("focal_gamma must be >= 0");
  if (!(loss.smooth_l1_beta > 0.0)) throw ConfigError("smooth_l1_beta must be > 0");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(lr >= 0.0)) throw ConfigError("lr must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0,1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (warmup_iters < 0) throw ConfigError("warmup_iters must be >= 0");
  if (!(grad_clip >= 0.0)) throw ConfigError("grad_clip must be >= 0");
  if (!(inference.nms_threshold >= 0.0 && inference.nms_threshold <= 1.0)) {
    throw ConfigError("nms_threshold must lie in [0,1]");
  }
  if (!(inference.score_threshold >= 0.0 && inference.score_threshold < 1.0)) {
    throw ConfigError("score_threshold must lie in [0,1)");
  }
  if (inference.top_k < 1) throw ConfigError("top_k must be >= 1");
}

TrainConfig parse_config(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> entries;
  std::map<std::string, int> seen;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) {
      throw ConfigError("line " + std::to_string(lineno) + ": empty key or value");
    }
    if (seen.count(key)) {
      throw ConfigError("line " + std::to_string(lineno) + ": key '" + key +
                        "' repeats line " + std::to_string(seen[key]));
    }
    seen[key] = lineno;
    entries.emplace_back(std::move(key), std::move(value));
  }

  TrainConfig cfg = default_config();
  // Stage count first so stage.<n> keys can be checked against it.
  if (seen.count("num_stages")) {
    for (const auto& [k, v] : entries) {
      if (k != "num_stages") continue;
      const long long n = to_int(k, v);
      if (n < 1 || n > 3) throw ConfigError("num_stages must be 1, 2 or 3");
      cfg.model.num_stages = static_cast<int>(n);
    }
    cfg.stages.clear();
    for (int i = 0; i < cfg.model.num_stages; ++i) cfg.stages.push_back(default_stage(i));
    cfg.model.delta_std.clear();
  }
  const auto& table = setters();
  for (const auto& [k, v] : entries) {
    if (k == "num_stages") continue;
    if (apply_stage_key(cfg, k, v)) continue;
    auto it = table.find(k);
    if (it == table.end()) throw ConfigError("unknown config key '" + k + "'");
    it->second(cfg, k, v);
  }
  cfg.validate();
  return cfg;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file '" + path.string() + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str());
}

std::string format_config(const TrainConfig& c) {
  std::ostringstream os;
  os << "seed = " << c.seed << '\n'
     << "image_size = " << c.scene.image_size << '\n'
     << "num_classes = " << c.scene.num_classes << '\n'
     << "min_objects = " << c.scene.min_objects << '\n'
     << "max_objects = " << c.scene.max_objects << '\n'
     << "min_object_size = " << num(c.scene.min_object_size) << '\n'
     << "max_object_size = " << num(c.scene.max_object_size) << '\n'
     << "train_scenes = " << c.train_scenes << '\n'
     << "val_scenes = " << c.val_scenes << '\n'
     << "channels = " << c.model.channels << '\n'
     << "head_depth = " << c.model.head_depth << '\n'
     << "num_stages = " << c.model.num_stages << '\n'
     << "fcm = " << (c.model.use_fcm ? "true" : "false") << '\n'
     << "prior_pi = " << num(c.model.prior_pi) << '\n'
     << "anchor.strides = " << join(c.anchors.level_strides) << '\n'
     << "anchor.scales = " << join(c.anchors.scales) << '\n'
     << "anchor.ratios = " << join(c.anchors.aspect_ratios) << '\n';
  for (std::size_t i = 0; i < c.stages.size(); ++i) {
    const std::string p = "stage." + std::to_string(i + 1) + ".";
    os << p << "t_fg = " << num(c.stages[i].t_fg) << '\n'
       << p << "t_bg = " << num(c.stages[i].t_bg) << '\n'
       << p << "lambda = " << num(c.stages[i].lambda) << '\n'
       << p << "alpha = " << num(c.stages[i].alpha) << '\n';
    const auto sd = c.model.stage_delta_std(static_cast<int>(i));
    os << p << "delta_std = " << num(sd[0]) << ", " << num(sd[1]) << ", " << num(sd[2]) << ", "
       << num(sd[3]) << '\n';
  }
  os << "focal_alpha = " << num(c.loss.focal_alpha) << '\n'
     << "focal_gamma = " << num(c.loss.focal_gamma) << '\n'
     << "smooth_l1_beta = " << num(c.loss.smooth_l1_beta) << '\n'
     << "epochs = " << c.epochs << '\n'
     << "batch_size = " << c.batch_size << '\n'
     << "lr = " << num(c.lr) << '\n'
     << "momentum = " << num(c.momentum) << '\n'
     << "weight_decay = " << num(c.weight_decay) << '\n'
     << "warmup_iters = " << c.warmup_iters << '\n'
     << "lr_steps = " << (c.lr_steps.empty() ? std::string("none") : join(c.lr_steps)) << '\n'
     << "grad_clip = " << num(c.grad_clip) << '\n'
     << "hflip = " << (c.hflip ? "true" : "false") << '\n'
     << "nms_threshold = " << num(c.inference.nms_threshold) << '\n'
     << "score_threshold = " << num(c.inference.score_threshold) << '\n'
     << "top_k = " << c.inference.top_k << '\n'
     << "ensemble_mode = "
     << (c.inference.ensemble_mode == EnsembleMode::kAverage ? "average" : "last") << '\n'
     << "clip_refined_boxes = " << (c.inference.clip_refined_boxes ? "true" : "false")
     << '\n';
  return os.str();
}

}  // namespace casdet::pipeline
