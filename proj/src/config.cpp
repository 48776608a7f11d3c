// SPDX-License-Identifier: Apache-2.0
#include "vidssl/harness/config.hpp"

#include <yaml-cpp/yaml.h>

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>

namespace vidssl {

RunConfig RunConfig::defaults(Method m) {
  RunConfig c;
  c.framework = FrameworkConfig::defaults(m);
  c.optim.base_lr = m == Method::kMoCo ? 0.4 : 4.8;
  c.optim.use_lars = m != Method::kMoCo;
  c.optim.weight_decay = m == Method::kMoCo ? 1e-4 : 1e-6;
  c.sync();
  return c;
}

void RunConfig::sync() {
  framework.encoder.frames = clips.frames;
  framework.encoder.stride = clips.stride;
  augment.output_size = framework.encoder.input_size;
  optim.total_iters = iterations;
  optim.warmup_iters = static_cast<std::size_t>(std::lround(warmup_fraction * static_cast<double>(iterations)));
  data.seed = seed;
}

void RunConfig::validate() const {
  framework.validate();
  Encoder check(framework.encoder);
  optim.validate();
  probe.validate();
  finetune.validate();
  if (iterations == 0) throw ConfigError("iterations must be positive");
  if (checkpoint_every == 0) throw ConfigError("checkpoint_every must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(warmup_fraction >= 0 && warmup_fraction <= 1)) throw ConfigError("optim.warmup_fraction outside [0,1]");
  if (clips.rho == 0 || clips.frames == 0 || clips.stride == 0)
    throw ConfigError("clips: rho, frames and stride must be positive");
  for (double p : {augment.color_prob, augment.grayscale_prob, augment.blur_prob, augment.flip_prob,
                   augment.temporal_diff_prob})
    if (!(p >= 0 && p <= 1)) throw ConfigError("augment: probabilities must lie in [0,1]");
  if (augment.framerate_jitter < 0 || augment.framerate_jitter >= 1)
    throw ConfigError("augment.framerate_jitter outside [0,1)");
  if (augment.vgg_short_min > augment.vgg_short_max || augment.vgg_short_min < augment.output_size)
    throw ConfigError("augment: vgg short-side range must be ordered and at least the input size");
  if (data.num_videos == 0 || data.num_classes < 2 || data.length == 0)
    throw ConfigError("data: need videos, at least two classes and positive length");
  if (data.length < clips.span())
    throw ConfigError("data.length " + std::to_string(data.length) + " shorter than one clip span " +
                      std::to_string(clips.span()));
  if (batch_size > data.num_videos) throw ConfigError("batch_size exceeds data.num_videos");
}

namespace {

// --- names ----------------------------------------------------------------

const char* group_name(AugGroup g) {
  switch (g) {
    case AugGroup::kTemporal: return "temporal";
    case AugGroup::kSpatial: return "spatial";
    case AugGroup::kColor: return "color";
  }
  return "?";
}

AugGroup parse_group(const std::string& s) {
  if (s == "temporal" || s == "T") return AugGroup::kTemporal;
  if (s == "spatial" || s == "S") return AugGroup::kSpatial;
  if (s == "color" || s == "C") return AugGroup::kColor;
  throw ConfigError("unknown augmentation group '" + s + "' (temporal, spatial, color)");
}

// --- writer -----------------------------------------------------------------

std::string num(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}
std::string num(std::size_t v) { return std::to_string(v); }
std::string num(std::uint64_t v, int) { return std::to_string(v); }
std::string flag(bool b) { return b ? "true" : "false"; }

template <class C>
std::string list(const C& xs) {
  std::string s = "[";
  bool first = true;
  for (const auto& x : xs) {
    if (!first) s += ", ";
    s += num(static_cast<std::size_t>(x));
    first = false;
  }
  return s + "]";
}

class Writer {
 public:
  explicit Writer(bool annotated) : annotated_(annotated) {}
  void comment(const std::string& c) {
    if (annotated_) out_ << indent() << "# " << c << "\n";
  }
  void key(const std::string& k, const std::string& v, const std::string& c = "") {
    out_ << indent() << k << ": " << v;
    if (annotated_ && !c.empty()) out_ << "  # " << c;
    out_ << "\n";
  }
  void open(const std::string& k, const std::string& c = "") {
    if (annotated_ && !c.empty()) out_ << "\n";
    comment(c);
    out_ << indent() << k << ":\n";
    ++depth_;
  }
  void close() { --depth_; }
  std::string str() const { return out_.str(); }

 private:
  std::string indent() const { return std::string(2 * depth_, ' '); }
  bool annotated_;
  int depth_ = 0;
  std::ostringstream out_;
};

void write_head(Writer& w, const char* name, const HeadConfig& h, const std::string& c) {
  w.open(name, c);
  w.key("layers", num(h.num_layers), "linear layers, 2..4");
  w.key("hidden_dim", num(h.hidden_dim));
  w.key("output_dim", num(h.output_dim));
  w.key("bn", flag(h.use_bn), "batch norm after hidden layers");
  w.close();
}

// --- reader -----------------------------------------------------------------

class Reader {
 public:
  Reader(const YAML::Node& node, std::string path) : node_(node), path_(std::move(path)) {
    if (present(node_) && !node_.IsMap()) throw ConfigError(where() + "expected a mapping");
  }

  ~Reader() noexcept(false) {
    if (std::uncaught_exceptions() > 0 || !present(node_)) return;
    for (const auto& kv : node_) {
      const auto k = kv.first.as<std::string>();
      if (!seen_.count(k)) throw ConfigError("unknown key '" + prefix() + k + "'");
    }
  }

  Reader child(const std::string& k) {
    seen_.insert(k);
    return Reader(present(node_) ? node_[k] : YAML::Node(YAML::NodeType::Undefined), prefix() + k);
  }

  void get(const std::string& k, double& out) {
    if (auto n = take(k)) {
      const auto s = n->as<std::string>();
      if (s == "inf" || s == ".inf") out = INFINITY;
      else out = parse_double(s, k);
    }
  }
  void get(const std::string& k, std::size_t& out) {
    if (auto n = take(k)) out = parse_uint(n->as<std::string>(), k);
  }
  void get(const std::string& k, std::uint64_t& out, int) {
    if (auto n = take(k)) out = parse_uint(n->as<std::string>(), k);
  }
  void get(const std::string& k, bool& out) {
    if (auto n = take(k)) {
      const auto s = n->as<std::string>();
      if (s == "true") out = true;
      else if (s == "false") out = false;
      else throw ConfigError("'" + prefix() + k + "' must be true or false, got '" + s + "'");
    }
  }
  void get(const std::string& k, std::string& out) {
    if (auto n = take(k)) out = n->as<std::string>();
  }
  std::vector<std::string> get_list(const std::string& k, bool& present) {
    std::vector<std::string> out;
    present = false;
    if (auto n = take(k)) {
      if (!n->IsSequence()) throw ConfigError("'" + prefix() + k + "' must be a list");
      for (const auto& e : *n) out.push_back(e.as<std::string>());
      present = true;
    }
    return out;
  }
  void get_sizes(const std::string& k, std::vector<std::size_t>& out) {
    bool present;
    auto xs = get_list(k, present);
    if (!present) return;
    out.clear();
    for (const auto& s : xs) out.push_back(parse_uint(s, k));
  }

 private:
  static bool present(const YAML::Node& n) { return n.IsDefined() && !n.IsNull(); }

  std::optional<YAML::Node> take(const std::string& k) {
    seen_.insert(k);
    if (!present(node_)) return std::nullopt;
    const YAML::Node n = node_[k];
    if (!present(n)) return std::nullopt;
    if (!n.IsScalar() && !n.IsSequence()) throw ConfigError("'" + prefix() + k + "' must be a value or list");
    return n;
  }
  std::string prefix() const { return path_.empty() ? "" : path_ + "."; }
  std::string where() const { return path_.empty() ? "" : "'" + path_ + "': "; }
  double parse_double(const std::string& s, const std::string& k) const {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || *end != '\0') throw ConfigError("'" + prefix() + k + "' is not a number: '" + s + "'");
    return v;
  }
  std::uint64_t parse_uint(const std::string& s, const std::string& k) const {
    std::uint64_t v = 0;
    auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || r.ec != std::errc() || r.ptr != s.data() + s.size())
      throw ConfigError("'" + prefix() + k + "' must be a non-negative integer, got '" + s + "'");
    return v;
  }

  const YAML::Node node_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_head(Reader r, HeadConfig& h) {
  r.get("layers", h.num_layers);
  r.get("hidden_dim", h.hidden_dim);
  r.get("output_dim", h.output_dim);
  r.get("bn", h.use_bn);
}

}  // namespace

std::string to_yaml(const RunConfig& cfg, bool annotated) {
  Writer w(annotated);
  const auto& f = cfg.framework;
  w.comment("vidssl run configuration. Unknown keys are rejected.");
  w.key("method", to_string(f.method), "moco | simclr | byol | swav");
  w.key("precision", cfg.precision == Precision::kF32 ? "f32" : "f64", "training dtype");
  w.key("seed", num(cfg.seed, 0), "root seed; data, init, sampling and augmentation derive from it");
  w.key("iterations", num(cfg.iterations), "total optimizer steps");
  w.key("batch_size", num(cfg.batch_size), "videos per batch (B)");
  w.key("checkpoint_every", num(cfg.checkpoint_every), "steps between checkpoints");
  w.key("dataset_path", cfg.dataset_path, "written by gen-data, read by every other command");
  w.key("output_dir", cfg.output_dir, "overridden by VIDSSL_OUTPUT_DIR");

  w.open("data", "synthetic dataset (gen-data)");
  w.key("num_videos", num(cfg.data.num_videos));
  w.key("num_classes", num(cfg.data.num_classes));
  w.key("length", num(cfg.data.length), "frames per video (L)");
  w.key("height", num(cfg.data.height));
  w.key("width", num(cfg.data.width));
  w.key("segment_length", num(cfg.data.segment_length), "mean frames per distractor segment");
  w.key("distractor_gain", num(cfg.data.distractor_gain), "distractor grating amplitude scale");
  w.close();

  w.open("clips", "temporal sampling");
  w.key("rho", num(cfg.clips.rho), "clips per video; 1 = two crops of one clip");
  w.key("frames", num(cfg.clips.frames), "T");
  w.key("stride", num(cfg.clips.stride), "tau");
  w.key("t_max", cfg.clips.t_max == kUnbounded ? "inf" : num(cfg.clips.t_max),
        "max start distance between positives; inf = whole video");
  w.close();

  const auto& a = cfg.augment;
  w.open("augment", "augmentation");
  std::string groups = "[";
  for (auto g : {AugGroup::kTemporal, AugGroup::kSpatial, AugGroup::kColor})
    if (a.enabled(g)) groups += std::string(groups.size() > 1 ? ", " : "") + group_name(g);
  w.key("groups", groups + "]", "any of temporal, spatial, color");
  w.key("crop_style", a.crop_style == CropStyle::kVgg ? "vgg" : "inception", "vgg | inception");
  w.key("vgg_short_min", num(a.vgg_short_min), "short side resize range, pixels");
  w.key("vgg_short_max", num(a.vgg_short_max));
  w.key("inception_area_min", num(a.inception_area_min), "crop area fraction range");
  w.key("inception_area_max", num(a.inception_area_max));
  w.key("inception_aspect_min", num(a.inception_aspect_min));
  w.key("inception_aspect_max", num(a.inception_aspect_max));
  w.key("color_strength", num(a.color_strength), "jitter strength s");
  w.key("color_prob", num(a.color_prob));
  w.key("grayscale_prob", num(a.grayscale_prob));
  w.key("blur_prob", num(a.blur_prob));
  w.key("blur_sigma_min", num(a.blur_sigma_min));
  w.key("blur_sigma_max", num(a.blur_sigma_max));
  w.key("flip_prob", num(a.flip_prob));
  w.key("temporal_diff_prob", num(a.temporal_diff_prob), "frame differencing (temporal group)");
  w.key("framerate_jitter", num(a.framerate_jitter), "relative frame-rate jitter (temporal group)");
  w.close();

  const auto& e = f.encoder;
  w.open("encoder", "3D ResNet");
  w.key("input_size", num(e.input_size), "S; also the augmentation output size");
  w.key("stem_channels", num(e.stem_channels));
  w.key("channels", list(e.channels), "output channels of each stage");
  w.key("blocks", list(e.blocks), "bottleneck blocks per stage");
  w.key("bottleneck_divisor", num(e.bottleneck_divisor));
  w.key("temporal_stages", list(e.temporal_stages), "0-based stages with 3x1x1 kernels");
  w.key("zero_init_last_bn", flag(e.zero_init_last_bn));
  w.close();

  write_head(w, "projection", f.projection, "projection MLP");
  write_head(w, "predictor", f.predictor, "prediction MLP (byol only)");

  w.open("framework", "method settings");
  w.key("alpha", num(f.alpha), "temperature");
  w.key("m_base", num(f.m_base), "momentum encoder start value (moco, byol)");
  w.key("queue_capacity", num(f.queue_capacity), "negative queue size (moco only)");
  w.key("shuffle_bn", flag(f.shuffle_bn), "shuffled key BN groups (moco)");
  w.key("shuffle_bn_groups", num(f.shuffle_bn_groups));
  w.key("num_prototypes", num(f.num_prototypes), "swav only");
  w.key("sk_iterations", num(f.sk.iterations));
  w.key("sk_epsilon", num(f.sk.epsilon));
  w.key("freeze_prototypes_iters", num(f.sk.freeze_prototypes_iters));
  w.key("aggregation", f.aggregation == Aggregation::kSequential ? "sequential" : "parallel",
        "sequential applies to moco and byol");
  w.key("infonce_variant", f.infonce_variant == InfoNceVariant::kSumInside ? "sum_inside" : "mean_of_positives");
  w.close();

  w.open("optim", "SGD with cosine decay");
  w.key("base_lr", num(cfg.optim.base_lr), "eta");
  w.key("momentum", num(cfg.optim.momentum));
  w.key("weight_decay", num(cfg.optim.weight_decay));
  w.key("lars", flag(cfg.optim.use_lars));
  w.key("lars_trust", num(cfg.optim.lars_trust));
  w.key("warmup_fraction", num(cfg.warmup_fraction), "fraction of iterations with a linear ramp");
  w.close();

  const auto& p = cfg.probe;
  w.open("probe", "linear classification on frozen features");
  w.key("epochs", num(p.epochs));
  w.key("base_lr", num(p.base_lr));
  w.key("warmup_fraction", num(p.warmup_fraction));
  w.key("weight_decay", num(p.weight_decay), "fixed at 0");
  w.key("momentum", num(p.momentum));
  w.key("batch_size", num(p.batch_size));
  w.key("views", num(p.views), "uniformly spaced clips per video");
  w.key("train_fraction", num(p.train_fraction));
  w.close();

  const auto& t = cfg.finetune;
  w.open("finetune", "all weights trained with a fresh linear head");
  w.key("steps", num(t.steps));
  w.key("batch_size", num(t.batch_size));
  w.key("base_lr", num(t.base_lr));
  w.key("momentum", num(t.momentum));
  w.key("weight_decay", num(t.weight_decay));
  w.key("views", num(t.views));
  w.key("train_fraction", num(t.train_fraction));
  w.key("augment", flag(t.augment));
  w.close();
  return w.str();
}

RunConfig parse_config(const std::string& text) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("config is not valid YAML: ") + e.what());
  }
  if (root.IsNull()) root = YAML::Node(YAML::NodeType::Map);
  RunConfig c;
  try {
    Reader r(root, "");
    std::string method = "simclr";
    r.get("method", method);
    c = RunConfig::defaults(parse_method(method));
    std::string precision = "f32";
    r.get("precision", precision);
    if (precision == "f32") c.precision = Precision::kF32;
    else if (precision == "f64") c.precision = Precision::kF64;
    else throw ConfigError("precision must be f32 or f64");
    r.get("seed", c.seed, 0);
    r.get("iterations", c.iterations);
    r.get("batch_size", c.batch_size);
    r.get("checkpoint_every", c.checkpoint_every);
    r.get("dataset_path", c.dataset_path);
    r.get("output_dir", c.output_dir);
    {
      auto d = r.child("data");
      d.get("num_videos", c.data.num_videos);
      d.get("num_classes", c.data.num_classes);
      d.get("length", c.data.length);
      d.get("height", c.data.height);
      d.get("width", c.data.width);
      d.get("segment_length", c.data.segment_length);
      d.get("distractor_gain", c.data.distractor_gain);
    }
    {
      auto s = r.child("clips");
      s.get("rho", c.clips.rho);
      s.get("frames", c.clips.frames);
      s.get("stride", c.clips.stride);
      double tmax = c.clips.t_max == kUnbounded ? INFINITY : static_cast<double>(c.clips.t_max);
      s.get("t_max", tmax);
      if (std::isinf(tmax) && tmax > 0) c.clips.t_max = kUnbounded;
      else if (tmax >= 0 && tmax == std::floor(tmax)) c.clips.t_max = static_cast<std::size_t>(tmax);
      else throw ConfigError("clips.t_max must be a non-negative integer or inf");
    }
    {
      auto a = r.child("augment");
      auto& g = c.augment;
      bool present;
      const auto groups = a.get_list("groups", present);
      if (present) {
        g.groups.clear();
        for (const auto& s : groups) g.groups.insert(parse_group(s));
      }
      std::string crop = g.crop_style == CropStyle::kVgg ? "vgg" : "inception";
      a.get("crop_style", crop);
      if (crop == "vgg") g.crop_style = CropStyle::kVgg;
      else if (crop == "inception") g.crop_style = CropStyle::kInception;
      else throw ConfigError("augment.crop_style must be vgg or inception");
      a.get("vgg_short_min", g.vgg_short_min);
      a.get("vgg_short_max", g.vgg_short_max);
      a.get("inception_area_min", g.inception_area_min);
      a.get("inception_area_max", g.inception_area_max);
      a.get("inception_aspect_min", g.inception_aspect_min);
      a.get("inception_aspect_max", g.inception_aspect_max);
      a.get("color_strength", g.color_strength);
      a.get("color_prob", g.color_prob);
      a.get("grayscale_prob", g.grayscale_prob);
      a.get("blur_prob", g.blur_prob);
      a.get("blur_sigma_min", g.blur_sigma_min);
      a.get("blur_sigma_max", g.blur_sigma_max);
      a.get("flip_prob", g.flip_prob);
      a.get("temporal_diff_prob", g.temporal_diff_prob);
      a.get("framerate_jitter", g.framerate_jitter);
    }
    {
      auto e = r.child("encoder");
      auto& x = c.framework.encoder;
      e.get("input_size", x.input_size);
      e.get("stem_channels", x.stem_channels);
      e.get_sizes("channels", x.channels);
      e.get_sizes("blocks", x.blocks);
      e.get("bottleneck_divisor", x.bottleneck_divisor);
      std::vector<std::size_t> ts(x.temporal_stages.begin(), x.temporal_stages.end());
      e.get_sizes("temporal_stages", ts);
      x.temporal_stages = std::set<std::size_t>(ts.begin(), ts.end());
      e.get("zero_init_last_bn", x.zero_init_last_bn);
    }
    read_head(r.child("projection"), c.framework.projection);
    read_head(r.child("predictor"), c.framework.predictor);
    {
      auto f = r.child("framework");
      auto& x = c.framework;
      f.get("alpha", x.alpha);
      f.get("m_base", x.m_base);
      f.get("queue_capacity", x.queue_capacity);
      f.get("shuffle_bn", x.shuffle_bn);
      f.get("shuffle_bn_groups", x.shuffle_bn_groups);
      f.get("num_prototypes", x.num_prototypes);
      f.get("sk_iterations", x.sk.iterations);
      f.get("sk_epsilon", x.sk.epsilon);
      f.get("freeze_prototypes_iters", x.sk.freeze_prototypes_iters);
      std::string agg = x.aggregation == Aggregation::kSequential ? "sequential" : "parallel";
      f.get("aggregation", agg);
      if (agg == "sequential") x.aggregation = Aggregation::kSequential;
      else if (agg == "parallel") x.aggregation = Aggregation::kParallel;
      else throw ConfigError("framework.aggregation must be sequential or parallel");
      std::string var = x.infonce_variant == InfoNceVariant::kSumInside ? "sum_inside" : "mean_of_positives";
      f.get("infonce_variant", var);
      if (var == "sum_inside") x.infonce_variant = InfoNceVariant::kSumInside;
      else if (var == "mean_of_positives") x.infonce_variant = InfoNceVariant::kMeanOfPositives;
      else throw ConfigError("framework.infonce_variant must be sum_inside or mean_of_positives");
    }
    {
      auto o = r.child("optim");
      o.get("base_lr", c.optim.base_lr);
      o.get("momentum", c.optim.momentum);
      o.get("weight_decay", c.optim.weight_decay);
      o.get("lars", c.optim.use_lars);
      o.get("lars_trust", c.optim.lars_trust);
      o.get("warmup_fraction", c.warmup_fraction);
    }
    {
      auto p = r.child("probe");
      p.get("epochs", c.probe.epochs);
      p.get("base_lr", c.probe.base_lr);
      p.get("warmup_fraction", c.probe.warmup_fraction);
      p.get("weight_decay", c.probe.weight_decay);
      p.get("momentum", c.probe.momentum);
      p.get("batch_size", c.probe.batch_size);
      p.get("views", c.probe.views);
      p.get("train_fraction", c.probe.train_fraction);
    }
    {
      auto t = r.child("finetune");
      t.get("steps", c.finetune.steps);
      t.get("batch_size", c.finetune.batch_size);
      t.get("base_lr", c.finetune.base_lr);
      t.get("momentum", c.finetune.momentum);
      t.get("weight_decay", c.finetune.weight_decay);
      t.get("views", c.finetune.views);
      t.get("train_fraction", c.finetune.train_fraction);
      t.get("augment", c.finetune.augment);
    }
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.sync();
  c.validate();
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str());
}

std::string config_hash(const RunConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : to_yaml(cfg)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string resolved_output_dir(const RunConfig& cfg) {
  if (const char* env = std::getenv("VIDSSL_OUTPUT_DIR"); env && *env) return env;
  return cfg.output_dir;
}

}  // namespace vidssl
