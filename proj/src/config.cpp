#include "rcnnlab/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include <fmt/format.h>

namespace rcnnlab {

std::string to_string(ExperimentMode mode) {
  switch (mode) {
    case ExperimentMode::baseline: return "baseline";
    case ExperimentMode::rga: return "rga";
    case ExperimentMode::prm: return "prm";
    case ExperimentMode::rga_prm: return "rga+prm";
  }
  return "baseline";
}

ExperimentMode parse_mode(const std::string& text) {
  if (text == "baseline") return ExperimentMode::baseline;
  if (text == "rga") return ExperimentMode::rga;
  if (text == "prm") return ExperimentMode::prm;
  if (text == "rga+prm") return ExperimentMode::rga_prm;
  throw std::invalid_argument("mode must be one of baseline, rga, prm, rga+prm; got '" + text + "'");
}

std::vector<HeadSpec> ExperimentConfig::head_specs() const {
  std::vector<HeadSpec> heads;
  if (prm_enabled()) {
    for (const auto& r : prm_ratios) heads.push_back(HeadSpec{SamplingPolicy{sampling, r, batch_size}, 1.0, {}});
  } else {
    heads.push_back(HeadSpec{SamplingPolicy{sampling, ratio, batch_size}, 1.0, {}});
  }
  return heads;
}

std::optional<AnnealSchedule> ExperimentConfig::rga_schedule() const {
  if (!rga_enabled()) return std::nullopt;
  return AnnealSchedule{lambda0, train.total_steps, anneal};
}

void ExperimentConfig::validate() const {
  try {
    scene.validate();
    rpn.validate();
    features.validate();
    if (features.num_classes != scene.num_classes) throw std::invalid_argument("feature classes differ from scene classes");
    train.validate();
    if (train_scenes < 1) throw std::invalid_argument("experiment.train_scenes must be >= 1");
    if (scenes_per_step < 1) throw std::invalid_argument("experiment.scenes_per_step must be >= 1");
    if (scenes_per_step * rpn.n_bg < batch_size)
      throw std::invalid_argument("scenes_per_step * n_bg must cover the batch size so every step has enough proposals");
    for (const auto& h : head_specs()) h.policy.validate();
    if (prm_enabled() && prm_ratios.empty()) throw std::invalid_argument("sampling.prm_ratios is empty");
    AnnealSchedule{lambda0, train.total_steps, anneal}.validate();
    if (eval.num_scenes < 1) throw std::invalid_argument("eval.scenes must be >= 1");
    if (!(eval.quality >= 0.0 && eval.quality <= 1.0)) throw std::invalid_argument("eval.quality must lie in [0, 1]");
    if (eval.iou_thresholds.empty()) throw std::invalid_argument("eval.iou_thresholds is empty");
    for (double t : eval.iou_thresholds)
      if (!(t > 0.0 && t < 1.0)) throw std::invalid_argument("IoU thresholds must lie in (0, 1)");
    if (!(eval.post.nms_iou > 0.0 && eval.post.nms_iou < 1.0)) throw std::invalid_argument("eval.nms_iou must lie in (0, 1)");
    if (eval.post.max_per_scene < 1) throw std::invalid_argument("eval.max_per_scene must be >= 1");
  } catch (const std::invalid_argument& e) {
    throw ConfigError(0, e.what());
  }
}

std::string ExperimentConfig::canonical() const {
  std::string s;
  auto line = [&](std::string_view key, const auto& value) { s += fmt::format("{} = {}\n", key, value); };
  auto real = [](double v) { return fmt::format("{:.17g}", v); };
  line("experiment.seed", seed);
  line("experiment.mode", to_string(mode));
  line("experiment.train_scenes", train_scenes);
  line("experiment.scenes_per_step", scenes_per_step);
  line("scene.width", real(scene.width));
  line("scene.height", real(scene.height));
  line("scene.classes", scene.num_classes);
  line("scene.min_size", real(scene.min_size));
  line("scene.max_size", real(scene.max_size));
  std::string mix;
  for (const auto& w : scene.gt_counts) mix += fmt::format("{}{}:{}", mix.empty() ? "" : ",", w.count, real(w.weight));
  line("scene.gt_counts", mix);
  line("rpn.sigma_start", real(rpn.sigma_start));
  line("rpn.sigma_end", real(rpn.sigma_end));
  line("rpn.n_fg", rpn.n_fg);
  line("rpn.n_bg", rpn.n_bg);
  line("rpn.bg_min_size", real(rpn.bg_min_size));
  line("rpn.bg_max_size", real(rpn.bg_max_size));
  line("rpn.pos_iou", real(rpn.pos_threshold));
  line("features.noise_dims", features.noise_dims);
  line("features.noise_sigma", real(features.noise_sigma));
  line("sampling.mode", to_string(sampling));
  line("sampling.batch_size", batch_size);
  line("sampling.ratio", ratio.str());
  std::string ratios;
  for (const auto& r : prm_ratios) ratios += (ratios.empty() ? "" : ",") + r.str();
  line("sampling.prm_ratios", ratios);
  line("rga.lambda0", real(lambda0));
  line("rga.anneal", anneal ? "true" : "false");
  line("train.lr", real(train.learning_rate));
  line("train.steps", train.total_steps);
  std::string decay;
  for (const auto& f : train.decay_points) decay += fmt::format("{}{}/{}", decay.empty() ? "" : ",", f.num, f.den);
  line("train.decay_points", decay);
  line("train.decay_factor", real(train.decay_factor));
  line("train.hidden", train.hidden);
  line("train.init_scale", real(train.init_scale));
  line("train.cls_weight", real(train.loss.cls));
  line("train.reg_weight", real(train.loss.reg));
  line("eval.scenes", eval.num_scenes);
  line("eval.quality", real(eval.quality));
  std::string thr;
  for (double t : eval.iou_thresholds) thr += (thr.empty() ? "" : ",") + real(t);
  line("eval.iou_thresholds", thr);
  line("eval.nms_iou", real(eval.post.nms_iou));
  line("eval.score_floor", real(eval.post.score_floor));
  line("eval.max_per_scene", eval.post.max_per_scene);
  std::string buckets;
  for (const auto& b : eval.buckets) buckets += (buckets.empty() ? "" : ",") + b.key();
  line("eval.buckets", buckets);
  return s;
}

std::uint64_t ExperimentConfig::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : canonical()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// ---------------------------------------------------------------------------
// value parsers; they throw std::invalid_argument and the caller adds the line

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) {
    cur = trim(cur);
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

double to_real(const std::string& v) {
  double x = 0.0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (v.empty() || ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(x))
    throw std::invalid_argument("expected a real number, got '" + v + "'");
  return x;
}

long long to_int(const std::string& v) {
  long long x = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (v.empty() || ec != std::errc() || ptr != v.data() + v.size())
    throw std::invalid_argument("expected an integer, got '" + v + "'");
  return x;
}

int to_int32(const std::string& v) {
  const long long x = to_int(v);
  if (x < INT32_MIN || x > INT32_MAX) throw std::invalid_argument("integer out of range: '" + v + "'");
  return static_cast<int>(x);
}

std::uint64_t to_u64(const std::string& v) {
  std::uint64_t x = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (v.empty() || ec != std::errc() || ptr != v.data() + v.size())
    throw std::invalid_argument("expected a non-negative integer, got '" + v + "'");
  return x;
}

bool to_bool(const std::string& v) {
  if (v == "true" || v == "yes" || v == "on" || v == "1") return true;
  if (v == "false" || v == "no" || v == "off" || v == "0") return false;
  throw std::invalid_argument("expected true/false, got '" + v + "'");
}

Fraction to_fraction(const std::string& v) {
  const auto slash = v.find('/');
  if (slash != std::string::npos) return {to_int32(trim(v.substr(0, slash))), to_int32(trim(v.substr(slash + 1)))};
  const double x = to_real(v);
  constexpr int kDen = 1000000;
  return {static_cast<int>(std::lround(x * kDen)), kDen};
}

std::vector<GtCountWeight> to_mixture(const std::string& v) {
  std::vector<GtCountWeight> mix;
  double total = 0.0;
  for (const auto& item : split(v, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw std::invalid_argument("gt_counts entries must look like count:weight");
    GtCountWeight w{to_int32(trim(item.substr(0, colon))), to_real(trim(item.substr(colon + 1)))};
    if (w.count < 0 || w.weight < 0.0) throw std::invalid_argument("gt_counts entries must be non-negative");
    total += w.weight;
    mix.push_back(w);
  }
  if (mix.empty() || !(total > 0.0)) throw std::invalid_argument("gt_counts needs positive total weight");
  for (auto& w : mix) w.weight /= total;
  return mix;
}

std::vector<double> to_thresholds(const std::string& v) {
  const auto parts = split(v, ':');
  if (parts.size() == 3) {
    const double lo = to_real(parts[0]), step = to_real(parts[1]), hi = to_real(parts[2]);
    if (!(step > 0.0) || hi < lo) throw std::invalid_argument("threshold range must be lo:step:hi with step > 0");
    std::vector<double> out;
    const auto n = static_cast<int>(std::floor((hi - lo) / step + 1e-9));
    for (int i = 0; i <= n; ++i) out.push_back(std::round((lo + i * step) * 1e9) / 1e9);
    return out;
  }
  std::vector<double> out;
  for (const auto& t : split(v, ',')) out.push_back(to_real(t));
  return out;
}

std::vector<GtBucket> to_buckets(const std::string& v) {
  std::vector<GtBucket> out;
  for (const auto& item : split(v, ',')) {
    const auto dash = item.find('-');
    if (dash == std::string::npos) throw std::invalid_argument("buckets must look like lo-hi or lo-inf");
    GtBucket b;
    b.min_count = to_int32(trim(item.substr(0, dash)));
    const std::string hi = trim(item.substr(dash + 1));
    if (hi != "inf") b.max_count = to_int32(hi);
    if (b.min_count < 0 || (b.max_count && *b.max_count < b.min_count)) throw std::invalid_argument("bad bucket '" + item + "'");
    out.push_back(b);
  }
  return out;
}

using Setter = std::function<void(ExperimentConfig&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"experiment.seed", [](ExperimentConfig& c, const std::string& v) { c.seed = to_u64(v); }},
      {"experiment.mode", [](ExperimentConfig& c, const std::string& v) { c.mode = parse_mode(v); }},
      {"experiment.out", [](ExperimentConfig& c, const std::string& v) { c.out_dir = v; }},
      {"experiment.train_scenes", [](ExperimentConfig& c, const std::string& v) { c.train_scenes = to_int32(v); }},
      {"experiment.scenes_per_step", [](ExperimentConfig& c, const std::string& v) { c.scenes_per_step = to_int32(v); }},

      {"scene.width", [](ExperimentConfig& c, const std::string& v) { c.scene.width = to_real(v); }},
      {"scene.height", [](ExperimentConfig& c, const std::string& v) { c.scene.height = to_real(v); }},
      {"scene.classes", [](ExperimentConfig& c, const std::string& v) { c.scene.num_classes = to_int32(v); }},
      {"scene.min_size", [](ExperimentConfig& c, const std::string& v) { c.scene.min_size = to_real(v); }},
      {"scene.max_size", [](ExperimentConfig& c, const std::string& v) { c.scene.max_size = to_real(v); }},
      {"scene.gt_counts", [](ExperimentConfig& c, const std::string& v) { c.scene.gt_counts = to_mixture(v); }},

      {"rpn.sigma_start", [](ExperimentConfig& c, const std::string& v) { c.rpn.sigma_start = to_real(v); }},
      {"rpn.sigma_end", [](ExperimentConfig& c, const std::string& v) { c.rpn.sigma_end = to_real(v); }},
      {"rpn.n_fg", [](ExperimentConfig& c, const std::string& v) { c.rpn.n_fg = to_int32(v); }},
      {"rpn.n_bg", [](ExperimentConfig& c, const std::string& v) { c.rpn.n_bg = to_int32(v); }},
      {"rpn.bg_min_size", [](ExperimentConfig& c, const std::string& v) { c.rpn.bg_min_size = to_real(v); }},
      {"rpn.bg_max_size", [](ExperimentConfig& c, const std::string& v) { c.rpn.bg_max_size = to_real(v); }},
      {"rpn.pos_iou", [](ExperimentConfig& c, const std::string& v) { c.rpn.pos_threshold = to_real(v); }},

      {"features.noise_dims", [](ExperimentConfig& c, const std::string& v) { c.features.noise_dims = to_int32(v); }},
      {"features.noise_sigma", [](ExperimentConfig& c, const std::string& v) { c.features.noise_sigma = to_real(v); }},

      {"sampling.mode", [](ExperimentConfig& c, const std::string& v) { c.sampling = parse_sampling_mode(v); }},
      {"sampling.batch_size", [](ExperimentConfig& c, const std::string& v) { c.batch_size = to_int32(v); }},
      {"sampling.ratio", [](ExperimentConfig& c, const std::string& v) { c.ratio = parse_ratio(v); }},
      {"sampling.prm_ratios",
       [](ExperimentConfig& c, const std::string& v) {
         c.prm_ratios.clear();
         for (const auto& r : split(v, ',')) c.prm_ratios.push_back(parse_ratio(r));
       }},

      {"rga.lambda0", [](ExperimentConfig& c, const std::string& v) { c.lambda0 = to_real(v); }},
      {"rga.anneal", [](ExperimentConfig& c, const std::string& v) { c.anneal = to_bool(v); }},

      {"train.lr", [](ExperimentConfig& c, const std::string& v) { c.train.learning_rate = to_real(v); }},
      {"train.steps", [](ExperimentConfig& c, const std::string& v) { c.train.total_steps = to_int(v); }},
      {"train.decay_points",
       [](ExperimentConfig& c, const std::string& v) {
         c.train.decay_points.clear();
         for (const auto& f : split(v, ',')) c.train.decay_points.push_back(to_fraction(f));
       }},
      {"train.decay_factor", [](ExperimentConfig& c, const std::string& v) { c.train.decay_factor = to_real(v); }},
      {"train.hidden", [](ExperimentConfig& c, const std::string& v) { c.train.hidden = to_int32(v); }},
      {"train.init_scale", [](ExperimentConfig& c, const std::string& v) { c.train.init_scale = to_real(v); }},
      {"train.cls_weight", [](ExperimentConfig& c, const std::string& v) { c.train.loss.cls = to_real(v); }},
      {"train.reg_weight", [](ExperimentConfig& c, const std::string& v) { c.train.loss.reg = to_real(v); }},

      {"eval.scenes", [](ExperimentConfig& c, const std::string& v) { c.eval.num_scenes = to_int32(v); }},
      {"eval.quality", [](ExperimentConfig& c, const std::string& v) { c.eval.quality = to_real(v); }},
      {"eval.iou_thresholds", [](ExperimentConfig& c, const std::string& v) { c.eval.iou_thresholds = to_thresholds(v); }},
      {"eval.nms_iou", [](ExperimentConfig& c, const std::string& v) { c.eval.post.nms_iou = to_real(v); }},
      {"eval.score_floor", [](ExperimentConfig& c, const std::string& v) { c.eval.post.score_floor = to_real(v); }},
      {"eval.max_per_scene", [](ExperimentConfig& c, const std::string& v) { c.eval.post.max_per_scene = to_int32(v); }},
      {"eval.buckets", [](ExperimentConfig& c, const std::string& v) { c.eval.buckets = to_buckets(v); }},
  };
  return table;
}

const std::set<std::string>& sections() {
  static const std::set<std::string> s = {"experiment", "scene", "rpn", "features", "sampling", "rga", "train", "eval"};
  return s;
}

}  // namespace

ExperimentConfig parse_config(std::string_view text, std::optional<std::uint64_t> seed_override) {
  ExperimentConfig cfg;
  std::string section;
  bool have_seed = false;
  std::set<std::string> seen;
  std::istringstream is{std::string(text)};
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(is, raw)) {
    ++line_no;
    const auto hash = raw.find_first_of("#;");
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(line_no, "malformed section header '" + line + "'");
      section = trim(line.substr(1, line.size() - 2));
      if (!sections().count(section)) throw ConfigError(line_no, "unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(line_no, "expected 'key = value', got '" + line + "'");
    if (section.empty()) throw ConfigError(line_no, "key outside of any section");
    const std::string key = section + "." + trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = setters().find(key);
    if (it == setters().end()) throw ConfigError(line_no, "unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigError(line_no, "duplicate key '" + key + "'");
    try {
      it->second(cfg, value);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(line_no, key + ": " + e.what());
    }
    if (key == "experiment.seed") have_seed = true;
  }
  if (seed_override) {
    cfg.seed = *seed_override;
    have_seed = true;
  }
  if (!have_seed) throw ConfigError(0, "missing required key experiment.seed");
  cfg.features.num_classes = cfg.scene.num_classes;
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path, std::optional<std::uint64_t> seed_override) {
  std::ifstream in(path);
  if (!in) throw ConfigError(0, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), seed_override);
}

}  // namespace rcnnlab
