#include "rcnnlab/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <numeric>
#include <sstream>

#include <fmt/format.h>

#include "json.hpp"
#include "rcnnlab/checkpoint.hpp"
#include "rcnnlab/random.hpp"

namespace rcnnlab {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  return os;
}

std::string opt_cell(const std::optional<double>& v) { return v ? fmt::format("{:.9g}", *v) : std::string(); }

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

// ---------------------------------------------------------------------------
// data

Dataset build_dataset(const ExperimentConfig& config) {
  Dataset d;
  d.train = generate_scenes(config.scene, static_cast<std::size_t>(config.train_scenes),
                            derive_seed(config.seed, {stream::kTrainScenes}), 0);
  const auto eval_scenes = generate_scenes(config.scene, static_cast<std::size_t>(config.eval.num_scenes),
                                           derive_seed(config.seed, {stream::kEvalScenes}),
                                           static_cast<std::uint64_t>(config.train_scenes));
  d.eval.reserve(eval_scenes.size());
  for (const Scene& s : eval_scenes) {
    d.eval.push_back({s, generate_proposals(s, config.eval.quality, config.rpn, config.features,
                                            derive_seed(config.seed, {stream::kEvalProposals, s.id}))});
  }
  return d;
}

std::uint64_t dataset_key(const ExperimentConfig& config) {
  static constexpr std::string_view kPrefixes[] = {"experiment.seed", "experiment.train_scenes", "scene.", "rpn.",
                                                   "features.", "eval.scenes", "eval.quality"};
  std::istringstream is(config.canonical());
  std::string line, relevant;
  while (std::getline(is, line)) {
    for (auto p : kPrefixes)
      if (line.rfind(p, 0) == 0) {
        relevant += line + '\n';
        break;
      }
  }
  return fnv1a(relevant);
}

void save_dataset(const fs::path& dir, const ExperimentConfig& config, const Dataset& data) {
  fs::create_directories(dir);
  std::vector<SceneRecord> records;
  records.reserve(data.train.size() + data.eval.size());
  for (const Scene& s : data.train) records.push_back({s, {}});
  records.insert(records.end(), data.eval.begin(), data.eval.end());
  {
    auto os = open_out(dir / "dataset.txt");
    write_dataset(os, records);
  }
  auto os = open_out(dir / "dataset.key");
  os << fmt::format("{:016x} {} {}\n", dataset_key(config), data.train.size(), data.eval.size());
}

std::optional<Dataset> load_cached_dataset(const fs::path& dir, const ExperimentConfig& config) {
  std::ifstream key_in(dir / "dataset.key");
  if (!key_in) return std::nullopt;
  std::string key;
  std::size_t n_train = 0, n_eval = 0;
  if (!(key_in >> key >> n_train >> n_eval) || key != fmt::format("{:016x}", dataset_key(config))) return std::nullopt;
  std::ifstream in(dir / "dataset.txt");
  if (!in) return std::nullopt;
  auto records = read_dataset(in);
  if (records.size() != n_train + n_eval) return std::nullopt;
  Dataset d;
  for (std::size_t i = 0; i < n_train; ++i) d.train.push_back(std::move(records[i].scene));
  d.eval.assign(std::make_move_iterator(records.begin() + static_cast<std::ptrdiff_t>(n_train)),
                std::make_move_iterator(records.end()));
  return d;
}

// ---------------------------------------------------------------------------
// training

std::vector<Proposal> training_pool(const ExperimentConfig& config, std::span<const Scene> scenes, std::int64_t t) {
  if (scenes.empty()) throw std::invalid_argument("no training scenes");
  const auto k = std::min<std::size_t>(static_cast<std::size_t>(config.scenes_per_step), scenes.size());
  std::vector<std::size_t> order(scenes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(config.seed, {stream::kSceneChoice, static_cast<std::uint64_t>(t)}));
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, order.size() - 1);
    std::swap(order[i], order[pick(rng)]);
  }
  const double q = quality_at(t, config.train.total_steps);
  std::vector<Proposal> pool;
  for (std::size_t i = 0; i < k; ++i) {
    const Scene& s = scenes[order[i]];
    auto props = generate_proposals(
        s, q, config.rpn, config.features,
        derive_seed(config.seed, {stream::kProposals, static_cast<std::uint64_t>(t), s.id}));
    pool.insert(pool.end(), std::make_move_iterator(props.begin()), std::make_move_iterator(props.end()));
  }
  return pool;
}

TrainResult train_model(const ExperimentConfig& config, std::span<const Scene> train_scenes,
                        const StepCallback& on_step) {
  config.validate();
  TrainResult r;
  r.model = make_prm_model<double>(config.features.dim(), config.train.hidden, config.scene.num_classes,
                                   config.head_specs(), config.train.init_scale,
                                   derive_seed(config.seed, {stream::kInit}));
  const auto schedule = config.rga_schedule();
  const std::int64_t T = config.train.total_steps;
  r.grad_norms.reserve(static_cast<std::size_t>(T));
  r.head_stats.reserve(static_cast<std::size_t>(T));
  for (std::int64_t t = 0; t < T; ++t) {
    const auto pool = training_pool(config, train_scenes, t);
    PrmStepResult step = prm_train_step<double>(r.model, pool, t, config.train, schedule, config.seed);

    MetricsRow row;
    row.step = t;
    const HeadStepStats& h0 = step.heads.front();
    row.pos_count_unique = h0.pos_count_unique;
    row.pos_count_effective = h0.pos_count_effective;
    row.pos_acc = h0.pos_acc;
    row.neg_acc = h0.neg_acc;
    row.lambda = step.lambda;
    for (const auto& h : step.heads) row.fg_score.push_back(h.mean_fg_score);
    r.log.append(std::move(row));
    r.grad_norms.push_back(std::move(step.grad_norms));
    r.head_stats.push_back(std::move(step.heads));
    if (on_step) on_step(t);
  }
  return r;
}

// ---------------------------------------------------------------------------
// evaluation

EvalResult evaluate_model(const PrmModel<double>& model, std::span<const SceneRecord> records,
                          const EvalConfig& config) {
  std::vector<Proposal> proposals;
  std::vector<Scene> scenes;
  EvalResult r;
  scenes.reserve(records.size());
  for (const SceneRecord& rec : records) {
    scenes.push_back(rec.scene);
    proposals.insert(proposals.end(), rec.proposals.begin(), rec.proposals.end());
    r.proposal_scene.insert(r.proposal_scene.end(), rec.proposals.size(), rec.scene.id);
    r.scene_counts.push_back(
        {rec.scene.id, static_cast<int>(rec.scene.instances.size()), count_positive(rec.proposals)});
  }
  const PrmPrediction<double> pred = prm_predict<double>(model, proposals);
  r.regression_head = pred.regression_head;

  const auto dets = detections_from_scores(proposals, pred.scores, pred.boxes, config.post);
  r.ensemble = compute_ap(dets, scenes, config.iou_thresholds, config.buckets);

  for (std::size_t h = 0; h < pred.head_logits.size(); ++h) {
    const Eigen::MatrixXd scores = softmax_rows<double>(pred.head_logits[h]);
    std::vector<Box> boxes;
    boxes.reserve(proposals.size());
    for (std::size_t i = 0; i < proposals.size(); ++i)
      boxes.push_back(decode_box(proposals[i].box, pred.head_deltas[h].row(static_cast<Eigen::Index>(i)).transpose()));
    const auto head_dets = detections_from_scores(proposals, scores, boxes, config.post);
    r.per_head.push_back(compute_ap(head_dets, scenes, config.iou_thresholds, config.buckets));
    r.head_fg_scores.push_back(foreground_scores(pred.head_logits[h]));
    const auto& fg = r.head_fg_scores.back();
    r.head_mean_fg_score.push_back(fg.empty() ? 0.0 : std::accumulate(fg.begin(), fg.end(), 0.0) / double(fg.size()));
  }
  if (pred.head_logits.size() >= 2) r.gaps = score_gap_stats(pred.head_logits);
  return r;
}

RunResult run_in_memory(const ExperimentConfig& config, const StepCallback& on_step) {
  config.validate();
  const Dataset data = build_dataset(config);
  RunResult r;
  r.train = train_model(config, data.train, on_step);
  r.eval = evaluate_model(r.train.model, data.eval, config.eval);
  return r;
}

// ---------------------------------------------------------------------------
// artifacts

void write_report(std::ostream& os, const ExperimentConfig& config, const EvalResult& r) {
  os << fmt::format("mode {}  seed {}  heads {}  config {:016x}\n", to_string(config.mode), config.seed,
                    r.per_head.size(), config.hash());
  os << fmt::format("eval scenes {}  quality {}\n\n", r.scene_counts.size(), config.eval.quality);

  auto table = [&](const std::string& title, const APResult& ap) {
    os << title << '\n';
    os << fmt::format("  {:>8}  {:>10}\n", "iou", "AP");
    for (std::size_t i = 0; i < ap.thresholds.size(); ++i)
      os << fmt::format("  {:>8.2f}  {:>10.6f}\n", ap.thresholds[i], ap.ap_per_threshold[i]);
    os << fmt::format("  {:>8}  {:>10.6f}\n", "mean", ap.ap_mean);
    os << fmt::format("  {:>8}  {:>10}  {:>10}\n", "bucket", "scenes", "AP");
    for (const auto& b : ap.buckets)
      os << fmt::format("  {:>8}  {:>10}  {:>10}\n", b.bucket.key(), b.num_scenes,
                        b.ap ? fmt::format("{:.6f}", *b.ap) : std::string("-"));
    os << '\n';
  };
  table(r.per_head.size() > 1 ? "ensemble" : "model", r.ensemble);
  if (r.per_head.size() > 1) {
    for (std::size_t h = 0; h < r.per_head.size(); ++h)
      table(fmt::format("head {} ({}){}", h + 1, config.head_specs()[h].policy.ratio.str(),
                        h == r.regression_head ? " regression" : ""),
            r.per_head[h]);
  }
  for (std::size_t h = 0; h < r.head_mean_fg_score.size(); ++h)
    os << fmt::format("head {} mean foreground score {:.6f}\n", h + 1, r.head_mean_fg_score[h]);
  if (r.gaps)
    os << fmt::format("score gap mean {:.6f}  median {:.6f}  fraction > {} : {:.6f}\n", r.gaps->mean_gap,
                      r.gaps->median_gap, r.gaps->gap_threshold, r.gaps->frac_gap_above);
}

namespace {

json ap_json(const APResult& ap) {
  json j;
  j["ap_mean"] = ap.ap_mean;
  j["ap50"] = ap.ap50;
  j["ap75"] = ap.ap75;
  for (const auto& b : ap.buckets) j["ap_bucket_" + b.bucket.key()] = opt_json(b.ap);
  return j;
}

}  // namespace

std::string summary_json(const EvalResult& r) {
  json j = ap_json(r.ensemble);
  j["ap_per_threshold"] = r.ensemble.ap_per_threshold;
  j["thresholds"] = r.ensemble.thresholds;
  j["regression_head"] = r.regression_head;
  json heads = json::array();
  for (std::size_t h = 0; h < r.per_head.size(); ++h) {
    json hj = ap_json(r.per_head[h]);
    hj["mean_fg_score"] = r.head_mean_fg_score[h];
    heads.push_back(hj);
  }
  j["heads"] = heads;
  if (r.gaps) {
    j["score_gap_mean"] = r.gaps->mean_gap;
    j["score_gap_median"] = r.gaps->median_gap;
    j["score_gap_fraction"] = r.gaps->frac_gap_above;
    j["score_gap_threshold"] = r.gaps->gap_threshold;
  }
  return j.dump(2) + "\n";
}

namespace {

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_eval_artifacts(const fs::path& dir, const ExperimentConfig& config, const EvalResult& r) {
  {
    auto os = open_out(dir / "report.txt");
    write_report(os, config, r);
  }
  auto os = open_out(dir / "summary.json");
  os << summary_json(r);
}

}  // namespace

RunResult run_experiment(const ExperimentConfig& config, const StepCallback& on_step) {
  config.validate();
  const fs::path dir = config.out_dir;
  fs::create_directories(dir);

  auto data = load_cached_dataset(dir, config);
  if (!data) {
    data = build_dataset(config);
    save_dataset(dir, config, *data);
  }

  RunResult r;
  r.train = train_model(config, data->train, on_step);
  r.eval = evaluate_model(r.train.model, data->eval, config.eval);

  {
    auto os = open_out(dir / "metrics.csv");
    r.train.log.write_csv(os);
  }
  {
    auto os = open_out(dir / "gradnorm.csv");
    write_gradnorm_header(os, r.train.model.num_heads());
    for (const auto& g : r.train.grad_norms) write_gradnorm_row(os, g);
  }
  {
    auto os = open_out(dir / "head_stats.csv");
    os << "step,head,pos_count_unique,pos_count_effective,neg_count,pos_acc,neg_acc,mean_fg_score,cls_loss,reg_loss\n";
    for (std::size_t t = 0; t < r.train.head_stats.size(); ++t)
      for (std::size_t h = 0; h < r.train.head_stats[t].size(); ++h) {
        const auto& s = r.train.head_stats[t][h];
        os << fmt::format("{},{},{},{},{},{},{},{:.9g},{:.9g},{:.9g}\n", t, h + 1, s.pos_count_unique,
                          s.pos_count_effective, s.neg_count, opt_cell(s.pos_acc), opt_cell(s.neg_acc),
                          s.mean_fg_score, s.cls_loss, s.reg_loss);
      }
  }
  {
    auto os = open_out(dir / "checkpoint.txt");
    save_checkpoint(os, r.train.model.params);
  }
  {
    auto os = open_out(dir / "scene_counts.csv");
    os << "scene_id,gt_count,positive_count\n";
    for (const auto& c : r.eval.scene_counts) os << fmt::format("{},{},{}\n", c.scene_id, c.gt_count, c.positive_count);
  }
  {
    auto os = open_out(dir / "scores.csv");
    const std::size_t k = r.eval.head_fg_scores.size();
    os << "proposal,scene_id";
    for (std::size_t h = 0; h < k; ++h) os << ",fg_score_h" << h + 1;
    if (r.eval.gaps) os << ",gap";
    os << '\n';
    for (std::size_t i = 0; i < r.eval.proposal_scene.size(); ++i) {
      os << i << ',' << r.eval.proposal_scene[i];
      for (std::size_t h = 0; h < k; ++h) os << fmt::format(",{:.9g}", r.eval.head_fg_scores[h][i]);
      if (r.eval.gaps) os << fmt::format(",{:.9g}", r.eval.gaps->gaps[i]);
      os << '\n';
    }
  }
  write_eval_artifacts(dir, config, r.eval);

  json m;
  m["config_hash"] = fmt::format("{:016x}", config.hash());
  m["seed"] = config.seed;
  m["mode"] = to_string(config.mode);
  m["sampling"] = to_string(config.sampling);
  m["heads"] = r.train.model.num_heads();
  m["steps"] = config.train.total_steps;
  m["timestamp"] = utc_timestamp();
  auto os = open_out(dir / "manifest.json");
  os << m.dump(2) << '\n';
  return r;
}

EvalResult evaluate_checkpoint(const ExperimentConfig& config) {
  config.validate();
  const fs::path dir = config.out_dir;
  std::ifstream in(dir / "checkpoint.txt");
  if (!in) throw std::runtime_error("no checkpoint in " + dir.string());
  PrmModel<double> model;
  model.params = load_checkpoint(in);
  model.heads = config.head_specs();
  model.validate();
  auto data = load_cached_dataset(dir, config);
  if (!data) data = build_dataset(config);
  EvalResult r = evaluate_model(model, data->eval, config.eval);
  write_eval_artifacts(dir, config, r);
  return r;
}

// ---------------------------------------------------------------------------
// sweeps

SweepAxis parse_sweep_axis(const std::string& text) {
  if (text == "lambda0") return SweepAxis::lambda0;
  if (text == "ratio-pair") return SweepAxis::ratio_pair;
  if (text == "sampling-mode") return SweepAxis::sampling_mode;
  throw std::invalid_argument("axis must be lambda0, ratio-pair or sampling-mode; got '" + text + "'");
}

std::string to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::lambda0: return "lambda0";
    case SweepAxis::ratio_pair: return "ratio-pair";
    case SweepAxis::sampling_mode: return "sampling-mode";
  }
  return "lambda0";
}

ExperimentConfig apply_sweep_value(const ExperimentConfig& base, SweepAxis axis, const std::string& value) {
  ExperimentConfig c = base;
  switch (axis) {
    case SweepAxis::lambda0: {
      std::size_t used = 0;
      c.lambda0 = std::stod(value, &used);
      if (used != value.size()) throw std::invalid_argument("bad lambda0 '" + value + "'");
      if (c.mode == ExperimentMode::baseline) c.mode = ExperimentMode::rga;
      if (c.mode == ExperimentMode::prm) c.mode = ExperimentMode::rga_prm;
      break;
    }
    case SweepAxis::ratio_pair: {
      c.prm_ratios.clear();
      std::istringstream is(value);
      std::string part;
      while (std::getline(is, part, '/')) c.prm_ratios.push_back(parse_ratio(part));
      if (c.prm_ratios.empty()) throw std::invalid_argument("empty ratio pair");
      if (c.mode == ExperimentMode::baseline) c.mode = ExperimentMode::prm;
      if (c.mode == ExperimentMode::rga) c.mode = ExperimentMode::rga_prm;
      break;
    }
    case SweepAxis::sampling_mode: c.sampling = parse_sampling_mode(value); break;
  }
  c.validate();
  return c;
}

std::vector<SweepCell> sweep(const ExperimentConfig& base, SweepAxis axis, const std::vector<std::string>& values,
                             const std::vector<std::uint64_t>& seeds, std::ostream* log) {
  if (values.empty()) throw std::invalid_argument("sweep needs at least one value");
  if (seeds.empty()) throw std::invalid_argument("sweep needs at least one seed");
  std::vector<SweepCell> cells;
  for (const std::string& value : values) {
    SweepCell cell;
    cell.value = value;
    std::vector<double> ap_mean, ap50, ap75, b13, b8;
    std::vector<std::vector<double>> heads;
    std::string dir_name = value;
    std::replace_if(dir_name.begin(), dir_name.end(), [](char ch) { return ch == '/' || ch == ':'; }, '-');
    for (std::uint64_t seed : seeds) {
      try {
        ExperimentConfig c = apply_sweep_value(base, axis, value);
        c.seed = seed;
        c.out_dir = (fs::path(base.out_dir) / fmt::format("{}_{}", to_string(axis), dir_name) /
                     fmt::format("seed_{}", seed))
                        .string();
        const RunResult r = run_experiment(c);
        ap_mean.push_back(r.eval.ensemble.ap_mean);
        ap50.push_back(r.eval.ensemble.ap50);
        ap75.push_back(r.eval.ensemble.ap75);
        if (auto v = r.eval.ensemble.bucket_ap("1_3")) b13.push_back(*v);
        if (auto v = r.eval.ensemble.bucket_ap("8_inf")) b8.push_back(*v);
        if (heads.size() < r.eval.per_head.size()) heads.resize(r.eval.per_head.size());
        for (std::size_t h = 0; h < r.eval.per_head.size(); ++h) heads[h].push_back(r.eval.per_head[h].ap_mean);
        ++cell.seeds_ok;
        if (log) *log << fmt::format("{}={} seed {}: ap {:.4f}\n", to_string(axis), value, seed, r.eval.ensemble.ap_mean);
      } catch (const std::exception& e) {
        cell.errors.push_back(fmt::format("seed {}: {}", seed, e.what()));
        if (log) *log << fmt::format("{}={} seed {}: FAILED {}\n", to_string(axis), value, seed, e.what());
      }
    }
    auto med = [](const std::vector<double>& v) -> std::optional<double> {
      if (v.empty()) return std::nullopt;
      return median(v);
    };
    cell.ap_mean = med(ap_mean);
    cell.ap50 = med(ap50);
    cell.ap75 = med(ap75);
    cell.ap_bucket_1_3 = med(b13);
    cell.ap_bucket_8_inf = med(b8);
    for (const auto& h : heads) cell.head_ap.push_back(med(h));
    cells.push_back(std::move(cell));
  }
  fs::create_directories(base.out_dir);
  auto os = open_out(fs::path(base.out_dir) / "sweep.csv");
  write_sweep_csv(os, axis, cells);
  return cells;
}

void write_sweep_csv(std::ostream& os, SweepAxis axis, std::span<const SweepCell> cells) {
  std::size_t max_heads = 0;
  for (const auto& c : cells) max_heads = std::max(max_heads, c.head_ap.size());
  os << to_string(axis) << ",status,seeds_ok,ap_mean,ap50,ap75,ap_bucket_1_3,ap_bucket_8_inf";
  for (std::size_t h = 0; h < max_heads; ++h) os << ",ap_h" << h + 1;
  os << '\n';
  for (const auto& c : cells) {
    const char* status = c.errors.empty() ? "ok" : (c.seeds_ok ? "partial" : "failed");
    os << fmt::format("{},{},{},{},{},{},{},{}", c.value, status, c.seeds_ok, opt_cell(c.ap_mean), opt_cell(c.ap50),
                      opt_cell(c.ap75), opt_cell(c.ap_bucket_1_3), opt_cell(c.ap_bucket_8_inf));
    for (std::size_t h = 0; h < max_heads; ++h) os << ',' << (h < c.head_ap.size() ? opt_cell(c.head_ap[h]) : "");
    os << '\n';
  }
}

}  // namespace rcnnlab
