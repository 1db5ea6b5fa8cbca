#include "run/commands.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "common/error.hpp"
#include "metrics/metrics.hpp"
#include "planner/planner.hpp"
#include "run/train.hpp"
#include "synthworlds/dataset.hpp"

namespace tap::run {

namespace fs = std::filesystem;
using ad::Tensor;

namespace {

constexpr std::uint64_t kLatentSalt = 0x4c41544e;  // "LATN"
constexpr std::uint64_t kPlanSalt = 0x504c4550;    // "PLEP"

std::function<void(const std::string&)> g_progress;

void progress(const std::string& line) {
  if (g_progress) g_progress(line);
}

class Args {
 public:
  Args(const json& j, const char* command, std::set<std::string> allowed) : j_(j), command_(command) {
    if (j_.is_null()) j_ = json::object();
    require(j_.is_object(), ErrorKind::Config, std::string(command) + ": arguments must be a JSON object");
    for (auto it = j_.begin(); it != j_.end(); ++it)
      require(allowed.count(it.key()) > 0, ErrorKind::Config,
              std::string(command) + ": unknown argument '" + it.key() + "'");
  }

  bool has(const char* k) const { return j_.contains(k) && !j_.at(k).is_null(); }

  std::string str(const char* k, std::optional<std::string> def = std::nullopt) const {
    if (!has(k)) {
      require(def.has_value(), ErrorKind::Config, std::string(command_) + ": --" + k + " is required");
      return *def;
    }
    require(j_.at(k).is_string(), ErrorKind::Config, std::string(command_) + ": " + k + " must be a string");
    return j_.at(k).get<std::string>();
  }

  std::uint64_t uint(const char* k, std::optional<std::uint64_t> def = std::nullopt) const {
    if (!has(k)) {
      require(def.has_value(), ErrorKind::Config, std::string(command_) + ": --" + k + " is required");
      return *def;
    }
    const auto& v = j_.at(k);
    require(v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0), ErrorKind::Config,
            std::string(command_) + ": " + k + " must be a non-negative integer");
    return v.get<std::uint64_t>();
  }

  double num(const char* k, double def) const {
    if (!has(k)) return def;
    require(j_.at(k).is_number(), ErrorKind::Config, std::string(command_) + ": " + k + " must be a number");
    return j_.at(k).get<double>();
  }

  const json& raw(const char* k) const { return j_.at(k); }

 private:
  json j_;
  const char* command_;
};

std::string make_out_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec && fs::is_directory(dir), ErrorKind::Io, "cannot create output directory " + dir);
  return dir;
}

worlds::Dataset load_dataset(const std::string& path) {
  require(fs::exists(path), ErrorKind::Config, "dataset " + path + " does not exist");
  return worlds::read_dataset(path);
}

std::unique_ptr<Model> load_checkpoint(const std::string& path) {
  require(fs::exists(path), ErrorKind::Config, "checkpoint " + path + " does not exist");
  return load_model(path);
}

std::vector<std::size_t> select_episodes(const worlds::Dataset& d, const std::string& split, std::uint64_t limit) {
  std::vector<std::size_t> ids;
  if (split == "test" || split == "train") {
    ids = worlds::split_indices(d, split == "test");
  } else {
    require(split == "all", ErrorKind::Config, "split must be test, train or all");
    for (std::size_t i = 0; i < d.episodes.size(); ++i) ids.push_back(i);
  }
  if (limit > 0 && ids.size() > limit) ids.resize(limit);
  return ids;
}

// Latent draws for sample indices [0, count) of one episode; the same (seed, episode, index)
// always yields the same z, so eval sample 0 and recursion level 0 agree.
Tensor latent_noise(const Model& m, std::uint64_t seed, std::size_t episode, std::size_t first, std::size_t count) {
  std::vector<double> v;
  v.reserve(count * m.cfg.latent_dim);
  for (std::size_t i = first; i < first + count; ++i) {
    Rng rng(derive_seed(derive_seed(seed, episode, kLatentSalt), i));
    for (std::size_t l = 0; l < m.cfg.latent_dim; ++l) v.push_back(normal01(rng));
  }
  return Tensor::from({count, m.cfg.latent_dim}, std::move(v));
}

std::vector<Tensor> repeat_contexts(const Batch& b, std::size_t count) {
  std::vector<Tensor> out;
  for (const auto& c : b.contexts) {
    std::vector<double> v;
    v.reserve(c.numel() * count);
    for (std::size_t i = 0; i < count; ++i) v.insert(v.end(), c.data().begin(), c.data().end());
    auto shape = c.shape();
    shape[0] = count;
    out.push_back(Tensor::from(shape, std::move(v)));
  }
  return out;
}

Tensor episode_targets(const Batch& b) { return sample_frame(b.targets, 0); }

void require_bidirectional(const Model& m, const char* what) {
  require(m.cfg.layout() == Mode::Bidirectional, ErrorKind::Config,
          std::string(what) + " needs a bidirectional checkpoint (got mode " + mode_name(m.cfg.mode) + ")");
}

std::vector<metrics::Cell> objects_at(const worlds::Episode& e, std::size_t t) {
  return {e.positions[t].begin() + 1, e.positions[t].end()};
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  require(f.good(), ErrorKind::Io, "cannot write " + path);
  f << text;
  f.flush();
  require(f.good(), ErrorKind::Io, "write failed for " + path);
}

// Per-object subgoal cells from a warp-only bidirectional prediction.
std::vector<metrics::Cell> predicted_subgoal(const Model& m, const worlds::Dataset& d, std::size_t e, std::uint64_t seed) {
  ad::NoGrad ng;
  Batch b = make_batch(m, d, {e});
  std::optional<Tensor> z;
  if (m.cfg.use_vae()) z = latent_noise(m, seed, e, 0, 1);
  auto out = m.g(b.contexts, z);
  const auto& ep = d.episodes[e];
  std::vector<std::vector<metrics::Cell>> pos;
  for (std::size_t c : m.contexts) pos.push_back(objects_at(ep, c));
  std::vector<metrics::Cell> cells;
  for (const auto& map : metrics::subgoal_locations(out, 0, pos)) cells.push_back(map.argmax());
  return cells;
}

}  // namespace

void set_progress_sink(std::function<void(const std::string&)> sink) { g_progress = std::move(sink); }

json cmd_gen(const json& j) {
  Args a(j, "gen", {"world", "n", "seed", "objects", "out"});
  const auto world = worlds::parse_world(a.str("world"));
  const auto objects = a.uint("objects", 2);
  require(world == worlds::WorldId::GridPush || !a.has("objects"), ErrorKind::Config,
          "gen: --objects only applies to gridpush");
  require(objects == 2 || objects == 3, ErrorKind::Config, "gen: --objects must be 2 or 3");
  const auto out = a.str("out");
  const auto d = worlds::generate(world, a.uint("seed", 0), a.uint("n"), objects);
  if (fs::path(out).has_parent_path()) make_out_dir(fs::path(out).parent_path().string());
  worlds::write_dataset(d, out);
  return {{"path", out},       {"world", worlds::world_name(d.world)}, {"episodes", d.episodes.size()},
          {"frames", d.frames}, {"height", d.height},                   {"width", d.width},
          {"channels", d.channels}, {"seed", d.seed}};
}

json cmd_train(const json& j) {
  Args a(j, "train", {"config", "overrides"});
  const RunConfig cfg = merge_config(a.has("config") ? a.raw("config") : json::object(),
                                     a.has("overrides") ? a.raw("overrides") : json::object());
  auto r = train(cfg, [](const EpochRow& row) {
    char line[256];
    std::snprintf(line, sizeof line, "epoch %zu loss %.5f l1 %.5f test_min_l1_err %.5f match %.2f", row.epoch,
                  row.train.at("total"), row.train.at("l1"), row.test_min_l1_err, row.test_mean_match_step);
    progress(line);
  });
  json summary{{"checkpoint", r.checkpoint_path}, {"log", r.log_path}, {"epochs", r.epochs.size()},
               {"config", to_json(cfg)}};
  if (!r.epochs.empty()) {
    summary["test_min_l1_err"] = r.epochs.back().test_min_l1_err;
    summary["test_mean_match_step"] = r.epochs.back().test_mean_match_step;
    summary["train_loss"] = r.epochs.back().train.at("total");
  }
  return summary;
}

json cmd_eval(const json& j) {
  Args a(j, "eval", {"checkpoint", "dataset", "out_dir", "method", "samples", "seed", "split", "limit"});
  auto m = load_checkpoint(a.str("checkpoint"));
  const auto d = load_dataset(a.str("dataset"));
  check_compatible(*m, d);
  const auto method = a.str("method", loss_name(m->cfg.loss));
  const auto samples = a.uint("samples", 1);
  require(samples >= 1, ErrorKind::Config, "eval: --samples must be >= 1");
  require(samples == 1 || m->cfg.use_vae(), ErrorKind::Config, "eval: --samples > 1 needs a VAE checkpoint");
  const auto seed = a.uint("seed", 0);
  const auto ids = select_episodes(d, a.str("split", "test"), a.uint("limit", 0));
  const auto dir = make_out_dir(a.str("out_dir"));

  ad::NoGrad ng;
  std::vector<metrics::EvalRecord> rows;
  std::vector<double> prefix_sum(samples, 0.0);
  for (std::size_t e : ids) {
    Batch b = make_batch(*m, d, {e});
    const Tensor targets = episode_targets(b);
    std::optional<Tensor> z;
    if (m->cfg.use_vae()) z = latent_noise(*m, seed, e, 0, samples);
    const auto out = m->g(samples == 1 ? b.contexts : repeat_contexts(b, samples), z);
    auto best = metrics::best_of_n_eval([&](std::size_t i) { return sample_frame(out.composited, i); }, targets,
                                        m->targets, samples);
    for (std::size_t i = 0; i < samples; ++i) prefix_sum[i] += best.prefix_best[i];
    rows.push_back({e, method, best.min_l1_err, best.match_step});
  }
  metrics::write_eval_csv((fs::path(dir) / "eval.csv").string(), rows);

  double err = 0, match = 0;
  for (const auto& r : rows) {
    err += r.min_l1_err;
    match += static_cast<double>(r.match_step);
  }
  const double n = std::max<double>(1.0, static_cast<double>(rows.size()));
  json prefix = json::array();
  for (double s : prefix_sum) prefix.push_back(s / n);
  return {{"csv", (fs::path(dir) / "eval.csv").string()},
          {"episodes", rows.size()},
          {"method", method},
          {"samples", samples},
          {"mean_min_l1_err", err / n},
          {"mean_match_step", match / n},
          {"mean_prefix_best", prefix}};
}

json cmd_bottleneck(const json& j) {
  Args a(j, "bottleneck", {"checkpoint", "dataset", "out_dir", "method", "seed", "split", "limit"});
  auto m = load_checkpoint(a.str("checkpoint"));
  require(!m->cfg.use_new_pixels, ErrorKind::Config,
          "bottleneck: checkpoint synthesises new pixels; the location metric needs a warp-only model");
  require_bidirectional(*m, "bottleneck");
  const auto d = load_dataset(a.str("dataset"));
  check_compatible(*m, d);
  require(d.world == worlds::WorldId::GridPush && !d.episodes.empty() && d.episodes.front().entity_count() == 3,
          ErrorKind::Data, "bottleneck: needs a 2-object gridpush dataset");
  const auto method = a.str("method", loss_name(m->cfg.loss));
  const auto seed = a.uint("seed", 0);
  const auto ids = select_episodes(d, a.str("split", "test"), a.uint("limit", 0));
  require(!ids.empty(), ErrorKind::Data, "bottleneck: no episodes selected");
  const auto dir = make_out_dir(a.str("out_dir"));

  std::vector<double> scores;
  std::string score_csv = "episode,method,score\n";
  for (std::size_t e : ids) {
    ad::NoGrad ng;
    Batch b = make_batch(*m, d, {e});
    std::optional<Tensor> z;
    if (m->cfg.use_vae()) z = latent_noise(*m, seed, e, 0, 1);
    const auto out = m->g(b.contexts, z);
    const auto& ep = d.episodes[e];
    std::vector<std::vector<metrics::Cell>> pos;
    for (std::size_t c : m->contexts) pos.push_back(objects_at(ep, c));
    const auto maps = metrics::subgoal_locations(out, 0, pos);
    const double s = metrics::bottleneck_score(maps, objects_at(ep, 0), objects_at(ep, d.frames - 1));
    scores.push_back(s);
    score_csv += std::to_string(e) + "," + method + "," + metrics::format_double(s) + "\n";
  }
  write_text((fs::path(dir) / "bottleneck_scores.csv").string(), score_csv);
  std::vector<metrics::CurveRow> rows;
  double at2 = 0;
  for (const auto& p : metrics::bottleneck_frequency_curve(scores, metrics::default_thresholds())) {
    rows.push_back({p.threshold, p.frequency, method});
    if (p.threshold == 2.0) at2 = p.frequency;
  }
  metrics::write_curve_csv((fs::path(dir) / "bottleneck_curve.csv").string(), rows);
  double mean = 0;
  for (double s : scores) mean += s;
  return {{"csv", (fs::path(dir) / "bottleneck_curve.csv").string()},
          {"episodes", scores.size()},
          {"method", method},
          {"frequency_at_2px", at2},
          {"mean_score", mean / static_cast<double>(scores.size())}};
}

json cmd_plan(const json& j) {
  Args a(j, "plan", {"checkpoint", "dataset", "out_dir", "method", "seed", "split", "limit", "horizon", "samples",
                     "iters", "elite_frac", "budget"});
  const auto method = a.str("method");
  const auto d = load_dataset(a.str("dataset"));
  require(d.world == worlds::WorldId::GridPush, ErrorKind::Data, "plan: needs a gridpush dataset");
  std::unique_ptr<Model> m;
  if (method == "direct") {
    require(!a.has("checkpoint"), ErrorKind::Config, "plan: --method direct takes no checkpoint");
  } else {
    m = load_checkpoint(a.str("checkpoint"));
    require(!m->cfg.use_new_pixels, ErrorKind::Config, "plan: subgoals need a warp-only checkpoint");
    require_bidirectional(*m, "plan");
    check_compatible(*m, d);
  }
  const auto seed = a.uint("seed", 0);
  const auto ids = select_episodes(d, a.str("split", "test"), a.uint("limit", 0));
  const auto dir = make_out_dir(a.str("out_dir"));

  planner::PlanConfig base;
  base.horizon = static_cast<int>(a.uint("horizon", 15));
  base.n_samples = static_cast<int>(a.uint("samples", 200));
  base.cem_iters = static_cast<int>(a.uint("iters", 3));
  base.elite_frac = a.num("elite_frac", 0.1);
  const std::size_t objects = d.episodes.empty() ? 2 : d.episodes.front().entity_count() - 1;
  base.budget = static_cast<int>(a.uint("budget", static_cast<std::uint64_t>(planner::PlanConfig::default_budget(objects))));
  base.validate();

  std::string csv = "episode,method,final_mean_distance,steps_used\n";
  double total = 0;
  for (std::size_t e : ids) {
    const auto& ep = d.episodes[e];
    planner::PushState start{static_cast<int>(d.width), ep.positions[0][0], objects_at(ep, 0)};
    const auto goal = objects_at(ep, d.frames - 1);
    std::optional<std::vector<metrics::Cell>> sub;
    if (m) sub = predicted_subgoal(*m, d, e, seed);
    auto cfg = base;
    cfg.seed = derive_seed(seed, e, kPlanSalt);
    const auto r = planner::hierarchical_episode(start, goal, sub, cfg);
    total += r.final_mean_distance;
    csv += std::to_string(e) + "," + method + "," + metrics::format_double(r.final_mean_distance) + "," +
           std::to_string(r.steps_used) + "\n";
  }
  const auto path = (fs::path(dir) / "plan_results.csv").string();
  write_text(path, csv);
  return {{"csv", path},
          {"episodes", ids.size()},
          {"method", method},
          {"mean_final_distance", ids.empty() ? 0.0 : total / static_cast<double>(ids.size())}};
}

json cmd_recursive(const json& j) {
  Args a(j, "recursive", {"checkpoint", "dataset", "out_dir", "seed", "split", "limit", "max_depth", "side"});
  auto m = load_checkpoint(a.str("checkpoint"));
  require_bidirectional(*m, "recursive");
  const auto d = load_dataset(a.str("dataset"));
  check_compatible(*m, d);
  const auto side_name = a.str("side", "before");
  require(side_name == "before" || side_name == "after", ErrorKind::Config, "recursive: --side is before or after");
  const auto side = side_name == "before" ? loss::RecursionSide::Before : loss::RecursionSide::After;
  const auto max_depth = a.uint("max_depth", 3);
  require(max_depth >= 1, ErrorKind::Config, "recursive: --max_depth must be >= 1");
  const auto seed = a.uint("seed", 0);
  const auto ids = select_episodes(d, a.str("split", "test"), a.uint("limit", 5));
  const auto dir = make_out_dir(a.str("out_dir"));
  const std::size_t fn = d.frame_numel();

  ad::NoGrad ng;
  std::string csv = "episode,level,match_index,min_l1_err,remaining_targets\n";
  json episodes = json::array();
  for (std::size_t e : ids) {
    Batch b = make_batch(*m, d, {e});
    std::vector<Tensor> ctx = b.contexts;
    loss::TargetSet set = m->targets;
    json matches = json::array();
    std::size_t level = 0;
    for (; level < max_depth && !set.empty(); ++level) {
      std::optional<Tensor> z;
      if (m->cfg.use_vae()) z = latent_noise(*m, seed, e, level, 1);
      const auto out = m->g(ctx, z);
      const Tensor pred = sample_frame(out.composited, 0);
      std::vector<double> tv;
      for (std::size_t t : set.indices) {
        const double* f = d.episodes[e].frames.data() + t * fn;
        tv.insert(tv.end(), f, f + fn);
      }
      const Tensor targets = Tensor::from({set.size(), d.channels, d.height, d.width}, std::move(tv));
      const auto rec = metrics::min_l1_and_match(pred, targets, set);
      worlds::write_image((fs::path(dir) / ("ep" + std::to_string(e) + "_r" + std::to_string(level) + ".ppm")).string(),
                          pred.data().data(), d.channels, d.height, d.width);
      set = loss::recursive_target_update(set, rec.match_step, side);
      csv += std::to_string(e) + "," + std::to_string(level) + "," + std::to_string(rec.match_step) + "," +
             metrics::format_double(rec.min_l1_err) + "," + std::to_string(set.size()) + "\n";
      matches.push_back(rec.match_step);
      // Goal-side recursion replaces the goal context with the prediction; start-side replaces the start.
      ctx[side == loss::RecursionSide::Before ? 1 : 0] = out.composited;
    }
    progress("episode " + std::to_string(e) + ": " + std::to_string(level) + " level(s), " +
             (set.empty() ? "target set exhausted" : "depth bound reached"));
    episodes.push_back({{"episode", e}, {"levels", level}, {"matches", matches}, {"exhausted", set.empty()}});
  }
  const auto path = (fs::path(dir) / "recursive.csv").string();
  write_text(path, csv);
  return {{"csv", path}, {"episodes", episodes}};
}

json cmd_dump_frames(const json& j) {
  Args a(j, "dump-frames", {"dataset", "episode", "out_dir"});
  const auto d = load_dataset(a.str("dataset"));
  const auto e = a.uint("episode", 0);
  require(e < d.episodes.size(), ErrorKind::Config,
          "dump-frames: episode " + std::to_string(e) + " out of range (" + std::to_string(d.episodes.size()) + ")");
  const auto dir = make_out_dir(a.str("out_dir"));
  const char* ext = d.channels == 3 ? ".ppm" : ".pgm";
  json files = json::array();
  for (std::size_t t = 0; t < d.frames; ++t) {
    char name[64];
    std::snprintf(name, sizeof name, "ep%zu_t%02zu%s", static_cast<std::size_t>(e), t, ext);
    const auto path = (fs::path(dir) / name).string();
    worlds::write_image(path, d.episodes[e].frames.data() + t * d.frame_numel(), d.channels, d.height, d.width);
    files.push_back(path);
  }
  return {{"files", files}, {"bottlenecks", d.episodes[e].bottlenecks}};
}

json run_command(const std::string& name, const json& args) {
  if (name == "gen") return cmd_gen(args);
  if (name == "train") return cmd_train(args);
  if (name == "eval") return cmd_eval(args);
  if (name == "bottleneck") return cmd_bottleneck(args);
  if (name == "plan") return cmd_plan(args);
  if (name == "recursive") return cmd_recursive(args);
  if (name == "dump-frames") return cmd_dump_frames(args);
  fail(ErrorKind::Config, "unknown command '" + name + "'");
}

}  // namespace tap::run
