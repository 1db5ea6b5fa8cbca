// Command-line front end. Talks to the library only through the C API in tap/tap.h.
#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "tap/tap.h"

namespace {

using nlohmann::json;

// Collects the options a subcommand actually received into a JSON argument object.
class ArgMap {
 public:
  explicit ArgMap(CLI::App* app) : app_(app) {}

  void str(const std::string& flag, const std::string& key, const std::string& help) {
    auto v = std::make_shared<std::string>();
    auto* o = app_->add_option(flag, *v, help);
    fill_.push_back([o, v, key](json& j) {
      if (o->count()) j[key] = *v;
    });
  }
  void uint(const std::string& flag, const std::string& key, const std::string& help) {
    auto v = std::make_shared<std::uint64_t>();
    auto* o = app_->add_option(flag, *v, help);
    fill_.push_back([o, v, key](json& j) {
      if (o->count()) j[key] = *v;
    });
  }
  void num(const std::string& flag, const std::string& key, const std::string& help) {
    auto v = std::make_shared<double>();
    auto* o = app_->add_option(flag, *v, help);
    fill_.push_back([o, v, key](json& j) {
      if (o->count()) j[key] = *v;
    });
  }
  void list(const std::string& flag, const std::string& key, const std::string& help) {
    auto v = std::make_shared<std::vector<std::uint64_t>>();
    auto* o = app_->add_option(flag, *v, help)->delimiter(',');
    fill_.push_back([o, v, key](json& j) {
      if (o->count()) j[key] = *v;
    });
  }
  // Boolean key set to `value` when the flag is present.
  void flag(const std::string& flag, const std::string& key, bool value, const std::string& help) {
    auto* o = app_->add_flag(flag, help);
    fill_.push_back([o, key, value](json& j) {
      if (o->count()) j[key] = value;
    });
  }

  json collect() const {
    json j = json::object();
    for (const auto& f : fill_) f(j);
    return j;
  }

 private:
  CLI::App* app_;
  std::vector<std::function<void(json&)>> fill_;
};

void on_progress(const char* line, void*) { std::fprintf(stderr, "%s\n", line); }

int report(tap_status s, char* summary) {
  if (s != TAP_OK) {
    std::fprintf(stderr, "error: %s\n", tap_last_error());
    return static_cast<int>(s);
  }
  if (summary) {
    std::cout << json::parse(summary).dump(2) << '\n';
    tap_string_free(summary);
  }
  return 0;
}

int run(const std::string& command, const json& args) {
  char* summary = nullptr;
  const tap_status s = tap_run(command.c_str(), args.dump().c_str(), &summary);
  return report(s, summary);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Time-agnostic frame prediction: data generation, training, evaluation and planning"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(tap_version()));

  auto* gen = app.add_subcommand("gen", "Generate a synthetic episode dataset");
  ArgMap gen_args(gen);
  gen_args.str("--world", "world", "gridpick, pickplace, gridpush or maze");
  gen_args.uint("--n", "n", "number of episodes");
  gen_args.uint("--seed", "seed", "generator seed");
  gen_args.uint("--objects", "objects", "objects per gridpush episode (2 or 3)");
  gen_args.str("--out", "out", "output dataset file");

  auto* train = app.add_subcommand("train", "Train a predictor");
  std::string config_path;
  train->add_option("--config", config_path, "JSON run configuration; flags override its keys");
  ArgMap tr(train);
  tr.str("--world", "world", "world the dataset was generated for");
  tr.str("--dataset", "dataset", "dataset file");
  tr.str("--out-dir", "out_dir", "directory for checkpoint.bin, train_log.csv, config.json");
  tr.str("--mode", "mode", "forward, bidirectional or recursive");
  tr.str("--recursive-base", "recursive_base", "layout trained in recursive mode");
  tr.str("--loss", "loss", "fix, min, genmin, genmin_vae or genmin_no_gan");
  tr.str("--preference", "preference", "auto, uniform, linear or bell");
  tr.num("--beta", "beta", "linear preference offset");
  tr.num("--sigma", "sigma", "bell preference width (<= 0: |T|/4)");
  tr.num("--fix-fraction", "fix_fraction", "target fraction for loss=fix");
  tr.num("--lambda-kl", "lambda_kl", "KL coefficient");
  tr.num("--lambda-gan", "lambda_gan", "adversarial coefficient");
  tr.num("--label-alpha", "label_alpha", "discriminator label smoothing slope");
  tr.uint("--epochs", "epochs", "training epochs");
  tr.uint("--batch-size", "batch_size", "batch size");
  tr.num("--lr", "lr", "Adam learning rate");
  tr.uint("--seed", "seed", "initialisation and shuffling seed");
  tr.uint("--max-train-episodes", "max_train_episodes", "cap on training episodes (0 = all)");
  tr.uint("--pretrain-epochs", "pretrain_epochs", "decoder pretraining epochs");
  tr.flag("--warp-only", "use_new_pixels", false, "disable new-pixel synthesis");
  tr.uint("--code-dim", "code_dim", "code size");
  tr.uint("--latent-dim", "latent_dim", "VAE latent size");
  tr.list("--widths", "widths", "encoder widths, comma separated");
  tr.list("--disc-widths", "disc_widths", "discriminator/inference trunk widths");
  tr.num("--flow-range", "flow_range", "maximum flow magnitude in pixels");

  auto* eval = app.add_subcommand("eval", "Min-over-time error on held-out episodes");
  ArgMap ev(eval);
  ev.str("--checkpoint", "checkpoint", "trained checkpoint");
  ev.str("--dataset", "dataset", "dataset file");
  ev.str("--out-dir", "out_dir", "directory for eval.csv");
  ev.str("--method", "method", "label written to the CSV");
  ev.uint("--samples", "samples", "best-of-N latent samples (VAE checkpoints)");
  ev.uint("--seed", "seed", "latent sampling seed");
  ev.str("--split", "split", "test, train or all");
  ev.uint("--limit", "limit", "maximum episodes (0 = all)");

  auto* bott = app.add_subcommand("bottleneck", "Bottleneck frequency curve for a warp-only model");
  ArgMap bo(bott);
  bo.str("--checkpoint", "checkpoint", "warp-only bidirectional checkpoint");
  bo.str("--dataset", "dataset", "2-object gridpush dataset");
  bo.str("--out-dir", "out_dir", "directory for bottleneck_curve.csv");
  bo.str("--method", "method", "label written to the CSV");
  bo.uint("--seed", "seed", "latent sampling seed");
  bo.str("--split", "split", "test, train or all");
  bo.uint("--limit", "limit", "maximum episodes (0 = all)");

  auto* plan = app.add_subcommand("plan", "Hierarchical CEM planning on gridpush");
  ArgMap pl(plan);
  pl.str("--dataset", "dataset", "gridpush dataset");
  pl.str("--method", "method", "direct, or a label for the checkpoint's subgoals");
  pl.str("--checkpoint", "checkpoint", "warp-only bidirectional checkpoint (not for direct)");
  pl.str("--out-dir", "out_dir", "directory for plan_results.csv");
  pl.uint("--seed", "seed", "planner seed");
  pl.str("--split", "split", "test, train or all");
  pl.uint("--limit", "limit", "maximum episodes (0 = all)");
  pl.uint("--horizon", "horizon", "planning horizon");
  pl.uint("--samples", "samples", "CEM samples per iteration");
  pl.uint("--iters", "iters", "CEM iterations");
  pl.num("--elite-frac", "elite_frac", "elite fraction");
  pl.uint("--budget", "budget", "step budget (default 40 or 75 by object count)");

  auto* rec = app.add_subcommand("recursive", "Recursive subgoal prediction with image dumps");
  ArgMap re(rec);
  re.str("--checkpoint", "checkpoint", "bidirectional checkpoint");
  re.str("--dataset", "dataset", "dataset file");
  re.str("--out-dir", "out_dir", "directory for images and recursive.csv");
  re.uint("--seed", "seed", "latent sampling seed");
  re.str("--split", "split", "test, train or all");
  re.uint("--limit", "limit", "maximum episodes (default 5)");
  re.uint("--max-depth", "max_depth", "recursion depth bound");
  re.str("--side", "side", "before (replace the goal) or after (replace the start)");

  auto* dump = app.add_subcommand("dump-frames", "Write an episode's frames as PPM/PGM images");
  ArgMap du(dump);
  du.str("--dataset", "dataset", "dataset file");
  du.uint("--episode", "episode", "episode index");
  du.str("--out-dir", "out_dir", "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : TAP_ERR_CONFIG;
  }

  tap_set_progress(on_progress, nullptr);
  if (gen->parsed()) return run("gen", gen_args.collect());
  if (train->parsed()) {
    json cfg = json::object();
    if (!config_path.empty()) {
      std::ifstream f(config_path);
      if (!f) {
        std::fprintf(stderr, "error: cannot read config %s\n", config_path.c_str());
        return TAP_ERR_CONFIG;
      }
      std::stringstream ss;
      ss << f.rdbuf();
      try {
        cfg = json::parse(ss.str());
      } catch (const json::parse_error& e) {
        std::fprintf(stderr, "error: %s: %s\n", config_path.c_str(), e.what());
        return TAP_ERR_CONFIG;
      }
    }
    return run("train", json{{"config", cfg}, {"overrides", tr.collect()}});
  }
  if (eval->parsed()) return run("eval", ev.collect());
  if (bott->parsed()) return run("bottleneck", bo.collect());
  if (plan->parsed()) return run("plan", pl.collect());
  if (rec->parsed()) return run("recursive", re.collect());
  if (dump->parsed()) return run("dump-frames", du.collect());
  return TAP_ERR_CONFIG;
}
