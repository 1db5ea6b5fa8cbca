#include "run/config.hpp"

#include <algorithm>
#include <cmath>

#include "common/error.hpp"

namespace tap::run {

using nlohmann::json;

std::string mode_name(Mode m) {
  switch (m) {
    case Mode::Forward: return "forward";
    case Mode::Bidirectional: return "bidirectional";
    case Mode::Recursive: return "recursive";
  }
  return "?";
}

Mode parse_mode(const std::string& s) {
  if (s == "forward") return Mode::Forward;
  if (s == "bidirectional") return Mode::Bidirectional;
  if (s == "recursive") return Mode::Recursive;
  fail(ErrorKind::Config, "unknown mode '" + s + "' (forward, bidirectional, recursive)");
}

std::string loss_name(LossKind k) {
  switch (k) {
    case LossKind::Fix: return "fix";
    case LossKind::Min: return "min";
    case LossKind::GenMin: return "genmin";
    case LossKind::GenMinVae: return "genmin_vae";
    case LossKind::GenMinNoGan: return "genmin_no_gan";
  }
  return "?";
}

LossKind parse_loss(const std::string& s) {
  for (auto k : {LossKind::Fix, LossKind::Min, LossKind::GenMin, LossKind::GenMinVae, LossKind::GenMinNoGan})
    if (loss_name(k) == s) return k;
  fail(ErrorKind::Config, "unknown loss '" + s + "' (fix, min, genmin, genmin_vae, genmin_no_gan)");
}

void RunConfig::validate() const {
  require(recursive_base != Mode::Recursive, ErrorKind::Config,
          "recursive mode needs a forward or bidirectional base");
  require(preference == "auto" || preference == "uniform" || preference == "linear" || preference == "bell",
          ErrorKind::Config, "preference must be auto, uniform, linear or bell");
  require(loss != LossKind::Min || preference == "auto" || preference == "uniform", ErrorKind::Config,
          "loss=min uses uniform preference; use genmin for weighted selection");
  require(beta > 0, ErrorKind::Config, "beta must be positive");
  require(fix_fraction > 0 && fix_fraction <= 1, ErrorKind::Config, "fix_fraction must be in (0, 1]");
  require(lambda_kl >= 0 && lambda_gan >= 0, ErrorKind::Config, "loss coefficients must be >= 0");
  require(label_alpha >= 0, ErrorKind::Config, "label_alpha must be >= 0");
  require(batch_size >= 1, ErrorKind::Config, "batch_size must be >= 1");
  require(lr > 0 && std::isfinite(lr), ErrorKind::Config, "lr must be positive");
  require(pretrain_epochs == 0 || use_new_pixels, ErrorKind::Config,
          "decoder pretraining trains the new-pixel decoder; it needs use_new_pixels");
  predictor(16, 16, 3).validate();
  auto aux = predictor(16, 16, 3);
  aux.widths = disc_widths;
  aux.validate();
}

std::vector<std::size_t> RunConfig::context_indices(std::size_t frames) const {
  require(frames >= context_count() + 1, ErrorKind::Data, "episodes are too short for this mode");
  if (layout() == Mode::Forward) return {0};
  return {0, frames - 1};
}

loss::TargetSet RunConfig::targets(std::size_t frames) const {
  auto ctx = context_indices(frames);
  loss::TargetSet t;
  const std::size_t last = layout() == Mode::Forward ? frames - 1 : frames - 2;
  for (std::size_t i = 1; i <= last; ++i) t.indices.push_back(i);
  t.validate(ctx);
  return t;
}

std::size_t RunConfig::fix_target(std::size_t frames) const {
  auto t = targets(frames);
  const auto idx = static_cast<std::size_t>(std::llround(fix_fraction * static_cast<double>(frames - 1)));
  return std::clamp(idx, t.indices.front(), t.indices.back());
}

loss::TimePreference RunConfig::preference_for(std::size_t target_count) const {
  std::string kind = preference;
  if (kind == "auto") {
    if (loss == LossKind::Min || loss == LossKind::Fix)
      kind = "uniform";
    else
      kind = layout() == Mode::Forward ? "linear" : "bell";
  }
  return loss::make_time_preference(loss::parse_preference_kind(kind), target_count, beta, sigma);
}

models::PredictorConfig RunConfig::predictor(std::size_t height, std::size_t width, std::size_t channels) const {
  models::PredictorConfig p;
  p.height = height;
  p.width = width;
  p.channels = channels;
  p.context_count = context_count();
  p.code_dim = code_dim;
  p.latent_dim = latent_dim;
  p.widths = widths;
  p.decoder_kernel = decoder_kernel;
  p.use_vae = use_vae();
  p.use_new_pixels = use_new_pixels;
  p.flow_range = flow_range;
  return p;
}

json to_json(const RunConfig& c) {
  return json{{"world", c.world},
              {"dataset", c.dataset},
              {"out_dir", c.out_dir},
              {"mode", mode_name(c.mode)},
              {"recursive_base", mode_name(c.recursive_base)},
              {"loss", loss_name(c.loss)},
              {"preference", c.preference},
              {"beta", c.beta},
              {"sigma", c.sigma},
              {"fix_fraction", c.fix_fraction},
              {"lambda_kl", c.lambda_kl},
              {"lambda_gan", c.lambda_gan},
              {"label_alpha", c.label_alpha},
              {"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"lr", c.lr},
              {"seed", c.seed},
              {"max_train_episodes", c.max_train_episodes},
              {"pretrain_epochs", c.pretrain_epochs},
              {"use_new_pixels", c.use_new_pixels},
              {"code_dim", c.code_dim},
              {"latent_dim", c.latent_dim},
              {"widths", c.widths},
              {"disc_widths", c.disc_widths},
              {"decoder_kernel", c.decoder_kernel},
              {"flow_range", c.flow_range}};
}

namespace {

template <class T>
void read_into(const json& j, const char* key, T& out) {
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    fail(ErrorKind::Config, std::string("config key '") + key + "' has the wrong type");
  }
}

// nlohmann converts negative numbers to huge unsigned values; reject them up front.
void read_count(const json& j, const char* key, std::size_t& out) {
  const auto& v = j.at(key);
  require(v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0), ErrorKind::Config,
          std::string("config key '") + key + "' must be a non-negative integer");
  out = v.get<std::size_t>();
}

}  // namespace

RunConfig from_json(const json& j) {
  require(j.is_object(), ErrorKind::Config, "config must be a JSON object");
  const json known = to_json(RunConfig{});
  for (auto it = j.begin(); it != j.end(); ++it)
    require(known.contains(it.key()), ErrorKind::Config, "unknown config key '" + it.key() + "'");

  RunConfig c;
  auto str = [&](const char* k, std::string& out) {
    if (j.contains(k)) read_into(j, k, out);
  };
  auto num = [&](const char* k, double& out) {
    if (j.contains(k)) {
      require(j.at(k).is_number(), ErrorKind::Config, std::string("config key '") + k + "' must be a number");
      out = j.at(k).get<double>();
    }
  };
  auto count = [&](const char* k, std::size_t& out) {
    if (j.contains(k)) read_count(j, k, out);
  };
  str("world", c.world);
  str("dataset", c.dataset);
  str("out_dir", c.out_dir);
  if (j.contains("mode")) c.mode = parse_mode(j.at("mode").is_string() ? j.at("mode").get<std::string>() : "");
  if (j.contains("recursive_base"))
    c.recursive_base =
        parse_mode(j.at("recursive_base").is_string() ? j.at("recursive_base").get<std::string>() : "");
  if (j.contains("loss")) c.loss = parse_loss(j.at("loss").is_string() ? j.at("loss").get<std::string>() : "");
  str("preference", c.preference);
  num("beta", c.beta);
  num("sigma", c.sigma);
  num("fix_fraction", c.fix_fraction);
  num("lambda_kl", c.lambda_kl);
  num("lambda_gan", c.lambda_gan);
  num("label_alpha", c.label_alpha);
  count("epochs", c.epochs);
  count("batch_size", c.batch_size);
  num("lr", c.lr);
  if (j.contains("seed")) {
    std::size_t s = 0;
    read_count(j, "seed", s);
    c.seed = s;
  }
  count("max_train_episodes", c.max_train_episodes);
  count("pretrain_epochs", c.pretrain_epochs);
  if (j.contains("use_new_pixels")) read_into(j, "use_new_pixels", c.use_new_pixels);
  count("code_dim", c.code_dim);
  count("latent_dim", c.latent_dim);
  if (j.contains("widths")) read_into(j, "widths", c.widths);
  if (j.contains("disc_widths")) read_into(j, "disc_widths", c.disc_widths);
  count("decoder_kernel", c.decoder_kernel);
  num("flow_range", c.flow_range);
  c.validate();
  return c;
}

RunConfig merge_config(const json& base, const json& overrides) {
  json merged = base.is_null() ? json::object() : base;
  require(merged.is_object(), ErrorKind::Config, "config must be a JSON object");
  if (!overrides.is_null()) {
    require(overrides.is_object(), ErrorKind::Config, "overrides must be a JSON object");
    for (auto it = overrides.begin(); it != overrides.end(); ++it) merged[it.key()] = it.value();
  }
  return from_json(merged);
}

}  // namespace tap::run
