#include "tap/tap.h"

#include <cstdlib>
#include <cstring>
#include <memory>
#include <mutex>
#include <new>
#include <string>

#include "common/error.hpp"
#include "run/commands.hpp"
#include "run/model.hpp"
#include "synthworlds/dataset.hpp"

struct tap_dataset {
  tap::worlds::Dataset d;
};

struct tap_model {
  std::unique_ptr<tap::run::Model> m;
};

namespace {

thread_local std::string g_error;

tap_status status_of(tap::ErrorKind k) {
  switch (k) {
    case tap::ErrorKind::Argument:
    case tap::ErrorKind::Config:
    case tap::ErrorKind::Shape: return TAP_ERR_CONFIG;
    case tap::ErrorKind::Data:
    case tap::ErrorKind::Io: return TAP_ERR_DATA;
    case tap::ErrorKind::Numeric: return TAP_ERR_NUMERIC;
  }
  return TAP_ERR_INTERNAL;
}

template <class Fn>
tap_status guarded(Fn&& fn) {
  try {
    fn();
    g_error.clear();
    return TAP_OK;
  } catch (const tap::Error& e) {
    g_error = e.what();
    return status_of(e.kind());
  } catch (const nlohmann::json::parse_error& e) {
    g_error = std::string("malformed JSON: ") + e.what();
    return TAP_ERR_CONFIG;
  } catch (const std::bad_alloc&) {
    g_error = "out of memory";
    return TAP_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_error = e.what();
    return TAP_ERR_INTERNAL;
  } catch (...) {
    g_error = "unknown error";
    return TAP_ERR_INTERNAL;
  }
}

void need(const void* p, const char* what) {
  if (!p) tap::fail(tap::ErrorKind::Argument, std::string(what) + " must not be NULL");
}

char* copy_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

nlohmann::json parse_or_empty(const char* text) {
  if (!text || !*text) return nlohmann::json::object();
  return nlohmann::json::parse(text);
}

std::mutex g_progress_mu;

}  // namespace

extern "C" {

const char* tap_version(void) { return "1.0.0"; }

const char* tap_last_error(void) { return g_error.c_str(); }

void tap_string_free(char* s) { std::free(s); }

tap_status tap_run(const char* command, const char* args_json, char** summary_json) {
  return guarded([&] {
    need(command, "command");
    const auto summary = tap::run::run_command(command, parse_or_empty(args_json));
    if (summary_json) *summary_json = copy_string(summary.dump());
  });
}

void tap_set_progress(tap_progress_fn fn, void* user) {
  std::lock_guard<std::mutex> lock(g_progress_mu);
  if (!fn) {
    tap::run::set_progress_sink(nullptr);
    return;
  }
  tap::run::set_progress_sink([fn, user](const std::string& line) { fn(line.c_str(), user); });
}

tap_status tap_config_resolve(const char* config_json, const char* overrides_json, char** resolved_json) {
  return guarded([&] {
    need(resolved_json, "resolved_json");
    const auto cfg = tap::run::merge_config(parse_or_empty(config_json), parse_or_empty(overrides_json));
    *resolved_json = copy_string(tap::run::to_json(cfg).dump(2));
  });
}

tap_status tap_dataset_generate(const char* world, uint64_t seed, size_t episodes, size_t objects, tap_dataset** out) {
  return guarded([&] {
    need(world, "world");
    need(out, "out");
    *out = nullptr;
    auto h = std::make_unique<tap_dataset>();
    h->d = tap::worlds::generate(tap::worlds::parse_world(world), seed, episodes, objects);
    *out = h.release();
  });
}

tap_status tap_dataset_read(const char* path, tap_dataset** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = nullptr;
    auto h = std::make_unique<tap_dataset>();
    h->d = tap::worlds::read_dataset(path);
    *out = h.release();
  });
}

tap_status tap_dataset_write(const tap_dataset* dataset, const char* path) {
  return guarded([&] {
    need(dataset, "dataset");
    need(path, "path");
    tap::worlds::write_dataset(dataset->d, path);
  });
}

tap_status tap_dataset_get_info(const tap_dataset* dataset, tap_dataset_info* info) {
  return guarded([&] {
    need(dataset, "dataset");
    need(info, "info");
    const auto& d = dataset->d;
    *info = tap_dataset_info{};
    const auto name = tap::worlds::world_name(d.world);
    std::strncpy(info->world, name.c_str(), sizeof info->world - 1);
    info->episodes = d.episodes.size();
    info->frames = d.frames;
    info->height = d.height;
    info->width = d.width;
    info->channels = d.channels;
    info->seed = d.seed;
  });
}

tap_status tap_dataset_frame(const tap_dataset* dataset, size_t episode, size_t t, double* out, size_t len) {
  return guarded([&] {
    need(dataset, "dataset");
    need(out, "out");
    const auto& d = dataset->d;
    tap::require(episode < d.episodes.size() && t < d.frames, tap::ErrorKind::Argument,
                 "frame index out of range");
    tap::require(len == d.frame_numel(), tap::ErrorKind::Argument,
                 "output buffer must hold exactly " + std::to_string(d.frame_numel()) + " values");
    std::memcpy(out, d.episodes[episode].frames.data() + t * len, len * sizeof(double));
  });
}

void tap_dataset_free(tap_dataset* dataset) { delete dataset; }

tap_status tap_model_load(const char* checkpoint_path, tap_model** out) {
  return guarded([&] {
    need(checkpoint_path, "checkpoint_path");
    need(out, "out");
    *out = nullptr;
    auto h = std::make_unique<tap_model>();
    h->m = tap::run::load_model(checkpoint_path);
    *out = h.release();
  });
}

tap_status tap_model_get_info(const tap_model* model, tap_model_info* info) {
  return guarded([&] {
    need(model, "model");
    need(info, "info");
    const auto& m = *model->m;
    *info = tap_model_info{};
    info->context_count = m.contexts.size();
    info->target_count = m.target_count();
    info->latent_dim = m.cfg.use_vae() ? m.cfg.latent_dim : 0;
    info->height = m.data.height;
    info->width = m.data.width;
    info->channels = m.data.channels;
    info->use_new_pixels = m.cfg.use_new_pixels ? 1 : 0;
  });
}

tap_status tap_model_predict(const tap_model* model, size_t n, const double* contexts, const double* z, double* out) {
  return guarded([&] {
    need(model, "model");
    need(contexts, "contexts");
    need(out, "out");
    tap::require(n > 0, tap::ErrorKind::Argument, "n must be positive");
    const auto& m = *model->m;
    const std::size_t k = m.contexts.size(), c = m.data.channels, h = m.data.height, w = m.data.width;
    const std::size_t fn = c * h * w;
    std::vector<tap::ad::Tensor> ctx;
    for (std::size_t ci = 0; ci < k; ++ci) {
      std::vector<double> v(n * fn);
      for (std::size_t i = 0; i < n; ++i) std::memcpy(v.data() + i * fn, contexts + (i * k + ci) * fn, fn * sizeof(double));
      ctx.push_back(tap::ad::Tensor::from({n, c, h, w}, std::move(v)));
    }
    std::optional<tap::ad::Tensor> zt;
    if (m.cfg.use_vae()) {
      need(z, "z");
      zt = tap::ad::Tensor::from({n, m.cfg.latent_dim}, std::vector<double>(z, z + n * m.cfg.latent_dim));
    } else {
      tap::require(z == nullptr, tap::ErrorKind::Argument, "z given to a model without a VAE");
    }
    tap::ad::NoGrad ng;
    const auto pred = tap::run::predict(m, ctx, zt);
    std::memcpy(out, pred.composited.data().data(), n * fn * sizeof(double));
  });
}

void tap_model_free(tap_model* model) { delete model; }

}  // extern "C"
