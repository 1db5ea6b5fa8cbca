#include "run/model.hpp"

#include <algorithm>

#include "common/error.hpp"
#include "models/checkpoint.hpp"

namespace tap::run {

using ad::Tensor;
using nlohmann::json;

namespace {
constexpr std::uint64_t kInitSalt = 0x494e4954;  // "INIT"
}

DataShape shape_of(const worlds::Dataset& d) {
  return {worlds::world_name(d.world), d.frames, d.height, d.width, d.channels};
}

std::vector<const models::ParamStore*> Model::stores() const {
  std::vector<const models::ParamStore*> s{&g_store};
  if (d) s.push_back(&d_store);
  if (d_post) s.push_back(&dp_store);
  if (q) s.push_back(&q_store);
  return s;
}

std::unique_ptr<Model> build_model(const RunConfig& cfg, const DataShape& data) {
  cfg.validate();
  auto m = std::make_unique<Model>();
  m->cfg = cfg;
  m->data = data;
  m->contexts = cfg.context_indices(data.frames);
  m->targets = cfg.targets(data.frames);
  const auto pc = cfg.predictor(data.height, data.width, data.channels);
  pc.validate();
  auto aux = pc;
  aux.widths = cfg.disc_widths;

  Rng g_rng(derive_seed(cfg.seed, 0, kInitSalt));
  m->g = models::Predictor(m->g_store, pc, g_rng);
  if (cfg.use_gan()) {
    Rng d_rng(derive_seed(cfg.seed, 1, kInitSalt));
    m->d.emplace(m->d_store, "D", aux, m->target_count(), d_rng);
    if (cfg.use_vae()) {
      Rng dp_rng(derive_seed(cfg.seed, 2, kInitSalt));
      m->d_post.emplace(m->dp_store, "Dpost", aux, m->target_count(), dp_rng);
    }
  }
  if (cfg.use_vae()) {
    Rng q_rng(derive_seed(cfg.seed, 3, kInitSalt));
    m->q.emplace(m->q_store, aux, m->contexts.size() + m->target_count(), q_rng);
  }
  return m;
}

void save_model(const Model& m, const std::string& path) {
  // Paths stay out of the checkpoint so identical runs produce identical bytes wherever they write.
  RunConfig rc = m.cfg;
  rc.dataset.clear();
  rc.out_dir.clear();
  json cfg{{"run", to_json(rc)},
           {"data",
            {{"world", m.data.world},
             {"frames", m.data.frames},
             {"height", m.data.height},
             {"width", m.data.width},
             {"channels", m.data.channels}}}};
  models::write_checkpoint(path, cfg, m.stores());
}

std::unique_ptr<Model> load_model(const std::string& path) {
  auto ck = models::read_checkpoint(path);
  DataShape data;
  RunConfig cfg;
  try {
    const auto& d = ck.config.at("data");
    data = {d.at("world").get<std::string>(), d.at("frames").get<std::size_t>(), d.at("height").get<std::size_t>(),
            d.at("width").get<std::size_t>(), d.at("channels").get<std::size_t>()};
    cfg = from_json(ck.config.at("run"));
  } catch (const json::exception& e) {
    fail(ErrorKind::Data, path + ": checkpoint config is incomplete: " + e.what());
  }
  auto m = build_model(cfg, data);
  models::load_parameters(ck, m->g_store);
  if (m->d) models::load_parameters(ck, m->d_store);
  if (m->d_post) models::load_parameters(ck, m->dp_store);
  if (m->q) models::load_parameters(ck, m->q_store);
  std::size_t expected = 0;
  for (const auto* s : m->stores()) expected += s->items().size();
  require(expected == ck.tensors.size(), ErrorKind::Data, path + ": checkpoint holds unexpected tensors");
  return m;
}

void check_compatible(const Model& m, const worlds::Dataset& d) {
  const auto s = shape_of(d);
  require(s.world == m.data.world, ErrorKind::Data,
          "dataset world " + s.world + " differs from the checkpoint's " + m.data.world);
  require(s.frames == m.data.frames, ErrorKind::Data,
          "target set mismatch: dataset episodes have " + std::to_string(s.frames) + " frames, checkpoint expects " +
              std::to_string(m.data.frames));
  require(s.height == m.data.height && s.width == m.data.width && s.channels == m.data.channels, ErrorKind::Data,
          "dataset frame size differs from the checkpoint's");
}

Batch make_batch(const Model& m, const worlds::Dataset& d, const std::vector<std::size_t>& episodes) {
  Batch b;
  b.n = episodes.size();
  require(b.n > 0, ErrorKind::Argument, "make_batch: empty batch");
  const std::size_t fn = d.frame_numel(), k = m.target_count();
  const std::size_t c = d.channels, h = d.height, w = d.width;
  auto frame_ptr = [&](std::size_t e, std::size_t t) { return d.episodes[e].frames.data() + t * fn; };

  for (std::size_t ci : m.contexts) {
    std::vector<double> v(b.n * fn);
    for (std::size_t i = 0; i < b.n; ++i) std::copy_n(frame_ptr(episodes[i], ci), fn, v.begin() + i * fn);
    b.contexts.push_back(Tensor::from({b.n, c, h, w}, std::move(v)));
  }
  std::vector<double> tv(b.n * k * fn);
  for (std::size_t i = 0; i < b.n; ++i)
    for (std::size_t j = 0; j < k; ++j)
      std::copy_n(frame_ptr(episodes[i], m.targets.indices[j]), fn, tv.begin() + (i * k + j) * fn);
  b.targets = Tensor::from({b.n, k, c, h, w}, std::move(tv));

  if (m.q) {
    const std::size_t f = m.contexts.size() + k;
    std::vector<double> vv(b.n * f * fn);
    for (std::size_t i = 0; i < b.n; ++i) {
      std::size_t slot = 0;
      for (std::size_t ci : m.contexts) std::copy_n(frame_ptr(episodes[i], ci), fn, vv.begin() + (i * f + slot++) * fn);
      for (std::size_t t : m.targets.indices) std::copy_n(frame_ptr(episodes[i], t), fn, vv.begin() + (i * f + slot++) * fn);
    }
    b.video = Tensor::from({b.n, f, c, h, w}, std::move(vv));
  }
  return b;
}

Tensor sample_frame(const Tensor& batch, std::size_t n) {
  const auto& s = batch.shape();
  const std::size_t fn = batch.numel() / s[0];
  std::vector<double> v(batch.data().begin() + static_cast<std::ptrdiff_t>(n * fn),
                        batch.data().begin() + static_cast<std::ptrdiff_t>((n + 1) * fn));
  return Tensor::from(ad::Shape(s.begin() + 1, s.end()), std::move(v));
}

models::PredictorOutput predict(const Model& m, const std::vector<Tensor>& contexts, const std::optional<Tensor>& z) {
  return m.g(contexts, z);
}

}  // namespace tap::run
