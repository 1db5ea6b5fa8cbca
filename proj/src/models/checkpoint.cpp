#include "models/checkpoint.hpp"

#include "common/error.hpp"
#include "io/binary.hpp"

namespace tap::models {

namespace {
constexpr char kMagic[] = "TAPCKPT1";
}

void write_checkpoint(const std::string& path, const nlohmann::json& config,
                      const std::vector<const ParamStore*>& stores) {
  io::Writer w;
  w.str(kMagic);
  const std::string cfg = config.dump();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(cfg.size()));
  w.str(cfg);
  std::uint32_t count = 0;
  for (const auto* s : stores) count += static_cast<std::uint32_t>(s->items().size());
  w.put(count);
  for (const auto* s : stores) {
    for (const auto& [name, t] : s->items()) {
      w.put<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
      w.str(name);
      w.put<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
      for (auto d : t.shape()) w.put<std::uint64_t>(d);
      auto data = t.data();
      w.bytes(data.data(), data.size() * sizeof(double));
    }
  }
  io::write_file(path, w.buffer());
}

Checkpoint read_checkpoint(const std::string& path) {
  const auto buf = io::read_file(path);
  io::Reader r(buf.data(), buf.size(), path);
  require(buf.size() >= 8 && r.str(8) == kMagic, ErrorKind::Data, path + ": not a checkpoint (bad magic)");
  Checkpoint ck;
  const auto cfg_len = r.get<std::uint32_t>();
  try {
    ck.config = nlohmann::json::parse(r.str(cfg_len));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Data, path + ": malformed config block: " + e.what());
  }
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name = r.str(r.get<std::uint32_t>());
    const auto rank = r.get<std::uint32_t>();
    require(rank <= 8, ErrorKind::Data, path + ": implausible tensor rank for " + name);
    ad::Shape shape(rank);
    for (auto& d : shape) d = r.get<std::uint64_t>();
    const std::size_t n = ad::numel_of(shape);
    require(n * sizeof(double) <= r.remaining(), ErrorKind::Data, path + ": truncated tensor " + name);
    std::vector<double> v(n);
    r.bytes(v.data(), n * sizeof(double));
    ck.tensors.emplace_back(name, Tensor::from(shape, std::move(v)));
  }
  require(r.remaining() == 0, ErrorKind::Data, path + ": trailing bytes after last tensor");
  return ck;
}

void load_parameters(const Checkpoint& ckpt, ParamStore& store) {
  for (auto& [name, t] : store.items()) {
    const Tensor* src = nullptr;
    for (const auto& [n, v] : ckpt.tensors)
      if (n == name) src = &v;
    require(src != nullptr, ErrorKind::Data, "checkpoint lacks parameter " + name);
    require(src->shape() == t.shape(), ErrorKind::Data,
            "checkpoint shape mismatch for " + name + ": " + ad::shape_str(src->shape()) + " vs " +
                ad::shape_str(t.shape()));
    auto dst = t.mutable_data();
    auto s = src->data();
    std::copy(s.begin(), s.end(), dst.begin());
  }
}

}  // namespace tap::models
