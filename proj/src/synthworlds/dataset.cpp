#include "synthworlds/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "common/error.hpp"
#include "io/binary.hpp"

namespace tap::worlds {

namespace {
constexpr char kMagic[] = "TAPDS1";
constexpr std::uint8_t kHasPositions = 1, kHasBottlenecks = 2;
}  // namespace

std::vector<char> encode_dataset(const Dataset& d) {
  io::Writer w;
  w.str(kMagic);
  w.put(static_cast<std::uint8_t>(d.world));
  w.put<std::uint8_t>(kHasPositions | kHasBottlenecks);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(d.episodes.size()));
  for (auto v : {d.frames, d.height, d.width, d.channels}) w.put<std::uint16_t>(static_cast<std::uint16_t>(v));
  w.put<std::uint64_t>(d.seed);
  const std::size_t per_episode = d.frames * d.frame_numel();
  for (const auto& e : d.episodes) {
    require(e.frames.size() == per_episode && e.positions.size() == d.frames, ErrorKind::Data,
            "write_dataset: episode does not match the header geometry");
    const std::size_t begin = w.size();
    w.put<std::uint16_t>(static_cast<std::uint16_t>(e.entity_count()));
    w.put<std::uint16_t>(static_cast<std::uint16_t>(e.bottlenecks.size()));
    for (double v : e.frames) w.put(static_cast<float>(v));
    for (const auto& frame : e.positions)
      for (const auto& c : frame) {
        w.put<std::uint16_t>(static_cast<std::uint16_t>(c.x));
        w.put<std::uint16_t>(static_cast<std::uint16_t>(c.y));
      }
    for (auto b : e.bottlenecks) w.put<std::uint16_t>(static_cast<std::uint16_t>(b));
    w.put(io::crc32(w.buffer().data() + begin, w.size() - begin));
  }
  return std::move(w.buffer());
}

Dataset decode_dataset(const std::vector<char>& bytes, const std::string& what) {
  io::Reader r(bytes.data(), bytes.size(), what);
  require(bytes.size() >= 6 && r.str(6) == kMagic, ErrorKind::Data, what + ": bad magic (not a TAPDS1 dataset)");
  Dataset d;
  const auto world = r.get<std::uint8_t>();
  require(world >= 1 && world <= 4, ErrorKind::Data, what + ": unknown world id " + std::to_string(world));
  d.world = static_cast<WorldId>(world);
  const auto flags = r.get<std::uint8_t>();
  require(flags == (kHasPositions | kHasBottlenecks), ErrorKind::Data, what + ": unsupported flags");
  const auto count = r.get<std::uint32_t>();
  d.frames = r.get<std::uint16_t>();
  d.height = r.get<std::uint16_t>();
  d.width = r.get<std::uint16_t>();
  d.channels = r.get<std::uint16_t>();
  d.seed = r.get<std::uint64_t>();
  const std::size_t per_episode = d.frames * d.frame_numel();
  d.episodes.reserve(std::min<std::size_t>(count, 1 << 20));
  for (std::uint32_t i = 0; i < count; ++i) {
    const char* begin = r.pos();
    Episode e;
    const auto entities = r.get<std::uint16_t>();
    const auto nb = r.get<std::uint16_t>();
    require(r.remaining() >= per_episode * sizeof(float), ErrorKind::Data, what + ": truncated payload");
    e.frames.resize(per_episode);
    for (auto& v : e.frames) v = static_cast<double>(r.get<float>());
    e.positions.assign(d.frames, std::vector<Cell>(entities));
    for (auto& frame : e.positions)
      for (auto& c : frame) {
        c.x = r.get<std::uint16_t>();
        c.y = r.get<std::uint16_t>();
      }
    e.bottlenecks.resize(nb);
    for (auto& b : e.bottlenecks) b = r.get<std::uint16_t>();
    const std::uint32_t want = io::crc32(begin, static_cast<std::size_t>(r.pos() - begin));
    require(r.get<std::uint32_t>() == want, ErrorKind::Data,
            what + ": checksum mismatch in episode " + std::to_string(i));
    for (double v : e.frames) require(std::isfinite(v) && std::abs(v) <= 1.0, ErrorKind::Data, what + ": pixel out of range");
    d.episodes.push_back(std::move(e));
  }
  require(r.remaining() == 0, ErrorKind::Data, what + ": trailing bytes after the last episode");
  return d;
}

void write_dataset(const Dataset& d, const std::string& path) { io::write_file(path, encode_dataset(d)); }

Dataset read_dataset(const std::string& path) { return decode_dataset(io::read_file(path), path); }

void write_image(const std::string& path, const double* chw, std::size_t channels, std::size_t height,
                 std::size_t width) {
  require(channels == 1 || channels == 3, ErrorKind::Argument, "image dump supports 1 or 3 channels");
  std::vector<char> out;
  const std::string header = (channels == 3 ? "P6\n" : "P5\n") + std::to_string(width) + " " +
                             std::to_string(height) + "\n255\n";
  out.insert(out.end(), header.begin(), header.end());
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x)
      for (std::size_t c = 0; c < channels; ++c) {
        const double v = std::clamp(chw[(c * height + y) * width + x], -1.0, 1.0);
        out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround((v + 1.0) * 127.5))));
      }
  io::write_file(path, out);
}

}  // namespace tap::worlds
