#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>
#include <string>

#include "common/error.hpp"
#include "doctest.h"
#include "io/binary.hpp"
#include "synthworlds/dataset.hpp"
#include "synthworlds/pushworld.hpp"
#include "synthworlds/worlds.hpp"

using namespace tap;
using namespace tap::worlds;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("tap_test_" + name)).string();
}

void check_common(const Dataset& d, std::size_t frames) {
  CHECK(d.frames == frames);
  for (const auto& e : d.episodes) {
    REQUIRE(e.frames.size() == frames * 3 * 16 * 16);
    REQUIRE(e.positions.size() == frames);
    for (double v : e.frames) {
      CHECK(std::abs(v) <= 1.0);
      CHECK(static_cast<double>(static_cast<float>(v)) == v);
    }
    for (const auto& f : e.positions)
      for (const auto& c : f) CHECK((c.x >= 0 && c.y >= 0 && c.x < 16 && c.y < 16));
    CHECK(!e.bottlenecks.empty());
    CHECK(bottleneck_predicate(d, e) == e.bottlenecks);
  }
}

}  // namespace

TEST_CASE("push dynamics") {
  PushState s{16, {3, 4}, {{4, 4}, {10, 10}}};
  const PushState before = s;
  validate_state(s);
  CHECK(s == before);  // empty action sequence

  CHECK(push_step(s, 1, 0));
  CHECK(s.pusher == Cell{4, 4});
  CHECK(s.objects[0] == Cell{5, 4});
  CHECK(s.objects[1] == Cell{10, 10});

  PushState wall{16, {13, 5}, {{14, 5}}};
  CHECK_FALSE(push_step(wall, 1, 0));
  CHECK(wall.pusher == Cell{13, 5});
  PushState edge{16, {0, 0}, {}};
  CHECK_FALSE(push_step(edge, -1, 0));

  PushState blocked{16, {1, 4}, {{2, 4}, {4, 4}}};
  CHECK_FALSE(push_step(blocked, 1, 0));
  CHECK(blocked.objects[0] == Cell{2, 4});

  PushState diag{16, {1, 1}, {{2, 2}}};
  CHECK(push_step(diag, 1, 1));
  CHECK(diag.objects[0] == Cell{3, 3});

  PushState a = before, b = before;
  for (int k = 0; k < 20; ++k) {
    push_step(a, (k % 3) - 1, ((k / 3) % 3) - 1);
    push_step(b, (k % 3) - 1, ((k / 3) % 3) - 1);
  }
  CHECK(a == b);

  CHECK_THROWS_AS(validate_state(PushState{16, {0, 0}, {{15, 3}}}), Error);
  CHECK_THROWS_AS(validate_state(PushState{16, {4, 4}, {{4, 4}}}), Error);
  CHECK_THROWS_AS(validate_state(PushState{16, {0, 0}, {{4, 4}, {5, 5}}}), Error);
  CHECK(placement_cost({{0, 0}, {3, 4}}, {{0, 0}, {0, 0}}) == 5.0);
}

TEST_CASE("gridpick episodes") {
  auto d = gen_gridpick(11, 60);
  check_common(d, 15);
  std::set<std::size_t> contact_times;
  for (const auto& e : d.episodes) {
    REQUIRE(e.bottlenecks.size() == 1);
    const std::size_t tc = e.bottlenecks[0];
    contact_times.insert(tc);
    CHECK(objects_overlap(e.positions[tc][0], e.positions[tc][1]));
    CHECK(e.positions[0][1].y == kTableRestY);
    // Table row is drawn along the bottom of the first frame.
    CHECK(e.frames[(0 * 16 + 15) * 16 + 0] != -1.0);
    // Lift: deterministic given the contact pose.
    for (std::size_t t = tc + 1; t < 15; ++t) {
      CHECK(e.positions[t][1].x == e.positions[tc][1].x);
      CHECK(e.positions[t][1].y == kTableRestY - static_cast<int>(t - tc));
      CHECK(e.positions[t][0].x - e.positions[t][1].x == e.positions[tc][0].x - e.positions[tc][1].x);
      CHECK(e.positions[t][0].y == e.positions[t][1].y - 1);
    }
  }
  CHECK(contact_times.size() >= 3);  // approach timing varies

  auto other = gen_gridpick(12, 60);
  std::size_t differ = 0;
  for (std::size_t i = 0; i < 60; ++i)
    if (!std::equal(d.episodes[i].frames.begin(), d.episodes[i].frames.begin() + 3 * 256 * 4,
                    other.episodes[i].frames.begin()))
      ++differ;
  CHECK(differ >= 50);
}

TEST_CASE("pick-and-place episodes") {
  auto d = gen_gridpick(5, 40, true);
  CHECK(d.world == WorldId::PickPlace);
  check_common(d, 20);
  for (const auto& e : d.episodes) {
    REQUIRE(e.bottlenecks.size() == 2);
    CHECK(e.positions.back()[1].y == kTableRestY);
    CHECK(e.positions.back()[1].x != e.positions.front()[1].x);
  }
}

TEST_CASE("gridpush episodes") {
  for (std::size_t objects : {2u, 3u}) {
    auto d = gen_gridpush(7, 40, objects);
    check_common(d, 40);
    for (const auto& e : d.episodes) {
      REQUIRE(e.entity_count() == objects + 1);
      // Replay: every transition is one push_step of some lattice action.
      for (std::size_t t = 1; t < 40; ++t) {
        PushState prev{16, e.positions[t - 1][0], {e.positions[t - 1].begin() + 1, e.positions[t - 1].end()}};
        PushState next{16, e.positions[t][0], {e.positions[t].begin() + 1, e.positions[t].end()}};
        validate_state(next);
        bool reachable = prev == next;
        for (int dx = -1; dx <= 1 && !reachable; ++dx)
          for (int dy = -1; dy <= 1 && !reachable; ++dy) {
            PushState s = prev;
            push_step(s, dx, dy);
            reachable = s == next;
          }
        CHECK(reachable);
      }
      for (auto b : e.bottlenecks) {
        std::size_t at_goal = 0, at_start = 0;
        for (std::size_t i = 1; i <= objects; ++i) {
          if (e.positions[b][i] == e.positions.back()[i]) ++at_goal;
          if (e.positions[b][i] == e.positions.front()[i]) ++at_start;
        }
        CHECK(at_goal + at_start == objects);
        CHECK(at_goal >= 1);
        CHECK(at_start >= 1);
        if (objects == 2) CHECK(at_goal == 1);
      }
    }
  }
  auto a = gen_gridpush(3, 10, 2), b = gen_gridpush(3, 10, 2);
  CHECK(encode_dataset(a) == encode_dataset(b));
  CHECK_THROWS_AS(gen_gridpush(3, 1, 4), Error);
}

TEST_CASE("maze episodes") {
  auto d = gen_maze(2, 60);
  check_common(d, 20);
  for (const auto& e : d.episodes) {
    CHECK(std::any_of(e.positions.begin(), e.positions.end(), [](const auto& f) { return f[0] == kDoor; }));
    const bool start_left = e.positions.front()[0].x < kWallX, goal_left = e.positions.back()[0].x < kWallX;
    CHECK(start_left != goal_left);
    for (const auto& f : e.positions) CHECK((f[0].x != kWallX || f[0] == kDoor));
  }

  // Stochasticity at mid trajectory, measured over 100 seeds.
  std::size_t differ = 0, total = 0;
  auto prev = gen_maze(0, 10);
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    auto cur = gen_maze(seed, 10);
    for (std::size_t i = 0; i < 10; ++i)
      for (std::size_t t = 8; t <= 11; ++t) {
        ++total;
        if (cur.episodes[i].positions[t][0] != prev.episodes[i].positions[t][0]) ++differ;
      }
    prev = std::move(cur);
  }
  MESSAGE("maze mid-trajectory difference rate " << double(differ) / total);
  CHECK(double(differ) / total >= 0.3);
}

TEST_CASE("dataset round trip, corruption and degenerate files") {
  auto d = gen_gridpick(21, 12);
  const auto path = temp_path("ds.bin");
  write_dataset(d, path);
  auto back = read_dataset(path);
  CHECK(back == d);
  const auto bytes = io::read_file(path);
  write_dataset(gen_gridpick(21, 12), path);
  CHECK(io::read_file(path) == bytes);

  // Flip one payload byte in the middle of episode 3's frames.
  auto corrupt = bytes;
  corrupt[26 + 3 * (bytes.size() - 26) / 12 + 100] ^= 0x01;
  CHECK_THROWS_WITH_AS(decode_dataset(corrupt), doctest::Contains("checksum"), Error);
  auto truncated = bytes;
  truncated.resize(bytes.size() - 5);
  CHECK_THROWS_AS(decode_dataset(truncated), Error);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_WITH_AS(decode_dataset(bad_magic), doctest::Contains("magic"), Error);
  auto trailing = bytes;
  trailing.push_back(0);
  CHECK_THROWS_AS(decode_dataset(trailing), Error);

  auto empty = gen_maze(4, 0);
  write_dataset(empty, path);
  auto eb = read_dataset(path);
  CHECK(eb.episodes.empty());
  CHECK(eb.world == WorldId::Maze);
  CHECK(eb.frames == 20);
  CHECK_THROWS_AS(read_dataset(temp_path("does_not_exist.bin")), Error);
  std::filesystem::remove(path);
}

TEST_CASE("test split and world names") {
  std::size_t test = 0;
  for (std::size_t i = 0; i < 20000; ++i) test += is_test_episode(i);
  CHECK(test > 800);
  CHECK(test < 1200);
  for (const char* n : {"gridpick", "pickplace", "gridpush", "maze"}) CHECK(world_name(parse_world(n)) == n);
  CHECK_THROWS_AS(parse_world("mujoco"), Error);
}

TEST_CASE("image dump") {
  std::vector<double> px{-1.0, 0.0, 1.0, 1.0, -1.0, 0.0};
  const auto path = temp_path("img.pgm");
  write_image(path, px.data(), 1, 2, 3);
  auto bytes = io::read_file(path);
  const std::string header = "P5\n3 2\n255\n";
  REQUIRE(bytes.size() == header.size() + 6);
  CHECK(std::string(bytes.begin(), bytes.begin() + header.size()) == header);
  CHECK(static_cast<unsigned char>(bytes[header.size()]) == 0);
  CHECK(static_cast<unsigned char>(bytes[header.size() + 2]) == 255);
  std::filesystem::remove(path);
}
