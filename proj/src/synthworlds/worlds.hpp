#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "autodiff/tensor.hpp"
#include "synthworlds/pushworld.hpp"

namespace tap::worlds {

enum class WorldId : std::uint8_t { GridPick = 1, PickPlace = 2, GridPush = 3, Maze = 4 };

std::string world_name(WorldId id);
WorldId parse_world(const std::string& name);  // gridpick, pickplace, gridpush, maze

struct Episode {
  std::vector<double> frames;                // frame-major, each frame C x H x W, values in [-1, 1]
  std::vector<std::vector<Cell>> positions;  // [frame][entity], sprite anchors (top-left) in pixels
  std::vector<std::size_t> bottlenecks;      // frame indices, increasing

  std::size_t entity_count() const { return positions.empty() ? 0 : positions.front().size(); }
  bool operator==(const Episode&) const = default;
};

struct Dataset {
  WorldId world = WorldId::GridPick;
  std::size_t frames = 0, height = 16, width = 16, channels = 3;
  std::uint64_t seed = 0;
  std::vector<Episode> episodes;

  std::size_t frame_numel() const { return channels * height * width; }
  ad::Tensor frame(std::size_t episode, std::size_t t) const;  // [C,H,W]
  bool operator==(const Dataset&) const = default;
};

// Entities: gridpick/pickplace {gripper, object}; gridpush {pusher, objects...}; maze {agent}.
Dataset gen_gridpick(std::uint64_t seed, std::size_t n, bool pick_and_place = false);
Dataset gen_gridpush(std::uint64_t seed, std::size_t n, std::size_t n_objects = 2);
Dataset gen_maze(std::uint64_t seed, std::size_t n);
Dataset generate(WorldId world, std::uint64_t seed, std::size_t n, std::size_t n_objects = 2);

// Per-world geometric bottleneck predicate evaluated on recorded positions:
//   gridpick/pickplace: gripper overlaps the object while the object rests on the table;
//   gridpush: every object is at its start or its goal, at least one of each;
//   maze: the agent stands in the doorway.
std::vector<std::size_t> bottleneck_predicate(const Dataset& d, const Episode& e);

// Deterministic 5% test split keyed on the episode index.
bool is_test_episode(std::size_t index);
std::vector<std::size_t> split_indices(const Dataset& d, bool test);

constexpr int kGrid = 16;
constexpr int kTableRestY = kGrid - 3;     // object rows 13-14 rest on the table row 15
inline constexpr Cell kDoor{8, 7};         // maze doorway in the wall column x = 8
inline constexpr int kWallX = 8;

}  // namespace tap::worlds
