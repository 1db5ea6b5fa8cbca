#pragma once

#include <vector>

namespace tap::worlds {

struct Cell {
  int x = 0, y = 0;
  bool operator==(const Cell&) const = default;
};

constexpr int kObjectSize = 2;  // objects are 2x2, anchored at their top-left cell

// GridPush state: a one-cell pusher and 2x2 objects on a size x size grid.
struct PushState {
  int size = 16;
  Cell pusher;
  std::vector<Cell> objects;
  bool operator==(const PushState&) const = default;
};

bool object_covers(const Cell& object, const Cell& c);
bool objects_overlap(const Cell& a, const Cell& b);
bool object_in_bounds(const Cell& object, int size);
// Throws if the pusher or an object is out of bounds, objects overlap, or the pusher is inside one.
void validate_state(const PushState& s);

// Moves the pusher by (dx, dy) with |dx|, |dy| <= 1. Entering an object pushes it by the same
// displacement; the move is blocked (nothing changes) if the pusher would leave the grid or the
// pushed object would leave the grid or overlap another object. Returns whether anything moved.
bool push_step(PushState& s, int dx, int dy);

// Sum over objects of the Euclidean distance between object anchors and targets.
double placement_cost(const std::vector<Cell>& objects, const std::vector<Cell>& targets);

}  // namespace tap::worlds
