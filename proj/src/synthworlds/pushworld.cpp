#include "synthworlds/pushworld.hpp"

#include <cmath>
#include <cstdlib>

#include "common/error.hpp"

namespace tap::worlds {

bool object_covers(const Cell& o, const Cell& c) {
  return c.x >= o.x && c.x < o.x + kObjectSize && c.y >= o.y && c.y < o.y + kObjectSize;
}

bool objects_overlap(const Cell& a, const Cell& b) {
  return std::abs(a.x - b.x) < kObjectSize && std::abs(a.y - b.y) < kObjectSize;
}

bool object_in_bounds(const Cell& o, int size) {
  return o.x >= 0 && o.y >= 0 && o.x + kObjectSize <= size && o.y + kObjectSize <= size;
}

void validate_state(const PushState& s) {
  require(s.pusher.x >= 0 && s.pusher.y >= 0 && s.pusher.x < s.size && s.pusher.y < s.size, ErrorKind::Argument,
          "push state: pusher out of bounds");
  for (std::size_t i = 0; i < s.objects.size(); ++i) {
    require(object_in_bounds(s.objects[i], s.size), ErrorKind::Argument, "push state: object out of bounds");
    require(!object_covers(s.objects[i], s.pusher), ErrorKind::Argument, "push state: pusher inside an object");
    for (std::size_t j = i + 1; j < s.objects.size(); ++j)
      require(!objects_overlap(s.objects[i], s.objects[j]), ErrorKind::Argument, "push state: objects overlap");
  }
}

bool push_step(PushState& s, int dx, int dy) {
  if (dx == 0 && dy == 0) return false;
  const Cell p{s.pusher.x + dx, s.pusher.y + dy};
  if (p.x < 0 || p.y < 0 || p.x >= s.size || p.y >= s.size) return false;
  for (std::size_t i = 0; i < s.objects.size(); ++i) {
    if (!object_covers(s.objects[i], p)) continue;
    const Cell moved{s.objects[i].x + dx, s.objects[i].y + dy};
    if (!object_in_bounds(moved, s.size)) return false;
    for (std::size_t j = 0; j < s.objects.size(); ++j)
      if (j != i && objects_overlap(moved, s.objects[j])) return false;
    s.objects[i] = moved;
    s.pusher = p;
    return true;
  }
  s.pusher = p;
  return true;
}

double placement_cost(const std::vector<Cell>& objects, const std::vector<Cell>& targets) {
  require(objects.size() == targets.size(), ErrorKind::Argument, "placement_cost: object/target count mismatch");
  double c = 0;
  for (std::size_t i = 0; i < objects.size(); ++i)
    c += std::hypot(static_cast<double>(objects[i].x - targets[i].x), static_cast<double>(objects[i].y - targets[i].y));
  return c;
}

}  // namespace tap::worlds
