#include "synthworlds/worlds.hpp"

#include <algorithm>
#include <array>
#include <cstdlib>
#include <deque>
#include <functional>
#include <numeric>
#include <optional>

#include "common/error.hpp"
#include "common/parallel.hpp"
#include "common/rng.hpp"

namespace tap::worlds {

namespace {

using Color = std::array<int, 3>;  // channel values in units of 1/127

constexpr Color kBackground{-127, -127, -127};
constexpr Color kTable{-20, -40, -70};
constexpr Color kGripper{127, 127, 127};
constexpr Color kWall{0, 0, 0};
constexpr Color kAgent{127, 127, -90};
constexpr std::array<Color, 6> kPalette{{
    {127, -90, -90}, {-90, 127, -90}, {-60, -60, 127}, {127, 90, -110}, {127, -90, 127}, {-90, 127, 127}}};

struct Canvas {
  std::vector<int> px;  // C x H x W
  explicit Canvas(Color bg) : px(3 * kGrid * kGrid) {
    for (int c = 0; c < 3; ++c) std::fill_n(px.begin() + c * kGrid * kGrid, kGrid * kGrid, bg[c]);
  }
  void rect(int x, int y, int w, int h, Color col) {
    for (int yy = std::max(0, y); yy < std::min(kGrid, y + h); ++yy)
      for (int xx = std::max(0, x); xx < std::min(kGrid, x + w); ++xx)
        for (int c = 0; c < 3; ++c) px[(c * kGrid + yy) * kGrid + xx] = col[c];
  }
  void append_to(std::vector<double>& out) const {
    for (int v : px) out.push_back(static_cast<double>(static_cast<float>(v / 127.0)));
  }
};

int chebyshev(Cell a, Cell b) { return std::max(std::abs(a.x - b.x), std::abs(a.y - b.y)); }

constexpr std::array<Cell, 9> kMoves{{{0, 0}, {1, 0}, {-1, 0}, {0, 1}, {0, -1}, {1, 1}, {1, -1}, {-1, 1}, {-1, -1}}};

// Random walk from `from` that lands on `to` after exactly `steps` moves (8-neighbourhood plus
// staying put). Intermediate cells must satisfy `allowed`. Returns the steps+1 visited cells, or
// an empty vector if the walk got stuck.
template <class Allowed>
std::vector<Cell> conditioned_walk(Cell from, Cell to, int steps, Rng& rng, Allowed allowed) {
  std::vector<Cell> path{from};
  Cell cur = from;
  for (int s = 1; s < steps; ++s) {
    std::vector<Cell> options;
    for (const auto& m : kMoves) {
      Cell n{cur.x + m.x, cur.y + m.y};
      if (allowed(n) && chebyshev(n, to) <= steps - s) options.push_back(n);
    }
    if (options.empty()) return {};
    cur = options[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(options.size()) - 1))];
    path.push_back(cur);
  }
  if (steps >= 1) {
    if (chebyshev(cur, to) > 1) return {};
    path.push_back(to);
  }
  return path;
}

// ---------------------------------------------------------------- GridPick

Episode pick_episode(std::uint64_t seed, bool place) {
  Rng rng(seed);
  const int frames = place ? 20 : 15;
  const int grip_max = kGrid - kObjectSize;
  for (int attempt = 0;; ++attempt) {
    require(attempt < 10000, ErrorKind::Numeric, "gridpick: generator failed to find a feasible episode");
    const Color obj_color = kPalette[static_cast<std::size_t>(uniform_int(rng, 0, 5))];
    const Cell obj0{uniform_int(rng, 1, grip_max - 1), kTableRestY};
    const int t_contact = place ? uniform_int(rng, 5, 7) : uniform_int(rng, 6, 10);
    const Cell contact{std::clamp(obj0.x + uniform_int(rng, -1, 1), 0, grip_max), kTableRestY - 1};
    Cell start{uniform_int(rng, 0, grip_max), uniform_int(rng, 0, 6)};
    if (chebyshev(start, contact) > t_contact) continue;
    auto approach = conditioned_walk(start, contact, t_contact, rng, [&](Cell c) {
      return c.x >= 0 && c.x <= grip_max && c.y >= 0 && c.y <= kTableRestY - 1 && !objects_overlap(c, obj0);
    });
    if (approach.empty()) continue;

    std::vector<Cell> grip(approach.begin(), approach.end()), obj(approach.size(), obj0);
    std::vector<std::size_t> truth{static_cast<std::size_t>(t_contact)};
    const int offset = contact.x - obj0.x;
    auto carry = [&](Cell o) {
      obj.push_back(o);
      grip.push_back({o.x + offset, o.y - 1});
    };
    if (!place) {
      for (int t = t_contact + 1; t < frames; ++t) carry({obj0.x, kTableRestY - (t - t_contact)});
    } else {
      const int lift = 3, max_carry = frames - 2 - t_contact - 2 * lift;
      std::vector<int> dests;
      for (int x = 1; x <= grip_max - 1; ++x)
        if (std::abs(x - obj0.x) >= 2 && std::abs(x - obj0.x) <= max_carry && x + offset >= 0 && x + offset <= grip_max)
          dests.push_back(x);
      if (dests.empty()) continue;
      const int dest = dests[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(dests.size()) - 1))];
      const int carry_steps = uniform_int(rng, std::abs(dest - obj0.x), max_carry);
      for (int k = 1; k <= lift; ++k) carry({obj0.x, kTableRestY - k});
      const int carry_y = kTableRestY - lift;
      auto across = conditioned_walk(Cell{obj0.x, carry_y}, Cell{dest, carry_y}, carry_steps, rng,
                                     [&](Cell c) { return c.y == carry_y && c.x >= 1 && c.x <= grip_max - 1; });
      if (across.empty()) continue;
      for (std::size_t k = 1; k < across.size(); ++k) carry(across[k]);
      for (int k = 1; k <= lift; ++k) carry({dest, carry_y + k});
      truth.push_back(obj.size() - 1);
      const Cell placed = obj.back();
      Cell g = grip.back();
      while (static_cast<int>(obj.size()) < frames) {
        g.y = std::max(0, g.y - 1);
        obj.push_back(placed);
        grip.push_back(g);
      }
    }
    if (static_cast<int>(obj.size()) != frames) continue;

    Episode e;
    for (int t = 0; t < frames; ++t) {
      Canvas cv(kBackground);
      cv.rect(0, kGrid - 1, kGrid, 1, kTable);
      cv.rect(obj[t].x, obj[t].y, kObjectSize, kObjectSize, obj_color);
      cv.rect(grip[t].x, grip[t].y, kObjectSize, kObjectSize, kGripper);
      cv.append_to(e.frames);
      e.positions.push_back({grip[t], obj[t]});
    }
    e.bottlenecks = truth;
    return e;
  }
}

// ---------------------------------------------------------------- GridPush

struct PushPlan {
  std::vector<Cell> actions;
  std::vector<int> owner;  // per action: index of the object it pushes, -1 for navigation
};

// Shortest 8-connected path for the pusher through free cells, with randomised tie-breaking.
std::optional<std::vector<Cell>> navigate(const PushState& s, Cell goal, Rng& rng) {
  auto free = [&](Cell c) {
    if (c.x < 0 || c.y < 0 || c.x >= s.size || c.y >= s.size) return false;
    for (const auto& o : s.objects)
      if (object_covers(o, c)) return false;
    return true;
  };
  if (!free(goal)) return std::nullopt;
  std::vector<int> prev(static_cast<std::size_t>(s.size * s.size), -1);
  auto id = [&](Cell c) { return c.y * s.size + c.x; };
  std::deque<Cell> queue{s.pusher};
  prev[static_cast<std::size_t>(id(s.pusher))] = id(s.pusher);
  std::array<Cell, 8> moves;
  std::copy(kMoves.begin() + 1, kMoves.end(), moves.begin());
  while (!queue.empty()) {
    Cell c = queue.front();
    queue.pop_front();
    if (c == goal) break;
    std::shuffle(moves.begin(), moves.end(), rng);
    for (const auto& m : moves) {
      Cell n{c.x + m.x, c.y + m.y};
      if (!free(n) || prev[static_cast<std::size_t>(id(n))] != -1) continue;
      prev[static_cast<std::size_t>(id(n))] = id(c);
      queue.push_back(n);
    }
  }
  if (prev[static_cast<std::size_t>(id(goal))] == -1) return std::nullopt;
  std::vector<Cell> steps;
  for (Cell c = goal; !(c == s.pusher);) {
    const int p = prev[static_cast<std::size_t>(id(c))];
    Cell pc{p % s.size, p / s.size};
    steps.push_back({c.x - pc.x, c.y - pc.y});
    c = pc;
  }
  std::reverse(steps.begin(), steps.end());
  return steps;
}

// Pushes every object along an L-shaped path in the given order; false if a push collides.
bool try_plan(PushState s, const std::vector<Cell>& goals, const std::vector<std::size_t>& order,
              const std::vector<bool>& x_first, Rng& rng, PushPlan& plan) {
  plan = {};
  for (std::size_t oi : order) {
    const Cell target = goals[oi];
    for (int leg = 0; leg < 2; ++leg) {
      const bool along_x = (leg == 0) == x_first[oi];
      const Cell o = s.objects[oi];
      const int delta = along_x ? target.x - o.x : target.y - o.y;
      if (delta == 0) continue;
      const int dir = delta > 0 ? 1 : -1;
      const int r = uniform_int(rng, 0, 1);
      bool reached = false;
      for (int side : {r, 1 - r}) {
        Cell stand = along_x ? Cell{dir > 0 ? o.x - 1 : o.x + kObjectSize, o.y + side}
                             : Cell{o.x + side, dir > 0 ? o.y - 1 : o.y + kObjectSize};
        auto path = navigate(s, stand, rng);
        if (!path) continue;
        for (const auto& m : *path) {
          if (!push_step(s, m.x, m.y)) return false;
          plan.actions.push_back(m);
          plan.owner.push_back(-1);
        }
        reached = true;
        break;
      }
      if (!reached) return false;
      const Cell m = along_x ? Cell{dir, 0} : Cell{0, dir};
      for (int k = 0; k < std::abs(delta); ++k) {
        if (!push_step(s, m.x, m.y)) return false;
        plan.actions.push_back(m);
        plan.owner.push_back(static_cast<int>(oi));
      }
    }
    if (!(s.objects[oi] == target)) return false;
  }
  return true;
}

Episode push_episode(std::uint64_t seed, std::size_t n_objects) {
  Rng rng(seed);
  const int frames = 40;
  std::vector<Color> colors(kPalette.begin(), kPalette.end());
  for (int attempt = 0;; ++attempt) {
    require(attempt < 100000, ErrorKind::Numeric, "gridpush: generator failed to find a feasible episode");
    std::vector<Cell> starts, goals;
    auto place = [&](std::vector<Cell>& into) {
      for (int tries = 0; tries < 200; ++tries) {
        Cell c{uniform_int(rng, 1, kGrid - 3), uniform_int(rng, 1, kGrid - 3)};
        bool ok = true;
        for (const auto& o : into) ok = ok && !objects_overlap(o, c);
        if (ok) {
          into.push_back(c);
          return true;
        }
      }
      return false;
    };
    bool ok = true;
    for (std::size_t i = 0; i < n_objects && ok; ++i) ok = place(starts);
    for (std::size_t i = 0; i < n_objects && ok; ++i) ok = place(goals);
    if (!ok) continue;
    const int max_dist = n_objects == 2 ? 8 : 6;
    for (std::size_t i = 0; i < n_objects && ok; ++i) {
      const int d = std::abs(starts[i].x - goals[i].x) + std::abs(starts[i].y - goals[i].y);
      ok = d >= 3 && d <= max_dist;
    }
    if (!ok) continue;
    PushState s{kGrid, {}, starts};
    do {
      s.pusher = {uniform_int(rng, 0, kGrid - 1), uniform_int(rng, 0, kGrid - 1)};
    } while (std::any_of(starts.begin(), starts.end(), [&](const Cell& o) { return object_covers(o, s.pusher); }));

    std::vector<std::size_t> order(n_objects);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<bool> x_first(n_objects);
    for (std::size_t i = 0; i < n_objects; ++i) x_first[i] = uniform_int(rng, 0, 1) == 1;

    // Random order and leg orientation first; fall back to the others when pushes would collide.
    std::vector<std::vector<std::size_t>> orders{order};
    auto sorted = order;
    std::sort(sorted.begin(), sorted.end());
    do {
      if (sorted != order) orders.push_back(sorted);
    } while (std::next_permutation(sorted.begin(), sorted.end()));
    PushPlan plan;
    bool found = false;
    for (const auto& ord : orders) {
      for (std::size_t flip = 0; flip < (1u << n_objects) && !found; ++flip) {
        auto xf = x_first;
        for (std::size_t i = 0; i < n_objects; ++i)
          if (flip & (1u << i)) xf[i] = !xf[i];
        found = try_plan(s, goals, ord, xf, rng, plan) && static_cast<int>(plan.actions.size()) <= frames - 1;
      }
      if (found) break;
    }
    if (!found) continue;

    // Idle steps scattered uniformly over the gaps between actions.
    const std::size_t idle = static_cast<std::size_t>(frames - 1) - plan.actions.size();
    std::vector<std::size_t> per_gap(plan.actions.size() + 1, 0);
    for (std::size_t k = 0; k < idle; ++k)
      ++per_gap[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(plan.actions.size())))];
    PushPlan full;
    for (std::size_t a = 0; a <= plan.actions.size(); ++a) {
      for (std::size_t k = 0; k < per_gap[a]; ++k) {
        full.actions.push_back({0, 0});
        full.owner.push_back(-1);
      }
      if (a < plan.actions.size()) {
        full.actions.push_back(plan.actions[a]);
        full.owner.push_back(plan.owner[a]);
      }
    }

    std::shuffle(colors.begin(), colors.end(), rng);
    Episode e;
    PushState cur = s;
    for (int t = 0; t < frames; ++t) {
      if (t > 0) push_step(cur, full.actions[static_cast<std::size_t>(t - 1)].x, full.actions[static_cast<std::size_t>(t - 1)].y);
      Canvas cv(kBackground);
      for (std::size_t i = 0; i < n_objects; ++i)
        cv.rect(cur.objects[i].x, cur.objects[i].y, kObjectSize, kObjectSize, colors[i]);
      cv.rect(cur.pusher.x, cur.pusher.y, 1, 1, kGripper);
      cv.append_to(e.frames);
      std::vector<Cell> pos{cur.pusher};
      pos.insert(pos.end(), cur.objects.begin(), cur.objects.end());
      e.positions.push_back(pos);
    }
    require(cur.objects == goals, ErrorKind::Numeric, "gridpush: plan replay missed the goals");

    // Frame f follows f actions; object i is in transit strictly after its first push action and
    // up to its last one.
    std::vector<int> first(n_objects, -1), last(n_objects, -1);
    for (std::size_t a = 0; a < full.owner.size(); ++a) {
      const int o = full.owner[a];
      if (o < 0) continue;
      if (first[static_cast<std::size_t>(o)] < 0) first[static_cast<std::size_t>(o)] = static_cast<int>(a);
      last[static_cast<std::size_t>(o)] = static_cast<int>(a);
    }
    for (int f = 0; f < frames; ++f) {
      bool any_done = false, any_waiting = false, moving = false;
      for (std::size_t i = 0; i < n_objects; ++i) {
        if (f <= first[i]) any_waiting = true;
        else if (f > last[i]) any_done = true;
        else moving = true;
      }
      if (any_done && any_waiting && !moving) e.bottlenecks.push_back(static_cast<std::size_t>(f));
    }
    return e;
  }
}

// ---------------------------------------------------------------- Maze

bool in_room(Cell c, bool left) {
  if (c.y < 0 || c.y >= kGrid) return false;
  return left ? c.x >= 0 && c.x < kWallX : c.x > kWallX && c.x < kGrid;
}

Episode maze_episode(std::uint64_t seed) {
  Rng rng(seed);
  const int frames = 20, steps = frames - 1;
  for (int attempt = 0;; ++attempt) {
    require(attempt < 10000, ErrorKind::Numeric, "maze: generator failed to find a feasible episode");
    const bool start_left = uniform_int(rng, 0, 1) == 1;
    auto random_cell = [&](bool left) {
      return left ? Cell{uniform_int(rng, 0, kWallX - 1), uniform_int(rng, 0, kGrid - 1)}
                  : Cell{uniform_int(rng, kWallX + 1, kGrid - 1), uniform_int(rng, 0, kGrid - 1)};
    };
    const Cell start = random_cell(start_left), goal = random_cell(!start_left);
    const int d1 = chebyshev(start, kDoor), d2 = chebyshev(kDoor, goal);
    if (d1 + d2 > steps) continue;
    const int t_door = uniform_int(rng, d1, steps - d2);
    auto a = conditioned_walk(start, kDoor, t_door, rng, [&](Cell c) { return in_room(c, start_left); });
    auto b = conditioned_walk(kDoor, goal, steps - t_door, rng, [&](Cell c) { return in_room(c, !start_left); });
    if (a.empty() || b.empty()) continue;
    std::vector<Cell> path(a.begin(), a.end());
    path.insert(path.end(), b.begin() + 1, b.end());

    Episode e;
    for (const auto& p : path) {
      Canvas cv(kBackground);
      cv.rect(kWallX, 0, 1, kGrid, kWall);
      cv.rect(kDoor.x, kDoor.y, 1, 1, kBackground);
      cv.rect(p.x, p.y, 1, 1, kAgent);
      cv.append_to(e.frames);
      e.positions.push_back({p});
    }
    e.bottlenecks = {static_cast<std::size_t>(t_door)};
    return e;
  }
}

Dataset make(WorldId world, std::uint64_t seed, std::size_t n, std::size_t frames,
             const std::function<Episode(std::uint64_t)>& gen) {
  Dataset d;
  d.world = world;
  d.frames = frames;
  d.seed = seed;
  d.episodes.resize(n);
  parallel_for(n, [&](std::size_t i) { d.episodes[i] = gen(derive_seed(seed, i)); });
  return d;
}

}  // namespace

std::string world_name(WorldId id) {
  switch (id) {
    case WorldId::GridPick: return "gridpick";
    case WorldId::PickPlace: return "pickplace";
    case WorldId::GridPush: return "gridpush";
    case WorldId::Maze: return "maze";
  }
  fail(ErrorKind::Data, "unknown world id " + std::to_string(static_cast<int>(id)));
}

WorldId parse_world(const std::string& name) {
  for (auto id : {WorldId::GridPick, WorldId::PickPlace, WorldId::GridPush, WorldId::Maze})
    if (world_name(id) == name) return id;
  fail(ErrorKind::Config, "unknown world '" + name + "' (gridpick, pickplace, gridpush, maze)");
}

ad::Tensor Dataset::frame(std::size_t episode, std::size_t t) const {
  require(episode < episodes.size() && t < frames, ErrorKind::Argument, "frame index out of range");
  const auto& f = episodes[episode].frames;
  const auto begin = f.begin() + static_cast<std::ptrdiff_t>(t * frame_numel());
  return ad::Tensor::from({channels, height, width}, std::vector<double>(begin, begin + static_cast<std::ptrdiff_t>(frame_numel())));
}

Dataset gen_gridpick(std::uint64_t seed, std::size_t n, bool pick_and_place) {
  return make(pick_and_place ? WorldId::PickPlace : WorldId::GridPick, seed, n, pick_and_place ? 20 : 15,
              [=](std::uint64_t s) { return pick_episode(s, pick_and_place); });
}

Dataset gen_gridpush(std::uint64_t seed, std::size_t n, std::size_t n_objects) {
  require(n_objects == 2 || n_objects == 3, ErrorKind::Config, "gridpush supports 2 or 3 objects");
  return make(WorldId::GridPush, seed, n, 40, [=](std::uint64_t s) { return push_episode(s, n_objects); });
}

Dataset gen_maze(std::uint64_t seed, std::size_t n) {
  return make(WorldId::Maze, seed, n, 20, [](std::uint64_t s) { return maze_episode(s); });
}

Dataset generate(WorldId world, std::uint64_t seed, std::size_t n, std::size_t n_objects) {
  switch (world) {
    case WorldId::GridPick: return gen_gridpick(seed, n, false);
    case WorldId::PickPlace: return gen_gridpick(seed, n, true);
    case WorldId::GridPush: return gen_gridpush(seed, n, n_objects);
    case WorldId::Maze: return gen_maze(seed, n);
  }
  fail(ErrorKind::Config, "unknown world");
}

std::vector<std::size_t> bottleneck_predicate(const Dataset& d, const Episode& e) {
  std::vector<std::size_t> out;
  const auto& pos = e.positions;
  for (std::size_t t = 0; t < pos.size(); ++t) {
    bool hit = false;
    switch (d.world) {
      case WorldId::GridPick:
      case WorldId::PickPlace:
        hit = objects_overlap(pos[t][0], pos[t][1]) && pos[t][1].y == kTableRestY;
        break;
      case WorldId::GridPush: {
        bool at_start = false, at_goal = false, elsewhere = false;
        for (std::size_t i = 1; i < pos[t].size(); ++i) {
          if (pos[t][i] == pos.front()[i]) at_start = true;
          else if (pos[t][i] == pos.back()[i]) at_goal = true;
          else elsewhere = true;
        }
        hit = at_start && at_goal && !elsewhere;
        break;
      }
      case WorldId::Maze:
        hit = pos[t][0] == kDoor;
        break;
    }
    if (hit) out.push_back(t);
  }
  return out;
}

bool is_test_episode(std::size_t index) { return mix64(index) % 100 < 5; }

std::vector<std::size_t> split_indices(const Dataset& d, bool test) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < d.episodes.size(); ++i)
    if (is_test_episode(i) == test) out.push_back(i);
  return out;
}

}  // namespace tap::worlds
