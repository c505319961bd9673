// SPDX-License-Identifier: Apache-2.0

#include "rsr/frozenlake/env.hpp"

#include <algorithm>
#include <deque>
#include <limits>
#include <sstream>

#include "rsr/numerics/rng.hpp"
#include "rsr/numerics/tensor.hpp"

namespace rsr::frozenlake {

namespace {

constexpr std::array<std::pair<int, int>, kActions> kDelta{{{-1, 0}, {1, 0}, {0, -1}, {0, 1}}};

std::size_t idx(const LakeMap& m, Pos p) { return static_cast<std::size_t>(p.row * m.size + p.col); }

}  // namespace

char action_char(Action a) { return "UDLR"[static_cast<int>(a)]; }

std::string action_name(Action a) {
  static const char* names[] = {"up", "down", "left", "right"};
  return names[static_cast<int>(a)];
}

std::size_t LakeMap::holes() const { return static_cast<std::size_t>(std::count(cells.begin(), cells.end(), Cell::Hole)); }

std::string LakeMap::to_text() const {
  std::string out;
  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size; ++c) {
      switch (at({r, c})) {
        case Cell::Ice: out += '.'; break;
        case Cell::Hole: out += 'H'; break;
        case Cell::Start: out += 'S'; break;
        case Cell::Goal: out += 'G'; break;
      }
    }
    out += '\n';
  }
  return out;
}

LakeMap LakeMap::from_text(const std::string& text) {
  std::vector<std::string> rows;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) rows.push_back(line);
  }
  if (rows.empty()) throw std::invalid_argument("map text is empty");
  LakeMap m;
  m.size = static_cast<int>(rows.size());
  int starts = 0, goals = 0;
  for (int r = 0; r < m.size; ++r) {
    if (static_cast<int>(rows[static_cast<std::size_t>(r)].size()) != m.size)
      throw std::invalid_argument("map row " + std::to_string(r + 1) + " has length " +
                                  std::to_string(rows[static_cast<std::size_t>(r)].size()) + ", expected " +
                                  std::to_string(m.size));
    for (int c = 0; c < m.size; ++c) {
      const char ch = rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
      switch (ch) {
        case '.': m.cells.push_back(Cell::Ice); break;
        case 'H': m.cells.push_back(Cell::Hole); break;
        case 'S': m.cells.push_back(Cell::Start); m.start = {r, c}; ++starts; break;
        case 'G': m.cells.push_back(Cell::Goal); m.goal = {r, c}; ++goals; break;
        default: throw std::invalid_argument(std::string("unknown map character '") + ch + "'");
      }
    }
  }
  if (starts != 1 || goals != 1) throw std::invalid_argument("map needs exactly one S and one G");
  return m;
}

Pos step(const LakeMap& map, Pos p, Action a) {
  const auto [dr, dc] = kDelta[static_cast<std::size_t>(a)];
  Pos n{p.row + dr, p.col + dc};
  return map.inside(n) ? n : p;
}

std::vector<int> goal_distances(const LakeMap& map) {
  std::vector<int> dist(map.cells.size(), -1);
  std::deque<Pos> queue{map.goal};
  dist[idx(map, map.goal)] = 0;
  while (!queue.empty()) {
    const Pos p = queue.front();
    queue.pop_front();
    for (auto [dr, dc] : kDelta) {
      const Pos n{p.row + dr, p.col + dc};
      if (!map.inside(n) || map.at(n) == Cell::Hole || dist[idx(map, n)] >= 0) continue;
      dist[idx(map, n)] = dist[idx(map, p)] + 1;
      queue.push_back(n);
    }
  }
  return dist;
}

std::optional<Action> policy_action(const LakeMap& map, const std::vector<int>& distances, Pos p) {
  const int d = distances[idx(map, p)];
  if (d < 0) throw UnsolvableMap("goal unreachable from (" + std::to_string(p.row) + "," + std::to_string(p.col) + ")");
  if (d == 0) return std::nullopt;
  for (Action a : kAllActions) {
    const Pos n = step(map, p, a);
    if (distances[idx(map, n)] == d - 1) return a;
  }
  throw UnsolvableMap("inconsistent distance table");
}

std::vector<Action> bfs_plan(const LakeMap& map) {
  const auto dist = goal_distances(map);
  std::vector<Action> plan;
  Pos p = map.start;
  while (auto a = policy_action(map, dist, p)) {
    plan.push_back(*a);
    p = step(map, p, *a);
  }
  return plan;
}

bool solvable(const LakeMap& map) { return goal_distances(map)[idx(map, map.start)] >= 0; }

std::vector<LakeMap> generate_maps(int size, std::size_t count, double hole_density, std::uint64_t seed,
                                   std::size_t max_holes) {
  if (size < 2) throw ConfigError("map size must be at least 2");
  if (!(hole_density >= 0.0 && hole_density <= 0.4)) throw ConfigError("hole density must be in [0, 0.4]");
  const Rng root(seed);
  const auto n = static_cast<std::uint64_t>(size * size);
  std::vector<LakeMap> maps;
  maps.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng = root.split(i);
    for (;;) {
      LakeMap m;
      m.size = size;
      m.cells.assign(static_cast<std::size_t>(n), Cell::Ice);
      const auto s = rng.below(n);
      auto g = rng.below(n - 1);
      if (g >= s) ++g;
      m.start = {static_cast<int>(s) / size, static_cast<int>(s) % size};
      m.goal = {static_cast<int>(g) / size, static_cast<int>(g) % size};
      for (std::uint64_t c = 0; c < n; ++c) {
        const double u = rng.uniform();
        if (c != s && c != g && u < hole_density) m.cells[c] = Cell::Hole;
      }
      m.cells[s] = Cell::Start;
      m.cells[g] = Cell::Goal;
      if (m.holes() <= max_holes && solvable(m)) {
        maps.push_back(std::move(m));
        break;
      }
    }
  }
  return maps;
}

std::vector<double> render(const LakeMap& map, Pos agent, const RenderSpec& spec) {
  if (spec.cell_px < 3) throw ConfigError("cell_px must be at least 3");
  const auto cp = spec.cell_px, w = static_cast<std::size_t>(map.size) * cp;
  std::vector<double> frame(w * w);
  for (int r = 0; r < map.size; ++r) {
    for (int c = 0; c < map.size; ++c) {
      double v = spec.ice;
      switch (map.at({r, c})) {
        case Cell::Hole: v = spec.hole; break;
        case Cell::Goal: v = spec.goal; break;
        case Cell::Start: v = spec.start; break;
        case Cell::Ice: break;
      }
      const bool here = Pos{r, c} == agent;
      for (std::size_t y = 0; y < cp; ++y) {
        for (std::size_t x = 0; x < cp; ++x) {
          const bool inner = y >= 1 && x >= 1 && y + 1 < cp && x + 1 < cp;
          frame[(static_cast<std::size_t>(r) * cp + y) * w + static_cast<std::size_t>(c) * cp + x] =
              here && inner ? spec.agent : v;
        }
      }
    }
  }
  return frame;
}

Pos locate_agent(const std::vector<double>& frame, int size, const RenderSpec& spec) {
  const auto cp = spec.cell_px, w = static_cast<std::size_t>(size) * cp;
  if (frame.size() != w * w) throw ShapeError("locate_agent: frame size mismatch");
  Pos best;
  double best_err = std::numeric_limits<double>::infinity();
  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size; ++c) {
      double err = 0.0;
      for (std::size_t y = 1; y + 1 < cp; ++y)
        for (std::size_t x = 1; x + 1 < cp; ++x) {
          const double e = frame[(static_cast<std::size_t>(r) * cp + y) * w + static_cast<std::size_t>(c) * cp + x] - spec.agent;
          err += e * e;
        }
      if (err < best_err) {
        best_err = err;
        best = {r, c};
      }
    }
  }
  return best;
}

Rollout make_rollout(const LakeMap& map, double epsilon, std::uint64_t seed, std::size_t max_steps,
                     const RenderSpec& spec) {
  const auto dist = goal_distances(map);
  Rng rng(seed);
  Rollout r;
  r.map = map;
  Pos p = map.start;
  r.positions.push_back(p);
  r.frames.push_back(render(map, p, spec));
  while (r.actions.size() < max_steps) {
    auto best = policy_action(map, dist, p);
    if (!best) break;
    Action a = *best;
    if (rng.uniform() < epsilon) {
      std::vector<Action> safe;
      for (Action c : kAllActions)
        if (map.at(step(map, p, c)) != Cell::Hole) safe.push_back(c);
      a = safe[rng.below(safe.size())];
    }
    r.oracle.push_back(*best);
    r.actions.push_back(a);
    p = step(map, p, a);
    r.positions.push_back(p);
    r.frames.push_back(render(map, p, spec));
  }
  return r;
}

std::string validate_rollout(const Rollout& r) {
  const auto& m = r.map;
  if (r.positions.size() != r.actions.size() + 1 || r.oracle.size() != r.actions.size() ||
      r.frames.size() != r.positions.size())
    return "inconsistent rollout lengths";
  if (!(r.positions.front() == m.start)) return "rollout does not begin at the start";
  // independent oracle: plain BFS from each position with path lengths
  auto shortest = [&](Pos from) {
    std::vector<int> d(m.cells.size(), -1);
    std::deque<Pos> q{from};
    d[idx(m, from)] = 0;
    while (!q.empty()) {
      Pos p = q.front();
      q.pop_front();
      if (p == m.goal) return d[idx(m, p)];
      for (Action a : kAllActions) {
        Pos n = step(m, p, a);
        if (m.at(n) == Cell::Hole || d[idx(m, n)] >= 0) continue;
        d[idx(m, n)] = d[idx(m, p)] + 1;
        q.push_back(n);
      }
    }
    return -1;
  };
  for (std::size_t i = 0; i < r.actions.size(); ++i) {
    const Pos p = r.positions[i];
    if (m.at(p) == Cell::Hole) return "rollout visits a hole at step " + std::to_string(i);
    if (!(step(m, p, r.actions[i]) == r.positions[i + 1])) return "position " + std::to_string(i + 1) + " does not follow its action";
    const int here = shortest(p);
    const Pos n = step(m, p, r.oracle[i]);
    if (here <= 0 || m.at(n) == Cell::Hole || shortest(n) != here - 1)
      return "oracle label at step " + std::to_string(i) + " is not on a shortest path";
    for (Action a : kAllActions) {
      if (a == r.oracle[i]) break;
      const Pos e = step(m, p, a);
      if (m.at(e) != Cell::Hole && shortest(e) == here - 1)
        return "oracle label at step " + std::to_string(i) + " breaks the tie order";
    }
  }
  if (m.at(r.positions.back()) == Cell::Hole) return "rollout ends in a hole";
  return {};
}

}  // namespace rsr::frozenlake
