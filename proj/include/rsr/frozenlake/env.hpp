// SPDX-License-Identifier: Apache-2.0
//
// Deterministic grid lake: maps, shortest-path oracle, rendering, rollouts.

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace rsr::frozenlake {

enum class Cell : std::uint8_t { Ice, Hole, Start, Goal };

/// Declaration order is the tie-break order of the planner.
enum class Action : std::uint8_t { Up, Down, Left, Right };
inline constexpr std::size_t kActions = 4;
inline constexpr std::array<Action, kActions> kAllActions{Action::Up, Action::Down, Action::Left, Action::Right};

char action_char(Action a);
std::string action_name(Action a);

struct Pos {
  int row = 0, col = 0;
  bool operator==(const Pos&) const = default;
};

class UnsolvableMap : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LakeMap {
  int size = 0;
  std::vector<Cell> cells;  // row-major
  Pos start, goal;

  Cell at(Pos p) const { return cells[static_cast<std::size_t>(p.row * size + p.col)]; }
  bool inside(Pos p) const { return p.row >= 0 && p.col >= 0 && p.row < size && p.col < size; }
  std::size_t holes() const;

  /// Rows of S/G/H/. separated by newlines, trailing newline included.
  std::string to_text() const;
  /// Throws std::invalid_argument on ragged rows, unknown characters or a
  /// start/goal count other than one.
  static LakeMap from_text(const std::string& text);

  bool operator==(const LakeMap&) const = default;
};

/// Moves one cell, clamped at the walls.
Pos step(const LakeMap& map, Pos p, Action a);

/// Shortest hole-free distance from every cell to the goal; -1 if unreachable.
std::vector<int> goal_distances(const LakeMap& map);

/// Action taken from `p` on the shortest path: the first action in
/// Up < Down < Left < Right order that reduces the distance to the goal.
/// nullopt at the goal. Throws UnsolvableMap if the goal is unreachable.
std::optional<Action> policy_action(const LakeMap& map, const std::vector<int>& distances, Pos p);

/// Shortest hole-avoiding plan from the start. Throws UnsolvableMap.
std::vector<Action> bfs_plan(const LakeMap& map);

bool solvable(const LakeMap& map);

/// Random solvable maps. Each cell except start and goal is a hole with
/// probability `hole_density`; draws with more than `max_holes` holes or no
/// path are redrawn. Map i uses a stream derived from (seed, i).
std::vector<LakeMap> generate_maps(int size, std::size_t count, double hole_density, std::uint64_t seed,
                                   std::size_t max_holes = static_cast<std::size_t>(-1));

struct RenderSpec {
  std::size_t cell_px = 4;
  double ice = 0.0, hole = -1.0, goal = 1.0, start = -0.5, agent = 0.5;
};

/// [(G*cell_px) x (G*cell_px)] frame; the agent fills the cell interior.
std::vector<double> render(const LakeMap& map, Pos agent, const RenderSpec& spec = {});

/// Cell whose interior is closest to the agent colour.
Pos locate_agent(const std::vector<double>& frame, int size, const RenderSpec& spec = {});

struct Rollout {
  LakeMap map;
  std::vector<Pos> positions;     // actions.size() + 1
  std::vector<Action> actions;    // actions taken
  std::vector<Action> oracle;     // policy action at positions[i]
  std::vector<std::vector<double>> frames;  // one per position

  std::size_t length() const { return actions.size(); }
};

/// Walks the policy from the start; with probability `epsilon` a step is
/// instead a uniformly drawn action that does not enter a hole. Stops at the
/// goal or after `max_steps` actions.
Rollout make_rollout(const LakeMap& map, double epsilon, std::uint64_t seed, std::size_t max_steps,
                     const RenderSpec& spec = {});

/// Checks positions follow actions, no hole is visited and every oracle
/// label matches an independent BFS. Returns an empty string when valid.
std::string validate_rollout(const Rollout& r);

}  // namespace rsr::frozenlake
