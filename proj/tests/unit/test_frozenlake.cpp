// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <functional>
#include <set>

#include "rsr/frozenlake/env.hpp"
#include "rsr/frozenlake/planner.hpp"
#include "rsr/numerics/rng.hpp"

using namespace rsr;
using namespace rsr::frozenlake;

namespace {

// Shortest path length by exhaustive search over simple paths.
int exhaustive_shortest(const LakeMap& m) {
  int best = -1;
  std::vector<bool> visited(m.cells.size(), false);
  std::function<void(Pos, int)> dfs = [&](Pos p, int depth) {
    if (p == m.goal) {
      if (best < 0 || depth < best) best = depth;
      return;
    }
    visited[static_cast<std::size_t>(p.row * m.size + p.col)] = true;
    const int dr[] = {-1, 1, 0, 0}, dc[] = {0, 0, -1, 1};
    for (int a = 0; a < 4; ++a) {
      Pos n{p.row + dr[a], p.col + dc[a]};
      if (!m.inside(n) || m.at(n) == Cell::Hole || visited[static_cast<std::size_t>(n.row * m.size + n.col)]) continue;
      dfs(n, depth + 1);
    }
    visited[static_cast<std::size_t>(p.row * m.size + p.col)] = false;
  };
  dfs(m.start, 0);
  return best;
}

}  // namespace

TEST(LakeMapText, RoundTripAndErrors) {
  const std::string t = "S..H\n.H..\n....\n...G\n";
  auto m = LakeMap::from_text(t);
  EXPECT_EQ(m.size, 4);
  EXPECT_EQ(m.start, (Pos{0, 0}));
  EXPECT_EQ(m.goal, (Pos{3, 3}));
  EXPECT_EQ(m.holes(), 2u);
  EXPECT_EQ(m.to_text(), t);
  EXPECT_THROW(LakeMap::from_text("S.\n.G.\n"), std::invalid_argument);
  EXPECT_THROW(LakeMap::from_text("S.\n.X\n"), std::invalid_argument);
  EXPECT_THROW(LakeMap::from_text("S.\n..\n"), std::invalid_argument);
  EXPECT_THROW(LakeMap::from_text("SG\nG.\n"), std::invalid_argument);
}

TEST(Environment, StepClampsAtWalls) {
  auto m = LakeMap::from_text("S.\n.G\n");
  EXPECT_EQ(step(m, {0, 0}, Action::Up), (Pos{0, 0}));
  EXPECT_EQ(step(m, {0, 0}, Action::Left), (Pos{0, 0}));
  EXPECT_EQ(step(m, {0, 0}, Action::Right), (Pos{0, 1}));
  EXPECT_EQ(step(m, {1, 1}, Action::Down), (Pos{1, 1}));
  EXPECT_EQ(step(m, {1, 1}, Action::Up), (Pos{0, 1}));
}

TEST(Environment, MovesAreSingleCells) {
  auto maps = generate_maps(5, 20, 0.2, 3);
  for (const auto& m : maps)
    for (int r = 0; r < m.size; ++r)
      for (int c = 0; c < m.size; ++c)
        for (Action a : kAllActions) {
          Pos n = step(m, {r, c}, a);
          EXPECT_LE(std::abs(n.row - r) + std::abs(n.col - c), 1);
        }
}

TEST(BfsPlan, StartAtGoalIsEmpty) {
  auto m = LakeMap::from_text("S.\n.G\n");
  m.start = m.goal;
  EXPECT_TRUE(bfs_plan(m).empty());
}

TEST(BfsPlan, CorridorIsRepeatedMove) {
  auto m = LakeMap::from_text("S..G\nHHHH\n....\n....\n");
  EXPECT_EQ(bfs_plan(m), (std::vector<Action>{Action::Right, Action::Right, Action::Right}));
}

TEST(BfsPlan, TieOrderPrefersUpThenDownThenLeft) {
  // goal up-left: both Up and Left are shortest; Up wins
  auto m = LakeMap::from_text("G...\n....\n..S.\n....\n");
  auto plan = bfs_plan(m);
  EXPECT_EQ(plan, (std::vector<Action>{Action::Up, Action::Up, Action::Left, Action::Left}));
  auto d = LakeMap::from_text("....\n.S..\n....\n...G\n");
  EXPECT_EQ(bfs_plan(d).front(), Action::Down);
}

TEST(BfsPlan, MatchesExhaustiveSearchWithOneHole) {
  auto maps = generate_maps(4, 200, 0.1, 8, 1);
  int checked = 0;
  for (const auto& m : maps) {
    if (m.holes() != 1) continue;
    EXPECT_EQ(static_cast<int>(bfs_plan(m).size()), exhaustive_shortest(m)) << m.to_text();
    ++checked;
  }
  EXPECT_GT(checked, 20);
}

TEST(BfsPlan, UnsolvableMapThrows) {
  auto m = LakeMap::from_text("S.H.\nHH..\n....\n...G\n");
  EXPECT_FALSE(solvable(m));
  EXPECT_THROW(bfs_plan(m), UnsolvableMap);
}

TEST(GenerateMaps, NoHolesWhenDensityZero) {
  for (const auto& m : generate_maps(4, 30, 0.0, 1)) {
    EXPECT_EQ(m.holes(), 0u);
    EXPECT_TRUE(solvable(m));
    EXPECT_FALSE(m.start == m.goal);
  }
}

TEST(GenerateMaps, ReproducibleAndSolvable) {
  auto a = generate_maps(4, 50, 0.3, 9, 2);
  auto b = generate_maps(4, 50, 0.3, 9, 2);
  EXPECT_EQ(a, b);
  for (const auto& m : a) {
    EXPECT_GE(exhaustive_shortest(m), 1);
    EXPECT_LE(m.holes(), 2u);
  }
  EXPECT_NE(a, generate_maps(4, 50, 0.3, 10, 2));
}

TEST(GenerateMaps, RejectsDensityOutOfRange) {
  EXPECT_THROW(generate_maps(4, 1, 0.5, 1), ConfigError);
  EXPECT_THROW(generate_maps(4, 1, -0.1, 1), ConfigError);
  EXPECT_THROW(generate_maps(1, 1, 0.1, 1), ConfigError);
}

TEST(Render, PaletteAndAgentOverlay) {
  auto m = LakeMap::from_text("SH\n.G\n");
  auto f = render(m, {1, 0});
  ASSERT_EQ(f.size(), 64u);
  EXPECT_EQ(f[0], -0.5);           // start border
  EXPECT_EQ(f[4], -1.0);           // hole
  EXPECT_EQ(f[4 * 8 + 4], 1.0);    // goal
  EXPECT_EQ(f[5 * 8 + 1], 0.5);    // agent interior
  EXPECT_EQ(f[4 * 8 + 0], 0.0);    // ice border around the agent
  EXPECT_EQ(locate_agent(f, 2), (Pos{1, 0}));
}

TEST(Render, InjectiveOverMapSet) {
  auto maps = generate_maps(4, 60, 0.2, 4, 2);
  std::set<std::vector<double>> frames;
  std::size_t pairs = 0;
  std::set<std::string> texts;
  for (const auto& m : maps) {
    if (!texts.insert(m.to_text()).second) continue;
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c) {
        if (m.at({r, c}) == Cell::Hole) continue;
        frames.insert(render(m, {r, c}));
        ++pairs;
        EXPECT_EQ(locate_agent(render(m, {r, c}), 4), (Pos{r, c}));
      }
  }
  EXPECT_EQ(frames.size(), pairs);
}

TEST(Rollouts, GreedyRolloutFollowsPlan) {
  for (const auto& m : generate_maps(4, 40, 0.2, 5, 2)) {
    auto r = make_rollout(m, 0.0, 1, 64);
    EXPECT_EQ(r.actions, bfs_plan(m));
    EXPECT_EQ(r.oracle, r.actions);
    EXPECT_EQ(r.positions.back(), m.goal);
    EXPECT_EQ(validate_rollout(r), "");
  }
}

TEST(Rollouts, DetoursAreValidAndLabelled) {
  std::size_t detours = 0;
  auto maps = generate_maps(4, 200, 0.2, 6, 2);
  for (std::size_t i = 0; i < maps.size(); ++i) {
    auto r = make_rollout(maps[i], 0.2, i, 64);
    EXPECT_EQ(validate_rollout(r), "") << maps[i].to_text();
    for (std::size_t s = 0; s < r.length(); ++s) detours += r.actions[s] != r.oracle[s] ? 1 : 0;
    for (const auto& p : r.positions) EXPECT_NE(maps[i].at(p), Cell::Hole);
  }
  EXPECT_GT(detours, 20u);
}

TEST(Rollouts, ValidatorCatchesBadLabels) {
  auto m = LakeMap::from_text("S..G\n....\n....\n....\n");
  auto r = make_rollout(m, 0.0, 1, 64);
  r.oracle[0] = Action::Down;
  EXPECT_NE(validate_rollout(r), "");
  r = make_rollout(m, 0.0, 1, 64);
  r.positions[2] = {2, 2};
  EXPECT_NE(validate_rollout(r), "");
}

TEST(Planner, RequiresFourExperts) {
  PlannerConfig c;
  c.experts = 3;
  EXPECT_THROW(Planner::init(c, 1), ConfigError);
}

TEST(Planner, UntrainedDecoderPredictsZero) {
  PlannerConfig c;
  auto p = Planner::init(c, 1);
  auto maps = generate_maps(4, 10, 0.2, 1, 2);
  std::vector<Rollout> ro;
  double sq = 0.0;
  long n = 0;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    ro.push_back(make_rollout(maps[i], 0.0, i, 64));
    for (std::size_t s = 1; s < ro.back().frames.size(); ++s)
      for (double v : ro.back().frames[s]) {
        sq += v * v;
        ++n;
      }
  }
  EXPECT_NEAR(evaluate_decoder(p, ro), sq / static_cast<double>(n), 1e-12);
}

TEST(Planner, DecoderMemorisesOneRollout) {
  PlannerConfig c;
  c.dim = 32;
  c.encoder_layers = 1;
  auto p = Planner::init(c, 2);
  auto m = LakeMap::from_text("S.H.\n....\n.H..\n...G\n");
  std::vector<Rollout> ro{make_rollout(m, 0.0, 1, 64)};
  PlannerTrainConfig tc;
  tc.steps = 300;
  tc.batch = 1;
  tc.optim.lr = 3e-3;
  train_planner(p, ro, tc);
  EXPECT_LT(evaluate_decoder(p, ro), 0.01);
}

TEST(Planner, TwoByTwoAdjacentGoalIsOneStep) {
  PlannerConfig c;
  c.grid = 2;
  c.dim = 32;
  c.encoder_layers = 2;
  auto p = Planner::init(c, 3);
  std::vector<Rollout> ro;
  std::vector<LakeMap> maps;
  for (int s = 0; s < 4; ++s)
    for (int g = 0; g < 4; ++g) {
      if (s == g) continue;
      LakeMap m;
      m.size = 2;
      m.cells.assign(4, Cell::Ice);
      m.cells[static_cast<std::size_t>(s)] = Cell::Start;
      m.cells[static_cast<std::size_t>(g)] = Cell::Goal;
      m.start = {s / 2, s % 2};
      m.goal = {g / 2, g % 2};
      maps.push_back(m);
      ro.push_back(make_rollout(m, 0.0, 0, 8));
    }
  PlannerTrainConfig tc;
  tc.steps = 400;
  tc.batch = 8;
  tc.optim.lr = 3e-3;
  train_planner(p, ro, tc);
  for (const auto& m : maps) {
    auto plan = bfs_plan(m);
    if (plan.size() != 1) continue;
    auto res = plan_and_decode(p, m);
    EXPECT_EQ(res.outcome, Outcome::Goal) << m.to_text();
    EXPECT_EQ(res.actions, plan) << m.to_text();
    EXPECT_EQ(res.frames.size(), 1u);
  }
}

TEST(Planner, PlanIsLegalAndTerminates) {
  PlannerConfig c;
  c.dim = 16;
  c.heads = 2;
  c.encoder_layers = 1;
  auto p = Planner::init(c, 4);
  for (const auto& m : generate_maps(4, 5, 0.2, 2, 2)) {
    auto res = plan_and_decode(p, m);
    ASSERT_EQ(res.positions.size(), res.actions.size() + 1);
    EXPECT_LE(res.actions.size(), static_cast<std::size_t>(c.step_cap()));
    for (std::size_t i = 0; i < res.actions.size(); ++i)
      EXPECT_EQ(res.positions[i + 1], step(m, res.positions[i], res.actions[i]));
    if (res.outcome == Outcome::NoPlan) EXPECT_EQ(res.actions.size(), static_cast<std::size_t>(c.step_cap()));
  }
}

TEST(Planner, ConfusionDominanceCheck) {
  GateEvaluation ev;
  for (std::size_t i = 0; i < 4; ++i) ev.confusion[i][i] = 5;
  ev.confusion[0][1] = 4;
  EXPECT_TRUE(ev.diagonal_dominant());
  ev.confusion[2][3] = 5;
  EXPECT_FALSE(ev.diagonal_dominant());
}

TEST(Planner, SummaryCountsFailures) {
  std::vector<PlanResult> r(4);
  r[0].outcome = Outcome::Goal;
  r[1].outcome = Outcome::Hole;
  r[2].outcome = Outcome::Goal;
  r[3].outcome = Outcome::NoPlan;
  auto s = summarize_plans(r);
  EXPECT_EQ(s.goal_rate, 0.5);
  EXPECT_EQ(s.failures, (std::vector<std::size_t>{1, 3}));
}
