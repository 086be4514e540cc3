#include <cmath>
#include <random>
#include <sstream>

#include "doctest.h"
#include "tabular_mdp.hpp"
#include "texopt/gsh.hpp"
#include "texopt/process_env.hpp"

using namespace texopt;

namespace {

EnvConfig small_config() {
  EnvConfig c;
  c.horizon = 5;
  c.bins = 128;
  c.crystals = 20;
  return c;
}

// Target reached by two stretches along the first action rotation.
Goal stretched_goal(ProcessEnv& env) {
  env.set_goal(env.encode_goal(env.initial_texture()));
  env.reset();
  env.step(0);
  env.step(0);
  return env.encode_goal(*env.state().texture);
}

}  // namespace

TEST_SUITE("process_env") {
  TEST_CASE("action ids map to signed stretches and the no-op") {
    const ActionSpace a = ActionSpace::standard();
    CHECK(a.size() == 201);
    CHECK(a.action(0).f == doctest::Approx(0.02));
    CHECK(a.action(0).rotation == a.rotations()[0]);
    CHECK(a.action(150).f == doctest::Approx(-0.02));
    CHECK(a.action(150).rotation == a.rotations()[50]);
    CHECK(a.action(200).f == 0.0);
    CHECK(ActionSpace::is_noop(200));
    CHECK_THROWS_AS((void)a.action(201), std::out_of_range);
    CHECK_THROWS_AS((void)a.action(-1), std::out_of_range);
  }

  TEST_CASE("shipped action rotations match regeneration") {
    const auto shipped = OrientationGrid::load(TEXOPT_DATA_DIR "/action_rotations.txt");
    const auto& fresh = ActionSpace::standard().rotations();
    REQUIRE(shipped.size() == fresh.size());
    for (std::size_t i = 0; i < fresh.size(); ++i) CHECK(shipped[i] == fresh[i]);
  }

  TEST_CASE("config validation names the key") {
    EnvConfig c = small_config();
    c.horizon = 0;
    CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("K"), std::invalid_argument);
    c = small_config();
    c.neighbors = 0;
    CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("k"), std::invalid_argument);
    c = small_config();
    c.gamma = 1.5;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  }

  TEST_CASE("reset is deterministic and starts at zero strain") {
    ProcessEnv env(small_config());
    const auto a = env.reset(1);
    const auto b = env.reset(99);
    CHECK(a.features == b.features);
    REQUIRE(a.features.size() == kStateFeatureCount);
    CHECK(a.features[42] == 0.0);
    CHECK(a.features[43] == 0.0);
    CHECK(a.t == 0);
    ProcessEnv other(small_config());
    CHECK(other.reset(5).features == a.features);
  }

  TEST_CASE("stepping needs a goal and stops after done") {
    ProcessEnv env(small_config());
    env.reset();
    CHECK_THROWS_AS(env.step(200), InvalidState);
    env.set_goal(env.encode_goal(env.initial_texture()));
    env.reset();
    for (int t = 0; t < 5; ++t) {
      const auto r = env.step(200);
      CHECK(r.done == (t == 4));
    }
    CHECK(env.done());
    const auto before = env.state().features;
    CHECK_THROWS_AS(env.step(200), InvalidState);
    CHECK(env.state().features == before);
  }

  TEST_CASE("no-op keeps the texture and gives zero shaped reward") {
    ProcessEnv env(small_config());
    env.set_goal(stretched_goal(env));
    env.reset();
    env.step(3);
    const auto before = env.state();
    const auto r = env.step(200);
    CHECK(r.shaped_reward == 0.0);
    CHECK(r.raw_reward == 0.0);
    CHECK_FALSE(r.done);
    CHECK(r.state.t == before.t + 1);
    CHECK(r.state.eq_strain == before.eq_strain);
    for (std::size_t i = 0; i < 42; ++i) CHECK(r.state.features[i] == before.features[i]);
    CHECK(r.state.features[42] == doctest::Approx(0.4));
  }

  TEST_CASE("shaped rewards telescope and the raw reward fires once") {
    ProcessEnv env(small_config());
    const Goal goal = stretched_goal(env);
    env.set_goal(goal);
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int> pick(0, 200);
    for (int episode = 0; episode < 3; ++episode) {
      auto s = env.reset();
      const double d0 = env.distance(*s.histogram, goal);
      double total = 0.0, prev_d = d0;
      int raw_nonzero = 0;
      StepResult last;
      while (!env.done()) {
        const int a = episode == 0 ? 200 - 200 * (env.state().t % 2) : pick(rng);
        last = env.step(a);
        total += last.shaped_reward;
        if (last.raw_reward != 0.0) ++raw_nonzero;
        if (!last.done) {
          CHECK(last.shaped_reward == doctest::Approx(1.0 / last.raw_distance - 1.0 / prev_d));
          CHECK(last.potential == doctest::Approx(1.0 / last.raw_distance));
        }
        prev_d = last.raw_distance;
      }
      CHECK(raw_nonzero == 1);
      CHECK(last.potential == 0.0);
      CHECK(last.raw_reward == doctest::Approx(1.0 / last.raw_distance));
      CHECK(std::abs(total - (1.0 / last.raw_distance - 1.0 / d0)) < 1e-9);
    }
  }

  TEST_CASE("replaying the generating path reaches the goal") {
    ProcessEnv env(small_config());
    const Goal goal = stretched_goal(env);
    env.set_goal(goal);
    env.reset();
    env.step(0);
    const auto r = env.step(0);
    CHECK(r.raw_distance == env.config().distance_floor);
  }

  TEST_CASE("memoized transitions are bitwise identical to fresh ones") {
    EnvConfig uncached = small_config();
    uncached.cache_entries = 0;
    ProcessEnv a(small_config()), b(uncached);
    const Goal ga = stretched_goal(a);
    const Goal gb = stretched_goal(b);
    a.set_goal(ga);
    b.set_goal(gb);
    for (int pass = 0; pass < 2; ++pass) {
      a.reset();
      b.reset();
      for (int act : {7, 120, 200, 7}) {
        const auto ra = a.step(act);
        const auto rb = b.step(act);
        CHECK(ra.state.features == rb.state.features);
        CHECK(ra.shaped_reward == rb.shaped_reward);
      }
    }
    CHECK(a.simulated_steps() < b.simulated_steps());
  }

  TEST_CASE("strain cap rejects the step and ends the episode") {
    EnvConfig c = small_config();
    c.strain_cap = 0.05;
    ProcessEnv env(c);
    env.set_goal(env.encode_goal(env.initial_texture()));
    env.reset();
    CHECK_FALSE(env.step(0).done);
    CHECK_FALSE(env.step(0).done);
    const auto before = env.state();
    const auto r = env.step(0);
    CHECK(r.done);
    CHECK(r.terminal_reason == "strain_cap");
    CHECK(r.state.eq_strain == before.eq_strain);
    CHECK(r.state.eq_strain <= 0.05);
    CHECK(r.shaped_reward == 0.0);
  }

  TEST_CASE("grey texture encodes to near-zero features") {
    ProcessEnv env(small_config());
    // GSH coefficients of the uniform ODF vanish for l > 0 by orthogonality
    const auto grey = WeightedOrientationSet::uniform_weights(cached_grid(512, 3)->orientations());
    const Goal g = env.encode_goal(grey);
    double worst = 0.0;
    for (double v : g.features) worst = std::max(worst, std::abs(v));
    CHECK(worst < 0.05);
    CHECK(env.encode_goal(grey).features == g.features);
  }

  TEST_CASE("distant targets have distinct features") {
    ProcessEnv env(small_config());
    const auto cube = WeightedOrientationSet::uniform_weights({Quaternion{}});
    const auto rotated = WeightedOrientationSet::uniform_weights(
        {Quaternion::from_axis_angle(Eigen::Vector3d(1, 1, 0).normalized(), 0.6)});
    const Goal a = env.encode_goal(cube), b = env.encode_goal(rotated);
    CHECK(chi_square_distance(a.histogram, b.histogram) > 1.2);
    double diff = 0.0;
    for (std::size_t i = 0; i < a.features.size(); ++i) diff += std::abs(a.features[i] - b.features[i]);
    CHECK(diff > 0.1);
  }

  TEST_CASE("episode log rows round-trip at 17 digits") {
    std::ostringstream out;
    write_episode_csv_header(out);
    EpisodeLogRow row;
    row.episode = 2;
    row.t = 7;
    row.action_id = 130;
    row.f = -0.02;
    row.rotation = Quaternion::normalized(0.3, 0.1, -0.7, 0.2);
    row.raw_distance = 1.0 / 3.0;
    row.shaped_reward = -0.1234567890123456789;
    row.eq_strain = 0.14;
    row.terminal_reason = "horizon";
    write_episode_csv_row(out, row);
    std::istringstream in(out.str());
    std::string header, line;
    std::getline(in, header);
    CHECK(header ==
          "episode,t,action_id,f,qw,qx,qy,qz,raw_distance,shaped_reward,eq_strain,terminal_reason");
    std::getline(in, line);
    std::vector<std::string> cells;
    std::stringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) cells.push_back(cell);
    REQUIRE(cells.size() == 12);
    CHECK(std::stod(cells[8]) == row.raw_distance);
    CHECK(std::stod(cells[9]) == row.shaped_reward);
    CHECK(std::stod(cells[4]) == row.rotation.w);
    CHECK(cells[11] == "horizon");
  }

  TEST_CASE("potential shaping keeps every optimal action set") {
    std::mt19937_64 rng(11);
    int with_ties = 0;
    for (int i = 0; i < 100; ++i) {
      const auto m = tabular::random_mdp(rng);
      CHECK(tabular::same_optimal_actions(m));
      const auto sol = tabular::solve(m);
      for (int s = 0; s < m.states; ++s) {
        if (m.terminal(s)) continue;
        if (sol.greedy[s].size() > 1) ++with_ties;
        CHECK(tabular::solve(tabular::shaped(m)).value[s] == sol.value[s] - m.potential[s]);
      }
    }
    CHECK(with_ties > 0);
  }

  TEST_CASE("non-potential reward changes do alter optimal actions") {
    std::mt19937_64 rng(12);
    int changed = 0;
    for (int i = 0; i < 100; ++i) {
      auto m = tabular::random_mdp(rng);
      const auto base = tabular::solve(m);
      auto bent = m;
      // bonus on action 0 only: not of the form gamma Phi(s') - Phi(s)
      for (int s = 0; s < m.states; ++s) {
        if (!m.terminal(s)) {
          for (auto& r : bent.reward[s][0]) r += 3.0;
        }
      }
      const auto sol = tabular::solve(bent);
      for (int s = 0; s < m.states; ++s) {
        if (!m.terminal(s) && sol.greedy[s] != base.greedy[s]) {
          ++changed;
          break;
        }
      }
    }
    CHECK(changed > 0);
  }
}
