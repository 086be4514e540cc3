#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "texopt/experiment.hpp"

using namespace texopt;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string config_error(const std::string& text) {
  try {
    (void)parse_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("texopt_test_" + name);
  fs::remove_all(p);
  return p;
}

RunConfig tiny_run() {
  RunConfig c = preset_config("desk", "single");
  c.env.horizon = 4;
  c.env.crystals = 20;
  c.env.bins = 128;
  c.agent.episodes = 2;
  c.agent.hidden = {8};
  c.agent.warmup = 2;
  c.agent.batch = 2;
  c.agent.eps_episodes = 1;
  c.target_actions = {5, 5, 105};
  return c;
}

int lines_in(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) ++n;
  return n;
}

}  // namespace

TEST_SUITE("experiment") {
  TEST_CASE("config errors carry the field path") {
    CHECK(config_error(R"({"agent": {"bogus": 1}})").rfind("agent.bogus:", 0) == 0);
    CHECK(config_error(R"({"env": {"horizon": 2.5}})").rfind("env.horizon:", 0) == 0);
    CHECK(config_error(R"({"env": {"horizon": 0}})").rfind("env.", 0) == 0);
    CHECK(config_error(R"({"simulation": {"integration": {"min_substeps": "x"}}})")
              .rfind("simulation.integration.min_substeps:", 0) == 0);
    CHECK(config_error(R"({"agent": {"hidden": [8, -1]}})").rfind("agent.hidden:", 0) == 0);
    CHECK(config_error(R"({"mode": "dance"})").rfind("mode:", 0) == 0);
    CHECK(config_error(R"({"preset": "huge"})").rfind("preset:", 0) == 0);
    CHECK(config_error(R"({"ablation": "no-luck"})").rfind("ablation:", 0) == 0);
    CHECK(config_error(R"({"mode": "single"})").rfind("goals:", 0) == 0);
    CHECK(config_error(R"({"mode": "single", "target_actions": [201]})").rfind("target_actions[0]:", 0) == 0);
    CHECK(config_error(R"({"mode": "single", "target_actions": [1], "seed": -3})").rfind("seed:", 0) == 0);
    CHECK(config_error("{ not json").rfind("<root>:", 0) == 0);
    CHECK(config_error(R"({"mode": "single", "target_actions": [1]})").empty());
  }

  TEST_CASE("paper preset carries the reference values") {
    const auto s = preset_config("paper", "single");
    const AgentConfig ref;
    CHECK(s.env.horizon == 100);
    CHECK(s.env.bins == 512);
    CHECK(s.env.neighbors == 3);
    CHECK(s.env.crystals == 250);
    CHECK(s.agent.episodes == ref.episodes);
    CHECK(s.agent.hidden == std::vector<int>{128, 64, 32});
    CHECK(s.agent.target_sync == 250);
    CHECK(s.agent.eps0 == 0.5);
    CHECK(s.agent.eps_final == 0.1);
    CHECK(s.agent.learning_rate == 5e-4);
    CHECK(s.agent.batch == 32);
    const auto m = preset_config("paper", "multi");
    CHECK(m.agent.episodes == 200);
    CHECK(m.agent.hidden == std::vector<int>{128, 256, 256, 128});
    CHECK(m.agent.target_sync == 500);
    CHECK(m.agent.eps_final == 0.0);
    CHECK(m.agent.goal_eps_episodes == 190);
  }

  TEST_CASE("desk preset shrinks the problem") {
    for (const char* mode : {"single", "multi"}) {
      const auto d = preset_config("desk", mode);
      CHECK(d.env.crystals == 50);
      CHECK(d.env.horizon == 30);
      CHECK(d.agent.episodes == 30);
      CHECK(d.env.bins == 256);
      CHECK(d.agent.eps_episodes <= d.agent.episodes);
    }
  }

  TEST_CASE("the snapshot parses back to the same configuration") {
    RunConfig c = tiny_run();
    c.agent.loss = nn::LossKind::Mse;
    c.agent.goal_value = GoalValue::MaxQ;
    c.material.tau0 = 91.25;
    c.distance_study.rotation = Quaternion::normalized(1, 2, 3, 4);
    c.seed = 0xFFFFFFFFFFFFull;
    const std::string a = config_to_json(c);
    const RunConfig back = parse_config(a);
    CHECK(config_to_json(back) == a);
    CHECK(back.seed == c.seed);
    CHECK(back.material.tau0 == 91.25);
  }

  TEST_CASE("ablations flip the matching switch") {
    RunConfig c = tiny_run();
    apply_ablation(c, "no-shaping");
    CHECK_FALSE(c.agent.shaping);
    CHECK(c.agent.augmentation);
    RunConfig d = tiny_run();
    apply_ablation(d, "no-augmentation");
    CHECK(d.agent.shaping);
    CHECK_FALSE(d.agent.augmentation);
    CHECK_THROWS_AS(apply_ablation(d, "everything"), ConfigError);
  }

  TEST_CASE("grid files are reproducible") {
    const auto dir = scratch("grid");
    fs::create_directories(dir);
    OrientationGrid::sample_uniform(100, 4).save(dir / "a.txt");
    OrientationGrid::sample_uniform(100, 4).save(dir / "b.txt");
    CHECK(slurp(dir / "a.txt") == slurp(dir / "b.txt"));
    CHECK(lines_in(dir / "a.txt") == 101);
    CHECK(slurp(dir / "a.txt").rfind("# J=100 seed=4 cv=", 0) == 0);
    CHECK(OrientationGrid::load(dir / "a.txt").size() == 100);
  }

  TEST_CASE("every action id survives the path file round trip") {
    const ActionSpace actions = ActionSpace::standard();
    for (int id = 0; id < 201; ++id) {
      const auto a = actions.action(id);
      CHECK(action_id_of(actions, {a.f, a.rotation}) == id);
      const Quaternion flipped{-a.rotation.w, -a.rotation.x, -a.rotation.y, -a.rotation.z};
      if (id != kNoOpAction) CHECK(action_id_of(actions, {a.f, flipped}) == id);
    }
    CHECK_THROWS_AS(action_id_of(actions, {0.01, Quaternion{}}), std::invalid_argument);
  }

  TEST_CASE("distance study is normalized at both ends") {
    RunConfig c = preset_config("desk", "distance-study");
    c.env.crystals = 20;
    c.distance_study.steps = 4;
    c.distance_study.bins = {128};
    c.distance_study.neighbors = {1, 3};
    const auto rows = distance_study(c);
    REQUIRE(rows.size() == 10);
    for (const auto& r : rows) {
      if (r.t == 0) CHECK(r.relative == 1.0);
      if (r.t == 4) CHECK(r.relative == 0.0);
    }
    std::ostringstream out;
    write_distance_study(out, rows);
    CHECK(out.str().rfind("J,k,t,distance,relative_distance\n", 0) == 0);
  }

  TEST_CASE("material test stays in the elastic sanity band") {
    RunConfig c = preset_config("desk", "material-test");
    c.material_test.crystals = 20;
    c.material_test.rollouts = 2;
    c.material_test.rollout_steps = 2;
    c.material_test.bins = {128};
    c.material_test.neighbors = {1, 3};
    const auto r = material_test(c);
    CHECK(r.moduli.size() == 4);
    CHECK(r.rows.size() == 2);
    for (const auto& e : r.moduli) {
      for (double x : e) {
        CHECK(x > 100.0);
        CHECK(x < 300.0);
      }
    }
    for (const auto& row : r.rows) CHECK(row.mae_gpa >= 0.0);
  }

  TEST_CASE("component textures stay within their spread") {
    const Quaternion centre = Quaternion::normalized(0.9, 0.1, 0.3, 0.2);
    const auto t = component_texture(centre, 0.1, 50, 3);
    CHECK(t.size() == 50);
    for (const auto& e : t.entries()) {
      CHECK(2.0 * std::acos(std::min(1.0, std::abs(dot(e.orientation, centre)))) <= 0.1 + 1e-9);
    }
  }

  TEST_CASE("committed goal counts greedy picks in the final fifth") {
    RunResult r;
    r.best_distance = {0.3, 0.1, 0.2};
    const std::vector<std::pair<int, std::string>> picks = {
        {1, "greedy"}, {1, "greedy"}, {1, "greedy"}, {1, "greedy"}, {0, "greedy"},
        {0, "greedy"}, {2, "explore"}, {2, "explore"}, {0, "greedy"}, {2, "greedy"}};
    for (const auto& [g, how] : picks) {
      EpisodeSummary e;
      e.goal = g;
      e.selection = how;
      r.episodes.push_back(e);
    }
    // final two episodes: goal 0 and goal 2 once each; ties go to the lower index
    CHECK(committed_goal(r, 3) == 0);
    r.episodes[8].selection = "explore";
    CHECK(committed_goal(r, 3) == 2);
    r.episodes[9].selection = "explore";
    CHECK(committed_goal(r, 3) == 1);  // no greedy picks: best distance decides
    CHECK(committed_goal(r, 1) == 0);
  }

  TEST_CASE("a run artifact reproduces bitwise from its snapshot") {
    const auto first = scratch("run_a");
    const auto second = scratch("run_b");
    const RunConfig c = tiny_run();
    const auto s1 = run_experiment(c, first);
    for (const char* f : {"config.json", "episodes.csv", "steps.csv", "goal_best.csv",
                          "best_path.txt", "checkpoints/final.ckpt"}) {
      CHECK(fs::exists(first / f));
    }
    CHECK(lines_in(first / "episodes.csv") == 3);
    CHECK(lines_in(first / "steps.csv") == 1 + 2 * 4);

    const RunConfig again = load_config(first / "config.json");
    (void)run_experiment(again, second);
    for (const char* f : {"episodes.csv", "steps.csv", "goal_best.csv", "best_path.txt"}) {
      CHECK(slurp(first / f) == slurp(second / f));
    }

    ProcessEnv env(c.env, c.material, c.simulation);
    const auto goals = load_goals(again, env);
    const auto d = replay_path(env, goals.goals[0], read_best_path(first / "best_path.txt"));
    CHECK(std::abs(d.back() - s1.best_distance[0]) < 1e-9);
  }

  TEST_CASE("goal files are copied into the artifact") {
    const auto dir = scratch("goal_copy");
    fs::create_directories(dir / "in");
    RunConfig c = tiny_run();
    ProcessEnv env(c.env);
    texture_after_actions(env, {9, 9}).save(dir / "in" / "g.txt");
    c.target_actions.clear();
    c.goals = {"in/g.txt"};
    c.base_dir = dir;
    c.agent.episodes = 1;
    (void)run_experiment(c, dir / "out");
    CHECK(slurp(dir / "in" / "g.txt") == slurp(dir / "out" / "goals" / "g.txt"));
    const auto snap = load_config(dir / "out" / "config.json");
    CHECK(snap.goals == std::vector<std::string>{"goals/g.txt"});
    (void)run_experiment(snap, dir / "rerun");
    CHECK(load_config(dir / "rerun" / "config.json").goals == snap.goals);

    SUBCASE("clashing file names get an index prefix that survives a rerun") {
      fs::create_directories(dir / "in2");
      texture_after_actions(env, {150}).save(dir / "in2" / "g.txt");
      RunConfig m = c;
      m.mode = "multi";
      m.goals = {"in/g.txt", "in2/g.txt"};
      (void)run_experiment(m, dir / "multi");
      const auto ms = load_config(dir / "multi" / "config.json");
      CHECK(ms.goals == std::vector<std::string>{"goals/0_g.txt", "goals/1_g.txt"});
      CHECK(slurp(dir / "in2" / "g.txt") == slurp(dir / "multi" / "goals" / "1_g.txt"));
      (void)run_experiment(ms, dir / "multi_rerun");
      CHECK(load_config(dir / "multi_rerun" / "config.json").goals == ms.goals);
      CHECK(slurp(dir / "multi" / "goal_best.csv") == slurp(dir / "multi_rerun" / "goal_best.csv"));
    }
  }

  TEST_CASE("sampled goals respect the diversity filters") {
    RunConfig c = preset_config("desk", "multi");
    c.env.crystals = 20;
    c.env.bins = 128;
    c.env.horizon = 8;
    c.goal_sampling.candidates = 4;
    c.goal_sampling.min_steps = 4;
    c.goal_sampling.max_steps = 6;
    c.goal_sampling.min_pairwise = 0.3;
    c.goal_sampling.min_from_initial = 0.2;
    const auto goals = sample_goals(c);
    ProcessEnv env(c.env);
    const Goal grey = env.encode_goal(env.initial_texture());
    for (std::size_t i = 0; i < goals.size(); ++i) {
      const Goal gi = env.encode_goal(goals[i]);
      CHECK(env.distance(gi.histogram, grey) > 0.2);
      for (std::size_t j = 0; j < i; ++j) {
        CHECK(env.distance(gi.histogram, env.encode_goal(goals[j])) > 0.3);
      }
    }
  }
  TEST_CASE("shipped configs load and validate") {
    const auto dir = std::filesystem::path(TEXOPT_DATA_DIR).parent_path() / "configs";
    int seen = 0;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
      if (entry.path().extension() != ".json") continue;
      CAPTURE(entry.path().string());
      const RunConfig c = load_config(entry.path());
      CHECK_NOTHROW(validate_config(c));
      for (const auto& g : c.goals) CHECK(std::filesystem::exists(c.base_dir / g));
      ++seen;
    }
    CHECK(seen >= 5);
  }
}
