// texopt: command-line front end for grids, studies and optimizer runs.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "texopt/experiment.hpp"

namespace fs = std::filesystem;
using namespace texopt;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitSimulation = 3;

struct Common {
  std::string config;
  std::string preset;
  std::string out;
  std::string ablation;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

void add_common(CLI::App* cmd, Common& c, const std::string& out_help) {
  cmd->add_option("--config", c.config, "JSON run configuration");
  cmd->add_option("--preset", c.preset, "scale preset")->check(CLI::IsMember({"paper", "desk"}));
  cmd->add_option("--out", c.out, out_help);
  cmd->add_option("--seed", c.seed, "master seed")->each([&c](const std::string&) { c.seed_set = true; });
}

RunConfig resolve(const Common& c, const std::string& mode) {
  RunConfig cfg;
  if (!c.config.empty()) {
    cfg = load_config(c.config, c.preset);
  } else {
    cfg = preset_config(c.preset.empty() ? "paper" : c.preset, mode);
  }
  if (c.seed_set) cfg.seed = c.seed;
  if (!c.ablation.empty()) apply_ablation(cfg, c.ablation);
  if (!c.out.empty()) cfg.output = c.out;
  return cfg;
}

void write_file(const fs::path& path, const std::function<void(std::ostream&)>& body) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  body(out);
}

std::vector<int> parse_actions(const std::string& text) {
  std::vector<int> ids;
  std::stringstream s(text);
  std::string item;
  while (std::getline(s, item, ',')) {
    try {
      std::size_t used = 0;
      ids.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("actions: '" + item + "' is not an action id");
    }
  }
  return ids;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Texture optimization by deformation process design"};
  app.require_subcommand(1);

  std::size_t grid_count = 512;
  std::uint64_t grid_seed = 1;
  std::string grid_out = "grid.txt";
  auto* grid = app.add_subcommand("grid-gen", "generate a uniform orientation grid");
  grid->add_option("--count,-J", grid_count, "number of orientations")->check(CLI::PositiveNumber);
  grid->add_option("--seed", grid_seed, "grid seed");
  grid->add_option("--out", grid_out, "output file");

  Common study_opts;
  auto* study = app.add_subcommand("distance-study", "relative distances over a constant-deformation trajectory");
  add_common(study, study_opts, "output CSV");

  Common mat_opts;
  auto* mat = app.add_subcommand("material-test", "Young's modulus error of the histogram representation");
  add_common(mat, mat_opts, "output directory");

  Common run_opts;
  auto* run = app.add_subcommand("run", "train an optimizer and write a run artifact");
  add_common(run, run_opts, "artifact directory");
  run->add_option("--ablation", run_opts.ablation, "ablation")
      ->check(CLI::IsMember({"none", "no-shaping", "no-augmentation"}));
  bool verbose = false;
  run->add_flag("--verbose,-v", verbose, "per-episode progress on stderr");

  std::string replay_dir;
  std::string replay_path_file;
  auto* replay = app.add_subcommand("replay", "re-execute a best_path.txt through the environment");
  replay->add_option("--run", replay_dir, "artifact directory written by `run`")->required();
  replay->add_option("--path", replay_path_file, "path file (default: <run>/best_path.txt)");

  Common target_opts;
  std::string target_actions;
  auto* target = app.add_subcommand("make-target", "texture reached by a comma-separated action sequence");
  add_common(target, target_opts, "texture file");
  target->add_option("--actions", target_actions, "action ids, e.g. 3,3,117")->required();

  Common goals_opts;
  auto* goals = app.add_subcommand("sample-goals", "diverse goal textures from random rollouts");
  add_common(goals, goals_opts, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    const auto t0 = std::chrono::steady_clock::now();
    if (*grid) {
      const auto g = OrientationGrid::sample_uniform(grid_count, grid_seed);
      if (fs::path(grid_out).has_parent_path()) fs::create_directories(fs::path(grid_out).parent_path());
      g.save(grid_out);
      std::cout << "wrote " << grid_out << " (J=" << g.size() << ", cv=" << g.quality().cv << ")\n";
    } else if (*study) {
      const auto cfg = resolve(study_opts, "distance-study");
      const fs::path out = study_opts.out.empty() ? fs::path("distance_study.csv") : fs::path(study_opts.out);
      const auto rows = distance_study(cfg);
      write_file(out, [&](std::ostream& o) { write_distance_study(o, rows); });
      std::cout << "wrote " << out.string() << " (" << rows.size() << " rows)\n";
    } else if (*mat) {
      const auto cfg = resolve(mat_opts, "material-test");
      const fs::path out = mat_opts.out.empty() ? fs::path("material_test") : fs::path(mat_opts.out);
      const auto result = material_test(cfg);
      write_file(out / "mae.csv", [&](std::ostream& o) { write_material_test(o, result); });
      write_file(out / "moduli.csv", [&](std::ostream& o) {
        o << "texture,E11,E22,E33\n" << std::setprecision(17);
        for (std::size_t i = 0; i < result.moduli.size(); ++i) {
          o << i << ',' << result.moduli[i][0] << ',' << result.moduli[i][1] << ','
            << result.moduli[i][2] << "\n";
        }
      });
      for (const auto& r : result.rows) {
        std::cout << "J=" << r.bins << " k=" << r.neighbors << " MAE=" << r.mae_gpa << " GPa\n";
      }
    } else if (*run) {
      if (run_opts.config.empty()) throw ConfigError("config: run needs --config");
      const auto cfg = resolve(run_opts, "single");
      const auto summary = run_experiment(cfg, cfg.output, verbose);
      const double wall =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      const auto g = static_cast<std::size_t>(summary.committed_goal);
      std::cout << "best distance " << summary.best_distance[g] << " (initial "
                << summary.initial_distance << ")\n"
                << "committed goal " << summary.committed_goal << "\n"
                << "wall time " << wall << " s\n"
                << "artifact " << cfg.output << "\n";
    } else if (*replay) {
      const fs::path dir(replay_dir);
      const auto cfg = load_config(dir / "config.json");
      const fs::path file = replay_path_file.empty() ? dir / "best_path.txt" : fs::path(replay_path_file);
      ProcessEnv env(cfg.env, cfg.material, cfg.simulation);
      const auto set = load_goals(cfg, env);
      int goal = 0;
      {
        std::ifstream in(file);
        std::string header;
        std::getline(in, header);
        const auto pos = header.find("goal=");
        if (pos != std::string::npos) goal = std::stoi(header.substr(pos + 5));
      }
      if (goal < 0 || goal >= static_cast<int>(set.goals.size())) {
        throw ConfigError("path: goal index out of range");
      }
      const auto d = replay_path(env, set.goals[static_cast<std::size_t>(goal)], read_best_path(file));
      std::cout << "t,distance\n" << std::setprecision(17);
      for (std::size_t t = 0; t < d.size(); ++t) std::cout << t << ',' << d[t] << "\n";
    } else if (*target) {
      auto cfg = resolve(target_opts, "single");
      ProcessEnv env(cfg.env, cfg.material, cfg.simulation);
      const auto tex = texture_after_actions(env, parse_actions(target_actions));
      const fs::path out = target_opts.out.empty() ? fs::path("target.txt") : fs::path(target_opts.out);
      if (out.has_parent_path()) fs::create_directories(out.parent_path());
      tex.save(out);
      std::cout << "wrote " << out.string() << "\n";
    } else if (*goals) {
      const auto cfg = resolve(goals_opts, "multi");
      const fs::path out = goals_opts.out.empty() ? fs::path("goals") : fs::path(goals_opts.out);
      fs::create_directories(out);
      const auto found = sample_goals(cfg);
      for (std::size_t i = 0; i < found.size(); ++i) {
        found[i].save(out / ("goal_" + std::to_string(i) + ".txt"));
      }
      std::cout << "wrote " << found.size() << " goals to " << out.string() << "\n";
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const SimulationFailure& e) {
    std::cerr << "simulation failure: " << e.what() << "\n";
    return kExitSimulation;
  } catch (const IntegrationFailure& e) {
    std::cerr << "simulation failure: " << e.what() << "\n";
    return kExitSimulation;
  } catch (const BalancingFailure& e) {
    std::cerr << "simulation failure: " << e.what() << "\n";
    return kExitSimulation;
  } catch (const TrainingFailure& e) {
    std::cerr << "training failure: " << e.what() << "\n";
    return kExitSimulation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
