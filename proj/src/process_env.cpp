#include "texopt/process_env.hpp"

#include <cmath>
#include <iomanip>

#include "texopt/gsh.hpp"

namespace texopt {

ActionSpace::ActionSpace(std::shared_ptr<const OrientationGrid> rotations)
    : rotations_(std::move(rotations)) {
  if (!rotations_ || rotations_->size() != 100) {
    throw std::invalid_argument("action space needs exactly 100 rotations");
  }
}

ActionSpace ActionSpace::standard() { return ActionSpace(cached_grid(100, kActionGridSeed)); }

ProcessAction ActionSpace::action(int id) const {
  if (id < 0 || id >= static_cast<int>(kActionCount)) {
    throw std::out_of_range("action id " + std::to_string(id) + " outside [0, 200]");
  }
  if (id == kNoOpAction) return {};
  const auto i = static_cast<std::size_t>(id % 100);
  return {id < 100 ? kStepMagnitude : -kStepMagnitude, (*rotations_)[i]};
}

void EnvConfig::validate() const {
  if (horizon < 1) throw std::invalid_argument("K must be at least 1");
  if (bins < 1) throw std::invalid_argument("J must be at least 1");
  if (neighbors < 1 || neighbors > bins) throw std::invalid_argument("k must lie in [1, J]");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("gamma must lie in (0, 1]");
  if (!(strain_cap > 0.0)) throw std::invalid_argument("strain_cap must be positive");
  if (crystals < 1) throw std::invalid_argument("crystals must be at least 1");
  if (!(distance_floor > 0.0)) throw std::invalid_argument("distance_floor must be positive");
}

double shaped_reward(double d_prev, double d_next, bool done, double gamma) {
  const double raw = done ? 1.0 / d_next : 0.0;
  const double next_potential = done ? 0.0 : 1.0 / d_next;
  return raw + gamma * next_potential - 1.0 / d_prev;
}

ProcessEnv::ProcessEnv(EnvConfig config, MaterialParams material, SimulationOptions sim)
    : config_(config), material_(material), sim_(sim), actions_(ActionSpace::standard()) {
  config_.validate();
  material_.validate();
  sim_.strain_cap = config_.strain_cap;
  grid_ = cached_grid(config_.bins, config_.grid_seed);
  initial_texture_ = WeightedOrientationSet::uniform_weights(
      cached_grid(config_.crystals, config_.texture_seed)->orientations());
  root_ = make_node(CrystalAggregate::from_texture(initial_texture_, material_));
  node_ = root_;
  state_ = make_state(*root_, 0);
}

Histogram ProcessEnv::histogram_of(const WeightedOrientationSet& texture) const {
  return build_histogram(*grid_, texture, {config_.neighbors, config_.weighting});
}

Goal ProcessEnv::encode_goal(const WeightedOrientationSet& texture) const {
  return {texture, histogram_of(texture), compute_features(default_gsh_basis(), texture)};
}

double ProcessEnv::distance(const Histogram& h, const Goal& goal) const {
  return std::max(chi_square_distance(h, goal.histogram), config_.distance_floor);
}

void ProcessEnv::set_goal(const Goal& goal) {
  if (goal.histogram.grid_fingerprint != grid_->fingerprint()) {
    throw std::invalid_argument("goal histogram was built on a different grid");
  }
  goal_ = std::make_unique<Goal>(goal);
}

const Goal& ProcessEnv::goal() const {
  if (!goal_) throw InvalidState("no goal set");
  return *goal_;
}

std::shared_ptr<const ProcessEnv::Node> ProcessEnv::make_node(CrystalAggregate aggregate) const {
  auto node = std::make_shared<Node>();
  auto texture = std::make_shared<WeightedOrientationSet>(aggregate.texture());
  node->histogram = std::make_shared<Histogram>(histogram_of(*texture));
  node->gsh = compute_features(default_gsh_basis(), *texture);
  node->texture = std::move(texture);
  node->aggregate = std::move(aggregate);
  return node;
}

EnvState ProcessEnv::make_state(const Node& node, int t) const {
  EnvState s;
  s.features = node.gsh;
  s.features.push_back(static_cast<double>(t) / config_.horizon);
  s.features.push_back(node.aggregate.eq_strain());
  s.histogram = node.histogram;
  s.texture = node.texture;
  s.t = t;
  s.eq_strain = node.aggregate.eq_strain();
  return s;
}

EnvState ProcessEnv::reset(std::uint64_t /*seed*/) {
  node_ = root_;
  path_.clear();
  state_ = make_state(*root_, 0);
  done_ = false;
  return state_;
}

ProcessEnv::Transition ProcessEnv::simulate(int action_id) {
  auto key = path_;
  key.push_back(action_id);
  if (auto it = cache_.find(key); it != cache_.end()) return it->second;

  Transition tr{Outcome::Ok, node_};
  ++simulated_steps_;
  try {
    auto out = apply_process_step(node_->aggregate, actions_.action(action_id), material_, sim_);
    if (out.cap_exceeded) {
      tr.outcome = Outcome::StrainCap;
    } else {
      tr.next = make_node(std::move(out.aggregate));
    }
  } catch (const IntegrationFailure&) {
    tr.outcome = Outcome::Failure;
  } catch (const BalancingFailure&) {
    tr.outcome = Outcome::Failure;
  }
  if (cache_.size() < config_.cache_entries) cache_.emplace(std::move(key), tr);
  return tr;
}

StepResult ProcessEnv::step(int action_id) {
  if (done_) throw InvalidState("step called on a finished episode");
  if (!goal_) throw InvalidState("no goal set");
  (void)actions_.action(action_id);
  const double d_prev = distance(*node_->histogram, *goal_);

  Outcome outcome = Outcome::Ok;
  if (!ActionSpace::is_noop(action_id)) {
    const Transition tr = simulate(action_id);
    outcome = tr.outcome;
    if (outcome == Outcome::Ok) {
      node_ = tr.next;
      path_.push_back(action_id);
    }
  }

  StepResult r;
  const int t = state_.t + 1;
  if (outcome == Outcome::StrainCap) {
    r.terminal_reason = "strain_cap";
  } else if (outcome == Outcome::Failure) {
    r.terminal_reason = "sim_failure";
  } else if (t >= config_.horizon) {
    r.terminal_reason = "horizon";
  }
  r.done = !r.terminal_reason.empty();

  const double d_next = distance(*node_->histogram, *goal_);
  r.raw_distance = d_next;
  r.shaped_reward = shaped_reward(d_prev, d_next, r.done, config_.gamma);
  r.raw_reward = r.done ? 1.0 / d_next : 0.0;
  r.potential = r.done ? 0.0 : 1.0 / d_next;

  state_ = make_state(*node_, t);
  r.state = state_;
  done_ = r.done;
  return r;
}

void write_episode_csv_header(std::ostream& out) {
  out << "episode,t,action_id,f,qw,qx,qy,qz,raw_distance,shaped_reward,eq_strain,terminal_reason\n";
}

void write_episode_csv_row(std::ostream& out, const EpisodeLogRow& row) {
  const auto flags = out.flags();
  const auto prec = out.precision();
  out << std::setprecision(17) << row.episode << ',' << row.t << ',' << row.action_id << ','
      << row.f << ',' << row.rotation.w << ',' << row.rotation.x << ',' << row.rotation.y << ','
      << row.rotation.z << ',' << row.raw_distance << ',' << row.shaped_reward << ','
      << row.eq_strain << ',' << row.terminal_reason << "\n";
  out.flags(flags);
  out.precision(prec);
}

}  // namespace texopt
