#pragma once

// Layered random episodic MDPs with dyadic probabilities and integer
// rewards, so backward induction in double precision is exact and ties
// between actions can be compared with ==.

#include <algorithm>
#include <random>
#include <set>
#include <vector>

namespace tabular {

struct Mdp {
  int states = 0;
  int actions = 4;
  std::vector<int> layer;  // layer index per state, terminal layer last
  int layers = 0;
  // transitions[s][a] = list of (next state, probability)
  std::vector<std::vector<std::vector<std::pair<int, double>>>> transitions;
  // reward[s][a][k] for the k-th listed successor
  std::vector<std::vector<std::vector<double>>> reward;
  std::vector<double> potential;  // zero on terminal states
  double gamma = 1.0;

  [[nodiscard]] bool terminal(int s) const { return layer[s] == layers - 1; }
};

inline Mdp random_mdp(std::mt19937_64& rng, int max_states = 20) {
  Mdp m;
  std::uniform_int_distribution<int> n_layers(2, 5);
  m.layers = n_layers(rng);
  std::uniform_int_distribution<int> width(1, std::max(1, max_states / m.layers));
  std::vector<std::vector<int>> by_layer(m.layers);
  for (int l = 0; l < m.layers; ++l) {
    const int w = width(rng);
    for (int i = 0; i < w; ++i) {
      by_layer[l].push_back(m.states++);
      m.layer.push_back(l);
    }
  }
  m.gamma = (rng() % 2 == 0) ? 1.0 : 0.5;
  std::uniform_int_distribution<int> r(-2, 2), phi(-4, 4);
  m.transitions.resize(m.states);
  m.reward.resize(m.states);
  m.potential.assign(m.states, 0.0);
  for (int s = 0; s < m.states; ++s) {
    if (m.terminal(s)) continue;
    m.potential[s] = phi(rng);
    const auto& next = by_layer[m.layer[s] + 1];
    std::uniform_int_distribution<std::size_t> pick(0, next.size() - 1);
    m.transitions[s].resize(m.actions);
    m.reward[s].resize(m.actions);
    for (int a = 0; a < m.actions; ++a) {
      // four quarters of probability mass spread over random successors
      std::vector<double> mass(next.size(), 0.0);
      for (int q = 0; q < 4; ++q) mass[pick(rng)] += 0.25;
      for (std::size_t k = 0; k < next.size(); ++k) {
        if (mass[k] > 0.0) {
          m.transitions[s][a].emplace_back(next[k], mass[k]);
          m.reward[s][a].push_back(r(rng));
        }
      }
    }
  }
  return m;
}

/// The same MDP with R'(s, a, s') = R + gamma Phi(s') - Phi(s).
inline Mdp shaped(const Mdp& m) {
  Mdp out = m;
  for (int s = 0; s < m.states; ++s) {
    if (m.terminal(s)) continue;
    for (int a = 0; a < m.actions; ++a) {
      for (std::size_t k = 0; k < m.transitions[s][a].size(); ++k) {
        const int next = m.transitions[s][a][k].first;
        out.reward[s][a][k] += m.gamma * m.potential[next] - m.potential[s];
      }
    }
  }
  return out;
}

struct Solution {
  std::vector<double> value;
  std::vector<std::vector<double>> q;
  std::vector<std::set<int>> greedy;  // every maximizing action
};

/// Backward induction over the layers (exact value iteration for a DAG).
inline Solution solve(const Mdp& m) {
  Solution sol;
  sol.value.assign(m.states, 0.0);
  sol.q.assign(m.states, {});
  sol.greedy.assign(m.states, {});
  for (int l = m.layers - 2; l >= 0; --l) {
    for (int s = 0; s < m.states; ++s) {
      if (m.layer[s] != l) continue;
      sol.q[s].assign(m.actions, 0.0);
      for (int a = 0; a < m.actions; ++a) {
        for (std::size_t k = 0; k < m.transitions[s][a].size(); ++k) {
          const auto [next, p] = m.transitions[s][a][k];
          sol.q[s][a] += p * (m.reward[s][a][k] + m.gamma * sol.value[next]);
        }
      }
      double best = sol.q[s][0];
      for (double v : sol.q[s]) best = std::max(best, v);
      sol.value[s] = best;
      for (int a = 0; a < m.actions; ++a) {
        if (sol.q[s][a] == best) sol.greedy[s].insert(a);
      }
    }
  }
  return sol;
}

/// True when the argmax sets agree in every non-terminal state.
inline bool same_optimal_actions(const Mdp& m) {
  const Solution a = solve(m);
  const Solution b = solve(shaped(m));
  for (int s = 0; s < m.states; ++s) {
    if (!m.terminal(s) && a.greedy[s] != b.greedy[s]) return false;
  }
  return true;
}

}  // namespace tabular
