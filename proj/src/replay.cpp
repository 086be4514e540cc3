#include "texopt/replay.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <stdexcept>

namespace texopt {

SumTree::SumTree(std::size_t leaves) : leaves_(leaves) {
  if (leaves == 0) throw std::invalid_argument("sum tree needs at least one leaf");
  base_ = 1;
  while (base_ < leaves) base_ <<= 1;
  nodes_.assign(2 * base_, 0.0);
}

void SumTree::set(std::size_t leaf, double value) {
  if (leaf >= leaves_) throw std::out_of_range("sum tree leaf out of range");
  std::size_t i = base_ + leaf;
  nodes_[i] = value;
  for (i >>= 1; i >= 1; i >>= 1) nodes_[i] = nodes_[2 * i] + nodes_[2 * i + 1];
}

std::size_t SumTree::find(double mass) const {
  std::size_t i = 1;
  while (i < base_) {
    const double left = nodes_[2 * i];
    if (mass < left || nodes_[2 * i + 1] <= 0.0) {
      i = 2 * i;
    } else {
      mass -= left;
      i = 2 * i + 1;
    }
  }
  std::size_t leaf = i - base_;
  // rounding can land on an empty leaf at the right edge
  while (leaf > 0 && nodes_[base_ + leaf] <= 0.0) --leaf;
  return leaf;
}

void SumTree::rebuild() {
  for (std::size_t i = base_ - 1; i >= 1; --i) nodes_[i] = nodes_[2 * i] + nodes_[2 * i + 1];
}

double SumTree::max_inconsistency() const {
  double worst = 0.0;
  for (std::size_t i = 1; i < base_; ++i) {
    worst = std::max(worst, std::abs(nodes_[i] - (nodes_[2 * i] + nodes_[2 * i + 1])));
  }
  return worst;
}

PrioritizedReplay::PrioritizedReplay(ReplayConfig config)
    : config_(config), tree_(std::max<std::size_t>(config.capacity, 1)) {
  if (config_.capacity == 0) throw std::invalid_argument("replay capacity must be positive");
  if (!(config_.alpha >= 0.0)) throw std::invalid_argument("replay alpha must be non-negative");
  if (!(config_.priority_eps > 0.0)) throw std::invalid_argument("priority_eps must be positive");
  items_.resize(config_.capacity);
  serial_of_.assign(config_.capacity, 0);
}

void PrioritizedReplay::insert(Experience e) {
  items_[cursor_] = std::move(e);
  serial_of_[cursor_] = next_serial_++;
  tree_.set(cursor_, max_priority_);
  cursor_ = (cursor_ + 1) % config_.capacity;
  size_ = std::min(size_ + 1, config_.capacity);
}

ReplaySample PrioritizedReplay::sample(std::size_t batch, double beta,
                                       std::mt19937_64& rng) const {
  if (batch == 0 || size_ < batch) {
    throw std::logic_error("replay holds " + std::to_string(size_) + " items, batch needs " +
                           std::to_string(batch));
  }
  ReplaySample s;
  s.items.reserve(batch);
  const double total = tree_.total();
  std::uniform_real_distribution<double> u(0.0, total);
  double max_w = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t slot = tree_.find(u(rng));
    const double p = tree_.get(slot) / total;
    const double w = std::pow(static_cast<double>(size_) * p, -beta);
    s.items.push_back(&items_[slot]);
    s.slots.push_back(slot);
    s.serials.push_back(serial_of_[slot]);
    s.weights.push_back(w);
    max_w = std::max(max_w, w);
  }
  for (double& w : s.weights) w /= max_w;
  return s;
}

void PrioritizedReplay::update_priorities(const std::vector<std::size_t>& slots,
                                          const std::vector<std::uint64_t>& serials,
                                          const std::vector<double>& abs_td) {
  if (slots.size() != serials.size() || slots.size() != abs_td.size()) {
    throw std::invalid_argument("priority update vectors differ in length");
  }
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (slots[i] >= size_ || serial_of_[slots[i]] != serials[i]) {
      ++stale_updates_;
      continue;
    }
    const double p = std::pow(std::abs(abs_td[i]) + config_.priority_eps, config_.alpha);
    tree_.set(slots[i], p);
    max_priority_ = std::max(max_priority_, p);
    if (++updates_since_rebuild_ >= config_.rebuild_interval) {
      tree_.rebuild();
      updates_since_rebuild_ = 0;
    }
  }
}

void PrioritizedReplay::dump(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write replay dump " + path.string());
  out << std::setprecision(17);
  auto vec = [&](const std::vector<double>& v) {
    out << '[';
    for (std::size_t i = 0; i < v.size(); ++i) out << (i ? " " : "") << v[i];
    out << ']';
  };
  for (std::size_t slot = 0; slot < size_; ++slot) {
    const auto& e = items_[slot];
    out << slot << ' ' << tree_.get(slot) << ' ';
    vec(e.state);
    out << ' ' << e.action << ' ';
    vec(e.next_state);
    out << ' ' << e.reward << ' ';
    vec(e.goal);
    out << ' ' << (e.done ? 1 : 0) << "\n";
  }
}

double beta_schedule(double beta0, std::uint64_t step, std::uint64_t total_steps) {
  if (total_steps == 0 || step >= total_steps) return 1.0;
  return beta0 + (1.0 - beta0) * static_cast<double>(step) / static_cast<double>(total_steps);
}

}  // namespace texopt
