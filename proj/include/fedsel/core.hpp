#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fedsel {

// Clients are addressed by their 0-based position in the delay-sorted roster.
// Files and reports print them 1-based.
using ClientIndex = std::size_t;

// Raised when a B matrix pushes a bias term to >= 1, i.e. the bounded
// heterogeneity condition does not hold for the given input.
class AssumptionViolation : public std::domain_error {
public:
  using std::domain_error::domain_error;
};

// Non-finite iterate during training.
class DivergenceError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class ClientRoster {
public:
  ClientRoster() = default;

  std::size_t size() const { return delays_.size(); }
  double mean_delay(ClientIndex i) const { return delays_.at(i); }
  std::span<const double> mean_delays() const { return delays_; }

  // original_index(i): position of sorted client i in the input vector.
  ClientIndex original_index(ClientIndex i) const { return order_.at(i); }
  std::span<const std::size_t> permutation() const { return order_; }

  friend ClientRoster make_roster(std::span<const double> delays);

private:
  std::vector<double> delays_;
  std::vector<std::size_t> order_;
};

// Sorts clients by mean delay (stable, so ties keep input order).
inline ClientRoster make_roster(std::span<const double> delays) {
  if (delays.empty())
    throw std::invalid_argument("make_roster: need at least one client");
  for (std::size_t i = 0; i < delays.size(); ++i) {
    if (!std::isfinite(delays[i]) || delays[i] <= 0.0)
      throw std::invalid_argument("make_roster: delay at index " + std::to_string(i) +
                                  " must be positive and finite");
  }
  ClientRoster roster;
  roster.order_.resize(delays.size());
  std::iota(roster.order_.begin(), roster.order_.end(), std::size_t{0});
  std::stable_sort(roster.order_.begin(), roster.order_.end(),
                   [&](std::size_t a, std::size_t b) { return delays[a] < delays[b]; });
  roster.delays_.reserve(delays.size());
  for (auto k : roster.order_) roster.delays_.push_back(delays[k]);
  return roster;
}

inline ClientRoster make_roster(const std::vector<double>& delays) {
  return make_roster(std::span<const double>(delays));
}

// Output of every selector: the (multi)set of participants in draw order and
// the aggregation weight per distinct client.
struct SelectionDecision {
  std::vector<ClientIndex> members;
  std::map<ClientIndex, double> coefficients;

  std::vector<ClientIndex> distinct() const {
    std::vector<ClientIndex> out;
    out.reserve(coefficients.size());
    for (const auto& [i, a] : coefficients) out.push_back(i);
    return out;
  }

  double coefficient_sum() const {
    double s = 0.0;
    for (const auto& [i, a] : coefficients) s += a;
    return s;
  }
};

inline void validate(const SelectionDecision& d, std::size_t m, double tol = 1e-12) {
  if (d.members.empty() || d.coefficients.empty())
    throw std::invalid_argument("selection decision is empty");
  for (auto i : d.members) {
    if (i >= m) throw std::invalid_argument("selection references unknown client");
    if (!d.coefficients.contains(i))
      throw std::invalid_argument("selected client without a coefficient");
  }
  for (const auto& [i, a] : d.coefficients) {
    if (!(a > 0.0)) throw std::invalid_argument("coefficients must be positive");
    if (i >= m) throw std::invalid_argument("coefficient for unknown client");
  }
  if (std::abs(d.coefficient_sum() - 1.0) > tol)
    throw std::invalid_argument("coefficients must sum to one");
}

// Equal weight 1/|members| per draw, summed for repeated clients.
inline SelectionDecision uniform_decision(std::vector<ClientIndex> members) {
  SelectionDecision d;
  const double w = 1.0 / static_cast<double>(members.size());
  for (auto i : members) d.coefficients[i] += w;
  d.members = std::move(members);
  return d;
}

struct RoundRecord {
  std::size_t round = 0;
  double round_delay = 0.0;
  double cumulative_time = 0.0;
  double train_loss = 0.0;
  double test_metric = 0.0;
  std::vector<ClientIndex> selected;
};

// A synchronous round lasts as long as its slowest participant.
// sampled_delays is indexed by client and must cover every member of S.
inline double round_delay(std::span<const ClientIndex> selected,
                          std::span<const double> sampled_delays) {
  if (selected.empty()) throw std::invalid_argument("round_delay: empty selection");
  double worst = 0.0;
  for (auto i : selected) {
    if (i >= sampled_delays.size())
      throw std::invalid_argument("round_delay: no sampled delay for client " + std::to_string(i));
    worst = std::max(worst, sampled_delays[i]);
  }
  return worst;
}

}  // namespace fedsel
