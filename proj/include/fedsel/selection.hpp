#pragma once

#include "fedsel/core.hpp"
#include "fedsel/datagen.hpp"
#include "fedsel/heterogeneity.hpp"
#include "fedsel/simplex.hpp"
#include "fedsel/submodular.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace fedsel {

// ---------------------------------------------------------------------------
// Set selection: g(S) = max_{i in S} tau_i / (1 - B_S)

class SubmodularObjective {
public:
  SubmodularObjective(std::vector<double> tau, Matrix B) : tau_(std::move(tau)), B_(std::move(B)) {
    if (tau_.empty() || static_cast<std::size_t>(B_.rows()) != tau_.size() || B_.rows() != B_.cols())
      throw std::invalid_argument("SubmodularObjective: delays and B must agree in size");
    if (!std::is_sorted(tau_.begin(), tau_.end()))
      throw std::invalid_argument("SubmodularObjective: delays must be sorted ascending");
    const auto chk = check_bounded_heterogeneity(B_);
    if (!chk.set_ok)
      throw AssumptionViolation("B violates the set-selection heterogeneity bound (max row mean " +
                                std::to_string(chk.max_row_mean) + ")");
  }

  std::size_t size() const { return tau_.size(); }
  std::span<const double> delays() const { return tau_; }
  const Matrix& B() const { return B_; }

  // g on nonempty sets; the empty set takes the largest singleton value.
  double value(std::span<const ClientIndex> S) const {
    if (S.empty()) return empty_value();
    double tmax = 0.0;
    for (auto i : S) tmax = std::max(tmax, tau_.at(i));
    const double h = mean_proxy_distance(S, B_);
    const double bias = 2.0 * h * h;
    if (bias >= 1.0) throw AssumptionViolation("g(S): bias term B_S >= 1");
    return tmax / (1.0 - bias);
  }

  double empty_value() const {
    double worst = 0.0;
    for (ClientIndex i = 0; i < size(); ++i) {
      const ClientIndex s[1] = {i};
      worst = std::max(worst, value(s));
    }
    return worst;
  }

private:
  std::vector<double> tau_;
  Matrix B_;
};

inline double g_set_value(const SubmodularObjective& obj, std::span<const ClientIndex> S) { return obj.value(S); }

enum class SetMethod {
  Prefix,        // scan of the m delay-sorted prefixes; exact
  MinNormPoint,  // Fujishige-Wolfe on g shifted by the empty-set value
  Exhaustive,    // all 2^m - 1 nonempty sets, m <= 24
};

struct SetSelection {
  std::vector<ClientIndex> set;
  double value = 0.0;
  SelectionDecision decision;
  bool flagged = false;  // optimizer stopped at its iteration cap
};

// For a fixed slowest member k, adding any faster client can only lower
// h(S) and leaves the numerator at tau_k, so the best set with maximum
// delay tau_k is the whole prefix {0..k}. Scanning prefixes is therefore exact.
inline SetMinimum minimize_prefix(const SubmodularObjective& obj) {
  const auto m = obj.size();
  const Matrix& B = obj.B();
  std::vector<double> best(m, std::numeric_limits<double>::infinity());
  SetMinimum out;
  for (std::size_t k = 0; k < m; ++k) {
    double h = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      best[j] = std::min(best[j], B(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)));
      h += best[j];
    }
    h /= static_cast<double>(m);
    const double bias = 2.0 * h * h;
    if (bias >= 1.0) continue;
    const double v = obj.delays()[k] / (1.0 - bias);
    if (v < out.value) {
      out.value = v;
      out.set.resize(k + 1);
      std::iota(out.set.begin(), out.set.end(), std::size_t{0});
    }
  }
  return out;
}

inline SetSelection minimize_g_submodular(const SubmodularObjective& obj, SetMethod method = SetMethod::Prefix) {
  SetMinimum best;
  const SetFunction g = [&](const std::vector<std::size_t>& S) { return obj.value(S); };
  switch (method) {
    case SetMethod::Prefix:
      best = minimize_prefix(obj);
      break;
    case SetMethod::Exhaustive:
      best = minimize_exhaustive(g, obj.size(), true);
      break;
    case SetMethod::MinNormPoint: {
      MinNormPointOptions opt;
      opt.nonempty = true;
      best = minimize_min_norm_point(g, obj.size(), opt);
      break;
    }
  }
  SetSelection out;
  out.set = best.set;
  out.value = best.value;
  out.flagged = !best.converged;
  out.decision = coefficients_for_set(out.set, obj.B()).decision;
  return out;
}

// ---------------------------------------------------------------------------
// Distribution selection: g(p) = E_{S ~ p^K}[max tau] / (1 - B_p)

enum class SamplingMode {
  ExactK,  // order-statistic numerator with the real K
  K1,      // the whole objective evaluated at K = 1
};

class SamplingObjective {
public:
  SamplingObjective(std::vector<double> tau, Matrix B_sq, std::size_t K, SamplingMode mode = SamplingMode::K1)
      : tau_(std::move(tau)), B_sq_(std::move(B_sq)), K_(K), mode_(mode) {
    if (tau_.empty() || static_cast<std::size_t>(B_sq_.rows()) != tau_.size())
      throw std::invalid_argument("SamplingObjective: delays and B must agree in size");
    if (K_ < 1) throw std::invalid_argument("SamplingObjective: K must be >= 1");
    if (!std::is_sorted(tau_.begin(), tau_.end()))
      throw std::invalid_argument("SamplingObjective: delays must be sorted ascending");
    const double sq_row = B_sq_.rowwise().sum().maxCoeff() / static_cast<double>(B_sq_.rows());
    if (!(sq_row < 0.5))
      throw AssumptionViolation("B violates the sampling heterogeneity bound (max squared row mean " +
                                std::to_string(sq_row) + ")");
    row_sums_ = B_sq_.rowwise().sum();
  }

  std::size_t size() const { return tau_.size(); }
  std::size_t K() const { return K_; }
  std::size_t effective_K() const { return mode_ == SamplingMode::K1 ? 1 : K_; }
  SamplingMode mode() const { return mode_; }
  std::span<const double> delays() const { return tau_; }

  double numerator(const Vector& p) const { return expected_max_delay(p, effective_K(), tau_); }

  double bias(const Vector& p) const { return bilinear_bias(p, B_sq_, effective_K()); }

  // +inf where the bias reaches 1.
  double value(const Vector& p) const {
    const double b = bias(p);
    if (b >= 1.0) return std::numeric_limits<double>::infinity();
    return numerator(p) / (1.0 - b);
  }

  Vector gradient(const Vector& p) const {
    const auto m = p.size();
    const double k = static_cast<double>(effective_K());
    // N(p) = sum_i P_i^K (tau_i - tau_{i+1}), tau_{m+1} = 0.
    Vector dN(m);
    double prefix = 0.0;
    Vector coef(m);
    for (Eigen::Index i = 0; i < m; ++i) {
      prefix += p(i);
      const double next = i + 1 < m ? tau_[static_cast<std::size_t>(i + 1)] : 0.0;
      coef(i) = k * std::pow(std::max(prefix, 0.0), k - 1.0) * (tau_[static_cast<std::size_t>(i)] - next);
    }
    double suffix = 0.0;
    for (Eigen::Index j = m - 1; j >= 0; --j) {
      suffix += coef(j);
      dN(j) = suffix;
    }
    const double mm = static_cast<double>(m);
    const Vector dB = 2.0 * (row_sums_ / mm + 2.0 * (B_sq_ * p) / k);
    const double N = numerator(p);
    const double den = 1.0 - bias(p);
    return (dN * den + N * dB) / (den * den);
  }

private:
  std::vector<double> tau_;
  Matrix B_sq_;
  std::size_t K_;
  SamplingMode mode_;
  Vector row_sums_;
};

inline double g_dist_value(const SamplingObjective& obj, const Vector& p) {
  const double v = obj.value(p);
  if (!std::isfinite(v)) throw AssumptionViolation("g(p): bias term B_p >= 1");
  return v;
}

struct SamplingOptions {
  int restarts = 5;           // random Dirichlet starts besides the uniform one
  bool corner_starts = true;  // also start from every vertex of the simplex
  std::uint64_t seed = 0;
  ProjectedGradientOptions pg;
};

struct SamplingSolution {
  SamplingDistribution dist;
  double value = 0.0;
  bool flagged = false;  // no start improved on the uniform distribution
};

inline SamplingSolution minimize_g_sampling(const SamplingObjective& obj, const SamplingOptions& opt = {}) {
  const auto m = obj.size();
  const auto f = [&](const Vector& p) { return obj.value(p); };
  const auto g = [&](const Vector& p) { return obj.gradient(p); };

  const Vector uniform = Vector::Constant(static_cast<Eigen::Index>(m), 1.0 / static_cast<double>(m));
  const double uniform_value = obj.value(uniform);

  std::vector<Vector> starts{uniform};
  std::mt19937_64 rng(opt.seed);
  for (int r = 0; r < opt.restarts; ++r) starts.push_back(dirichlet_sample(m, 1.0, rng));
  if (opt.corner_starts)
    for (std::size_t i = 0; i < m; ++i) starts.push_back(Vector::Unit(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(i)));

  // Ties resolve to the earliest start.
  SamplingSolution best{{uniform, obj.K()}, uniform_value, true};
  for (const auto& s : starts) {
    const auto res = projected_gradient(f, g, s, opt.pg);
    if (res.value < best.value) {
      best.dist.p = res.p;
      best.value = res.value;
      best.flagged = false;
    }
  }
  if (m == 1) best.flagged = false;
  return best;
}

// K iid draws from p; each draw adds 1/K to its client.
inline SelectionDecision sample_multiset(const Vector& p, std::size_t K, std::mt19937_64& rng) {
  if (K < 1) throw std::invalid_argument("sample_multiset: K must be >= 1");
  std::discrete_distribution<std::size_t> draw(p.data(), p.data() + p.size());
  std::vector<ClientIndex> members(K);
  for (auto& c : members) c = draw(rng);
  return uniform_decision(std::move(members));
}

// ---------------------------------------------------------------------------
// Selectors used by the training loop.

struct RoundContext {
  std::size_t round = 0;
  const Vector& model;
  const QuadraticProblem& problem;
  const ClientRoster& roster;
  const Matrix& B;  // heterogeneity view handed to selectors (rescaled)
};

class Selector {
public:
  virtual ~Selector() = default;
  virtual std::string name() const = 0;
  virtual SelectionDecision select(const RoundContext& ctx, std::mt19937_64& rng) = 0;
  // Called after every round with the record that round produced.
  virtual void observe(const RoundRecord&) {}
  // Whether select() reads RoundContext::B.
  virtual bool uses_heterogeneity() const { return false; }
  // True when an optimizer fell back to a non-optimal answer at least once.
  bool flagged() const { return flagged_; }

protected:
  bool flagged_ = false;
};

inline std::vector<double> roster_delays(const ClientRoster& roster) {
  return {roster.mean_delays().begin(), roster.mean_delays().end()};
}

class SubmodularSelector final : public Selector {
public:
  explicit SubmodularSelector(SetMethod method = SetMethod::Prefix, bool every_round = true)
      : method_(method), every_round_(every_round) {}

  std::string name() const override { return "submodular"; }
  bool uses_heterogeneity() const override { return true; }

  SelectionDecision select(const RoundContext& ctx, std::mt19937_64&) override {
    if (!cached_ || every_round_) {
      SubmodularObjective obj(roster_delays(ctx.roster), ctx.B);
      auto sel = minimize_g_submodular(obj, method_);
      flagged_ = flagged_ || sel.flagged;
      cached_ = std::move(sel.decision);
    }
    return *cached_;
  }

  const std::optional<SelectionDecision>& last() const { return cached_; }

private:
  SetMethod method_;
  bool every_round_;
  std::optional<SelectionDecision> cached_;
};

class SamplingSelector final : public Selector {
public:
  SamplingSelector(std::size_t K, SamplingMode mode = SamplingMode::K1, bool every_round = true,
                   SamplingOptions opt = {})
      : K_(K), mode_(mode), every_round_(every_round), opt_(opt) {}

  std::string name() const override { return "sampling"; }
  bool uses_heterogeneity() const override { return true; }

  SelectionDecision select(const RoundContext& ctx, std::mt19937_64& rng) override {
    if (!p_ || every_round_) {
      SamplingObjective obj(roster_delays(ctx.roster), ctx.B.cwiseProduct(ctx.B), K_, mode_);
      SamplingOptions opt = opt_;
      opt.seed = opt_.seed + ctx.round;
      auto sol = minimize_g_sampling(obj, opt);
      flagged_ = flagged_ || sol.flagged;
      p_ = std::move(sol.dist.p);
    }
    return sample_multiset(*p_, K_, rng);
  }

  const std::optional<Vector>& distribution() const { return p_; }

private:
  std::size_t K_;
  SamplingMode mode_;
  bool every_round_;
  SamplingOptions opt_;
  std::optional<Vector> p_;
};

// k distinct clients chosen uniformly from `pool` (partial Fisher-Yates).
inline std::vector<ClientIndex> sample_without_replacement(std::vector<ClientIndex> pool, std::size_t k,
                                                           std::mt19937_64& rng) {
  if (k > pool.size()) throw std::invalid_argument("cannot draw more clients than available");
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(k);
  return pool;
}

inline std::vector<ClientIndex> all_clients(std::size_t m) {
  std::vector<ClientIndex> v(m);
  std::iota(v.begin(), v.end(), ClientIndex{0});
  return v;
}

inline SelectionDecision select_random(std::size_t m, std::size_t K, std::mt19937_64& rng) {
  if (K < 1 || K > m) throw std::invalid_argument("random selection: need 1 <= K <= m");
  auto S = sample_without_replacement(all_clients(m), K, rng);
  std::sort(S.begin(), S.end());
  return uniform_decision(std::move(S));
}

class RandomSelector final : public Selector {
public:
  explicit RandomSelector(std::size_t K) : K_(K) {}
  std::string name() const override { return "random"; }
  SelectionDecision select(const RoundContext& ctx, std::mt19937_64& rng) override {
    return select_random(ctx.problem.clients(), K_, rng);
  }

private:
  std::size_t K_;
};

// Draws a uniform candidate set, then keeps the K candidates with the
// largest local loss at the current model.
inline SelectionDecision select_power_of_choice(std::span<const double> local_losses, std::size_t candidates,
                                                std::size_t K, std::mt19937_64& rng) {
  const auto m = local_losses.size();
  if (K < 1 || K > m) throw std::invalid_argument("power-of-choice: need 1 <= K <= m");
  candidates = std::clamp(candidates, K, m);
  auto pool = sample_without_replacement(all_clients(m), candidates, rng);
  std::stable_sort(pool.begin(), pool.end(), [&](auto a, auto b) {
    if (local_losses[a] != local_losses[b]) return local_losses[a] > local_losses[b];
    return a < b;
  });
  pool.resize(K);
  std::sort(pool.begin(), pool.end());
  return uniform_decision(std::move(pool));
}

class PowerOfChoiceSelector final : public Selector {
public:
  // candidates == 0 means min(2K, m).
  PowerOfChoiceSelector(std::size_t K, std::size_t candidates = 0) : K_(K), candidates_(candidates) {}
  std::string name() const override { return "power_of_choice"; }
  SelectionDecision select(const RoundContext& ctx, std::mt19937_64& rng) override {
    const auto m = ctx.problem.clients();
    std::vector<double> losses(m);
    for (std::size_t i = 0; i < m; ++i) losses[i] = ctx.problem.client_loss(i, ctx.model);
    const auto d = candidates_ == 0 ? std::min(2 * K_, m) : candidates_;
    return select_power_of_choice(losses, d, K_, rng);
  }

private:
  std::size_t K_;
  std::size_t candidates_;
};

// Greedy facility location on a dissimilarity matrix D: repeatedly add the
// client that most reduces sum_j min_{i in S} D_ij. Weights follow the same
// proxy rule as the set selector, with D in place of B.
inline SelectionDecision select_divfl(const Matrix& D, std::size_t K) {
  const auto m = static_cast<std::size_t>(D.rows());
  if (K < 1 || K > m) throw std::invalid_argument("DivFL: need 1 <= K <= m");
  std::vector<double> cover(m, std::numeric_limits<double>::infinity());
  std::vector<ClientIndex> S;
  std::vector<bool> taken(m, false);
  for (std::size_t step = 0; step < K; ++step) {
    ClientIndex best = m;
    double best_cost = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < m; ++c) {
      if (taken[c]) continue;
      double cost = 0.0;
      for (std::size_t j = 0; j < m; ++j)
        cost += std::min(cover[j], D(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(j)));
      if (cost < best_cost) {
        best_cost = cost;
        best = c;
      }
    }
    taken[best] = true;
    S.push_back(best);
    for (std::size_t j = 0; j < m; ++j)
      cover[j] = std::min(cover[j], D(static_cast<Eigen::Index>(best), static_cast<Eigen::Index>(j)));
  }
  auto d = coefficients_for_set(S, D).decision;
  return d;
}

// Keeps the last gradient reported by each client; participants refresh
// theirs when they are selected. The first call gathers everyone.
class DivFLSelector final : public Selector {
public:
  explicit DivFLSelector(std::size_t K) : K_(K) {}
  std::string name() const override { return "divfl"; }

  SelectionDecision select(const RoundContext& ctx, std::mt19937_64&) override {
    const auto m = ctx.problem.clients();
    if (grads_.empty()) {
      grads_.resize(m);
      for (std::size_t i = 0; i < m; ++i) grads_[i] = ctx.problem.client_gradient(i, ctx.model);
    } else {
      for (auto i : last_) grads_[i] = ctx.problem.client_gradient(i, ctx.model);
    }
    Matrix D = Matrix::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = i + 1; j < m; ++j) {
        const double v = (grads_[i] - grads_[j]).norm();
        D(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
        D(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = v;
      }
    auto d = select_divfl(D, K_);
    last_ = d.distinct();
    return d;
  }

private:
  std::size_t K_;
  std::vector<Vector> grads_;
  std::vector<ClientIndex> last_;
};

// Fastest-first participation: start with the `initial` fastest clients and
// double the active prefix whenever the training loss stalls, i.e. the best
// loss has not improved by `threshold` (relative) for `patience` rounds.
class FlanpSelector final : public Selector {
public:
  FlanpSelector(std::size_t initial = 2, std::size_t patience = 3, double threshold = 0.01)
      : active_(initial), patience_(patience), threshold_(threshold) {
    if (initial < 1) throw std::invalid_argument("FLANP: initial prefix must be >= 1");
  }
  std::string name() const override { return "flanp"; }

  SelectionDecision select(const RoundContext& ctx, std::mt19937_64&) override {
    m_ = ctx.problem.clients();
    active_ = std::min(active_, m_);
    return uniform_decision(all_clients(active_));
  }

  void observe(const RoundRecord& rec) override {
    if (rec.selected.empty()) {  // initial state record
      best_ = rec.train_loss;
      return;
    }
    if (rec.train_loss < best_ * (1.0 - threshold_)) {
      best_ = rec.train_loss;
      stall_ = 0;
      return;
    }
    if (++stall_ >= patience_) {
      if (active_ < m_) active_ = std::min(2 * active_, m_);
      stall_ = 0;
      best_ = rec.train_loss;
    }
  }

  std::size_t active() const { return active_; }

private:
  std::size_t active_;
  std::size_t patience_;
  double threshold_;
  std::size_t m_ = 0;
  std::size_t stall_ = 0;
  double best_ = std::numeric_limits<double>::infinity();
};

// Same set every round with proxy coefficients from a fixed B.
class FixedSetSelector final : public Selector {
public:
  FixedSetSelector(std::vector<ClientIndex> S, const Matrix& B)
      : decision_(coefficients_for_set(S, B).decision) {}
  std::string name() const override { return "fixed_set"; }
  SelectionDecision select(const RoundContext&, std::mt19937_64&) override { return decision_; }

private:
  SelectionDecision decision_;
};

class FixedDistributionSelector final : public Selector {
public:
  FixedDistributionSelector(Vector p, std::size_t K) : p_(std::move(p)), K_(K) {}
  std::string name() const override { return "fixed_distribution"; }
  SelectionDecision select(const RoundContext&, std::mt19937_64& rng) override {
    return sample_multiset(p_, K_, rng);
  }

private:
  Vector p_;
  std::size_t K_;
};

}  // namespace fedsel
