#pragma once

#include "fedsel/core.hpp"
#include "fedsel/datagen.hpp"
#include "fedsel/delays.hpp"
#include "fedsel/heterogeneity.hpp"
#include "fedsel/selection.hpp"

#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace fedsel {

// E full-gradient steps on f_i starting from w.
inline Vector local_update(const QuadraticProblem& prob, ClientIndex i, Vector w, double eta, std::size_t E) {
  if (E < 1) throw std::invalid_argument("local_update: E must be >= 1");
  for (std::size_t e = 0; e < E; ++e) {
    w -= eta * prob.client_gradient(i, w);
    if (!w.allFinite())
      throw DivergenceError("client " + std::to_string(i + 1) + " produced a non-finite model at local step " +
                            std::to_string(e + 1));
  }
  return w;
}

// sum_i alpha_i w_i over the distinct clients of the decision.
inline Vector aggregate(const SelectionDecision& decision, const std::map<ClientIndex, Vector>& models) {
  if (decision.coefficients.empty()) throw std::invalid_argument("aggregate: empty decision");
  if (models.size() != decision.coefficients.size())
    throw std::invalid_argument("aggregate: got " + std::to_string(models.size()) + " models for " +
                                std::to_string(decision.coefficients.size()) + " coefficients");
  Vector out;
  for (const auto& [i, a] : decision.coefficients) {
    auto it = models.find(i);
    if (it == models.end()) throw std::invalid_argument("aggregate: missing model for client " + std::to_string(i + 1));
    if (out.size() == 0) out = Vector::Zero(it->second.size());
    out += a * it->second;
  }
  return out;
}

// R >= L / (mu (1 - B)) * ln(delta0 / eps), rounded up.
inline std::size_t theoretical_rounds(const CurvatureConstants& c, const BiasBound& bias, double delta0, double eps) {
  if (bias.B_term >= 1.0) throw AssumptionViolation("theoretical_rounds: bias term >= 1");
  if (!(c.mu > 0.0) || c.L < c.mu) throw std::invalid_argument("theoretical_rounds: need 0 < mu <= L");
  if (!(eps > 0.0) || !(delta0 > eps)) throw std::invalid_argument("theoretical_rounds: need delta0 > eps > 0");
  const double r = c.L / (c.mu * (1.0 - bias.B_term)) * std::log(delta0 / eps);
  // Guard against 0.9999999999 style round-off before the ceiling.
  return static_cast<std::size_t>(std::ceil(r - 1e-12 * r));
}

// Neighbourhood radius eps + Gamma / (mu (1 - B)) reached after theoretical_rounds.
inline double theoretical_neighbourhood(const CurvatureConstants& c, const BiasBound& bias, double eps) {
  return eps + bias.Gamma_term / (c.mu * (1.0 - bias.B_term));
}

// Server-side view of client covariances, each estimated from one batch of
// the client's features. Pairwise B entries touching a refreshed client are
// recomputed; the rest keep their previous values.
class CovarianceTracker {
public:
  // batch == 0 or batch >= n uses every sample, making estimates exact.
  CovarianceTracker(const QuadraticProblem& prob, std::size_t batch, std::optional<double> rescale_margin,
                    std::mt19937_64& rng)
      : prob_(prob), batch_(batch), margin_(rescale_margin) {
    const auto m = prob.clients();
    est_.resize(m);
    for (std::size_t i = 0; i < m; ++i) est_[i] = estimate(i, rng);
    recompute_all();
  }

  void refresh(std::span<const ClientIndex> participants, std::mt19937_64& rng) {
    if (exact()) return;
    std::vector<ClientIndex> fresh(participants.begin(), participants.end());
    std::sort(fresh.begin(), fresh.end());
    fresh.erase(std::unique(fresh.begin(), fresh.end()), fresh.end());
    for (auto i : fresh) est_[i] = estimate(i, rng);

    const auto m = est_.size();
    Matrix A = Matrix::Zero(prob_.dim(), prob_.dim());
    for (const auto& e : est_) A += e;
    A /= static_cast<double>(m);
    const SpdInverse inv(A);
    std::vector<Matrix> scaled(m);
    for (std::size_t i = 0; i < m; ++i) scaled[i] = est_[i] * inv.matrix();
    for (auto i : fresh)
      for (std::size_t j = 0; j < m; ++j) {
        if (i == j) continue;
        const double b = spectral_norm(scaled[i] - scaled[j]);
        raw_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = b;
        raw_(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = b;
      }
    update_view();
  }

  bool exact() const { return batch_ == 0 || batch_ >= min_samples(); }
  const Matrix& raw_B() const { return raw_; }
  const Matrix& view() const { return view_; }
  const Matrix& estimate_of(ClientIndex i) const { return est_.at(i); }

private:
  std::size_t min_samples() const {
    std::size_t n = prob_.samples(0);
    for (std::size_t i = 1; i < prob_.clients(); ++i) n = std::min(n, prob_.samples(i));
    return n;
  }

  Matrix estimate(ClientIndex i, std::mt19937_64& rng) const {
    const auto& X = prob_.client(i).features;
    if (batch_ == 0 || batch_ >= static_cast<std::size_t>(X.rows()) || X.rows() == 0) return prob_.covariance(i);
    auto rows = sample_without_replacement(all_clients(static_cast<std::size_t>(X.rows())), batch_, rng);
    Matrix Xb(static_cast<Eigen::Index>(batch_), X.cols());
    for (std::size_t r = 0; r < batch_; ++r) Xb.row(static_cast<Eigen::Index>(r)) = X.row(static_cast<Eigen::Index>(rows[r]));
    return Xb.transpose() * Xb / static_cast<double>(batch_);
  }

  void recompute_all() {
    Matrix A = Matrix::Zero(prob_.dim(), prob_.dim());
    for (const auto& e : est_) A += e;
    A /= static_cast<double>(est_.size());
    raw_ = compute_B_linreg(est_, A);
    update_view();
  }

  void update_view() { view_ = margin_ ? rescale_to_assumption(raw_, *margin_) : raw_; }

  const QuadraticProblem& prob_;
  std::size_t batch_;
  std::optional<double> margin_;
  std::vector<Matrix> est_;
  Matrix raw_;
  Matrix view_;
};

enum class TargetMetric { TestLoss, TrainLoss, Suboptimality };

struct EngineConfig {
  std::optional<double> eta;  // empty: 1/L of the global loss
  std::size_t local_steps = 1;
  std::size_t max_rounds = 100;
  TargetMetric target_metric = TargetMetric::TestLoss;
  std::optional<double> target;
  std::optional<Vector> initial_model;  // empty: zeros
  std::uint64_t seed = 0;

  // Heterogeneity estimates handed to selectors.
  std::size_t covariance_batch = 0;
  std::optional<double> rescale_margin = 0.05;
  bool refresh_heterogeneity = true;
  // Uses the given B (e.g. exact constants) instead of estimating one.
  std::optional<Matrix> fixed_B;
};

struct RoundStats {
  RoundRecord record;
  double suboptimality = 0.0;
};

struct RunResult {
  std::vector<RoundStats> rounds;
  std::optional<double> time_to_target;
  Vector final_model;
  bool diverged = false;
  std::string message;
  double selector_seconds = 0.0;  // wall time spent inside the selector

  std::vector<RoundRecord> records() const {
    std::vector<RoundRecord> out;
    out.reserve(rounds.size());
    for (const auto& r : rounds) out.push_back(r.record);
    return out;
  }
};

inline double metric_of(const RoundStats& s, TargetMetric m) {
  switch (m) {
    case TargetMetric::TestLoss: return s.record.test_metric;
    case TargetMetric::TrainLoss: return s.record.train_loss;
    case TargetMetric::Suboptimality: return s.suboptimality;
  }
  return s.record.test_metric;
}

// Algorithm loop: select, broadcast, local steps, weighted average, charge
// the slowest participant's sampled delay to the clock.
inline RunResult run(const QuadraticProblem& prob, const ClientRoster& roster, const DelayModel& delays,
                     Selector& selector, const EngineConfig& cfg) {
  const auto m = prob.clients();
  if (roster.size() != m || delays.size() != m)
    throw std::invalid_argument("run: problem, roster and delay model disagree on the client count");
  if (cfg.local_steps < 1) throw std::invalid_argument("run: local_steps must be >= 1");
  const double eta = cfg.eta.value_or(1.0 / prob.curvature().L);
  if (!(eta > 0.0)) throw std::invalid_argument("run: step size must be positive");

  // Independent streams: selection, covariance batches.
  std::seed_seq sel_seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32), 1u};
  std::seed_seq cov_seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32), 2u};
  std::mt19937_64 sel_rng(sel_seq);
  std::mt19937_64 cov_rng(cov_seq);

  std::optional<CovarianceTracker> tracker;
  const Matrix no_B;
  if (!cfg.fixed_B && selector.uses_heterogeneity())
    tracker.emplace(prob, cfg.covariance_batch, cfg.rescale_margin, cov_rng);
  const auto current_B = [&]() -> const Matrix& {
    if (cfg.fixed_B) return *cfg.fixed_B;
    return tracker ? tracker->view() : no_B;
  };

  RunResult res;
  Vector w = cfg.initial_model.value_or(Vector::Zero(prob.dim()));
  if (w.size() != prob.dim()) throw std::invalid_argument("run: initial model has the wrong dimension");

  const auto record_state = [&](std::size_t r, double delay, double clock, std::vector<ClientIndex> sel) {
    RoundStats s;
    s.record = {r, delay, clock, prob.global_loss(w), prob.normalized_test_loss(w), std::move(sel)};
    s.suboptimality = prob.suboptimality(w);
    res.rounds.push_back(s);
    selector.observe(res.rounds.back().record);
    if (cfg.target && !res.time_to_target && metric_of(res.rounds.back(), cfg.target_metric) <= *cfg.target)
      res.time_to_target = clock;
  };

  double clock = 0.0;
  record_state(0, 0.0, 0.0, {});
  for (std::size_t r = 1; r <= cfg.max_rounds && !res.time_to_target; ++r) {
    SelectionDecision decision;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      RoundContext ctx{r - 1, w, prob, roster, current_B()};
      decision = selector.select(ctx, sel_rng);
      validate(decision, m, 1e-9);
    } catch (const std::exception& e) {
      throw std::runtime_error("round " + std::to_string(r) + ": selector '" + selector.name() + "' failed: " + e.what());
    }
    res.selector_seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    const auto participants = decision.distinct();
    std::map<ClientIndex, Vector> models;
    try {
      for (auto i : participants) models.emplace(i, local_update(prob, i, w, eta, cfg.local_steps));
    } catch (const DivergenceError& e) {
      res.diverged = true;
      res.message = "round " + std::to_string(r) + ": " + e.what();
      break;
    }
    w = aggregate(decision, models);

    std::vector<double> sampled(m, 0.0);
    for (auto i : participants) sampled[i] = delays.sample(i, r, cfg.seed);
    const double delay = round_delay(participants, sampled);
    clock += delay;

    std::vector<ClientIndex> members = decision.members;
    std::sort(members.begin(), members.end());
    record_state(r, delay, clock, std::move(members));
    if (!std::isfinite(res.rounds.back().record.train_loss)) {
      res.diverged = true;
      res.message = "round " + std::to_string(r) + ": training loss is not finite";
      break;
    }
    if (tracker && cfg.refresh_heterogeneity) tracker->refresh(participants, cov_rng);
  }
  res.final_model = w;
  return res;
}

}  // namespace fedsel
