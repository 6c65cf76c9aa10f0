#pragma once

#include "fedsel/core.hpp"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace fedsel {

// Communication time MS / c_i plus a uniform compute time.
struct SyntheticDelayConfig {
  double model_size_bytes = 1e6;
  double link_lo = 200e3;  // bytes/s
  double link_hi = 5e6;
  double compute_lo = 15.0;  // seconds
  double compute_hi = 100.0;

  void validate() const {
    if (model_size_bytes < 0.0) throw std::invalid_argument("synthetic delays: negative model size");
    if (!(link_lo > 0.0) || link_hi < link_lo)
      throw std::invalid_argument("synthetic delays: link speed range must satisfy 0 < lo <= hi");
    if (compute_lo < 0.0 || compute_hi < compute_lo)
      throw std::invalid_argument("synthetic delays: compute range must satisfy 0 <= a <= b");
  }
};

// Per-client mean delays with multiplicative log-normal jitter of unit mean.
struct TraceDelayConfig {
  std::vector<double> mean_delays;
  double lognormal_sigma = 0.5;
  std::vector<std::optional<double>> sigma_override;  // empty or one per client

  double sigma(ClientIndex i) const {
    if (i < sigma_override.size() && sigma_override[i]) return *sigma_override[i];
    return lognormal_sigma;
  }
};

inline std::vector<double> synthesize_delays(const SyntheticDelayConfig& cfg, std::size_t m,
                                             std::uint64_t seed) {
  cfg.validate();
  if (m < 1) throw std::invalid_argument("synthesize_delays: m must be >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> link(cfg.link_lo, cfg.link_hi);
  std::uniform_real_distribution<double> comp(cfg.compute_lo, cfg.compute_hi);
  std::vector<double> out(m);
  for (auto& t : out) {
    // Degenerate ranges are handled explicitly so equal bounds give exact values.
    const double c = cfg.link_lo == cfg.link_hi ? cfg.link_lo : link(rng);
    const double a = cfg.compute_lo == cfg.compute_hi ? cfg.compute_lo : comp(rng);
    t = cfg.model_size_bytes / c + a;
  }
  return out;
}

// mean * exp(sigma Z - sigma^2/2), Z ~ N(0, 1).
inline double lognormal_jitter(double mean, double sigma, std::mt19937_64& rng) {
  if (sigma == 0.0) return mean;
  std::normal_distribution<double> z;
  return mean * std::exp(sigma * z(rng) - 0.5 * sigma * sigma);
}

// Round-by-round delay process. Clients are in roster (sorted) order.
class DelayModel {
public:
  // Synthetic delays stay fixed per client across rounds.
  static DelayModel constant(std::vector<double> sorted_means) {
    DelayModel d;
    d.means_ = std::move(sorted_means);
    d.sigmas_.assign(d.means_.size(), 0.0);
    return d;
  }

  static DelayModel lognormal(std::vector<double> sorted_means, std::vector<double> sigmas) {
    if (sigmas.size() != sorted_means.size())
      throw std::invalid_argument("DelayModel: one sigma per client required");
    for (double s : sigmas)
      if (!(s >= 0.0) || !std::isfinite(s)) throw std::invalid_argument("DelayModel: sigma must be >= 0");
    DelayModel d;
    d.means_ = std::move(sorted_means);
    d.sigmas_ = std::move(sigmas);
    return d;
  }

  std::size_t size() const { return means_.size(); }
  std::span<const double> means() const { return means_; }
  double sigma(ClientIndex i) const { return sigmas_.at(i); }

  double sample(ClientIndex i, std::mt19937_64& rng) const {
    return lognormal_jitter(means_.at(i), sigmas_.at(i), rng);
  }

  // Jitter for (client, round) drawn from a stream keyed on both, so every
  // selector in a run sees the same delay for the same client and round.
  double sample(ClientIndex i, std::size_t round, std::uint64_t seed) const {
    if (sigmas_.at(i) == 0.0) return means_.at(i);
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(round), static_cast<std::uint32_t>(i), 0xde1a7u};
    std::mt19937_64 rng(seq);
    return sample(i, rng);
  }

private:
  std::vector<double> means_;
  std::vector<double> sigmas_;
};

// Builds the delay process for a roster from a trace config given in input order.
inline DelayModel make_trace_model(const TraceDelayConfig& cfg, const ClientRoster& roster) {
  if (cfg.mean_delays.size() != roster.size())
    throw std::invalid_argument("trace has " + std::to_string(cfg.mean_delays.size()) + " clients, roster has " +
                                std::to_string(roster.size()));
  std::vector<double> means(roster.size()), sig(roster.size());
  for (std::size_t k = 0; k < roster.size(); ++k) {
    means[k] = roster.mean_delay(k);
    sig[k] = cfg.sigma(roster.original_index(k));
  }
  return DelayModel::lognormal(std::move(means), std::move(sig));
}

// --- trace files -----------------------------------------------------------
//
//   client_id,mean_delay_s[,sigma]
//   1,123.4[,0.7]
//
// Ids are 1-based; rows may come in any order but must cover 1..m exactly once.

inline TraceDelayConfig parse_trace(std::istream& in, double default_sigma = 0.5) {
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("trace: empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  bool has_sigma = false;
  if (line == "client_id,mean_delay_s,sigma") has_sigma = true;
  else if (line != "client_id,mean_delay_s")
    throw std::invalid_argument("trace: bad header '" + line + "'");

  std::vector<std::pair<long, std::pair<double, std::optional<double>>>> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    const std::size_t want = has_sigma ? 3 : 2;
    if (cells.size() != want && !(has_sigma && cells.size() == 2))
      throw std::invalid_argument("trace line " + std::to_string(lineno) + ": expected " + std::to_string(want) +
                                  " columns");
    try {
      std::size_t pos = 0;
      const long id = std::stol(cells[0], &pos);
      if (pos != cells[0].size()) throw std::invalid_argument("id");
      const double mean = std::stod(cells[1], &pos);
      if (pos != cells[1].size()) throw std::invalid_argument("delay");
      std::optional<double> sig;
      if (cells.size() == 3 && !cells[2].empty()) {
        sig = std::stod(cells[2], &pos);
        if (pos != cells[2].size() || *sig < 0.0) throw std::invalid_argument("sigma");
      }
      rows.push_back({id, {mean, sig}});
    } catch (const std::exception&) {
      throw std::invalid_argument("trace line " + std::to_string(lineno) + ": malformed value");
    }
  }
  if (rows.empty()) throw std::invalid_argument("trace: no clients");

  TraceDelayConfig cfg;
  cfg.lognormal_sigma = default_sigma;
  const auto m = rows.size();
  cfg.mean_delays.assign(m, 0.0);
  cfg.sigma_override.assign(m, std::nullopt);
  std::vector<bool> seen(m, false);
  for (const auto& [id, val] : rows) {
    if (id < 1 || static_cast<std::size_t>(id) > m || seen[id - 1])
      throw std::invalid_argument("trace: client ids must be exactly 1.." + std::to_string(m));
    seen[id - 1] = true;
    if (!(val.first > 0.0) || !std::isfinite(val.first))
      throw std::invalid_argument("trace: client " + std::to_string(id) + " has non-positive delay");
    cfg.mean_delays[id - 1] = val.first;
    cfg.sigma_override[id - 1] = val.second;
  }
  return cfg;
}

inline TraceDelayConfig read_trace(const std::filesystem::path& path, double default_sigma = 0.5) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open trace file " + path.string());
  return parse_trace(in, default_sigma);
}

inline void write_trace(std::ostream& out, std::span<const double> mean_delays,
                        std::span<const std::optional<double>> sigmas = {}) {
  const bool with_sigma = !sigmas.empty();
  out << (with_sigma ? "client_id,mean_delay_s,sigma\n" : "client_id,mean_delay_s\n");
  out << std::setprecision(17);
  for (std::size_t i = 0; i < mean_delays.size(); ++i) {
    out << (i + 1) << ',' << mean_delays[i];
    if (with_sigma) {
      out << ',';
      if (sigmas[i]) out << *sigmas[i];
    }
    out << '\n';
  }
}

// Long-tailed stand-in for a measured trace: log-normal mean delays.
struct LongTailTraceConfig {
  double median_s = 60.0;
  double shape = 1.5;  // log-space standard deviation
};

inline std::vector<double> synthesize_long_tail(const LongTailTraceConfig& cfg, std::size_t m,
                                                std::uint64_t seed) {
  if (m < 1) throw std::invalid_argument("synthesize_long_tail: m must be >= 1");
  if (!(cfg.median_s > 0.0) || cfg.shape < 0.0) throw std::invalid_argument("synthesize_long_tail: bad parameters");
  std::mt19937_64 rng(seed);
  std::lognormal_distribution<double> dist(std::log(cfg.median_s), cfg.shape);
  std::vector<double> out(m);
  for (auto& t : out) t = cfg.shape == 0.0 ? cfg.median_s : dist(rng);
  return out;
}

}  // namespace fedsel
