#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>

#include "mdrefe/rng.hpp"
#include "mdrefe/stratify.hpp"
#include "mdrefe/types.hpp"

namespace mdrefe {

namespace detail {

inline double nb_log_pmf(std::uint64_t r, double q, std::uint64_t k) {
  const double rd = static_cast<double>(r);
  const double kd = static_cast<double>(k);
  double log_binom = std::lgamma(kd + rd) - std::lgamma(kd + 1.0) - std::lgamma(rd);
  const double log_q_term = k == 0 ? 0.0 : kd * std::log(q);
  return log_binom + log_q_term + rd * std::log1p(-q);
}

inline constexpr double kTailTolerance = 1e-17;

/// P(lo <= U <= hi) for U ~ NB(r, q). Sums outward from the mode clamped
/// into [lo, hi] and stops once the geometric bound on the remaining tail
/// drops below kTailTolerance times the running sum. r = 0 is the point mass
/// at zero.
inline double nb_range(std::uint64_t r, double q, std::uint64_t lo, double hi) {
  if (!(hi >= static_cast<double>(lo))) return 0.0;
  if (r == 0) return lo == 0 ? 1.0 : 0.0;
  const double hi_floor = std::floor(std::min(hi, 9.0e15));
  const auto top = static_cast<std::uint64_t>(hi_floor);
  const double rd = static_cast<double>(r);
  const auto mode = r > 1 ? static_cast<std::uint64_t>(std::floor((rd - 1.0) * q / (1.0 - q))) : 0;
  const std::uint64_t start = std::clamp(mode, lo, top);

  const double t0 = std::exp(nb_log_pmf(r, q, start));
  double sum = t0;

  double t = t0;
  for (std::uint64_t k = start + 1; k <= top; ++k) {
    const double ratio = q * (static_cast<double>(k - 1) + rd) / static_cast<double>(k);
    t *= ratio;
    sum += t;
    if (k > mode && ratio < 1.0 && t * ratio / (1.0 - ratio) < kTailTolerance * sum) break;
    if (t == 0.0) break;
  }

  t = t0;
  for (std::uint64_t k = start; k > lo; --k) {
    // pmf(k-1) = pmf(k) * k / (q (k - 1 + r))
    const double ratio = static_cast<double>(k) / (q * (static_cast<double>(k - 1) + rd));
    t *= ratio;
    sum += t;
    if (k - 1 < mode && ratio < 1.0 && t * ratio / (1.0 - ratio) < kTailTolerance * sum) break;
    if (t == 0.0) break;
  }
  return std::min(sum, 1.0);
}

/// Largest integer draw count within `limit`, forgiving rounding noise in
/// expressions such as (1.1 * 20 - 10) / 0.1.
inline double floor_with_slack(double limit) {
  return std::floor(limit + 1e-9 * std::max(1.0, std::abs(limit)));
}

}  // namespace detail

/// P(U = k) = C(k + r - 1, k) q^k (1 - q)^r: the number of successes before
/// the r-th failure, success probability q.
inline double nb_pmf(std::uint64_t r, double q, std::uint64_t k) {
  require(r >= 1, "negative binomial needs r >= 1");
  require(q > 0.0 && q < 1.0, "negative binomial needs q in (0, 1)");
  return std::exp(detail::nb_log_pmf(r, q, k));
}

/// Law of N-tilde, the raw draws needed to fill N_1 cases and N_-1 controls
/// when P(Y = 1) = p.
class NTildeLaw {
 public:
  NTildeLaw(StratumSizes sizes, double p) : sizes_(sizes), p_(p) {
    require(p > 0.0 && p < 1.0, "prevalence must lie in (0, 1)");
    require(sizes.total() >= 1, "empty stratified design");
  }

  const StratumSizes& sizes() const { return sizes_; }
  double prevalence() const { return p_; }
  std::uint64_t min_value() const { return sizes_.total(); }

  /// P(N-tilde = m) = P(eta_-1 = m - N_-1) + P(eta_1 = m - N_1) for m >= N,
  /// with eta_-1 ~ NB(N_-1, p) and eta_1 ~ NB(N_1, 1 - p).
  double pmf(std::uint64_t m) const {
    if (m < min_value()) return 0.0;
    double out = 0.0;
    if (sizes_.controls > 0) out += std::exp(detail::nb_log_pmf(sizes_.controls, p_, m - sizes_.controls));
    if (sizes_.cases > 0) out += std::exp(detail::nb_log_pmf(sizes_.cases, 1.0 - p_, m - sizes_.cases));
    return out;
  }

  /// P(N-tilde <= limit) for a real limit.
  double cdf(double limit) const {
    const double n_ctrl = static_cast<double>(sizes_.controls);
    const double n_case = static_cast<double>(sizes_.cases);
    return std::min(1.0, detail::nb_range(sizes_.controls, p_, sizes_.cases, limit - n_ctrl) +
                             detail::nb_range(sizes_.cases, 1.0 - p_, sizes_.controls, limit - n_case));
  }

  struct Summary {
    double mean = 0.0;
    double sd = 0.0;
    std::uint64_t q05 = 0, q50 = 0, q95 = 0;
    double mass = 0.0;  // pmf mass actually summed
  };

  /// Moments and quantiles by direct summation of the pmf until the
  /// remaining mass is below 1e-13.
  Summary summary() const {
    Summary s;
    double m1 = 0.0, m2 = 0.0;
    bool have05 = false, have50 = false, have95 = false;
    for (std::uint64_t m = min_value();; ++m) {
      const double pm = pmf(m);
      s.mass += pm;
      const double md = static_cast<double>(m);
      m1 += md * pm;
      m2 += md * md * pm;
      if (!have05 && s.mass >= 0.05) have05 = true, s.q05 = m;
      if (!have50 && s.mass >= 0.50) have50 = true, s.q50 = m;
      if (!have95 && s.mass >= 0.95) have95 = true, s.q95 = m;
      if (s.mass >= 1.0 - 1e-13 || m - min_value() > 50'000'000) break;
    }
    s.mean = m1 / s.mass;
    s.sd = std::sqrt(std::max(0.0, m2 / s.mass - s.mean * s.mean));
    return s;
  }

 private:
  StratumSizes sizes_;
  double p_;
};

inline double ntilde_pmf(const NTildeLaw& law, std::uint64_t m) { return law.pmf(m); }

/// Budget C, price ratio w of a label measurement to a full observation,
/// case ratio a and overrun probability alpha.
struct CostParams {
  std::uint64_t budget = 0;
  double price_ratio = 0.0;
  double case_ratio = 0.5;
  double alpha = 0.05;

  void validate() const {
    require(budget >= 1, "budget C must be at least 1");
    require(price_ratio >= 0.0 && std::isfinite(price_ratio), "price ratio w must be nonnegative");
    require(case_ratio > 0.0 && case_ratio < 1.0, "case ratio a must lie in (0, 1)");
    require(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0, 1)");
  }
};

/// C_str(N, w) = N / (w + 1) + w N-tilde / (w + 1).
inline double stratified_cost(std::uint64_t size, std::uint64_t n_tilde, double price_ratio) {
  return (static_cast<double>(size) + price_ratio * static_cast<double>(n_tilde)) / (price_ratio + 1.0);
}

/// Largest N-tilde keeping C_str(N, w) within the budget: ((w + 1) C - N) / w.
inline double max_affordable_draws(std::uint64_t size, const CostParams& params) {
  const double w = params.price_ratio;
  return detail::floor_with_slack(((w + 1.0) * static_cast<double>(params.budget) - static_cast<double>(size)) / w);
}

/// P(C_str(N, w) <= C) when P(Y = 1) = p.
inline double prob_cost_within(std::uint64_t size, const CostParams& params, double p) {
  params.validate();
  require(p > 0.0 && p < 1.0, "prevalence must lie in (0, 1)");
  require(size >= 1, "sample size must be positive");
  if (size > params.budget) return 0.0;
  if (params.price_ratio == 0.0) return 1.0;
  const NTildeLaw law(stratum_sizes(size, params.case_ratio), p);
  return law.cdf(max_affordable_draws(size, params));
}

enum class SizeParity { kAny, kEven };

/// s'_str(C, w, alpha): the largest N in 1..C with P(C_str(N, w) <= C) >= 1 - alpha.
/// The success probability is nonincreasing in N, so the search bisects.
inline std::uint64_t s_str(const CostParams& params, double p, SizeParity parity = SizeParity::kAny) {
  params.validate();
  require(p > 0.0 && p < 1.0, "prevalence must lie in (0, 1)");
  const std::uint64_t step = parity == SizeParity::kEven ? 2 : 1;
  const std::uint64_t count = params.budget / step;  // candidates step, 2 step, ..., count * step
  if (count == 0) throw NoFeasibleSize("budget admits no sample of the requested parity");
  if (params.price_ratio == 0.0) return count * step;
  auto feasible = [&](std::uint64_t i) { return prob_cost_within(i * step, params, p) >= 1.0 - params.alpha; };
  if (!feasible(1))
    throw NoFeasibleSize("no stratified sample size fits budget " + std::to_string(params.budget) +
                         " with probability " + std::to_string(1.0 - params.alpha));
  std::uint64_t good = 1, bad = count + 1;
  while (bad - good > 1) {
    const std::uint64_t mid = good + (bad - good) / 2;
    (feasible(mid) ? good : bad) = mid;
  }
  return good * step;
}

/// s'_str with the plug-in prevalence estimate p-hat in place of p.
inline std::uint64_t s_str_estimated(const CostParams& params, double p_hat,
                                     SizeParity parity = SizeParity::kAny) {
  require(p_hat > 0.0 && p_hat < 1.0, "prevalence estimate must lie in (0, 1)");
  return s_str(params, p_hat, parity);
}

/// Asymptotic bound on N / C for an affordable stratified design:
/// (1 + w) / (1 + w max{a / p, (1 - a) / (1 - p)}).
inline double lambda0(double case_ratio, double price_ratio, double p) {
  require(case_ratio > 0.0 && case_ratio < 1.0, "case ratio a must lie in (0, 1)");
  require(price_ratio >= 0.0, "price ratio w must be nonnegative");
  require(p > 0.0 && p < 1.0, "prevalence must lie in (0, 1)");
  const double worst = std::max(case_ratio / p, (1.0 - case_ratio) / (1.0 - p));
  return (1.0 + price_ratio) / (1.0 + price_ratio * worst);
}

/// Monte Carlo estimate of P(C_str(N, w) <= C) from Bernoulli(p) label
/// streams.
inline double simulate_cost_within(std::uint64_t size, const CostParams& params, double p, std::size_t trials,
                                   SeededStream& stream) {
  params.validate();
  require(trials > 0, "need at least one trial");
  if (size > params.budget) return 0.0;
  const StratumSizes sizes = stratum_sizes(size, params.case_ratio);
  const double limit = params.price_ratio == 0.0 ? std::numeric_limits<double>::infinity()
                                                 : max_affordable_draws(size, params);
  std::size_t hits = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    const QuotaOutcome out = fill_quotas(
        [&] { return stream.next_unit() < p ? Label::kCase : Label::kControl; }, sizes, kDefaultDrawCap,
        [](Label, Label) {});
    if (static_cast<double>(out.n_tilde) <= limit) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(trials);
}

}  // namespace mdrefe
