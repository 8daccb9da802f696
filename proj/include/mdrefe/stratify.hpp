#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mdrefe/rng.hpp"
#include "mdrefe/types.hpp"
#include "mdrefe/xor_model.hpp"

namespace mdrefe {

struct StratumSizes {
  std::size_t cases = 0;
  std::size_t controls = 0;

  std::size_t total() const { return cases + controls; }
  std::size_t of(Label y) const { return y == Label::kCase ? cases : controls; }
};

/// N_1 = max{floor(a N), 1} cases and N_-1 = N - N_1 controls.
inline StratumSizes stratum_sizes(std::size_t total, double case_ratio) {
  require(case_ratio > 0.0 && case_ratio < 1.0, "case ratio a must lie in (0, 1)");
  require(total >= 1, "sample size must be positive");
  // The small offset keeps products such as 0.29 * 100 from flooring to 28.
  auto cases = static_cast<std::size_t>(std::floor(case_ratio * static_cast<double>(total) + 1e-9));
  cases = std::min(std::max<std::size_t>(cases, 1), total);
  return {cases, total - cases};
}

/// Label tallies over a prefix of the raw stream.
struct ClassCounts {
  std::uint64_t controls = 0;
  std::uint64_t cases = 0;

  std::uint64_t total() const { return controls + cases; }
  std::uint64_t of(Label y) const { return y == Label::kCase ? cases : controls; }
  void add(Label y) { (y == Label::kCase ? cases : controls) += 1; }
};

inline constexpr std::uint64_t kDefaultDrawCap = 1'000'000'000ULL;

/// Result of label-dependent acceptance on a raw label sequence.
struct QuotaOutcome {
  std::uint64_t n_tilde = 0;  // max of the two stopping indices
  ClassCounts seen;           // labels over the first n_tilde draws
};

inline Label label_of(Label y) { return y; }
inline Label label_of(const PendingObservation& p) { return p.y; }

/// Consumes labels from `next_label` until `quota` cases and controls have
/// been accepted, calling `accept(label, draw)` for each accepted draw in
/// arrival order. Works on any label source, which is what the budget Monte
/// Carlo uses.
template <class NextLabel, class Accept>
QuotaOutcome fill_quotas(NextLabel&& next_label, StratumSizes quota, std::uint64_t draw_cap, Accept&& accept) {
  QuotaOutcome out;
  std::uint64_t taken_cases = 0, taken_controls = 0;
  while (taken_cases < quota.cases || taken_controls < quota.controls) {
    if (out.n_tilde >= draw_cap)
      throw BudgetExceeded("strata not filled within " + std::to_string(draw_cap) + " raw draws");
    auto draw = next_label();
    const Label y = label_of(draw);
    ++out.n_tilde;
    out.seen.add(y);
    if (y == Label::kCase && taken_cases < quota.cases) {
      ++taken_cases;
      accept(y, draw);
    } else if (y == Label::kControl && taken_controls < quota.controls) {
      ++taken_controls;
      accept(y, draw);
    }
  }
  return out;
}

/// zeta_N: N_1 cases and N_-1 controls in arrival order, plus the raw-draw
/// bookkeeping needed for prevalence estimation and cost accounting.
struct StratifiedSample {
  GenotypeMatrix cases;
  GenotypeMatrix controls;
  double case_ratio = 0.5;
  std::uint64_t n_tilde = 0;
  ClassCounts y_counts;

  std::size_t size() const { return cases.rows() + controls.rows(); }
  std::size_t n_factors() const { return cases.cols(); }
  const GenotypeMatrix& stratum(Label y) const { return y == Label::kCase ? cases : controls; }
};

inline StratifiedSample build_stratified(const XorModel& model, SeededStream& stream, StratumSizes quota,
                                         double case_ratio, std::uint64_t draw_cap = kDefaultDrawCap) {
  StratifiedSample s;
  s.case_ratio = case_ratio;
  s.cases = GenotypeMatrix(model.n());
  s.controls = GenotypeMatrix(model.n());
  s.cases.reserve(quota.cases);
  s.controls.reserve(quota.controls);
  FactorVector x(model.n());
  const QuotaOutcome out = fill_quotas(
      [&] { return draw_label(model, stream); }, quota, draw_cap,
      [&](Label y, const PendingObservation& p) {
        materialize_into(model, stream, p, x);
        (y == Label::kCase ? s.cases : s.controls).push_back(x);
      });
  s.n_tilde = out.n_tilde;
  s.y_counts = out.seen;
  return s;
}

/// Builds zeta_N with N_1 = max{floor(aN), 1}. Genotypes are materialized only
/// for accepted draws; skipped draws cost one label measurement each.
inline StratifiedSample build_stratified(const XorModel& model, SeededStream& stream, std::size_t total,
                                         double case_ratio, std::uint64_t draw_cap = kDefaultDrawCap) {
  require(total >= 2, "stratified sample needs N >= 2");
  return build_stratified(model, stream, stratum_sizes(total, case_ratio), case_ratio, draw_cap);
}

/// xi_C: the first `size` raw observations, labels and genotypes alike.
struct IidSample {
  GenotypeMatrix x;
  std::vector<Label> y;

  std::size_t size() const { return y.size(); }
  std::size_t n_factors() const { return x.cols(); }
};

inline IidSample draw_iid_sample(const XorModel& model, SeededStream& stream, std::size_t size) {
  IidSample s{GenotypeMatrix(model.n()), {}};
  s.x.reserve(size);
  s.y.reserve(size);
  FactorVector x(model.n());
  for (std::size_t i = 0; i < size; ++i) {
    const PendingObservation p = draw_label(model, stream);
    materialize_into(model, stream, p, x);
    s.x.push_back(x);
    s.y.push_back(p.y);
  }
  return s;
}

enum class PrevalenceSource { kKnown, kStreamFrequency, kExternalSample };

struct PrevalenceEstimate {
  double p_hat = 0.5;
  PrevalenceSource source = PrevalenceSource::kKnown;

  static PrevalenceEstimate known(double p) {
    require(p > 0.0 && p < 1.0, "prevalence must lie in (0, 1)");
    return {p, PrevalenceSource::kKnown};
  }
  /// P-hat computed from another sample of the same law. Not cross-validated.
  static PrevalenceEstimate external(double p_hat) {
    require(p_hat >= 0.0 && p_hat <= 1.0, "prevalence estimate must lie in [0, 1]");
    return {p_hat, PrevalenceSource::kExternalSample};
  }

  double of(Label y) const { return y == Label::kCase ? p_hat : 1.0 - p_hat; }
};

/// Frequency of Y = 1 among the first n_tilde raw draws.
inline PrevalenceEstimate estimate_prevalence(const StratifiedSample& sample) {
  require(sample.n_tilde > 0, "sample has not been built");
  return {static_cast<double>(sample.y_counts.cases) / static_cast<double>(sample.n_tilde),
          PrevalenceSource::kStreamFrequency};
}

/// Analytic law of X given Y = 1 over all 3^n genotype vectors, indexed by
/// cell_code() over factors 0..n-1.
inline std::vector<double> case_conditional_law(const XorModel& model) {
  require(model.n() <= 10, "case law enumeration limited to n <= 10");
  const std::size_t n = model.n();
  std::vector<double> law(pow3(n));
  FactorVector x(n);
  double total = 0.0;
  for (std::uint64_t code = 0; code < law.size(); ++code) {
    decode_cell(code, x);
    double p = 1.0;
    for (std::size_t i = 0; i < n; ++i) p *= genotype_pmf(model.mafs()[i], x[i]);
    law[code] = p * model.response_prob(x);
    total += law[code];
  }
  for (double& v : law) v /= total;
  return law;
}

inline Subset all_factors(std::size_t n) {
  Subset s(n);
  for (std::size_t i = 0; i < n; ++i) s[i] = i;
  return s;
}

/// Total-variation distance between the empirical law of `num_cases`
/// accepted cases and the analytic law of X given Y = 1.
inline double case_law_check(const XorModel& model, SeededStream& stream, std::size_t num_cases) {
  const auto law = case_conditional_law(model);
  const StratifiedSample s = build_stratified(model, stream, StratumSizes{num_cases, 0}, 0.5);
  const Subset every = all_factors(model.n());
  std::vector<double> freq(law.size(), 0.0);
  for (std::size_t i = 0; i < s.cases.rows(); ++i) freq[cell_code(s.cases.row(i), every)] += 1.0;
  double tv = 0.0;
  for (std::size_t c = 0; c < law.size(); ++c) tv += std::abs(freq[c] / static_cast<double>(num_cases) - law[c]);
  return 0.5 * tv;
}

}  // namespace mdrefe
