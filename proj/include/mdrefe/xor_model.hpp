#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "mdrefe/rng.hpp"
#include "mdrefe/types.hpp"

namespace mdrefe {

/// Hardy-Weinberg genotype law of a SNP with minor allele frequency `maf`.
inline double genotype_pmf(double maf, Genotype v) {
  require(maf > 0.0 && maf <= 0.5, "minor allele frequency must lie in (0, 0.5]");
  switch (v) {
    case 0: return (1.0 - maf) * (1.0 - maf);
    case 1: return 2.0 * maf * (1.0 - maf);
    case 2: return maf * maf;
    default: throw InvalidArgument("genotype must be 0, 1 or 2");
  }
}

/// Inverse-CDF genotype draw from one uniform variate.
inline Genotype genotype_from_unit(double maf, double u) {
  const double q = 1.0 - maf;
  if (u < q * q) return 0;
  if (u < 1.0 - maf * maf) return 1;
  return 2;
}

enum class RelevantMafPolicy {
  kRequireHalf,  // the XOR model proper
  kAllowAny,     // experimental knob, excluded from acceptance
};

/// Independent SNPs with per-SNP MAF and the generalized XOR response:
/// P(Y = 1 | X = x) = gamma when the relevant genotypes sum to an odd number,
/// and 0 otherwise.
class XorModel {
 public:
  XorModel(std::vector<double> mafs, Subset relevant, double gamma,
           RelevantMafPolicy policy = RelevantMafPolicy::kRequireHalf)
      : mafs_(std::move(mafs)), relevant_(std::move(relevant)), gamma_(gamma) {
    require(!mafs_.empty(), "model needs at least one factor");
    for (double p : mafs_) require(p > 0.0 && p <= 0.5, "minor allele frequency must lie in (0, 0.5]");
    require(!relevant_.empty(), "relevant set must be nonempty");
    require_subset(relevant_, mafs_.size());
    require(gamma_ > 0.0 && gamma_ <= 1.0, "gamma must lie in (0, 1]");
    if (policy == RelevantMafPolicy::kRequireHalf) {
      for (std::size_t k : relevant_) require(mafs_[k] == 0.5, "relevant factors must have MAF 0.5");
    }
    require(relevant_.size() <= 20, "relevant set too large");
    prevalence_ = compute_prevalence();
  }

  std::size_t n() const { return mafs_.size(); }
  std::span<const double> mafs() const { return mafs_; }
  const Subset& relevant() const { return relevant_; }
  double gamma() const { return gamma_; }

  /// Exact P(Y = 1); gamma / 2 whenever the relevant MAFs are 0.5.
  double prevalence() const { return prevalence_; }

  bool odd_parity(std::span<const Genotype> x) const {
    unsigned sum = 0;
    for (std::size_t k : relevant_) sum += x[k];
    return sum % 2 == 1;
  }

  double response_prob(std::span<const Genotype> x) const {
    require(x.size() == n(), "factor vector has wrong length");
    for (Genotype v : x) require(v <= 2, "genotype must be 0, 1 or 2");
    return odd_parity(x) ? gamma_ : 0.0;
  }

 private:
  double compute_prevalence() const {
    const std::size_t r = relevant_.size();
    std::vector<Genotype> digits(r);
    double odd = 0.0;
    for (std::uint64_t code = 0; code < pow3(r); ++code) {
      decode_cell(code, digits);
      double prob = 1.0;
      unsigned sum = 0;
      for (std::size_t j = 0; j < r; ++j) {
        prob *= genotype_pmf(mafs_[relevant_[j]], digits[j]);
        sum += digits[j];
      }
      if (sum % 2 == 1) odd += prob;
    }
    return gamma_ * odd;
  }

  std::vector<double> mafs_;
  Subset relevant_;
  double gamma_;
  double prevalence_ = 0.0;
};

struct Observation {
  FactorVector x;
  Label y;
};

// Every observation consumes exactly n + 1 stream positions: position
// base + i drives factor i, and position base + n drives the Bernoulli(gamma)
// switch. Skipped observations still advance the stream by n + 1.
constexpr std::uint64_t draws_per_observation(std::size_t n) { return n + 1; }

/// An observation whose label is known but whose genotypes are not yet
/// materialized.
struct PendingObservation {
  Label y;
  std::uint64_t base;  // first stream position of this observation
};

/// Draws the label of the next observation, touching only the relevant
/// factors and the Bernoulli switch.
inline PendingObservation draw_label(const XorModel& model, SeededStream& stream) {
  const std::uint64_t base = stream.counter();
  const std::size_t n = model.n();
  unsigned sum = 0;
  for (std::size_t k : model.relevant()) sum += genotype_from_unit(model.mafs()[k], stream.unit_at(base + k));
  const bool switch_on = stream.unit_at(base + n) < model.gamma();
  stream.advance(draws_per_observation(n));
  const bool is_case = switch_on && (sum % 2 == 1);
  return {is_case ? Label::kCase : Label::kControl, base};
}

inline void materialize_into(const XorModel& model, const SeededStream& stream,
                             const PendingObservation& pending, std::span<Genotype> out) {
  for (std::size_t i = 0; i < model.n(); ++i)
    out[i] = genotype_from_unit(model.mafs()[i], stream.unit_at(pending.base + i));
}

inline FactorVector materialize(const XorModel& model, const SeededStream& stream,
                                const PendingObservation& pending) {
  FactorVector x(model.n());
  materialize_into(model, stream, pending, x);
  return x;
}

inline Observation sample_observation(const XorModel& model, SeededStream& stream) {
  const PendingObservation pending = draw_label(model, stream);
  return {materialize(model, stream, pending), pending.y};
}

inline constexpr double kMafLow = 0.05;
inline constexpr double kMafHigh = 0.5;

/// Uniform draw on [0.05, 0.5]; used for non-relevant factors.
inline double draw_maf(SeededStream& stream) {
  return std::min(kMafHigh, kMafLow + (kMafHigh - kMafLow) * stream.next_unit());
}

/// One dataset family's MAF vector: relevant factors fixed, the others drawn
/// in factor order.
inline std::vector<double> draw_mafs(std::size_t n, const Subset& relevant, SeededStream& stream,
                                     double relevant_maf = 0.5) {
  std::vector<double> mafs(n);
  for (std::size_t i = 0; i < n; ++i) {
    const bool is_relevant = std::binary_search(relevant.begin(), relevant.end(), i);
    mafs[i] = is_relevant ? relevant_maf : draw_maf(stream);
  }
  return mafs;
}

/// Debug dump: header x_1..x_n,y and one row per observation.
inline void write_dataset_csv(std::ostream& os, const GenotypeMatrix& x, std::span<const Label> y) {
  require(x.rows() == y.size(), "label count does not match rows");
  for (std::size_t i = 0; i < x.cols(); ++i) os << "x_" << i + 1 << ',';
  os << "y\n";
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (Genotype v : x.row(r)) os << static_cast<int>(v) << ',';
    os << to_int(y[r]) << '\n';
  }
}

}  // namespace mdrefe
