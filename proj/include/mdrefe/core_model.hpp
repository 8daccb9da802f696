#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iterator>
#include <span>
#include <vector>

#include "mdrefe/types.hpp"
#include "mdrefe/xor_model.hpp"

namespace mdrefe {

enum class PenaltyMode { kExplicit, kNatural };

/// Weights psi(-1), psi(+1) on wrong predictions of each label.
///
/// In natural mode psi(y) = 1 / P(Y = y). Exact routines in this header bind
/// natural weights to a model; the estimators re-derive them from whatever
/// prevalence estimate they are handed.
struct PenaltySpec {
  double psi_minus = 1.0;
  double psi_plus = 1.0;
  PenaltyMode mode = PenaltyMode::kExplicit;

  static PenaltySpec weights(double psi_minus, double psi_plus) {
    require(psi_minus > 0.0 && psi_plus > 0.0, "penalty weights must be positive");
    return {psi_minus, psi_plus, PenaltyMode::kExplicit};
  }

  static PenaltySpec natural(double prevalence = 0.5) {
    require(prevalence > 0.0 && prevalence < 1.0, "prevalence must lie in (0, 1)");
    return {1.0 / (1.0 - prevalence), 1.0 / prevalence, PenaltyMode::kNatural};
  }

  static PenaltySpec natural(const XorModel& model) { return natural(model.prevalence()); }

  bool is_natural() const { return mode == PenaltyMode::kNatural; }
  double operator()(Label y) const { return y == Label::kCase ? psi_plus : psi_minus; }

  /// Decision threshold psi(-1) / (psi(-1) + psi(1)) on P(Y = 1 | X = x).
  double threshold() const { return psi_minus / (psi_minus + psi_plus); }
};

/// Conditional probabilities within this distance of the threshold count as
/// ties, which resolve to -1.
inline constexpr double kTieTolerance = 1e-12;

/// A rule f: {0,1,2}^|subset| -> {-1,+1}, stored as a dense decision table
/// indexed by cell_code().
class Classifier {
 public:
  Classifier(Subset subset, std::vector<Label> decision)
      : subset_(std::move(subset)), decision_(std::move(decision)) {
    require(is_valid_subset(subset_, SIZE_MAX), "classifier subset must be sorted and duplicate-free");
    require(decision_.size() == pow3(subset_.size()), "decision table must cover every cell");
  }

  static Classifier constant(Label y) { return Classifier({}, {y}); }

  const Subset& subset() const { return subset_; }
  std::span<const Label> table() const { return decision_; }

  Label at_cell(std::uint64_t code) const { return decision_[code]; }
  Label operator()(std::span<const Genotype> x) const { return decision_[cell_code(x, subset_)]; }

 private:
  Subset subset_;
  std::vector<Label> decision_;
};

namespace detail {

inline constexpr std::size_t kMaxCollapsedFactors = 13;

inline Subset merge_subsets(const Subset& a, const Subset& b) {
  Subset out;
  std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

inline std::vector<std::size_t> positions_in(const Subset& part, const Subset& whole) {
  std::vector<std::size_t> pos;
  pos.reserve(part.size());
  for (std::size_t k : part)
    pos.push_back(static_cast<std::size_t>(std::lower_bound(whole.begin(), whole.end(), k) - whole.begin()));
  return pos;
}

/// Joint law of (X_coords, Y) where coords contains the relevant set:
/// per cell P(X_coords = x) and P(Y = 1 | X_coords = x). Coordinates outside
/// coords are marginalized analytically.
struct CollapsedLaw {
  Subset coords;
  std::vector<double> prob;
  std::vector<double> case_given_x;
};

inline CollapsedLaw collapse(const XorModel& model, const Subset& extra) {
  require_subset(extra, model.n());
  CollapsedLaw law;
  law.coords = merge_subsets(extra, model.relevant());
  const std::size_t m = law.coords.size();
  require(m <= kMaxCollapsedFactors, "collapsed state space too large");
  const auto rel_pos = positions_in(model.relevant(), law.coords);
  const std::uint64_t cells = pow3(m);
  law.prob.resize(cells);
  law.case_given_x.resize(cells);
  std::vector<Genotype> digits(m);
  for (std::uint64_t code = 0; code < cells; ++code) {
    decode_cell(code, digits);
    double p = 1.0;
    for (std::size_t j = 0; j < m; ++j) p *= genotype_pmf(model.mafs()[law.coords[j]], digits[j]);
    unsigned sum = 0;
    for (std::size_t j : rel_pos) sum += digits[j];
    law.prob[code] = p;
    law.case_given_x[code] = sum % 2 == 1 ? model.gamma() : 0.0;
  }
  return law;
}

/// Cell code of the projection of a collapsed cell onto `part`.
inline std::uint64_t project_code(std::span<const Genotype> digits, std::span<const std::size_t> part_pos) {
  std::uint64_t code = 0;
  for (std::size_t j = part_pos.size(); j-- > 0;) code = code * 3 + digits[part_pos[j]];
  return code;
}

inline PenaltySpec bind_penalty(const XorModel& model, const PenaltySpec& psi) {
  return psi.is_natural() ? PenaltySpec::natural(model) : psi;
}

}  // namespace detail

/// Err(f) = 2 * sum_y psi(y) P(Y = y, f(X) != y), summed exactly over the
/// cells of f.subset union the relevant set.
inline double error_exact(const XorModel& model, const Classifier& f, const PenaltySpec& psi) {
  require_subset(f.subset(), model.n());
  const PenaltySpec w = detail::bind_penalty(model, psi);
  const auto law = detail::collapse(model, f.subset());
  const auto f_pos = detail::positions_in(f.subset(), law.coords);
  std::vector<Genotype> digits(law.coords.size());
  double wrong_controls = 0.0;  // P(Y = -1, f = +1)
  double wrong_cases = 0.0;     // P(Y = +1, f = -1)
  for (std::uint64_t code = 0; code < law.prob.size(); ++code) {
    decode_cell(code, digits);
    const Label pred = f.at_cell(detail::project_code(digits, f_pos));
    const double q = law.case_given_x[code];
    if (pred == Label::kCase)
      wrong_controls += law.prob[code] * (1.0 - q);
    else
      wrong_cases += law.prob[code] * q;
  }
  return 2.0 * (w.psi_minus * wrong_controls + w.psi_plus * wrong_cases);
}

/// f^{m}: +1 where P(Y = 1 | X_m = x_m) exceeds the penalty threshold.
inline Classifier optimal_restricted_classifier(const XorModel& model, const PenaltySpec& psi,
                                                const Subset& subset) {
  require_subset(subset, model.n());
  const PenaltySpec w = detail::bind_penalty(model, psi);
  const auto law = detail::collapse(model, subset);
  const auto pos = detail::positions_in(subset, law.coords);
  const std::uint64_t cells = pow3(subset.size());
  std::vector<double> mass(cells, 0.0), case_mass(cells, 0.0);
  std::vector<Genotype> digits(law.coords.size());
  for (std::uint64_t code = 0; code < law.prob.size(); ++code) {
    decode_cell(code, digits);
    const auto c = detail::project_code(digits, pos);
    mass[c] += law.prob[code];
    case_mass[c] += law.prob[code] * law.case_given_x[code];
  }
  const double t = w.threshold();
  std::vector<Label> decision(cells, Label::kControl);
  for (std::uint64_t c = 0; c < cells; ++c) {
    if (mass[c] > 0.0 && case_mass[c] / mass[c] > t + kTieTolerance) decision[c] = Label::kCase;
  }
  return Classifier(subset, std::move(decision));
}

/// f* = 1 on A, -1 elsewhere, restricted to the relevant coordinates.
inline Classifier optimal_classifier(const XorModel& model, const PenaltySpec& psi) {
  return optimal_restricted_classifier(model, psi, model.relevant());
}

/// The support M, the optimal set A, the good set U and the weights
/// L(x) = psi(1) P(X = x, Y = 1) - psi(-1) P(X = x, Y = -1), all over the
/// cells of the collapsed coordinates.
struct ModelDiagnostics {
  Subset coords;
  PenaltySpec psi;
  std::vector<bool> support_M;
  std::vector<bool> set_A;
  std::vector<bool> set_U;
  std::vector<double> l_weights;

  std::size_t cells() const { return l_weights.size(); }
};

inline ModelDiagnostics diagnose(const XorModel& model, const PenaltySpec& psi, const Subset& extra = {}) {
  const PenaltySpec w = detail::bind_penalty(model, psi);
  const auto law = detail::collapse(model, extra);
  const std::size_t cells = law.prob.size();
  ModelDiagnostics d{law.coords, w, std::vector<bool>(cells), std::vector<bool>(cells),
                     std::vector<bool>(cells), std::vector<double>(cells)};
  const double t = w.threshold();
  for (std::size_t c = 0; c < cells; ++c) {
    const double px = law.prob[c];
    const double q = law.case_given_x[c];
    d.support_M[c] = px > 0.0;
    d.set_A[c] = px > 0.0 && q > t + kTieTolerance;
    d.set_U[c] = px > 0.0 && std::abs(q - t) > kTieTolerance;
    d.l_weights[c] = w.psi_plus * px * q - w.psi_minus * px * (1.0 - q);
  }
  return d;
}

/// One fold's term of the consistency condition:
///   sum_y sum_{x in X_y} y * 1{prediction(x) = -y} * L(x),
/// where X_y holds the support cells outside `set_U` on which f equals y.
/// `predictions` is indexed by the diagnostics' cell codes.
inline double maincond_residual(const ModelDiagnostics& diag, const Classifier& f,
                                std::span<const Label> predictions, const std::vector<bool>& set_U) {
  require(predictions.size() == diag.cells() && set_U.size() == diag.cells(),
          "predictions and U must cover the diagnostic cells");
  require(std::includes(diag.coords.begin(), diag.coords.end(), f.subset().begin(), f.subset().end()),
          "classifier uses factors outside the diagnostic coordinates");
  const auto f_pos = detail::positions_in(f.subset(), diag.coords);
  std::vector<Genotype> digits(diag.coords.size());
  double total = 0.0;
  for (std::size_t c = 0; c < diag.cells(); ++c) {
    if (!diag.support_M[c] || set_U[c]) continue;
    decode_cell(c, digits);
    const Label fy = f.at_cell(detail::project_code(digits, f_pos));
    if (predictions[c] == opposite(fy)) total += to_int(fy) * diag.l_weights[c];
  }
  return total;
}

inline double maincond_residual(const ModelDiagnostics& diag, const Classifier& f,
                                std::span<const Label> predictions) {
  return maincond_residual(diag, f, predictions, diag.set_U);
}

/// Tabulates a classifier over the diagnostics' cells.
inline std::vector<Label> tabulate(const ModelDiagnostics& diag, const Classifier& g) {
  require(std::includes(diag.coords.begin(), diag.coords.end(), g.subset().begin(), g.subset().end()),
          "classifier uses factors outside the diagnostic coordinates");
  const auto pos = detail::positions_in(g.subset(), diag.coords);
  std::vector<Genotype> digits(diag.coords.size());
  std::vector<Label> out(diag.cells());
  for (std::size_t c = 0; c < diag.cells(); ++c) {
    decode_cell(c, digits);
    out[c] = g.at_cell(detail::project_code(digits, pos));
  }
  return out;
}

}  // namespace mdrefe
