#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "mdrefe/core_model.hpp"
#include "mdrefe/stratify.hpp"
#include "mdrefe/types.hpp"

namespace mdrefe {

/// Half-open range of positions inside one class (stratified) or inside the
/// raw index order (i.i.d.).
struct Block {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - begin; }
  friend bool operator==(const Block&, const Block&) = default;
};

/// K consecutive blocks; the first K-1 hold floor(count/K) positions and the
/// last one absorbs the remainder.
inline std::vector<Block> split_positions(std::size_t count, std::size_t folds) {
  require(folds >= 2, "need at least two folds");
  const std::size_t base = count / folds;
  std::vector<Block> blocks(folds);
  for (std::size_t k = 0; k < folds; ++k)
    blocks[k] = {k * base, k + 1 < folds ? (k + 1) * base : count};
  return blocks;
}

/// Per-class K-way split of a stratified sample's positions, order preserved.
class FoldPartition {
 public:
  FoldPartition(std::size_t folds, std::size_t n_controls, std::size_t n_cases) : folds_(folds) {
    require(folds >= 2, "need at least two folds");
    for (Label y : {Label::kControl, Label::kCase}) {
      const std::size_t count = y == Label::kCase ? n_cases : n_controls;
      if (count < folds)
        throw ClassTooSmall("class " + std::to_string(to_int(y)) + " has " + std::to_string(count) +
                            " observations, fewer than K = " + std::to_string(folds));
      sizes_[slot(y)] = count;
      blocks_[slot(y)] = split_positions(count, folds);
    }
  }

  std::size_t folds() const { return folds_; }
  std::size_t class_size(Label y) const { return sizes_[slot(y)]; }
  const std::vector<Block>& blocks(Label y) const { return blocks_[slot(y)]; }
  const Block& block(Label y, std::size_t k) const { return blocks_[slot(y)][k]; }

  /// |W_k^y|: the class-y positions outside block k.
  std::size_t training_size(Label y, std::size_t k) const { return sizes_[slot(y)] - block(y, k).size(); }

 private:
  std::size_t folds_;
  std::array<std::size_t, 2> sizes_{};
  std::array<std::vector<Block>, 2> blocks_;
};

inline FoldPartition partition_folds(const StratifiedSample& sample, std::size_t folds) {
  return FoldPartition(folds, sample.controls.rows(), sample.cases.rows());
}

namespace detail {

inline constexpr std::size_t kMaxSubsetSize = 12;

/// Plug-in decision g > h for one cell of a stratified rule.
///   g = P1 I1 / (P-1 I-1 + P1 I1), 0/0 := 0,   I_y = count_y / |W_y|.
/// In natural mode h = P1, and for P1 in (0,1) the comparison reduces to
/// I1 > I-1, which is evaluated exactly on the integer counts.
inline Label decide_stratified(std::uint64_t c_case, std::uint64_t n_case, std::uint64_t c_ctrl,
                               std::uint64_t n_ctrl, double p_case, const PenaltySpec& psi) {
  if (psi.is_natural()) {
    if (!(p_case > 0.0 && p_case < 1.0) || n_case == 0 || c_case == 0) return Label::kControl;
    if (n_ctrl == 0) return Label::kCase;
    return c_case * n_ctrl > c_ctrl * n_case ? Label::kCase : Label::kControl;
  }
  const double i_case = n_case ? static_cast<double>(c_case) / static_cast<double>(n_case) : 0.0;
  const double i_ctrl = n_ctrl ? static_cast<double>(c_ctrl) / static_cast<double>(n_ctrl) : 0.0;
  const double num = p_case * i_case;
  const double den = (1.0 - p_case) * i_ctrl + num;
  const double g = den == 0.0 ? 0.0 : num / den;
  return g > psi.threshold() ? Label::kCase : Label::kControl;
}

inline void require_estimable_subset(const Subset& subset, std::size_t n) {
  require(!subset.empty(), "factor subset must be nonempty");
  require_subset(subset, n);
  require(subset.size() <= kMaxSubsetSize, "factor subset too large for dense cell tables");
}

inline void fill_codes(const GenotypeMatrix& x, const Subset& subset, std::vector<std::uint32_t>& out) {
  out.resize(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) out[i] = cell_code(x.row(i), subset);
}

}  // namespace detail

/// Plug-in rule trained on every fold except the held-out one.
struct TrainedRule {
  Subset subset;
  std::array<std::vector<std::uint32_t>, 2> counts;  // training counts per cell, [slot][cell]
  std::array<std::uint64_t, 2> training_size{};      // |W_k^y|
  double prevalence_case = 0.5;                      // P-hat^1; P-hat^-1 = 1 - P-hat^1
  PenaltySpec psi;                                   // psi-hat

  /// I_y(cell), with 0/0 := 0.
  double frequency(Label y, std::uint64_t cell) const {
    const auto n = training_size[slot(y)];
    return n ? static_cast<double>(counts[slot(y)][cell]) / static_cast<double>(n) : 0.0;
  }

  double g(std::uint64_t cell) const {
    const double num = prevalence_case * frequency(Label::kCase, cell);
    const double den = (1.0 - prevalence_case) * frequency(Label::kControl, cell) + num;
    return den == 0.0 ? 0.0 : num / den;
  }

  double h() const { return psi.is_natural() ? prevalence_case : psi.threshold(); }

  Label predict_cell(std::uint64_t cell) const {
    return detail::decide_stratified(counts[1][cell], training_size[1], counts[0][cell], training_size[0],
                                     prevalence_case, psi);
  }

  Label predict(std::span<const Genotype> x) const { return predict_cell(cell_code(x, subset)); }
};

/// Natural mode: psi-hat(y) = 1 / P-hat^y. Explicit mode: the given weights.
inline PenaltySpec estimated_penalty(const PenaltySpec& psi, double p_case) {
  if (!psi.is_natural()) return psi;
  return {1.0 / (1.0 - p_case), 1.0 / p_case, PenaltyMode::kNatural};
}

inline TrainedRule train_rule(const StratifiedSample& sample, const FoldPartition& partition,
                              std::size_t held_out, const Subset& subset, const PrevalenceEstimate& prevalence,
                              const PenaltySpec& psi) {
  detail::require_estimable_subset(subset, sample.n_factors());
  require(held_out < partition.folds(), "held-out fold out of range");
  TrainedRule rule;
  rule.subset = subset;
  rule.prevalence_case = prevalence.p_hat;
  rule.psi = estimated_penalty(psi, prevalence.p_hat);
  const std::size_t cells = pow3(subset.size());
  for (Label y : {Label::kControl, Label::kCase}) {
    auto& counts = rule.counts[slot(y)];
    counts.assign(cells, 0);
    const GenotypeMatrix& rows = sample.stratum(y);
    for (std::size_t k = 0; k < partition.folds(); ++k) {
      if (k == held_out) continue;
      const Block b = partition.block(y, k);
      for (std::size_t j = b.begin; j < b.end; ++j) ++counts[cell_code(rows.row(j), subset)];
    }
    rule.training_size[slot(y)] = partition.training_size(y, held_out);
  }
  return rule;
}

inline Label predict(const TrainedRule& rule, std::span<const Genotype> x) { return rule.predict(x); }

/// Err-hat_K for one subset, with the per-fold, per-class misclassification
/// fractions it was assembled from ([k][slot]; NaN marks an empty block).
struct ErrEstimate {
  Subset subset;
  double value = 0.0;
  std::vector<std::array<double, 2>> fold_error_fraction;
};

/// Reusable evaluator of Err-hat_K over subsets of one stratified sample.
class StratifiedEvaluator {
 public:
  StratifiedEvaluator(const StratifiedSample& sample, std::size_t folds, PrevalenceEstimate prevalence,
                      PenaltySpec psi)
      : sample_(&sample), partition_(partition_folds(sample, folds)), prevalence_(prevalence), psi_(psi) {}

  const FoldPartition& partition() const { return partition_; }

  ErrEstimate operator()(const Subset& subset) {
    detail::require_estimable_subset(subset, sample_->n_factors());
    const std::size_t K = partition_.folds();
    const std::size_t cells = pow3(subset.size());
    for (Label y : {Label::kControl, Label::kCase}) {
      const std::size_t s = slot(y);
      detail::fill_codes(sample_->stratum(y), subset, codes_[s]);
      fold_counts_[s].assign(K * cells, 0);
      total_counts_[s].assign(cells, 0);
      for (std::size_t k = 0; k < K; ++k) {
        const Block b = partition_.block(y, k);
        for (std::size_t j = b.begin; j < b.end; ++j) ++fold_counts_[s][k * cells + codes_[s][j]];
      }
      for (std::size_t k = 0; k < K; ++k)
        for (std::size_t c = 0; c < cells; ++c) total_counts_[s][c] += fold_counts_[s][k * cells + c];
    }

    std::vector<std::array<std::uint64_t, 2>> misses(K, {0, 0});
    const double p_case = prevalence_.p_hat;
    for (std::size_t k = 0; k < K; ++k) {
      const std::uint64_t n_ctrl = partition_.training_size(Label::kControl, k);
      const std::uint64_t n_case = partition_.training_size(Label::kCase, k);
      for (std::size_t c = 0; c < cells; ++c) {
        const std::uint32_t held_ctrl = fold_counts_[0][k * cells + c];
        const std::uint32_t held_case = fold_counts_[1][k * cells + c];
        if (held_ctrl == 0 && held_case == 0) continue;
        const Label pred = detail::decide_stratified(total_counts_[1][c] - held_case, n_case,
                                                     total_counts_[0][c] - held_ctrl, n_ctrl, p_case, psi_);
        if (pred == Label::kCase)
          misses[k][0] += held_ctrl;
        else
          misses[k][1] += held_case;
      }
    }

    ErrEstimate est;
    est.subset = subset;
    est.fold_error_fraction.resize(K);
    double acc = 0.0;
    for (Label y : {Label::kControl, Label::kCase}) {
      const std::size_t s = slot(y);
      // psi-hat(y) * P-hat^y, identically 1 for the natural penalty.
      const double weight = psi_.is_natural() ? 1.0 : psi_(y) * prevalence_.of(y);
      for (std::size_t k = 0; k < K; ++k) {
        const std::size_t size = partition_.block(y, k).size();
        est.fold_error_fraction[k][s] = static_cast<double>(misses[k][s]) / static_cast<double>(size);
        // One term per misclassified held-out point, in class, fold order.
        const double term = weight / static_cast<double>(size);
        for (std::uint64_t m = 0; m < misses[k][s]; ++m) acc += term;
      }
    }
    est.value = 2.0 / static_cast<double>(K) * acc;
    return est;
  }

 private:
  const StratifiedSample* sample_;
  FoldPartition partition_;
  PrevalenceEstimate prevalence_;
  PenaltySpec psi_;
  std::array<std::vector<std::uint32_t>, 2> codes_;
  std::array<std::vector<std::uint32_t>, 2> fold_counts_;
  std::array<std::vector<std::uint32_t>, 2> total_counts_;
};

inline ErrEstimate err_hat_K(const StratifiedSample& sample, std::size_t folds, const Subset& subset,
                             const PrevalenceEstimate& prevalence, const PenaltySpec& psi) {
  StratifiedEvaluator eval(sample, folds, prevalence, psi);
  return eval(subset);
}

/// How the i.i.d. estimator weighs held-out errors.
enum class IidForm {
  /// The stratified formula with S_k^y = fold-k points labelled y, training
  /// frequencies I_y over the other folds' label-y points, and P-hat from the
  /// training folds (or the known p). An empty S_k^y contributes 0.
  kClassBlocks,
  /// (1/K) sum_k sum_{j in B_k} |Y^j - f(X^j)| psi-hat(Y^j) / #B_k with
  /// f = +1 where the training frequency of Y = 1 in the cell exceeds h.
  /// h is P-hat^1 of the training folds, the known p, or the explicit
  /// threshold. A class absent from the training folds is counted once.
  kPooledBlocks,
};

/// Cross-validated error of the plug-in rule on an i.i.d. sample. Folds are
/// consecutive blocks of the raw index order.
class IidEvaluator {
 public:
  IidEvaluator(const IidSample& sample, std::size_t folds, PenaltySpec psi, std::optional<double> known_p,
               IidForm form = IidForm::kClassBlocks)
      : sample_(&sample), psi_(psi), known_p_(known_p), form_(form) {
    if (sample.size() < folds)
      throw ClassTooSmall("i.i.d. sample of size " + std::to_string(sample.size()) + " is smaller than K = " +
                          std::to_string(folds));
    if (known_p_) require(*known_p_ > 0.0 && *known_p_ < 1.0, "known prevalence must lie in (0, 1)");
    blocks_ = split_positions(sample.size(), folds);
    for (const Block& b : blocks_) {
      std::array<std::uint64_t, 2> n{0, 0};
      for (std::size_t j = b.begin; j < b.end; ++j) ++n[slot(sample.y[j])];
      block_class_sizes_.push_back(n);
      class_totals_[0] += n[0];
      class_totals_[1] += n[1];
    }
  }

  const std::vector<Block>& blocks() const { return blocks_; }
  IidForm form() const { return form_; }

  /// Label-y points outside fold k.
  std::uint64_t training_size(Label y, std::size_t k) const {
    return class_totals_[slot(y)] - block_class_sizes_[k][slot(y)];
  }

  /// P-hat^1 used with fold k held out.
  double fold_prevalence(std::size_t k) const {
    if (known_p_) return *known_p_;
    std::uint64_t n_case = training_size(Label::kCase, k), n_ctrl = training_size(Label::kControl, k);
    if (form_ == IidForm::kPooledBlocks) {
      n_case = std::max<std::uint64_t>(n_case, 1);
      n_ctrl = std::max<std::uint64_t>(n_ctrl, 1);
    }
    return static_cast<double>(n_case) / static_cast<double>(n_case + n_ctrl);
  }

  /// psi-hat for fold k.
  PenaltySpec fold_penalty(std::size_t k) const {
    if (!psi_.is_natural()) return psi_;
    return estimated_penalty(psi_, fold_prevalence(k));
  }

  ErrEstimate operator()(const Subset& subset) {
    detail::require_estimable_subset(subset, sample_->n_factors());
    const std::size_t K = blocks_.size();
    const std::size_t cells = pow3(subset.size());
    detail::fill_codes(sample_->x, subset, codes_);
    for (auto& v : fold_counts_) v.assign(K * cells, 0);
    for (auto& v : total_counts_) v.assign(cells, 0);
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t j = blocks_[k].begin; j < blocks_[k].end; ++j)
        ++fold_counts_[slot(sample_->y[j])][k * cells + codes_[j]];
    for (std::size_t s = 0; s < 2; ++s)
      for (std::size_t k = 0; k < K; ++k)
        for (std::size_t c = 0; c < cells; ++c) total_counts_[s][c] += fold_counts_[s][k * cells + c];

    std::vector<std::array<std::uint64_t, 2>> misses(K, {0, 0});
    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t c = 0; c < cells; ++c) {
        const std::uint32_t held_ctrl = fold_counts_[0][k * cells + c];
        const std::uint32_t held_case = fold_counts_[1][k * cells + c];
        if (held_ctrl == 0 && held_case == 0) continue;
        const Label pred = decide(k, total_counts_[1][c] - held_case, total_counts_[0][c] - held_ctrl);
        if (pred == Label::kCase)
          misses[k][0] += held_ctrl;
        else
          misses[k][1] += held_case;
      }
    }

    ErrEstimate est;
    est.subset = subset;
    est.fold_error_fraction.resize(K);
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t s = 0; s < 2; ++s) {
        const auto held = block_class_sizes_[k][s];
        est.fold_error_fraction[k][s] = held ? static_cast<double>(misses[k][s]) / static_cast<double>(held)
                                             : std::numeric_limits<double>::quiet_NaN();
      }

    if (form_ == IidForm::kClassBlocks) {
      // Same accumulation order as the stratified estimator: class, fold.
      double acc = 0.0;
      for (std::size_t s = 0; s < 2; ++s)
        for (std::size_t k = 0; k < K; ++k) {
          const auto held = block_class_sizes_[k][s];
          if (held == 0) continue;
          const double p_case = fold_prevalence(k);
          const double weight =
              psi_.is_natural() ? 1.0 : psi_(label_of_slot(s)) * (s == 1 ? p_case : 1.0 - p_case);
          const double term = weight / static_cast<double>(held);
          for (std::uint64_t m = 0; m < misses[k][s]; ++m) acc += term;
        }
      est.value = 2.0 / static_cast<double>(K) * acc;
    } else {
      double acc = 0.0;
      for (std::size_t k = 0; k < K; ++k) {
        const PenaltySpec w = fold_penalty(k);
        const double block_size = static_cast<double>(blocks_[k].size());
        for (std::size_t s = 0; s < 2; ++s)
          acc += 2.0 * w(label_of_slot(s)) * static_cast<double>(misses[k][s]) / block_size;
      }
      est.value = acc / static_cast<double>(K);
    }
    return est;
  }

 private:
  Label decide(std::size_t k, std::uint64_t c_case, std::uint64_t c_ctrl) const {
    const double p_case = fold_prevalence(k);
    if (form_ == IidForm::kClassBlocks)
      return detail::decide_stratified(c_case, training_size(Label::kCase, k), c_ctrl,
                                       training_size(Label::kControl, k), p_case, psi_);
    if (c_case == 0) return Label::kControl;
    if (psi_.is_natural() && !known_p_) {
      // g > P-hat^1 on integer counts.
      const std::uint64_t n_case = std::max<std::uint64_t>(training_size(Label::kCase, k), 1);
      const std::uint64_t n_ctrl = std::max<std::uint64_t>(training_size(Label::kControl, k), 1);
      return c_case * (n_case + n_ctrl) > n_case * (c_case + c_ctrl) ? Label::kCase : Label::kControl;
    }
    const double g = static_cast<double>(c_case) / static_cast<double>(c_case + c_ctrl);
    const double h = psi_.is_natural() ? p_case : psi_.threshold();
    return g > h ? Label::kCase : Label::kControl;
  }

  const IidSample* sample_;
  PenaltySpec psi_;
  std::optional<double> known_p_;
  IidForm form_;
  std::vector<Block> blocks_;
  std::vector<std::array<std::uint64_t, 2>> block_class_sizes_;
  std::array<std::uint64_t, 2> class_totals_{0, 0};
  std::vector<std::uint32_t> codes_;
  std::array<std::vector<std::uint32_t>, 2> fold_counts_;
  std::array<std::vector<std::uint32_t>, 2> total_counts_;
};

inline ErrEstimate err_hat_iid(const IidSample& sample, std::size_t folds, const Subset& subset,
                               const PenaltySpec& psi, std::optional<double> known_p = std::nullopt,
                               IidForm form = IidForm::kClassBlocks) {
  IidEvaluator eval(sample, folds, psi, known_p, form);
  return eval(subset);
}

/// Advances `subset` to the next r-subset of {0..n-1} in colexicographic
/// order. Returns false after the last one.
inline bool next_colex(Subset& subset, std::size_t n) {
  const std::size_t r = subset.size();
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t limit = i + 1 < r ? subset[i + 1] : n;
    if (subset[i] + 1 < limit) {
      ++subset[i];
      for (std::size_t j = 0; j < i; ++j) subset[j] = j;
      return true;
    }
  }
  return false;
}

struct Selection {
  Subset subset;
  ErrEstimate estimate;
  std::size_t candidates = 0;
};

namespace detail {

inline bool better(const ErrEstimate& a, const ErrEstimate& b) {
  if (a.value != b.value) return a.value < b.value;
  return a.subset < b.subset;
}

/// Exhaustive minimization over all r-subsets. Candidate i goes to worker
/// i mod threads; the reduction uses the total order (value, lexicographic
/// subset), so the result does not depend on the thread count.
template <class Evaluator>
Selection exhaustive_select(std::size_t n, std::size_t r, unsigned threads, const Evaluator& prototype) {
  require(r >= 1 && r <= n, "subset size r must lie in 1..n");
  require(r <= kMaxSubsetSize, "subset size too large for dense cell tables");
  threads = std::max(1u, threads);
  std::vector<std::optional<ErrEstimate>> best(threads);
  std::vector<std::size_t> seen(threads, 0);
  auto work = [&](unsigned t) {
    Evaluator eval = prototype;
    Subset subset(r);
    for (std::size_t j = 0; j < r; ++j) subset[j] = j;
    std::size_t index = 0;
    do {
      if (index++ % threads != t) continue;
      ErrEstimate e = eval(subset);
      ++seen[t];
      if (!best[t] || better(e, *best[t])) best[t] = std::move(e);
    } while (next_colex(subset, n));
  };
  if (threads == 1) {
    work(0);
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(work, t);
  }
  Selection out;
  for (unsigned t = 0; t < threads; ++t) {
    out.candidates += seen[t];
    if (best[t] && (out.estimate.subset.empty() || better(*best[t], out.estimate))) out.estimate = *best[t];
  }
  out.subset = out.estimate.subset;
  return out;
}

}  // namespace detail

/// Minimizer of Err-hat_K over every r-subset of the factors of a stratified
/// sample; ties go to the lexicographically smallest subset.
inline Selection select_relevant(const StratifiedSample& sample, std::size_t folds, std::size_t r,
                                 const PrevalenceEstimate& prevalence, const PenaltySpec& psi,
                                 unsigned threads = 1) {
  return detail::exhaustive_select(sample.n_factors(), r, threads,
                                   StratifiedEvaluator(sample, folds, prevalence, psi));
}

inline Selection select_relevant_iid(const IidSample& sample, std::size_t folds, std::size_t r,
                                     const PenaltySpec& psi, std::optional<double> known_p = std::nullopt,
                                     IidForm form = IidForm::kClassBlocks, unsigned threads = 1) {
  return detail::exhaustive_select(sample.n_factors(), r, threads,
                                   IidEvaluator(sample, folds, psi, known_p, form));
}

}  // namespace mdrefe
