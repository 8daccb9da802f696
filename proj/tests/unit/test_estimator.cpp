#include <gtest/gtest.h>

#include <cstring>

#include "mdrefe/core_model.hpp"
#include "mdrefe/estimator.hpp"
#include "oracles.hpp"

using namespace mdrefe;

namespace {

StratifiedSample handmade(const std::vector<FactorVector>& controls, const std::vector<FactorVector>& cases) {
  StratifiedSample s;
  const std::size_t n = controls.empty() ? cases.front().size() : controls.front().size();
  s.controls = GenotypeMatrix(n);
  s.cases = GenotypeMatrix(n);
  for (const auto& x : controls) s.controls.push_back(x);
  for (const auto& x : cases) s.cases.push_back(x);
  s.n_tilde = controls.size() + cases.size();
  s.y_counts = {controls.size(), cases.size()};
  return s;
}

bool bit_equal(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }

StratifiedSample xor_sample(std::size_t n, const Subset& rel, double gamma, std::size_t N, std::uint64_t seed) {
  SeededStream maf(derive_seed(seed, {0})), raw(derive_seed(seed, {1}));
  const XorModel m(draw_mafs(n, rel, maf), rel, gamma);
  return build_stratified(m, raw, N, 0.5);
}

}  // namespace

TEST(Partition, BlockSizes) {
  const FoldPartition p(3, 7, 10);
  std::vector<std::size_t> sizes;
  for (const auto& b : p.blocks(Label::kControl)) sizes.push_back(b.size());
  EXPECT_EQ(sizes, (std::vector<std::size_t>{2, 2, 3}));
  const FoldPartition q(5, 10, 5);
  for (const auto& b : q.blocks(Label::kControl)) EXPECT_EQ(b.size(), 2u);
  for (const auto& b : q.blocks(Label::kCase)) EXPECT_EQ(b.size(), 1u);
  EXPECT_EQ(q.block(Label::kControl, 4).end, 10u);
  EXPECT_EQ(q.training_size(Label::kControl, 0), 8u);
  EXPECT_THROW(FoldPartition(3, 2, 10), ClassTooSmall);
  EXPECT_THROW(FoldPartition(1, 5, 5), InvalidArgument);
}

TEST(TrainRule, PointMassAndEmptyCells) {
  const auto s = handmade({{0, 0, 1}, {0, 1, 0}, {2, 0, 0}, {0, 2, 2}}, {{1, 1, 0}, {1, 1, 2}, {1, 1, 1}, {1, 1, 0}});
  const FoldPartition part = partition_folds(s, 2);
  const Subset m = {0, 1};
  const auto rule = train_rule(s, part, 0, m, PrevalenceEstimate::known(0.1), PenaltySpec::natural());
  const auto cell11 = cell_code(FactorVector{1, 1, 0}, m);
  EXPECT_DOUBLE_EQ(rule.frequency(Label::kCase, cell11), 1.0);
  double total = 0.0;
  for (std::uint64_t c = 0; c < 9; ++c) total += rule.frequency(Label::kCase, c);
  EXPECT_DOUBLE_EQ(total, 1.0);
  EXPECT_EQ(rule.predict(FactorVector{1, 1, 2}), Label::kCase);
  // (2,2) appears in neither class: 0/0 := 0, so -1.
  EXPECT_EQ(rule.g(cell_code(FactorVector{2, 2, 0}, m)), 0.0);
  EXPECT_EQ(rule.predict(FactorVector{2, 2, 0}), Label::kControl);
  // (0,2) only among controls: g = 0 <= h
  EXPECT_EQ(rule.predict(FactorVector{0, 2, 0}), Label::kControl);
  EXPECT_DOUBLE_EQ(rule.h(), 0.1);
}

TEST(TrainRule, EqualFrequenciesTieToControl) {
  const auto s = handmade({{0}, {1}, {0}, {1}}, {{0}, {1}, {0}, {1}});
  const auto part = partition_folds(s, 2);
  const auto rule = train_rule(s, part, 1, {0}, PrevalenceEstimate::known(0.2), PenaltySpec::natural());
  EXPECT_DOUBLE_EQ(rule.frequency(Label::kCase, 0), rule.frequency(Label::kControl, 0));
  EXPECT_EQ(rule.predict(FactorVector{0}), Label::kControl);
  EXPECT_EQ(rule.predict(FactorVector{1}), Label::kControl);
}

TEST(TrainRule, SeparatedDataGivesParity) {
  // 20 observations: every case has odd x1 + x2, every control even.
  std::vector<FactorVector> cases, controls;
  const FactorVector odd[] = {{1, 0, 2}, {0, 1, 1}, {2, 1, 0}, {1, 2, 2}, {1, 0, 0}};
  const FactorVector even[] = {{0, 0, 1}, {1, 1, 0}, {2, 2, 2}, {0, 2, 1}, {2, 0, 0}};
  for (int rep = 0; rep < 2; ++rep)
    for (int i = 0; i < 5; ++i) cases.push_back(odd[i]), controls.push_back(even[i]);
  const auto s = handmade(controls, cases);
  const auto part = partition_folds(s, 2);
  const auto rule = train_rule(s, part, 0, {0, 1}, PrevalenceEstimate::known(0.1), PenaltySpec::natural());
  for (const auto& x : odd) EXPECT_EQ(rule.predict(x), Label::kCase);
  for (const auto& x : even) EXPECT_EQ(rule.predict(x), Label::kControl);
}

TEST(TrainRule, FrequenciesConvergeToConditionalLaw) {
  const std::vector<double> mafs = {0.5, 0.5, 0.3};
  const XorModel m(mafs, {0, 1}, 0.4);
  SeededStream s(8);
  const auto z = build_stratified(m, s, 5000, 0.5);
  const auto part = partition_folds(z, 5);
  const auto rule = train_rule(z, part, 0, {0, 1}, estimate_prevalence(z), PenaltySpec::natural());
  // P(X_{0,1} = x | Y = 1), marginalizing factor 2 from the full case law
  const auto law = oracle::case_law(mafs, {0, 1}, 0.4);
  std::vector<double> marg(9, 0.0);
  for (std::size_t c = 0; c < law.size(); ++c) marg[c % 9] += law[c];
  double tv = 0.0;
  for (std::uint64_t c = 0; c < 9; ++c) tv += std::abs(rule.frequency(Label::kCase, c) - marg[c]);
  EXPECT_LT(0.5 * tv, 0.03);
}

TEST(ErrHat, AllCorrectAndAllWrong) {
  const auto right = handmade({{0}, {0}}, {{1}, {1}});
  EXPECT_EQ(err_hat_K(right, 2, {0}, PrevalenceEstimate::known(0.3), PenaltySpec::natural()).value, 0.0);
  const auto wrong = handmade({{0}, {1}}, {{1}, {0}});
  const auto e = err_hat_K(wrong, 2, {0}, PrevalenceEstimate::known(0.3), PenaltySpec::natural());
  EXPECT_EQ(e.value, 4.0);
  for (const auto& f : e.fold_error_fraction) EXPECT_EQ(f[0] + f[1], 2.0);
}

TEST(ErrHat, HandmadeSampleMatchesOracleExactly) {
  const auto s = handmade({{0, 0, 1}, {0, 1, 0}, {2, 1, 2}, {1, 1, 1}}, {{1, 0, 0}, {0, 1, 2}, {1, 1, 1}, {2, 1, 0}});
  const Subset m = {0, 1};
  for (const auto& [p, q] : {std::pair{0.25, oracle::Q(1, 4)}, std::pair{0.1, oracle::Q(1, 10)}}) {
    const double got = err_hat_K(s, 2, m, PrevalenceEstimate::known(p), PenaltySpec::natural()).value;
    EXPECT_TRUE(bit_equal(got, oracle::err_est_stratified(s, 2, m, q, PenaltySpec::natural())));
    const auto psi = PenaltySpec::weights(1.3, 2.9);
    const double got2 = err_hat_K(s, 2, m, PrevalenceEstimate::known(p), psi).value;
    EXPECT_TRUE(bit_equal(got2, oracle::err_est_stratified(s, 2, m, q, psi)));
  }
}

TEST(ErrHat, EverySubsetMatchesOracleOnSmallSamples) {
  for (std::uint64_t seed = 1; seed <= 8; ++seed) {
    const auto z = xor_sample(4, {1, 3}, 0.6, 16, seed);
    const oracle::Q p(static_cast<std::int64_t>(z.y_counts.cases), static_cast<std::int64_t>(z.n_tilde));
    for (std::size_t r = 1; r <= 3; ++r) {
      Subset s(r);
      for (std::size_t j = 0; j < r; ++j) s[j] = j;
      do {
        const double got = err_hat_K(z, 3, s, estimate_prevalence(z), PenaltySpec::natural()).value;
        EXPECT_TRUE(bit_equal(got, oracle::err_est_stratified(z, 3, s, p, PenaltySpec::natural())));
      } while (next_colex(s, 4));
    }
  }
}

TEST(ErrHat, RangeUnderNaturalPenalty) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto z = xor_sample(5, {0, 4}, 0.3, 30, seed);
    Subset s = {0, 1};
    do {
      const double v = err_hat_K(z, 5, s, estimate_prevalence(z), PenaltySpec::natural()).value;
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 4.0);
    } while (next_colex(s, 5));
  }
}

TEST(ErrHat, PropagatesClassTooSmall) {
  const auto s = handmade({{0}, {1}, {0}}, {{1}, {0}});
  EXPECT_THROW(err_hat_K(s, 3, {0}, PrevalenceEstimate::known(0.2), PenaltySpec::natural()), ClassTooSmall);
}

TEST(ErrHat, ConsistentOnTrueSubset) {
  int close = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto z = xor_sample(6, {0, 1}, 0.2, 2000, seed);
    close += std::abs(err_hat_K(z, 5, {0, 1}, estimate_prevalence(z), PenaltySpec::natural()).value - 8.0 / 9.0) <
             0.05;
  }
  EXPECT_GE(close, 16);
}

TEST(ErrHat, TrueSubsetDominatesWrongOnes) {
  int ok = 0;
  const int seeds = 20;
  for (int seed = 1; seed <= seeds; ++seed) {
    const auto z = xor_sample(6, {2, 4}, 0.2, 2000, static_cast<std::uint64_t>(seed));
    StratifiedEvaluator eval(z, 5, estimate_prevalence(z), PenaltySpec::natural());
    const double truth = eval({2, 4}).value;
    bool dominated = true;
    Subset s = {0, 1};
    do {
      if (s != Subset{2, 4}) dominated = dominated && truth <= eval(s).value + 0.05;
    } while (next_colex(s, 6));
    ok += dominated;
  }
  EXPECT_GE(ok * 10, seeds * 9);
}

TEST(Selection, SingleCandidate) {
  const auto z = xor_sample(3, {0, 1}, 0.5, 40, 3);
  const auto sel = select_relevant(z, 2, 3, estimate_prevalence(z), PenaltySpec::natural());
  EXPECT_EQ(sel.subset, (Subset{0, 1, 2}));
  EXPECT_EQ(sel.candidates, 1u);
}

TEST(Selection, FindsRelevantPair) {
  int hits = 0;
  const int seeds = 50;
  for (int seed = 1; seed <= seeds; ++seed) {
    const auto z = xor_sample(6, {1, 2}, 0.5, 1000, static_cast<std::uint64_t>(seed) + 1000);
    hits += select_relevant(z, 5, 2, estimate_prevalence(z), PenaltySpec::natural()).subset == Subset{1, 2};
  }
  EXPECT_GE(hits * 10, seeds * 9);
}

TEST(Selection, ThreadCountDoesNotMatter) {
  const auto z = xor_sample(8, {3, 6}, 0.2, 200, 5);
  const auto a = select_relevant(z, 5, 2, estimate_prevalence(z), PenaltySpec::natural(), 1);
  const auto b = select_relevant(z, 5, 2, estimate_prevalence(z), PenaltySpec::natural(), 3);
  EXPECT_EQ(a.subset, b.subset);
  EXPECT_EQ(a.estimate.value, b.estimate.value);
  EXPECT_EQ(a.candidates, 28u);
  EXPECT_EQ(b.candidates, 28u);
}

TEST(Selection, TiesGoToLexicographicallySmallest) {
  // Identical columns give identical estimates for {0,2} and {1,2}.
  const auto s = handmade({{0, 0, 0}, {1, 1, 1}, {0, 0, 2}, {2, 2, 0}}, {{1, 1, 0}, {0, 0, 1}, {1, 1, 2}, {2, 2, 1}});
  const auto sel = select_relevant(s, 2, 1, PrevalenceEstimate::known(0.3), PenaltySpec::natural());
  const double e0 = err_hat_K(s, 2, {0}, PrevalenceEstimate::known(0.3), PenaltySpec::natural()).value;
  const double e1 = err_hat_K(s, 2, {1}, PrevalenceEstimate::known(0.3), PenaltySpec::natural()).value;
  EXPECT_EQ(e0, e1);
  if (sel.estimate.value == e0) EXPECT_EQ(sel.subset, (Subset{0}));
}

TEST(Selection, RelabelingEquivariance) {
  const auto z = xor_sample(5, {1, 3}, 0.4, 300, 17);
  const std::vector<std::size_t> perm = {4, 2, 0, 1, 3};  // new column j holds old column perm[j]
  StratifiedSample w = z;
  for (GenotypeMatrix* m : {&w.cases, &w.controls}) {
    const GenotypeMatrix& src = m == &w.cases ? z.cases : z.controls;
    GenotypeMatrix out(5);
    for (std::size_t i = 0; i < src.rows(); ++i) {
      FactorVector x(5);
      for (std::size_t j = 0; j < 5; ++j) x[j] = src.row(i)[perm[j]];
      out.push_back(x);
    }
    *m = out;
  }
  const auto a = select_relevant(z, 5, 2, estimate_prevalence(z), PenaltySpec::natural());
  const auto b = select_relevant(w, 5, 2, estimate_prevalence(w), PenaltySpec::natural());
  Subset mapped;
  for (auto j : b.subset) mapped.push_back(perm[j]);
  std::sort(mapped.begin(), mapped.end());
  EXPECT_EQ(mapped, a.subset);
  EXPECT_EQ(a.estimate.value, b.estimate.value);
}

TEST(NextColex, EnumeratesAllSubsets) {
  Subset s = {0, 1, 2};
  std::size_t count = 1;
  while (next_colex(s, 7)) ++count;
  EXPECT_EQ(count, 35u);
}

// ---- i.i.d. ----------------------------------------------------------------

namespace {

IidSample iid_of(const std::vector<FactorVector>& xs, const std::vector<Label>& ys) {
  IidSample s{GenotypeMatrix(xs.front().size()), ys};
  for (const auto& x : xs) s.x.push_back(x);
  return s;
}

IidSample iid_xor(std::size_t n, const Subset& rel, double gamma, std::size_t N, std::uint64_t seed) {
  SeededStream maf(derive_seed(seed, {0})), raw(derive_seed(seed, {1}));
  const XorModel m(draw_mafs(n, rel, maf), rel, gamma);
  return draw_iid_sample(m, raw, N);
}

}  // namespace

TEST(IidEstimator, BalancedRelabelingMatchesStratified) {
  const std::vector<FactorVector> ctrl = {{0, 0, 1}, {0, 1, 0}, {2, 1, 2}, {1, 1, 1}};
  const std::vector<FactorVector> cases = {{1, 0, 0}, {0, 1, 2}, {1, 1, 1}, {2, 1, 0}};
  const auto strat = handmade(ctrl, cases);
  // Raw order whose two halves hold exactly the stratified fold contents.
  const auto iid = iid_of({ctrl[0], cases[0], ctrl[1], cases[1], ctrl[2], cases[2], ctrl[3], cases[3]},
                          {Label::kControl, Label::kCase, Label::kControl, Label::kCase, Label::kControl,
                           Label::kCase, Label::kControl, Label::kCase});
  for (const Subset& m : {Subset{0, 1}, Subset{2}, Subset{0, 1, 2}}) {
    const double s = err_hat_K(strat, 2, m, PrevalenceEstimate::known(0.5), PenaltySpec::natural()).value;
    EXPECT_TRUE(bit_equal(err_hat_iid(iid, 2, m, PenaltySpec::natural()).value, s));
    EXPECT_TRUE(bit_equal(err_hat_iid(iid, 2, m, PenaltySpec::natural(), 0.5).value, s));
  }
}

TEST(IidEstimator, ClassBlocksMatchOracleExactly) {
  SeededStream meta(3);
  for (std::uint64_t seed = 1; seed <= 30; ++seed) {
    const std::size_t N = 6 + meta.next_u64() % 19;
    const std::size_t K = 2 + meta.next_u64() % 2;
    const auto s = iid_xor(4, {0, 2}, 0.9, N, seed);
    const Subset m = seed % 2 ? Subset{0, 2} : Subset{1};
    EXPECT_TRUE(bit_equal(err_hat_iid(s, K, m, PenaltySpec::natural()).value,
                          oracle::err_est_iid_class_blocks(s, K, m, PenaltySpec::natural(), std::nullopt)));
    EXPECT_TRUE(bit_equal(err_hat_iid(s, K, m, PenaltySpec::natural(), 0.45).value,
                          oracle::err_est_iid_class_blocks(s, K, m, PenaltySpec::natural(), oracle::Q(9, 20))));
    const auto psi = PenaltySpec::weights(1.0, 3.5);
    EXPECT_TRUE(bit_equal(err_hat_iid(s, K, m, psi).value,
                          oracle::err_est_iid_class_blocks(s, K, m, psi, std::nullopt)));
  }
}

TEST(IidEstimator, PooledMatchesOracle) {
  for (std::uint64_t seed = 1; seed <= 30; ++seed) {
    const auto s = iid_xor(4, {0, 2}, 0.7, 10 + seed % 15, seed);
    const Subset m = {0, 2};
    for (std::optional<double> p : {std::optional<double>{}, std::optional<double>{0.35}}) {
      EXPECT_NEAR(err_hat_iid(s, 3, m, PenaltySpec::natural(), p, IidForm::kPooledBlocks).value,
                  oracle::err_est_iid_pooled(s, 3, m, PenaltySpec::natural(), p), 1e-12);
    }
    const auto psi = PenaltySpec::weights(2.0, 1.0);
    EXPECT_NEAR(err_hat_iid(s, 3, m, psi, std::nullopt, IidForm::kPooledBlocks).value,
                oracle::err_est_iid_pooled(s, 3, m, psi, std::nullopt), 1e-12);
  }
}

TEST(IidEstimator, OneClassOnly) {
  const auto s = iid_of({{0}, {1}, {2}, {1}}, std::vector<Label>(4, Label::kCase));
  for (IidForm form : {IidForm::kClassBlocks, IidForm::kPooledBlocks}) {
    const auto e = err_hat_iid(s, 2, {0}, PenaltySpec::natural(), 0.2, form);
    EXPECT_TRUE(std::isfinite(e.value));
    for (const auto& f : e.fold_error_fraction) EXPECT_TRUE(std::isnan(f[0]));
  }
}

TEST(IidEstimator, TooFewObservations) {
  const auto s = iid_of({{0}, {1}}, {Label::kCase, Label::kControl});
  EXPECT_THROW(err_hat_iid(s, 3, {0}, PenaltySpec::natural()), ClassTooSmall);
}

TEST(IidEstimator, ConsistentOnTrueSubset) {
  for (IidForm form : {IidForm::kClassBlocks, IidForm::kPooledBlocks}) {
    int close = 0;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      const auto s = iid_xor(6, {0, 1}, 0.2, 2000, seed);
      close += std::abs(err_hat_iid(s, 5, {0, 1}, PenaltySpec::natural(), std::nullopt, form).value - 8.0 / 9.0) <
               0.05;
    }
    EXPECT_GE(close, 7);
  }
}

TEST(IidEstimator, ThreadCountDoesNotMatter) {
  const auto s = iid_xor(7, {2, 5}, 0.3, 300, 4);
  const auto a = select_relevant_iid(s, 5, 2, PenaltySpec::natural(), std::nullopt, IidForm::kPooledBlocks, 1);
  const auto b = select_relevant_iid(s, 5, 2, PenaltySpec::natural(), std::nullopt, IidForm::kPooledBlocks, 2);
  EXPECT_EQ(a.subset, b.subset);
  EXPECT_EQ(a.estimate.value, b.estimate.value);
}
