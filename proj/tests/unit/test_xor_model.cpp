#include <gtest/gtest.h>

#include <cmath>

#include "mdrefe/xor_model.hpp"
#include "oracles.hpp"

using namespace mdrefe;

TEST(Genotype, HardyWeinbergPmf) {
  EXPECT_DOUBLE_EQ(genotype_pmf(0.5, 0), 0.25);
  EXPECT_DOUBLE_EQ(genotype_pmf(0.5, 1), 0.5);
  EXPECT_DOUBLE_EQ(genotype_pmf(0.1, 2), 0.01);
  EXPECT_DOUBLE_EQ(genotype_pmf(0.1, 0) + genotype_pmf(0.1, 1) + genotype_pmf(0.1, 2), 1.0);
  EXPECT_THROW(genotype_pmf(0.6, 0), InvalidArgument);
  EXPECT_THROW(genotype_pmf(0.0, 0), InvalidArgument);
}

TEST(Genotype, InverseCdf) {
  EXPECT_EQ(genotype_from_unit(0.5, 0.0), 0);
  EXPECT_EQ(genotype_from_unit(0.5, 0.2499), 0);
  EXPECT_EQ(genotype_from_unit(0.5, 0.25), 1);
  EXPECT_EQ(genotype_from_unit(0.5, 0.7499), 1);
  EXPECT_EQ(genotype_from_unit(0.5, 0.75), 2);
}

TEST(XorModel, ValidatesInputs) {
  EXPECT_THROW(XorModel({0.5, 0.3}, {1}, 0.2), InvalidArgument);  // relevant MAF must be 0.5
  EXPECT_NO_THROW(XorModel({0.5, 0.3}, {1}, 0.2, RelevantMafPolicy::kAllowAny));
  EXPECT_THROW(XorModel({0.5, 0.3}, {0}, 0.0), InvalidArgument);
  EXPECT_THROW(XorModel({0.5, 0.3}, {0}, 1.5), InvalidArgument);
  EXPECT_THROW(XorModel({0.5, 0.3}, {}, 0.2), InvalidArgument);
  EXPECT_THROW(XorModel({0.5, 0.3}, {2}, 0.2), InvalidArgument);
  EXPECT_NO_THROW(XorModel({0.5, 0.3}, {0}, 1.0));
}

TEST(XorModel, PrevalenceIsHalfGamma) {
  for (double g : {0.05, 0.1, 0.2, 1.0}) {
    const XorModel m({0.5, 0.2, 0.5, 0.1, 0.5}, {0, 2, 4}, g);
    EXPECT_NEAR(m.prevalence(), g / 2.0, 1e-15);
    EXPECT_NEAR(m.prevalence(), oracle::prevalence({0.5, 0.2, 0.5, 0.1, 0.5}, {0, 2, 4}, g), 1e-15);
  }
}

TEST(XorModel, PrevalenceWithOtherRelevantMafs) {
  const std::vector<double> mafs = {0.3, 0.2, 0.4};
  const XorModel m(mafs, {0, 2}, 0.6, RelevantMafPolicy::kAllowAny);
  EXPECT_NEAR(m.prevalence(), oracle::prevalence(mafs, {0, 2}, 0.6), 1e-15);
  EXPECT_LT(m.prevalence(), 0.3);
}

TEST(XorModel, ResponseProbability) {
  const XorModel m({0.5, 0.5, 0.2}, {0, 1}, 0.3);
  EXPECT_DOUBLE_EQ(m.response_prob(FactorVector{1, 0, 2}), 0.3);
  EXPECT_DOUBLE_EQ(m.response_prob(FactorVector{1, 1, 0}), 0.0);
  EXPECT_DOUBLE_EQ(m.response_prob(FactorVector{2, 1, 0}), 0.3);
  EXPECT_DOUBLE_EQ(m.response_prob(FactorVector{2, 2, 1}), 0.0);
  EXPECT_THROW(m.response_prob(FactorVector{1, 3, 0}), InvalidArgument);
  EXPECT_THROW(m.response_prob(FactorVector{1, 1}), InvalidArgument);
}

TEST(Sampling, LabelThenMaterializeEqualsFullDraw) {
  const XorModel m({0.5, 0.1, 0.5, 0.3}, {0, 2}, 0.7);
  SeededStream a(5), b(5);
  for (int i = 0; i < 200; ++i) {
    const Observation full = sample_observation(m, a);
    const PendingObservation p = draw_label(m, b);
    EXPECT_EQ(p.y, full.y);
    EXPECT_EQ(materialize(m, b, p), full.x);
    if (full.y == Label::kCase) EXPECT_TRUE(m.odd_parity(full.x));
  }
  EXPECT_EQ(a.counter(), b.counter());
  EXPECT_EQ(a.counter(), 200u * draws_per_observation(4));
}

TEST(Sampling, GammaOneIsDeterministicParity) {
  const XorModel m({0.5, 0.5}, {1}, 1.0);
  SeededStream s(3);
  for (int i = 0; i < 500; ++i) {
    const auto o = sample_observation(m, s);
    EXPECT_EQ(o.y == Label::kCase, o.x[1] == 1);
  }
}

TEST(Sampling, GenotypeFrequencies) {
  const XorModel m({0.5, 0.15}, {0}, 0.2);
  SeededStream s(11);
  const int draws = 200000;
  std::array<int, 3> count{};
  for (int i = 0; i < draws; ++i) ++count[sample_observation(m, s).x[1]];
  for (int g = 0; g < 3; ++g) {
    const double p = genotype_pmf(0.15, static_cast<Genotype>(g));
    EXPECT_NEAR(count[g] / double(draws), p, 4.0 * std::sqrt(p * (1 - p) / draws));
  }
}

TEST(Sampling, MafDraws) {
  SeededStream s(17);
  const auto mafs = draw_mafs(50, {3, 7}, s);
  EXPECT_EQ(mafs[3], 0.5);
  EXPECT_EQ(mafs[7], 0.5);
  for (double p : mafs) {
    EXPECT_GE(p, kMafLow);
    EXPECT_LE(p, kMafHigh);
  }
  SeededStream t(17);
  EXPECT_EQ(draw_mafs(50, {3, 7}, t), mafs);
}

TEST(Sampling, DatasetCsv) {
  GenotypeMatrix x(2);
  x.push_back(FactorVector{0, 2});
  x.push_back(FactorVector{1, 1});
  const std::vector<Label> y = {Label::kControl, Label::kCase};
  std::ostringstream os;
  write_dataset_csv(os, x, y);
  EXPECT_EQ(os.str(), "x_1,x_2,y\n0,2,-1\n1,1,1\n");
}
