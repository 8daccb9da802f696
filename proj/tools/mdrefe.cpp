#include <atomic>
#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "acceptance_suite.hpp"
#include "mdrefe/cost_planner.hpp"
#include "mdrefe/harness.hpp"
#include "mdrefe/stratify.hpp"
#include "mdrefe/xor_model.hpp"

namespace {

constexpr int kExitInvalid = 2;
constexpr int kExitInfeasible = 3;
constexpr int kExitInterrupted = 130;

std::atomic<bool> g_stop{false};

extern "C" void on_sigint(int) { g_stop = true; }

struct RunArgs {
  std::string config;
  std::string preset;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string out;
  unsigned threads = 1;
  bool resume = false;
};

int cmd_run(const RunArgs& a) {
  using namespace mdrefe;
  ExperimentConfig config;
  if (!a.config.empty())
    config = load_config(a.config);
  else if (a.preset == "desk")
    config = ExperimentConfig::desk();
  else
    config = ExperimentConfig::table1();
  if (a.seed_given) config.seed = a.seed;
  config.validate();

  std::signal(SIGINT, on_sigint);
  RunOptions options;
  options.threads = a.threads;
  options.stop = &g_stop;
  options.warn = [](const std::string& msg) { std::cerr << "warning: " << msg << '\n'; };
  const RunStatus status = run_to_csv(config, a.out, options, a.resume);
  if (status == RunStatus::kInterrupted) {
    std::cerr << "interrupted; completed cells are in " << a.out << ", rerun with --resume to continue\n";
    return kExitInterrupted;
  }
  return 0;
}

struct PlanArgs {
  std::vector<std::uint64_t> budgets;
  std::vector<double> price_ratios;
  std::vector<double> ratios = {0.5};
  std::vector<double> alphas = {0.05};
  std::vector<double> prevalences;
  std::vector<double> estimates;
  bool even = false;
  bool table = false;
};

int cmd_plan(const PlanArgs& a) {
  using namespace mdrefe;
  const bool estimated = !a.estimates.empty();
  const auto& ps = estimated ? a.estimates : a.prevalences;
  const auto parity = a.even ? SizeParity::kEven : SizeParity::kAny;
  const std::size_t combos = a.budgets.size() * a.price_ratios.size() * a.ratios.size() * a.alphas.size() * ps.size();

  if (combos == 1 && !a.table) {
    const CostParams params{a.budgets[0], a.price_ratios[0], a.ratios[0], a.alphas[0]};
    const double p = ps[0];
    const std::uint64_t n = estimated ? s_str_estimated(params, p, parity) : s_str(params, p, parity);
    const auto summary = NTildeLaw(stratum_sizes(n, params.case_ratio), p).summary();
    std::printf("s_str   = %llu\n", static_cast<unsigned long long>(n));
    std::printf("s_ind   = %llu\n", static_cast<unsigned long long>(params.budget));
    std::printf("lambda0 = %.6g\n", lambda0(params.case_ratio, params.price_ratio, p));
    std::printf("P(cost <= C) at s_str = %.6g\n", prob_cost_within(n, params, p));
    std::printf("N-tilde at s_str: mean %.6g, sd %.6g, 5%% %llu, median %llu, 95%% %llu\n", summary.mean,
                summary.sd, static_cast<unsigned long long>(summary.q05),
                static_cast<unsigned long long>(summary.q50), static_cast<unsigned long long>(summary.q95));
    return 0;
  }

  std::cout << "C,w,a,alpha,p,s_str,s_ind,lambda0\n";
  bool infeasible = false;
  for (double p : ps)
    for (double w : a.price_ratios)
      for (double ratio : a.ratios)
        for (double alpha : a.alphas)
          for (auto c : a.budgets) {
            const CostParams params{c, w, ratio, alpha};
            std::string size;
            try {
              size = std::to_string(s_str(params, p, parity));
            } catch (const NoFeasibleSize&) {
              size = "NA";
              infeasible = true;
            }
            std::cout << c << ',' << format_number(w) << ',' << format_number(ratio) << ','
                      << format_number(alpha) << ',' << format_number(p) << ',' << size << ',' << c << ','
                      << format_number(lambda0(ratio, w, p)) << '\n';
          }
  return infeasible ? kExitInfeasible : 0;
}

struct DumpArgs {
  std::size_t n = 10;
  std::vector<std::size_t> relevant = {2, 3, 5};
  double gamma = 0.2;
  std::size_t size = 100;
  std::string design = "stratified";
  double ratio = 0.5;
  std::uint64_t seed = 1;
  std::string out;
};

int cmd_dump(const DumpArgs& a) {
  using namespace mdrefe;
  Subset relevant;
  for (auto k : a.relevant) {
    require(k >= 1, "relevant factors are numbered from 1");
    relevant.push_back(k - 1);
  }
  std::sort(relevant.begin(), relevant.end());
  SeededStream maf_stream(derive_seed(a.seed, {0}));
  SeededStream raw(derive_seed(a.seed, {1}));
  const XorModel model(draw_mafs(a.n, relevant, maf_stream), relevant, a.gamma);
  std::ofstream file;
  std::ostream* os = &std::cout;
  if (!a.out.empty()) {
    file.open(a.out);
    if (!file) throw Error("cannot write " + a.out);
    os = &file;
  }
  if (a.design == "iid") {
    const auto s = draw_iid_sample(model, raw, a.size);
    write_dataset_csv(*os, s.x, s.y);
  } else {
    const auto s = build_stratified(model, raw, a.size, a.ratio);
    GenotypeMatrix x(model.n());
    std::vector<Label> y;
    for (std::size_t i = 0; i < s.controls.rows(); ++i) x.push_back(s.controls.row(i)), y.push_back(Label::kControl);
    for (std::size_t i = 0; i < s.cases.rows(); ++i) x.push_back(s.cases.row(i)), y.push_back(Label::kCase);
    write_dataset_csv(*os, x, y);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Exhaustive MDR feature selection on stratified and i.i.d. case-control samples"};
  app.require_subcommand(1);

  RunArgs run_args;
  auto* run = app.add_subcommand("run", "Monte Carlo comparison of the five designs; writes the TMR table as CSV");
  auto* config_opt = run->add_option("--config", run_args.config, "JSON experiment config")->check(CLI::ExistingFile);
  run->add_option("--preset", run_args.preset, "built-in config when --config is absent")
      ->check(CLI::IsMember({"table1", "desk"}))
      ->excludes(config_opt);
  run->add_option_function<std::uint64_t>(
      "--seed", [&](std::uint64_t s) { run_args.seed = s, run_args.seed_given = true; }, "base seed");
  run->add_option("--out", run_args.out, "output CSV")->required();
  run->add_option("--threads", run_args.threads, "worker threads for replicates")->check(CLI::Range(1u, 256u));
  run->add_flag("--resume", run_args.resume, "continue from <out>.resume if present");

  PlanArgs plan_args;
  auto* plan = app.add_subcommand("plan", "largest stratified sample size that fits a budget");
  plan->add_option("--budget", plan_args.budgets, "budget C (comma-separated for a table)")->required()->delimiter(',');
  plan->add_option("--price-ratio", plan_args.price_ratios, "price ratio w")->required()->delimiter(',');
  plan->add_option("--ratio", plan_args.ratios, "case ratio a")->delimiter(',')->capture_default_str();
  plan->add_option("--alpha", plan_args.alphas, "allowed overrun probability")->delimiter(',')->capture_default_str();
  auto* p_opt = plan->add_option("--prevalence", plan_args.prevalences, "known P(Y=1)")->delimiter(',');
  auto* ph_opt =
      plan->add_option("--prevalence-estimate", plan_args.estimates, "estimated P(Y=1)")->delimiter(',');
  p_opt->excludes(ph_opt);
  plan->add_flag("--even", plan_args.even, "restrict to even sample sizes");
  plan->add_flag("--table", plan_args.table, "always print the CSV planning table");

  auto* selftest = app.add_subcommand("selftest", "run the acceptance property suite");

  DumpArgs dump_args;
  auto* dump = app.add_subcommand("dump", "write one simulated dataset as CSV");
  dump->add_option("--n", dump_args.n, "number of factors")->capture_default_str();
  dump->add_option("--relevant", dump_args.relevant, "relevant factors, 1-based")->delimiter(',');
  dump->add_option("--gamma", dump_args.gamma)->capture_default_str();
  dump->add_option("--size", dump_args.size, "sample size")->capture_default_str();
  dump->add_option("--design", dump_args.design)->check(CLI::IsMember({"iid", "stratified"}));
  dump->add_option("--ratio", dump_args.ratio, "case ratio a")->capture_default_str();
  dump->add_option("--seed", dump_args.seed)->capture_default_str();
  dump->add_option("--out", dump_args.out, "output file (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitInvalid;
  }

  try {
    if (*run) return cmd_run(run_args);
    if (*plan) {
      if (plan_args.prevalences.empty() && plan_args.estimates.empty()) {
        std::cerr << "plan: one of --prevalence or --prevalence-estimate is required\n";
        return kExitInvalid;
      }
      return cmd_plan(plan_args);
    }
    if (*selftest) return acceptance::run_all(std::cout) == 0 ? 0 : 1;
    if (*dump) return cmd_dump(dump_args);
  } catch (const mdrefe::NoFeasibleSize& e) {
    std::cerr << "infeasible: " << e.what() << '\n';
    return kExitInfeasible;
  } catch (const mdrefe::InvalidArgument& e) {
    std::cerr << "invalid input: " << e.what() << '\n';
    return kExitInvalid;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
