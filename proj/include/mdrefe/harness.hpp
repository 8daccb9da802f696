#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "json.hpp"
#include "mdrefe/core_model.hpp"
#include "mdrefe/cost_planner.hpp"
#include "mdrefe/estimator.hpp"
#include "mdrefe/rng.hpp"
#include "mdrefe/stratify.hpp"
#include "mdrefe/xor_model.hpp"

namespace mdrefe {

/// Six significant digits, shortest form ("%.6g").
inline std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

/// The five compared designs, in report order.
enum class MethodVariant {
  kIidUnknownP,          // xi_C, p unknown
  kIidKnownP,            // xi_C, p known
  kStratPlannedKnownP,   // zeta_N with N = s'_str(C, w, alpha), p known
  kStratSizeCEstimatedP, // zeta_C, p estimated from the raw labels
  kStratSizeCKnownP,     // zeta_C, p known
};

inline constexpr MethodVariant kAllVariants[] = {
    MethodVariant::kIidUnknownP, MethodVariant::kIidKnownP, MethodVariant::kStratPlannedKnownP,
    MethodVariant::kStratSizeCEstimatedP, MethodVariant::kStratSizeCKnownP};

constexpr std::string_view variant_name(MethodVariant v) {
  switch (v) {
    case MethodVariant::kIidUnknownP: return "iMDR-unknown-p";
    case MethodVariant::kIidKnownP: return "iMDR-known-p";
    case MethodVariant::kStratPlannedKnownP: return "sMDR-planned-N-known-p";
    case MethodVariant::kStratSizeCEstimatedP: return "sMDR-sizeC-estimated-p";
    case MethodVariant::kStratSizeCKnownP: return "sMDR-sizeC-known-p";
  }
  return "?";
}

constexpr std::string_view p_mode_name(MethodVariant v) {
  switch (v) {
    case MethodVariant::kIidUnknownP: return "unknown";
    case MethodVariant::kStratSizeCEstimatedP: return "estimated";
    default: return "known";
  }
}

constexpr bool is_stratified(MethodVariant v) {
  return v != MethodVariant::kIidUnknownP && v != MethodVariant::kIidKnownP;
}

struct ConfigError : InvalidArgument {
  using InvalidArgument::InvalidArgument;
};

struct ExperimentConfig {
  std::size_t n = 100;
  std::size_t folds = 5;                       // K
  std::size_t r = 3;
  Subset relevant = {1, 2, 4};                 // 0-based; factors 2, 3, 5
  double case_ratio = 0.5;                     // a
  std::vector<double> gammas = {0.05, 0.1, 0.2};
  std::vector<std::uint64_t> budgets = {100, 200, 300, 400, 500};
  std::vector<double> price_ratios = {0.0, 0.1};
  double alpha = 0.05;
  std::size_t replicates = 100;                // D
  std::uint64_t seed = 1;
  PenaltySpec psi = PenaltySpec::natural();
  bool even_sizes = true;                      // planned N restricted to even values
  double relevant_maf = 0.5;
  std::uint64_t draw_cap = kDefaultDrawCap;
  IidForm iid_form = IidForm::kClassBlocks;

  static ExperimentConfig table1() { return {}; }

  /// Laptop-scale preset: n = 20, r = 2, relevant (2, 5), D = 50.
  static ExperimentConfig desk() {
    ExperimentConfig c;
    c.n = 20;
    c.r = 2;
    c.relevant = {1, 4};
    c.gammas = {0.1, 0.2, 0.4};
    c.budgets = {100, 200, 300};
    c.replicates = 50;
    return c;
  }

  void validate() const {
    auto check = [](bool ok, const std::string& what) {
      if (!ok) throw ConfigError(what);
    };
    check(n >= 2, "n must be at least 2");
    check(folds >= 2, "K must be at least 2");
    check(r >= 1 && r < n, "r must satisfy 1 <= r < n");
    check(relevant.size() == r, "relevant must list exactly r factors");
    check(is_valid_subset(relevant, n), "relevant factors must be distinct and within 1..n");
    check(r <= detail::kMaxSubsetSize, "r too large");
    check(case_ratio > 0.0 && case_ratio < 1.0, "a must lie in (0, 1)");
    check(!gammas.empty() && !budgets.empty() && !price_ratios.empty(), "parameter levels must be nonempty");
    for (double g : gammas) check(g > 0.0 && g <= 1.0, "gamma levels must lie in (0, 1]");
    for (auto c : budgets) check(c >= 2 && c >= folds, "budget levels must be at least max(2, K)");
    for (double w : price_ratios) check(w >= 0.0 && std::isfinite(w), "w levels must be nonnegative");
    check(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0, 1)");
    check(replicates >= 1, "D must be at least 1");
    check(relevant_maf > 0.0 && relevant_maf <= 0.5, "relevant_maf must lie in (0, 0.5]");
    check(draw_cap >= 1, "draw_cap must be positive");
    if (!psi.is_natural()) check(psi.psi_minus > 0.0 && psi.psi_plus > 0.0, "psi weights must be positive");
  }

  RelevantMafPolicy maf_policy() const {
    return relevant_maf == 0.5 ? RelevantMafPolicy::kRequireHalf : RelevantMafPolicy::kAllowAny;
  }

  /// P(Y = 1) at a gamma level; depends on the relevant MAFs only.
  double prevalence(double gamma) const {
    const XorModel m(std::vector<double>(r, relevant_maf), all_factors(r), gamma, maf_policy());
    return m.prevalence();
  }
};

inline nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["n"] = c.n;
  j["K"] = c.folds;
  j["r"] = c.r;
  std::vector<std::size_t> rel;
  for (auto k : c.relevant) rel.push_back(k + 1);
  j["relevant"] = rel;
  j["a"] = c.case_ratio;
  j["gamma"] = c.gammas;
  j["C"] = c.budgets;
  j["w"] = c.price_ratios;
  j["alpha"] = c.alpha;
  j["D"] = c.replicates;
  j["seed"] = c.seed;
  j["psi_mode"] = c.psi.is_natural() ? "natural" : "explicit";
  if (!c.psi.is_natural()) j["psi_weights"] = {c.psi.psi_minus, c.psi.psi_plus};
  j["even_sizes"] = c.even_sizes;
  j["relevant_maf"] = c.relevant_maf;
  j["draw_cap"] = c.draw_cap;
  j["iid_form"] = c.iid_form == IidForm::kClassBlocks ? "class_blocks" : "pooled";
  return j;
}

/// Reads a config; keys not present keep the Table-1 defaults, unknown keys
/// are rejected. Factor numbers in "relevant" are 1-based.
inline ExperimentConfig config_from_json(const nlohmann::json& j, ExperimentConfig c = ExperimentConfig::table1()) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  static const char* kKeys[] = {"n", "K", "r", "relevant", "a", "gamma", "C", "w", "alpha", "D",
                                "seed", "psi_mode", "psi_weights", "even_sizes", "relevant_maf", "draw_cap", "iid_form"};
  for (const auto& [key, _] : j.items()) {
    if (std::find_if(std::begin(kKeys), std::end(kKeys), [&](const char* k) { return key == k; }) == std::end(kKeys))
      throw ConfigError("unknown config key '" + key + "'");
  }
  try {
    if (j.contains("n")) c.n = j.at("n").get<std::size_t>();
    if (j.contains("K")) c.folds = j.at("K").get<std::size_t>();
    if (j.contains("r")) c.r = j.at("r").get<std::size_t>();
    if (j.contains("relevant")) {
      c.relevant.clear();
      for (auto k : j.at("relevant").get<std::vector<std::int64_t>>()) {
        if (k < 1) throw ConfigError("relevant factors are numbered from 1");
        c.relevant.push_back(static_cast<std::size_t>(k - 1));
      }
    }
    if (j.contains("a")) c.case_ratio = j.at("a").get<double>();
    if (j.contains("gamma")) c.gammas = j.at("gamma").get<std::vector<double>>();
    if (j.contains("C")) c.budgets = j.at("C").get<std::vector<std::uint64_t>>();
    if (j.contains("w")) c.price_ratios = j.at("w").get<std::vector<double>>();
    if (j.contains("alpha")) c.alpha = j.at("alpha").get<double>();
    if (j.contains("D")) c.replicates = j.at("D").get<std::size_t>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("even_sizes")) c.even_sizes = j.at("even_sizes").get<bool>();
    if (j.contains("relevant_maf")) c.relevant_maf = j.at("relevant_maf").get<double>();
    if (j.contains("draw_cap")) c.draw_cap = j.at("draw_cap").get<std::uint64_t>();
    if (j.contains("iid_form")) {
      const auto form = j.at("iid_form").get<std::string>();
      if (form == "class_blocks") c.iid_form = IidForm::kClassBlocks;
      else if (form == "pooled") c.iid_form = IidForm::kPooledBlocks;
      else throw ConfigError("iid_form must be \"class_blocks\" or \"pooled\"");
    }
    const std::string mode = j.value("psi_mode", c.psi.is_natural() ? "natural" : "explicit");
    if (mode == "natural") {
      if (j.contains("psi_weights")) throw ConfigError("psi_weights requires psi_mode \"explicit\"");
      c.psi = PenaltySpec::natural();
    } else if (mode == "explicit") {
      auto w = j.at("psi_weights").get<std::vector<double>>();
      if (w.size() != 2 || !(w[0] > 0.0) || !(w[1] > 0.0))
        throw ConfigError("psi_weights must be two positive numbers [psi(-1), psi(1)]");
      c.psi = PenaltySpec::weights(w[0], w[1]);
    } else {
      throw ConfigError("psi_mode must be \"natural\" or \"explicit\"");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  c.validate();
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config is not valid JSON: " + std::string(e.what()));
  }
  return config_from_json(j);
}

/// One report column set: variant, w, and the sample size it draws on.
struct ArmSpec {
  explicit ArmSpec(MethodVariant v, double price_ratio = 0.0) : variant(v), w(price_ratio) {}

  MethodVariant variant;
  double w = 0.0;
  std::optional<std::uint64_t> planned_size;  // only for the planned arm
  std::string plan_error;
};

/// Report arms of one (gamma, C) cell, in CSV order. The planned arm appears
/// once per positive w level.
inline std::vector<ArmSpec> cell_arms(const ExperimentConfig& c, double gamma, std::uint64_t budget) {
  std::vector<ArmSpec> arms;
  arms.emplace_back(MethodVariant::kIidUnknownP);
  arms.emplace_back(MethodVariant::kIidKnownP);
  const double p = c.prevalence(gamma);
  for (double w : c.price_ratios) {
    if (w <= 0.0) continue;
    ArmSpec arm{MethodVariant::kStratPlannedKnownP, w};
    try {
      const auto parity = c.even_sizes ? SizeParity::kEven : SizeParity::kAny;
      arm.planned_size = s_str({budget, w, c.case_ratio, c.alpha}, p, parity);
    } catch (const NoFeasibleSize& e) {
      arm.plan_error = e.what();
    }
    arms.push_back(arm);
  }
  arms.emplace_back(MethodVariant::kStratSizeCEstimatedP);
  arms.emplace_back(MethodVariant::kStratSizeCKnownP);
  return arms;
}

struct ArmOutcome {
  MethodVariant variant = MethodVariant::kIidUnknownP;
  double w = 0.0;
  std::uint64_t n_used = 0;
  Subset selected;
  bool hit = false;     // T_d
  bool failed = false;  // no selection could be made
  std::string error;
};

struct ReplicateResult {
  std::uint64_t seed = 0;
  std::vector<ArmOutcome> arms;
};

/// T_d: the selected subset equals the true relevant set exactly.
inline bool is_true_model(const Subset& selected, const Subset& truth) { return selected == truth; }

inline ReplicateResult run_replicate(const ExperimentConfig& c, std::size_t gamma_index, std::size_t budget_index,
                                     std::size_t replicate, const std::vector<ArmSpec>& arms) {
  const double gamma = c.gammas.at(gamma_index);
  const std::uint64_t budget = c.budgets.at(budget_index);
  ReplicateResult out;
  out.seed = derive_seed(c.seed, {gamma_index, budget_index, replicate});
  SeededStream maf_stream(derive_seed(out.seed, {0}));
  SeededStream raw(derive_seed(out.seed, {1}));

  const XorModel model(draw_mafs(c.n, c.relevant, maf_stream, c.relevant_maf), c.relevant, gamma, c.maf_policy());
  const double p = model.prevalence();

  // One raw stream, consumed in the order xi_C, zeta_N (per planned arm), zeta_C.
  const IidSample iid = draw_iid_sample(model, raw, budget);
  std::vector<std::optional<StratifiedSample>> planned(arms.size());
  std::vector<std::string> build_errors(arms.size());
  for (std::size_t i = 0; i < arms.size(); ++i) {
    if (arms[i].variant != MethodVariant::kStratPlannedKnownP || !arms[i].planned_size) continue;
    try {
      planned[i] = build_stratified(model, raw, *arms[i].planned_size, c.case_ratio, c.draw_cap);
    } catch (const Error& e) {
      build_errors[i] = e.what();
    }
  }
  std::optional<StratifiedSample> full;
  std::string full_error;
  try {
    full = build_stratified(model, raw, budget, c.case_ratio, c.draw_cap);
  } catch (const Error& e) {
    full_error = e.what();
  }

  for (std::size_t i = 0; i < arms.size(); ++i) {
    const ArmSpec& arm = arms[i];
    ArmOutcome o;
    o.variant = arm.variant;
    o.w = arm.w;
    try {
      std::optional<Selection> sel;
      switch (arm.variant) {
        case MethodVariant::kIidUnknownP:
          o.n_used = budget;
          sel = select_relevant_iid(iid, c.folds, c.r, c.psi, std::nullopt, c.iid_form);
          break;
        case MethodVariant::kIidKnownP:
          o.n_used = budget;
          sel = select_relevant_iid(iid, c.folds, c.r, c.psi, p, c.iid_form);
          break;
        case MethodVariant::kStratPlannedKnownP:
          o.n_used = arm.planned_size.value_or(0);
          if (!arm.planned_size) throw Error(arm.plan_error);
          if (!planned[i]) throw Error(build_errors[i]);
          sel = select_relevant(*planned[i], c.folds, c.r, PrevalenceEstimate::known(p), c.psi);
          break;
        case MethodVariant::kStratSizeCEstimatedP:
          o.n_used = budget;
          if (!full) throw Error(full_error);
          sel = select_relevant(*full, c.folds, c.r, estimate_prevalence(*full), c.psi);
          break;
        case MethodVariant::kStratSizeCKnownP:
          o.n_used = budget;
          if (!full) throw Error(full_error);
          sel = select_relevant(*full, c.folds, c.r, PrevalenceEstimate::known(p), c.psi);
          break;
      }
      o.selected = sel->subset;
      o.hit = is_true_model(o.selected, c.relevant);
    } catch (const Error& e) {
      o.failed = true;
      o.error = e.what();
    }
    out.arms.push_back(std::move(o));
  }
  return out;
}

inline ReplicateResult run_replicate(const ExperimentConfig& c, std::size_t gamma_index, std::size_t budget_index,
                                     std::size_t replicate) {
  return run_replicate(c, gamma_index, budget_index, replicate,
                       cell_arms(c, c.gammas.at(gamma_index), c.budgets.at(budget_index)));
}

struct ReportRow {
  MethodVariant variant;
  double gamma = 0.0;
  std::uint64_t budget = 0;
  double w = 0.0;
  std::uint64_t n_used = 0;
  std::size_t hits = 0;
  std::size_t failures = 0;
  std::size_t replicates = 0;
  std::uint64_t seed = 0;

  double tmr() const { return static_cast<double>(hits) / static_cast<double>(replicates); }
};

struct TMRReport {
  std::vector<ReportRow> rows;

  const ReportRow* find(MethodVariant v, double gamma, std::uint64_t budget, double w = -1.0) const {
    for (const auto& row : rows)
      if (row.variant == v && row.gamma == gamma && row.budget == budget && (w < 0.0 || row.w == w)) return &row;
    return nullptr;
  }
};

/// Runs fn(0..count-1) on up to `threads` workers; the first exception is
/// rethrown after all workers finish.
template <class Fn>
void parallel_for(std::size_t count, unsigned threads, Fn&& fn) {
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(count, 1))));
  if (threads == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < count; i = next++) {
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(error_mutex);
            if (!error) error = std::current_exception();
          }
        }
      });
    }
  }
  if (error) std::rethrow_exception(error);
}

struct RunOptions {
  unsigned threads = 1;
  const std::atomic<bool>* stop = nullptr;
  std::function<void(const std::string&)> warn;

  static RunOptions with_threads(unsigned t) {
    RunOptions o;
    o.threads = t;
    return o;
  }
};

/// Rows of one (gamma, C) cell, or nothing if a stop was requested.
inline std::optional<std::vector<ReportRow>> run_cell(const ExperimentConfig& c, std::size_t gamma_index,
                                                      std::size_t budget_index, const RunOptions& options = {}) {
  const double gamma = c.gammas.at(gamma_index);
  const std::uint64_t budget = c.budgets.at(budget_index);
  const auto arms = cell_arms(c, gamma, budget);
  std::vector<ReplicateResult> results(c.replicates);
  std::atomic<bool> stopped{false};
  parallel_for(c.replicates, options.threads, [&](std::size_t d) {
    if (options.stop && options.stop->load()) {
      stopped = true;
      return;
    }
    results[d] = run_replicate(c, gamma_index, budget_index, d, arms);
  });
  if (stopped) return std::nullopt;

  std::vector<ReportRow> rows;
  for (std::size_t a = 0; a < arms.size(); ++a) {
    ReportRow row{arms[a].variant, gamma, budget, arms[a].w, 0, 0, 0, c.replicates, c.seed};
    for (std::size_t d = 0; d < c.replicates; ++d) {
      const ArmOutcome& o = results[d].arms[a];
      row.n_used = o.n_used;
      row.hits += o.hit ? 1 : 0;
      if (o.failed) {
        ++row.failures;
        if (options.warn)
          options.warn("gamma=" + format_number(gamma) + " C=" + std::to_string(budget) + " replicate " +
                       std::to_string(d) + " " + std::string(variant_name(o.variant)) + ": " + o.error +
                       " (T_d = 0)");
      }
    }
    rows.push_back(row);
  }
  return rows;
}

inline TMRReport run_experiment(const ExperimentConfig& c, const RunOptions& options = {}) {
  c.validate();
  TMRReport report;
  for (std::size_t g = 0; g < c.gammas.size(); ++g)
    for (std::size_t b = 0; b < c.budgets.size(); ++b) {
      auto rows = run_cell(c, g, b, options);
      if (!rows) return report;
      report.rows.insert(report.rows.end(), rows->begin(), rows->end());
    }
  return report;
}

// ---- CSV --------------------------------------------------------------------

inline constexpr std::string_view kCsvHeader = "variant,gamma,C,w,p_mode,N_used,TMR,D,seed";

inline std::string csv_row(const ReportRow& row) {
  std::ostringstream os;
  os << variant_name(row.variant) << ',' << format_number(row.gamma) << ',' << row.budget << ','
     << format_number(row.w) << ',' << p_mode_name(row.variant) << ',' << row.n_used << ','
     << format_number(row.tmr()) << ',' << row.replicates << ',' << row.seed;
  return os.str();
}

inline void write_csv(std::ostream& os, const TMRReport& report) {
  os << kCsvHeader << '\n';
  for (const auto& row : report.rows) os << csv_row(row) << '\n';
}

enum class RunStatus { kComplete, kInterrupted };

inline std::filesystem::path resume_marker_path(const std::filesystem::path& csv) {
  return std::filesystem::path(csv.string() + ".resume");
}

/// Runs the experiment cell by cell, appending each finished cell to `csv`
/// and recording progress in `<csv>.resume`. The marker is removed once every
/// cell is written. With `resume`, a matching marker lets the run continue
/// after the last completed cell; the final file is byte-identical to an
/// uninterrupted run.
inline RunStatus run_to_csv(const ExperimentConfig& c, const std::filesystem::path& csv, const RunOptions& options = {},
                            bool resume = false) {
  c.validate();
  const auto marker = resume_marker_path(csv);
  const nlohmann::json config_json = to_json(c);
  const std::size_t rows_per_cell = cell_arms(c, c.gammas.front(), c.budgets.front()).size();
  const std::size_t total_cells = c.gammas.size() * c.budgets.size();

  std::size_t done = 0;
  std::vector<std::string> kept;
  if (resume && std::filesystem::exists(marker)) {
    nlohmann::json m;
    std::ifstream(marker) >> m;
    if (m.at("config") != config_json) throw ConfigError("resume marker belongs to a different config or seed");
    done = m.at("completed_cells").get<std::size_t>();
    std::ifstream in(csv);
    std::string line;
    std::getline(in, line);
    while (kept.size() < done * rows_per_cell && std::getline(in, line)) kept.push_back(line);
    if (kept.size() != done * rows_per_cell) throw Error("CSV is shorter than its resume marker claims");
  }

  std::ofstream out(csv, std::ios::trunc);
  if (!out) throw Error("cannot write " + csv.string());
  out << kCsvHeader << '\n';
  for (const auto& line : kept) out << line << '\n';
  out.flush();

  auto write_marker = [&](std::size_t completed) {
    const auto tmp = std::filesystem::path(marker.string() + ".tmp");
    {
      std::ofstream m(tmp, std::ios::trunc);
      m << nlohmann::json{{"config", config_json}, {"completed_cells", completed}}.dump(2) << '\n';
    }
    std::filesystem::rename(tmp, marker);
  };
  write_marker(done);

  for (std::size_t cell = done; cell < total_cells; ++cell) {
    const std::size_t g = cell / c.budgets.size();
    const std::size_t b = cell % c.budgets.size();
    auto rows = run_cell(c, g, b, options);
    if (!rows) return RunStatus::kInterrupted;
    for (const auto& row : *rows) out << csv_row(row) << '\n';
    out.flush();
    write_marker(cell + 1);
  }
  out.close();
  std::filesystem::remove(marker);
  return RunStatus::kComplete;
}

}  // namespace mdrefe
