#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mdrefe {

/// Binary response. Cases carry +1, controls -1.
enum class Label : std::int8_t { kControl = -1, kCase = 1 };

constexpr int to_int(Label y) { return static_cast<int>(y); }
constexpr Label opposite(Label y) { return y == Label::kCase ? Label::kControl : Label::kCase; }

/// Slot of a label in per-class arrays: controls first, cases second.
constexpr std::size_t slot(Label y) { return y == Label::kCase ? 1 : 0; }
constexpr Label label_of_slot(std::size_t s) { return s == 1 ? Label::kCase : Label::kControl; }

/// Number of minor alleles of one SNP: 0, 1 or 2.
using Genotype = std::uint8_t;
using FactorVector = std::vector<Genotype>;

/// Sorted, duplicate-free 0-based factor indices.
using Subset = std::vector<std::size_t>;

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InvalidArgument : Error {
  using Error::Error;
};

/// A class holds fewer observations than there are folds.
struct ClassTooSmall : Error {
  using Error::Error;
};

/// The raw-draw cap was hit before the strata were filled.
struct BudgetExceeded : Error {
  using Error::Error;
};

/// No sample size satisfies the budget constraint.
struct NoFeasibleSize : Error {
  using Error::Error;
};

inline void require(bool ok, const std::string& what) {
  if (!ok) throw InvalidArgument(what);
}

constexpr std::uint64_t pow3(std::size_t k) {
  std::uint64_t v = 1;
  for (std::size_t i = 0; i < k; ++i) v *= 3;
  return v;
}

/// Base-3 code of `x` projected onto `subset`; subset[0] is the least
/// significant digit.
inline std::uint32_t cell_code(std::span<const Genotype> x, std::span<const std::size_t> subset) {
  std::uint32_t code = 0;
  for (std::size_t j = subset.size(); j-- > 0;) code = code * 3 + x[subset[j]];
  return code;
}

inline void decode_cell(std::uint64_t code, std::span<Genotype> digits) {
  for (auto& d : digits) {
    d = static_cast<Genotype>(code % 3);
    code /= 3;
  }
}

inline bool is_valid_subset(std::span<const std::size_t> subset, std::size_t n) {
  for (std::size_t i = 0; i < subset.size(); ++i) {
    if (subset[i] >= n) return false;
    if (i > 0 && subset[i] <= subset[i - 1]) return false;
  }
  return true;
}

inline void require_subset(std::span<const std::size_t> subset, std::size_t n) {
  require(is_valid_subset(subset, n),
          "factor subset must be sorted, duplicate-free and within 1.." + std::to_string(n));
}

/// Row-major matrix of genotypes; one row per observation.
class GenotypeMatrix {
 public:
  GenotypeMatrix() = default;
  explicit GenotypeMatrix(std::size_t cols) : cols_(cols) {}

  std::size_t rows() const { return cols_ == 0 ? 0 : data_.size() / cols_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return data_.empty(); }

  std::span<const Genotype> row(std::size_t i) const {
    return {data_.data() + i * cols_, cols_};
  }

  void push_back(std::span<const Genotype> x) {
    if (x.size() != cols_) throw InvalidArgument("row width does not match matrix");
    data_.insert(data_.end(), x.begin(), x.end());
  }

  void reserve(std::size_t rows) { data_.reserve(rows * cols_); }

  friend bool operator==(const GenotypeMatrix&, const GenotypeMatrix&) = default;

 private:
  std::size_t cols_ = 0;
  std::vector<Genotype> data_;
};

/// 1-based rendering used in configs, reports and the CLI.
inline std::string format_subset(std::span<const std::size_t> subset) {
  std::string s = "{";
  for (std::size_t i = 0; i < subset.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(subset[i] + 1);
  }
  return s + "}";
}

}  // namespace mdrefe
