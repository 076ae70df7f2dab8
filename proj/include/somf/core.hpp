#pragma once

// Shared vocabulary types: dense matrix aliases, the error hierarchy and the
// floating-point operation counter used for machine-independent benchmarks.

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace somf {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Argument outside the mathematical domain of an operation (negative radius,
/// reduction factor below one, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Operand shapes do not agree.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A coordinate of the code regression has zero curvature but a nonzero
/// linear term, so the objective is unbounded below.
class SingularityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input data violates a dataset invariant (non-finite entries, empty).
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A file could not be parsed (bad magic, truncated payload, ragged CSV).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Declared dimensions overflow the addressable size.
class DimensionOverflowError : public std::overflow_error {
 public:
  using std::overflow_error::overflow_error;
};

/// Invalid run configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require_dims(bool ok, std::string_view what) {
  if (!ok) throw DimensionError(std::string(what));
}

/// Accumulates floating-point operation counts per algorithmic step. A
/// multiply-add counts as two operations.
class FlopCounter {
 public:
  enum class Kind : std::size_t {
    CodeInputs,           // Gram matrix and D^T x products fed to the code solver
    CodeSolve,            // coordinate-descent sweeps
    SurrogateSelected,    // C-bar and selected rows of B-bar
    SurrogateComplement,  // unselected rows of B-bar (off the critical path)
    DictionaryUpdate,     // block coordinate descent and projections
    GramUpdate,           // online maintenance of D^T D
    Count
  };

  void add(Kind kind, double flops) {
    counts_[static_cast<std::size_t>(kind)] += static_cast<std::uint64_t>(flops);
  }

  std::uint64_t operator[](Kind kind) const { return counts_[static_cast<std::size_t>(kind)]; }

  std::uint64_t total() const {
    std::uint64_t sum = 0;
    for (auto c : counts_) sum += c;
    return sum;
  }

  /// Everything except the unselected rows of B-bar, which can run on a
  /// second thread alongside the dictionary update.
  std::uint64_t critical_path() const { return total() - (*this)[Kind::SurrogateComplement]; }

  FlopCounter& operator+=(const FlopCounter& other) {
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
    return *this;
  }

  void reset() { counts_.fill(0); }

 private:
  std::array<std::uint64_t, static_cast<std::size_t>(Kind::Count)> counts_{};
};

inline void count_flops(FlopCounter* counter, FlopCounter::Kind kind, double flops) {
  if (counter != nullptr) counter->add(kind, flops);
}

}  // namespace somf
