#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace entlink {

/// Fixed-dimension real vector. All embedding arithmetic runs in f64.
using DenseVector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input text (XML, delimited tables, JSON artifacts).
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t byte_offset)
      : Error(what + " (at byte " + std::to_string(byte_offset) + ")"),
        offset_(byte_offset) {}
  explicit ParseError(const std::string& what) : Error(what) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_ = 0;
};

/// Violated precondition or bad configuration; maps to CLI exit status 1.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Binary artifact could not be read back (truncation, version, dims).
class FormatError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Deterministic randomness. The <random> distributions are implementation
// defined, so the generator (xoshiro256**) and every derived draw live here
// to keep artifacts bit-identical across toolchains.

std::uint64_t splitmix64(std::uint64_t x);

class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t next();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  /// Uniform integer in [0, n). n must be positive.
  std::size_t index(std::size_t n);
  double normal();
  /// Stream derived from this generator's seed and `stream`; does not advance *this.
  Rng fork(std::uint64_t stream) const;

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[index(i)]);
    }
  }

 private:
  std::uint64_t seed_;
  std::uint64_t state_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// ---------------------------------------------------------------------------

std::uint64_t fnv1a64(std::string_view bytes,
                      std::uint64_t basis = 14695981039346656037ULL);

bool all_finite(const DenseVector& v);

/// Lowercase ASCII alphanumeric tokens; every other byte separates tokens.
std::vector<std::string> word_tokens(std::string_view text);

std::string ascii_lower(std::string_view text);
std::string trim(std::string_view text);

/// Reads a whole file; throws Error naming the path on failure.
std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view bytes);

/// Runs fn(i) for i in [0, n) over a few worker threads. fn must only touch
/// slot i of any shared output.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn);

}  // namespace entlink

#include "entlink/detail/parallel.hpp"
