// Copyright 2026 The PCD Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pcd {

/// Row-major dense matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  void fill(double v);
  bool all_finite() const;

  /// Rows selected by index, in the given order.
  Matrix gather_rows(std::span<const std::size_t> indices) const;

  bool operator==(const Matrix& other) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);
/// a · bᵀ without materialising the transpose.
Matrix matmul_bt(const Matrix& a, const Matrix& b);
/// aᵀ · b without materialising the transpose.
Matrix matmul_at(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);
/// Scales each row to unit sum. Rows must have positive sum.
Matrix row_normalize(const Matrix& a);
/// Column means.
std::vector<double> column_mean(const Matrix& a);

// ---------------------------------------------------------------------------
// Probability helpers. A probability vector is a plain std::vector<double>
// whose entries are non-negative and sum to one.

using ProbVector = std::vector<double>;

inline constexpr double kProbTolerance = 1e-9;
inline constexpr double kKlClamp = 1e-12;

bool is_prob_vector(std::span<const double> p, double tol = kProbTolerance);
/// Throws std::invalid_argument if p is not a probability vector.
void require_prob_vector(std::span<const double> p, const char* what);

ProbVector uniform(std::size_t k);
ProbVector one_hot(std::size_t k, std::size_t index);

ProbVector softmax(std::span<const double> logits, double temperature = 1.0);
/// Row-wise softmax of a matrix of logits.
Matrix softmax_rows(const Matrix& logits, double temperature = 1.0);
double log_sum_exp(std::span<const double> x);

/// Shannon entropy in nats with 0·log 0 = 0.
double entropy(std::span<const double> p);
/// KL(p || q) with q clamped below at kKlClamp.
double kl_div(std::span<const double> p, std::span<const double> q);

std::size_t argmax(std::span<const double> x);

// ---------------------------------------------------------------------------
// Counter-based random numbers. Every draw is a pure function of (key,
// counter), so a stream can be split into independent children by hashing a
// tag into a new key. Distributions are implemented here rather than taken
// from <random> so that sequences are identical across standard libraries.

class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : key_(mix64(seed ^ 0x9E3779B97F4A7C15ULL)) {}

  /// Independent child stream. Does not advance this stream.
  Rng split(std::uint64_t tag) const;

  std::uint64_t next_u64();
  /// Uniform in [0, 1).
  double uniform();
  /// Uniform in (0, 1).
  double uniform_open();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::size_t below(std::size_t n);
  double normal();
  /// log of a Gamma(shape, 1) draw; stable for tiny shapes.
  double log_gamma_draw(double shape);

  std::vector<std::size_t> permutation(std::size_t n);

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

  static std::uint64_t mix64(std::uint64_t x);

 private:
  Rng(std::uint64_t key, bool) : key_(key) {}

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

/// Beta(alpha, alpha) draw.
double sample_beta(double alpha, Rng& rng);

}  // namespace pcd
