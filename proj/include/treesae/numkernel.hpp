#pragma once

// Small dense linear algebra kernel, counter-based RNG and Adam state.
// Everything accumulates in double; loop nesting is fixed so results are
// reproducible bit-for-bit on a given platform.

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

namespace treesae {

class DenseMatrix {
  public:
    DenseMatrix() = default;
    DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data);

    // Row-major literal, e.g. DenseMatrix::from_rows({{1, 2}, {3, 4}}).
    static DenseMatrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
    static DenseMatrix identity(std::size_t n);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const noexcept {
        return {data_.data() + r * cols_, cols_};
    }

    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }
    const std::vector<double>& storage() const noexcept { return data_; }

    void fill(double v);
    bool all_finite() const noexcept;

    bool operator==(const DenseMatrix& other) const = default;

  private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

// a (n×k) · b (k×m). Throws DimensionError when a.cols() != b.rows().
DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix transpose(const DenseMatrix& m);

double dot(std::span<const double> a, std::span<const double> b);
double squared_norm(std::span<const double> a);
double column_norm(const DenseMatrix& m, std::size_t col);
double frobenius_norm(const DenseMatrix& m);

// Counter-based generator: draw i of a stream is a pure function of
// (seed, i), so any position can be reproduced without replaying the stream.
class Rng {
  public:
    explicit Rng(std::uint64_t seed = 0, std::uint64_t counter = 0) noexcept
        : seed_(seed), counter_(counter) {}

    static std::uint64_t draw_at(std::uint64_t seed, std::uint64_t counter) noexcept;

    std::uint64_t next_u64() noexcept { return draw_at(seed_, counter_++); }
    // Uniform on [0, 1) with 53 bits of resolution.
    double uniform() noexcept;
    // Uniform on (0, 1]; safe as a log argument.
    double uniform_open() noexcept;
    double normal() noexcept;
    double normal(double mean, double stddev) noexcept { return mean + stddev * normal(); }
    // Uniform integer in [0, n). n must be > 0.
    std::uint64_t uniform_index(std::uint64_t n) noexcept;

    // Independent child stream keyed by `stream`.
    Rng fork(std::uint64_t stream) const noexcept;

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t counter() const noexcept { return counter_; }

    template <class It> void shuffle(It first, It last) noexcept {
        const auto n = static_cast<std::uint64_t>(last - first);
        for (std::uint64_t i = n; i > 1; --i) {
            const auto j = uniform_index(i);
            std::swap(first[i - 1], first[j]);
        }
    }

  private:
    std::uint64_t seed_;
    std::uint64_t counter_;
};

// Random unit vector of the given dimension.
std::vector<double> random_unit_vector(Rng& rng, std::size_t dim);

struct AdamParams {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct AdamState {
    DenseMatrix first_moment;
    DenseMatrix second_moment;
    std::uint64_t step = 0;
    AdamParams params;

    AdamState() = default;
    AdamState(std::size_t rows, std::size_t cols, AdamParams p = {})
        : first_moment(rows, cols), second_moment(rows, cols), params(p) {}

    bool operator==(const AdamState& other) const;
};

// Bias-corrected Adam update applied in place. Throws NumericError naming
// `param_name` if the gradient has a non-finite entry (param untouched).
void adam_step(DenseMatrix& param, const DenseMatrix& grad, AdamState& state,
               std::string_view param_name = "parameter");

// Scales every column to unit L2 norm. An all-zero column is replaced by a
// random unit vector drawn from `rng`; returns how many were replaced.
std::size_t unit_normalize_columns(DenseMatrix& m, Rng& rng);

} // namespace treesae
