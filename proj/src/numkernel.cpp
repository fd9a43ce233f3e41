#include "treesae/numkernel.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "treesae/errors.hpp"
#include "treesae/log.hpp"

namespace treesae {

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows * cols) {
        throw DimensionError("DenseMatrix: data length " + std::to_string(data_.size()) +
                             " != " + std::to_string(rows) + "x" + std::to_string(cols));
    }
}

DenseMatrix DenseMatrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw DimensionError("DenseMatrix::from_rows: ragged rows");
        data.insert(data.end(), row.begin(), row.end());
    }
    return DenseMatrix(r, c, std::move(data));
}

DenseMatrix DenseMatrix::identity(std::size_t n) {
    DenseMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

void DenseMatrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool DenseMatrix::all_finite() const noexcept {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
    if (a.cols() != b.rows()) {
        throw DimensionError("matmul: " + std::to_string(a.rows()) + "x" +
                             std::to_string(a.cols()) + " times " + std::to_string(b.rows()) +
                             "x" + std::to_string(b.cols()));
    }
    DenseMatrix out(a.rows(), b.cols());
    // i-k-j order: streams rows of b, fixed summation order over k.
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto out_row = out.row(i);
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            const auto b_row = b.row(k);
            for (std::size_t j = 0; j < b.cols(); ++j) out_row[j] += aik * b_row[j];
        }
    }
    return out;
}

DenseMatrix transpose(const DenseMatrix& m) {
    DenseMatrix t(m.cols(), m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) t(j, i) = m(i, j);
    return t;
}

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw DimensionError("dot: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double squared_norm(std::span<const double> a) {
    double s = 0.0;
    for (double v : a) s += v * v;
    return s;
}

double column_norm(const DenseMatrix& m, std::size_t col) {
    double s = 0.0;
    for (std::size_t r = 0; r < m.rows(); ++r) s += m(r, col) * m(r, col);
    return std::sqrt(s);
}

double frobenius_norm(const DenseMatrix& m) { return std::sqrt(squared_norm(m.values())); }

namespace {

constexpr std::uint64_t splitmix(std::uint64_t z) noexcept {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

} // namespace

std::uint64_t Rng::draw_at(std::uint64_t seed, std::uint64_t counter) noexcept {
    return splitmix(splitmix(seed) ^ splitmix(counter ^ 0xD1B54A32D192ED03ULL));
}

double Rng::uniform() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform_open() noexcept {
    return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
}

double Rng::normal() noexcept {
    // Box-Muller, one output per pair of draws so the counter stays the only state.
    const double u1 = uniform_open();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t Rng::uniform_index(std::uint64_t n) noexcept {
    // Lemire's multiply-shift with rejection; unbiased.
    std::uint64_t x = next_u64();
    __uint128_t m = static_cast<__uint128_t>(x) * n;
    auto low = static_cast<std::uint64_t>(m);
    if (low < n) {
        const std::uint64_t threshold = (0 - n) % n;
        while (low < threshold) {
            x = next_u64();
            m = static_cast<__uint128_t>(x) * n;
            low = static_cast<std::uint64_t>(m);
        }
    }
    return static_cast<std::uint64_t>(m >> 64);
}

Rng Rng::fork(std::uint64_t stream) const noexcept {
    return Rng(splitmix(seed_ ^ splitmix(stream + 0x632BE59BD9B4E019ULL)), 0);
}

std::vector<double> random_unit_vector(Rng& rng, std::size_t dim) {
    std::vector<double> v(dim);
    double n2 = 0.0;
    while (n2 < 1e-24) {
        for (auto& x : v) x = rng.normal();
        n2 = squared_norm(v);
    }
    const double inv = 1.0 / std::sqrt(n2);
    for (auto& x : v) x *= inv;
    return v;
}

bool AdamState::operator==(const AdamState& other) const {
    return first_moment == other.first_moment && second_moment == other.second_moment &&
           step == other.step && params.learning_rate == other.params.learning_rate &&
           params.beta1 == other.params.beta1 && params.beta2 == other.params.beta2 &&
           params.epsilon == other.params.epsilon;
}

void adam_step(DenseMatrix& param, const DenseMatrix& grad, AdamState& state,
               std::string_view param_name) {
    if (param.rows() != grad.rows() || param.cols() != grad.cols() ||
        state.first_moment.rows() != param.rows() || state.first_moment.cols() != param.cols()) {
        throw DimensionError("adam_step: shape mismatch for " + std::string(param_name));
    }
    const auto g = grad.values();
    for (std::size_t i = 0; i < g.size(); ++i) {
        if (!std::isfinite(g[i])) {
            throw NumericError("adam_step: non-finite gradient in " + std::string(param_name) +
                               " at flat index " + std::to_string(i));
        }
    }
    const auto& p = state.params;
    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(p.beta1, t);
    const double bc2 = 1.0 - std::pow(p.beta2, t);
    auto m = state.first_moment.values();
    auto v = state.second_moment.values();
    auto w = param.values();
    for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = p.beta1 * m[i] + (1.0 - p.beta1) * g[i];
        v[i] = p.beta2 * v[i] + (1.0 - p.beta2) * g[i] * g[i];
        const double m_hat = m[i] / bc1;
        const double v_hat = v[i] / bc2;
        w[i] -= p.learning_rate * m_hat / (std::sqrt(v_hat) + p.epsilon);
    }
}

std::size_t unit_normalize_columns(DenseMatrix& m, Rng& rng) {
    std::size_t reseeded = 0;
    for (std::size_t c = 0; c < m.cols(); ++c) {
        const double n = column_norm(m, c);
        if (!(n > 1e-300) || !std::isfinite(n)) {
            const auto v = random_unit_vector(rng, m.rows());
            for (std::size_t r = 0; r < m.rows(); ++r) m(r, c) = v[r];
            ++reseeded;
            log::warn("unit_normalize_columns: column " + std::to_string(c) +
                      " was degenerate, re-seeded with a random unit vector");
            continue;
        }
        const double inv = 1.0 / n;
        for (std::size_t r = 0; r < m.rows(); ++r) m(r, c) *= inv;
    }
    return reseeded;
}

} // namespace treesae
