#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace seqfuse {

/// Dense row-major matrix of 64-bit floats.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;  // length rows*cols, row-major

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

    std::size_t size() const { return data.size(); }

    static Matrix identity(std::size_t n);

    bool operator==(const Matrix& other) const = default;
};

/// Standard product. Summation over the inner index in ascending order,
/// so results are bit-reproducible.
Matrix matmul(const Matrix& a, const Matrix& b);

/// y = W x. Requires x.size() == w.cols and y.size() == w.rows.
void matvec(const Matrix& w, std::span<const double> x, std::span<double> y);

/// x += W^T y (gradient pull-back through a dense layer).
void matvec_transpose_add(const Matrix& w, std::span<const double> y, std::span<double> x);

/// acc += a b^T with a.size() == acc.rows, b.size() == acc.cols.
void outer_add(std::span<const double> a, std::span<const double> b, Matrix& acc);

/// Numerically stable softmax (max subtraction). Throws on empty input.
std::vector<double> softmax(std::span<const double> z);

/// -ln(probs[label]) with the probability clamped below at 1e-12.
double cross_entropy(std::span<const double> probs, std::size_t label);

/// Index of the largest entry; ties resolve to the lowest index.
std::size_t argmax(std::span<const double> v);

/// Deterministic splittable random stream. A stream is identified by its
/// seed; draws are produced by hashing a counter, so identical seeds give
/// identical sequences regardless of platform or call history. Derived
/// streams (`stream`) depend only on the parent seed and the label, never
/// on how many draws the parent has produced.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed) {}

    std::uint64_t next_u64();
    /// Uniform in [0, 1), 53-bit resolution.
    double next_double();
    double uniform(double lo, double hi);
    /// Box-Muller standard normal, scaled.
    double normal(double mean = 0.0, double stddev = 1.0);
    /// Uniform integer in [0, n). Throws on n == 0.
    std::uint64_t next_below(std::uint64_t n);
    /// Poisson draw via exponential inter-arrival times; exact for any mu >= 0.
    std::uint64_t poisson(double mu);
    /// Draw an index from an unnormalized weight vector.
    std::size_t categorical(std::span<const double> weights);

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(next_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    /// Child stream addressed by label alone.
    Rng stream(std::string_view label) const;
    /// Child stream addressed by (label, index), e.g. one per user.
    Rng stream(std::string_view label, std::uint64_t index) const;

    std::uint64_t seed() const { return seed_; }

private:
    std::uint64_t seed_;
    std::uint64_t counter_ = 0;
};

/// Principal components of mean-centered data.
/// `components` rows are orthonormal directions, sorted by explained
/// variance (non-increasing). Sign convention: in each row the entry of
/// largest magnitude is positive; ties resolve to the lowest index.
struct PcaModel {
    std::vector<double> mean;
    Matrix components;                       // k x d
    std::vector<double> explained_variance;  // length k

    std::size_t dim() const { return mean.size(); }
    std::size_t component_count() const { return components.rows; }
};

/// Fit PCA by Jacobi eigendecomposition of the d x d sample covariance.
/// k is clamped to min(N-1, d). Requires N >= 2.
PcaModel pca_fit(const Matrix& x, std::size_t k);

/// (x - mean) projected onto the components: N x k.
Matrix pca_transform(const PcaModel& m, const Matrix& x);

/// Single-row transform into a caller-provided buffer of size k.
void pca_transform_row(const PcaModel& m, std::span<const double> row, std::span<double> out);

/// FNV-1a 64-bit hash, used for content fingerprints and stream labels.
std::uint64_t fnv1a64(std::string_view bytes);

/// Shortest decimal string that parses back to the exact same double.
std::string double_repr(double v);

/// Throws DivergenceError if any entry is NaN or infinite.
void ensure_finite(std::span<const double> values, const char* what);

}  // namespace seqfuse
