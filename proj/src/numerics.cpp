#include "seqfuse/numerics.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <string>

#include "seqfuse/errors.hpp"

namespace seqfuse {

namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

constexpr std::uint64_t mix64(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ull;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBull;
    z ^= z >> 31;
    return z;
}

}  // namespace

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m.at(i, i) = 1.0;
    return m;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows) {
        throw std::invalid_argument("matmul: dimension mismatch " + std::to_string(a.rows) + "x" +
                                    std::to_string(a.cols) + " * " + std::to_string(b.rows) + "x" +
                                    std::to_string(b.cols));
    }
    Matrix c(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t j = 0; j < b.cols; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < a.cols; ++k) {
                acc += a.at(i, k) * b.at(k, j);
            }
            c.at(i, j) = acc;
        }
    }
    return c;
}

void matvec(const Matrix& w, std::span<const double> x, std::span<double> y) {
    if (x.size() != w.cols || y.size() != w.rows) {
        throw std::invalid_argument("matvec: dimension mismatch");
    }
    const double* wd = w.data.data();
    for (std::size_t r = 0; r < w.rows; ++r) {
        const double* row = wd + r * w.cols;
        double acc = 0.0;
        for (std::size_t c = 0; c < w.cols; ++c) acc += row[c] * x[c];
        y[r] = acc;
    }
}

void matvec_transpose_add(const Matrix& w, std::span<const double> y, std::span<double> x) {
    if (y.size() != w.rows || x.size() != w.cols) {
        throw std::invalid_argument("matvec_transpose_add: dimension mismatch");
    }
    const double* wd = w.data.data();
    for (std::size_t r = 0; r < w.rows; ++r) {
        const double yr = y[r];
        const double* row = wd + r * w.cols;
        for (std::size_t c = 0; c < w.cols; ++c) x[c] += row[c] * yr;
    }
}

void outer_add(std::span<const double> a, std::span<const double> b, Matrix& acc) {
    if (a.size() != acc.rows || b.size() != acc.cols) {
        throw std::invalid_argument("outer_add: dimension mismatch");
    }
    double* ad = acc.data.data();
    for (std::size_t r = 0; r < acc.rows; ++r) {
        const double ar = a[r];
        double* row = ad + r * acc.cols;
        for (std::size_t c = 0; c < acc.cols; ++c) row[c] += ar * b[c];
    }
}

std::vector<double> softmax(std::span<const double> z) {
    if (z.empty()) throw std::invalid_argument("softmax: empty input");
    double m = z[0];
    for (double v : z) {
        if (!std::isfinite(v)) throw std::invalid_argument("softmax: non-finite input");
        m = std::max(m, v);
    }
    std::vector<double> out(z.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        out[i] = std::exp(z[i] - m);
        sum += out[i];
    }
    for (double& v : out) v /= sum;
    return out;
}

double cross_entropy(std::span<const double> probs, std::size_t label) {
    if (label >= probs.size()) {
        throw std::invalid_argument("cross_entropy: label " + std::to_string(label) +
                                    " out of range for " + std::to_string(probs.size()) +
                                    " classes");
    }
    return -std::log(std::max(probs[label], 1e-12));
}

std::size_t argmax(std::span<const double> v) {
    if (v.empty()) throw std::invalid_argument("argmax: empty input");
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i) {
        if (v[i] > v[best]) best = i;
    }
    return best;
}

std::uint64_t Rng::next_u64() { return mix64(seed_ + (++counter_) * kGolden); }

double Rng::next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

double Rng::normal(double mean, double stddev) {
    const double u1 = 1.0 - next_double();  // (0, 1]
    const double u2 = next_double();
    const double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    return mean + stddev * z;
}

std::uint64_t Rng::next_below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("next_below: n must be positive");
    const std::uint64_t mask = std::bit_ceil(n) - 1;
    for (;;) {
        const std::uint64_t x = next_u64() & mask;
        if (x < n) return x;
    }
}

std::uint64_t Rng::poisson(double mu) {
    if (mu < 0.0 || !std::isfinite(mu)) throw std::invalid_argument("poisson: mu must be finite and >= 0");
    double t = 0.0;
    std::uint64_t k = 0;
    for (;;) {
        t += -std::log(1.0 - next_double());
        if (t > mu) return k;
        ++k;
    }
}

std::size_t Rng::categorical(std::span<const double> weights) {
    if (weights.empty()) throw std::invalid_argument("categorical: empty weights");
    double total = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0)) throw std::invalid_argument("categorical: negative or NaN weight");
        total += w;
    }
    if (total <= 0.0) throw std::invalid_argument("categorical: zero total weight");
    double u = next_double() * total;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        u -= weights[i];
        if (u < 0.0) return i;
    }
    return weights.size() - 1;
}

Rng Rng::stream(std::string_view label) const { return Rng(mix64(seed_ ^ fnv1a64(label))); }

Rng Rng::stream(std::string_view label, std::uint64_t index) const {
    return Rng(mix64((seed_ ^ fnv1a64(label)) + (index + 1) * kGolden));
}

namespace {

// Cyclic Jacobi sweeps on a symmetric matrix. Returns eigenvalues in
// `evals` and eigenvectors as the columns of `vecs`. Deterministic:
// fixed (p, q) visiting order, fixed convergence test.
void jacobi_eigen_symmetric(Matrix a, std::vector<double>& evals, Matrix& vecs) {
    const std::size_t d = a.rows;
    vecs = Matrix::identity(d);
    if (d == 0) {
        evals.clear();
        return;
    }

    double fro2 = 0.0;
    for (double v : a.data) fro2 += v * v;
    const double tol2 = 1e-28 * std::max(fro2, 1e-300);

    const int max_sweeps = 100;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double off2 = 0.0;
        for (std::size_t p = 0; p + 1 < d; ++p)
            for (std::size_t q = p + 1; q < d; ++q) off2 += 2.0 * a.at(p, q) * a.at(p, q);
        if (off2 <= tol2) break;

        for (std::size_t p = 0; p + 1 < d; ++p) {
            for (std::size_t q = p + 1; q < d; ++q) {
                const double apq = a.at(p, q);
                if (apq == 0.0) continue;
                const double app = a.at(p, p);
                const double aqq = a.at(q, q);
                const double theta = (aqq - app) / (2.0 * apq);
                double t;
                if (std::abs(theta) > 1e150) {
                    t = 1.0 / (2.0 * theta);  // avoid theta^2 overflow
                } else {
                    t = 1.0 / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                    if (theta < 0.0) t = -t;
                }
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                const double tau = s / (1.0 + c);

                a.at(p, p) = app - t * apq;
                a.at(q, q) = aqq + t * apq;
                a.at(p, q) = 0.0;
                a.at(q, p) = 0.0;
                for (std::size_t i = 0; i < d; ++i) {
                    if (i == p || i == q) continue;
                    const double aip = a.at(i, p);
                    const double aiq = a.at(i, q);
                    a.at(i, p) = aip - s * (aiq + tau * aip);
                    a.at(i, q) = aiq + s * (aip - tau * aiq);
                    a.at(p, i) = a.at(i, p);
                    a.at(q, i) = a.at(i, q);
                }
                for (std::size_t i = 0; i < d; ++i) {
                    const double vip = vecs.at(i, p);
                    const double viq = vecs.at(i, q);
                    vecs.at(i, p) = vip - s * (viq + tau * vip);
                    vecs.at(i, q) = viq + s * (vip - tau * viq);
                }
            }
        }
    }

    evals.resize(d);
    for (std::size_t i = 0; i < d; ++i) evals[i] = a.at(i, i);
}

}  // namespace

PcaModel pca_fit(const Matrix& x, std::size_t k) {
    const std::size_t n = x.rows;
    const std::size_t d = x.cols;
    if (n < 2) throw std::invalid_argument("pca_fit: need at least 2 rows");

    PcaModel model;
    model.mean.assign(d, 0.0);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) model.mean[c] += x.at(r, c);
    for (double& m : model.mean) m /= static_cast<double>(n);

    Matrix centered(n, d);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) centered.at(r, c) = x.at(r, c) - model.mean[c];

    // Upper-triangle Gram accumulation, summed over rows in ascending order.
    Matrix cov(d, d);
    for (std::size_t r = 0; r < n; ++r) {
        const double* row = centered.data.data() + r * d;
        for (std::size_t i = 0; i < d; ++i) {
            const double ri = row[i];
            if (ri == 0.0) continue;
            double* ci = cov.data.data() + i * d;
            for (std::size_t j = i; j < d; ++j) ci[j] += ri * row[j];
        }
    }
    const double inv = 1.0 / static_cast<double>(n - 1);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = i; j < d; ++j) {
            cov.at(i, j) *= inv;
            cov.at(j, i) = cov.at(i, j);
        }

    std::vector<double> evals;
    Matrix vecs;
    jacobi_eigen_symmetric(std::move(cov), evals, vecs);

    std::vector<std::size_t> order(d);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return evals[a] > evals[b]; });

    const std::size_t k_eff = std::min({k, n - 1, d});
    model.components = Matrix(k_eff, d);
    model.explained_variance.resize(k_eff);
    for (std::size_t r = 0; r < k_eff; ++r) {
        const std::size_t src = order[r];
        model.explained_variance[r] = evals[src];
        for (std::size_t c = 0; c < d; ++c) model.components.at(r, c) = vecs.at(c, src);
        // Sign rule: largest-magnitude entry positive, lowest index wins ties.
        std::size_t pivot = 0;
        for (std::size_t c = 1; c < d; ++c) {
            if (std::abs(model.components.at(r, c)) > std::abs(model.components.at(r, pivot)))
                pivot = c;
        }
        if (model.components.at(r, pivot) < 0.0) {
            for (std::size_t c = 0; c < d; ++c) model.components.at(r, c) = -model.components.at(r, c);
        }
    }
    return model;
}

Matrix pca_transform(const PcaModel& m, const Matrix& x) {
    if (x.cols != m.dim()) {
        throw std::invalid_argument("pca_transform: expected " + std::to_string(m.dim()) +
                                    " columns, got " + std::to_string(x.cols));
    }
    const std::size_t k = m.component_count();
    Matrix out(x.rows, k);
    for (std::size_t r = 0; r < x.rows; ++r) pca_transform_row(m, x.row(r), out.row(r));
    return out;
}

void pca_transform_row(const PcaModel& m, std::span<const double> row, std::span<double> out) {
    const std::size_t d = m.dim();
    const std::size_t k = m.component_count();
    if (row.size() != d || out.size() != k) {
        throw std::invalid_argument("pca_transform_row: dimension mismatch");
    }
    for (std::size_t j = 0; j < k; ++j) {
        const double* comp = m.components.data.data() + j * d;
        double acc = 0.0;
        for (std::size_t c = 0; c < d; ++c) acc += (row[c] - m.mean[c]) * comp[c];
        out[j] = acc;
    }
}

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (char ch : bytes) {
        h ^= static_cast<unsigned char>(ch);
        h *= 0x100000001B3ull;
    }
    return h;
}

std::string double_repr(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

void ensure_finite(std::span<const double> values, const char* what) {
    for (double v : values) {
        if (!std::isfinite(v)) {
            throw DivergenceError(std::string(what) + ": non-finite value encountered");
        }
    }
}

}  // namespace seqfuse
