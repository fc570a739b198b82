#pragma once

// Reference implementations the tests check the library against. Everything
// here is written the slow, obvious way and shares no code with the library.

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "seqfuse/model.hpp"
#include "seqfuse/numerics.hpp"
#include "seqfuse/training.hpp"

namespace testoracle {

inline seqfuse::Matrix naive_matmul(const seqfuse::Matrix& a, const seqfuse::Matrix& b) {
    seqfuse::Matrix c(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t j = 0; j < b.cols; ++j) {
            double sum = 0.0;
            for (std::size_t k = 0; k < a.cols; ++k) sum += a.at(i, k) * b.at(k, j);
            c.at(i, j) = sum;
        }
    }
    return c;
}

struct PowerPca {
    std::vector<std::vector<double>> components;  // unit eigenvectors, variance-descending
    std::vector<double> eigenvalues;
    std::vector<double> mean;
};

/// Top-k principal components by power iteration with deflation on the
/// sample covariance (divides by n - 1). Assumes distinct eigenvalues.
inline PowerPca power_iteration_pca(const seqfuse::Matrix& data, std::size_t k) {
    const std::size_t n = data.rows;
    const std::size_t d = data.cols;
    if (n < 2) throw std::invalid_argument("power_iteration_pca: need at least two rows");

    PowerPca out;
    out.mean.assign(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) out.mean[j] += data.at(i, j);
    }
    for (double& m : out.mean) m /= static_cast<double>(n);

    std::vector<std::vector<double>> cov(d, std::vector<double>(d, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t a = 0; a < d; ++a) {
            const double da = data.at(i, a) - out.mean[a];
            for (std::size_t b = 0; b < d; ++b) {
                cov[a][b] += da * (data.at(i, b) - out.mean[b]);
            }
        }
    }
    for (auto& row : cov) {
        for (double& v : row) v /= static_cast<double>(n - 1);
    }

    for (std::size_t comp = 0; comp < k; ++comp) {
        std::vector<double> v(d, 0.0);
        for (std::size_t j = 0; j < d; ++j) v[j] = 1.0 / std::sqrt(1.0 + static_cast<double>(j));
        double eigen = 0.0;
        for (int iter = 0; iter < 20000; ++iter) {
            std::vector<double> w(d, 0.0);
            for (std::size_t a = 0; a < d; ++a) {
                for (std::size_t b = 0; b < d; ++b) w[a] += cov[a][b] * v[b];
            }
            double norm = 0.0;
            for (double x : w) norm += x * x;
            norm = std::sqrt(norm);
            if (norm == 0.0) break;
            for (double& x : w) x /= norm;
            double delta = 0.0;
            for (std::size_t j = 0; j < d; ++j) delta = std::max(delta, std::abs(w[j] - v[j]));
            v = w;
            eigen = norm;
            if (delta < 1e-15 && iter > 10) break;
        }
        out.components.push_back(v);
        out.eigenvalues.push_back(eigen);
        for (std::size_t a = 0; a < d; ++a) {
            for (std::size_t b = 0; b < d; ++b) cov[a][b] -= eigen * v[a] * v[b];
        }
    }
    return out;
}

/// Scalar-by-scalar Adam recurrence, the textbook form.
struct AdamRef {
    std::vector<double> m, v;
    std::uint64_t t = 0;

    explicit AdamRef(std::size_t n) : m(n, 0.0), v(n, 0.0) {}

    void step(std::span<double> w, std::span<const double> g, double lr,
              const seqfuse::AdamConfig& cfg) {
        ++t;
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            const double mhat = m[i] / (1.0 - std::pow(cfg.beta1, static_cast<double>(t)));
            const double vhat = v[i] / (1.0 - std::pow(cfg.beta2, static_cast<double>(t)));
            w[i] -= lr * mhat / (std::sqrt(vhat) + cfg.epsilon);
        }
    }
};

/// Total multi-task loss over a batch, via the library's forward only.
inline double batch_loss(const seqfuse::UserModel& model,
                         std::span<const seqfuse::EncodedRecord> records,
                         std::span<const double> head_weights) {
    double total = 0.0;
    for (const auto& rec : records) {
        const seqfuse::ForwardTrace trace = seqfuse::forward(model, rec);
        std::vector<std::uint32_t> labels;
        for (std::size_t idx : model.head_target_indices()) labels.push_back(rec.targets[idx]);
        total += seqfuse::multitask_loss(trace.probs, labels, head_weights);
    }
    return total;
}

/// Two-sided relative error with an absolute floor; finite differences
/// cannot certify agreement below their own noise scale.
inline double rel_error(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-4});
}

/// Max relative error between the analytic batch gradient and central
/// finite differences over every parameter of the model.
inline double max_grad_rel_error(seqfuse::UserModel& model,
                                 std::span<const seqfuse::EncodedRecord> records,
                                 std::span<const double> head_weights, double step = 1e-5) {
    seqfuse::Gradients analytic = seqfuse::Gradients::zeros_like(model);
    for (const auto& rec : records) {
        const seqfuse::ForwardTrace trace = seqfuse::forward(model, rec);
        std::vector<std::uint32_t> labels;
        for (std::size_t idx : model.head_target_indices()) labels.push_back(rec.targets[idx]);
        seqfuse::backward_accumulate(model, trace, labels, head_weights, analytic);
    }

    double worst = 0.0;
    auto weights = seqfuse::weight_spans(model);
    auto grads = seqfuse::weight_spans(analytic);
    for (std::size_t arr = 0; arr < weights.size(); ++arr) {
        for (std::size_t i = 0; i < weights[arr].size(); ++i) {
            double& w = weights[arr][i];
            const double saved = w;
            w = saved + step;
            const double plus = batch_loss(model, records, head_weights);
            w = saved - step;
            const double minus = batch_loss(model, records, head_weights);
            w = saved;
            const double fd = (plus - minus) / (2.0 * step);
            worst = std::max(worst, rel_error(grads[arr][i], fd));
        }
    }
    return worst;
}

}  // namespace testoracle
