#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "diatom/rng.hpp"

namespace diatom::nn {

using Eigen::MatrixXd;
using Eigen::RowVectorXd;
using Eigen::VectorXd;

inline constexpr double kLogClamp = 1e-10;

inline double softplus(double x) {
    // log(1 + e^x), stable for both tails
    if (x > 30.0) return x;
    if (x < -30.0) return std::exp(x);
    return std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
    if (x >= 0.0) {
        const double z = std::exp(-x);
        return 1.0 / (1.0 + z);
    }
    const double z = std::exp(x);
    return z / (1.0 + z);
}

inline MatrixXd softplus(const MatrixXd& x) {
    return x.unaryExpr([](double v) { return softplus(v); });
}

inline MatrixXd sigmoid(const MatrixXd& x) {
    return x.unaryExpr([](double v) { return sigmoid(v); });
}

// Row-wise softmax with max subtraction.
inline MatrixXd softmax_rows(const MatrixXd& x) {
    MatrixXd out(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const double m = x.row(i).maxCoeff();
        RowVectorXd e = (x.row(i).array() - m).exp();
        out.row(i) = e / e.sum();
    }
    return out;
}

// d/dpre of y = softmax(pre) given dL/dy:  dpre = y .* (dy - <dy, y>)
inline MatrixXd softmax_backward(const MatrixXd& y, const MatrixXd& dy) {
    MatrixXd dpre(y.rows(), y.cols());
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
        const double dot = y.row(i).dot(dy.row(i));
        dpre.row(i) = (y.row(i).array() * (dy.row(i).array() - dot)).matrix();
    }
    return dpre;
}

// -sum_j t_j * log(clamp(p_j)) for one row; derivative handled at call sites.
inline double clamped_nll(const RowVectorXd& target, const RowVectorXd& p) {
    double loss = 0.0;
    for (Eigen::Index j = 0; j < p.size(); ++j) {
        if (target(j) != 0.0) loss -= target(j) * std::log(std::max(p(j), kLogClamp));
    }
    return loss;
}

// dL/dp for the clamped NLL above; zero where the clamp is active.
inline RowVectorXd clamped_nll_grad(const RowVectorXd& target, const RowVectorXd& p) {
    RowVectorXd dp = RowVectorXd::Zero(p.size());
    for (Eigen::Index j = 0; j < p.size(); ++j) {
        if (target(j) != 0.0 && p(j) > kLogClamp) dp(j) = -target(j) / p(j);
    }
    return dp;
}

// Glorot uniform over fan_in/fan_out of the matrix itself.
inline void xavier_init(MatrixXd& w, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
    for (Eigen::Index i = 0; i < w.rows(); ++i)
        for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = rng.uniform(-bound, bound);
}

// Sparse Gaussian init: a fixed number of nonzeros per column, rest zero.
inline void sparse_init(MatrixXd& w, Rng& rng, int nonzeros_per_col, double stddev) {
    w.setZero();
    const int n = static_cast<int>(w.rows());
    const int k = std::min(nonzeros_per_col, n);
    std::vector<int> idx(n);
    for (int i = 0; i < n; ++i) idx[i] = i;
    for (Eigen::Index c = 0; c < w.cols(); ++c) {
        rng.shuffle(idx);
        for (int i = 0; i < k; ++i) w(idx[i], c) = rng.normal(0.0, stddev);
    }
}

// Batch normalization over the batch dimension (rows), no learnable affine.
// Running statistics are owned by the caller (1 x dim row vectors).
inline constexpr double kBnEps = 1e-5;
inline constexpr double kBnMomentum = 0.9;

struct BatchNormCache {
    MatrixXd xhat;
    RowVectorXd inv_std;
};

inline MatrixXd batchnorm_train(const MatrixXd& x, RowVectorXd& running_mean,
                                RowVectorXd& running_var, bool update_stats,
                                BatchNormCache& cache) {
    const double b = static_cast<double>(x.rows());
    RowVectorXd mean = x.colwise().mean();
    MatrixXd centered = x.rowwise() - mean;
    RowVectorXd var = (centered.array().square().colwise().sum() / b).matrix();  // biased
    cache.inv_std = (var.array() + kBnEps).rsqrt();
    cache.xhat = (centered.array().rowwise() * cache.inv_std.array()).matrix();
    if (update_stats) {
        running_mean = kBnMomentum * running_mean + (1.0 - kBnMomentum) * mean;
        running_var = kBnMomentum * running_var + (1.0 - kBnMomentum) * var;
    }
    return cache.xhat;
}

inline MatrixXd batchnorm_eval(const MatrixXd& x, const RowVectorXd& running_mean,
                               const RowVectorXd& running_var) {
    RowVectorXd inv = (running_var.array() + kBnEps).rsqrt();
    MatrixXd out = x.rowwise() - running_mean;
    return (out.array().rowwise() * inv.array()).matrix();
}

// dx for training-mode batchnorm given dL/dy and the forward cache.
inline MatrixXd batchnorm_backward(const BatchNormCache& cache, const MatrixXd& dy) {
    const double b = static_cast<double>(dy.rows());
    RowVectorXd mean_dy = dy.colwise().sum() / b;
    RowVectorXd mean_dy_xhat = ((dy.array() * cache.xhat.array()).colwise().sum() / b).matrix();
    MatrixXd dx = dy.rowwise() - mean_dy;
    dx -= (cache.xhat.array().rowwise() * mean_dy_xhat.array()).matrix();
    return (dx.array().rowwise() * cache.inv_std.array()).matrix();
}

// dx for eval-mode batchnorm (columns scaled by 1/sqrt(var + eps)).
inline MatrixXd batchnorm_eval_backward(const MatrixXd& dy, const RowVectorXd& running_var) {
    RowVectorXd inv = (running_var.array() + kBnEps).rsqrt();
    return (dy.array().rowwise() * inv.array()).matrix();
}

}  // namespace diatom::nn
