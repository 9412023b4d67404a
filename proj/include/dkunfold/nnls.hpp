#pragma once

#include "dkunfold/error.hpp"

#include <Eigen/Dense>

#include <limits>
#include <vector>

namespace dku {

struct NnlsResult {
    Eigen::VectorXd x;
    double residual_norm = 0.0;
    int iterations = 0;
};

/// Lawson-Hanson active set NNLS on the normal equations: minimises
/// x'Gx/2 - c'x subject to x >= 0, i.e. ||A x - b|| with G = A'A, c = A'b.
/// Pivoting is deterministic: the entering variable is the largest dual
/// component, ties resolved to the lowest column index. residual_norm is
/// left at zero.
inline NnlsResult nnls_gram(const Eigen::MatrixXd& gram, const Eigen::VectorXd& atb, double tol,
                            int max_iterations = 0)
{
    require(gram.rows() == gram.cols() && gram.rows() == atb.size(), ErrorCode::invalid_argument,
            "nnls: dimension mismatch");
    const Eigen::Index n = gram.cols();
    if (max_iterations <= 0)
        max_iterations = static_cast<int>(3 * n + 10);

    NnlsResult res;
    res.x = Eigen::VectorXd::Zero(n);
    std::vector<bool> passive(static_cast<std::size_t>(n), false);

    auto solve_passive = [&](Eigen::VectorXd& z) {
        std::vector<Eigen::Index> idx;
        for (Eigen::Index j = 0; j < n; ++j)
            if (passive[static_cast<std::size_t>(j)])
                idx.push_back(j);
        const auto m = static_cast<Eigen::Index>(idx.size());
        Eigen::MatrixXd gp(m, m);
        Eigen::VectorXd cp(m);
        for (Eigen::Index r = 0; r < m; ++r) {
            cp(r) = atb(idx[static_cast<std::size_t>(r)]);
            for (Eigen::Index c = 0; c < m; ++c)
                gp(r, c) = gram(idx[static_cast<std::size_t>(r)], idx[static_cast<std::size_t>(c)]);
        }
        const Eigen::VectorXd zp = gp.colPivHouseholderQr().solve(cp);
        z.setZero(n);
        for (std::size_t k = 0; k < idx.size(); ++k)
            z(idx[k]) = zp(static_cast<Eigen::Index>(k));
    };

    Eigen::VectorXd w = atb;
    Eigen::VectorXd z(n);
    while (res.iterations < max_iterations) {
        Eigen::Index enter = -1;
        double best = tol;
        for (Eigen::Index j = 0; j < n; ++j)
            if (!passive[static_cast<std::size_t>(j)] && w(j) > best) {
                best = w(j);
                enter = j;
            }
        if (enter < 0)
            break;
        passive[static_cast<std::size_t>(enter)] = true;
        ++res.iterations;

        for (;;) {
            solve_passive(z);
            double alpha = std::numeric_limits<double>::infinity();
            for (Eigen::Index j = 0; j < n; ++j)
                if (passive[static_cast<std::size_t>(j)] && z(j) <= 0.0) {
                    const double denom = res.x(j) - z(j);
                    if (denom > 0.0)
                        alpha = std::min(alpha, res.x(j) / denom);
                    else
                        alpha = 0.0;
                }
            if (!std::isfinite(alpha)) {
                res.x = z;
                break;
            }
            res.x += alpha * (z - res.x);
            for (Eigen::Index j = 0; j < n; ++j)
                if (passive[static_cast<std::size_t>(j)] && res.x(j) <= tol) {
                    passive[static_cast<std::size_t>(j)] = false;
                    res.x(j) = 0.0;
                }
        }
        w = atb - gram * res.x;
    }
    for (Eigen::Index j = 0; j < n; ++j)
        res.x(j) = std::max(res.x(j), 0.0);
    return res;
}

inline double nnls_tolerance(double a_norm, double b_norm) { return 1e-12 * std::max(1.0, a_norm * b_norm); }

/// min ||A x - b|| subject to x >= 0.
inline NnlsResult nnls(const Eigen::MatrixXd& a, const Eigen::VectorXd& b, int max_iterations = 0)
{
    require(a.rows() == b.size(), ErrorCode::invalid_argument, "nnls: dimension mismatch");
    auto res = nnls_gram(a.transpose() * a, a.transpose() * b, nnls_tolerance(a.norm(), b.norm()), max_iterations);
    res.residual_norm = (a * res.x - b).norm();
    return res;
}

} // namespace dku
