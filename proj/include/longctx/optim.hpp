#pragma once

#include <cmath>

#include <Eigen/Dense>

namespace longctx {

// Adam with bias correction, used by the training loops. State is owned by
// the caller so parameter structs stay plain values.
struct AdamState {
    Eigen::VectorXd m, v;
    long t = 0;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    explicit AdamState(Eigen::Index n)
        : m(Eigen::VectorXd::Zero(n)), v(Eigen::VectorXd::Zero(n)) {}

    void step(Eigen::VectorXd& theta, const Eigen::VectorXd& grad, double lr) {
        ++t;
        m = beta1 * m + (1.0 - beta1) * grad;
        v = beta2 * v + (1.0 - beta2) * grad.cwiseProduct(grad);
        double c1 = 1.0 - std::pow(beta1, double(t));
        double c2 = 1.0 - std::pow(beta2, double(t));
        theta -= (lr / c1) * m.cwiseQuotient(((v / c2).cwiseSqrt().array() + eps).matrix());
    }
};

// Scales grad in place so its norm does not exceed max_norm; returns the
// pre-clip norm.
inline double clip_grad_norm(Eigen::VectorXd& grad, double max_norm) {
    double n = grad.norm();
    if (n > max_norm && n > 0.0) grad *= max_norm / n;
    return n;
}

}  // namespace longctx
