#pragma once

#include <Eigen/Dense>

#include "longctx/schedule.hpp"

namespace longctx {

struct GaussianDist {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;  // symmetric positive definite

    static GaussianDist isotropic(const Eigen::VectorXd& mean, double var);
    Eigen::Index dim() const { return mean.size(); }
};

// Throws std::invalid_argument if cov is not symmetric positive definite.
void validate(const GaussianDist& g);

double log_pdf(const GaussianDist& g, const Eigen::VectorXd& x);

// Distribution of alpha_t * X + sigma_t * eps for X ~ clean:
// N(alpha_t mean, alpha_t^2 cov + sigma_t^2 I).
GaussianDist diffused(const GaussianDist& clean, int tidx, const DiffusionSchedule& sched);

// Exact score (grad_x log density) of the diffused marginal at x_t.
Eigen::VectorXd gaussian_marginal_score(const Eigen::VectorXd& x_t, int tidx,
                                        const GaussianDist& clean, const DiffusionSchedule& sched);

enum class KlMethod { ClosedForm, MonteCarlo };

struct KlEstimate {
    double value = 0.0;      // nats
    double std_error = 0.0;  // 0 for closed form
    KlMethod method = KlMethod::ClosedForm;
};

// Closed-form KL(p || q) for Gaussians of equal dimension.
KlEstimate kl_gaussian(const GaussianDist& p, const GaussianDist& q);

}  // namespace longctx
