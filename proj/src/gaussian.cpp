#include "longctx/gaussian.hpp"

#include <cmath>
#include <stdexcept>

namespace longctx {

GaussianDist GaussianDist::isotropic(const Eigen::VectorXd& mean, double var) {
    GaussianDist g;
    g.mean = mean;
    g.cov = var * Eigen::MatrixXd::Identity(mean.size(), mean.size());
    return g;
}

void validate(const GaussianDist& g) {
    if (g.cov.rows() != g.mean.size() || g.cov.cols() != g.mean.size())
        throw std::invalid_argument("GaussianDist: cov shape does not match mean");
    if (!g.cov.isApprox(g.cov.transpose(), 1e-10))
        throw std::invalid_argument("GaussianDist: cov not symmetric");
    Eigen::LLT<Eigen::MatrixXd> llt(g.cov);
    if (llt.info() != Eigen::Success)
        throw std::invalid_argument("GaussianDist: cov not positive definite");
}

double log_pdf(const GaussianDist& g, const Eigen::VectorXd& x) {
    Eigen::LLT<Eigen::MatrixXd> llt(g.cov);
    if (llt.info() != Eigen::Success) throw std::invalid_argument("log_pdf: singular covariance");
    Eigen::VectorXd r = x - g.mean;
    double quad = r.dot(llt.solve(r));
    double logdet = 0.0;
    const auto& L = llt.matrixL();
    for (Eigen::Index i = 0; i < g.cov.rows(); ++i) logdet += 2.0 * std::log(L(i, i));
    double d = double(g.mean.size());
    return -0.5 * (quad + logdet + d * std::log(2.0 * M_PI));
}

GaussianDist diffused(const GaussianDist& clean, int tidx, const DiffusionSchedule& sched) {
    double a = sched.alpha_at(tidx);
    double s = sched.sigma_at(tidx);
    GaussianDist g;
    g.mean = a * clean.mean;
    g.cov = a * a * clean.cov;
    g.cov.diagonal().array() += s * s;
    return g;
}

Eigen::VectorXd gaussian_marginal_score(const Eigen::VectorXd& x_t, int tidx,
                                        const GaussianDist& clean, const DiffusionSchedule& sched) {
    GaussianDist g = diffused(clean, tidx, sched);
    Eigen::LLT<Eigen::MatrixXd> llt(g.cov);
    if (llt.info() != Eigen::Success)
        throw std::runtime_error("gaussian_marginal_score: singular diffused covariance");
    return -llt.solve(x_t - g.mean);
}

KlEstimate kl_gaussian(const GaussianDist& p, const GaussianDist& q) {
    if (p.dim() != q.dim()) throw std::invalid_argument("kl_gaussian: dimension mismatch");
    Eigen::LLT<Eigen::MatrixXd> lq(q.cov);
    if (lq.info() != Eigen::Success) throw std::invalid_argument("kl_gaussian: q covariance singular");
    Eigen::LLT<Eigen::MatrixXd> lp(p.cov);
    if (lp.info() != Eigen::Success) throw std::invalid_argument("kl_gaussian: p covariance singular");

    double d = double(p.dim());
    double tr = lq.solve(p.cov).trace();
    Eigen::VectorXd dm = q.mean - p.mean;
    double quad = dm.dot(lq.solve(dm));
    double logdet_q = 0.0, logdet_p = 0.0;
    for (Eigen::Index i = 0; i < p.dim(); ++i) {
        logdet_q += 2.0 * std::log(lq.matrixL()(i, i));
        logdet_p += 2.0 * std::log(lp.matrixL()(i, i));
    }
    KlEstimate e;
    e.value = 0.5 * (tr + quad - d + logdet_q - logdet_p);
    e.std_error = 0.0;
    e.method = KlMethod::ClosedForm;
    return e;
}

}  // namespace longctx
