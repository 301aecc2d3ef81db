#include "longctx/distill.hpp"

#include <cmath>
#include <string>

namespace longctx {

namespace {

Eigen::VectorXd matching_gradient(Eigen::Index param_count, const DmdBatch& batch,
                                  const ScoreFn& fake, const ScoreFn& teacher, bool contextual) {
    if (batch.sched == nullptr) throw std::invalid_argument("dmd: batch has no schedule");
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(param_count);
    const double inv_n = 1.0 / double(batch.samples.size());
    for (size_t i = 0; i < batch.samples.size(); ++i) {
        const DmdSample& s = batch.samples[i];
        if (contextual && !s.context.has_value())
            throw std::invalid_argument("cdmd_gradient: sample " + std::to_string(i) +
                                        " has no context view");
        if (!contextual && s.context.has_value())
            throw std::invalid_argument("dmd_gradient: sample " + std::to_string(i) +
                                        " carries a context (use cdmd_gradient)");
        Eigen::VectorXd diff = fake(s) - teacher(s);
        if (!diff.allFinite())
            throw NumericError("dmd: non-finite score difference at sample " + std::to_string(i));
        double w = batch.sched->dmd_weight[size_t(s.tidx - 1)];
        double a = batch.sched->alpha_at(s.tidx);
        Eigen::VectorXd cot = (w * a * inv_n) * diff;
        s.vjp(cot, grad);
    }
    if (!grad.allFinite()) throw NumericError("dmd: non-finite gradient");
    return grad;
}

}  // namespace

Eigen::VectorXd dmd_gradient(Eigen::Index param_count, const DmdBatch& batch,
                             const ScoreFn& fake, const ScoreFn& teacher) {
    if (batch.samples.empty()) throw std::invalid_argument("dmd_gradient: empty batch");
    return matching_gradient(param_count, batch, fake, teacher, false);
}

Eigen::VectorXd cdmd_gradient(Eigen::Index param_count, const DmdBatch& batch,
                              const ScoreFn& fake, const ScoreFn& teacher) {
    if (batch.samples.empty()) throw std::invalid_argument("cdmd_gradient: empty batch");
    return matching_gradient(param_count, batch, fake, teacher, true);
}

GaussianDist joint_distribution(const GaussianSeqModel& m) {
    int d = m.dim(), N = m.length();
    GaussianDist g;
    g.mean.resize(Eigen::Index(N) * d);
    g.cov = Eigen::MatrixXd::Zero(Eigen::Index(N) * d, Eigen::Index(N) * d);
    g.mean.head(d) = m.init_mean;
    g.cov.topLeftCorner(d, d) = m.init_cov;
    for (int i = 0; i < m.n_steps(); ++i) {
        const Eigen::MatrixXd& A = m.trans[size_t(i)];
        g.mean.segment(Eigen::Index(i + 1) * d, d) =
            A * g.mean.segment(Eigen::Index(i) * d, d) + m.shift[size_t(i)];
        // cov(X_{i+1}, X_j) = A cov(X_i, X_j) for j <= i
        for (int j = 0; j <= i; ++j) {
            Eigen::MatrixXd c =
                A * g.cov.block(Eigen::Index(i) * d, Eigen::Index(j) * d, d, d);
            g.cov.block(Eigen::Index(i + 1) * d, Eigen::Index(j) * d, d, d) = c;
            g.cov.block(Eigen::Index(j) * d, Eigen::Index(i + 1) * d, d, d) = c.transpose();
        }
        g.cov.block(Eigen::Index(i + 1) * d, Eigen::Index(i + 1) * d, d, d) =
            A * g.cov.block(Eigen::Index(i) * d, Eigen::Index(i) * d, d, d) * A.transpose() +
            m.noise_cov[size_t(i)];
    }
    g.cov = 0.5 * (g.cov + g.cov.transpose()).eval();
    return g;
}

GaussianDist joint_prefix(const GaussianSeqModel& m, int k) {
    GaussianDist full = joint_distribution(m);
    int d = m.dim();
    GaussianDist g;
    g.mean = full.mean.head(Eigen::Index(k) * d);
    g.cov = full.cov.topLeftCorner(Eigen::Index(k) * d, Eigen::Index(k) * d);
    return g;
}

namespace {

// Tail X_{k+1:N} given X_k = x is Gaussian with mean G x + h and covariance S
// (Markov structure). Returns (G, h, S).
struct TailForm {
    Eigen::MatrixXd G;
    Eigen::VectorXd h;
    Eigen::MatrixXd S;
};

TailForm tail_given_prefix(const GaussianSeqModel& m, int k) {
    int d = m.dim(), N = m.length();
    int tail = N - k;
    TailForm f;
    f.G = Eigen::MatrixXd::Zero(Eigen::Index(tail) * d, d);
    f.h = Eigen::VectorXd::Zero(Eigen::Index(tail) * d);
    f.S = Eigen::MatrixXd::Zero(Eigen::Index(tail) * d, Eigen::Index(tail) * d);
    // running affine map X_{k+i} = P_i X_k + q_i + noise with covariance from
    // accumulated process noises
    Eigen::MatrixXd P = Eigen::MatrixXd::Identity(d, d);
    Eigen::VectorXd q = Eigen::VectorXd::Zero(d);
    // noise accumulators: cov between X_{k+i} and X_{k+j} from shared noise
    std::vector<Eigen::MatrixXd> rowP;  // P for each tail step
    std::vector<Eigen::VectorXd> rowq;
    for (int i = 1; i <= tail; ++i) {
        const Eigen::MatrixXd& A = m.trans[size_t(k + i - 2)];
        P = (A * P).eval();
        q = (A * q + m.shift[size_t(k + i - 2)]).eval();
        rowP.push_back(P);
        rowq.push_back(q);
        f.G.middleRows(Eigen::Index(i - 1) * d, d) = P;
        f.h.segment(Eigen::Index(i - 1) * d, d) = q;
    }
    // S(i,j) = sum_{l=1..min(i,j)} Phi_{l->i} noise_l Phi_{l->j}^T where
    // Phi_{l->i} = A_{k+i-1} ... A_{k+l} (products of transitions after step l)
    for (int l = 1; l <= tail; ++l) {
        Eigen::MatrixXd Phi = Eigen::MatrixXd::Identity(d, d);  // Phi_{l->l}
        std::vector<Eigen::MatrixXd> toRow(size_t(tail) + 1);
        toRow[size_t(l)] = Phi;
        for (int i = l + 1; i <= tail; ++i) {
            Phi = (m.trans[size_t(k + i - 2)] * Phi).eval();
            toRow[size_t(i)] = Phi;
        }
        const Eigen::MatrixXd& Q = m.noise_cov[size_t(k + l - 2)];
        for (int i = l; i <= tail; ++i)
            for (int j = l; j <= tail; ++j)
                f.S.block(Eigen::Index(i - 1) * d, Eigen::Index(j - 1) * d, d, d) +=
                    toRow[size_t(i)] * Q * toRow[size_t(j)].transpose();
    }
    f.S = 0.5 * (f.S + f.S.transpose()).eval();
    return f;
}

}  // namespace

KlDecomposition kl_decomposition_check(const GaussianSeqModel& p, const GaussianSeqModel& q,
                                       int split_k) {
    if (p.dim() != q.dim() || p.length() != q.length())
        throw std::invalid_argument("kl_decomposition_check: model shape mismatch");
    if (split_k < 1 || split_k >= p.length())
        throw std::invalid_argument("kl_decomposition_check: split out of range");

    KlDecomposition out;
    out.global = kl_gaussian(joint_distribution(p), joint_distribution(q));
    GaussianDist p_prefix = joint_prefix(p, split_k);
    out.local = kl_gaussian(p_prefix, joint_prefix(q, split_k));

    TailForm fp = tail_given_prefix(p, split_k);
    TailForm fq = tail_given_prefix(q, split_k);
    int d = p.dim();
    Eigen::Index td = fp.S.rows();

    Eigen::LLT<Eigen::MatrixXd> lq(fq.S);
    Eigen::LLT<Eigen::MatrixXd> lp(fp.S);
    if (lq.info() != Eigen::Success || lp.info() != Eigen::Success)
        throw std::invalid_argument("kl_decomposition_check: singular tail covariance");
    double tr = lq.solve(fp.S).trace();
    double logdet_q = 0.0, logdet_p = 0.0;
    for (Eigen::Index i = 0; i < td; ++i) {
        logdet_q += 2.0 * std::log(lq.matrixL()(i, i));
        logdet_p += 2.0 * std::log(lp.matrixL()(i, i));
    }
    // E over X_k ~ p of the mean-shift quadratic
    Eigen::MatrixXd dG = fp.G - fq.G;
    Eigen::VectorXd dh = fp.h - fq.h;
    Eigen::VectorXd mu_k = p_prefix.mean.tail(d);
    Eigen::MatrixXd Sig_k = p_prefix.cov.bottomRightCorner(d, d);
    Eigen::VectorXd delta_mu = dG * mu_k + dh;
    double quad = delta_mu.dot(lq.solve(delta_mu)) + lq.solve(dG * Sig_k * dG.transpose()).trace();

    out.conditional.value = 0.5 * (tr - double(td) + logdet_q - logdet_p + quad);
    out.conditional.std_error = 0.0;
    out.conditional.method = KlMethod::ClosedForm;

    double gap = std::abs(out.global.value - out.local.value - out.conditional.value);
    if (gap > 1e-9)
        throw NumericError("kl_decomposition_check: chain rule violated, gap = " +
                           std::to_string(gap));
    return out;
}

}  // namespace longctx
