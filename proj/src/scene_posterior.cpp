#include "longctx/scene_posterior.hpp"

#include <cmath>
#include <stdexcept>

namespace longctx {

ScenePosterior::ScenePosterior(const SceneProcess& proc) : proc_(proc) {
    int n = proc.identity_dim + proc.frame_dim;
    m_ = Eigen::VectorXd::Zero(n);
    P_ = Eigen::MatrixXd::Zero(n, n);
    P_.topLeftCorner(proc.identity_dim, proc.identity_dim).setIdentity();
    // d is exactly zero at virtual time -1; the step to time 0 injects s^2 I.
    time_ = -1;
}

void ScenePosterior::predict_to(long frame_index) {
    int Q = proc_.identity_dim, F = proc_.frame_dim;
    double rho = proc_.transition, s2 = proc_.noise_scale * proc_.noise_scale;
    while (time_ < frame_index) {
        m_.tail(F) *= rho;
        // P <- A P A^T + Qn with A = diag(I, rho I), Qn = diag(0, s^2 I)
        P_.block(0, Q, Q, F) *= rho;
        P_.block(Q, 0, F, Q) *= rho;
        P_.block(Q, Q, F, F) *= rho * rho;
        P_.block(Q, Q, F, F).diagonal().array() += s2;
        ++time_;
    }
}

void ScenePosterior::observe_condition(const ConditionModel& cm, const Eigen::VectorXd& cond) {
    int Q = proc_.identity_dim, F = proc_.frame_dim;
    int c = cm.dim();
    if (cond.size() != c) throw std::invalid_argument("observe_condition: dimension mismatch");
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(c, Q + F);
    H.leftCols(Q) = cm.proj;
    Eigen::MatrixXd S = H * P_ * H.transpose();
    S.diagonal().array() += cm.noise * cm.noise;
    Eigen::LLT<Eigen::MatrixXd> llt(S);
    Eigen::MatrixXd K = llt.solve(H * P_).transpose();
    m_ += K * (cond - H * m_);
    Eigen::MatrixXd IKH = Eigen::MatrixXd::Identity(Q + F, Q + F) - K * H;
    P_ = IKH * P_ * IKH.transpose() + (cm.noise * cm.noise) * K * K.transpose();
    P_ = 0.5 * (P_ + P_.transpose()).eval();
}

void ScenePosterior::observe_frame(long frame_index, const Eigen::VectorXd& frame) {
    int Q = proc_.identity_dim, F = proc_.frame_dim;
    if (frame.size() != F) throw std::invalid_argument("observe_frame: frame dimension mismatch");
    if (frame_index <= time_ && !(time_ == -1))
        throw std::invalid_argument("observe_frame: observations must be strictly increasing in time");
    predict_to(frame_index);
    // frame = M w + d, exact observation
    Eigen::MatrixXd H(F, Q + F);
    H.leftCols(Q) = proc_.mixing;
    H.rightCols(F).setIdentity();
    Eigen::MatrixXd S = H * P_ * H.transpose();
    Eigen::LLT<Eigen::MatrixXd> llt(S);
    if (llt.info() != Eigen::Success)
        throw std::runtime_error("observe_frame: innovation covariance not PD");
    Eigen::MatrixXd K = llt.solve(H * P_).transpose();
    m_ += K * (frame - H * m_);
    Eigen::MatrixXd IKH = Eigen::MatrixXd::Identity(Q + F, Q + F) - K * H;
    P_ = IKH * P_ * IKH.transpose();
    P_ = 0.5 * (P_ + P_.transpose()).eval();
}

GaussianDist ScenePosterior::chunk_conditional(long start_frame) const {
    int Q = proc_.identity_dim, F = proc_.frame_dim, cs = proc_.chunk_size;
    if (start_frame <= time_)
        throw std::invalid_argument("chunk_conditional: chunk must start after the last observation");
    ScenePosterior tmp(*this);
    tmp.predict_to(start_frame - 1);

    double rho = proc_.transition, s2 = proc_.noise_scale * proc_.noise_scale;
    int n = Q + F;
    // Powers A^i of the transition applied to the boundary state.
    std::vector<Eigen::MatrixXd> Ai(size_t(cs) + 1);
    Ai[0] = Eigen::MatrixXd::Identity(n, n);
    Eigen::MatrixXd A = Eigen::MatrixXd::Identity(n, n);
    A.bottomRightCorner(F, F) *= rho;
    for (int i = 1; i <= cs; ++i) Ai[size_t(i)] = A * Ai[size_t(i - 1)];

    Eigen::MatrixXd H(F, n);
    H.leftCols(Q) = proc_.mixing;
    H.rightCols(F).setIdentity();

    GaussianDist g;
    g.mean.resize(Eigen::Index(cs) * F);
    g.cov.resize(Eigen::Index(cs) * F, Eigen::Index(cs) * F);
    for (int i = 1; i <= cs; ++i)
        g.mean.segment(Eigen::Index(i - 1) * F, F) = H * (Ai[size_t(i)] * tmp.m_);
    for (int i = 1; i <= cs; ++i) {
        for (int j = i; j <= cs; ++j) {
            Eigen::MatrixXd C = Ai[size_t(i)] * tmp.P_ * Ai[size_t(j)].transpose();
            // process noise shared by both frames: k = 1..min(i,j)
            for (int k = 1; k <= i; ++k) {
                // A^{i-k} Qn A^{j-k}^T contributes rho^{(i-k)+(j-k)} s^2 on the d block
                double w = std::pow(rho, double(i - k) + double(j - k)) * s2;
                C.bottomRightCorner(F, F).diagonal().array() += w;
            }
            Eigen::MatrixXd blk = H * C * H.transpose();
            g.cov.block(Eigen::Index(i - 1) * F, Eigen::Index(j - 1) * F, F, F) = blk;
            if (i != j)
                g.cov.block(Eigen::Index(j - 1) * F, Eigen::Index(i - 1) * F, F, F) = blk.transpose();
        }
    }
    g.cov = 0.5 * (g.cov + g.cov.transpose()).eval();
    return g;
}

GaussianDist conditional_chunk_dist(const SceneProcess& proc,
                                    const std::vector<FrameObservation>& obs,
                                    const ConditionModel* cm, const Eigen::VectorXd* cond,
                                    long start_frame) {
    ScenePosterior post(proc);
    if (cm != nullptr && cond != nullptr) post.observe_condition(*cm, *cond);
    for (const auto& o : obs) post.observe_frame(o.frame_index, o.frame);
    return post.chunk_conditional(start_frame);
}

namespace {

GaussianDist window_joint_impl(const SceneProcess& proc, const Eigen::VectorXd& w_mean,
                               const Eigen::MatrixXd& w_cov, int n_frames) {
    int F = proc.frame_dim;
    double rho = proc.transition, s2 = proc.noise_scale * proc.noise_scale;
    // Var(d_n) recursion with d_0 ~ N(0, s^2 I)
    std::vector<double> vn(size_t(n_frames));
    vn[0] = s2;
    for (int i = 1; i < n_frames; ++i) vn[size_t(i)] = rho * rho * vn[size_t(i - 1)] + s2;

    Eigen::MatrixXd MM = proc.mixing * w_cov * proc.mixing.transpose();
    GaussianDist g;
    g.mean.resize(Eigen::Index(n_frames) * F);
    Eigen::VectorXd mu = proc.mixing * w_mean;
    for (int i = 0; i < n_frames; ++i) g.mean.segment(Eigen::Index(i) * F, F) = mu;
    g.cov.resize(Eigen::Index(n_frames) * F, Eigen::Index(n_frames) * F);
    for (int a = 0; a < n_frames; ++a) {
        for (int b = 0; b < n_frames; ++b) {
            double dc = std::pow(rho, double(std::abs(a - b))) * vn[size_t(std::min(a, b))];
            Eigen::MatrixXd blk = MM;
            blk.diagonal().array() += dc;
            g.cov.block(Eigen::Index(a) * F, Eigen::Index(b) * F, F, F) = blk;
        }
    }
    return g;
}

}  // namespace

GaussianDist window_joint(const SceneProcess& proc, int n_frames) {
    return window_joint_impl(proc, Eigen::VectorXd::Zero(proc.identity_dim),
                             Eigen::MatrixXd::Identity(proc.identity_dim, proc.identity_dim),
                             n_frames);
}

GaussianDist window_joint_given_condition(const SceneProcess& proc, const ConditionModel& cm,
                                          const Eigen::VectorXd& cond, int n_frames) {
    // Posterior of w given cond = proj w + noise xi with w ~ N(0, I).
    Eigen::MatrixXd S = cm.proj * cm.proj.transpose();
    S.diagonal().array() += cm.noise * cm.noise;
    Eigen::LLT<Eigen::MatrixXd> llt(S);
    Eigen::MatrixXd K = llt.solve(cm.proj).transpose();  // Q x c
    Eigen::VectorXd wm = K * cond;
    Eigen::MatrixXd wc = Eigen::MatrixXd::Identity(proc.identity_dim, proc.identity_dim) - K * cm.proj;
    wc = 0.5 * (wc + wc.transpose()).eval();
    return window_joint_impl(proc, wm, wc, n_frames);
}

}  // namespace longctx
