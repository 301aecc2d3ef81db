#pragma once

#include <functional>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "longctx/cache.hpp"
#include "longctx/errors.hpp"
#include "longctx/gaussian.hpp"
#include "longctx/schedule.hpp"

namespace longctx {

// One generated sample with its retained computation path. vjp accumulates
// J_G(theta)^T * cot into the parameter gradient buffer; the diffused sample
// must come from add_noise of the clean one.
struct DmdSample {
    Eigen::VectorXd x0;
    Eigen::VectorXd x_t;
    int tidx = 1;
    Eigen::VectorXd cond;
    std::optional<ContextView> context;
    long target_start_frame = -1;
    std::function<void(const Eigen::VectorXd& cot, Eigen::VectorXd& grad)> vjp;
};

struct DmdBatch {
    std::vector<DmdSample> samples;
    const DiffusionSchedule* sched = nullptr;
};

// Score evaluated at (sample.x_t, sample.tidx); conditional forms read the
// sample's context.
using ScoreFn = std::function<Eigen::VectorXd(const DmdSample&)>;

// Monte-Carlo estimate of the stage-1 distribution-matching gradient:
// mean over the batch of w_t * alpha_t * (s_fake - s_teacher) pushed through
// each sample's vjp. Samples must be context-free.
Eigen::VectorXd dmd_gradient(Eigen::Index param_count, const DmdBatch& batch,
                             const ScoreFn& fake, const ScoreFn& teacher);

// Contextual variant: every sample must carry a context view produced by the
// student's own rollout; both scores see the same view. Gradient flows only
// through the continuation vjp, never through the cached context.
Eigen::VectorXd cdmd_gradient(Eigen::Index param_count, const DmdBatch& batch,
                              const ScoreFn& fake, const ScoreFn& teacher);

// Homogeneous linear-Gaussian sequence model over N frame vectors:
//   X_1 ~ N(init_mean, init_cov),  X_{i+1} = A_i X_i + b_i + N(0, noise_i).
struct GaussianSeqModel {
    Eigen::VectorXd init_mean;
    Eigen::MatrixXd init_cov;
    std::vector<Eigen::MatrixXd> trans;      // A_i
    std::vector<Eigen::VectorXd> shift;      // b_i
    std::vector<Eigen::MatrixXd> noise_cov;  // per-step

    int n_steps() const { return int(trans.size()); }
    int length() const { return n_steps() + 1; }
    int dim() const { return int(init_mean.size()); }
};

GaussianDist joint_distribution(const GaussianSeqModel& m);
GaussianDist joint_prefix(const GaussianSeqModel& m, int k);

struct KlDecomposition {
    KlEstimate global;
    KlEstimate local;        // KL of the first-k joint
    KlEstimate conditional;  // E_p[ KL(p(tail | prefix) || q(tail | prefix)) ]
};

// Closed-form chain-rule decomposition; throws NumericError if
// |global - (local + conditional)| > 1e-9.
KlDecomposition kl_decomposition_check(const GaussianSeqModel& p, const GaussianSeqModel& q,
                                       int split_k);

}  // namespace longctx
