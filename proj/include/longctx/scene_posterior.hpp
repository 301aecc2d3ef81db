#pragma once

#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "longctx/gaussian.hpp"
#include "longctx/scene.hpp"

namespace longctx {

struct FrameObservation {
    long frame_index = 0;  // global frame time
    Eigen::VectorXd frame;
};

// Exact Bayesian state over (identity w, deviation d) given a set of observed
// frames at known times plus an optional condition observation. Frames are
// noiseless functions of the state, so updates use the Joseph form for
// stability. Conditioning is O(n_frames) thanks to the Markov structure.
class ScenePosterior {
public:
    explicit ScenePosterior(const SceneProcess& proc);

    // cond = proj * w + noise * xi
    void observe_condition(const ConditionModel& cm, const Eigen::VectorXd& cond);

    // Frames must arrive in strictly increasing frame_index order.
    void observe_frame(long frame_index, const Eigen::VectorXd& frame);

    // Joint Gaussian over the chunk of frames [start, start + chunk_size).
    // start must be past every absorbed observation.
    GaussianDist chunk_conditional(long start_frame) const;

    const Eigen::VectorXd& state_mean() const { return m_; }
    const Eigen::MatrixXd& state_cov() const { return P_; }

private:
    void predict_to(long frame_index);

    const SceneProcess& proc_;
    Eigen::VectorXd m_;  // (w, d)
    Eigen::MatrixXd P_;
    long time_;  // frame time of the current state; -1 before any propagation
};

// Convenience wrapper: posterior chunk conditional given observations + cond.
GaussianDist conditional_chunk_dist(const SceneProcess& proc,
                                    const std::vector<FrameObservation>& obs,
                                    const ConditionModel* cm, const Eigen::VectorXd* cond,
                                    long start_frame);

// Closed-form joint Gaussian over frames [0, n_frames) of the process,
// optionally conditioned on a condition vector (identity posterior).
GaussianDist window_joint(const SceneProcess& proc, int n_frames);
GaussianDist window_joint_given_condition(const SceneProcess& proc, const ConditionModel& cm,
                                          const Eigen::VectorXd& cond, int n_frames);

}  // namespace longctx
