#pragma once

#include <vector>

#include <Eigen/Dense>

#include "longctx/rng.hpp"

namespace longctx {

// Synthetic data process: a latent identity w ~ N(0, I) is drawn once per
// trajectory, frame means are mixing * w, and frames follow an AR(1)
// deviation chain around the mean:
//   f_0 = mixing*w + noise_scale * xi_0
//   f_n = mixing*w + transition * (f_{n-1} - mixing*w) + noise_scale * xi_n
// Everything is jointly Gaussian, so conditionals have closed forms.
struct SceneProcess {
    int identity_dim = 4;
    int frame_dim = 8;
    int chunk_size = 4;
    Eigen::MatrixXd mixing;  // frame_dim x identity_dim
    double transition = 0.9;   // in (0, 1]
    double noise_scale = 0.3;  // > 0

    int chunk_dim() const { return frame_dim * chunk_size; }
};

// Condition vector generator: cond = proj * identity + noise * xi. The
// stand-in for a text prompt; partially observes the identity.
struct ConditionModel {
    Eigen::MatrixXd proj;  // cond_dim x identity_dim
    double noise = 0.7;

    int dim() const { return int(proj.rows()); }
};

struct Trajectory {
    int frame_dim = 0;
    int chunk_size = 0;
    Eigen::VectorXd identity;
    std::vector<Eigen::VectorXd> chunks;  // each chunk_size*frame_dim, frames stacked

    int n_chunks() const { return int(chunks.size()); }
    int n_frames() const { return n_chunks() * chunk_size; }
    // global frame index -> frame vector
    Eigen::VectorXd frame(int idx) const {
        const Eigen::VectorXd& c = chunks[size_t(idx / chunk_size)];
        return c.segment(Eigen::Index(idx % chunk_size) * frame_dim, frame_dim);
    }
};

// Validates invariants; throws std::invalid_argument.
void validate(const SceneProcess& proc);

SceneProcess make_scene(int identity_dim, int frame_dim, int chunk_size, double mixing_scale,
                        double transition, double noise_scale, Rng rng);

ConditionModel make_condition_model(const SceneProcess& proc, int cond_dim, double noise, Rng rng);

Trajectory sample_trajectory(const SceneProcess& proc, int n_chunks, Rng& rng);

Eigen::VectorXd sample_condition(const ConditionModel& cm, const Eigen::VectorXd& identity, Rng& rng);

// Condition drawn from its marginal (identity integrated out) for generation.
Eigen::VectorXd sample_condition_marginal(const ConditionModel& cm, const SceneProcess& proc, Rng& rng);

inline Eigen::VectorXd chunk_frame(const SceneProcess& proc, const Eigen::VectorXd& chunk, int i) {
    return chunk.segment(Eigen::Index(i) * proc.frame_dim, proc.frame_dim);
}

}  // namespace longctx
