#include "longctx/scene.hpp"

#include <cmath>
#include <stdexcept>

namespace longctx {

void validate(const SceneProcess& proc) {
    if (proc.identity_dim < 1 || proc.frame_dim < 1 || proc.chunk_size < 1)
        throw std::invalid_argument("SceneProcess: dimensions must be positive");
    if (!(proc.transition > 0.0) || proc.transition > 1.0)
        throw std::invalid_argument("SceneProcess: transition must be in (0, 1]");
    if (!(proc.noise_scale > 0.0))
        throw std::invalid_argument("SceneProcess: noise_scale must be > 0");
    if (proc.mixing.rows() != proc.frame_dim || proc.mixing.cols() != proc.identity_dim)
        throw std::invalid_argument("SceneProcess: mixing shape mismatch");
}

SceneProcess make_scene(int identity_dim, int frame_dim, int chunk_size, double mixing_scale,
                        double transition, double noise_scale, Rng rng) {
    SceneProcess p;
    p.identity_dim = identity_dim;
    p.frame_dim = frame_dim;
    p.chunk_size = chunk_size;
    p.transition = transition;
    p.noise_scale = noise_scale;
    p.mixing.resize(frame_dim, identity_dim);
    double sc = mixing_scale / std::sqrt(double(identity_dim));
    for (int i = 0; i < frame_dim; ++i)
        for (int j = 0; j < identity_dim; ++j) p.mixing(i, j) = sc * rng.normal();
    validate(p);
    return p;
}

ConditionModel make_condition_model(const SceneProcess& proc, int cond_dim, double noise, Rng rng) {
    if (cond_dim < 1) throw std::invalid_argument("make_condition_model: cond_dim must be >= 1");
    if (!(noise > 0.0)) throw std::invalid_argument("make_condition_model: noise must be > 0");
    ConditionModel cm;
    cm.noise = noise;
    cm.proj.resize(cond_dim, proc.identity_dim);
    double sc = 1.0 / std::sqrt(double(proc.identity_dim));
    for (int i = 0; i < cond_dim; ++i)
        for (int j = 0; j < proc.identity_dim; ++j) cm.proj(i, j) = sc * rng.normal();
    return cm;
}

Trajectory sample_trajectory(const SceneProcess& proc, int n_chunks, Rng& rng) {
    if (n_chunks < 1) throw std::invalid_argument("sample_trajectory: n_chunks must be >= 1");
    Trajectory tr;
    tr.frame_dim = proc.frame_dim;
    tr.chunk_size = proc.chunk_size;
    tr.identity = rng.normal_vec(proc.identity_dim);
    Eigen::VectorXd mu = proc.mixing * tr.identity;
    Eigen::VectorXd d = proc.noise_scale * rng.normal_vec(proc.frame_dim);
    tr.chunks.reserve(size_t(n_chunks));
    int n_frames = n_chunks * proc.chunk_size;
    Eigen::VectorXd chunk(proc.chunk_dim());
    for (int n = 0; n < n_frames; ++n) {
        if (n > 0) d = proc.transition * d + proc.noise_scale * rng.normal_vec(proc.frame_dim);
        chunk.segment(Eigen::Index(n % proc.chunk_size) * proc.frame_dim, proc.frame_dim) = mu + d;
        if ((n + 1) % proc.chunk_size == 0) tr.chunks.push_back(chunk);
    }
    return tr;
}

Eigen::VectorXd sample_condition(const ConditionModel& cm, const Eigen::VectorXd& identity, Rng& rng) {
    return cm.proj * identity + cm.noise * rng.normal_vec(cm.proj.rows());
}

Eigen::VectorXd sample_condition_marginal(const ConditionModel& cm, const SceneProcess& proc, Rng& rng) {
    Eigen::VectorXd w = rng.normal_vec(proc.identity_dim);
    return sample_condition(cm, w, rng);
}

}  // namespace longctx
