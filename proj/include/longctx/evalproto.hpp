#pragma once

#include <vector>

#include <Eigen/Dense>

#include "longctx/model.hpp"
#include "longctx/rollout.hpp"

namespace longctx {

// Mean cosine similarity between ref and every frame of chunks
// [t - half_window, t + half_window] intersected with the trajectory.
double window_consistency(const std::vector<Eigen::VectorXd>& chunks, int frame_dim,
                          int chunk_size, int t_chunk, int half_window,
                          const Eigen::VectorXd& ref);

struct ConsistencyCurve {
    std::vector<int> marks;        // chunk indices (1 chunk = 1 "second")
    std::vector<double> mean;      // per mark, averaged over seeds
    std::vector<double> std_dev;   // per mark
    Eigen::MatrixXd per_seed;      // seeds x marks
    int seeds = 0;
};

struct EvalModel {
    const GeneratorParams* gen = nullptr;
    const SceneProcess* proc = nullptr;
    const ConditionModel* cm = nullptr;
    const DiffusionSchedule* sched = nullptr;
    CacheConfig cache;
    bool bounded_positions = true;
};

// Inference rollout (every chunk fully denoised) per seed; windowed cosine
// against the first frame at each mark.
ConsistencyCurve consistency_curve(const EvalModel& model, int n_chunks,
                                   const std::vector<int>& marks, int seeds, Rng rng,
                                   int half_window = 0);

// Replays a rollout and returns its chunks (inference mode).
std::vector<Eigen::VectorXd> inference_rollout(const EvalModel& model, int n_chunks, Rng rng,
                                               const std::map<int, Eigen::VectorXd>& overrides = {});

struct ProbeConfig {
    int inject_at = 8;
    int event_chunks = 2;
    double event_scale = 1.5;
    int delay = 40;
};

struct ProbeOutcome {
    double recall = 0.0;    // cos(final generated mean frame, event mean frame)
    double baseline = 0.0;  // same rollout without the injection
};

// Injects distinctive-identity chunks into the stream and measures how much
// the generation `delay` chunks later still resembles them. The paired
// baseline run shares every noise draw.
ProbeOutcome effective_context_probe(const EvalModel& model, const ProbeConfig& cfg, Rng rng);

// Cosine between the condition and the trajectory's mean frame mapped back
// through the mixing and condition projections.
double semantic_alignment(const std::vector<Eigen::VectorXd>& chunks, const Eigen::VectorXd& cond,
                          const SceneProcess& proc, const ConditionModel& cm);

}  // namespace longctx
