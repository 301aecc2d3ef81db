#pragma once

#include <span>
#include <variant>

#include <Eigen/Dense>

#include "longctx/cache.hpp"
#include "longctx/errors.hpp"
#include "longctx/net.hpp"
#include "longctx/rng.hpp"
#include "longctx/scene.hpp"
#include "longctx/scene_posterior.hpp"
#include "longctx/serialize.hpp"
#include "longctx/schedule.hpp"

namespace longctx {

// Causal chunk generator: the denoiser network plus the fixed cache write
// head. The network reads the cache only through attention over the bounded
// view; birth indices never enter the computation.
struct GeneratorParams {
    ChunkNet net;
    CacheEncoder enc;
};

enum class ScoreRole { FakeScore, TeacherScore };

struct ScoreParams {
    ChunkNet net;
    ScoreRole role = ScoreRole::FakeScore;
};

GeneratorParams make_generator(const NetConfig& cfg, int frame_dim, Rng rng);
ScoreParams make_score(const NetConfig& cfg, ScoreRole role, Rng rng);

// Predicted clean chunk for a noisy input at timestep tidx given the cache
// view. Deterministic; pure function of (x_noisy, tidx, cond, view).
Eigen::VectorXd generate_chunk(const GeneratorParams& gen, const Eigen::VectorXd& x_noisy,
                               int tidx, const Eigen::VectorXd& cond, const ContextView& view,
                               const DiffusionSchedule& sched, bool bounded_positions = true,
                               NetTrace* trace = nullptr);

Eigen::VectorXd generate_chunk(const GeneratorParams& gen, const Eigen::VectorXd& x_noisy,
                               int tidx, const Eigen::VectorXd& cond, const SlowFastCache& cache,
                               const DiffusionSchedule& sched);

// Keys/values are computed from the clean chunk (never from noisy
// intermediates) and appended under the next birth index.
AppendReport update_cache(const GeneratorParams& gen, const Eigen::VectorXd& x0,
                          SlowFastCache& cache);

// Networks predict x0; the implied score is (alpha * x0_hat - x_t) / sigma^2.
Eigen::VectorXd implied_score(const ChunkNet& net, const Eigen::VectorXd& x_t, int tidx,
                              const Eigen::VectorXd& cond, const AttentionInput* attn,
                              const DiffusionSchedule& sched);

// One denoising-score-matching sample: a clean chunk with the context view it
// was generated under.
struct DsmSample {
    Eigen::VectorXd x0;
    int tidx = 1;
    Eigen::VectorXd cond;
    ContextView view;
};

// Batch loss and parameter gradient of the x0-regression loss over freshly
// diffused samples. grad must be zero-initialized to the net's size.
double dsm_gradient(const ChunkNet& net, std::span<const DsmSample> batch, Rng& rng,
                    const DiffusionSchedule& sched, Eigen::VectorXd& grad);

// One SGD step on the x0-regression loss over freshly diffused samples.
// Returns the batch loss. lr == 0 leaves parameters unchanged.
double fake_score_update(ScoreParams& score, std::span<const DsmSample> batch, double lr,
                         Rng& rng, const DiffusionSchedule& sched);

enum class TeacherScope { Full, FastOnly, None };

// Analytic teacher: the exact score of the diffused conditional
// p_data(next chunk | frames stored in the view, cond) under the scene
// process. Scope controls which segments it is allowed to see.
struct AnalyticTeacher {
    const SceneProcess* proc = nullptr;
    const ConditionModel* cm = nullptr;
    TeacherScope scope = TeacherScope::Full;
};

using TeacherHandle = std::variant<AnalyticTeacher, const ScoreParams*>;

// Frames a teacher with the given scope may condition on, in time order.
std::vector<FrameObservation> observations_from_view(const ContextView& view, TeacherScope scope);

Eigen::VectorXd teacher_score(const TeacherHandle& teacher, const Eigen::VectorXd& x_t, int tidx,
                              const Eigen::VectorXd& cond, const ContextView& view,
                              long target_start_frame, const DiffusionSchedule& sched);

// Exact conditional of the chunk starting at target_start_frame for the
// analytic teacher (used by oracles and the evaluation module).
GaussianDist analytic_conditional(const AnalyticTeacher& teacher, const Eigen::VectorXd& cond,
                                  const ContextView& view, long target_start_frame);

void save_generator(const std::string& path, const GeneratorParams& gen);
GeneratorParams load_generator(const std::string& path);
void save_score(const std::string& path, const ScoreParams& score);
ScoreParams load_score(const std::string& path);

}  // namespace longctx
