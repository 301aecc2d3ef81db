#pragma once

#include <functional>
#include <map>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include <json.hpp>

#include "longctx/distill.hpp"
#include "longctx/model.hpp"

namespace longctx {

// Rollout-length curriculum: the upper bound grows linearly from l0 to l1
// over decay_steps training steps.
struct CurriculumSchedule {
    int l0 = 5;
    int l1 = 30;
    long decay_steps = 500;
    long step = 0;
};

void validate(const CurriculumSchedule& c);

// Uniform over [l0, floor(min(step, decay)/decay * (l1 - l0)) + l0 + 1).
int sample_rollout_length(const CurriculumSchedule& c, Rng& rng);

// Uniform over {1..T}: the number of denoise evaluations a target chunk
// receives before its prediction is kept.
int sample_random_exit(int T, Rng& rng);

struct RolloutPlan {
    int length = 1;       // L, chunks
    int exit_step = 1;    // r
    int teacher_len = 1;  // l, target chunks at the end
    int context_len = 0;  // c, fully denoised chunks right before the targets
    Eigen::VectorXd cond;
};

void validate(const RolloutPlan& plan, int schedule_steps);

struct ChunkLog {
    int denoise_evals = 0;    // 0 for injected chunks
    int exit_timestep = 0;    // timestep index of the kept prediction
    bool is_context = false;
    bool is_target = false;
    bool injected = false;
};

// Inputs of a target chunk's exit-step evaluation, kept so the parameter VJP
// can be replayed after the rollout.
struct ExitTape {
    Eigen::VectorXd x_in;
    int tidx = 1;
    ContextView view;
};

struct RolloutResult {
    std::vector<Eigen::VectorXd> chunks;  // clean predictions
    std::vector<ChunkLog> logs;
    ContextView boundary_view;  // cache view right before the first target chunk
    std::vector<ExitTape> target_tapes;
    std::vector<int> target_indices;
    SlowFastCache cache;

    RolloutResult() : cache(CacheConfig{}) {}
};

struct RolloutOptions {
    bool collect_tapes = false;
    bool bounded_positions = true;
    // forced chunk contents (index -> clean chunk); used by the recall probe
    // and the rollout perturbation augmentation
    std::map<int, Eigen::VectorXd> overrides;
};

// Algorithm: per chunk, start from fresh noise at the largest-noise step and
// alternate predict / re-noise down the schedule. Context chunks take all T
// evaluations; everything else exits after plan.exit_step evaluations. The
// kept prediction updates the cache at the clean level. Each chunk draws from
// its own rng substream, so context chunks reproduce bit-identically when the
// exit step changes.
RolloutResult self_rollout(const GeneratorParams& gen, const RolloutPlan& plan,
                           const DiffusionSchedule& sched, const CacheConfig& cache_cfg,
                           Rng rollout_rng, const RolloutOptions& opts = {});

// v_c = chunks [L-c-l, L-l), target source = chunks [L-l, L).
std::pair<std::vector<Eigen::VectorXd>, std::vector<Eigen::VectorXd>> split_context_target(
    const std::vector<Eigen::VectorXd>& chunks, const RolloutPlan& plan);

using MetricFn = std::function<void(const nlohmann::json&)>;

struct Stage1Config {
    SceneProcess proc;
    ConditionModel cm;
    DiffusionSchedule sched;
    CacheConfig cache;
    NetConfig gen_cfg;
    NetConfig fake_cfg;  // window-level net, no attention
    int window_chunks = 5;
    int steps = 1200;
    int batch = 32;
    double gen_lr = 3e-3;
    double fake_lr = 2e-3;
    int fake_steps = 2;
    int fake_boost_iters = 20;   // extra fake steps at the start
    int gen_warmup = 150;        // fake-only iterations before generator updates
    double clip = 10.0;
    double fake_clip = 50.0;
    double lr_decay = 0.3;       // total multiplicative decay across the run
    uint64_t seed = 1;
    uint64_t domain_seed = 7777;  // pins the shared cache encoder
    int kl_fit_samples = 300;
    int metric_every = 50;
};

struct Stage1Result {
    GeneratorParams gen;
    ScoreParams fake;
    double kl_initial = 0.0;
    double kl_final = 0.0;
};

Stage1Result train_stage1(const Stage1Config& cfg, const MetricFn& metric = {});

enum class TeacherKind { Analytic, Trained };

struct Stage2Config {
    SceneProcess proc;
    ConditionModel cm;
    DiffusionSchedule sched;
    CacheConfig cache;
    CurriculumSchedule curriculum;
    NetConfig fake_cfg;  // chunk-level net with attention
    TeacherKind teacher_kind = TeacherKind::Analytic;
    TeacherScope teacher_scope = TeacherScope::Full;
    std::optional<ScoreParams> trained_teacher;
    int steps = 700;
    int rollouts_per_iter = 4;
    int teacher_len = 1;
    double gen_lr = 1.5e-3;
    double fake_lr = 2e-3;
    int fake_steps = 3;
    int fake_boost_iters = 30;
    int gen_warmup = 80;
    double clip = 10.0;
    double fake_clip = 50.0;
    double lr_decay = 0.3;
    double inject_prob = 0.15;  // rollout identity-perturbation augmentation
    double inject_scale = 1.5;
    uint64_t seed = 1;
    int metric_every = 50;
};

struct Stage2Result {
    GeneratorParams gen;
    ScoreParams fake;
};

Stage2Result train_stage2(const Stage2Config& cfg, const GeneratorParams& init_gen,
                          const MetricFn& metric = {});

// Distinct-identity chunk used by the perturbation augmentation and the
// effective-context probe.
Eigen::VectorXd make_event_chunk(const SceneProcess& proc, double identity_scale, Rng& rng);

// Gaussian fit of the student's first-chunk marginal against the data
// marginal; the stage-1 tracking oracle.
double student_first_chunk_kl(const GeneratorParams& gen, const SceneProcess& proc,
                              const ConditionModel& cm, const DiffusionSchedule& sched,
                              const CacheConfig& cache_cfg, int n_samples, Rng rng);

}  // namespace longctx
