#pragma once

#include <string>
#include <vector>

#include "longctx/cache.hpp"
#include "longctx/erft.hpp"
#include "longctx/evalproto.hpp"
#include "longctx/rollout.hpp"

namespace longctx {

// Flat key-value experiment configuration with dotted section names. The
// defaults mirror the standard preset: cache (3,12,6), tau 0.95,
// consolidation interval 2, keep-first, curriculum 5 -> 30 over 500 steps.
struct ExperimentConfig {
    int version = 1;

    uint64_t seed = 1;
    uint64_t domain_seed = 7777;  // fixes the scene/condition/encoder draws
    std::string out_dir = "runs/default";

    // scene
    int scene_identity_dim = 4;
    int scene_frame_dim = 8;
    int scene_chunk_size = 4;
    double scene_mixing_scale = 3.0;
    double scene_transition = 0.9;
    double scene_noise_scale = 0.3;

    // condition
    int cond_dim = 3;
    double cond_noise = 0.7;

    // schedule
    int schedule_steps = 4;
    std::string schedule_kind = "vp";

    // cache
    int cache_n_sink = 3;
    int cache_n_slow = 12;
    int cache_n_fast = 6;
    double cache_tau = 0.95;
    int cache_interval = 2;
    std::string cache_keep = "first";       // first | all
    std::string cache_strategy = "surprisal";  // surprisal | uniform1 | uniform2

    // nets
    int net_key_dim = 16;
    int net_val_dim = 20;
    int net_hidden = 48;
    int net_window_hidden = 64;
    int net_teacher_hidden = 64;

    // curriculum
    int curriculum_l0 = 5;
    int curriculum_l1 = 24;
    long curriculum_decay = 500;

    // rollout
    int rollout_teacher_len = 1;
    double rollout_inject_prob = 0.15;
    double rollout_inject_scale = 1.5;

    // stage 1
    int stage1_steps = 1200;
    int stage1_batch = 32;
    double stage1_gen_lr = 3e-3;
    double stage1_fake_lr = 2e-3;
    int stage1_fake_steps = 2;
    int stage1_gen_warmup = 150;

    // stage 2
    int stage2_steps = 700;
    int stage2_rollouts = 4;
    double stage2_gen_lr = 1.5e-3;
    double stage2_fake_lr = 2e-3;
    int stage2_fake_steps = 3;
    int stage2_gen_warmup = 80;
    std::string stage2_teacher = "analytic";       // analytic | trained
    std::string stage2_teacher_scope = "full";     // full | fast_only | none
    std::string stage2_init_checkpoint;            // required
    std::string stage2_teacher_checkpoint;         // for trained teachers

    // teacher pretrain + erft
    int teacher_steps = 5000;
    int teacher_batch = 64;
    double teacher_lr = 1.5e-3;
    int erft_steps = 1500;
    int erft_batch = 32;
    double erft_lr = 3e-4;
    double erft_bernoulli_p = 0.5;
    double erft_scale = 1.0;
    int erft_bank_capacity = 256;
    std::string erft_init_checkpoint;

    // eval
    std::vector<int> eval_marks = {10, 20, 30, 40, 50, 60};
    int eval_seeds = 5;
    int eval_n_chunks = 61;
    std::string eval_checkpoint;

    // ablation switches
    bool ablate_bounded_pe = true;   // false disables bounded positions at eval
    bool ablate_cdmd = true;         // false: evaluate the stage-1 model directly
    bool ablate_erft = true;         // false: use the clean-trained teacher
};

ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);
std::string serialize_config(const ExperimentConfig& cfg);
void apply_override(ExperimentConfig& cfg, const std::string& key_value);  // "key=value"
void validate(const ExperimentConfig& cfg);

// Deterministic domain objects derived from domain_seed.
struct Domain {
    SceneProcess proc;
    ConditionModel cm;
    DiffusionSchedule sched;
    CacheConfig cache;
    NetConfig gen_net;     // chunk net with attention
    NetConfig score_net;   // chunk-level score net with attention
    NetConfig window_net;  // stage-1 fake score, no attention
};

Domain build_domain(const ExperimentConfig& cfg);

Stage1Config stage1_config(const ExperimentConfig& cfg, const Domain& d);
Stage2Config stage2_config(const ExperimentConfig& cfg, const Domain& d);
TeacherPretrainConfig teacher_config(const ExperimentConfig& cfg, const Domain& d);
ErftConfig erft_config(const ExperimentConfig& cfg);

}  // namespace longctx
