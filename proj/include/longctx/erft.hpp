#pragma once

#include <vector>

#include <Eigen/Dense>

#include "longctx/model.hpp"
#include "longctx/rollout.hpp"

namespace longctx {

// Ring buffer of past model residuals (prediction - target, chunk shaped).
class ErrorBank {
public:
    explicit ErrorBank(int capacity);

    void push(const Eigen::VectorXd& residual);
    const Eigen::VectorXd& sample(Rng& rng) const;
    int size() const { return int(ring_.size()); }
    int capacity() const { return capacity_; }
    long insertions() const { return insertions_; }
    bool empty() const { return ring_.empty(); }
    const std::vector<Eigen::VectorXd>& entries() const { return ring_; }

private:
    int capacity_;
    std::vector<Eigen::VectorXd> ring_;
    size_t head_ = 0;  // next slot to overwrite once full
    long insertions_ = 0;
};

struct PerturbationConfig {
    double bernoulli_p = 0.5;
    double scale = 1.0;
};

void validate(const PerturbationConfig& cfg);

// Stores prediction - target; shapes must match.
void capture_residual(ErrorBank& bank, const Eigen::VectorXd& prediction,
                      const Eigen::VectorXd& target);

// Per chunk, with probability bernoulli_p adds scale * (random bank
// residual). Empty bank or p == 0 or scale == 0 returns the input unchanged.
std::vector<Eigen::VectorXd> perturb_context(const std::vector<Eigen::VectorXd>& context,
                                             const ErrorBank& bank, const PerturbationConfig& cfg,
                                             Rng& rng);

// One teacher fine-tuning example: a data context with its continuation.
struct ContinuationExample {
    std::vector<Eigen::VectorXd> context_chunks;  // chunk indices 0..k-1
    Eigen::VectorXd cond;
    Eigen::VectorXd target_x0;  // chunk k
    long target_start_frame = 0;
};

// One SGD step of the denoising-regression loss with contexts perturbed by
// recycled residuals; fresh residuals are captured back into the bank.
double erft_step(ScoreParams& teacher, std::span<const ContinuationExample> batch,
                 ErrorBank& bank, const PerturbationConfig& cfg, double lr, Rng& rng,
                 const CacheEncoder& enc, const CacheConfig& cache_cfg,
                 const DiffusionSchedule& sched);

// Builds the teacher-side cache view of a (possibly perturbed) context.
ContextView context_view_of_chunks(const std::vector<Eigen::VectorXd>& chunks,
                                   const CacheEncoder& enc, const CacheConfig& cache_cfg);

struct TeacherPretrainConfig {
    SceneProcess proc;
    ConditionModel cm;
    DiffusionSchedule sched;
    CacheConfig cache;
    NetConfig net_cfg;
    int steps = 5000;
    int batch = 64;
    double lr = 1.5e-3;
    double lr_floor_frac = 0.1;  // cosine-free exponential decay to this fraction
    int min_context_chunks = 4;
    int max_context_chunks = 12;
    double clip = 50.0;
    uint64_t seed = 3;
    uint64_t domain_seed = 7777;  // pins the shared cache encoder
    int metric_every = 250;
};

// Supervised x0-regression of the teacher on data continuations, conditioned
// on cache views built from ground-truth prefixes.
ScoreParams teacher_pretrain(const TeacherPretrainConfig& cfg, const MetricFn& metric = {});

struct ErftConfig {
    PerturbationConfig perturb;
    int bank_capacity = 256;
    int steps = 1500;
    int batch = 32;
    double lr = 3e-4;
    int min_context_chunks = 4;
    int max_context_chunks = 12;
    uint64_t seed = 4;
    int metric_every = 100;
};

struct ErftResult {
    ScoreParams teacher;
    ErrorBank bank;

    ErftResult(ScoreParams t, ErrorBank b) : teacher(std::move(t)), bank(std::move(b)) {}
};

// Error-recycling fine-tune of a pretrained teacher on fresh data
// continuations with perturbed contexts.
ErftResult teacher_erft(const TeacherPretrainConfig& base, const ErftConfig& cfg,
                        const ScoreParams& pretrained, const MetricFn& metric = {});

// Draws a data continuation example with a context of the given chunk count.
ContinuationExample sample_continuation(const SceneProcess& proc, const ConditionModel& cm,
                                        int context_chunks, Rng& rng);

void save_bank(const std::string& path, const ErrorBank& bank);
ErrorBank load_bank(const std::string& path);

}  // namespace longctx
