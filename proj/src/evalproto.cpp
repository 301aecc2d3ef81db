#include "longctx/evalproto.hpp"

#include <cmath>

namespace longctx {

namespace {
double cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    double na = a.norm(), nb = b.norm();
    if (na == 0.0 || nb == 0.0) return 0.0;
    return a.dot(b) / (na * nb);
}

Eigen::VectorXd frame_of(const std::vector<Eigen::VectorXd>& chunks, int frame_dim, int chunk_size,
                         int idx) {
    return chunks[size_t(idx / chunk_size)].segment(Eigen::Index(idx % chunk_size) * frame_dim,
                                                    frame_dim);
}
}  // namespace

double window_consistency(const std::vector<Eigen::VectorXd>& chunks, int frame_dim,
                          int chunk_size, int t_chunk, int half_window,
                          const Eigen::VectorXd& ref) {
    int n = int(chunks.size());
    int lo = std::max(0, t_chunk - half_window);
    int hi = std::min(n - 1, t_chunk + half_window);
    if (lo > hi) throw std::invalid_argument("window_consistency: window misses the trajectory");
    double acc = 0.0;
    int count = 0;
    for (int c = lo; c <= hi; ++c) {
        for (int f = 0; f < chunk_size; ++f) {
            acc += cosine(ref, frame_of(chunks, frame_dim, chunk_size, c * chunk_size + f));
            ++count;
        }
    }
    return acc / double(count);
}

std::vector<Eigen::VectorXd> inference_rollout(const EvalModel& model, int n_chunks, Rng rng,
                                               const std::map<int, Eigen::VectorXd>& overrides) {
    RolloutPlan plan;
    plan.length = n_chunks;
    plan.exit_step = model.sched->steps;  // full denoising everywhere
    plan.teacher_len = 1;
    plan.context_len = 0;
    plan.cond = sample_condition_marginal(*model.cm, *model.proc, rng);
    RolloutOptions opts;
    opts.bounded_positions = model.bounded_positions;
    opts.overrides = overrides;
    RolloutResult res =
        self_rollout(*model.gen, plan, *model.sched, model.cache, rng.sub("roll"), opts);
    return std::move(res.chunks);
}

ConsistencyCurve consistency_curve(const EvalModel& model, int n_chunks,
                                   const std::vector<int>& marks, int seeds, Rng rng,
                                   int half_window) {
    for (int m : marks)
        if (m < 0 || m >= n_chunks)
            throw std::invalid_argument("consistency_curve: mark outside the rollout");
    ConsistencyCurve curve;
    curve.marks = marks;
    curve.seeds = seeds;
    curve.per_seed.resize(seeds, Eigen::Index(marks.size()));
    for (int s = 0; s < seeds; ++s) {
        auto chunks = inference_rollout(model, n_chunks, rng.sub(uint64_t(s)));
        Eigen::VectorXd v0 =
            frame_of(chunks, model.proc->frame_dim, model.proc->chunk_size, 0);
        for (size_t mi = 0; mi < marks.size(); ++mi)
            curve.per_seed(s, Eigen::Index(mi)) =
                window_consistency(chunks, model.proc->frame_dim, model.proc->chunk_size,
                                   marks[mi], half_window, v0);
    }
    curve.mean.resize(marks.size());
    curve.std_dev.resize(marks.size());
    for (size_t mi = 0; mi < marks.size(); ++mi) {
        auto col = curve.per_seed.col(Eigen::Index(mi));
        curve.mean[mi] = col.mean();
        double var = (col.array() - curve.mean[mi]).square().sum() / std::max(1, seeds - 1);
        curve.std_dev[mi] = std::sqrt(var);
    }
    return curve;
}

ProbeOutcome effective_context_probe(const EvalModel& model, const ProbeConfig& cfg, Rng rng) {
    if (cfg.delay < 1) throw std::invalid_argument("effective_context_probe: delay must be >= 1");
    const SceneProcess& proc = *model.proc;
    Rng erng = rng.sub("event");
    std::map<int, Eigen::VectorXd> overrides;
    Eigen::VectorXd event_mean = Eigen::VectorXd::Zero(proc.frame_dim);
    for (int e = 0; e < cfg.event_chunks; ++e) {
        Eigen::VectorXd chunk = make_event_chunk(proc, cfg.event_scale, erng);
        Eigen::Map<const Eigen::MatrixXd> frames(chunk.data(), proc.frame_dim, proc.chunk_size);
        event_mean += frames.rowwise().mean();
        overrides[cfg.inject_at + e] = chunk;
    }
    event_mean /= double(cfg.event_chunks);

    int n_chunks = cfg.inject_at + cfg.event_chunks - 1 + cfg.delay + 1;
    Rng roll_rng = rng.sub("rollout");
    auto with_event = inference_rollout(model, n_chunks, roll_rng, overrides);
    auto without = inference_rollout(model, n_chunks, roll_rng);  // same draws, no injection

    auto mean_frame = [&](const std::vector<Eigen::VectorXd>& chunks) {
        const Eigen::VectorXd& c = chunks.back();
        Eigen::Map<const Eigen::MatrixXd> frames(c.data(), proc.frame_dim, proc.chunk_size);
        return Eigen::VectorXd(frames.rowwise().mean());
    };
    ProbeOutcome out;
    out.recall = cosine(mean_frame(with_event), event_mean);
    out.baseline = cosine(mean_frame(without), event_mean);
    return out;
}

double semantic_alignment(const std::vector<Eigen::VectorXd>& chunks, const Eigen::VectorXd& cond,
                          const SceneProcess& proc, const ConditionModel& cm) {
    Eigen::VectorXd mean_frame = Eigen::VectorXd::Zero(proc.frame_dim);
    for (const auto& c : chunks) {
        Eigen::Map<const Eigen::MatrixXd> frames(c.data(), proc.frame_dim, proc.chunk_size);
        mean_frame += frames.rowwise().mean();
    }
    mean_frame /= double(chunks.size());
    Eigen::VectorXd w = proc.mixing.colPivHouseholderQr().solve(mean_frame);
    return cosine(cond, cm.proj * w);
}

}  // namespace longctx
