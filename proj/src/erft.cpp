#include "longctx/erft.hpp"

#include <cmath>

#include "longctx/optim.hpp"

namespace longctx {

ErrorBank::ErrorBank(int capacity) : capacity_(capacity) {
    if (capacity < 1) throw std::invalid_argument("ErrorBank: capacity must be >= 1");
    ring_.reserve(size_t(capacity));
}

void ErrorBank::push(const Eigen::VectorXd& residual) {
    if (int(ring_.size()) < capacity_) {
        ring_.push_back(residual);
    } else {
        ring_[head_] = residual;
        head_ = (head_ + 1) % size_t(capacity_);
    }
    ++insertions_;
}

const Eigen::VectorXd& ErrorBank::sample(Rng& rng) const {
    if (ring_.empty()) throw std::logic_error("ErrorBank::sample: empty bank");
    return ring_[size_t(rng.uniform_int(0, int64_t(ring_.size()) - 1))];
}

void validate(const PerturbationConfig& cfg) {
    if (cfg.bernoulli_p < 0.0 || cfg.bernoulli_p > 1.0)
        throw std::invalid_argument("PerturbationConfig: bernoulli_p must be in [0, 1]");
    if (cfg.scale < 0.0) throw std::invalid_argument("PerturbationConfig: scale must be >= 0");
}

void capture_residual(ErrorBank& bank, const Eigen::VectorXd& prediction,
                      const Eigen::VectorXd& target) {
    if (prediction.size() != target.size())
        throw std::invalid_argument("capture_residual: shape mismatch");
    bank.push(prediction - target);
}

std::vector<Eigen::VectorXd> perturb_context(const std::vector<Eigen::VectorXd>& context,
                                             const ErrorBank& bank, const PerturbationConfig& cfg,
                                             Rng& rng) {
    validate(cfg);
    std::vector<Eigen::VectorXd> out = context;
    if (bank.empty() || cfg.bernoulli_p == 0.0 || cfg.scale == 0.0) return out;
    for (auto& chunk : out) {
        if (rng.uniform() < cfg.bernoulli_p) {
            const Eigen::VectorXd& e = bank.sample(rng);
            if (e.size() != chunk.size())
                throw std::invalid_argument("perturb_context: residual shape mismatch");
            chunk += cfg.scale * e;
        }
    }
    return out;
}

ContextView context_view_of_chunks(const std::vector<Eigen::VectorXd>& chunks,
                                   const CacheEncoder& enc, const CacheConfig& cache_cfg) {
    SlowFastCache cache(cache_cfg);
    for (size_t i = 0; i < chunks.size(); ++i)
        cache.append(make_token_entry(enc, chunks[i], long(i)));
    return cache.context_view();
}

double erft_step(ScoreParams& teacher, std::span<const ContinuationExample> batch,
                 ErrorBank& bank, const PerturbationConfig& cfg, double lr, Rng& rng,
                 const CacheEncoder& enc, const CacheConfig& cache_cfg,
                 const DiffusionSchedule& sched) {
    if (batch.empty()) throw std::invalid_argument("erft_step: empty batch");
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(teacher.net.theta.size());
    double loss = 0.0;
    std::vector<Eigen::VectorXd> fresh;
    for (const auto& ex : batch) {
        std::vector<Eigen::VectorXd> ctx = perturb_context(ex.context_chunks, bank, cfg, rng);
        ContextView view = context_view_of_chunks(ctx, enc, cache_cfg);
        AttentionInput attn =
            build_attention_input(view, teacher.net.cfg.key_dim, teacher.net.cfg.val_dim);
        int tidx = int(rng.uniform_int(1, sched.steps));
        Eigen::VectorXd eps = rng.normal_vec(ex.target_x0.size());
        Eigen::VectorXd x_t = add_noise(ex.target_x0, eps, tidx, sched);
        NetTrace trace;
        Eigen::VectorXd pred =
            net_forward(teacher.net, x_t, time_features(sched, tidx), ex.cond, &attn, &trace);
        Eigen::VectorXd resid = pred - ex.target_x0;
        loss += resid.squaredNorm();
        net_vjp(teacher.net, trace, (2.0 / double(batch.size())) * resid, grad);
        fresh.push_back(resid);  // the recycling
    }
    loss /= double(batch.size());
    if (!std::isfinite(loss)) throw TrainingDiverged("erft_step: non-finite loss");
    teacher.net.theta -= lr * grad;
    for (const auto& r : fresh) bank.push(r);
    return loss;
}

ContinuationExample sample_continuation(const SceneProcess& proc, const ConditionModel& cm,
                                        int context_chunks, Rng& rng) {
    Trajectory tr = sample_trajectory(proc, context_chunks + 1, rng);
    ContinuationExample ex;
    ex.context_chunks.assign(tr.chunks.begin(), tr.chunks.end() - 1);
    ex.cond = sample_condition(cm, tr.identity, rng);
    ex.target_x0 = tr.chunks.back();
    ex.target_start_frame = long(context_chunks) * proc.chunk_size;
    return ex;
}

ScoreParams teacher_pretrain(const TeacherPretrainConfig& cfg, const MetricFn& metric) {
    Rng master(cfg.seed);
    ScoreParams teacher = make_score(cfg.net_cfg, ScoreRole::TeacherScore, master.sub("init"));
    CacheEncoder enc = make_cache_encoder(cfg.proc.frame_dim, cfg.net_cfg.key_dim,
                                          cfg.net_cfg.val_dim,
                                          Rng(cfg.domain_seed).sub("cache-encoder"));
    AdamState opt(teacher.net.theta.size());
    Rng trng = master.sub("train");
    for (int it = 0; it < cfg.steps; ++it) {
        Rng irng = trng.sub(uint64_t(it));
        std::vector<DsmSample> batch(size_t(cfg.batch));
        for (int b = 0; b < cfg.batch; ++b) {
            Rng br = irng.sub(uint64_t(b));
            int k = int(br.uniform_int(cfg.min_context_chunks, cfg.max_context_chunks));
            ContinuationExample ex = sample_continuation(cfg.proc, cfg.cm, k, br);
            DsmSample& s = batch[size_t(b)];
            s.x0 = ex.target_x0;
            s.tidx = int(br.uniform_int(1, cfg.sched.steps));
            s.cond = ex.cond;
            s.view = context_view_of_chunks(ex.context_chunks, enc, cfg.cache);
        }
        Eigen::VectorXd grad = Eigen::VectorXd::Zero(teacher.net.theta.size());
        Rng nrng = irng.sub("noise");
        double loss = dsm_gradient(teacher.net, batch, nrng, cfg.sched, grad);
        if (!std::isfinite(loss)) throw TrainingDiverged("teacher_pretrain: loss diverged");
        clip_grad_norm(grad, cfg.clip);
        double lr = cfg.lr * std::pow(cfg.lr_floor_frac, double(it) / double(cfg.steps));
        opt.step(teacher.net.theta, grad, lr);
        if (metric && (it % cfg.metric_every == 0 || it + 1 == cfg.steps))
            metric(nlohmann::json{{"stage", "teacher"}, {"step", it}, {"loss", loss}});
    }
    return teacher;
}

ErftResult teacher_erft(const TeacherPretrainConfig& base, const ErftConfig& cfg,
                        const ScoreParams& pretrained, const MetricFn& metric) {
    Rng master(cfg.seed);
    CacheEncoder enc = make_cache_encoder(base.proc.frame_dim, base.net_cfg.key_dim,
                                          base.net_cfg.val_dim,
                                          Rng(base.domain_seed).sub("cache-encoder"));
    ScoreParams teacher = pretrained;
    ErrorBank bank(cfg.bank_capacity);
    Rng trng = master.sub("train");
    for (int it = 0; it < cfg.steps; ++it) {
        Rng irng = trng.sub(uint64_t(it));
        std::vector<ContinuationExample> batch;
        for (int b = 0; b < cfg.batch; ++b) {
            Rng br = irng.sub(uint64_t(b));
            int k = int(br.uniform_int(cfg.min_context_chunks, cfg.max_context_chunks));
            batch.push_back(sample_continuation(base.proc, base.cm, k, br));
        }
        Rng srng = irng.sub("step");
        double loss = erft_step(teacher, batch, bank, cfg.perturb, cfg.lr, srng, enc, base.cache,
                                base.sched);
        if (metric && (it % cfg.metric_every == 0 || it + 1 == cfg.steps))
            metric(nlohmann::json{{"stage", "erft"}, {"step", it}, {"loss", loss},
                                  {"bank_size", bank.size()}});
    }
    return ErftResult(std::move(teacher), std::move(bank));
}

void save_bank(const std::string& path, const ErrorBank& bank) {
    TensorMap t;
    Eigen::VectorXd meta(2);
    meta << double(bank.capacity()), double(bank.insertions());
    t["meta"] = tensor_of(meta);
    const auto& entries = bank.entries();
    if (!entries.empty()) {
        Eigen::MatrixXd m(entries[0].size(), Eigen::Index(entries.size()));
        for (size_t i = 0; i < entries.size(); ++i) m.col(Eigen::Index(i)) = entries[i];
        t["residuals"] = tensor_of(m);
    }
    save_tensors(path, t);
}

ErrorBank load_bank(const std::string& path) {
    TensorMap t = load_tensors(path);
    Eigen::VectorXd meta = as_vector(t.at("meta"));
    ErrorBank bank(int(meta[0]));
    if (t.count("residuals")) {
        Eigen::MatrixXd m = as_matrix(t.at("residuals"));
        for (Eigen::Index c = 0; c < m.cols(); ++c) bank.push(m.col(c));
    }
    return bank;
}

}  // namespace longctx
