#include "longctx/rollout.hpp"

#include <cmath>

#include "longctx/optim.hpp"

namespace longctx {

void validate(const CurriculumSchedule& c) {
    if (c.l0 < 1 || c.l1 < c.l0) throw std::invalid_argument("curriculum: need 1 <= l0 <= l1");
    if (c.decay_steps < 1) throw std::invalid_argument("curriculum: decay_steps must be >= 1");
}

int sample_rollout_length(const CurriculumSchedule& c, Rng& rng) {
    long s = std::min(c.step, c.decay_steps);
    long upper = (s * long(c.l1 - c.l0)) / c.decay_steps + c.l0 + 1;  // exclusive
    return int(rng.uniform_int(c.l0, upper - 1));
}

int sample_random_exit(int T, Rng& rng) {
    if (T < 1) throw std::invalid_argument("sample_random_exit: T must be >= 1");
    return int(rng.uniform_int(1, T));
}

void validate(const RolloutPlan& plan, int schedule_steps) {
    if (plan.exit_step < 1 || plan.exit_step > schedule_steps)
        throw std::invalid_argument("RolloutPlan: exit_step out of range");
    if (plan.teacher_len < 1) throw std::invalid_argument("RolloutPlan: teacher_len must be >= 1");
    if (plan.context_len < 0) throw std::invalid_argument("RolloutPlan: context_len must be >= 0");
    if (plan.context_len + plan.teacher_len > plan.length)
        throw std::invalid_argument("RolloutPlan: context + target exceeds rollout length");
}

RolloutResult self_rollout(const GeneratorParams& gen, const RolloutPlan& plan,
                           const DiffusionSchedule& sched, const CacheConfig& cache_cfg,
                           Rng rollout_rng, const RolloutOptions& opts) {
    validate(plan, sched.steps);
    const int T = sched.steps;
    const int D = gen.net.cfg.x_dim;
    const int L = plan.length;
    const int ctx_begin = L - plan.context_len - plan.teacher_len;
    const int ctx_end = L - plan.teacher_len;

    RolloutResult res;
    res.cache = SlowFastCache(cache_cfg);
    res.chunks.reserve(size_t(L));
    res.logs.reserve(size_t(L));

    for (int i = 0; i < L; ++i) {
        bool is_ctx = i >= ctx_begin && i < ctx_end;
        bool is_tgt = i >= ctx_end;
        ContextView view = res.cache.context_view();
        if (i == ctx_end) res.boundary_view = view;

        ChunkLog log;
        log.is_context = is_ctx;
        log.is_target = is_tgt;
        Eigen::VectorXd x0;

        auto ov = opts.overrides.find(i);
        if (ov != opts.overrides.end()) {
            x0 = ov->second;
            log.injected = true;
        } else {
            Rng crng = rollout_rng.sub(uint64_t(i));
            int evals = is_ctx ? T : plan.exit_step;
            AttentionInput attn = build_attention_input(view, gen.net.cfg.key_dim,
                                                        gen.net.cfg.val_dim,
                                                        opts.bounded_positions);
            Eigen::VectorXd x = crng.normal_vec(D);
            int tidx = T;
            for (int n = 1; n <= evals; ++n) {
                tidx = T - n + 1;
                x0 = net_forward(gen.net, x, time_features(sched, tidx), plan.cond, &attn);
                if (n < evals) x = add_noise(x0, crng.normal_vec(D), tidx - 1, sched);
            }
            if (!x0.allFinite())
                throw RolloutFailed("self_rollout: non-finite chunk", i);
            log.denoise_evals = evals;
            log.exit_timestep = tidx;
            if (is_tgt && opts.collect_tapes) {
                ExitTape tape;
                tape.x_in = x;
                tape.tidx = tidx;
                tape.view = view;
                res.target_tapes.push_back(std::move(tape));
                res.target_indices.push_back(i);
            }
        }
        res.chunks.push_back(x0);
        res.logs.push_back(log);
        update_cache(gen, x0, res.cache);
        res.cache.check_invariants();
    }
    if (plan.teacher_len == L) res.boundary_view = ContextView{};
    return res;
}

std::pair<std::vector<Eigen::VectorXd>, std::vector<Eigen::VectorXd>> split_context_target(
    const std::vector<Eigen::VectorXd>& chunks, const RolloutPlan& plan) {
    int L = int(chunks.size());
    if (plan.length != L) throw std::invalid_argument("split_context_target: plan length mismatch");
    if (plan.context_len + plan.teacher_len > L)
        throw std::invalid_argument("split_context_target: window out of range");
    std::vector<Eigen::VectorXd> ctx, tgt;
    for (int i = L - plan.context_len - plan.teacher_len; i < L - plan.teacher_len; ++i)
        ctx.push_back(chunks[size_t(i)]);
    for (int i = L - plan.teacher_len; i < L; ++i) tgt.push_back(chunks[size_t(i)]);
    return {ctx, tgt};
}

Eigen::VectorXd make_event_chunk(const SceneProcess& proc, double identity_scale, Rng& rng) {
    Eigen::VectorXd w = identity_scale * rng.normal_vec(proc.identity_dim);
    Eigen::VectorXd mu = proc.mixing * w;
    Eigen::VectorXd chunk(proc.chunk_dim());
    for (int i = 0; i < proc.chunk_size; ++i)
        chunk.segment(Eigen::Index(i) * proc.frame_dim, proc.frame_dim) =
            mu + proc.noise_scale * rng.normal_vec(proc.frame_dim);
    return chunk;
}

namespace {

struct WindowSample {
    Eigen::VectorXd window;
    Eigen::VectorXd cond;
    std::vector<ExitTape> tapes;  // per chunk
};

}  // namespace

double student_first_chunk_kl(const GeneratorParams& gen, const SceneProcess& proc,
                              const ConditionModel& cm, const DiffusionSchedule& sched,
                              const CacheConfig& cache_cfg, int n_samples, Rng rng) {
    int D = proc.chunk_dim();
    Eigen::MatrixXd S(n_samples, D);
    for (int i = 0; i < n_samples; ++i) {
        Rng r = rng.sub(uint64_t(i));
        RolloutPlan plan;
        plan.length = 1;
        plan.exit_step = sample_random_exit(sched.steps, r);
        plan.teacher_len = 1;
        plan.context_len = 0;
        plan.cond = sample_condition_marginal(cm, proc, r);
        RolloutResult res = self_rollout(gen, plan, sched, cache_cfg, r.sub("roll"));
        S.row(i) = res.chunks[0].transpose();
    }
    GaussianDist fit;
    fit.mean = S.colwise().mean().transpose();
    Eigen::MatrixXd centered = S.rowwise() - fit.mean.transpose();
    fit.cov = centered.transpose() * centered / double(n_samples - 1);
    fit.cov.diagonal().array() += 1e-6;
    GaussianDist data = window_joint(proc, proc.chunk_size);
    return kl_gaussian(fit, data).value;
}

Stage1Result train_stage1(const Stage1Config& cfg, const MetricFn& metric) {
    validate(cfg.proc);
    const DiffusionSchedule& sched = cfg.sched;
    const int D = cfg.proc.chunk_dim();
    const int W = cfg.window_chunks * D;
    if (cfg.gen_cfg.x_dim != D) throw std::invalid_argument("train_stage1: gen net x_dim mismatch");
    if (cfg.fake_cfg.x_dim != W) throw std::invalid_argument("train_stage1: fake net x_dim mismatch");

    Rng master(cfg.seed);
    GeneratorParams gen = make_generator(cfg.gen_cfg, cfg.proc.frame_dim, master.sub("gen-init"));
    gen.enc = make_cache_encoder(cfg.proc.frame_dim, cfg.gen_cfg.key_dim, cfg.gen_cfg.val_dim,
                                 Rng(cfg.domain_seed).sub("cache-encoder"));
    ScoreParams fake = make_score(cfg.fake_cfg, ScoreRole::FakeScore, master.sub("fake-init"));
    AdamState gen_opt(gen.net.theta.size());
    AdamState fake_opt(fake.net.theta.size());
    Rng trng = master.sub("train");

    Stage1Result out{gen, fake, 0.0, 0.0};
    out.kl_initial = student_first_chunk_kl(gen, cfg.proc, cfg.cm, sched, cfg.cache,
                                            cfg.kl_fit_samples, master.sub("kl-init"));

    auto roll_window = [&](Rng& r, WindowSample& ws) {
        RolloutPlan plan;
        plan.length = cfg.window_chunks;
        plan.exit_step = sample_random_exit(sched.steps, r);
        plan.teacher_len = cfg.window_chunks;  // the whole rollout is target
        plan.context_len = 0;
        plan.cond = sample_condition_marginal(cfg.cm, cfg.proc, r);
        RolloutOptions opts;
        opts.collect_tapes = true;
        RolloutResult res = self_rollout(gen, plan, sched, cfg.cache, r.sub("roll"), opts);
        ws.window.resize(W);
        for (int c = 0; c < cfg.window_chunks; ++c)
            ws.window.segment(Eigen::Index(c) * D, D) = res.chunks[size_t(c)];
        ws.cond = plan.cond;
        ws.tapes = std::move(res.target_tapes);
    };

    double last_fake_loss = 0.0, last_gnorm = 0.0;
    for (int it = 0; it < cfg.steps; ++it) {
        Rng irng = trng.sub(uint64_t(it));
        std::vector<WindowSample> windows(size_t(cfg.batch));
        for (int b = 0; b < cfg.batch; ++b) {
            Rng br = irng.sub("window").sub(uint64_t(b));
            roll_window(br, windows[size_t(b)]);
        }
        // fake score DSM (window-level, no attention)
        int nf = it < cfg.fake_boost_iters ? cfg.fake_steps * 5 : cfg.fake_steps;
        Rng frng = irng.sub("fake");
        for (int fs = 0; fs < nf; ++fs) {
            std::vector<DsmSample> batch(windows.size());
            for (size_t b = 0; b < windows.size(); ++b) {
                batch[b].x0 = windows[b].window;
                batch[b].tidx = sample_random_exit(sched.steps, frng);
                batch[b].cond = windows[b].cond;
            }
            Eigen::VectorXd fgrad = Eigen::VectorXd::Zero(fake.net.theta.size());
            last_fake_loss = dsm_gradient(fake.net, batch, frng, sched, fgrad);
            if (!std::isfinite(last_fake_loss))
                throw TrainingDiverged("train_stage1: fake score loss diverged");
            clip_grad_norm(fgrad, cfg.fake_clip);
            fake_opt.step(fake.net.theta, fgrad, cfg.fake_lr);
        }
        if (it >= cfg.gen_warmup) {
            Rng grng = irng.sub("gen");
            DmdBatch batch;
            batch.sched = &sched;
            for (auto& ws : windows) {
                DmdSample s;
                s.x0 = ws.window;
                s.tidx = sample_random_exit(sched.steps, grng);
                s.x_t = add_noise(s.x0, grng.normal_vec(W), s.tidx, sched);
                s.cond = ws.cond;
                const std::vector<ExitTape>* tapes = &ws.tapes;
                const GeneratorParams* gp = &gen;
                const Eigen::VectorXd* wcond = &ws.cond;
                s.vjp = [tapes, gp, wcond, D, &sched](const Eigen::VectorXd& cot,
                                                      Eigen::VectorXd& grad) {
                    for (size_t c = 0; c < tapes->size(); ++c) {
                        const ExitTape& tp = (*tapes)[c];
                        AttentionInput attn = build_attention_input(tp.view, gp->net.cfg.key_dim,
                                                                    gp->net.cfg.val_dim);
                        NetTrace trace;
                        net_forward(gp->net, tp.x_in, time_features(sched, tp.tidx), *wcond,
                                    &attn, &trace);
                        net_vjp(gp->net, trace, cot.segment(Eigen::Index(c) * D, D), grad);
                    }
                };
                batch.samples.push_back(std::move(s));
            }
            ScoreFn fake_fn = [&](const DmdSample& s) {
                return implied_score(fake.net, s.x_t, s.tidx, s.cond, nullptr, sched);
            };
            ScoreFn teacher_fn = [&](const DmdSample& s) {
                GaussianDist g = window_joint_given_condition(cfg.proc, cfg.cm, s.cond,
                                                              cfg.window_chunks * cfg.proc.chunk_size);
                return gaussian_marginal_score(s.x_t, s.tidx, g, sched);
            };
            Eigen::VectorXd grad = dmd_gradient(gen.net.theta.size(), batch, fake_fn, teacher_fn);
            last_gnorm = clip_grad_norm(grad, cfg.clip);
            double lr = cfg.gen_lr * std::pow(cfg.lr_decay, double(it) / double(cfg.steps));
            gen_opt.step(gen.net.theta, grad, lr);
        }
        if (metric && (it % cfg.metric_every == 0 || it + 1 == cfg.steps)) {
            nlohmann::json rec{{"stage", 1},
                               {"step", it},
                               {"fake_loss", last_fake_loss},
                               {"grad_norm", last_gnorm}};
            metric(rec);
        }
    }
    out.gen = gen;
    out.fake = fake;
    out.kl_final = student_first_chunk_kl(gen, cfg.proc, cfg.cm, sched, cfg.cache,
                                          cfg.kl_fit_samples, master.sub("kl-final"));
    return out;
}

Stage2Result train_stage2(const Stage2Config& cfg, const GeneratorParams& init_gen,
                          const MetricFn& metric) {
    validate(cfg.proc);
    validate(cfg.curriculum);
    const DiffusionSchedule& sched = cfg.sched;
    const int D = cfg.proc.chunk_dim();
    if (cfg.teacher_kind == TeacherKind::Trained && !cfg.trained_teacher.has_value())
        throw std::invalid_argument("train_stage2: trained teacher requested but not provided");

    Rng master(cfg.seed);
    GeneratorParams gen = init_gen;
    ScoreParams fake = make_score(cfg.fake_cfg, ScoreRole::FakeScore, master.sub("fake-init"));
    AdamState gen_opt(gen.net.theta.size());
    AdamState fake_opt(fake.net.theta.size());
    Rng trng = master.sub("train");

    TeacherHandle teacher;
    if (cfg.teacher_kind == TeacherKind::Analytic)
        teacher = AnalyticTeacher{&cfg.proc, &cfg.cm, cfg.teacher_scope};
    else
        teacher = &*cfg.trained_teacher;

    struct TargetSample {
        Eigen::VectorXd x0;
        Eigen::VectorXd cond;
        ContextView view;
        long start_frame = 0;
        ExitTape tape;
    };

    for (int it = 0; it < cfg.steps; ++it) {
        Rng irng = trng.sub(uint64_t(it));
        CurriculumSchedule cur = cfg.curriculum;
        cur.step = it;

        std::vector<TargetSample> samples;
        long consolidated = 0, evicted = 0;
        int last_L = 0, last_r = 0, last_c = 0;
        for (int b = 0; b < cfg.rollouts_per_iter; ++b) {
            Rng br = irng.sub("rollout").sub(uint64_t(b));
            RolloutPlan plan;
            plan.length = sample_rollout_length(cur, br);
            plan.exit_step = sample_random_exit(sched.steps, br);
            plan.teacher_len = cfg.teacher_len;
            int cmax = plan.length - plan.teacher_len;
            plan.context_len = cmax >= 1 ? int(br.uniform_int(1, cmax)) : 0;
            plan.cond = sample_condition_marginal(cfg.cm, cfg.proc, br);
            RolloutOptions opts;
            opts.collect_tapes = true;
            if (cfg.inject_prob > 0.0 && plan.length >= 8 &&
                br.uniform() < cfg.inject_prob) {
                int at = int(br.uniform_int(3, plan.length - plan.teacher_len - 2));
                Rng er = br.sub("event");
                opts.overrides[at] = make_event_chunk(cfg.proc, cfg.inject_scale, er);
                opts.overrides[at + 1] = make_event_chunk(cfg.proc, cfg.inject_scale, er);
            }
            RolloutResult res = self_rollout(gen, plan, sched, cfg.cache, br.sub("roll"), opts);
            consolidated += res.cache.counters().consolidated;
            evicted += res.cache.counters().evicted;
            last_L = plan.length;
            last_r = plan.exit_step;
            last_c = plan.context_len;
            for (size_t k = 0; k < res.target_tapes.size(); ++k) {
                TargetSample ts;
                int idx = res.target_indices[k];
                ts.x0 = res.chunks[size_t(idx)];
                ts.cond = plan.cond;
                ts.view = res.target_tapes[k].view;
                ts.start_frame = long(idx) * cfg.proc.chunk_size;
                ts.tape = std::move(res.target_tapes[k]);
                samples.push_back(std::move(ts));
            }
        }
        if (samples.empty()) continue;

        int nf = it < cfg.fake_boost_iters ? cfg.fake_steps * 4 : cfg.fake_steps;
        Rng frng = irng.sub("fake");
        double last_fake_loss = 0.0;
        for (int fs = 0; fs < nf; ++fs) {
            std::vector<DsmSample> batch(samples.size());
            for (size_t k = 0; k < samples.size(); ++k) {
                batch[k].x0 = samples[k].x0;
                batch[k].tidx = sample_random_exit(sched.steps, frng);
                batch[k].cond = samples[k].cond;
                batch[k].view = samples[k].view;
            }
            Eigen::VectorXd fgrad = Eigen::VectorXd::Zero(fake.net.theta.size());
            last_fake_loss = dsm_gradient(fake.net, batch, frng, sched, fgrad);
            if (!std::isfinite(last_fake_loss))
                throw TrainingDiverged("train_stage2: fake score loss diverged");
            clip_grad_norm(fgrad, cfg.fake_clip);
            fake_opt.step(fake.net.theta, fgrad, cfg.fake_lr);
        }

        double gnorm = 0.0;
        if (it >= cfg.gen_warmup) {
            Rng grng = irng.sub("gen");
            DmdBatch batch;
            batch.sched = &sched;
            for (auto& ts : samples) {
                DmdSample s;
                s.x0 = ts.x0;
                s.tidx = sample_random_exit(sched.steps, grng);
                s.x_t = add_noise(s.x0, grng.normal_vec(D), s.tidx, sched);
                s.cond = ts.cond;
                s.context = ts.view;
                s.target_start_frame = ts.start_frame;
                const ExitTape* tape = &ts.tape;
                const GeneratorParams* gp = &gen;
                const Eigen::VectorXd* cond = &ts.cond;
                s.vjp = [tape, gp, cond, &sched](const Eigen::VectorXd& cot,
                                                 Eigen::VectorXd& grad) {
                    AttentionInput attn = build_attention_input(tape->view, gp->net.cfg.key_dim,
                                                                gp->net.cfg.val_dim);
                    NetTrace trace;
                    net_forward(gp->net, tape->x_in, time_features(sched, tape->tidx), *cond,
                                &attn, &trace);
                    net_vjp(gp->net, trace, cot, grad);
                };
                batch.samples.push_back(std::move(s));
            }
            ScoreFn fake_fn = [&](const DmdSample& s) {
                AttentionInput attn = build_attention_input(*s.context, fake.net.cfg.key_dim,
                                                            fake.net.cfg.val_dim);
                return implied_score(fake.net, s.x_t, s.tidx, s.cond, &attn, sched);
            };
            ScoreFn teacher_fn = [&](const DmdSample& s) {
                return teacher_score(teacher, s.x_t, s.tidx, s.cond, *s.context,
                                     s.target_start_frame, sched);
            };
            Eigen::VectorXd grad = cdmd_gradient(gen.net.theta.size(), batch, fake_fn, teacher_fn);
            gnorm = clip_grad_norm(grad, cfg.clip);
            double lr = cfg.gen_lr * std::pow(cfg.lr_decay, double(it) / double(cfg.steps));
            gen_opt.step(gen.net.theta, grad, lr);
        }

        if (metric && (it % cfg.metric_every == 0 || it + 1 == cfg.steps)) {
            nlohmann::json rec{{"stage", 2},
                               {"step", it},
                               {"rollout_len", last_L},
                               {"exit", last_r},
                               {"context_len", last_c},
                               {"fake_loss", last_fake_loss},
                               {"grad_norm", gnorm},
                               {"consolidated", consolidated},
                               {"evicted", evicted}};
            metric(rec);
        }
    }
    return Stage2Result{gen, fake};
}

}  // namespace longctx
