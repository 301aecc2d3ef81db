#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "longctx/model.hpp"
#include "longctx/rollout.hpp"
#include "longctx/serialize.hpp"

using namespace longctx;

namespace {

struct Fixture {
    SceneProcess proc;
    ConditionModel cm;
    DiffusionSchedule sched;
    CacheConfig cache_cfg;
    NetConfig net_cfg;

    Fixture() {
        Rng rng(404);
        proc = make_scene(4, 8, 4, 3.0, 0.9, 0.3, rng.sub("scene"));
        cm = make_condition_model(proc, 3, 0.7, rng.sub("cond"));
        sched = make_schedule(4);
        cache_cfg = CacheConfig{};
        net_cfg = NetConfig{proc.chunk_dim(), 3, 16, 20, 24, NetArch::Mlp2};
    }
};

ContextView random_view(const Fixture& fx, const CacheEncoder& enc, int n_chunks, Rng& rng) {
    SlowFastCache cache(fx.cache_cfg);
    Trajectory tr = sample_trajectory(fx.proc, n_chunks, rng);
    for (int i = 0; i < n_chunks; ++i)
        cache.append(make_token_entry(enc, tr.chunks[size_t(i)], i));
    return cache.context_view();
}

}  // namespace

TEST_CASE("net gradients match central finite differences per parameter group") {
    Fixture fx;
    Rng rng(71);

    for (bool attention : {true, false}) {
        for (NetArch arch : {NetArch::Mlp2, NetArch::Linear}) {
            NetConfig cfg = fx.net_cfg;
            cfg.arch = arch;
            if (!attention) {
                cfg.key_dim = 0;
                cfg.val_dim = 0;
            }
            ChunkNet net = init_net(cfg, rng.sub("init"), 0.15);
            GeneratorParams gen;
            gen.net = net;
            gen.enc = make_cache_encoder(fx.proc.frame_dim, 16, 20, rng.sub("enc"));

            for (int point = 0; point < 20; ++point) {
                Rng prng = rng.sub("pt").sub(uint64_t(point));
                Eigen::VectorXd x = prng.normal_vec(cfg.x_dim);
                Eigen::VectorXd cond = prng.normal_vec(cfg.cond_dim);
                int tidx = int(prng.uniform_int(1, fx.sched.steps));
                ContextView view;
                AttentionInput attn;
                const AttentionInput* ap = nullptr;
                if (attention) {
                    view = random_view(fx, gen.enc, 2 + int(prng.uniform_int(0, 8)), prng);
                    attn = build_attention_input(view, cfg.key_dim, cfg.val_dim);
                    ap = &attn;
                }
                Eigen::VectorXd cot = prng.normal_vec(cfg.x_dim);
                auto scalar = [&](const ChunkNet& n) {
                    return cot.dot(net_forward(n, x, time_features(fx.sched, tidx), cond, ap));
                };
                NetTrace trace;
                net_forward(net, x, time_features(fx.sched, tidx), cond, ap, &trace);
                Eigen::VectorXd grad = Eigen::VectorXd::Zero(net.theta.size());
                net_vjp(net, trace, cot, grad);

                // probe a handful of coordinates in every parameter group
                for (const auto& block : net_layout(cfg)) {
                    for (int probe = 0; probe < 3; ++probe) {
                        Eigen::Index k =
                            block.offset + Eigen::Index(prng.uniform_int(0, block.size() - 1));
                        const double h = 1e-6;
                        ChunkNet np = net, nm = net;
                        np.theta[k] += h;
                        nm.theta[k] -= h;
                        double fd = (scalar(np) - scalar(nm)) / (2.0 * h);
                        double denom = std::max({1.0, std::abs(fd), std::abs(grad[k])});
                        CHECK(std::abs(grad[k] - fd) / denom < 1e-4);
                    }
                }
            }
        }
    }
}

TEST_CASE("generate_chunk is well-posed on an empty cache") {
    Fixture fx;
    Rng rng(81);
    GeneratorParams gen = make_generator(fx.net_cfg, fx.proc.frame_dim, rng.sub("gen"));
    SlowFastCache cache(fx.cache_cfg);
    Eigen::VectorXd x = rng.normal_vec(fx.proc.chunk_dim());
    Eigen::VectorXd cond = rng.normal_vec(3);
    Eigen::VectorXd out = generate_chunk(gen, x, fx.sched.steps, cond, cache, fx.sched);
    CHECK(out.allFinite());
    CHECK(out.size() == fx.proc.chunk_dim());
}

TEST_CASE("bounded positions make the output a function of the view alone") {
    Fixture fx;
    Rng rng(91);
    GeneratorParams gen = make_generator(fx.net_cfg, fx.proc.frame_dim, rng.sub("gen"));

    // two caches whose histories differ (extra early appends fall out of the
    // fast FIFO and are discarded) but whose views hold identical content
    Rng crng = rng.sub("chunks");
    std::vector<Eigen::VectorXd> shared;
    for (int i = 0; i < 9; ++i)
        shared.push_back(sample_trajectory(fx.proc, 1, crng).chunks[0]);

    CacheConfig cfg = fx.cache_cfg;
    cfg.tau = -1.0;  // nothing consolidates (similarity is never < -1)
    SlowFastCache ca(cfg), cb(cfg);
    for (int i = 0; i < 9; ++i) ca.append(make_token_entry(gen.enc, shared[size_t(i)], i));
    // cb: same sink, then 4 extra chunks that will be pushed out of fast
    for (int i = 0; i < 3; ++i) cb.append(make_token_entry(gen.enc, shared[size_t(i)], i));
    for (int i = 0; i < 4; ++i)
        cb.append(make_token_entry(gen.enc, sample_trajectory(fx.proc, 1, crng).chunks[0], 3 + i));
    for (int i = 3; i < 9; ++i)
        cb.append(make_token_entry(gen.enc, shared[size_t(i)], 4 + i));

    ContextView va = ca.context_view(), vb = cb.context_view();
    REQUIRE(va.size() == vb.size());
    bool births_differ = false;
    for (size_t i = 0; i < va.size(); ++i) {
        CHECK((va[i].key - vb[i].key).norm() == 0.0);
        CHECK(va[i].position == vb[i].position);
        if (va[i].birth_index != vb[i].birth_index) births_differ = true;
    }
    CHECK(births_differ);

    Eigen::VectorXd x = rng.normal_vec(fx.proc.chunk_dim());
    Eigen::VectorXd cond = rng.normal_vec(3);
    Eigen::VectorXd oa = generate_chunk(gen, x, 2, cond, va, fx.sched);
    Eigen::VectorXd ob = generate_chunk(gen, x, 2, cond, vb, fx.sched);
    CHECK((oa - ob).norm() == 0.0);

    // with raw birth positions the outputs must differ
    Eigen::VectorXd ua = generate_chunk(gen, x, 2, cond, va, fx.sched, false);
    Eigen::VectorXd ub = generate_chunk(gen, x, 2, cond, vb, fx.sched, false);
    CHECK((ua - ub).norm() > 0.0);
}

TEST_CASE("update_cache writes keys from the clean chunk only") {
    Fixture fx;
    Rng rng(101);
    GeneratorParams gen = make_generator(fx.net_cfg, fx.proc.frame_dim, rng.sub("gen"));
    SlowFastCache c1(fx.cache_cfg), c2(fx.cache_cfg);
    Eigen::VectorXd chunk = sample_trajectory(fx.proc, 1, rng).chunks[0];
    update_cache(gen, chunk, c1);
    update_cache(gen, chunk, c2);  // same clean chunk, independent of any noisy state
    CHECK(c1.serialize() == c2.serialize());
    ContextView v = c1.context_view();
    Eigen::Map<const Eigen::MatrixXd> frames(chunk.data(), fx.proc.frame_dim, fx.proc.chunk_size);
    CHECK((v[0].key - encode_key(gen.enc, frames)).norm() == 0.0);
}

TEST_CASE("consecutive identical chunks produce a discard decision") {
    Fixture fx;
    Rng rng(111);
    GeneratorParams gen = make_generator(fx.net_cfg, fx.proc.frame_dim, rng.sub("gen"));
    CacheConfig cfg = fx.cache_cfg;
    cfg.n_sink = 0;
    cfg.consolidation_interval = 1;
    SlowFastCache cache(cfg);
    Eigen::VectorXd chunk = sample_trajectory(fx.proc, 1, rng).chunks[0];
    update_cache(gen, chunk, cache);
    AppendReport rep = update_cache(gen, chunk, cache);
    REQUIRE(rep.decision.has_value());
    CHECK(*rep.decision == Decision::Discard);
}

TEST_CASE("fake_score_update basics") {
    Fixture fx;
    Rng rng(121);
    NetConfig cfg = fx.net_cfg;
    cfg.key_dim = 0;
    cfg.val_dim = 0;
    ScoreParams score = make_score(cfg, ScoreRole::FakeScore, rng.sub("score"));

    std::vector<DsmSample> batch;
    for (int i = 0; i < 8; ++i) {
        DsmSample s;
        s.x0 = sample_trajectory(fx.proc, 1, rng).chunks[0];
        s.tidx = int(rng.uniform_int(1, fx.sched.steps));
        s.cond = rng.normal_vec(3);
        batch.push_back(std::move(s));
    }
    Eigen::VectorXd before = score.net.theta;
    Rng r0 = rng.sub("lr0");
    double loss0 = fake_score_update(score, batch, 0.0, r0, fx.sched);
    CHECK((score.net.theta - before).norm() == 0.0);  // lr = 0 leaves params unchanged
    CHECK(loss0 > 0.0);

    // loss decreases over 200 steps on a fixed population
    Rng r1 = rng.sub("train");
    double first_avg = 0.0, last_avg = 0.0;
    for (int it = 0; it < 200; ++it) {
        double l = fake_score_update(score, batch, 2e-3, r1, fx.sched);
        if (it < 20) first_avg += l / 20.0;
        if (it >= 180) last_avg += l / 20.0;
    }
    CHECK(last_avg < first_avg);
}

TEST_CASE("linear score net at optimum matches the analytic score") {
    // per-timestep populations: the DSM optimum is affine in x_t, which the
    // linear architecture represents exactly
    Fixture fx;
    Rng rng(131);
    GaussianDist pop;
    pop.mean = rng.normal_vec(6);
    Eigen::MatrixXd A(6, 6);
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 6; ++j) A(i, j) = 0.4 * rng.normal();
    pop.cov = A * A.transpose() + 0.5 * Eigen::MatrixXd::Identity(6, 6);
    Eigen::LLT<Eigen::MatrixXd> llt(pop.cov);
    Eigen::MatrixXd L = llt.matrixL();

    for (int tidx = 1; tidx <= fx.sched.steps; ++tidx) {
        NetConfig cfg{6, 1, 0, 0, 8, NetArch::Linear};
        ScoreParams score = make_score(cfg, ScoreRole::FakeScore, rng.sub("s").sub(uint64_t(tidx)));
        Rng trng = rng.sub("train").sub(uint64_t(tidx));
        std::vector<DsmSample> batch(64);
        for (int it = 0; it < 1500; ++it) {
            for (auto& s : batch) {
                s.x0 = pop.mean + L * trng.normal_vec(6);
                s.tidx = tidx;
                s.cond = Eigen::VectorXd::Zero(1);
            }
            fake_score_update(score, batch, 4e-3, trng, fx.sched);
        }
        // compare implied score against the analytic diffused-marginal score
        double num = 0.0, den = 0.0;
        Rng erng = rng.sub("eval").sub(uint64_t(tidx));
        for (int i = 0; i < 300; ++i) {
            Eigen::VectorXd x0 = pop.mean + L * erng.normal_vec(6);
            Eigen::VectorXd x_t = add_noise(x0, erng.normal_vec(6), tidx, fx.sched);
            Eigen::VectorXd s_net = implied_score(score.net, x_t, tidx,
                                                  Eigen::VectorXd::Zero(1), nullptr, fx.sched);
            Eigen::VectorXd s_true = gaussian_marginal_score(x_t, tidx, pop, fx.sched);
            num += (s_net - s_true).squaredNorm();
            den += s_true.squaredNorm();
        }
        double rel = std::sqrt(num / den);
        CHECK(rel < 0.05);
    }
}

TEST_CASE("analytic teacher score identities") {
    Fixture fx;
    Rng rng(141);
    GeneratorParams gen = make_generator(fx.net_cfg, fx.proc.frame_dim, rng.sub("gen"));
    ContextView view = random_view(fx, gen.enc, 6, rng);
    Eigen::VectorXd cond = rng.normal_vec(3);
    AnalyticTeacher at{&fx.proc, &fx.cm, TeacherScope::Full};
    TeacherHandle teacher = at;
    long start = 6 * fx.proc.chunk_size;

    GaussianDist g = analytic_conditional(at, cond, view, start);
    int tidx = 2;
    Eigen::VectorXd mode = fx.sched.alpha_at(tidx) * g.mean;
    CHECK(teacher_score(teacher, mode, tidx, cond, view, start, fx.sched).norm() < 1e-10);

    // finite difference of the diffused conditional log-density
    GaussianDist diff = diffused(g, tidx, fx.sched);
    Eigen::VectorXd x = diff.mean + rng.normal_vec(g.dim());
    Eigen::VectorXd s = teacher_score(teacher, x, tidx, cond, view, start, fx.sched);
    const double h = 1e-5;
    for (int i = 0; i < 8; ++i) {
        Eigen::Index k = Eigen::Index(rng.uniform_int(0, g.dim() - 1));
        Eigen::VectorXd xp = x, xm = x;
        xp[k] += h;
        xm[k] -= h;
        double fd = (log_pdf(diff, xp) - log_pdf(diff, xm)) / (2.0 * h);
        CHECK(std::abs(s[k] - fd) <= 1e-5 * std::max(1.0, std::abs(fd)));
    }

    // scope filtering: fast-only conditions on fewer frames, so its
    // conditional is no sharper than the full teacher's
    AnalyticTeacher blind{&fx.proc, &fx.cm, TeacherScope::FastOnly};
    GaussianDist gb = analytic_conditional(blind, cond, view, start);
    CHECK(gb.cov.trace() >= g.cov.trace() - 1e-9);
    AnalyticTeacher none{&fx.proc, &fx.cm, TeacherScope::None};
    GaussianDist gn = analytic_conditional(none, cond, view, start);
    CHECK(gn.cov.trace() >= gb.cov.trace() - 1e-9);
}

TEST_CASE("checkpoint round trip and golden checksum") {
    Fixture fx;
    Rng rng(151);
    GeneratorParams gen = make_generator(fx.net_cfg, fx.proc.frame_dim, Rng(9001).sub("g"));
    std::string path = "ckpt_roundtrip.bin";
    save_generator(path, gen);
    GeneratorParams back = load_generator(path);
    CHECK((back.net.theta - gen.net.theta).norm() == 0.0);
    CHECK((back.enc.Wk - gen.enc.Wk).norm() == 0.0);
    CHECK(back.net.cfg.hidden == gen.net.cfg.hidden);

    // the file is a pure function of the seeded parameters
    uint64_t h1 = fnv1a_file(path);
    save_generator(path, gen);
    CHECK(fnv1a_file(path) == h1);

    ScoreParams sc = make_score(fx.net_cfg, ScoreRole::TeacherScore, Rng(9002).sub("s"));
    save_score("ckpt_score.bin", sc);
    ScoreParams sb = load_score("ckpt_score.bin");
    CHECK(sb.role == ScoreRole::TeacherScore);
    CHECK((sb.net.theta - sc.net.theta).norm() == 0.0);
    std::remove(path.c_str());
    std::remove("ckpt_score.bin");
}

TEST_CASE("deterministic outputs for identical seeds and inputs") {
    Fixture fx;
    GeneratorParams g1 = make_generator(fx.net_cfg, fx.proc.frame_dim, Rng(31).sub("g"));
    GeneratorParams g2 = make_generator(fx.net_cfg, fx.proc.frame_dim, Rng(31).sub("g"));
    CHECK((g1.net.theta - g2.net.theta).norm() == 0.0);
    Rng ra(5), rb(5);
    Eigen::VectorXd xa = ra.normal_vec(fx.proc.chunk_dim());
    Eigen::VectorXd xb = rb.normal_vec(fx.proc.chunk_dim());
    SlowFastCache cache(fx.cache_cfg);
    Eigen::VectorXd ca = generate_chunk(g1, xa, 3, Eigen::VectorXd::Zero(3), cache, fx.sched);
    Eigen::VectorXd cb = generate_chunk(g2, xb, 3, Eigen::VectorXd::Zero(3), cache, fx.sched);
    CHECK((ca - cb).norm() == 0.0);
}
