#include "longctx/model.hpp"

#include <algorithm>
#include <cmath>

namespace longctx {

GeneratorParams make_generator(const NetConfig& cfg, int frame_dim, Rng rng) {
    GeneratorParams g;
    g.net = init_net(cfg, rng.sub("net"));
    g.enc = make_cache_encoder(frame_dim, cfg.key_dim, cfg.val_dim, rng.sub("cache-encoder"));
    return g;
}

ScoreParams make_score(const NetConfig& cfg, ScoreRole role, Rng rng) {
    ScoreParams s;
    s.net = init_net(cfg, rng.sub("net"));
    s.role = role;
    return s;
}

Eigen::VectorXd generate_chunk(const GeneratorParams& gen, const Eigen::VectorXd& x_noisy,
                               int tidx, const Eigen::VectorXd& cond, const ContextView& view,
                               const DiffusionSchedule& sched, bool bounded_positions,
                               NetTrace* trace) {
    AttentionInput attn = build_attention_input(view, gen.net.cfg.key_dim, gen.net.cfg.val_dim,
                                                bounded_positions);
    return net_forward(gen.net, x_noisy, time_features(sched, tidx), cond, &attn, trace);
}

Eigen::VectorXd generate_chunk(const GeneratorParams& gen, const Eigen::VectorXd& x_noisy,
                               int tidx, const Eigen::VectorXd& cond, const SlowFastCache& cache,
                               const DiffusionSchedule& sched) {
    return generate_chunk(gen, x_noisy, tidx, cond, cache.context_view(), sched);
}

AppendReport update_cache(const GeneratorParams& gen, const Eigen::VectorXd& x0,
                          SlowFastCache& cache) {
    long birth = cache.counters().appended;
    return cache.append(make_token_entry(gen.enc, x0, birth));
}

Eigen::VectorXd implied_score(const ChunkNet& net, const Eigen::VectorXd& x_t, int tidx,
                              const Eigen::VectorXd& cond, const AttentionInput* attn,
                              const DiffusionSchedule& sched) {
    Eigen::VectorXd x0 = net_forward(net, x_t, time_features(sched, tidx), cond, attn);
    double a = sched.alpha_at(tidx), s = sched.sigma_at(tidx);
    return (a * x0 - x_t) / (s * s);
}

double dsm_gradient(const ChunkNet& net, std::span<const DsmSample> batch, Rng& rng,
                    const DiffusionSchedule& sched, Eigen::VectorXd& grad) {
    double loss = 0.0;
    for (const auto& s : batch) {
        AttentionInput attn;
        const AttentionInput* ap = nullptr;
        if (net.cfg.has_attention()) {
            attn = build_attention_input(s.view, net.cfg.key_dim, net.cfg.val_dim);
            ap = &attn;
        }
        Eigen::VectorXd eps = rng.normal_vec(s.x0.size());
        Eigen::VectorXd x_t = add_noise(s.x0, eps, s.tidx, sched);
        NetTrace trace;
        Eigen::VectorXd pred =
            net_forward(net, x_t, time_features(sched, s.tidx), s.cond, ap, &trace);
        Eigen::VectorXd resid = pred - s.x0;
        loss += resid.squaredNorm();
        Eigen::VectorXd cot = (2.0 / double(batch.size())) * resid;
        net_vjp(net, trace, cot, grad);
    }
    return loss / double(batch.size());
}

double fake_score_update(ScoreParams& score, std::span<const DsmSample> batch, double lr,
                         Rng& rng, const DiffusionSchedule& sched) {
    if (batch.empty()) throw std::invalid_argument("fake_score_update: empty batch");
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(score.net.theta.size());
    double loss = dsm_gradient(score.net, batch, rng, sched, grad);
    if (!std::isfinite(loss)) throw TrainingDiverged("fake_score_update: non-finite loss");
    score.net.theta -= lr * grad;
    return loss;
}

std::vector<FrameObservation> observations_from_view(const ContextView& view, TeacherScope scope) {
    std::vector<FrameObservation> obs;
    if (scope == TeacherScope::None) return obs;
    for (const auto& e : view) {
        if (scope == TeacherScope::FastOnly && e.segment != Segment::Fast) continue;
        for (Eigen::Index c = 0; c < e.payload.frames.cols(); ++c)
            obs.push_back({e.payload.start_frame + c, e.payload.frames.col(c)});
    }
    std::sort(obs.begin(), obs.end(),
              [](const FrameObservation& a, const FrameObservation& b) {
                  return a.frame_index < b.frame_index;
              });
    return obs;
}

GaussianDist analytic_conditional(const AnalyticTeacher& teacher, const Eigen::VectorXd& cond,
                                  const ContextView& view, long target_start_frame) {
    auto obs = observations_from_view(view, teacher.scope);
    return conditional_chunk_dist(*teacher.proc, obs, teacher.cm, &cond, target_start_frame);
}

Eigen::VectorXd teacher_score(const TeacherHandle& teacher, const Eigen::VectorXd& x_t, int tidx,
                              const Eigen::VectorXd& cond, const ContextView& view,
                              long target_start_frame, const DiffusionSchedule& sched) {
    if (std::holds_alternative<AnalyticTeacher>(teacher)) {
        const auto& at = std::get<AnalyticTeacher>(teacher);
        GaussianDist g = analytic_conditional(at, cond, view, target_start_frame);
        return gaussian_marginal_score(x_t, tidx, g, sched);
    }
    const ScoreParams* sp = std::get<const ScoreParams*>(teacher);
    AttentionInput attn;
    const AttentionInput* ap = nullptr;
    if (sp->net.cfg.has_attention()) {
        attn = build_attention_input(view, sp->net.cfg.key_dim, sp->net.cfg.val_dim);
        ap = &attn;
    }
    return implied_score(sp->net, x_t, tidx, cond, ap, sched);
}

namespace {
Tensor config_tensor(const NetConfig& cfg) {
    Eigen::VectorXd v(6);
    v << cfg.x_dim, cfg.cond_dim, cfg.key_dim, cfg.val_dim, cfg.hidden,
        cfg.arch == NetArch::Linear ? 0.0 : 1.0;
    return tensor_of(v);
}

NetConfig config_from_tensor(const Tensor& t) {
    Eigen::VectorXd v = as_vector(t);
    NetConfig cfg;
    cfg.x_dim = int(v[0]);
    cfg.cond_dim = int(v[1]);
    cfg.key_dim = int(v[2]);
    cfg.val_dim = int(v[3]);
    cfg.hidden = int(v[4]);
    cfg.arch = v[5] == 0.0 ? NetArch::Linear : NetArch::Mlp2;
    return cfg;
}
}  // namespace

void save_generator(const std::string& path, const GeneratorParams& gen) {
    TensorMap t;
    t["net.config"] = config_tensor(gen.net.cfg);
    t["net.theta"] = tensor_of(gen.net.theta);
    t["enc.Wk"] = tensor_of(gen.enc.Wk);
    t["enc.bk"] = tensor_of(gen.enc.bk);
    t["enc.Wv"] = tensor_of(gen.enc.Wv);
    t["enc.bv"] = tensor_of(gen.enc.bv);
    save_tensors(path, t);
}

GeneratorParams load_generator(const std::string& path) {
    TensorMap t = load_tensors(path);
    GeneratorParams g;
    g.net.cfg = config_from_tensor(t.at("net.config"));
    g.net.theta = as_vector(t.at("net.theta"));
    g.enc.Wk = as_matrix(t.at("enc.Wk"));
    g.enc.bk = as_vector(t.at("enc.bk"));
    g.enc.Wv = as_matrix(t.at("enc.Wv"));
    g.enc.bv = as_vector(t.at("enc.bv"));
    return g;
}

void save_score(const std::string& path, const ScoreParams& score) {
    TensorMap t;
    t["net.config"] = config_tensor(score.net.cfg);
    t["net.theta"] = tensor_of(score.net.theta);
    Eigen::VectorXd role(1);
    role[0] = score.role == ScoreRole::FakeScore ? 0.0 : 1.0;
    t["role"] = tensor_of(role);
    save_tensors(path, t);
}

ScoreParams load_score(const std::string& path) {
    TensorMap t = load_tensors(path);
    ScoreParams s;
    s.net.cfg = config_from_tensor(t.at("net.config"));
    s.net.theta = as_vector(t.at("net.theta"));
    s.role = as_vector(t.at("role"))[0] == 0.0 ? ScoreRole::FakeScore : ScoreRole::TeacherScore;
    return s;
}

}  // namespace longctx
