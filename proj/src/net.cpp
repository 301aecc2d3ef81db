#include "longctx/net.hpp"

#include <cmath>
#include <stdexcept>

namespace longctx {

std::vector<ParamBlock> net_layout(const NetConfig& cfg) {
    std::vector<ParamBlock> blocks;
    Eigen::Index off = 0;
    auto add = [&](const std::string& name, Eigen::Index rows, Eigen::Index cols) {
        blocks.push_back({name, off, rows, cols});
        off += rows * (cols == 0 ? 1 : cols);
    };
    if (cfg.has_attention()) {
        add("Wq", cfg.key_dim, cfg.x_dim + cfg.cond_dim);
        add("bq", cfg.key_dim, 0);
    }
    Eigen::Index u = cfg.u_dim();
    if (cfg.arch == NetArch::Linear) {
        add("Wl", cfg.x_dim, u);
        add("bl", cfg.x_dim, 0);
    } else {
        add("W1", cfg.hidden, u);
        add("b1", cfg.hidden, 0);
        add("W2", cfg.hidden, cfg.hidden);
        add("b2", cfg.hidden, 0);
        add("Wo", cfg.x_dim, cfg.hidden);
        add("bo", cfg.x_dim, 0);
        add("Ws", cfg.x_dim, cfg.x_dim);
    }
    return blocks;
}

Eigen::Index net_param_count(const NetConfig& cfg) {
    Eigen::Index n = 0;
    for (const auto& b : net_layout(cfg)) n += b.size();
    return n;
}

namespace {
const ParamBlock& find_block(const std::vector<ParamBlock>& blocks, const char* name) {
    for (const auto& b : blocks)
        if (b.name == name) return b;
    throw std::logic_error(std::string("net block not found: ") + name);
}
}  // namespace

ChunkNet init_net(const NetConfig& cfg, Rng rng, double weight_scale) {
    ChunkNet net;
    net.cfg = cfg;
    net.theta = Eigen::VectorXd::Zero(net_param_count(cfg));
    auto blocks = net_layout(cfg);
    for (const auto& b : blocks) {
        if (b.cols == 0) continue;  // biases start at zero
        Eigen::Map<Eigen::MatrixXd> m(net.theta.data() + b.offset, b.rows, b.cols);
        for (Eigen::Index j = 0; j < b.cols; ++j)
            for (Eigen::Index i = 0; i < b.rows; ++i) m(i, j) = weight_scale * rng.normal();
        // the skip starts near identity so initial outputs have sane scale
        if (b.name == "Ws") m += Eigen::MatrixXd::Identity(b.rows, b.cols);
    }
    return net;
}

Eigen::VectorXd positional_encoding(long position, int dim) {
    Eigen::VectorXd pe(dim);
    const double base = 64.0;
    for (int i = 0; i < dim; ++i) {
        double freq = std::pow(base, -double((i / 2) * 2) / double(dim));
        double ang = double(position) * freq;
        pe[i] = (i % 2 == 0) ? std::sin(ang) : std::cos(ang);
    }
    return pe;
}

AttentionInput build_attention_input(const ContextView& view, int key_dim, int val_dim,
                                     bool bounded) {
    AttentionInput a;
    a.keys.resize(Eigen::Index(view.size()), key_dim);
    a.vals.resize(Eigen::Index(view.size()), val_dim);
    for (size_t i = 0; i < view.size(); ++i) {
        long pos = bounded ? view[i].position : view[i].birth_index;
        a.keys.row(Eigen::Index(i)) = view[i].key.transpose() + positional_encoding(pos, key_dim).transpose();
        a.vals.row(Eigen::Index(i)) = view[i].value.transpose() + positional_encoding(pos, val_dim).transpose();
    }
    return a;
}

Eigen::Vector3d time_features(const DiffusionSchedule& sched, int tidx) {
    double t = tidx == 0 ? 0.0 : sched.t[size_t(tidx - 1)];
    return {sched.alpha_at(tidx), sched.sigma_at(tidx), 2.0 * t - 1.0};
}

Eigen::VectorXd net_forward(const ChunkNet& net, const Eigen::VectorXd& x,
                            const Eigen::Vector3d& tfeat, const Eigen::VectorXd& cond,
                            const AttentionInput* attn, NetTrace* trace) {
    const NetConfig& cfg = net.cfg;
    if (x.size() != cfg.x_dim) throw std::invalid_argument("net_forward: x dimension mismatch");
    if (cond.size() != cfg.cond_dim) throw std::invalid_argument("net_forward: cond dimension mismatch");
    auto blocks = net_layout(cfg);

    Eigen::VectorXd q, weights, ctx;
    if (cfg.has_attention()) {
        ctx = Eigen::VectorXd::Zero(cfg.val_dim);
        Eigen::Index n = attn ? attn->n() : 0;
        if (n > 0) {
            const auto& Wq = find_block(blocks, "Wq");
            const auto& bq = find_block(blocks, "bq");
            Eigen::VectorXd xc(cfg.x_dim + cfg.cond_dim);
            xc << x, cond;
            q = net.mat(Wq) * xc + net.mat(bq).col(0);
            Eigen::VectorXd logits = attn->keys * q / std::sqrt(double(cfg.key_dim));
            double mx = logits.maxCoeff();
            weights = (logits.array() - mx).exp();
            weights /= weights.sum();
            ctx = attn->vals.transpose() * weights;
        }
    }

    Eigen::VectorXd u(cfg.u_dim());
    if (cfg.has_attention()) u << x, cond, tfeat, ctx;
    else u << x, cond, tfeat;

    Eigen::VectorXd out, h1, z2;
    if (cfg.arch == NetArch::Linear) {
        out = net.mat(find_block(blocks, "Wl")) * u + net.mat(find_block(blocks, "bl")).col(0);
    } else {
        h1 = (net.mat(find_block(blocks, "W1")) * u + net.mat(find_block(blocks, "b1")).col(0))
                 .array()
                 .tanh();
        z2 = (net.mat(find_block(blocks, "W2")) * h1 + net.mat(find_block(blocks, "b2")).col(0))
                 .array()
                 .tanh();
        Eigen::VectorXd h2 = h1 + z2;
        out = net.mat(find_block(blocks, "Wo")) * h2 + net.mat(find_block(blocks, "bo")).col(0) +
              net.mat(find_block(blocks, "Ws")) * x;
    }

    if (trace) {
        trace->x = x;
        trace->cond = cond;
        trace->tfeat = tfeat;
        if (cfg.has_attention() && attn) trace->attn = *attn;
        else trace->attn = AttentionInput{};
        trace->q = q;
        trace->weights = weights;
        trace->ctx = ctx;
        trace->u = u;
        trace->h1 = h1;
        trace->z2 = z2;
        trace->out = out;
    }
    return out;
}

void net_vjp(const ChunkNet& net, const NetTrace& trace, const Eigen::VectorXd& cot,
             Eigen::VectorXd& grad) {
    const NetConfig& cfg = net.cfg;
    if (grad.size() != net.theta.size())
        throw std::invalid_argument("net_vjp: gradient buffer size mismatch");
    auto blocks = net_layout(cfg);
    auto gmat = [&grad](const ParamBlock& b) {
        return Eigen::Map<Eigen::MatrixXd>(grad.data() + b.offset, b.rows,
                                           b.cols == 0 ? 1 : b.cols);
    };

    Eigen::VectorXd du;
    if (cfg.arch == NetArch::Linear) {
        const auto& Wl = find_block(blocks, "Wl");
        gmat(Wl) += cot * trace.u.transpose();
        gmat(find_block(blocks, "bl")).col(0) += cot;
        du = net.mat(Wl).transpose() * cot;
    } else {
        const auto& W1 = find_block(blocks, "W1");
        const auto& W2 = find_block(blocks, "W2");
        const auto& Wo = find_block(blocks, "Wo");
        const auto& Ws = find_block(blocks, "Ws");
        Eigen::VectorXd h2 = trace.h1 + trace.z2;
        gmat(Wo) += cot * h2.transpose();
        gmat(find_block(blocks, "bo")).col(0) += cot;
        gmat(Ws) += cot * trace.x.transpose();
        Eigen::VectorXd dh2 = net.mat(Wo).transpose() * cot;
        Eigen::VectorXd da2 = dh2.cwiseProduct(
            (1.0 - trace.z2.array().square()).matrix());
        gmat(W2) += da2 * trace.h1.transpose();
        gmat(find_block(blocks, "b2")).col(0) += da2;
        Eigen::VectorXd dh1 = dh2 + net.mat(W2).transpose() * da2;
        Eigen::VectorXd da1 = dh1.cwiseProduct((1.0 - trace.h1.array().square()).matrix());
        gmat(W1) += da1 * trace.u.transpose();
        gmat(find_block(blocks, "b1")).col(0) += da1;
        du = net.mat(W1).transpose() * da1;
    }

    if (cfg.has_attention() && trace.weights.size() > 0) {
        Eigen::VectorXd dctx = du.segment(cfg.x_dim + cfg.cond_dim + NetConfig::tfeat_dim,
                                          cfg.val_dim);
        Eigen::VectorXd da = trace.attn.vals * dctx;  // n
        double dot = trace.weights.dot(da);
        Eigen::VectorXd de = trace.weights.cwiseProduct(da.array().matrix() -
                                                        Eigen::VectorXd::Constant(da.size(), dot));
        Eigen::VectorXd dq = trace.attn.keys.transpose() * de / std::sqrt(double(cfg.key_dim));
        Eigen::VectorXd xc(cfg.x_dim + cfg.cond_dim);
        xc << trace.x, trace.cond;
        gmat(find_block(blocks, "Wq")) += dq * xc.transpose();
        gmat(find_block(blocks, "bq")).col(0) += dq;
    }
}

CacheEncoder make_cache_encoder(int frame_dim, int key_dim, int val_dim, Rng rng) {
    CacheEncoder enc;
    enc.Wk.resize(key_dim, frame_dim);
    enc.bk = Eigen::VectorXd::Zero(key_dim);
    enc.Wv.resize(val_dim, 2 * frame_dim);
    enc.bv = Eigen::VectorXd::Zero(val_dim);
    double sk = 1.0 / std::sqrt(double(frame_dim));
    for (int j = 0; j < frame_dim; ++j)
        for (int i = 0; i < key_dim; ++i) enc.Wk(i, j) = sk * rng.normal();
    double sv = 1.0 / std::sqrt(double(2 * frame_dim));
    for (int j = 0; j < 2 * frame_dim; ++j)
        for (int i = 0; i < val_dim; ++i) enc.Wv(i, j) = sv * rng.normal();
    return enc;
}

Eigen::VectorXd encode_key(const CacheEncoder& enc, const Eigen::MatrixXd& frames) {
    Eigen::VectorXd mean = frames.rowwise().mean();
    return enc.Wk * mean + enc.bk;
}

Eigen::VectorXd encode_value(const CacheEncoder& enc, const Eigen::MatrixXd& frames) {
    Eigen::VectorXd fl(2 * frames.rows());
    fl << frames.rowwise().mean(), frames.col(frames.cols() - 1);
    return enc.Wv * fl + enc.bv;
}

TokenEntry make_token_entry(const CacheEncoder& enc, const Eigen::VectorXd& chunk,
                            long birth_index) {
    int F = enc.frame_dim();
    if (chunk.size() % F != 0)
        throw std::invalid_argument("make_token_entry: chunk size not a multiple of frame_dim");
    int n = int(chunk.size()) / F;
    TokenEntry e;
    e.payload.start_frame = birth_index * n;
    e.payload.frames = Eigen::Map<const Eigen::MatrixXd>(chunk.data(), F, n);
    e.birth_index = birth_index;
    e.key = encode_key(enc, e.payload.frames);
    e.value = encode_value(enc, e.payload.frames);
    Eigen::MatrixXd first = e.payload.frames.col(0);
    e.first_key = encode_key(enc, first);
    e.first_value = encode_value(enc, first);
    return e;
}

}  // namespace longctx
