#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "longctx/cache.hpp"
#include "longctx/rng.hpp"
#include "longctx/schedule.hpp"

namespace longctx {

enum class NetArch { Linear, Mlp2 };

// Small parametric map (noisy chunk, timestep features, condition, attention
// read of the cache view) -> chunk-shaped output. Used for the generator and
// for both score roles. key_dim == 0 disables the attention path entirely
// (window-level nets).
struct NetConfig {
    int x_dim = 0;
    int cond_dim = 0;
    int key_dim = 0;
    int val_dim = 0;
    int hidden = 48;
    NetArch arch = NetArch::Mlp2;

    static constexpr int tfeat_dim = 3;

    bool has_attention() const { return key_dim > 0; }
    int u_dim() const {
        return x_dim + cond_dim + tfeat_dim + (has_attention() ? val_dim : 0);
    }
};

struct ParamBlock {
    std::string name;
    Eigen::Index offset = 0, rows = 0, cols = 0;  // cols == 0 marks a vector

    Eigen::Index size() const { return rows * (cols == 0 ? 1 : cols); }
};

std::vector<ParamBlock> net_layout(const NetConfig& cfg);
Eigen::Index net_param_count(const NetConfig& cfg);

struct ChunkNet {
    NetConfig cfg;
    Eigen::VectorXd theta;

    Eigen::Map<const Eigen::MatrixXd> mat(const ParamBlock& b) const {
        return {theta.data() + b.offset, b.rows, b.cols == 0 ? 1 : b.cols};
    }
};

ChunkNet init_net(const NetConfig& cfg, Rng rng, double weight_scale = 0.08);

// Additive sinusoidal embedding of an integer position.
Eigen::VectorXd positional_encoding(long position, int dim);

// Cache-view arrays ready for attention: per entry, key + pe(position) and
// value + pe(position). `bounded` selects the bounded position (default) or
// the raw birth index (the no-bounded-PE ablation).
struct AttentionInput {
    Eigen::MatrixXd keys;  // n x key_dim
    Eigen::MatrixXd vals;  // n x val_dim
    Eigen::Index n() const { return keys.rows(); }
};

AttentionInput build_attention_input(const ContextView& view, int key_dim, int val_dim,
                                     bool bounded = true);

// [alpha_t, sigma_t, 2t - 1]; the clean level gives [1, 0, -1].
Eigen::Vector3d time_features(const DiffusionSchedule& sched, int tidx);

// Forward intermediates kept for the hand-derived parameter VJP.
struct NetTrace {
    Eigen::VectorXd x, cond, tfeat;
    AttentionInput attn;   // pe-added copies actually used
    Eigen::VectorXd q, weights, ctx;
    Eigen::VectorXd u, h1, z2, out;
};

Eigen::VectorXd net_forward(const ChunkNet& net, const Eigen::VectorXd& x,
                            const Eigen::Vector3d& tfeat, const Eigen::VectorXd& cond,
                            const AttentionInput* attn, NetTrace* trace = nullptr);

// Accumulates d(out . cot)/d(theta) into grad. grad must be sized
// net_param_count(cfg). Gradients are hand-derived; finite-difference checks
// live in the tests.
void net_vjp(const ChunkNet& net, const NetTrace& trace, const Eigen::VectorXd& cot,
             Eigen::VectorXd& grad);

// Fixed projections writing cache entries from clean chunks. Keys are the
// mean of per-frame projections (the similarity statistic in the
// consolidation rule); values see both the frame mean and the last frame.
struct CacheEncoder {
    Eigen::MatrixXd Wk;  // key_dim x frame_dim
    Eigen::VectorXd bk;
    Eigen::MatrixXd Wv;  // val_dim x 2*frame_dim
    Eigen::VectorXd bv;

    int key_dim() const { return int(Wk.rows()); }
    int val_dim() const { return int(Wv.rows()); }
    int frame_dim() const { return int(Wk.cols()); }
};

CacheEncoder make_cache_encoder(int frame_dim, int key_dim, int val_dim, Rng rng);

Eigen::VectorXd encode_key(const CacheEncoder& enc, const Eigen::MatrixXd& frames);
Eigen::VectorXd encode_value(const CacheEncoder& enc, const Eigen::MatrixXd& frames);

// Builds the full token entry (including the first-frame reduced form) from a
// clean chunk laid out as stacked frames.
TokenEntry make_token_entry(const CacheEncoder& enc, const Eigen::VectorXd& chunk,
                            long birth_index);

}  // namespace longctx
