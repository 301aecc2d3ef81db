#pragma once

#include <deque>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace longctx {

enum class Segment { Sink, Slow, Fast };
enum class Decision { Consolidate, Discard };
enum class KeepPolicy { FirstFrame, AllFrames };

// Slow-memory admission rule. Surprisal is the default; the uniform variants
// exist for the sampling-strategy ablations.
enum class SamplingStrategy { Surprisal, UniformInterval1, UniformInterval2 };

struct CacheConfig {
    int n_sink = 3;
    int n_slow = 12;
    int n_fast = 6;
    double tau = 0.95;
    int consolidation_interval = 2;
    KeepPolicy keep_policy = KeepPolicy::FirstFrame;
    SamplingStrategy strategy = SamplingStrategy::Surprisal;

    int total_slots() const { return n_sink + n_slow + n_fast; }
};

void validate(const CacheConfig& cfg);

// Clean frame content a cached token encodes: columns are frames, start_frame
// is the global index of the first column.
struct ChunkPayload {
    long start_frame = 0;
    Eigen::MatrixXd frames;  // frame_dim x n_frames
};

struct TokenEntry {
    Eigen::VectorXd key;
    Eigen::VectorXd value;
    ChunkPayload payload;
    long birth_index = 0;  // global chunk index, monotone, unbounded
    Segment segment = Segment::Fast;

    // Reduced form applied when the entry is consolidated under the
    // first-frame keep policy. Filled by the cache writer; if absent the
    // payload is truncated and key/value kept as-is.
    std::optional<Eigen::VectorXd> first_key;
    std::optional<Eigen::VectorXd> first_value;
};

struct AppendReport {
    Segment landed = Segment::Fast;
    std::optional<Decision> decision;        // set for fast enqueues
    std::optional<long> consolidated_birth;  // fast entry promoted to slow
    std::optional<long> discarded_birth;     // fast entry dropped
    std::optional<long> evicted_birth;       // slow entry evicted by capacity
};

struct CacheCounters {
    long appended = 0;
    long consolidated = 0;  // promotions applied (fast -> slow)
    long discarded = 0;     // fast exits dropped
    long evicted = 0;       // slow capacity evictions
    long zero_norm_keys = 0;
};

struct ViewEntry {
    Eigen::VectorXd key;
    Eigen::VectorXd value;
    ChunkPayload payload;
    long birth_index = 0;
    Segment segment = Segment::Fast;
    int position = 0;  // bounded position
};

using ContextView = std::vector<ViewEntry>;

// cosine similarity; zero-norm inputs give 0 (maximally surprising)
double cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

// Consolidate iff sim(k_t, k_prev) < tau, strict. Absent k_prev consolidates.
Decision consolidation_decision(const Eigen::VectorXd& k_t, const Eigen::VectorXd* k_prev,
                                double tau);

// Three-segment token store: sink fills first and never changes once full;
// new tokens enqueue into the fast FIFO with a recorded consolidation
// decision; on fast overflow the oldest entry either moves to slow (applying
// the keep policy) or is discarded; slow evicts its oldest at capacity.
class SlowFastCache {
public:
    explicit SlowFastCache(const CacheConfig& cfg);

    AppendReport append(TokenEntry entry);

    // bounded position: sink i -> i, slow j -> n_sink + j,
    // fast k -> n_sink + n_slow + k. Throws std::out_of_range if absent.
    int position_of(long birth_index) const;

    // sink, then slow (oldest first), then fast (oldest first)
    ContextView context_view() const;

    const CacheConfig& config() const { return cfg_; }
    const CacheCounters& counters() const { return counters_; }
    int size() const { return int(sink_.size() + slow_.size() + fast_.size()); }
    int sink_size() const { return int(sink_.size()); }
    int slow_size() const { return int(slow_.size()); }
    int fast_size() const { return int(fast_.size()); }
    // fast entries whose recorded decision is Consolidate
    long pending() const;
    const std::optional<Eigen::VectorXd>& last_key() const { return last_key_; }

    // Throws std::logic_error on any violated capacity / ordering /
    // boundedness / conservation invariant.
    void check_invariants() const;

    // Versioned text form, one record per entry:
    //   segment birth_index position key=[...] value=[...]
    // with decimal arrays printed at full precision.
    std::string serialize() const;

private:
    struct FastEntry {
        TokenEntry entry;
        Decision decision;
    };

    CacheConfig cfg_;
    std::vector<TokenEntry> sink_;
    std::vector<TokenEntry> slow_;
    std::deque<FastEntry> fast_;
    std::optional<Eigen::VectorXd> last_key_;
    long fast_enqueues_ = 0;  // drives the consolidation interval
    CacheCounters counters_;
    long max_birth_ = -1;
};

}  // namespace longctx
