#include "longctx/cache.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace longctx {

void validate(const CacheConfig& cfg) {
    if (cfg.n_sink < 0 || cfg.n_slow < 0 || cfg.n_fast < 0)
        throw std::invalid_argument("CacheConfig: capacities must be >= 0");
    if (cfg.n_sink + cfg.n_slow + cfg.n_fast < 1)
        throw std::invalid_argument("CacheConfig: total capacity must be >= 1");
    if (cfg.tau < -1.0 || cfg.tau > 1.0)
        throw std::invalid_argument("CacheConfig: tau must be in [-1, 1]");
    if (cfg.consolidation_interval < 1)
        throw std::invalid_argument("CacheConfig: consolidation_interval must be >= 1");
}

double cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    if (a.size() != b.size()) throw std::invalid_argument("cosine_similarity: dimension mismatch");
    double na = a.norm(), nb = b.norm();
    if (na == 0.0 || nb == 0.0) return 0.0;
    return a.dot(b) / (na * nb);
}

Decision consolidation_decision(const Eigen::VectorXd& k_t, const Eigen::VectorXd* k_prev,
                                double tau) {
    if (k_prev == nullptr) return Decision::Consolidate;
    return cosine_similarity(k_t, *k_prev) < tau ? Decision::Consolidate : Decision::Discard;
}

SlowFastCache::SlowFastCache(const CacheConfig& cfg) : cfg_(cfg) { validate(cfg_); }

AppendReport SlowFastCache::append(TokenEntry entry) {
    if (entry.birth_index <= max_birth_)
        throw std::invalid_argument("SlowFastCache::append: non-monotone birth_index");
    max_birth_ = entry.birth_index;
    ++counters_.appended;
    AppendReport rep;

    if (int(sink_.size()) < cfg_.n_sink) {
        entry.segment = Segment::Sink;
        sink_.push_back(std::move(entry));
        rep.landed = Segment::Sink;
        return rep;
    }

    Decision dec = Decision::Discard;
    switch (cfg_.strategy) {
        case SamplingStrategy::UniformInterval1:
            dec = Decision::Consolidate;
            break;
        case SamplingStrategy::UniformInterval2:
            dec = (fast_enqueues_ % 2 == 0) ? Decision::Consolidate : Decision::Discard;
            break;
        case SamplingStrategy::Surprisal:
            if (fast_enqueues_ % cfg_.consolidation_interval == 0) {
                if (entry.key.size() > 0 && entry.key.norm() == 0.0) ++counters_.zero_norm_keys;
                dec = consolidation_decision(entry.key, last_key_ ? &*last_key_ : nullptr, cfg_.tau);
            }
            break;
    }
    last_key_ = entry.key;
    ++fast_enqueues_;
    rep.decision = dec;

    if (cfg_.n_fast == 0 || int(fast_.size()) == cfg_.n_fast) {
        // route the oldest fast entry (or, with n_fast == 0, the new entry itself)
        FastEntry out;
        if (cfg_.n_fast == 0) {
            out.entry = std::move(entry);
            out.decision = dec;
        } else {
            out = std::move(fast_.front());
            fast_.pop_front();
        }
        if (out.decision == Decision::Consolidate && cfg_.n_slow > 0) {
            TokenEntry& e = out.entry;
            if (cfg_.keep_policy == KeepPolicy::FirstFrame && e.payload.frames.cols() > 1) {
                e.payload.frames = e.payload.frames.col(0).eval();
                if (e.first_key) e.key = *e.first_key;
                if (e.first_value) e.value = *e.first_value;
            }
            e.segment = Segment::Slow;
            rep.consolidated_birth = e.birth_index;
            slow_.push_back(std::move(e));
            ++counters_.consolidated;
            if (int(slow_.size()) > cfg_.n_slow) {
                rep.evicted_birth = slow_.front().birth_index;
                slow_.erase(slow_.begin());
                ++counters_.evicted;
            }
        } else {
            rep.discarded_birth = out.entry.birth_index;
            ++counters_.discarded;
        }
    }
    if (cfg_.n_fast > 0) {
        entry.segment = Segment::Fast;
        FastEntry fe;
        fe.decision = dec;
        fe.entry = std::move(entry);
        fast_.push_back(std::move(fe));
        rep.landed = Segment::Fast;
    } else {
        rep.landed = (rep.consolidated_birth ? Segment::Slow : Segment::Fast);
    }
    return rep;
}

int SlowFastCache::position_of(long birth_index) const {
    for (size_t i = 0; i < sink_.size(); ++i)
        if (sink_[i].birth_index == birth_index) return int(i);
    for (size_t j = 0; j < slow_.size(); ++j)
        if (slow_[j].birth_index == birth_index) return cfg_.n_sink + int(j);
    for (size_t k = 0; k < fast_.size(); ++k)
        if (fast_[k].entry.birth_index == birth_index)
            return cfg_.n_sink + cfg_.n_slow + int(k);
    throw std::out_of_range("SlowFastCache::position_of: entry not in cache");
}

ContextView SlowFastCache::context_view() const {
    ContextView out;
    out.reserve(size_t(size()));
    auto push = [&out](const TokenEntry& e, int pos) {
        ViewEntry v;
        v.key = e.key;
        v.value = e.value;
        v.payload = e.payload;
        v.birth_index = e.birth_index;
        v.segment = e.segment;
        v.position = pos;
        out.push_back(std::move(v));
    };
    for (size_t i = 0; i < sink_.size(); ++i) push(sink_[i], int(i));
    for (size_t j = 0; j < slow_.size(); ++j) push(slow_[j], cfg_.n_sink + int(j));
    for (size_t k = 0; k < fast_.size(); ++k)
        push(fast_[k].entry, cfg_.n_sink + cfg_.n_slow + int(k));
    return out;
}

long SlowFastCache::pending() const {
    long n = 0;
    for (const auto& fe : fast_)
        if (fe.decision == Decision::Consolidate) ++n;
    return n;
}

void SlowFastCache::check_invariants() const {
    auto fail = [](const char* msg) { throw std::logic_error(std::string("cache invariant: ") + msg); };
    if (int(sink_.size()) > cfg_.n_sink) fail("sink over capacity");
    if (int(slow_.size()) > cfg_.n_slow) fail("slow over capacity");
    if (int(fast_.size()) > cfg_.n_fast) fail("fast over capacity");
    long prev = -1;
    for (const auto& e : sink_) {
        if (e.birth_index <= prev) fail("sink birth order");
        prev = e.birth_index;
    }
    prev = -1;
    for (const auto& e : slow_) {
        if (e.birth_index <= prev) fail("slow birth order");
        prev = e.birth_index;
    }
    long slow_max = prev;
    prev = -1;
    for (const auto& fe : fast_) {
        if (fe.entry.birth_index <= prev) fail("fast birth order");
        prev = fe.entry.birth_index;
    }
    if (!fast_.empty() && slow_max >= 0 && slow_max >= fast_.front().entry.birth_index)
        fail("slow entry not older than fast");
    // boundedness
    for (const auto& v : context_view()) {
        if (v.position < 0 || v.position > cfg_.total_slots() - 1) fail("position out of range");
        if (position_of(v.birth_index) != v.position) fail("view/position mismatch");
    }
    // conservation: every appended token is in exactly one bucket
    long held = long(sink_.size()) + long(slow_.size()) + long(fast_.size());
    if (counters_.appended != held + counters_.discarded + counters_.evicted)
        fail("conservation");
    if (counters_.consolidated != long(slow_.size()) + counters_.evicted)
        fail("consolidation accounting");
}

namespace {
const char* segment_name(Segment s) {
    switch (s) {
        case Segment::Sink: return "sink";
        case Segment::Slow: return "slow";
        case Segment::Fast: return "fast";
    }
    return "?";
}

void print_array(std::ostringstream& os, const Eigen::VectorXd& v) {
    os << "[";
    char buf[40];
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.17g", v[i]);
        os << (i ? "," : "") << buf;
    }
    os << "]";
}
}  // namespace

std::string SlowFastCache::serialize() const {
    std::ostringstream os;
    os << "longctx-cache v1\n";
    os << "config sink=" << cfg_.n_sink << " slow=" << cfg_.n_slow << " fast=" << cfg_.n_fast;
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", cfg_.tau);
    os << " tau=" << buf << " interval=" << cfg_.consolidation_interval << "\n";
    for (const auto& v : context_view()) {
        os << segment_name(v.segment) << " " << v.birth_index << " " << v.position << " key=";
        print_array(os, v.key);
        os << " value=";
        print_array(os, v.value);
        os << "\n";
    }
    return os.str();
}

}  // namespace longctx
