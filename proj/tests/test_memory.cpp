#include <doctest.h>

#include <cmath>

#include "longctx/cache.hpp"
#include "longctx/net.hpp"
#include "longctx/rng.hpp"

using namespace longctx;

namespace {

TokenEntry entry_with_key(long birth, const Eigen::VectorXd& key, int frame_dim = 4) {
    TokenEntry e;
    e.key = key;
    e.value = key;
    e.birth_index = birth;
    e.payload.start_frame = birth * 2;
    e.payload.frames = Eigen::MatrixXd::Constant(frame_dim, 2, double(birth));
    return e;
}

Eigen::VectorXd unit(double angle) {
    Eigen::VectorXd k(2);
    k << std::cos(angle), std::sin(angle);
    return k;
}

CacheConfig paper_config() {
    CacheConfig cfg;
    cfg.n_sink = 3;
    cfg.n_slow = 12;
    cfg.n_fast = 6;
    cfg.tau = 0.95;
    cfg.consolidation_interval = 1;  // evaluate surprisal on every enqueue
    return cfg;
}

}  // namespace

TEST_CASE("consolidation_decision thresholds") {
    Eigen::VectorXd a = unit(0.0);
    double tau = 0.95;
    // sim = 0.90 < tau -> consolidate
    Eigen::VectorXd b = unit(std::acos(0.90));
    CHECK(consolidation_decision(b, &a, tau) == Decision::Consolidate);
    // sim == tau exactly -> discard (strict inequality)
    Eigen::VectorXd c = unit(std::acos(0.95));
    CHECK(cosine_similarity(c, a) == doctest::Approx(0.95).epsilon(1e-12));
    CHECK(consolidation_decision(c, &a, tau) == Decision::Discard);
    // identical keys -> discard for any tau <= 1
    CHECK(consolidation_decision(a, &a, 1.0) == Decision::Discard);
    // absent previous key -> consolidate
    CHECK(consolidation_decision(a, nullptr, tau) == Decision::Consolidate);
    // zero-norm key treated as similarity 0
    Eigen::VectorXd z = Eigen::VectorXd::Zero(2);
    CHECK(consolidation_decision(z, &a, 0.5) == Decision::Consolidate);
    CHECK(consolidation_decision(z, &a, -0.5) == Decision::Discard);
}

TEST_CASE("first appends land in the sink") {
    SlowFastCache cache(paper_config());
    for (long i = 0; i < 3; ++i) {
        AppendReport rep = cache.append(entry_with_key(i, unit(0.1 * double(i))));
        CHECK(rep.landed == Segment::Sink);
    }
    CHECK(cache.sink_size() == 3);
    CHECK(cache.fast_size() == 0);
    CHECK_THROWS_AS(cache.append(entry_with_key(2, unit(0.0))), std::invalid_argument);
}

TEST_CASE("fast overflow routes the oldest entry by its recorded decision") {
    SlowFastCache cache(paper_config());
    // fill sink with 3, then 6 fast entries; keys alternate far/near
    for (long i = 0; i < 3; ++i) cache.append(entry_with_key(i, unit(0.0)));
    // first fast enqueue has no previous key -> consolidate
    cache.append(entry_with_key(3, unit(0.0)));
    // five more, all nearly identical to the previous -> discard decisions
    for (long i = 4; i < 9; ++i) cache.append(entry_with_key(i, unit(1e-4 * double(i))));
    CHECK(cache.fast_size() == 6);
    CHECK(cache.slow_size() == 0);
    // the 10th append pushes out the oldest fast entry (birth 3, Consolidate)
    AppendReport rep = cache.append(entry_with_key(9, unit(1e-3)));
    CHECK(rep.consolidated_birth.has_value());
    CHECK(*rep.consolidated_birth == 3);
    CHECK(cache.slow_size() == 1);
    // next overflow discards (its decision was Discard)
    rep = cache.append(entry_with_key(10, unit(1.2e-3)));
    CHECK(rep.discarded_birth.has_value());
    CHECK(*rep.discarded_birth == 4);
    cache.check_invariants();
}

TEST_CASE("identical keys never consolidate after the first post-sink decision") {
    SlowFastCache cache(paper_config());
    Eigen::VectorXd k = unit(0.3);
    for (long i = 0; i < 60; ++i) cache.append(entry_with_key(i, k));
    // only the very first fast enqueue (absent previous key) may consolidate
    CHECK(cache.slow_size() <= 1);
    CHECK(cache.counters().consolidated <= 1);
    cache.check_invariants();
}

TEST_CASE("keep policy retains only the first frame on consolidation") {
    CacheConfig cfg = paper_config();
    cfg.n_fast = 1;
    SlowFastCache cache(cfg);
    for (long i = 0; i < 3; ++i) cache.append(entry_with_key(i, unit(0.0)));
    TokenEntry e = entry_with_key(3, unit(0.0));
    Eigen::VectorXd fk(2);
    fk << -1.0, -1.0;
    e.first_key = fk;
    e.first_value = fk;
    cache.append(e);                              // consolidate decision (no prev key)
    cache.append(entry_with_key(4, unit(0.0)));   // forces birth-3 out of fast
    ContextView view = cache.context_view();
    bool found = false;
    for (const auto& v : view) {
        if (v.birth_index == 3) {
            found = true;
            CHECK(v.segment == Segment::Slow);
            CHECK(v.payload.frames.cols() == 1);
            CHECK(v.key == fk);
        }
    }
    CHECK(found);
}

TEST_CASE("position_of bounded mapping") {
    SlowFastCache cache(paper_config());
    for (long i = 0; i < 3; ++i) cache.append(entry_with_key(i, unit(0.0)));
    CHECK(cache.position_of(0) == 0);  // first sink token
    // alternate similar/different keys to fill slow and fast
    Rng rng(5);
    long birth = 3;
    while (cache.slow_size() < 12) {
        double ang = (birth % 2 == 0) ? 0.0 : M_PI / 2.0;  // alternating -> all consolidate
        cache.append(entry_with_key(birth, unit(ang)));
        ++birth;
    }
    for (int i = 0; i < 6; ++i) cache.append(entry_with_key(birth + i, unit(0.0)));
    cache.check_invariants();
    CHECK(cache.size() == 21);
    ContextView view = cache.context_view();
    CHECK(view.size() == 21);
    std::vector<bool> used(21, false);
    for (const auto& v : view) {
        CHECK(v.position >= 0);
        CHECK(v.position <= 20);
        CHECK(!used[size_t(v.position)]);
        used[size_t(v.position)] = true;
    }
    // newest fast token when fast is full sits at 20
    CHECK(view.back().segment == Segment::Fast);
    CHECK(view.back().position == 20);
    // oldest slow token at n_sink
    CHECK(cache.position_of(view[3].birth_index) == 3);
    CHECK(view[3].segment == Segment::Slow);
    CHECK_THROWS_AS(cache.position_of(999999), std::out_of_range);
}

TEST_CASE("context_view empty and capacity cap") {
    SlowFastCache cache(paper_config());
    CHECK(cache.context_view().empty());
    Rng rng(9);
    for (long i = 0; i < 2000; ++i) {
        Eigen::VectorXd k = rng.normal_vec(2);
        cache.append(entry_with_key(i, k));
    }
    CHECK(cache.size() <= 21);
    cache.check_invariants();
}

TEST_CASE("monotone salience in tau") {
    Rng rng(17);
    std::vector<Eigen::VectorXd> keys;
    for (int i = 0; i < 400; ++i) {
        double drift = rng.uniform() < 0.2 ? 1.0 : 0.02;
        keys.push_back(unit(0.5 * std::sin(0.1 * i) + drift * rng.normal()));
    }
    long prev_count = -1;
    for (double tau : {0.5, 0.9, 0.95, 0.99}) {
        CacheConfig cfg = paper_config();
        cfg.tau = tau;
        SlowFastCache cache(cfg);
        for (size_t i = 0; i < keys.size(); ++i) cache.append(entry_with_key(long(i), keys[i]));
        long count = cache.counters().consolidated + cache.pending();
        CHECK(count >= prev_count);
        prev_count = count;
    }
}

TEST_CASE("uniform sampling strategies") {
    CacheConfig cfg = paper_config();
    cfg.strategy = SamplingStrategy::UniformInterval1;
    SlowFastCache u1(cfg);
    cfg.strategy = SamplingStrategy::UniformInterval2;
    SlowFastCache u2(cfg);
    for (long i = 0; i < 40; ++i) {
        u1.append(entry_with_key(i, unit(0.0)));  // identical keys
        u2.append(entry_with_key(i, unit(0.0)));
    }
    // interval 1 consolidates every fast exit: 40 - 3 sink - 6 in fast = 31 exits
    CHECK(u1.counters().consolidated == 31);
    CHECK(u1.counters().discarded == 0);
    // interval 2 consolidates every other exit
    CHECK(u2.counters().consolidated + u2.counters().discarded == 31);
    CHECK(std::abs(u2.counters().consolidated - 16) <= 1);
    u1.check_invariants();
    u2.check_invariants();
}

TEST_CASE("consolidation interval gates surprisal decisions") {
    CacheConfig cfg = paper_config();
    cfg.consolidation_interval = 2;
    SlowFastCache cache(cfg);
    // sink fill, then alternately orthogonal keys; only even fast enqueues
    // are evaluated
    for (long i = 0; i < 3; ++i) cache.append(entry_with_key(i, unit(0.0)));
    long consolidate_decisions = 0;
    for (long i = 3; i < 43; ++i) {
        AppendReport rep = cache.append(entry_with_key(i, unit((i % 2) * M_PI / 2.0)));
        if (rep.decision && *rep.decision == Decision::Consolidate) ++consolidate_decisions;
    }
    // 40 fast enqueues, every second evaluated, every evaluated one fires
    CHECK(consolidate_decisions == 20);
}

TEST_CASE("cache fuzz: invariants hold over 1e5 random appends") {
    Rng rng(23);
    CacheConfig cfg = paper_config();
    cfg.consolidation_interval = 2;
    SlowFastCache cache(cfg);
    for (long i = 0; i < 100000; ++i) {
        Eigen::VectorXd k = rng.normal_vec(3);
        if (rng.uniform() < 0.01) k.setZero();  // zero-norm keys now and then
        TokenEntry e;
        e.key = k;
        e.value = rng.normal_vec(3);
        e.birth_index = i;
        e.payload.start_frame = i * 2;
        e.payload.frames = Eigen::MatrixXd::Random(3, 2);
        cache.append(e);
        if (i % 97 == 0) cache.check_invariants();
    }
    cache.check_invariants();
    CHECK(cache.size() == 21);
    CHECK(cache.counters().appended == 100000);
}

TEST_CASE("serialization golden file") {
    CacheConfig cfg;
    cfg.n_sink = 1;
    cfg.n_slow = 2;
    cfg.n_fast = 1;
    cfg.tau = 0.5;
    cfg.consolidation_interval = 1;
    SlowFastCache cache(cfg);
    auto mk = [](long birth, double kx, double ky) {
        TokenEntry e;
        e.key.resize(2);
        e.key << kx, ky;
        e.value.resize(1);
        e.value << double(birth) * 0.5;
        e.birth_index = birth;
        e.payload.start_frame = birth;
        e.payload.frames = Eigen::MatrixXd::Constant(1, 1, double(birth));
        return e;
    };
    cache.append(mk(0, 1.0, 0.0));   // sink
    cache.append(mk(1, 1.0, 0.0));   // fast (no prev key -> consolidate on exit)
    cache.append(mk(2, 0.0, 1.0));   // pushes 1 to slow
    const std::string expected =
        "longctx-cache v1\n"
        "config sink=1 slow=2 fast=1 tau=0.5 interval=1\n"
        "sink 0 0 key=[1,0] value=[0]\n"
        "slow 1 1 key=[1,0] value=[0.5]\n"
        "fast 2 3 key=[0,1] value=[1]\n";
    CHECK(cache.serialize() == expected);
}
