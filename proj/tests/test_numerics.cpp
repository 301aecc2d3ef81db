#include <doctest.h>

#include <cmath>

#include "longctx/gaussian.hpp"
#include "longctx/rng.hpp"
#include "longctx/scene.hpp"
#include "longctx/scene_posterior.hpp"
#include "longctx/schedule.hpp"

using namespace longctx;

TEST_CASE("schedule invariants") {
    CHECK_THROWS_AS(make_schedule(0), std::invalid_argument);

    auto s1 = make_schedule(1);
    CHECK(s1.steps == 1);
    CHECK(s1.alpha[0] * s1.alpha[0] + s1.sigma[0] * s1.sigma[0] == doctest::Approx(1.0).epsilon(1e-12));

    auto s = make_schedule(4);
    for (int i = 0; i < 4; ++i) {
        double a = s.alpha[size_t(i)], sg = s.sigma[size_t(i)];
        CHECK(std::abs(a * a + sg * sg - 1.0) < 1e-12);
        CHECK(s.dmd_weight[size_t(i)] > 0.0);
        CHECK(std::isfinite(s.dmd_weight[size_t(i)]));
    }
    for (int i = 1; i < 4; ++i) {
        CHECK(s.alpha[size_t(i)] < s.alpha[size_t(i - 1)]);
        CHECK(s.sigma[size_t(i)] > s.sigma[size_t(i - 1)]);
        CHECK(s.t[size_t(i)] > s.t[size_t(i - 1)]);
    }
    CHECK(s.t.back() > s.t.front());  // t_T is the largest-noise step
}

TEST_CASE("add_noise formula and edge cases") {
    auto sched = make_schedule(4);
    Rng rng(42);
    Eigen::VectorXd x0 = rng.normal_vec(8), eps = rng.normal_vec(8);

    CHECK((add_noise(x0, eps, 0, sched) - x0).norm() == 0.0);  // clean level

    Eigen::VectorXd zero = Eigen::VectorXd::Zero(8);
    Eigen::VectorXd top = add_noise(zero, eps, 4, sched);
    CHECK((top - sched.sigma[3] * eps).norm() < 1e-15);

    // direct formula on a handcrafted schedule with alpha = 0.8, sigma = 0.6
    DiffusionSchedule custom;
    custom.steps = 1;
    custom.t = {0.5};
    custom.alpha = {0.8};
    custom.sigma = {0.6};
    custom.dmd_weight = {0.45};
    Eigen::VectorXd ones = Eigen::VectorXd::Ones(5);
    Eigen::VectorXd noisy = add_noise(ones, ones, 1, custom);
    for (int i = 0; i < 5; ++i) CHECK(noisy[i] == doctest::Approx(1.4).epsilon(1e-15));

    Eigen::VectorXd wrong = Eigen::VectorXd::Zero(4);
    CHECK_THROWS_AS(add_noise(x0, wrong, 1, sched), std::invalid_argument);
}

TEST_CASE("add_noise moment matching") {
    auto sched = make_schedule(4);
    Rng rng(7);
    Eigen::VectorXd x0 = rng.normal_vec(6);
    int tidx = 3;
    const int N = 10000;
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(6);
    Eigen::VectorXd m2 = Eigen::VectorXd::Zero(6);
    for (int i = 0; i < N; ++i) {
        Eigen::VectorXd x = add_noise(x0, rng.normal_vec(6), tidx, sched);
        mean += x;
        m2 += x.cwiseProduct(x);
    }
    mean /= N;
    Eigen::VectorXd var = m2 / N - mean.cwiseProduct(mean);
    double a = sched.alpha[size_t(tidx - 1)], sg = sched.sigma[size_t(tidx - 1)];
    double se = sg / std::sqrt(double(N));
    for (int i = 0; i < 6; ++i) {
        CHECK(std::abs(mean[i] - a * x0[i]) < 3.0 * se);
        CHECK(std::abs(var[i] - sg * sg) < 0.05 * sg * sg);
    }
}

TEST_CASE("gaussian_marginal_score trivial identities") {
    auto sched = make_schedule(4);
    Rng rng(3);

    // score vanishes at the diffused mode
    GaussianDist iso = GaussianDist::isotropic(rng.normal_vec(5), 0.7);
    int tidx = 2;
    Eigen::VectorXd mode = sched.alpha[size_t(tidx - 1)] * iso.mean;
    CHECK(gaussian_marginal_score(mode, tidx, iso, sched).norm() < 1e-12);

    // diffusing N(0, I) under a variance-preserving schedule leaves N(0, I)
    GaussianDist stdn = GaussianDist::isotropic(Eigen::VectorXd::Zero(5), 1.0);
    for (int t = 1; t <= 4; ++t) {
        Eigen::VectorXd x = rng.normal_vec(5);
        CHECK((gaussian_marginal_score(x, t, stdn, sched) + x).norm() < 1e-12);
    }
}

namespace {
GaussianDist random_anisotropic(int dim, Rng& rng) {
    Eigen::MatrixXd A(dim, dim);
    for (int i = 0; i < dim; ++i)
        for (int j = 0; j < dim; ++j) A(i, j) = rng.normal();
    GaussianDist g;
    g.mean = rng.normal_vec(dim);
    g.cov = A * A.transpose() + 0.3 * Eigen::MatrixXd::Identity(dim, dim);
    return g;
}
}  // namespace

TEST_CASE("gaussian_marginal_score matches finite differences of the log-density") {
    auto sched = make_schedule(4);
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        int dim = 2 + int(rng.uniform_int(0, 4));
        GaussianDist clean = random_anisotropic(dim, rng);
        int tidx = int(rng.uniform_int(1, 4));
        Eigen::VectorXd x = 2.0 * rng.normal_vec(dim);
        Eigen::VectorXd score = gaussian_marginal_score(x, tidx, clean, sched);
        GaussianDist diff = diffused(clean, tidx, sched);
        const double h = 1e-5;
        for (int i = 0; i < dim; ++i) {
            Eigen::VectorXd xp = x, xm = x;
            xp[i] += h;
            xm[i] -= h;
            double fd = (log_pdf(diff, xp) - log_pdf(diff, xm)) / (2.0 * h);
            CHECK(std::abs(score[i] - fd) <= 1e-5 * std::max(1.0, std::abs(fd)));
        }
    }
}

TEST_CASE("kl_gaussian closed form") {
    Rng rng(5);
    GaussianDist p = GaussianDist::isotropic(Eigen::VectorXd::Zero(1), 1.0);
    CHECK(kl_gaussian(p, p).value == doctest::Approx(0.0).epsilon(1e-14));

    GaussianDist q = GaussianDist::isotropic(Eigen::VectorXd::Zero(1), 1.0);
    GaussianDist shifted = GaussianDist::isotropic(Eigen::VectorXd::Constant(1, 2.0), 1.0);
    CHECK(kl_gaussian(shifted, q).value == doctest::Approx(2.0).epsilon(1e-14));

    GaussianDist a = random_anisotropic(3, rng);
    GaussianDist b = random_anisotropic(3, rng);
    CHECK_THROWS_AS(kl_gaussian(a, GaussianDist::isotropic(Eigen::VectorXd::Zero(2), 1.0)),
                    std::invalid_argument);

    // Monte-Carlo oracle: KL = E_p[log p - log q]
    double kl = kl_gaussian(a, b).value;
    const int N = 1000000;
    Eigen::LLT<Eigen::MatrixXd> llt(a.cov);
    Eigen::MatrixXd L = llt.matrixL();
    double acc = 0.0, acc2 = 0.0;
    for (int i = 0; i < N; ++i) {
        Eigen::VectorXd x = a.mean + L * rng.normal_vec(3);
        double v = log_pdf(a, x) - log_pdf(b, x);
        acc += v;
        acc2 += v * v;
    }
    double mc = acc / N;
    double se = std::sqrt((acc2 / N - mc * mc) / N);
    CHECK(std::abs(kl - mc) < 3.0 * se);
}

TEST_CASE("sample_trajectory basics") {
    Rng rng(9);
    SceneProcess proc = make_scene(4, 8, 4, 3.0, 1.0, 1e-12, rng.sub("scene"));
    Rng t1 = rng.sub("t1");
    Trajectory tr = sample_trajectory(proc, 3, t1);
    Eigen::VectorXd mu = proc.mixing * tr.identity;
    for (int f = 0; f < tr.n_frames(); ++f) CHECK((tr.frame(f) - mu).norm() < 1e-9);

    SceneProcess p2 = make_scene(4, 8, 4, 3.0, 0.9, 0.3, rng.sub("scene2"));
    Rng t2 = rng.sub("t2");
    Trajectory one = sample_trajectory(p2, 1, t2);
    CHECK(one.n_chunks() == 1);
    CHECK(one.chunks[0].size() == 32);
    CHECK(one.n_frames() == p2.chunk_size);

    CHECK_THROWS_AS(sample_trajectory(p2, 0, t2), std::invalid_argument);
}

TEST_CASE("trajectory lag-1 autocorrelation approaches the transition coefficient") {
    Rng rng(13);
    SceneProcess proc = make_scene(3, 4, 4, 2.0, 0.85, 0.5, rng.sub("scene"));
    Rng trng = rng.sub("traj");
    double sxy = 0.0, sxx = 0.0;
    const int trials = 10000;
    for (int k = 0; k < trials; ++k) {
        Trajectory tr = sample_trajectory(proc, 4, trng);
        Eigen::VectorXd mu = proc.mixing * tr.identity;
        // skip early frames so the deviation chain is near stationarity
        for (int f = 8; f + 1 < tr.n_frames(); ++f) {
            Eigen::VectorXd a = tr.frame(f) - mu, b = tr.frame(f + 1) - mu;
            sxy += a.dot(b);
            sxx += a.squaredNorm();
        }
    }
    double est = sxy / sxx;
    CHECK(std::abs(est - proc.transition) < 0.01);
}

TEST_CASE("seeded determinism of trajectories and draws") {
    SceneProcess proc;
    {
        Rng r(100);
        proc = make_scene(4, 8, 4, 3.0, 0.9, 0.3, r);
    }
    Rng a(555), b(555);
    Trajectory ta = sample_trajectory(proc, 5, a);
    Trajectory tb = sample_trajectory(proc, 5, b);
    CHECK((ta.identity - tb.identity).norm() == 0.0);
    for (int i = 0; i < 5; ++i) CHECK((ta.chunks[size_t(i)] - tb.chunks[size_t(i)]).norm() == 0.0);

    // substreams are order-independent
    Rng base(77);
    Rng s1 = base.sub("alpha");
    Rng s2 = base.sub("beta");
    double v2_first = s2.normal();
    Rng s1b = Rng(77).sub("alpha");
    CHECK(s1.normal() == s1b.normal());
    Rng s2b = Rng(77).sub("beta");
    CHECK(v2_first == s2b.normal());
}

TEST_CASE("rng uniform_int covers its range uniformly") {
    Rng rng(2024);
    const int lo = 2, hi = 9;
    std::vector<long> counts(8, 0);
    const int N = 100000;
    for (int i = 0; i < N; ++i) ++counts[size_t(rng.uniform_int(lo, hi) - lo)];
    double expect = double(N) / 8.0;
    double chi2 = 0.0;
    for (long c : counts) chi2 += (double(c) - expect) * (double(c) - expect) / expect;
    CHECK(chi2 < 18.48);  // chi-square 99th percentile, 7 dof
}

TEST_CASE("posterior filter matches brute-force joint conditioning") {
    Rng rng(21);
    SceneProcess proc = make_scene(3, 5, 4, 2.0, 0.9, 0.4, rng.sub("scene"));
    Rng trng = rng.sub("traj");
    Trajectory tr = sample_trajectory(proc, 4, trng);

    // observe a gappy subset of frames
    std::vector<long> idx = {0, 1, 2, 3, 9, 10, 14};
    std::vector<FrameObservation> obs;
    for (long i : idx) obs.push_back({i, tr.frame(int(i))});
    long start = 16;
    GaussianDist filt = conditional_chunk_dist(proc, obs, nullptr, nullptr, start);

    // brute force: joint Gaussian over frames 0..19, Schur-complement condition
    int F = proc.frame_dim;
    GaussianDist joint = window_joint(proc, 20);
    Eigen::Index no = Eigen::Index(idx.size()) * F;
    Eigen::Index nt = Eigen::Index(proc.chunk_size) * F;
    Eigen::VectorXd yo(no), mo(no);
    Eigen::MatrixXd Soo(no, no), Sto(nt, no), Stt(nt, nt);
    Eigen::VectorXd mt(nt);
    for (size_t a = 0; a < idx.size(); ++a) {
        yo.segment(Eigen::Index(a) * F, F) = tr.frame(int(idx[a]));
        mo.segment(Eigen::Index(a) * F, F) = joint.mean.segment(idx[a] * F, F);
        for (size_t b = 0; b < idx.size(); ++b)
            Soo.block(Eigen::Index(a) * F, Eigen::Index(b) * F, F, F) =
                joint.cov.block(idx[a] * F, idx[b] * F, F, F);
    }
    for (int r = 0; r < proc.chunk_size; ++r) {
        long fi = start + r;
        mt.segment(Eigen::Index(r) * F, F) = joint.mean.segment(fi * F, F);
        for (size_t b = 0; b < idx.size(); ++b)
            Sto.block(Eigen::Index(r) * F, Eigen::Index(b) * F, F, F) =
                joint.cov.block(fi * F, idx[b] * F, F, F);
        for (int r2 = 0; r2 < proc.chunk_size; ++r2)
            Stt.block(Eigen::Index(r) * F, Eigen::Index(r2) * F, F, F) =
                joint.cov.block(fi * F, (start + r2) * F, F, F);
    }
    Eigen::LLT<Eigen::MatrixXd> llt(Soo);
    Eigen::VectorXd bmean = mt + Sto * llt.solve(yo - mo);
    Eigen::MatrixXd bcov = Stt - Sto * llt.solve(Sto.transpose());

    CHECK((filt.mean - bmean).norm() < 1e-8 * std::max(1.0, bmean.norm()));
    CHECK((filt.cov - bcov).norm() < 1e-8 * std::max(1.0, bcov.norm()));
}

TEST_CASE("condition observation sharpens the identity posterior") {
    Rng rng(31);
    SceneProcess proc = make_scene(4, 8, 4, 3.0, 0.9, 0.3, rng.sub("scene"));
    ConditionModel cm = make_condition_model(proc, 3, 0.7, rng.sub("cond"));
    Rng trng = rng.sub("traj");
    Trajectory tr = sample_trajectory(proc, 2, trng);
    Eigen::VectorXd cond = sample_condition(cm, tr.identity, trng);

    GaussianDist with = conditional_chunk_dist(proc, {}, &cm, &cond, 0);
    GaussianDist without = conditional_chunk_dist(proc, {}, nullptr, nullptr, 0);
    CHECK(with.cov.trace() < without.cov.trace());

    // window joint given condition agrees with the filter route
    GaussianDist wj = window_joint_given_condition(proc, cm, cond, proc.chunk_size);
    CHECK((wj.mean - with.mean).norm() < 1e-9);
    CHECK((wj.cov - with.cov).norm() < 1e-9 * std::max(1.0, with.cov.norm()));
}

TEST_CASE("window_joint moments match sampling") {
    Rng rng(41);
    SceneProcess proc = make_scene(3, 4, 4, 2.0, 0.9, 0.4, rng.sub("scene"));
    GaussianDist wj = window_joint(proc, 8);
    Rng trng = rng.sub("traj");
    const int N = 20000;
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(wj.dim());
    Eigen::VectorXd var = Eigen::VectorXd::Zero(wj.dim());
    for (int i = 0; i < N; ++i) {
        Trajectory tr = sample_trajectory(proc, 2, trng);
        Eigen::VectorXd flat(wj.dim());
        flat << tr.chunks[0], tr.chunks[1];
        mean += flat;
        var += flat.cwiseProduct(flat);
    }
    mean /= N;
    var = var / N - mean.cwiseProduct(mean);
    for (Eigen::Index i = 0; i < wj.dim(); ++i) {
        double sd = std::sqrt(wj.cov(i, i));
        CHECK(std::abs(mean[i] - wj.mean[i]) < 4.0 * sd / std::sqrt(double(N)));
        CHECK(std::abs(var[i] - wj.cov(i, i)) < 0.06 * wj.cov(i, i));
    }
}
