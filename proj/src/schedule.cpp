#include "longctx/schedule.hpp"

#include <cmath>
#include <stdexcept>

namespace longctx {

DiffusionSchedule make_schedule(int steps, ScheduleKind kind) {
    if (steps < 1) throw std::invalid_argument("make_schedule: steps must be >= 1");
    if (kind != ScheduleKind::VariancePreserving)
        throw std::invalid_argument("make_schedule: unknown schedule kind");
    DiffusionSchedule s;
    s.steps = steps;
    s.t.resize(size_t(steps));
    s.alpha.resize(size_t(steps));
    s.sigma.resize(size_t(steps));
    s.dmd_weight.resize(size_t(steps));
    for (int i = 1; i <= steps; ++i) {
        double t = (double(i) - 0.5) / double(steps);
        double a = std::cos(M_PI * t / 2.0);
        double sg = std::sin(M_PI * t / 2.0);
        s.t[size_t(i - 1)] = t;
        s.alpha[size_t(i - 1)] = a;
        s.sigma[size_t(i - 1)] = sg;
        s.dmd_weight[size_t(i - 1)] = sg * sg / a;
    }
    return s;
}

Eigen::VectorXd add_noise(const Eigen::VectorXd& x0, const Eigen::VectorXd& eps, int tidx,
                          const DiffusionSchedule& sched) {
    if (x0.size() != eps.size()) throw std::invalid_argument("add_noise: shape mismatch");
    if (tidx < 0 || tidx > sched.steps) throw std::invalid_argument("add_noise: timestep out of range");
    if (tidx == 0) return x0;
    return sched.alpha_at(tidx) * x0 + sched.sigma_at(tidx) * eps;
}

}  // namespace longctx
