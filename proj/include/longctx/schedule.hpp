#pragma once

#include <vector>

#include <Eigen/Dense>

namespace longctx {

enum class ScheduleKind { VariancePreserving };

// Denoise timestep grid. Index convention throughout the project:
// timestep index 0 is the distinguished clean level, indices 1..steps map to
// t[0]..t[steps-1] with index `steps` the largest-noise step.
struct DiffusionSchedule {
    int steps = 0;  // T
    std::vector<double> t;           // t_1..t_T in (0,1)
    std::vector<double> alpha;       // signal coefficient, strictly decreasing
    std::vector<double> sigma;       // noise coefficient, strictly increasing
    std::vector<double> dmd_weight;  // w_t, all positive and finite

    double alpha_at(int tidx) const { return tidx == 0 ? 1.0 : alpha[size_t(tidx - 1)]; }
    double sigma_at(int tidx) const { return tidx == 0 ? 0.0 : sigma[size_t(tidx - 1)]; }
};

// Variance-preserving grid: t_i = (i - 1/2)/T, alpha = cos(pi t / 2),
// sigma = sin(pi t / 2), w_t = sigma^2 / alpha. The half-step offset keeps
// alpha_T > 0 so every w_t is finite.
DiffusionSchedule make_schedule(int steps, ScheduleKind kind = ScheduleKind::VariancePreserving);

// alpha_t * x0 + sigma_t * eps; tidx == 0 returns x0 unchanged.
Eigen::VectorXd add_noise(const Eigen::VectorXd& x0, const Eigen::VectorXd& eps, int tidx,
                          const DiffusionSchedule& sched);

}  // namespace longctx
