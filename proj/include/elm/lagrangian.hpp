#pragma once

// Single-loop Lagrangian drivers. One iteration:
//
//   l      = d + J (lambda + rho w) + xi          (subgradient of L_rho in x)
//   (x, y) <- method step on l                     (SGD / SGDM / ADAM)
//   w      <- tracked estimate of c(x+)            (exact or correction)
//   lambda <- lambda + theta (regu(w+) - lambda / beta)
//
// The dual step is a normalized ascent step on the modified penalty
// H_{rho,beta}; it contracts ||lambda|| - beta by (1 - theta / beta) every
// iteration. The expectation-constrained driver draws the objective sample,
// the constraint sample shared by the tracker's two evaluations and an
// independent Jacobian sample on every iteration.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "elm/core.hpp"
#include "elm/diagnostics.hpp"
#include "elm/geometry.hpp"
#include "elm/methods.hpp"

namespace elm {

/// Norms at or below this are treated as zero by regu.
inline constexpr double regu_zero_tol = 1e-14;

enum class ScheduleKind { constant, inv_sqrt_epoch, power, inv_sqrt_time };

/// Positive, nonincreasing stepsize sequences.
///
///   constant        c
///   inv_sqrt_epoch  c / sqrt(floor(k / epoch_len) + 1)
///   power           c / (k + 1)^exponent,  exponent in (0, 1]
///   inv_sqrt_time   c / sqrt(1 + k / time_scale)
struct StepSchedule {
    ScheduleKind kind = ScheduleKind::constant;
    double c = 0.1;
    std::int64_t epoch_len = 1;
    double exponent = 0.5;
    double time_scale = 1.0;

    static StepSchedule constant(double c) { return {ScheduleKind::constant, c}; }
    static StepSchedule inv_sqrt_epoch(double c, std::int64_t epoch_len) {
        StepSchedule s{ScheduleKind::inv_sqrt_epoch, c};
        s.epoch_len = epoch_len;
        return s;
    }
    static StepSchedule power(double c, double exponent) {
        StepSchedule s{ScheduleKind::power, c};
        s.exponent = exponent;
        return s;
    }
    static StepSchedule inv_sqrt_time(double c, double time_scale) {
        StepSchedule s{ScheduleKind::inv_sqrt_time, c};
        s.time_scale = time_scale;
        return s;
    }

    double operator()(std::int64_t k) const {
        const auto kd = static_cast<double>(k);
        switch (kind) {
        case ScheduleKind::constant:
            return c;
        case ScheduleKind::inv_sqrt_epoch:
            return c / std::sqrt(static_cast<double>(k / epoch_len) + 1.0);
        case ScheduleKind::power:
            return c / std::pow(kd + 1.0, exponent);
        case ScheduleKind::inv_sqrt_time:
            return c / std::sqrt(1.0 + kd / time_scale);
        }
        return c;
    }

    /// Largest emitted value (every kind is nonincreasing).
    double max_value() const { return (*this)(0); }

    /// Diminishing with a divergent sum.
    bool diminishing() const { return kind != ScheduleKind::constant; }

    void validate(const char *name, bool allow_zero = false) const {
        const std::string n(name);
        if (!std::isfinite(c) || (allow_zero ? c < 0.0 : !(c > 0.0)))
            throw ParameterError(n + ": schedule constant must be " +
                                 (allow_zero ? "nonnegative" : "positive"));
        if (kind == ScheduleKind::inv_sqrt_epoch && epoch_len < 1)
            throw ParameterError(n + ": epoch_len must be >= 1");
        if (kind == ScheduleKind::power && !(exponent > 0.0 && exponent <= 1.0))
            throw ParameterError(n + ": power exponent must lie in (0, 1]");
        if (kind == ScheduleKind::inv_sqrt_time && !(time_scale > 0.0))
            throw ParameterError(n + ": time_scale must be positive");
    }
};

enum class TrackerKind { exact, correction };

struct TrackerConfig {
    TrackerKind kind = TrackerKind::exact;
    double tau_tilde = 1.0;
};

enum class DualKind { elm_regu, ialm_baseline };

struct DualConfig {
    DualKind kind = DualKind::elm_regu;
    // Baseline dual: lambda += min(theta_tilde / ||c||, beta_tilde sigma^j) c,
    // applied once every `inner_steps` primal steps (j counts dual updates).
    double beta_tilde = 1.0;
    double sigma = 2.0;
    double theta_tilde = 1.0;
    std::int64_t inner_steps = 1;
};

struct SolverConfig {
    double rho = 1.0;
    double beta = 1.0;
    StepSchedule theta = StepSchedule::constant(0.5);
    StepSchedule eta = StepSchedule::power(0.5, 0.5);
    MethodConfig method;
    TrackerConfig tracker;
    DualConfig dual;
    NoiseModel noise;
    Inexactness inexactness;
    std::int64_t max_iters = 1000;
    std::uint64_t seed = 0;
    /// Probe stepsize of the projected KKT residual in metrics.
    double kkt_probe = 1e-2;
    /// Initial multiplier; empty means zero.
    Vector lambda0;

    void validate() const {
        if (!(rho >= 0.0) || !std::isfinite(rho))
            throw ParameterError("rho must be finite and >= 0");
        if (!(beta > 0.0) || !std::isfinite(beta))
            throw ParameterError("beta must be finite and positive");
        theta.validate("theta", /*allow_zero=*/true);
        eta.validate("eta");
        method.validate();
        noise.validate();
        if (dual.kind == DualKind::elm_regu && !(theta.max_value() < beta))
            throw ParameterError(
                "theta schedule violates theta_max < beta (max theta = " +
                std::to_string(theta.max_value()) +
                ", beta = " + std::to_string(beta) + ")");
        const double eta_max = eta.max_value();
        if (method.kind != MethodKind::prox_sgd && eta_max > 1.0)
            throw ParameterError("momentum methods require eta <= 1");
        if (method.kind == MethodKind::prox_adam && eta_max * method.tau2 > 1.0)
            throw ParameterError("ADAM requires eta * tau2 <= 1");
        if (tracker.kind == TrackerKind::correction) {
            if (!(tracker.tau_tilde > 0.0))
                throw ParameterError("tracker tau_tilde must be positive");
            if (tracker.tau_tilde * eta_max > 1.0)
                throw ParameterError("correction tracker requires tau_tilde * eta <= 1");
        }
        if (dual.kind == DualKind::ialm_baseline) {
            if (!(dual.beta_tilde > 0.0) || !(dual.sigma > 1.0))
                throw ParameterError("baseline dual requires beta_tilde > 0 and sigma > 1");
            if (!(dual.theta_tilde > 0.0))
                throw ParameterError("baseline dual requires theta_tilde > 0");
            if (dual.inner_steps < 1)
                throw ParameterError("inner_steps must be >= 1");
        }
        if (!(kkt_probe > 0.0))
            throw ParameterError("kkt_probe must be positive");
        if (max_iters < 0)
            throw ParameterError("max_iters must be >= 0");
        if (inexactness.radius0 < 0.0 || inexactness.decay <= 0.0)
            throw ParameterError("inexactness requires radius0 >= 0 and decay > 0");
        if (!lambda0.allFinite())
            throw ParameterError("lambda0 must be finite");
    }
};

struct LagrangianState {
    EmbeddedMethodState method;
    Vector lambda;
    Vector w;
    std::int64_t k = 0;
};

/// Private random streams of one run.
struct RandomStreams {
    std::mt19937_64 noise;
    std::mt19937_64 perturbation;
    SampleStream samples;

    explicit RandomStreams(const SolverConfig &cfg)
        : noise(detail::mix_seed(cfg.seed) ^ detail::mix_seed(cfg.noise.seed + 1)),
          perturbation(detail::mix_seed(cfg.seed + 2)), samples(cfg.seed + 3) {}
};

/// y / ||y||, or 0 when ||y|| <= regu_zero_tol.
inline Vector regu(const Vector &y) {
    const double n = y.norm();
    if (n <= regu_zero_tol)
        return Vector::Zero(y.size());
    return y / n;
}

/// lambda + theta (regu(w+) - lambda / beta), 0 <= theta < beta.
inline Vector dual_step_elm(const Vector &lambda, const Vector &w_next,
                            double theta, double beta) {
    if (!(beta > 0.0))
        throw ParameterError("beta must be positive");
    if (!(theta >= 0.0) || !(theta < beta))
        throw ParameterError("dual step requires 0 <= theta < beta");
    if (lambda.size() != w_next.size())
        throw DimensionError("multiplier and tracker dimensions differ");
    return lambda + theta * (regu(w_next) - lambda / beta);
}

/// lambda + min(theta_tilde / ||c+||, beta_tilde sigma^k) c+; unchanged at c+ = 0.
inline Vector dual_step_ialm(const Vector &lambda, const Vector &c_next,
                             double theta_tilde, double beta_tilde,
                             double sigma, std::int64_t k) {
    if (!(beta_tilde > 0.0) || !(sigma > 1.0))
        throw ParameterError("baseline dual requires beta_tilde > 0 and sigma > 1");
    if (lambda.size() != c_next.size())
        throw DimensionError("multiplier and constraint dimensions differ");
    const double cn = c_next.norm();
    if (cn == 0.0)
        return lambda;
    const double cap = beta_tilde * std::pow(sigma, static_cast<double>(k));
    return lambda + std::min(theta_tilde / cn, cap) * c_next;
}

inline Vector track_exact(const ProblemInstance &prob, const Vector &x_next) {
    return eval_constraints(prob, x_next);
}

/// w - tau_tilde eta (w - C(x, s)) + C(x+, s) - C(x, s)
inline Vector track_correction(const Vector &w, const Vector &c_at_x,
                               const Vector &c_at_next, double tau_tilde,
                               double eta) {
    if (tau_tilde * eta > 1.0)
        throw ParameterError("correction tracker requires tau_tilde * eta <= 1");
    if (c_at_x.size() != w.size() || c_at_next.size() != w.size())
        throw DimensionError("tracker inputs differ in dimension");
    return w - tau_tilde * eta * (w - c_at_x) + (c_at_next - c_at_x);
}

/// Facts about one executed iteration, used for runtime invariant checks.
struct StepAudit {
    double eta = 0.0;
    double theta = 0.0;
    double lambda_norm_before = 0.0;
    double lambda_norm_after = 0.0;
    bool regu_dual = false;
    double displacement = 0.0;
    double displacement_bound = 0.0;
};

struct StepResult {
    LagrangianState state;
    StepAudit audit;
};

namespace detail {

inline Vector apply_dual(const SolverConfig &cfg, const LagrangianState &s,
                         const Vector &w_next, double theta, StepAudit &audit) {
    audit.lambda_norm_before = s.lambda.norm();
    Vector out;
    if (cfg.dual.kind == DualKind::elm_regu) {
        audit.regu_dual = true;
        out = dual_step_elm(s.lambda, w_next, theta, cfg.beta);
    } else {
        const std::int64_t done = s.k + 1;
        if (done % cfg.dual.inner_steps == 0)
            out = dual_step_ialm(s.lambda, w_next, cfg.dual.theta_tilde,
                                 cfg.dual.beta_tilde, cfg.dual.sigma,
                                 done / cfg.dual.inner_steps - 1);
        else
            out = s.lambda;
    }
    audit.lambda_norm_after = out.norm();
    return out;
}

inline void check_direction(const Vector &l, std::int64_t k) {
    if (!l.allFinite())
        throw NonFiniteError("non-finite Lagrangian subgradient at iteration " +
                             std::to_string(k));
}

inline StepResult finish_step(const SolverConfig &cfg, const LagrangianState &s,
                              const Vector &l,
                              double eta, double theta,
                              EmbeddedMethodState method_next, Vector w_next) {
    StepResult r;
    r.audit.eta = eta;
    r.audit.theta = theta;
    r.audit.displacement = state_distance(method_next, s.method);
    r.audit.displacement_bound =
        eta * method_displacement_bound(cfg.method, l, s.method.x, s.method.y);
    r.state.lambda = apply_dual(cfg, s, w_next, theta, r.audit);
    r.state.method = std::move(method_next);
    r.state.w = std::move(w_next);
    r.state.k = s.k + 1;
    if (!r.state.method.x.allFinite() || !r.state.method.y.allFinite() ||
        !r.state.w.allFinite() || !r.state.lambda.allFinite())
        throw NonFiniteError("non-finite state after iteration " +
                             std::to_string(s.k));
    return r;
}

} // namespace detail

inline LagrangianState initial_state(const ProblemInstance &prob,
                                     const SolverConfig &cfg, const Vector &x0) {
    if (!contains(prob.feasible_set, x0))
        throw ParameterError("initial point is not in the feasible set");
    LagrangianState s;
    s.method = initial_method_state(cfg.method, x0);
    if (cfg.lambda0.size() == 0)
        s.lambda = Vector::Zero(prob.dim_constraint);
    else if (cfg.lambda0.size() == prob.dim_constraint)
        s.lambda = cfg.lambda0;
    else
        throw DimensionError("lambda0 must have the constraint dimension");
    s.w = eval_constraints(prob, x0);
    return s;
}

/// w0 is one constraint sample at x0.
inline LagrangianState initial_state(const StochasticProblemInstance &sprob,
                                     const SolverConfig &cfg, const Vector &x0,
                                     RandomStreams &streams) {
    LagrangianState s = initial_state(sprob.mean, cfg, x0);
    s.w = sprob.constraint_sample(x0, streams.samples.next());
    return s;
}

/// One deterministic-oracle iteration.
inline StepResult elm_step(const ProblemInstance &prob,
                           const LagrangianState &s, const SolverConfig &cfg,
                           RandomStreams &streams) {
    const double eta = cfg.eta(s.k);
    const double theta = cfg.theta(s.k);
    const Vector &x = s.method.x;

    Vector d = objective_selection(prob, x);
    Matrix J = jacobian_selection(prob, x);
    if (cfg.inexactness.active()) {
        const double r = cfg.inexactness.radius(s.k);
        perturb_selection(d, r, streams.perturbation);
        perturb_selection(J, r, streams.perturbation);
    }
    Vector l = d + J * (s.lambda + cfg.rho * s.w);
    if (cfg.noise.kind != NoiseKind::none)
        l += draw_noise(cfg.noise, l.size(), streams.noise);
    detail::check_direction(l, s.k);

    EmbeddedMethodState next =
        method_step(cfg.method, prob.feasible_set, l, s.method, eta);

    Vector w_next;
    if (cfg.tracker.kind == TrackerKind::exact) {
        w_next = track_exact(prob, next.x);
    } else {
        w_next = track_correction(s.w, eval_constraints(prob, x),
                                  eval_constraints(prob, next.x),
                                  cfg.tracker.tau_tilde, eta);
    }
    return detail::finish_step(cfg, s, l, eta, theta,
                               std::move(next), std::move(w_next));
}

/// One expectation-constrained iteration (correction tracker required).
inline StepResult eclm_step(const StochasticProblemInstance &sprob,
                            const LagrangianState &s, const SolverConfig &cfg,
                            RandomStreams &streams) {
    if (cfg.tracker.kind != TrackerKind::correction)
        throw ParameterError("the expectation-constrained driver needs the correction tracker");
    const double eta = cfg.eta(s.k);
    const double theta = cfg.theta(s.k);
    const Vector &x = s.method.x;

    const SampleToken omega_f = streams.samples.next();
    const SampleToken omega_c = streams.samples.next();
    const SampleToken omega_c_tilde = streams.samples.next();

    Vector g = sprob.objective_subgradient_sample(x, omega_f);
    if (g.size() != x.size())
        throw DimensionError("subgradient sample has wrong dimension");
    Matrix J = sprob.jacobian_sample(x, omega_c_tilde);
    if (J.rows() != x.size() || J.cols() != sprob.dim_constraint())
        throw DimensionError("Jacobian sample must have shape n x p");
    Vector l = g + J * (s.lambda + cfg.rho * s.w);
    if (cfg.noise.kind != NoiseKind::none)
        l += draw_noise(cfg.noise, l.size(), streams.noise);
    detail::check_direction(l, s.k);

    EmbeddedMethodState next =
        method_step(cfg.method, sprob.mean.feasible_set, l, s.method, eta);

    const ConstraintPair pair =
        sample_constraint_pair(sprob, x, next.x, omega_c, omega_c_tilde);
    Vector w_next = track_correction(s.w, pair.at_x, pair.at_next,
                                     cfg.tracker.tau_tilde, eta);
    return detail::finish_step(cfg, s, l, eta, theta,
                               std::move(next), std::move(w_next));
}

/// Diagnostics of a state against the exact oracles; the Lyapunov value
/// uses the penalty g as h.
inline MetricsRecord compute_metrics(const ProblemInstance &prob,
                                     const LagrangianState &s,
                                     const SolverConfig &cfg) {
    const Vector &x = s.method.x;
    MetricsRecord m;
    m.k = s.k;
    m.f_val = eval_objective(prob, x);
    const Vector c = eval_constraints(prob, x);
    m.feas = c.norm();
    m.g_val = penalty_value(m.f_val, m.feas, cfg.beta, cfg.rho);
    m.L_val = m.f_val + s.lambda.dot(c) + (cfg.rho / 2.0) * m.feas * m.feas;
    m.lambda_norm = s.lambda.norm();
    m.H_val = m.L_val - m.feas * m.lambda_norm * m.lambda_norm / (2.0 * cfg.beta);
    m.kkt_residual = kkt_residual(prob, x, s.lambda, cfg.kkt_probe);
    m.tracker_err = (s.w - c).norm();

    const Eigen::Index n = x.size();
    switch (cfg.method.kind) {
    case MethodKind::prox_sgd:
        break;
    case MethodKind::prox_sgdm:
        m.lyapunov = m.g_val - u_S(prob.feasible_set, x, s.method.y,
                                   1.0 / cfg.method.alpha)
                                       .value /
                                   cfg.method.tau;
        break;
    case MethodKind::prox_adam:
        m.lyapunov = m.g_val - u_A(prob.feasible_set, x, s.method.y.head(n),
                                   s.method.y.tail(n), cfg.method.alpha,
                                   cfg.method.eps)
                                       .value /
                                   cfg.method.tau1;
        break;
    }
    return m;
}

struct IterationResult {
    LagrangianState state;
    MetricsRecord metrics;
};

/// One iteration plus diagnostics of the new state.
inline IterationResult elm_iterate(const ProblemInstance &prob,
                                   const LagrangianState &s,
                                   const SolverConfig &cfg,
                                   RandomStreams &streams) {
    auto r = elm_step(prob, s, cfg, streams);
    auto m = compute_metrics(prob, r.state, cfg);
    return {std::move(r.state), std::move(m)};
}

inline IterationResult eclm_iterate(const StochasticProblemInstance &sprob,
                                    const LagrangianState &s,
                                    const SolverConfig &cfg,
                                    RandomStreams &streams) {
    auto r = eclm_step(sprob, s, cfg, streams);
    auto m = compute_metrics(sprob.mean, r.state, cfg);
    return {std::move(r.state), std::move(m)};
}

struct RunOptions {
    std::int64_t record_every = 10;
};

/// Worst observed slack of the runtime invariants over a run. Positive
/// values are violations.
struct InvariantReport {
    /// max (||lambda+|| - beta) - (1 - theta/beta)(||lambda|| - beta)
    double dual_contraction = -std::numeric_limits<double>::infinity();
    /// max dist((x+,y+),(x,y)) - eta T
    double displacement = -std::numeric_limits<double>::infinity();
    /// max ||lambda_k|| - beta over k >= first index with ||lambda|| <= beta
    double dual_bound_after_entry = -std::numeric_limits<double>::infinity();
};

struct RunResult {
    std::vector<MetricsRecord> trajectory;
    LagrangianState final_state;
    MetricsRecord initial_metrics;
    bool aborted = false;
    std::string abort_reason;
    InvariantReport invariants;
    double wall_seconds = 0.0;
};

namespace detail {

template <class Step>
RunResult run_loop(const ProblemInstance &exact, LagrangianState state,
                   const SolverConfig &cfg, const RunOptions &opts, Step &&step) {
    if (opts.record_every < 1)
        throw ParameterError("record_every must be >= 1");
    const auto t0 = std::chrono::steady_clock::now();
    RunResult out;
    out.initial_metrics = compute_metrics(exact, state, cfg);
    out.trajectory.push_back(out.initial_metrics);
    bool inside = state.lambda.norm() <= cfg.beta;
    try {
        for (std::int64_t it = 0; it < cfg.max_iters; ++it) {
            StepResult r = step(state);
            const StepAudit &a = r.audit;
            auto &inv = out.invariants;
            if (a.regu_dual) {
                const double lhs = a.lambda_norm_after - cfg.beta;
                const double rhs =
                    (1.0 - a.theta / cfg.beta) * (a.lambda_norm_before - cfg.beta);
                inv.dual_contraction = std::max(inv.dual_contraction, lhs - rhs);
                if (inside)
                    inv.dual_bound_after_entry =
                        std::max(inv.dual_bound_after_entry, lhs);
                inside = inside || a.lambda_norm_after <= cfg.beta;
            }
            inv.displacement =
                std::max(inv.displacement, a.displacement - a.displacement_bound);
            state = std::move(r.state);
            if (state.k % opts.record_every == 0 || it + 1 == cfg.max_iters)
                out.trajectory.push_back(compute_metrics(exact, state, cfg));
        }
    } catch (const NonFiniteError &e) {
        out.aborted = true;
        out.abort_reason = e.what();
    }
    out.final_state = std::move(state);
    out.wall_seconds = std::chrono::duration<double>(
                           std::chrono::steady_clock::now() - t0)
                           .count();
    return out;
}

} // namespace detail

/// Runs `cfg.max_iters` deterministic-oracle iterations from x0. Metrics are
/// recorded at k = 0, every `record_every` iterations and at the end. A
/// non-finite state aborts the run and keeps the partial trajectory.
inline RunResult run(const ProblemInstance &prob, const SolverConfig &cfg,
                     const Vector &x0, const RunOptions &opts = {}) {
    prob.validate();
    cfg.validate();
    RandomStreams streams(cfg);
    return detail::run_loop(prob, initial_state(prob, cfg, x0), cfg, opts,
                            [&](const LagrangianState &s) {
                                return elm_step(prob, s, cfg, streams);
                            });
}

inline RunResult run(const StochasticProblemInstance &sprob,
                     const SolverConfig &cfg, const Vector &x0,
                     const RunOptions &opts = {}) {
    sprob.validate();
    cfg.validate();
    if (cfg.tracker.kind != TrackerKind::correction)
        throw ParameterError("the expectation-constrained driver needs the correction tracker");
    RandomStreams streams(cfg);
    return detail::run_loop(sprob.mean, initial_state(sprob, cfg, x0, streams),
                            cfg, opts, [&](const LagrangianState &s) {
                                return eclm_step(sprob, s, cfg, streams);
                            });
}

} // namespace elm
