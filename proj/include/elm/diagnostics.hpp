#pragma once

// Computable surrogates for the objects the convergence theory talks
// about: the exact penalty g, the (modified) augmented Lagrangians, a
// projected-subgradient KKT residual, the auxiliary functions u_S and u_A
// of the momentum methods and their Lyapunov functions, and an empirical
// regularity constant.

#include <cmath>
#include <limits>
#include <optional>
#include <span>

#include "elm/core.hpp"
#include "elm/geometry.hpp"

namespace elm {

/// Per-iteration diagnostics. `g_val` always equals
/// penalty_value(f_val, feas, beta, rho).
struct MetricsRecord {
    std::int64_t k = 0;
    double f_val = 0.0;
    double feas = 0.0;
    double g_val = 0.0;
    double L_val = 0.0;
    double H_val = 0.0;
    double lambda_norm = 0.0;
    double kkt_residual = 0.0;
    double tracker_err = 0.0;
    std::optional<double> lyapunov;
};

/// f + beta ||c|| + rho/2 ||c||^2 from already evaluated parts.
inline double penalty_value(double f, double feas, double beta, double rho) {
    return f + beta * feas + (rho / 2.0) * feas * feas;
}

inline double penalty_g(const ProblemInstance &prob, const Vector &x,
                        double beta, double rho) {
    return penalty_value(eval_objective(prob, x),
                         eval_constraints(prob, x).norm(), beta, rho);
}

/// L_rho(x, lambda) = f + <lambda, c> + rho/2 ||c||^2
inline double merit_L(const ProblemInstance &prob, const Vector &x,
                      const Vector &lambda, double rho) {
    const Vector c = eval_constraints(prob, x);
    if (lambda.size() != c.size())
        throw DimensionError("multiplier has wrong dimension");
    return eval_objective(prob, x) + lambda.dot(c) + (rho / 2.0) * c.squaredNorm();
}

/// H_{rho,beta}(x, lambda) = L_rho(x, lambda) - ||c|| ||lambda||^2 / (2 beta)
inline double merit_H(const ProblemInstance &prob, const Vector &x,
                      const Vector &lambda, double rho, double beta) {
    if (!(beta > 0.0))
        throw ParameterError("beta must be positive");
    const double feas = eval_constraints(prob, x).norm();
    return merit_L(prob, x, lambda, rho) -
           feas * lambda.squaredNorm() / (2.0 * beta);
}

/// ||x - P_X(x - t (d + J lambda))|| / t with the fixed selections d, J.
inline double kkt_residual(const ProblemInstance &prob, const Vector &x,
                           const Vector &lambda, double eta_probe) {
    if (!(eta_probe > 0.0))
        throw ParameterError("kkt_residual requires eta_probe > 0");
    const Vector grad = objective_selection(prob, x) +
                        jacobian_selection(prob, x) * lambda;
    return (x - project(prob.feasible_set, x - eta_probe * grad)).norm() /
           eta_probe;
}

struct AuxiliaryValue {
    double value = 0.0;
    Vector minimizer;
};

/// u_S(x, y) = min_{w in X} <w - x, y> + alpha/2 ||w - x||^2, attained at
/// w = P_X(x - y / alpha). Nonpositive for x in X.
///
/// The SGDM Lyapunov function pairs a method with prox scale a with this
/// function at alpha = 1 / a, so that the minimizer is P_X(x - a y).
inline AuxiliaryValue u_S(const FeasibleSet &set, const Vector &x,
                          const Vector &y, double alpha) {
    if (!(alpha > 0.0))
        throw ParameterError("u_S requires alpha > 0");
    if (y.size() != x.size())
        throw DimensionError("u_S arguments differ in dimension");
    AuxiliaryValue out;
    out.minimizer = project(set, x - y / alpha);
    const Vector d = out.minimizer - x;
    out.value = d.dot(y) + 0.5 * alpha * d.squaredNorm();
    return out;
}

struct UAResult {
    double value = 0.0;
    Vector grad_x;
    Vector grad_y;
    Vector grad_v;
    /// z~_A(x, y, v)
    Vector minimizer;
};

/// u_A(x, y, v) = min_{z in X} <z - x, y> + 1/(2 alpha) <(v+eps)^(1/2) (z-x), z-x>
/// and its closed-form gradients
///
///   grad_x = -y + (v+eps)^(1/2) (x - z~) / alpha
///   grad_y = z~ - x
///   grad_v = (v+eps)^(-1/2) (z~ - x)^2 / (4 alpha)
inline UAResult u_A(const FeasibleSet &set, const Vector &x, const Vector &y,
                    const Vector &v, double alpha, double eps) {
    if (!(alpha > 0.0) || !(eps > 0.0))
        throw ParameterError("u_A requires alpha > 0 and eps > 0");
    if (y.size() != x.size() || v.size() != x.size())
        throw DimensionError("u_A arguments differ in dimension");
    if ((v.array() < 0.0).any())
        throw ParameterError("u_A requires v >= 0");
    const Eigen::ArrayXd root = (v.array() + eps).sqrt();
    const Vector weight = (root / alpha).matrix();

    UAResult out;
    out.minimizer = prox_preconditioned(set, x, y, weight);
    const Vector d = out.minimizer - x;
    out.value = d.dot(y) + 0.5 * d.dot(weight.cwiseProduct(d));
    out.grad_x = -y - weight.cwiseProduct(d);
    out.grad_y = d;
    out.grad_v = (d.array().square() / (4.0 * alpha * root)).matrix();
    return out;
}

/// Psi_S = h(x) - u_S(x, y) / tau
template <class H>
double lyapunov_S(H &&h, const FeasibleSet &set, const Vector &x,
                  const Vector &y, double tau, double alpha) {
    if (!(tau > 0.0))
        throw ParameterError("lyapunov_S requires tau > 0");
    return h(x) - u_S(set, x, y, alpha).value / tau;
}

/// Psi_A = h(x) - u_A(x, y, v) / tau1
template <class H>
double lyapunov_A(H &&h, const FeasibleSet &set, const Vector &x,
                  const Vector &y, const Vector &v, double tau1, double alpha,
                  double eps) {
    if (!(tau1 > 0.0))
        throw ParameterError("lyapunov_A requires tau1 > 0");
    return h(x) - u_A(set, x, y, v, alpha, eps).value / tau1;
}

/// min over the samples of dist(-J c(x), N_X(x)) / ||c(x)||. Samples with
/// c(x) = 0 are skipped; throws if every sample is feasible.
inline double estimate_regularity(const ProblemInstance &prob,
                                  std::span<const Vector> sample_points) {
    double best = std::numeric_limits<double>::infinity();
    bool any = false;
    for (const auto &x : sample_points) {
        const Vector c = eval_constraints(prob, x);
        const double cn = c.norm();
        if (cn == 0.0)
            continue;
        const Vector Jc = jacobian_selection(prob, x) * c;
        best = std::min(best,
                        normal_cone_distance(prob.feasible_set, x, Jc) / cn);
        any = true;
    }
    if (!any)
        throw Error("estimate_regularity: every sample point is feasible");
    return best;
}

} // namespace elm
