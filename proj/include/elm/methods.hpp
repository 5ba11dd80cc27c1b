#pragma once

// Embeddable stochastic subgradient methods: one step maps
// (g, x, y, eta) to (x+, y+), where y is method-specific auxiliary state.
//
//   prox SGD    x+ = P_X(x - eta g)
//   prox SGDM   y+ = y - tau eta (y - g)
//               x+ = (1 - eta) x + eta P_X(x - alpha y+)
//   prox ADAM   m+ = m - tau1 eta (m - g)
//               v+ = v - tau2 eta (v - g*g)
//               x+ = (1 - eta) x + eta prox~_X(x, m+; sqrt(v+ + eps) / alpha)
//
// ADAM has no bias correction; its (m, v) pair is packed into y = [m; v].

#include <cmath>
#include <string>

#include "elm/geometry.hpp"
#include "elm/types.hpp"

namespace elm {

enum class MethodKind { prox_sgd, prox_sgdm, prox_adam };

inline const char *to_string(MethodKind k) {
    switch (k) {
    case MethodKind::prox_sgd:
        return "prox_sgd";
    case MethodKind::prox_sgdm:
        return "prox_sgdm";
    case MethodKind::prox_adam:
        return "prox_adam";
    }
    return "?";
}

struct MethodConfig {
    MethodKind kind = MethodKind::prox_sgd;
    /// SGDM momentum rate.
    double tau = 1.0;
    /// SGDM / ADAM prox scale.
    double alpha = 1.0;
    /// ADAM first / second moment rates, 0 < tau2 <= 4 tau1.
    double tau1 = 1.0;
    double tau2 = 0.1;
    double eps = 1e-8;

    void validate() const {
        if (!(alpha > 0.0))
            throw ParameterError("method alpha must be positive");
        if (kind == MethodKind::prox_sgdm && !(tau > 0.0))
            throw ParameterError("SGDM tau must be positive");
        if (kind == MethodKind::prox_adam) {
            if (!(tau2 > 0.0) || !(tau2 <= 4.0 * tau1))
                throw ParameterError("ADAM requires 0 < tau2 <= 4 tau1");
            if (!(eps > 0.0))
                throw ParameterError("ADAM eps must be positive");
        }
    }
};

/// (x, y) pair; y is empty for SGD, the momentum for SGDM and [m; v] for
/// ADAM.
struct EmbeddedMethodState {
    Vector x;
    Vector y;
};

inline Eigen::Index auxiliary_dim(MethodKind kind, Eigen::Index n) {
    switch (kind) {
    case MethodKind::prox_sgd:
        return 0;
    case MethodKind::prox_sgdm:
        return n;
    case MethodKind::prox_adam:
        return 2 * n;
    }
    return 0;
}

/// Auxiliary state starts at zero.
inline EmbeddedMethodState initial_method_state(const MethodConfig &cfg,
                                                const Vector &x0) {
    return {x0, Vector::Zero(auxiliary_dim(cfg.kind, x0.size()))};
}

/// sqrt(v + eps) / alpha
inline Vector adam_weight(const Vector &v, const MethodConfig &cfg) {
    return ((v.array() + cfg.eps).sqrt() / cfg.alpha).matrix();
}

namespace detail {
inline void check_step_dims(const Vector &g, const Vector &x) {
    if (g.size() != x.size())
        throw DimensionError("direction and iterate dimensions differ");
}
} // namespace detail

inline Vector step_prox_sgd(const FeasibleSet &set, const Vector &g,
                            const Vector &x, double eta) {
    detail::check_step_dims(g, x);
    if (!(eta > 0.0))
        throw ParameterError("stepsize must be positive");
    return project(set, x - eta * g);
}

struct SgdmStep {
    Vector x;
    Vector y;
};

inline SgdmStep step_prox_sgdm(const FeasibleSet &set, const Vector &g,
                               const Vector &x, const Vector &y, double eta,
                               const MethodConfig &cfg) {
    detail::check_step_dims(g, x);
    if (y.size() != x.size())
        throw DimensionError("SGDM momentum has wrong dimension");
    if (!(eta > 0.0) || eta > 1.0)
        throw ParameterError("SGDM requires 0 < eta <= 1");
    SgdmStep out;
    out.y = y - cfg.tau * eta * (y - g);
    out.x = (1.0 - eta) * x + eta * project(set, x - cfg.alpha * out.y);
    return out;
}

struct AdamStep {
    Vector x;
    Vector m;
    Vector v;
};

inline AdamStep step_prox_adam(const FeasibleSet &set, const Vector &g,
                               const Vector &x, const Vector &m,
                               const Vector &v, double eta,
                               const MethodConfig &cfg) {
    detail::check_step_dims(g, x);
    if (m.size() != x.size() || v.size() != x.size())
        throw DimensionError("ADAM moments have wrong dimension");
    if (!(eta > 0.0) || eta > 1.0)
        throw ParameterError("ADAM requires 0 < eta <= 1");
    if (eta * cfg.tau2 > 1.0)
        throw ParameterError("ADAM requires eta * tau2 <= 1 to keep v >= 0");
    if ((v.array() < 0.0).any())
        throw ParameterError("ADAM second moment must be nonnegative");
    AdamStep out;
    out.m = m - cfg.tau1 * eta * (m - g);
    out.v = v - cfg.tau2 * eta * (v - g.cwiseProduct(g));
    const Vector z = prox_preconditioned(set, x, out.m, adam_weight(out.v, cfg));
    out.x = (1.0 - eta) * x + eta * z;
    return out;
}

/// One step of the configured method on the packed state.
inline EmbeddedMethodState method_step(const MethodConfig &cfg,
                                       const FeasibleSet &set, const Vector &g,
                                       const EmbeddedMethodState &s,
                                       double eta) {
    const Eigen::Index n = s.x.size();
    if (s.y.size() != auxiliary_dim(cfg.kind, n))
        throw DimensionError(std::string("auxiliary state has wrong size for ") +
                             to_string(cfg.kind));
    switch (cfg.kind) {
    case MethodKind::prox_sgd:
        return {step_prox_sgd(set, g, s.x, eta), s.y};
    case MethodKind::prox_sgdm: {
        auto r = step_prox_sgdm(set, g, s.x, s.y, eta, cfg);
        return {std::move(r.x), std::move(r.y)};
    }
    case MethodKind::prox_adam: {
        auto r = step_prox_adam(set, g, s.x, s.y.head(n), s.y.tail(n), eta, cfg);
        Vector y(2 * n);
        y << r.m, r.v;
        return {std::move(r.x), std::move(y)};
    }
    }
    throw ParameterError("unknown method kind");
}

/// Euclidean distance between stacked (x, y) states.
inline double state_distance(const EmbeddedMethodState &a,
                             const EmbeddedMethodState &b) {
    return std::sqrt((a.x - b.x).squaredNorm() + (a.y - b.y).squaredNorm());
}

/// T such that dist(step(g, x, y, eta), (x, y)) <= eta * T for every
/// 0 < eta <= 1 (and eta tau2 <= 1 for ADAM), with x in X.
///
///   SGD:  ||g||                                     (P_X nonexpansive)
///   SGDM: alpha (||y|| + tau ||y - g||) + tau ||y - g||
///   ADAM: alpha (||m|| + tau1 ||m - g||) / sqrt(eps)
///         + tau1 ||m - g|| + tau2 ||v - g*g||
///
/// The ADAM prox displacement is bounded through its weight, which is at
/// least sqrt(eps) / alpha.
inline double method_displacement_bound(const MethodConfig &cfg,
                                        const Vector &g, const Vector &x,
                                        const Vector &y) {
    const Eigen::Index n = x.size();
    switch (cfg.kind) {
    case MethodKind::prox_sgd:
        return g.norm();
    case MethodKind::prox_sgdm: {
        const double drift = (y - g).norm();
        return cfg.alpha * (y.norm() + cfg.tau * drift) + cfg.tau * drift;
    }
    case MethodKind::prox_adam: {
        const auto m = y.head(n);
        const auto v = y.tail(n);
        const double drift = (m - g).norm();
        return cfg.alpha * (m.norm() + cfg.tau1 * drift) / std::sqrt(cfg.eps) +
               cfg.tau1 * drift + cfg.tau2 * (v - g.cwiseProduct(g)).norm();
    }
    }
    return 0.0;
}

} // namespace elm
