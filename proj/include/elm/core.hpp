#pragma once

// Problem model for equality-constrained nonsmooth problems
//
//     min_x f(x)  s.t.  c(x) = 0,  x in X,
//
// as consumed by the single-loop Lagrangian drivers: value and selection
// oracles for f and c, the feasible set, bounded zero-mean noise, and the
// per-sample oracles of the expectation-constrained variant.

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>

#include "elm/geometry.hpp"
#include "elm/types.hpp"

namespace elm {

/// Thrown when an oracle returns NaN or Inf.
class NonFiniteError : public Error {
  public:
    using Error::Error;
};

inline bool all_finite(const Vector &v) { return v.allFinite(); }

namespace detail {

inline void check_finite(const Vector &v, const char *what) {
    if (!v.allFinite())
        throw NonFiniteError(std::string(what) + ": non-finite oracle output");
}

inline void check_finite(const Matrix &m, const char *what) {
    if (!m.allFinite())
        throw NonFiniteError(std::string(what) + ": non-finite oracle output");
}

inline void check_finite(double v, const char *what) {
    if (!std::isfinite(v))
        throw NonFiniteError(std::string(what) + ": non-finite oracle output");
}

/// splitmix64 finalizer, used to derive independent sub-seeds.
constexpr std::uint64_t mix_seed(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Uniform double in [0, 1) from the top 53 bits; independent of the
/// standard library's distribution implementations.
inline double unit_uniform(std::mt19937_64 &rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double symmetric_uniform(std::mt19937_64 &rng, double bound) {
    return bound * (2.0 * unit_uniform(rng) - 1.0);
}

/// Standard normal via Box-Muller on our own uniforms.
inline double standard_normal(std::mt19937_64 &rng) {
    constexpr double two_pi = 6.283185307179586476925286766559;
    double u1 = unit_uniform(rng);
    while (u1 <= 0.0)
        u1 = unit_uniform(rng);
    const double u2 = unit_uniform(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
}

} // namespace detail

/// Deterministic view of (f, c, D_f, D_c, X).
struct ProblemInstance {
    int dim_primal = 0;
    int dim_constraint = 0;
    std::function<double(const Vector &)> objective;
    /// One fixed selection from D_f(x).
    std::function<Vector(const Vector &)> objective_subgradient;
    std::function<Vector(const Vector &)> constraints;
    /// One fixed selection from D_c(x), shape n x p.
    std::function<Matrix(const Vector &)> constraint_jacobian;
    FeasibleSet feasible_set = FeasibleSet::whole_space(1);
    std::optional<double> lipschitz_bound_f;
    std::optional<double> regularity_constant;

    void validate() const {
        if (dim_primal < 1 || dim_constraint < 1)
            throw ParameterError("problem dimensions must be positive");
        if (!objective || !objective_subgradient || !constraints ||
            !constraint_jacobian)
            throw ParameterError("problem is missing an oracle");
        if (feasible_set.dim() != dim_primal)
            throw DimensionError("feasible set dimension does not match n");
        if (lipschitz_bound_f && !(*lipschitz_bound_f > 0.0))
            throw ParameterError("Lipschitz bound M_f must be positive");
        if (regularity_constant && !(*regularity_constant > 0.0))
            throw ParameterError("regularity constant nu must be positive");
    }
};

namespace detail {
inline void check_primal_dim(const ProblemInstance &prob, const Vector &x) {
    if (x.size() != prob.dim_primal)
        throw DimensionError("expected a primal vector of dimension " +
                             std::to_string(prob.dim_primal) + ", got " +
                             std::to_string(x.size()));
}
} // namespace detail

enum class NoiseKind { none, uniform_box, truncated_gaussian };

/// Independent, bounded, zero-mean additive noise. Every draw satisfies
/// ||xi||_inf <= bound.
struct NoiseModel {
    NoiseKind kind = NoiseKind::none;
    double bound = 0.0;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(bound >= 0.0) || !std::isfinite(bound))
            throw ParameterError("noise bound must be finite and >= 0");
    }
};

/// Draws one noise vector of dimension n.
///
/// `truncated_gaussian` uses a centered normal with standard deviation
/// bound/2, rejected coordinatewise outside [-bound, bound]; the symmetric
/// truncation keeps the mean at zero.
inline Vector draw_noise(const NoiseModel &noise, Eigen::Index n,
                         std::mt19937_64 &rng) {
    Vector xi = Vector::Zero(n);
    if (noise.kind == NoiseKind::none || noise.bound == 0.0)
        return xi;
    for (Eigen::Index i = 0; i < n; ++i) {
        if (noise.kind == NoiseKind::uniform_box) {
            xi[i] = detail::symmetric_uniform(rng, noise.bound);
        } else {
            double z;
            do {
                z = 0.5 * noise.bound * detail::standard_normal(rng);
            } while (std::abs(z) > noise.bound);
            xi[i] = z;
        }
    }
    return xi;
}

inline double eval_objective(const ProblemInstance &prob, const Vector &x) {
    detail::check_primal_dim(prob, x);
    const double v = prob.objective(x);
    detail::check_finite(v, "objective");
    return v;
}

inline Vector eval_constraints(const ProblemInstance &prob, const Vector &x) {
    detail::check_primal_dim(prob, x);
    Vector c = prob.constraints(x);
    if (c.size() != prob.dim_constraint)
        throw DimensionError("constraint oracle returned wrong dimension");
    detail::check_finite(c, "constraints");
    return c;
}

inline Vector objective_selection(const ProblemInstance &prob,
                                  const Vector &x) {
    detail::check_primal_dim(prob, x);
    Vector d = prob.objective_subgradient(x);
    if (d.size() != prob.dim_primal)
        throw DimensionError("subgradient oracle returned wrong dimension");
    detail::check_finite(d, "objective subgradient");
    return d;
}

inline Matrix jacobian_selection(const ProblemInstance &prob,
                                 const Vector &x) {
    detail::check_primal_dim(prob, x);
    Matrix J = prob.constraint_jacobian(x);
    if (J.rows() != prob.dim_primal || J.cols() != prob.dim_constraint)
        throw DimensionError("constraint Jacobian must have shape n x p");
    detail::check_finite(J, "constraint Jacobian");
    return J;
}

/// Selection from D_f(x) plus one noise draw.
inline Vector sample_objective_subgradient(const ProblemInstance &prob,
                                           const Vector &x,
                                           const NoiseModel &noise,
                                           std::mt19937_64 &rng) {
    Vector d = objective_selection(prob, x);
    if (noise.kind != NoiseKind::none)
        d += draw_noise(noise, d.size(), rng);
    return d;
}

/// Opaque realization of a random sample. Per-sample oracles are pure
/// functions of (x, token), so re-using a token re-uses the sample.
struct SampleToken {
    std::uint64_t value = 0;
    friend bool operator==(SampleToken, SampleToken) = default;
};

/// Seeded generator of sample tokens.
class SampleStream {
  public:
    explicit SampleStream(std::uint64_t seed) : rng_(detail::mix_seed(seed)) {}
    SampleToken next() { return SampleToken{rng_()}; }

  private:
    std::mt19937_64 rng_;
};

/// Expectation-constrained problem: f = E[F(., w_f)], c = E[C(., w_c)].
///
/// `mean` carries the exact f and c (used for metrics and tracker-error
/// measurement) together with the feasible set.
struct StochasticProblemInstance {
    ProblemInstance mean;
    std::function<Vector(const Vector &, SampleToken)> objective_subgradient_sample;
    std::function<Vector(const Vector &, SampleToken)> constraint_sample;
    std::function<Matrix(const Vector &, SampleToken)> jacobian_sample;

    int dim_primal() const { return mean.dim_primal; }
    int dim_constraint() const { return mean.dim_constraint; }

    void validate() const {
        mean.validate();
        if (!objective_subgradient_sample || !constraint_sample ||
            !jacobian_sample)
            throw ParameterError("stochastic problem is missing an oracle");
    }
};

/// Wraps a deterministic problem; every token yields the exact oracles.
inline StochasticProblemInstance as_stochastic(const ProblemInstance &prob) {
    StochasticProblemInstance s;
    s.mean = prob;
    s.objective_subgradient_sample = [sub = prob.objective_subgradient](
                                         const Vector &x, SampleToken) {
        return sub(x);
    };
    s.constraint_sample = [c = prob.constraints](const Vector &x, SampleToken) {
        return c(x);
    };
    s.jacobian_sample = [J = prob.constraint_jacobian](const Vector &x,
                                                       SampleToken) {
        return J(x);
    };
    return s;
}

/// C at two points under one shared sample, plus a Jacobian selection under
/// an independent sample.
struct ConstraintPair {
    Vector at_x;
    Vector at_next;
    Matrix jacobian;
};

inline ConstraintPair sample_constraint_pair(const StochasticProblemInstance &sprob,
                                             const Vector &x,
                                             const Vector &x_next,
                                             SampleToken shared,
                                             SampleToken jacobian_token) {
    detail::check_primal_dim(sprob.mean, x);
    detail::check_primal_dim(sprob.mean, x_next);
    ConstraintPair out{sprob.constraint_sample(x, shared),
                       sprob.constraint_sample(x_next, shared),
                       sprob.jacobian_sample(x, jacobian_token)};
    const auto p = sprob.dim_constraint();
    if (out.at_x.size() != p || out.at_next.size() != p)
        throw DimensionError("constraint sample returned wrong dimension");
    if (out.jacobian.rows() != sprob.dim_primal() || out.jacobian.cols() != p)
        throw DimensionError("Jacobian sample must have shape n x p");
    detail::check_finite(out.at_x, "constraint sample");
    detail::check_finite(out.at_next, "constraint sample");
    detail::check_finite(out.jacobian, "Jacobian sample");
    return out;
}

inline ConstraintPair sample_constraint_pair(const StochasticProblemInstance &sprob,
                                             const Vector &x,
                                             const Vector &x_next,
                                             SampleStream &samples) {
    const SampleToken shared = samples.next();
    const SampleToken independent = samples.next();
    return sample_constraint_pair(sprob, x, x_next, shared, independent);
}

/// Inexact-evaluation wrapper: perturbation of the selections d and J by a
/// uniform draw of radius radius0 / (k+1)^decay (entrywise bound), so that
/// delta_k -> 0.
struct Inexactness {
    double radius0 = 0.0;
    double decay = 1.0;

    bool active() const { return radius0 > 0.0; }
    double radius(std::int64_t k) const {
        return radius0 / std::pow(static_cast<double>(k) + 1.0, decay);
    }
};

inline void perturb_selection(Vector &d, double radius, std::mt19937_64 &rng) {
    for (Eigen::Index i = 0; i < d.size(); ++i)
        d[i] += detail::symmetric_uniform(rng, radius);
}

inline void perturb_selection(Matrix &J, double radius, std::mt19937_64 &rng) {
    for (Eigen::Index j = 0; j < J.cols(); ++j)
        for (Eigen::Index i = 0; i < J.rows(); ++i)
            J(i, j) += detail::symmetric_uniform(rng, radius);
}

} // namespace elm
