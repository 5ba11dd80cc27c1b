#pragma once

// Closed convex feasible sets with cheap Euclidean and diagonally weighted
// projections, plus normal-cone distances for KKT residuals.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "elm/types.hpp"

namespace elm {

/// Slack allowed in "x is in the set" preconditions.
inline constexpr double membership_tol = 1e-9;
/// Guaranteed bound on | ||z - c|| - r | for the weighted ball prox.
inline constexpr double ball_prox_tol = 1e-10;

class FeasibleSet;

namespace sets {

struct WholeSpace {
    Eigen::Index dim = 1;
};

struct Box {
    Vector lower;
    Vector upper;
};

struct Ball {
    Vector center;
    double radius = 1.0;
};

struct NonnegativeOrthant {
    Eigen::Index dim = 1;
};

/// Cartesian product over consecutive coordinate blocks.
struct Product {
    std::vector<FeasibleSet> blocks;
};

} // namespace sets

class FeasibleSet {
  public:
    using Variant = std::variant<sets::WholeSpace, sets::Box, sets::Ball,
                                 sets::NonnegativeOrthant, sets::Product>;

    static FeasibleSet whole_space(Eigen::Index n) {
        if (n < 1)
            throw ParameterError("set dimension must be >= 1");
        return FeasibleSet(sets::WholeSpace{n});
    }

    static FeasibleSet box(Vector lower, Vector upper) {
        if (lower.size() != upper.size() || lower.size() < 1)
            throw DimensionError("box bounds must have equal, positive size");
        if ((lower.array() > upper.array()).any())
            throw ParameterError("box requires lower <= upper");
        if (lower.array().isNaN().any() || upper.array().isNaN().any())
            throw ParameterError("box bounds must not be NaN");
        return FeasibleSet(sets::Box{std::move(lower), std::move(upper)});
    }

    /// [lo, hi]^n
    static FeasibleSet box(Eigen::Index n, double lo, double hi) {
        return box(Vector::Constant(n, lo), Vector::Constant(n, hi));
    }

    static FeasibleSet ball(Vector center, double radius) {
        if (center.size() < 1)
            throw DimensionError("ball center must be nonempty");
        if (!(radius > 0.0) || !std::isfinite(radius))
            throw ParameterError("ball radius must be positive");
        return FeasibleSet(sets::Ball{std::move(center), radius});
    }

    static FeasibleSet nonnegative_orthant(Eigen::Index n) {
        if (n < 1)
            throw ParameterError("set dimension must be >= 1");
        return FeasibleSet(sets::NonnegativeOrthant{n});
    }

    static FeasibleSet product(std::vector<FeasibleSet> blocks) {
        if (blocks.empty())
            throw ParameterError("product of zero sets");
        return FeasibleSet(sets::Product{std::move(blocks)});
    }

    const Variant &variant() const { return v_; }

    Eigen::Index dim() const {
        return std::visit(
            [](const auto &s) -> Eigen::Index {
                using T = std::decay_t<decltype(s)>;
                if constexpr (std::is_same_v<T, sets::Box>)
                    return s.lower.size();
                else if constexpr (std::is_same_v<T, sets::Ball>)
                    return s.center.size();
                else if constexpr (std::is_same_v<T, sets::Product>) {
                    Eigen::Index n = 0;
                    for (const auto &b : s.blocks)
                        n += b.dim();
                    return n;
                } else
                    return s.dim;
            },
            v_);
    }

  private:
    explicit FeasibleSet(Variant v) : v_(std::move(v)) {}
    Variant v_;
};

namespace detail {

inline void check_set_dim(const FeasibleSet &set, const Vector &x) {
    if (x.size() != set.dim())
        throw DimensionError("vector of dimension " + std::to_string(x.size()) +
                             " does not match set dimension " +
                             std::to_string(set.dim()));
}

/// Applies `fn(block_set, segment...)` over the blocks of a product.
template <class Fn>
void for_each_block(const sets::Product &prod, Fn &&fn) {
    Eigen::Index offset = 0;
    for (const auto &b : prod.blocks) {
        const Eigen::Index m = b.dim();
        fn(b, offset, m);
        offset += m;
    }
}

} // namespace detail

/// Distance from x to the set is at most `tol`.
inline bool contains(const FeasibleSet &set, const Vector &x,
                     double tol = membership_tol) {
    detail::check_set_dim(set, x);
    return std::visit(
        [&](const auto &s) -> bool {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, sets::WholeSpace>)
                return x.allFinite();
            else if constexpr (std::is_same_v<T, sets::Box>)
                return ((x - s.lower).array() >= -tol).all() &&
                       ((s.upper - x).array() >= -tol).all();
            else if constexpr (std::is_same_v<T, sets::Ball>)
                return (x - s.center).norm() <= s.radius + tol;
            else if constexpr (std::is_same_v<T, sets::NonnegativeOrthant>)
                return (x.array() >= -tol).all();
            else {
                bool ok = true;
                detail::for_each_block(s,
                                       [&](const FeasibleSet &b,
                                           Eigen::Index off, Eigen::Index m) {
                                           ok = ok && contains(b, x.segment(off, m), tol);
                                       });
                return ok;
            }
        },
        set.variant());
}

/// Euclidean projection onto the set.
inline Vector project(const FeasibleSet &set, const Vector &x) {
    detail::check_set_dim(set, x);
    return std::visit(
        [&](const auto &s) -> Vector {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, sets::WholeSpace>)
                return x;
            else if constexpr (std::is_same_v<T, sets::Box>)
                return x.cwiseMax(s.lower).cwiseMin(s.upper);
            else if constexpr (std::is_same_v<T, sets::Ball>) {
                const Vector d = x - s.center;
                const double r = d.norm();
                // A rescaled point may land a few ulps outside; accepting
                // it keeps the projection idempotent bitwise.
                if (r <= s.radius * (1.0 + 1e-14))
                    return x;
                return s.center + (s.radius / r) * d;
            } else if constexpr (std::is_same_v<T, sets::NonnegativeOrthant>)
                return x.cwiseMax(0.0);
            else {
                Vector out(x.size());
                detail::for_each_block(s,
                                       [&](const FeasibleSet &b,
                                           Eigen::Index off, Eigen::Index m) {
                                           out.segment(off, m) =
                                               project(b, x.segment(off, m));
                                       });
                return out;
            }
        },
        set.variant());
}

namespace detail {

/// argmin_{||z - c|| <= r} <y, z - x> + 1/2 <w (z - x), z - x>.
///
/// Stationarity gives z(mu) = (w x - y + mu c) / (w + mu); ||z(mu) - c|| is
/// decreasing in mu, so the multiplier is bracketed and bisected. The
/// returned point always comes from the feasible end of the bracket.
inline Vector weighted_ball_prox(const sets::Ball &ball, const Vector &x,
                                 const Vector &y, const Vector &w) {
    const Vector num = w.cwiseProduct(x - ball.center) - y; // w (x - c) - y
    auto offset = [&](double mu) -> Vector {
        return num.array() / (w.array() + mu);
    };
    Vector d = offset(0.0);
    if (d.norm() <= ball.radius)
        return ball.center + d;

    double lo = 0.0;
    double hi = 1.0;
    while (offset(hi).norm() > ball.radius)
        hi *= 2.0;
    // Bisect until the bracket collapses: the residual ends far below
    // ball_prox_tol, which keeps values smooth enough for finite differences.
    for (int it = 0; it < 2200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (mid <= lo || mid >= hi)
            break;
        if (offset(mid).norm() > ball.radius)
            lo = mid;
        else
            hi = mid;
    }
    d = offset(hi);
    // Rounding may push the norm a hair above r.
    const double dn = d.norm();
    if (dn > ball.radius)
        d *= ball.radius / dn;
    return ball.center + d;
}

} // namespace detail

/// Preconditioned proximal mapping
///
///     argmin_{z in X} <y, z - x> + 1/2 <weight (z - x), z - x>
///
/// with a strictly positive diagonal weight. With unit weight this is
/// project(x - y).
inline Vector prox_preconditioned(const FeasibleSet &set, const Vector &x,
                                  const Vector &y, const Vector &weight) {
    detail::check_set_dim(set, x);
    if (y.size() != x.size() || weight.size() != x.size())
        throw DimensionError("prox arguments must share the set dimension");
    if (!(weight.array() > 0.0).all())
        throw ParameterError("prox weight must be strictly positive");
    return std::visit(
        [&](const auto &s) -> Vector {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, sets::Ball>)
                return detail::weighted_ball_prox(s, x, y, weight);
            else if constexpr (std::is_same_v<T, sets::Product>) {
                Vector out(x.size());
                detail::for_each_block(
                    s,
                    [&](const FeasibleSet &b, Eigen::Index off, Eigen::Index m) {
                        out.segment(off, m) = prox_preconditioned(
                            b, x.segment(off, m), y.segment(off, m),
                            weight.segment(off, m));
                    });
                return out;
            } else {
                // Separable sets: clamp the unconstrained minimizer.
                const Vector z = x.array() - y.array() / weight.array();
                return project(set, z);
            }
        },
        set.variant());
}

namespace detail {

/// dist(-v_i, N) for one box coordinate.
inline double box_coordinate_distance(double x, double lo, double hi,
                                      double v, double tol) {
    const bool at_lo = x <= lo + tol;
    const bool at_hi = x >= hi - tol;
    if (at_lo && at_hi)
        return 0.0; // N = R
    if (at_hi)
        return std::max(0.0, v); // N = [0, inf)
    if (at_lo)
        return std::max(0.0, -v); // N = (-inf, 0]
    return std::abs(v);
}

inline double normal_cone_distance_sq(const FeasibleSet &set, const Vector &x,
                                      const Vector &v) {
    return std::visit(
        [&](const auto &s) -> double {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, sets::WholeSpace>)
                return v.squaredNorm();
            else if constexpr (std::is_same_v<T, sets::Box>) {
                double acc = 0.0;
                for (Eigen::Index i = 0; i < x.size(); ++i) {
                    const double d = box_coordinate_distance(
                        x[i], s.lower[i], s.upper[i], v[i], membership_tol);
                    acc += d * d;
                }
                return acc;
            } else if constexpr (std::is_same_v<T, sets::NonnegativeOrthant>) {
                double acc = 0.0;
                for (Eigen::Index i = 0; i < x.size(); ++i) {
                    const double d =
                        box_coordinate_distance(x[i], 0.0,
                                                std::numeric_limits<double>::infinity(),
                                                v[i], membership_tol);
                    acc += d * d;
                }
                return acc;
            } else if constexpr (std::is_same_v<T, sets::Ball>) {
                const Vector r = x - s.center;
                const double rn = r.norm();
                if (rn < s.radius - membership_tol)
                    return v.squaredNorm();
                // N = {t (x - c) : t >= 0}
                const Vector u = r / rn;
                const double t = std::max(0.0, -v.dot(u));
                return (-v - t * u).squaredNorm();
            } else {
                double acc = 0.0;
                for_each_block(s,
                               [&](const FeasibleSet &b, Eigen::Index off,
                                   Eigen::Index m) {
                                   acc += normal_cone_distance_sq(
                                       b, x.segment(off, m), v.segment(off, m));
                               });
                return acc;
            }
        },
        set.variant());
}

} // namespace detail

/// dist(-v, N_X(x)). Requires x in the set up to `membership_tol`.
inline double normal_cone_distance(const FeasibleSet &set, const Vector &x,
                                   const Vector &v) {
    detail::check_set_dim(set, x);
    if (v.size() != x.size())
        throw DimensionError("normal-cone direction has wrong dimension");
    if (!contains(set, x))
        throw ParameterError("normal_cone_distance: x is not in the set");
    return std::sqrt(detail::normal_cone_distance_sq(set, x, v));
}

} // namespace elm
