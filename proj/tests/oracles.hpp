#pragma once

// Independent reference computations for the test suites. Nothing here
// calls into the solver code paths it is used to check: grids, central
// differences, Monte-Carlo means and a plain-loop ADAM recursion.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include <Eigen/Core>

namespace oracles {

using Vec = Eigen::VectorXd;

/// Step used by every finite-difference check.
inline constexpr double fd_step = 1e-6;

/// Central-difference gradient of a scalar function.
inline Vec central_gradient(const std::function<double(const Vec &)> &f,
                            const Vec &x, double h = fd_step) {
    Vec g(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        Vec xp = x, xm = x;
        xp[i] += h;
        xm[i] -= h;
        g[i] = (f(xp) - f(xm)) / (2.0 * h);
    }
    return g;
}

/// Central-difference directional derivative.
inline double central_directional(const std::function<double(const Vec &)> &f,
                                  const Vec &x, const Vec &dir,
                                  double h = fd_step) {
    return (f(x + h * dir) - f(x - h * dir)) / (2.0 * h);
}

struct Min1d {
    double arg;
    double value;
};

/// Minimum of f over an equispaced grid of `points` nodes on [lo, hi].
inline Min1d grid_min_1d(const std::function<double(double)> &f, double lo,
                         double hi, int points) {
    Min1d best{lo, std::numeric_limits<double>::infinity()};
    for (int i = 0; i < points; ++i) {
        const double t = lo + (hi - lo) * static_cast<double>(i) / (points - 1);
        const double v = f(t);
        if (v < best.value)
            best = {t, v};
    }
    return best;
}

/// Grid minimum refined by repeated zooming around the incumbent; meant
/// for convex one-dimensional problems.
inline Min1d zoom_min_1d(const std::function<double(double)> &f, double lo,
                         double hi, int levels = 8, int points = 2001) {
    Min1d best = grid_min_1d(f, lo, hi, points);
    double half = (hi - lo) / (points - 1);
    for (int l = 0; l < levels; ++l) {
        const double a = std::max(lo, best.arg - 2.0 * half);
        const double b = std::min(hi, best.arg + 2.0 * half);
        const Min1d m = grid_min_1d(f, a, b, points);
        if (m.value <= best.value)
            best = m;
        half = (b - a) / (points - 1);
    }
    return best;
}

/// Maximum of f over a grid on [lo, hi].
inline Min1d grid_max_1d(const std::function<double(double)> &f, double lo,
                         double hi, int points) {
    Min1d m = grid_min_1d([&](double t) { return -f(t); }, lo, hi, points);
    return {m.arg, -m.value};
}

struct Min2d {
    Vec arg;
    double value;
};

/// Minimum over {z : inside(z)} of a convex function of two variables by a
/// zooming grid centred on the incumbent.
inline Min2d zoom_min_2d(const std::function<double(const Vec &)> &f,
                         const std::function<bool(const Vec &)> &inside,
                         Vec center, double half_width, int levels = 12,
                         int points = 201) {
    Min2d best{center, std::numeric_limits<double>::infinity()};
    for (int l = 0; l < levels; ++l) {
        const Vec c = best.value < std::numeric_limits<double>::infinity() ? best.arg : center;
        for (int i = 0; i < points; ++i) {
            for (int j = 0; j < points; ++j) {
                Vec z(2);
                z[0] = c[0] - half_width + 2.0 * half_width * i / (points - 1);
                z[1] = c[1] - half_width + 2.0 * half_width * j / (points - 1);
                if (!inside(z))
                    continue;
                const double v = f(z);
                if (v < best.value)
                    best = {z, v};
            }
        }
        half_width *= 4.0 / (points - 1);
    }
    return best;
}

/// Proximal ADAM without constraints, written as a straight scalar loop:
///   m <- m - tau1 eta (m - g); v <- v - tau2 eta (v - g^2)
///   x <- (1 - eta) x + eta (x - alpha m / sqrt(v + eps))
struct AdamTrace {
    std::vector<std::vector<double>> x, m, v;
};

inline AdamTrace unconstrained_adam(
    const std::function<std::vector<double>(const std::vector<double> &, int)> &grad,
    std::vector<double> x, const std::vector<double> &etas, double tau1,
    double tau2, double alpha, double eps) {
    const std::size_t n = x.size();
    std::vector<double> m(n, 0.0), v(n, 0.0);
    AdamTrace t;
    for (std::size_t k = 0; k < etas.size(); ++k) {
        const double eta = etas[k];
        const std::vector<double> g = grad(x, static_cast<int>(k));
        for (std::size_t i = 0; i < n; ++i) {
            m[i] = m[i] - tau1 * eta * (m[i] - g[i]);
            v[i] = v[i] - tau2 * eta * (v[i] - g[i] * g[i]);
            const double z = x[i] - alpha * m[i] / std::sqrt(v[i] + eps);
            x[i] = (1.0 - eta) * x[i] + eta * z;
        }
        t.x.push_back(x);
        t.m.push_back(m);
        t.v.push_back(v);
    }
    return t;
}

/// Monte-Carlo mean of a vector-valued sampler.
inline Vec monte_carlo_mean(const std::function<Vec(int)> &sample, int count) {
    Vec acc = sample(0);
    for (int s = 1; s < count; ++s)
        acc += sample(s);
    return acc / static_cast<double>(count);
}

inline Vec uniform_vector(std::mt19937_64 &rng, Eigen::Index n, double lo, double hi) {
    std::uniform_real_distribution<double> u(lo, hi);
    Vec v(n);
    for (Eigen::Index i = 0; i < n; ++i)
        v[i] = u(rng);
    return v;
}

/// Uniform point in the ball of radius r around c.
inline Vec point_in_ball(std::mt19937_64 &rng, const Vec &c, double r) {
    std::normal_distribution<double> nd;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Vec d(c.size());
    for (Eigen::Index i = 0; i < d.size(); ++i)
        d[i] = nd(rng);
    const double scale =
        r * std::pow(u(rng), 1.0 / static_cast<double>(c.size())) / d.norm();
    return c + scale * d;
}

} // namespace oracles
