#pragma once

// Built-in desk-scale problems.
//
//   affine_l1          min ||x - a||_1  s.t. Ax = b, x in [-1,1]^n
//   slack_l1_net       least-absolute-deviation training of a small ReLU
//                      network with per-layer l1-ball constraints written
//                      as ||x_i||_1 + s_i - r = 0, s >= 0
//   stochastic_affine  affine_l1 observed through bounded zero-mean
//                      perturbations of (A, b) and of the objective
//   exactness_1d       f(x) = -M x on [-1, 1] with c(x) = x
//
// affine_l1 carries an exact solution computed by vertex enumeration; it
// shares no code with the solvers.

#include <Eigen/Core>
#include <Eigen/LU>
#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "elm/core.hpp"
#include "elm/geometry.hpp"

namespace elm {

enum class RecipeKind { affine_l1, slack_l1_net, stochastic_affine, exactness_1d };

inline const char *to_string(RecipeKind k) {
    switch (k) {
    case RecipeKind::affine_l1:
        return "affine_l1";
    case RecipeKind::slack_l1_net:
        return "slack_l1_net";
    case RecipeKind::stochastic_affine:
        return "stochastic_affine";
    case RecipeKind::exactness_1d:
        return "exactness_1d";
    }
    return "?";
}

struct OracleSolution {
    Vector x;
    double f = 0.0;
    /// Least-squares multipliers on the coordinates where the objective is
    /// differentiable and the box is inactive.
    Vector multipliers;
};

struct ProblemRecipe {
    RecipeKind kind = RecipeKind::affine_l1;
    ProblemInstance instance;
    std::optional<StochasticProblemInstance> stochastic;
    /// Starting point of the solvers; always feasible for X.
    Vector x0;
    std::optional<OracleSolution> oracle_solution;
    /// Held-out classification accuracy (network recipe only).
    std::function<double(const Vector &)> heldout_accuracy;
    /// Iterations per pass over the training data (network recipe only).
    std::int64_t steps_per_epoch = 1;
};

namespace oracle {

/// Exact minimizer of ||x - anchor||_1 over {Ax = b, lo <= x <= hi} by
/// enumeration of candidate vertices.
///
/// The objective is linear on every cell cut by the breakpoints
/// x_i = anchor_i, so some vertex of a cell is optimal. A vertex fixes
/// n - p coordinates to a cell bound in {lo, hi, anchor_i} and solves the
/// remaining p from Ax = b. Cost is C(n, p) 3^(n-p) small solves; n <= 12.
inline std::optional<OracleSolution>
solve_affine_l1(const Matrix &A, const Vector &b, const Vector &anchor,
                double lo = -1.0, double hi = 1.0) {
    const auto p = static_cast<int>(A.rows());
    const auto n = static_cast<int>(A.cols());
    if (n > 12)
        throw ParameterError("vertex enumeration is capped at n <= 12");
    if (p < 1 || p > n || b.size() != p || anchor.size() != n)
        throw DimensionError("affine_l1 oracle: inconsistent dimensions");

    std::vector<std::vector<double>> levels(n);
    for (int i = 0; i < n; ++i) {
        levels[i] = {lo, hi};
        const double a = anchor[i];
        if (a > lo && a < hi)
            levels[i].push_back(a);
    }

    std::optional<OracleSolution> best;
    std::vector<int> free_idx(p);
    for (int i = 0; i < p; ++i)
        free_idx[i] = i;
    const double feas_tol = 1e-12;

    while (true) {
        std::vector<int> fixed_idx;
        for (int i = 0, f = 0; i < n; ++i) {
            if (f < p && free_idx[f] == i)
                ++f;
            else
                fixed_idx.push_back(i);
        }
        Matrix AF(p, p);
        for (int j = 0; j < p; ++j)
            AF.col(j) = A.col(free_idx[j]);
        Eigen::FullPivLU<Matrix> lu(AF);
        lu.setThreshold(1e-10);
        if (lu.isInvertible()) {
            const auto m = static_cast<int>(fixed_idx.size());
            std::vector<int> digit(m, 0);
            Vector x(n);
            while (true) {
                Vector rhs = b;
                for (int t = 0; t < m; ++t) {
                    const int i = fixed_idx[t];
                    x[i] = levels[i][digit[t]];
                    rhs -= A.col(i) * x[i];
                }
                const Vector xf = lu.solve(rhs);
                bool ok = true;
                for (int j = 0; j < p && ok; ++j) {
                    double v = xf[j];
                    if (v < lo - feas_tol || v > hi + feas_tol)
                        ok = false;
                    x[free_idx[j]] = std::clamp(v, lo, hi);
                }
                if (ok && (A * x - b).norm() <= 1e-9) {
                    const double f = (x - anchor).lpNorm<1>();
                    if (!best || f < best->f - 1e-15)
                        best = OracleSolution{x, f, Vector()};
                }
                int t = 0;
                while (t < m) {
                    const int i = fixed_idx[t];
                    if (++digit[t] < static_cast<int>(levels[i].size()))
                        break;
                    digit[t] = 0;
                    ++t;
                }
                if (t == m)
                    break;
            }
        }
        // next combination of p free coordinates out of n
        int i = p - 1;
        while (i >= 0 && free_idx[i] == n - p + i)
            --i;
        if (i < 0)
            break;
        ++free_idx[i];
        for (int j = i + 1; j < p; ++j)
            free_idx[j] = free_idx[j - 1] + 1;
    }

    if (best) {
        // Multipliers from the rows where sign(x - a) + (A^T lambda) must vanish.
        const Vector &x = best->x;
        std::vector<int> rows;
        for (int i = 0; i < n; ++i) {
            const bool kink = std::abs(x[i] - anchor[i]) <= 1e-12;
            const bool active = x[i] <= lo + 1e-12 || x[i] >= hi - 1e-12;
            if (!kink && !active)
                rows.push_back(i);
        }
        best->multipliers = Vector::Zero(p);
        if (!rows.empty()) {
            Matrix At(rows.size(), p);
            Vector rhs(rows.size());
            for (std::size_t r = 0; r < rows.size(); ++r) {
                At.row(r) = A.col(rows[r]).transpose();
                rhs[r] = -(x[rows[r]] > anchor[rows[r]] ? 1.0 : -1.0);
            }
            best->multipliers = At.colPivHouseholderQr().solve(rhs);
        }
    }
    return best;
}

} // namespace oracle

namespace detail {

inline Vector sign_selection(const Vector &r) {
    return r.unaryExpr([](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

inline Matrix orthonormal_rows(int p, int n, std::mt19937_64 &rng) {
    Matrix G(n, p);
    for (int j = 0; j < p; ++j)
        for (int i = 0; i < n; ++i)
            G(i, j) = standard_normal(rng);
    Eigen::HouseholderQR<Matrix> qr(G);
    Matrix Q = qr.householderQ() * Matrix::Identity(n, p);
    return Q.transpose();
}

} // namespace detail

/// Affine-constrained l1 problem for given data; X = [-1, 1]^n.
inline ProblemInstance affine_l1_instance(const Matrix &A, const Vector &b,
                                          const Vector &anchor) {
    const auto p = static_cast<int>(A.rows());
    const auto n = static_cast<int>(A.cols());
    if (b.size() != p || anchor.size() != n)
        throw DimensionError("affine_l1: inconsistent data dimensions");
    ProblemInstance prob;
    prob.dim_primal = n;
    prob.dim_constraint = p;
    prob.objective = [anchor](const Vector &x) { return (x - anchor).lpNorm<1>(); };
    prob.objective_subgradient = [anchor](const Vector &x) {
        return detail::sign_selection(x - anchor);
    };
    prob.constraints = [A, b](const Vector &x) -> Vector { return A * x - b; };
    prob.constraint_jacobian = [At = Matrix(A.transpose())](const Vector &) {
        return At;
    };
    prob.feasible_set = FeasibleSet::box(n, -1.0, 1.0);
    prob.lipschitz_bound_f = std::sqrt(static_cast<double>(n));
    return prob;
}

struct AffineData {
    Matrix A;
    Vector b;
    Vector anchor;
};

namespace detail {
inline AffineData generate_affine_data(int n, int p, std::mt19937_64 &rng) {
    AffineData d;
    d.A = orthonormal_rows(p, n, rng);
    Vector interior(n);
    for (int i = 0; i < n; ++i)
        interior[i] = symmetric_uniform(rng, 0.5);
    d.b = d.A * interior;
    d.anchor.resize(n);
    for (int i = 0; i < n; ++i)
        d.anchor[i] = symmetric_uniform(rng, 1.0);
    return d;
}
} // namespace detail

/// Random affine_l1 instance: A has orthonormal rows (so nu = 1 at interior
/// points), b = A x_int with x_int in [-0.5, 0.5]^n, anchor in [-1, 1]^n.
inline ProblemRecipe make_affine_l1(int n, int p, std::uint64_t seed) {
    if (n < 1 || p < 1 || p > n)
        throw ParameterError("affine_l1 requires 1 <= p <= n");
    if (n > 12)
        throw ParameterError("affine_l1 requires n <= 12 (exact oracle)");
    std::mt19937_64 rng(detail::mix_seed(seed));
    for (int attempt = 0; attempt < 16; ++attempt) {
        AffineData d = detail::generate_affine_data(n, p, rng);
        auto sol = oracle::solve_affine_l1(d.A, d.b, d.anchor);
        if (!sol)
            continue;
        ProblemRecipe r;
        r.kind = RecipeKind::affine_l1;
        r.instance = affine_l1_instance(d.A, d.b, d.anchor);
        r.instance.regularity_constant = 1.0;
        r.x0 = Vector::Zero(n);
        r.oracle_solution = std::move(sol);
        return r;
    }
    throw Error("affine_l1: could not generate a feasible instance");
}

/// Perturbation scale per entry of (A, b): noise_scale / sqrt(n + 1), which
/// keeps the standard deviation of each C_i(x, .) below noise_scale / sqrt(3)
/// for x in [-1, 1]^n.
inline ProblemRecipe make_stochastic_affine(int n, int p, double noise_scale,
                                            std::uint64_t seed) {
    if (!(noise_scale >= 0.0))
        throw ParameterError("noise_scale must be >= 0");
    ProblemRecipe r = make_affine_l1(n, p, seed);
    r.kind = RecipeKind::stochastic_affine;

    // Recover the data from the exact oracles.
    const Vector zero = Vector::Zero(n);
    const Matrix A = r.instance.constraint_jacobian(zero).transpose();
    const Vector b = -r.instance.constraints(zero);

    const double entry = noise_scale / std::sqrt(static_cast<double>(n) + 1.0);
    auto perturbed = [A, b, entry](SampleToken t) {
        std::mt19937_64 rng(detail::mix_seed(t.value));
        Matrix As = A;
        Vector bs = b;
        for (Eigen::Index j = 0; j < As.cols(); ++j)
            for (Eigen::Index i = 0; i < As.rows(); ++i)
                As(i, j) += detail::symmetric_uniform(rng, entry);
        for (Eigen::Index i = 0; i < bs.size(); ++i)
            bs[i] += detail::symmetric_uniform(rng, entry);
        return std::pair<Matrix, Vector>(std::move(As), std::move(bs));
    };

    StochasticProblemInstance s;
    s.mean = r.instance;
    s.objective_subgradient_sample = [sub = r.instance.objective_subgradient,
                                      noise_scale](const Vector &x, SampleToken t) {
        std::mt19937_64 rng(detail::mix_seed(t.value ^ 0x5bd1e995ULL));
        Vector g = sub(x);
        for (Eigen::Index i = 0; i < g.size(); ++i)
            g[i] += detail::symmetric_uniform(rng, noise_scale);
        return g;
    };
    s.constraint_sample = [perturbed](const Vector &x, SampleToken t) -> Vector {
        auto [As, bs] = perturbed(t);
        return As * x - bs;
    };
    s.jacobian_sample = [perturbed](const Vector &, SampleToken t) -> Matrix {
        return perturbed(t).first.transpose();
    };
    r.stochastic = std::move(s);
    return r;
}

/// f(x) = -M x on [-1, 1], c(x) = x. nu = 1 and M_f = M, so minimizers of
/// the penalty are feasible exactly when beta > M.
inline ProblemRecipe make_exactness_1d(double M) {
    if (!(M > 0.0))
        throw ParameterError("exactness_1d requires M > 0");
    ProblemRecipe r;
    r.kind = RecipeKind::exactness_1d;
    auto &prob = r.instance;
    prob.dim_primal = 1;
    prob.dim_constraint = 1;
    prob.objective = [M](const Vector &x) { return -M * x[0]; };
    prob.objective_subgradient = [M](const Vector &) { return Vector::Constant(1, -M); };
    prob.constraints = [](const Vector &x) -> Vector { return x; };
    prob.constraint_jacobian = [](const Vector &) { return Matrix::Identity(1, 1); };
    prob.feasible_set = FeasibleSet::box(1, -1.0, 1.0);
    prob.lipschitz_bound_f = M;
    prob.regularity_constant = 1.0;
    r.x0 = Vector::Constant(1, 0.9);
    r.oracle_solution = OracleSolution{Vector::Zero(1), 0.0, Vector::Constant(1, M)};
    return r;
}

// ---------------------------------------------------------------------------
// ReLU network with l1-ball layer constraints

struct NetOptions {
    std::vector<int> layer_widths{2, 8, 2};
    double radius = 1.0;
    int train_size = 256;
    int test_size = 256;
    int batch_size = 16;
    /// Half-width of the uniform weight initialization.
    double init_scale = 0.3;
};

/// Labelled 2-class Gaussian blobs.
struct BlobData {
    Matrix inputs;  // d x N
    Matrix targets; // 2 x N, +1 on the true class and -1 elsewhere
    std::vector<int> labels;
};

namespace detail {

inline BlobData make_blobs(int count, int input_dim, std::mt19937_64 &rng) {
    BlobData d;
    d.inputs.resize(input_dim, count);
    d.targets.resize(2, count);
    d.labels.resize(count);
    for (int s = 0; s < count; ++s) {
        const int label = s % 2;
        const double center = label == 0 ? -0.6 : 0.6;
        for (int i = 0; i < input_dim; ++i)
            d.inputs(i, s) = center + 0.5 * standard_normal(rng);
        d.labels[s] = label;
        d.targets(0, s) = label == 0 ? 1.0 : -1.0;
        d.targets(1, s) = -d.targets(0, s);
    }
    return d;
}

/// Fully connected ReLU network; the last layer is linear. Parameters of
/// layer i are stored as [vec(W_i) (column-major, out x in); b_i].
class ReluNet {
  public:
    explicit ReluNet(std::vector<int> widths) : widths_(std::move(widths)) {
        if (widths_.size() < 2)
            throw ParameterError("network needs at least two layer widths");
        if (widths_.back() != 2)
            throw ParameterError("network output width must be 2 (two classes)");
        Eigen::Index off = 0;
        for (std::size_t i = 0; i + 1 < widths_.size(); ++i) {
            if (widths_[i] < 1 || widths_[i + 1] < 1)
                throw ParameterError("layer widths must be positive");
            offsets_.push_back(off);
            off += static_cast<Eigen::Index>(widths_[i + 1]) * (widths_[i] + 1);
        }
        offsets_.push_back(off);
    }

    int layers() const { return static_cast<int>(widths_.size()) - 1; }
    Eigen::Index param_count() const { return offsets_.back(); }
    Eigen::Index layer_offset(int i) const { return offsets_[i]; }
    Eigen::Index layer_size(int i) const { return offsets_[i + 1] - offsets_[i]; }
    int input_dim() const { return widths_.front(); }

    Vector forward(const Vector &params, const Vector &input) const {
        Vector h = input;
        for (int i = 0; i < layers(); ++i) {
            const Vector z = weights(params, i) * h + bias(params, i);
            h = i + 1 < layers() ? Vector(z.cwiseMax(0.0)) : z;
        }
        return h;
    }

    /// Loss ||out - target||_1 and one subgradient selection w.r.t. params
    /// (ReLU'(0) = 0, sign(0) = 0), accumulated with `scale` into `grad`.
    double loss_and_subgradient(const Vector &params, const Vector &input,
                                const Vector &target, double scale,
                                Vector *grad) const {
        std::vector<Vector> acts{input};
        std::vector<Vector> pre;
        for (int i = 0; i < layers(); ++i) {
            const Vector z = weights(params, i) * acts.back() + bias(params, i);
            pre.push_back(z);
            acts.push_back(i + 1 < layers() ? Vector(z.cwiseMax(0.0)) : z);
        }
        const Vector r = acts.back() - target;
        const double loss = r.lpNorm<1>();
        if (grad) {
            Vector delta = sign_selection(r);
            for (int i = layers() - 1; i >= 0; --i) {
                if (i + 1 < layers())
                    delta = delta.cwiseProduct(
                        pre[i].unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; }));
                const int out = widths_[i + 1];
                const int in = widths_[i];
                const Eigen::Index off = offsets_[i];
                Eigen::Map<Matrix> gW(grad->data() + off, out, in);
                gW.noalias() += scale * delta * acts[i].transpose();
                grad->segment(off + out * in, out) += scale * delta;
                if (i > 0)
                    delta = weights(params, i).transpose() * delta;
            }
        }
        return loss;
    }

  private:
    Eigen::Map<const Matrix> weights(const Vector &params, int i) const {
        return {params.data() + offsets_[i], widths_[i + 1], widths_[i]};
    }
    Eigen::Map<const Vector> bias(const Vector &params, int i) const {
        return {params.data() + offsets_[i] +
                    static_cast<Eigen::Index>(widths_[i + 1]) * widths_[i],
                widths_[i + 1]};
    }

    std::vector<int> widths_;
    std::vector<Eigen::Index> offsets_;
};

} // namespace detail

/// Network training with l1-ball layer constraints in slack form. The
/// decision vector is (params, s) in [-1, 1]^P x R^L_+, with
/// c_i = ||params_i||_1 + s_i - radius. The objective is the mean
/// least-absolute-deviation loss over the training set; the stochastic
/// view draws minibatches with replacement and has exact constraints.
inline ProblemRecipe make_slack_l1_net(const NetOptions &opts,
                                       std::uint64_t dataset_seed) {
    if (opts.train_size < 1 || opts.test_size < 1 || opts.batch_size < 1)
        throw ParameterError("network dataset and batch sizes must be positive");
    if (!(opts.radius > 0.0))
        throw ParameterError("l1 radius must be positive");
    auto net = std::make_shared<const detail::ReluNet>(opts.layer_widths);
    std::mt19937_64 rng(detail::mix_seed(dataset_seed));
    auto train = std::make_shared<const BlobData>(
        detail::make_blobs(opts.train_size, net->input_dim(), rng));
    auto test = std::make_shared<const BlobData>(
        detail::make_blobs(opts.test_size, net->input_dim(), rng));

    const Eigen::Index P = net->param_count();
    const int L = net->layers();
    const Eigen::Index n = P + L;
    const double radius = opts.radius;

    auto batch_subgradient = [net, train, P, n](const Vector &x,
                                                const std::vector<int> &idx) {
        Vector g = Vector::Zero(n);
        Vector gp = Vector::Zero(P);
        const Vector params = x.head(P);
        const double scale = 1.0 / static_cast<double>(idx.size());
        for (int s : idx)
            net->loss_and_subgradient(params, train->inputs.col(s),
                                      train->targets.col(s), scale, &gp);
        g.head(P) = gp;
        return g;
    };

    ProblemRecipe r;
    r.kind = RecipeKind::slack_l1_net;
    auto &prob = r.instance;
    prob.dim_primal = static_cast<int>(n);
    prob.dim_constraint = L;
    prob.objective = [net, train, P](const Vector &x) {
        const Vector params = x.head(P);
        double acc = 0.0;
        for (Eigen::Index s = 0; s < train->inputs.cols(); ++s)
            acc += net->loss_and_subgradient(params, train->inputs.col(s),
                                             train->targets.col(s), 0.0, nullptr);
        return acc / static_cast<double>(train->inputs.cols());
    };
    std::vector<int> all(opts.train_size);
    for (int s = 0; s < opts.train_size; ++s)
        all[s] = s;
    prob.objective_subgradient = [batch_subgradient, all](const Vector &x) {
        return batch_subgradient(x, all);
    };
    prob.constraints = [net, P, L, radius](const Vector &x) -> Vector {
        Vector c(L);
        for (int i = 0; i < L; ++i)
            c[i] = x.segment(net->layer_offset(i), net->layer_size(i)).lpNorm<1>() +
                   x[P + i] - radius;
        return c;
    };
    prob.constraint_jacobian = [net, P, L, n](const Vector &x) -> Matrix {
        Matrix J = Matrix::Zero(n, L);
        for (int i = 0; i < L; ++i) {
            const auto off = net->layer_offset(i);
            const auto m = net->layer_size(i);
            J.col(i).segment(off, m) = detail::sign_selection(x.segment(off, m));
            J(P + i, i) = 1.0;
        }
        return J;
    };
    prob.feasible_set = FeasibleSet::product(
        {FeasibleSet::box(P, -1.0, 1.0), FeasibleSet::nonnegative_orthant(L)});

    StochasticProblemInstance s;
    s.mean = prob;
    const int batch = opts.batch_size;
    const int N = opts.train_size;
    s.objective_subgradient_sample = [batch_subgradient, batch, N](const Vector &x,
                                                                  SampleToken t) {
        std::mt19937_64 rng(detail::mix_seed(t.value));
        std::vector<int> idx(batch);
        for (int &i : idx)
            i = static_cast<int>(rng() % static_cast<std::uint64_t>(N));
        return batch_subgradient(x, idx);
    };
    s.constraint_sample = [c = prob.constraints](const Vector &x, SampleToken) {
        return c(x);
    };
    s.jacobian_sample = [J = prob.constraint_jacobian](const Vector &x, SampleToken) {
        return J(x);
    };
    r.stochastic = std::move(s);

    r.heldout_accuracy = [net, test, P](const Vector &x) {
        const Vector params = x.head(P);
        int correct = 0;
        for (Eigen::Index s = 0; s < test->inputs.cols(); ++s) {
            const Vector out = net->forward(params, test->inputs.col(s));
            const int pred = out[1] > out[0] ? 1 : 0;
            correct += pred == test->labels[s];
        }
        return static_cast<double>(correct) / static_cast<double>(test->inputs.cols());
    };
    r.steps_per_epoch = std::max(1, opts.train_size / opts.batch_size);

    r.x0 = Vector::Zero(n);
    std::mt19937_64 init(detail::mix_seed(dataset_seed + 1));
    for (Eigen::Index i = 0; i < P; ++i)
        r.x0[i] = detail::symmetric_uniform(init, opts.init_scale);
    return r;
}

inline ProblemRecipe make_slack_l1_net(std::vector<int> layer_widths, double r,
                                       std::uint64_t dataset_seed) {
    NetOptions opts;
    opts.layer_widths = std::move(layer_widths);
    opts.radius = r;
    return make_slack_l1_net(opts, dataset_seed);
}

} // namespace elm
