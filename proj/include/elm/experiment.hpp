#pragma once

// Batch experiment plumbing behind the elm_cli tool: a strict JSON config
// schema, recipe construction by name, JSON-lines metrics, CSV summaries,
// method comparisons and one-parameter sweeps.
//
// Config layout (every key optional except problem.kind):
//
//   {
//     "label": "run",
//     "problem": {"kind": "affine_l1", "n": 5, "p": 2, "seed": 0},
//     "solver": {
//       "rho": 1, "beta": 1,
//       "theta": {"kind": "constant", "c": 0.5},
//       "eta": {"kind": "power", "c": 0.5, "exponent": 0.5},
//       "method": {"kind": "prox_sgd"},
//       "tracker": {"kind": "exact"},
//       "dual": {"kind": "elm_regu"},
//       "noise": {"kind": "none"},
//       "inexactness": {"radius0": 0, "decay": 1},
//       "max_iters": 1000, "seed": 0, "kkt_probe": 0.01, "lambda0": [0, 0]
//     },
//     "epochs": 100,
//     "output_path": "out", "record_every": 10, "repetitions": 1
//   }
//
// Keys that do not apply to the selected kind are rejected like unknown
// keys. An inv_sqrt_epoch schedule without epoch_len uses the recipe's
// steps per epoch; "epochs" likewise sets max_iters = epochs * steps per
// epoch.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "elm/core.hpp"
#include "elm/lagrangian.hpp"
#include "elm/problems.hpp"

namespace elm {

using Json = nlohmann::ordered_json;

/// Invalid or unreadable experiment configuration.
class ConfigError : public Error {
  public:
    using Error::Error;
};

inline constexpr int exit_success = 0;
inline constexpr int exit_aborted = 1;
inline constexpr int exit_config_invalid = 2;

struct ProblemSpec {
    RecipeKind kind = RecipeKind::affine_l1;
    // affine_l1, stochastic_affine
    int n = 5;
    int p = 2;
    // every kind but exactness_1d
    std::uint64_t seed = 0;
    // stochastic_affine
    double noise_scale = 0.5;
    // exactness_1d
    double M = 2.0;
    // slack_l1_net
    NetOptions net;
};

struct RunConfig {
    std::string label = "run";
    ProblemSpec problem;
    SolverConfig solver;
    std::optional<std::int64_t> epochs;
    std::string output_path = "out";
    std::int64_t record_every = 10;
    std::int64_t repetitions = 1;
};

// ---------------------------------------------------------------------------
// Recipes

inline bool is_stochastic(RecipeKind k) {
    return k == RecipeKind::stochastic_affine || k == RecipeKind::slack_l1_net;
}

inline int constraint_dim(const ProblemSpec &spec) {
    switch (spec.kind) {
    case RecipeKind::affine_l1:
    case RecipeKind::stochastic_affine:
        return spec.p;
    case RecipeKind::exactness_1d:
        return 1;
    case RecipeKind::slack_l1_net:
        return static_cast<int>(spec.net.layer_widths.size()) - 1;
    }
    return 0;
}

/// Range checks that do not require building the recipe.
inline void validate(const ProblemSpec &spec) {
    switch (spec.kind) {
    case RecipeKind::affine_l1:
    case RecipeKind::stochastic_affine:
        if (spec.n < 1 || spec.n > 12 || spec.p < 1 || spec.p > spec.n)
            throw ConfigError("problem: requires 1 <= p <= n <= 12");
        if (spec.kind == RecipeKind::stochastic_affine && !(spec.noise_scale >= 0.0))
            throw ConfigError("problem.noise_scale must be >= 0");
        break;
    case RecipeKind::exactness_1d:
        if (!(spec.M > 0.0))
            throw ConfigError("problem.M must be positive");
        break;
    case RecipeKind::slack_l1_net: {
        const auto &w = spec.net.layer_widths;
        if (w.size() < 2 || w.back() != 2 ||
            std::any_of(w.begin(), w.end(), [](int v) { return v < 1; }))
            throw ConfigError("problem.layer_widths must be >= 2 positive widths ending in 2");
        if (!(spec.net.radius > 0.0))
            throw ConfigError("problem.radius must be positive");
        if (spec.net.train_size < 1 || spec.net.test_size < 1 || spec.net.batch_size < 1)
            throw ConfigError("problem: dataset and batch sizes must be positive");
        if (!(spec.net.init_scale >= 0.0) || spec.net.init_scale > 1.0)
            throw ConfigError("problem.init_scale must lie in [0, 1]");
        break;
    }
    }
}

inline ProblemRecipe build_recipe(const ProblemSpec &spec) {
    validate(spec);
    switch (spec.kind) {
    case RecipeKind::affine_l1:
        return make_affine_l1(spec.n, spec.p, spec.seed);
    case RecipeKind::stochastic_affine:
        return make_stochastic_affine(spec.n, spec.p, spec.noise_scale, spec.seed);
    case RecipeKind::exactness_1d:
        return make_exactness_1d(spec.M);
    case RecipeKind::slack_l1_net:
        return make_slack_l1_net(spec.net, spec.seed);
    }
    throw ConfigError("unknown problem kind");
}

/// Solver settings with recipe-dependent values filled in.
inline SolverConfig resolve_solver(const RunConfig &cfg, std::int64_t steps_per_epoch) {
    SolverConfig s = cfg.solver;
    for (StepSchedule *sched : {&s.theta, &s.eta})
        if (sched->kind == ScheduleKind::inv_sqrt_epoch && sched->epoch_len == 0)
            sched->epoch_len = steps_per_epoch;
    if (cfg.epochs)
        s.max_iters = *cfg.epochs * steps_per_epoch;
    return s;
}

// ---------------------------------------------------------------------------
// Strict JSON reading

namespace detail {

template <class E> struct EnumName {
    E value;
    const char *name;
};

inline const EnumName<RecipeKind> recipe_names[] = {
    {RecipeKind::affine_l1, "affine_l1"},
    {RecipeKind::slack_l1_net, "slack_l1_net"},
    {RecipeKind::stochastic_affine, "stochastic_affine"},
    {RecipeKind::exactness_1d, "exactness_1d"}};
inline const EnumName<ScheduleKind> schedule_names[] = {
    {ScheduleKind::constant, "constant"},
    {ScheduleKind::inv_sqrt_epoch, "inv_sqrt_epoch"},
    {ScheduleKind::power, "power"},
    {ScheduleKind::inv_sqrt_time, "inv_sqrt_time"}};
inline const EnumName<MethodKind> method_names[] = {
    {MethodKind::prox_sgd, "prox_sgd"},
    {MethodKind::prox_sgdm, "prox_sgdm"},
    {MethodKind::prox_adam, "prox_adam"}};
inline const EnumName<TrackerKind> tracker_names[] = {
    {TrackerKind::exact, "exact"}, {TrackerKind::correction, "correction"}};
inline const EnumName<DualKind> dual_names[] = {
    {DualKind::elm_regu, "elm_regu"}, {DualKind::ialm_baseline, "ialm_baseline"}};
inline const EnumName<NoiseKind> noise_names[] = {
    {NoiseKind::none, "none"},
    {NoiseKind::uniform_box, "uniform_box"},
    {NoiseKind::truncated_gaussian, "truncated_gaussian"}};

template <class E, std::size_t N>
const char *enum_name(const EnumName<E> (&table)[N], E v) {
    for (const auto &e : table)
        if (e.value == v)
            return e.name;
    return "?";
}

/// One JSON table being read. Keys must be consumed before finish();
/// anything left over is an unknown key.
class Section {
  public:
    Section(const Json &j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object())
            throw ConfigError(where() + "expected a table");
    }

    bool has(const char *key) const { return j_.contains(key); }

    std::string key_path(const char *key) const {
        return path_.empty() ? std::string(key) : path_ + "." + key;
    }

    double number(const char *key, double def) {
        const Json *v = take(key);
        if (!v)
            return def;
        if (!v->is_number())
            throw ConfigError(key_path(key) + ": expected a number");
        return v->get<double>();
    }

    std::int64_t integer(const char *key, std::int64_t def) {
        const Json *v = take(key);
        if (!v)
            return def;
        if (!v->is_number_integer())
            throw ConfigError(key_path(key) + ": expected an integer");
        return v->get<std::int64_t>();
    }

    std::uint64_t unsigned_integer(const char *key, std::uint64_t def) {
        const Json *v = take(key);
        if (!v)
            return def;
        if (v->is_number_unsigned())
            return v->get<std::uint64_t>();
        if (v->is_number_integer() && v->get<std::int64_t>() >= 0)
            return static_cast<std::uint64_t>(v->get<std::int64_t>());
        throw ConfigError(key_path(key) + ": expected a nonnegative integer");
    }

    int small_int(const char *key, int def) {
        const std::int64_t v = integer(key, def);
        if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max())
            throw ConfigError(key_path(key) + ": integer out of range");
        return static_cast<int>(v);
    }

    std::string string(const char *key, const std::string &def) {
        const Json *v = take(key);
        if (!v)
            return def;
        if (!v->is_string())
            throw ConfigError(key_path(key) + ": expected a string");
        return v->get<std::string>();
    }

    template <class E, std::size_t N>
    E enumeration(const char *key, const EnumName<E> (&table)[N],
                  std::optional<E> def) {
        const Json *v = take(key);
        if (!v) {
            if (!def)
                throw ConfigError(key_path(key) + ": missing required key");
            return *def;
        }
        if (!v->is_string())
            throw ConfigError(key_path(key) + ": expected a string");
        const auto s = v->get<std::string>();
        std::string choices;
        for (const auto &e : table) {
            if (s == e.name)
                return e.value;
            choices += choices.empty() ? "" : ", ";
            choices += e.name;
        }
        throw ConfigError(key_path(key) + ": unknown value \"" + s +
                          "\" (expected one of " + choices + ")");
    }

    /// Nested table; an absent key reads as an empty table.
    Section child(const char *key) {
        const Json *v = take(key);
        static const Json empty = Json::object();
        return Section(v ? *v : empty, key_path(key));
    }

    const Json *raw(const char *key) { return take(key); }

    void finish() const {
        for (const auto &item : j_.items())
            if (!used_.count(item.key()))
                throw ConfigError(key_path(item.key().c_str()) + ": unknown key");
    }

  private:
    std::string where() const { return path_.empty() ? "" : path_ + ": "; }

    const Json *take(const char *key) {
        used_.insert(key);
        auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    const Json &j_;
    std::string path_;
    std::set<std::string> used_;
};

inline StepSchedule read_schedule(Section sec, StepSchedule def) {
    StepSchedule s;
    s.kind = sec.enumeration("kind", schedule_names, std::optional(def.kind));
    s.c = sec.number("c", def.c);
    switch (s.kind) {
    case ScheduleKind::constant:
        break;
    case ScheduleKind::inv_sqrt_epoch:
        s.epoch_len = sec.integer("epoch_len", 0);
        if (s.epoch_len < 0)
            throw ConfigError(sec.key_path("epoch_len") + ": must be >= 1 (or omitted)");
        break;
    case ScheduleKind::power:
        s.exponent = sec.number("exponent", def.exponent);
        break;
    case ScheduleKind::inv_sqrt_time:
        s.time_scale = sec.number("time_scale", def.time_scale);
        break;
    }
    sec.finish();
    return s;
}

inline MethodConfig read_method(Section sec) {
    const MethodConfig def;
    MethodConfig m;
    m.kind = sec.enumeration("kind", method_names, std::optional(def.kind));
    switch (m.kind) {
    case MethodKind::prox_sgd:
        break;
    case MethodKind::prox_sgdm:
        m.tau = sec.number("tau", def.tau);
        m.alpha = sec.number("alpha", def.alpha);
        break;
    case MethodKind::prox_adam:
        m.alpha = sec.number("alpha", def.alpha);
        m.tau1 = sec.number("tau1", def.tau1);
        m.tau2 = sec.number("tau2", def.tau2);
        m.eps = sec.number("eps", def.eps);
        break;
    }
    sec.finish();
    return m;
}

inline ProblemSpec read_problem(Section sec) {
    ProblemSpec p;
    p.kind = sec.enumeration("kind", recipe_names, std::optional<RecipeKind>());
    switch (p.kind) {
    case RecipeKind::stochastic_affine:
        p.noise_scale = sec.number("noise_scale", p.noise_scale);
        [[fallthrough]];
    case RecipeKind::affine_l1:
        p.n = sec.small_int("n", p.n);
        p.p = sec.small_int("p", p.p);
        p.seed = sec.unsigned_integer("seed", p.seed);
        break;
    case RecipeKind::exactness_1d:
        p.M = sec.number("M", p.M);
        break;
    case RecipeKind::slack_l1_net: {
        p.seed = sec.unsigned_integer("seed", p.seed);
        if (const Json *w = sec.raw("layer_widths")) {
            if (!w->is_array())
                throw ConfigError(sec.key_path("layer_widths") + ": expected an array");
            p.net.layer_widths.clear();
            for (const auto &v : *w) {
                if (!v.is_number_integer())
                    throw ConfigError(sec.key_path("layer_widths") +
                                      ": expected integer widths");
                p.net.layer_widths.push_back(v.get<int>());
            }
        }
        p.net.radius = sec.number("radius", p.net.radius);
        p.net.train_size = sec.small_int("train_size", p.net.train_size);
        p.net.test_size = sec.small_int("test_size", p.net.test_size);
        p.net.batch_size = sec.small_int("batch_size", p.net.batch_size);
        p.net.init_scale = sec.number("init_scale", p.net.init_scale);
        break;
    }
    }
    sec.finish();
    return p;
}

inline SolverConfig read_solver(Section sec) {
    const SolverConfig def;
    SolverConfig s;
    s.rho = sec.number("rho", def.rho);
    s.beta = sec.number("beta", def.beta);
    s.theta = read_schedule(sec.child("theta"), def.theta);
    s.eta = read_schedule(sec.child("eta"), def.eta);
    s.method = read_method(sec.child("method"));
    {
        Section t = sec.child("tracker");
        s.tracker.kind = t.enumeration("kind", tracker_names, std::optional(def.tracker.kind));
        if (s.tracker.kind == TrackerKind::correction)
            s.tracker.tau_tilde = t.number("tau_tilde", def.tracker.tau_tilde);
        t.finish();
    }
    {
        Section d = sec.child("dual");
        s.dual.kind = d.enumeration("kind", dual_names, std::optional(def.dual.kind));
        if (s.dual.kind == DualKind::ialm_baseline) {
            s.dual.beta_tilde = d.number("beta_tilde", def.dual.beta_tilde);
            s.dual.sigma = d.number("sigma", def.dual.sigma);
            s.dual.theta_tilde = d.number("theta_tilde", def.dual.theta_tilde);
            s.dual.inner_steps = d.integer("inner_steps", def.dual.inner_steps);
        }
        d.finish();
    }
    {
        Section nz = sec.child("noise");
        s.noise.kind = nz.enumeration("kind", noise_names, std::optional(def.noise.kind));
        if (s.noise.kind != NoiseKind::none) {
            s.noise.bound = nz.number("bound", def.noise.bound);
            s.noise.seed = nz.unsigned_integer("seed", def.noise.seed);
        }
        nz.finish();
    }
    {
        Section in = sec.child("inexactness");
        s.inexactness.radius0 = in.number("radius0", def.inexactness.radius0);
        s.inexactness.decay = in.number("decay", def.inexactness.decay);
        in.finish();
    }
    s.max_iters = sec.integer("max_iters", def.max_iters);
    s.seed = sec.unsigned_integer("seed", def.seed);
    s.kkt_probe = sec.number("kkt_probe", def.kkt_probe);
    if (const Json *l = sec.raw("lambda0")) {
        if (!l->is_array())
            throw ConfigError(sec.key_path("lambda0") + ": expected an array");
        s.lambda0.resize(static_cast<Eigen::Index>(l->size()));
        for (std::size_t i = 0; i < l->size(); ++i) {
            if (!(*l)[i].is_number())
                throw ConfigError(sec.key_path("lambda0") + ": expected numbers");
            s.lambda0[static_cast<Eigen::Index>(i)] = (*l)[i].get<double>();
        }
    }
    sec.finish();
    return s;
}

} // namespace detail

/// Cross-field checks; throws ConfigError naming the violated condition.
inline void validate(const RunConfig &cfg) {
    validate(cfg.problem);
    if (cfg.label.empty() ||
        cfg.label.find_first_of("/\\") != std::string::npos)
        throw ConfigError("label must be a nonempty file-name-safe string");
    if (cfg.output_path.empty())
        throw ConfigError("output_path must not be empty");
    if (cfg.record_every < 1)
        throw ConfigError("record_every must be >= 1");
    if (cfg.repetitions < 1)
        throw ConfigError("repetitions must be >= 1");
    if (cfg.epochs && *cfg.epochs < 0)
        throw ConfigError("epochs must be >= 0");
    if (cfg.solver.lambda0.size() != 0 &&
        cfg.solver.lambda0.size() != constraint_dim(cfg.problem))
        throw ConfigError("solver.lambda0 must have " +
                          std::to_string(constraint_dim(cfg.problem)) + " entries");
    if (is_stochastic(cfg.problem.kind) &&
        cfg.solver.tracker.kind != TrackerKind::correction)
        throw ConfigError(std::string("problem kind ") + to_string(cfg.problem.kind) +
                          " is sampled and needs solver.tracker.kind = correction");
    try {
        // Auto epoch lengths only need a placeholder to validate.
        resolve_solver(cfg, 1).validate();
    } catch (const ParameterError &e) {
        throw ConfigError(std::string("solver: ") + e.what());
    }
}

inline RunConfig parse_config_json(const Json &j) {
    detail::Section top(j, "");
    RunConfig cfg;
    cfg.label = top.string("label", cfg.label);
    if (!top.has("problem"))
        throw ConfigError("problem: missing required table");
    cfg.problem = detail::read_problem(top.child("problem"));
    cfg.solver = detail::read_solver(top.child("solver"));
    if (top.has("epochs"))
        cfg.epochs = top.integer("epochs", 0);
    cfg.output_path = top.string("output_path", cfg.output_path);
    cfg.record_every = top.integer("record_every", cfg.record_every);
    cfg.repetitions = top.integer("repetitions", cfg.repetitions);
    top.finish();
    validate(cfg);
    return cfg;
}

/// Parses and validates config text; `source` names it in messages.
inline RunConfig parse_config_text(const std::string &text,
                                   const std::string &source = "<config>") {
    Json j;
    try {
        j = Json::parse(text);
    } catch (const Json::parse_error &e) {
        throw ConfigError(source + ": " + e.what());
    }
    try {
        return parse_config_json(j);
    } catch (const ConfigError &e) {
        throw ConfigError(source + ": " + e.what());
    }
}

inline RunConfig parse_config(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in)
        throw ConfigError("cannot open config file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str(), path.string());
}

// ---------------------------------------------------------------------------
// Serialization (inverse of parse_config_json)

namespace detail {

inline Json to_json(const StepSchedule &s) {
    Json j;
    j["kind"] = enum_name(schedule_names, s.kind);
    j["c"] = s.c;
    switch (s.kind) {
    case ScheduleKind::constant:
        break;
    case ScheduleKind::inv_sqrt_epoch:
        if (s.epoch_len != 0)
            j["epoch_len"] = s.epoch_len;
        break;
    case ScheduleKind::power:
        j["exponent"] = s.exponent;
        break;
    case ScheduleKind::inv_sqrt_time:
        j["time_scale"] = s.time_scale;
        break;
    }
    return j;
}

inline Json to_json(const MethodConfig &m) {
    Json j;
    j["kind"] = enum_name(method_names, m.kind);
    if (m.kind == MethodKind::prox_sgdm) {
        j["tau"] = m.tau;
        j["alpha"] = m.alpha;
    } else if (m.kind == MethodKind::prox_adam) {
        j["alpha"] = m.alpha;
        j["tau1"] = m.tau1;
        j["tau2"] = m.tau2;
        j["eps"] = m.eps;
    }
    return j;
}

} // namespace detail

inline Json to_json(const ProblemSpec &p) {
    Json j;
    j["kind"] = to_string(p.kind);
    switch (p.kind) {
    case RecipeKind::affine_l1:
    case RecipeKind::stochastic_affine:
        j["n"] = p.n;
        j["p"] = p.p;
        j["seed"] = p.seed;
        if (p.kind == RecipeKind::stochastic_affine)
            j["noise_scale"] = p.noise_scale;
        break;
    case RecipeKind::exactness_1d:
        j["M"] = p.M;
        break;
    case RecipeKind::slack_l1_net:
        j["seed"] = p.seed;
        j["layer_widths"] = p.net.layer_widths;
        j["radius"] = p.net.radius;
        j["train_size"] = p.net.train_size;
        j["test_size"] = p.net.test_size;
        j["batch_size"] = p.net.batch_size;
        j["init_scale"] = p.net.init_scale;
        break;
    }
    return j;
}

inline Json to_json(const SolverConfig &s) {
    using namespace detail;
    Json j;
    j["rho"] = s.rho;
    j["beta"] = s.beta;
    j["theta"] = to_json(s.theta);
    j["eta"] = to_json(s.eta);
    j["method"] = to_json(s.method);
    Json t;
    t["kind"] = enum_name(tracker_names, s.tracker.kind);
    if (s.tracker.kind == TrackerKind::correction)
        t["tau_tilde"] = s.tracker.tau_tilde;
    j["tracker"] = t;
    Json d;
    d["kind"] = enum_name(dual_names, s.dual.kind);
    if (s.dual.kind == DualKind::ialm_baseline) {
        d["beta_tilde"] = s.dual.beta_tilde;
        d["sigma"] = s.dual.sigma;
        d["theta_tilde"] = s.dual.theta_tilde;
        d["inner_steps"] = s.dual.inner_steps;
    }
    j["dual"] = d;
    Json nz;
    nz["kind"] = enum_name(noise_names, s.noise.kind);
    if (s.noise.kind != NoiseKind::none) {
        nz["bound"] = s.noise.bound;
        nz["seed"] = s.noise.seed;
    }
    j["noise"] = nz;
    j["inexactness"] = {{"radius0", s.inexactness.radius0},
                        {"decay", s.inexactness.decay}};
    j["max_iters"] = s.max_iters;
    j["seed"] = s.seed;
    j["kkt_probe"] = s.kkt_probe;
    if (s.lambda0.size() != 0)
        j["lambda0"] = std::vector<double>(s.lambda0.begin(), s.lambda0.end());
    return j;
}

inline Json to_json(const RunConfig &cfg) {
    Json j;
    j["label"] = cfg.label;
    j["problem"] = to_json(cfg.problem);
    j["solver"] = to_json(cfg.solver);
    if (cfg.epochs)
        j["epochs"] = *cfg.epochs;
    j["output_path"] = cfg.output_path;
    j["record_every"] = cfg.record_every;
    j["repetitions"] = cfg.repetitions;
    return j;
}

inline std::string serialize_config(const RunConfig &cfg) {
    return to_json(cfg).dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Metrics and summaries

inline Json to_json(const MetricsRecord &m) {
    Json j;
    j["k"] = m.k;
    j["f_val"] = m.f_val;
    j["feas"] = m.feas;
    j["g_val"] = m.g_val;
    j["L_val"] = m.L_val;
    j["H_val"] = m.H_val;
    j["lambda_norm"] = m.lambda_norm;
    j["kkt_residual"] = m.kkt_residual;
    j["tracker_err"] = m.tracker_err;
    j["lyapunov"] = m.lyapunov ? Json(*m.lyapunov) : Json(nullptr);
    return j;
}

/// Inverse of to_json(MetricsRecord); every field is required.
inline MetricsRecord metrics_from_json(const Json &j) {
    detail::Section sec(j, "metrics");
    MetricsRecord m;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (const char *key : {"k", "f_val", "feas", "g_val", "L_val", "H_val",
                            "lambda_norm", "kkt_residual", "tracker_err", "lyapunov"})
        if (!sec.has(key))
            throw ConfigError(std::string("metrics: missing field ") + key);
    m.k = sec.integer("k", 0);
    m.f_val = sec.number("f_val", nan);
    m.feas = sec.number("feas", nan);
    m.g_val = sec.number("g_val", nan);
    m.L_val = sec.number("L_val", nan);
    m.H_val = sec.number("H_val", nan);
    m.lambda_norm = sec.number("lambda_norm", nan);
    m.kkt_residual = sec.number("kkt_residual", nan);
    m.tracker_err = sec.number("tracker_err", nan);
    if (const Json *l = sec.raw("lyapunov"); l && !l->is_null()) {
        if (!l->is_number())
            throw ConfigError("metrics.lyapunov: expected a number or null");
        m.lyapunov = l->get<double>();
    }
    sec.finish();
    return m;
}

inline void write_metrics(const std::filesystem::path &path,
                          const std::vector<MetricsRecord> &records) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw Error("cannot write " + path.string());
    for (const auto &m : records)
        out << to_json(m).dump() << '\n';
}

inline std::vector<MetricsRecord> read_metrics(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in)
        throw Error("cannot read " + path.string());
    std::vector<MetricsRecord> out;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty())
            out.push_back(metrics_from_json(Json::parse(line)));
    return out;
}

/// Shortest decimal text that reads back as the same double.
inline std::string format_number(double v) {
    if (std::isnan(v))
        return "nan";
    if (std::isinf(v))
        return v > 0 ? "inf" : "-inf";
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

/// Seed of repetition r; repetition 0 keeps the configured seed.
inline std::uint64_t repetition_seed(std::uint64_t base, std::int64_t r) {
    return r == 0 ? base : detail::mix_seed(base + static_cast<std::uint64_t>(r));
}

struct RepetitionOutcome {
    std::int64_t repetition = 0;
    std::uint64_t seed = 0;
    RunResult result;
    std::optional<double> heldout_accuracy;

    const MetricsRecord &final_metrics() const { return result.trajectory.back(); }
    /// Final feasibility at most half of the initial one.
    bool admissible() const {
        return final_metrics().feas <= 0.5 * result.initial_metrics.feas;
    }
};

/// Runs repetition r of a validated config on an already built recipe.
inline RepetitionOutcome execute(const RunConfig &cfg, const ProblemRecipe &recipe,
                                 std::int64_t r) {
    RepetitionOutcome out;
    out.repetition = r;
    SolverConfig solver = resolve_solver(cfg, recipe.steps_per_epoch);
    solver.seed = repetition_seed(cfg.solver.seed, r);
    out.seed = solver.seed;
    const RunOptions opts{cfg.record_every};
    if (recipe.stochastic)
        out.result = run(*recipe.stochastic, solver, recipe.x0, opts);
    else
        out.result = run(recipe.instance, solver, recipe.x0, opts);
    if (recipe.heldout_accuracy)
        out.heldout_accuracy = recipe.heldout_accuracy(out.result.final_state.method.x);
    return out;
}

inline const char *summary_header =
    "label,repetition,seed,iterations,aborted,initial_f,initial_feas,final_f,"
    "final_feas,final_kkt,admissible,heldout_accuracy,wall_seconds";

inline std::string summary_row(const std::string &label, const RepetitionOutcome &o) {
    const auto &init = o.result.initial_metrics;
    const auto &fin = o.final_metrics();
    std::ostringstream s;
    s << label << ',' << o.repetition << ',' << o.seed << ','
      << o.result.final_state.k << ',' << (o.result.aborted ? 1 : 0) << ','
      << format_number(init.f_val) << ',' << format_number(init.feas) << ','
      << format_number(fin.f_val) << ',' << format_number(fin.feas) << ','
      << format_number(fin.kkt_residual) << ',' << (o.admissible() ? 1 : 0) << ','
      << (o.heldout_accuracy ? format_number(*o.heldout_accuracy) : "") << ','
      << format_number(o.result.wall_seconds);
    return s.str();
}

inline std::filesystem::path metrics_path(const std::filesystem::path &dir,
                                          const std::string &label, std::int64_t r) {
    return dir / (label + ".rep" + std::to_string(r) + ".jsonl");
}

inline std::filesystem::path summary_path(const std::filesystem::path &dir,
                                          const std::string &label) {
    return dir / (label + ".summary.csv");
}

// ---------------------------------------------------------------------------
// Commands

struct CommandOptions {
    std::optional<std::string> out;
    std::optional<std::uint64_t> seed;
    bool quiet = false;
};

namespace detail {

inline RunConfig apply_overrides(RunConfig cfg, const CommandOptions &opts) {
    if (opts.out)
        cfg.output_path = *opts.out;
    if (opts.seed)
        cfg.solver.seed = *opts.seed;
    validate(cfg);
    return cfg;
}

inline std::filesystem::path prepare_dir(const std::string &dir) {
    std::filesystem::path p(dir);
    std::error_code ec;
    std::filesystem::create_directories(p, ec);
    if (ec || !std::filesystem::is_directory(p))
        throw ConfigError("output_path " + dir + " is not a writable directory");
    return p;
}

/// Runs all repetitions, writing metrics files and the summary.
inline std::vector<RepetitionOutcome> run_all(const RunConfig &cfg,
                                              const std::filesystem::path &dir,
                                              bool quiet, std::ostream &log) {
    const ProblemRecipe recipe = build_recipe(cfg.problem);
    std::vector<RepetitionOutcome> outcomes;
    for (std::int64_t r = 0; r < cfg.repetitions; ++r) {
        outcomes.push_back(execute(cfg, recipe, r));
        const auto &o = outcomes.back();
        write_metrics(metrics_path(dir, cfg.label, r), o.result.trajectory);
        if (!quiet) {
            const auto &fin = o.final_metrics();
            log << cfg.label << " rep " << r << ": k=" << o.result.final_state.k
                << " f=" << format_number(fin.f_val)
                << " feas=" << format_number(fin.feas)
                << " kkt=" << format_number(fin.kkt_residual);
            if (o.result.aborted)
                log << " ABORTED (" << o.result.abort_reason << ")";
            log << '\n';
        }
    }
    std::ofstream sum(summary_path(dir, cfg.label), std::ios::binary);
    sum << summary_header << '\n';
    for (const auto &o : outcomes)
        sum << summary_row(cfg.label, o) << '\n';
    if (!sum)
        throw Error("cannot write summary in " + dir.string());
    return outcomes;
}

inline bool any_aborted(const std::vector<RepetitionOutcome> &v) {
    return std::any_of(v.begin(), v.end(),
                       [](const RepetitionOutcome &o) { return o.result.aborted; });
}

} // namespace detail

/// Executes every repetition; writes <label>.rep<r>.jsonl, <label>.summary.csv
/// and the resolved <label>.config.json.
inline int cmd_run(const RunConfig &config, const CommandOptions &opts,
                   std::ostream &log) {
    const RunConfig cfg = detail::apply_overrides(config, opts);
    const auto dir = detail::prepare_dir(cfg.output_path);
    {
        std::ofstream c(dir / (cfg.label + ".config.json"), std::ios::binary);
        c << serialize_config(cfg);
    }
    const auto outcomes = detail::run_all(cfg, dir, opts.quiet, log);
    return detail::any_aborted(outcomes) ? exit_aborted : exit_success;
}

/// Runs repetition 0 of each config on a shared problem. Writes compare.csv
/// (long format, one row per method and recorded step) and prints a table
/// of final values with one column per method.
inline int cmd_compare(const std::vector<RunConfig> &configs,
                       const CommandOptions &opts, std::ostream &out) {
    if (configs.empty())
        throw ConfigError("compare needs at least one config");
    std::vector<RunConfig> cfgs;
    std::set<std::string> labels;
    for (const auto &c : configs) {
        cfgs.push_back(detail::apply_overrides(c, opts));
        if (!labels.insert(c.label).second)
            throw ConfigError("compare: duplicate label " + c.label);
    }
    const Json problem = to_json(cfgs.front().problem);
    for (const auto &c : cfgs)
        if (to_json(c.problem) != problem)
            throw ConfigError("compare: configs " + cfgs.front().label + " and " +
                              c.label + " use different problems");
    const auto dir = detail::prepare_dir(opts.out ? *opts.out : cfgs.front().output_path);
    const ProblemRecipe recipe = build_recipe(cfgs.front().problem);

    std::vector<RepetitionOutcome> outcomes;
    std::ofstream csv(dir / "compare.csv", std::ios::binary);
    csv << "method,k,train_loss,feasibility,kkt_residual\n";
    for (const auto &c : cfgs) {
        outcomes.push_back(execute(c, recipe, 0));
        write_metrics(metrics_path(dir, c.label, 0), outcomes.back().result.trajectory);
        for (const auto &m : outcomes.back().result.trajectory)
            csv << c.label << ',' << m.k << ',' << format_number(m.f_val) << ','
                << format_number(m.feas) << ',' << format_number(m.kkt_residual) << '\n';
    }
    if (!csv)
        throw Error("cannot write compare.csv in " + dir.string());

    if (!opts.quiet) {
        std::vector<std::string> rows{"train_loss", "feasibility", "kkt_residual",
                                      "heldout_accuracy", "admissible"};
        std::size_t w0 = 16;
        std::vector<std::size_t> widths;
        for (const auto &c : cfgs)
            widths.push_back(std::max<std::size_t>(14, c.label.size() + 2));
        out << std::left << std::setw(static_cast<int>(w0)) << "metric";
        for (std::size_t i = 0; i < cfgs.size(); ++i)
            out << std::right << std::setw(static_cast<int>(widths[i])) << cfgs[i].label;
        out << '\n';
        for (const auto &row : rows) {
            out << std::left << std::setw(static_cast<int>(w0)) << row;
            for (std::size_t i = 0; i < cfgs.size(); ++i) {
                const auto &o = outcomes[i];
                const auto &fin = o.final_metrics();
                std::ostringstream cell;
                cell << std::setprecision(6);
                if (row == "train_loss")
                    cell << fin.f_val;
                else if (row == "feasibility")
                    cell << fin.feas;
                else if (row == "kkt_residual")
                    cell << fin.kkt_residual;
                else if (row == "heldout_accuracy")
                    cell << (o.heldout_accuracy ? std::to_string(*o.heldout_accuracy) : "-");
                else
                    cell << (o.admissible() ? "yes" : "no");
                out << std::right << std::setw(static_cast<int>(widths[i])) << cell.str();
            }
            out << '\n';
        }
    }
    return detail::any_aborted(outcomes) ? exit_aborted : exit_success;
}

namespace detail {

inline std::vector<std::string> split_path(const std::string &dotted) {
    std::vector<std::string> parts;
    std::string cur;
    for (char ch : dotted) {
        if (ch == '.') {
            parts.push_back(cur);
            cur.clear();
        } else {
            cur += ch;
        }
    }
    parts.push_back(cur);
    return parts;
}

/// Sweep values are JSON literals; bare words are taken as strings.
inline Json parse_sweep_value(const std::string &text) {
    try {
        return Json::parse(text);
    } catch (const Json::parse_error &) {
        return Json(text);
    }
}

} // namespace detail

struct SweepRow {
    Json value;
    RepetitionOutcome outcome;
    bool selected = false;
};

/// Best final objective among admissible rows; nullopt when none is.
inline std::optional<std::size_t> select_best(const std::vector<SweepRow> &rows) {
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto &o = rows[i].outcome;
        if (o.result.aborted || !o.admissible())
            continue;
        if (!best || o.final_metrics().f_val < rows[*best].outcome.final_metrics().f_val)
            best = i;
    }
    return best;
}

/// Reruns the config once per value of a dotted parameter path (as written
/// by serialize_config, e.g. solver.rho or solver.method.alpha). "seed" is
/// shorthand for solver.seed, i.e. explicit repetitions. Writes sweep.csv.
inline int cmd_sweep(const RunConfig &config, const std::string &parameter,
                     const std::vector<std::string> &values,
                     const CommandOptions &opts, std::ostream &log) {
    if (values.empty())
        throw ConfigError("sweep: empty value list");
    const RunConfig base = detail::apply_overrides(config, opts);
    const std::string path = parameter == "seed" ? "solver.seed" : parameter;
    const auto parts = detail::split_path(path);
    const Json base_json = to_json(base);
    {
        const Json *node = &base_json;
        for (const auto &p : parts) {
            if (!node->is_object() || !node->contains(p))
                throw ConfigError("sweep: unknown parameter " + parameter);
            node = &(*node)[p];
        }
        if (node->is_object())
            throw ConfigError("sweep: " + parameter + " is a table, not a parameter");
    }
    const auto dir = detail::prepare_dir(base.output_path);

    std::vector<SweepRow> rows;
    for (std::size_t i = 0; i < values.size(); ++i) {
        Json j = base_json;
        Json *node = &j;
        for (const auto &p : parts)
            node = &(*node)[p];
        *node = detail::parse_sweep_value(values[i]);
        j["label"] = base.label + ".sweep" + std::to_string(i);
        RunConfig point;
        try {
            point = parse_config_json(j);
        } catch (const ConfigError &e) {
            throw ConfigError("sweep value " + values[i] + ": " + e.what());
        }
        for (auto &o : detail::run_all(point, dir, opts.quiet, log))
            rows.push_back({*node, std::move(o), false});
    }
    if (auto best = select_best(rows))
        rows[*best].selected = true;

    std::ofstream csv(dir / (base.label + ".sweep.csv"), std::ios::binary);
    csv << "parameter,value,repetition,seed,initial_feas,final_f,final_feas,"
           "final_kkt,heldout_accuracy,admissible,selected\n";
    for (const auto &r : rows) {
        const auto &o = r.outcome;
        const auto &fin = o.final_metrics();
        const std::string v = r.value.is_number_float()
                                  ? format_number(r.value.get<double>())
                                  : (r.value.is_string() ? r.value.get<std::string>()
                                                         : r.value.dump());
        csv << parameter << ',' << v << ',' << o.repetition << ',' << o.seed << ','
            << format_number(o.result.initial_metrics.feas) << ','
            << format_number(fin.f_val) << ',' << format_number(fin.feas) << ','
            << format_number(fin.kkt_residual) << ','
            << (o.heldout_accuracy ? format_number(*o.heldout_accuracy) : "") << ','
            << (o.admissible() ? 1 : 0) << ',' << (r.selected ? 1 : 0) << '\n';
    }
    if (!csv)
        throw Error("cannot write sweep csv in " + dir.string());
    const bool aborted = std::any_of(rows.begin(), rows.end(), [](const SweepRow &r) {
        return r.outcome.result.aborted;
    });
    return aborted ? exit_aborted : exit_success;
}

/// Recipe names with their config keys and defaults.
inline void cmd_list_problems(std::ostream &out) {
    for (const auto &e : detail::recipe_names) {
        ProblemSpec spec;
        spec.kind = e.value;
        Json j = to_json(spec);
        j.erase("kind");
        out << e.name << "  " << j.dump() << '\n';
    }
}

} // namespace elm
