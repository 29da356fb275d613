#pragma once

// Optimizers over a flat parameter vector: L-BFGS (two-loop recursion with a
// strong-Wolfe line search) and the first-order Adam / SGD fallbacks.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "numerics.hpp"

namespace discourse {

/// Returns f(x) and writes the gradient into `grad`.
using Objective = std::function<double(std::span<const double> x, std::span<double> grad)>;

enum class OptimizerKind { lbfgs, adam, sgd };

inline const char* to_string(OptimizerKind k) {
    switch (k) {
        case OptimizerKind::lbfgs: return "lbfgs";
        case OptimizerKind::adam: return "adam";
        case OptimizerKind::sgd: return "sgd";
    }
    return "?";
}

inline OptimizerKind optimizer_from_string(const std::string& s) {
    if (s == "lbfgs") return OptimizerKind::lbfgs;
    if (s == "adam") return OptimizerKind::adam;
    if (s == "sgd") return OptimizerKind::sgd;
    throw std::invalid_argument("unknown optimizer '" + s + "' (expected lbfgs|adam|sgd)");
}

struct LineSearchOptions {
    double c1 = 1e-4;  // sufficient decrease
    double c2 = 0.9;   // curvature
    double max_step = 1e10;
    int max_evals = 20;
};

struct LineSearchResult {
    bool ok = false;
    double step = 0.0;
    double f = 0.0;
    int evals = 0;
};

namespace detail {

/// Minimiser of the cubic through (a, fa, da) and (b, fb, db), or NaN.
inline double cubic_minimizer(double a, double fa, double da, double b, double fb, double db) {
    const double d1 = da + db - 3.0 * (fa - fb) / (a - b);
    const double disc = d1 * d1 - da * db;
    if (disc < 0.0) return std::nan("");
    const double d2 = std::copysign(std::sqrt(disc), b - a);
    const double denom = db - da + 2.0 * d2;
    if (denom == 0.0) return std::nan("");
    return b - (b - a) * (db + d2 - d1) / denom;
}

struct Probe {
    const Objective& f;
    std::span<const double> x0;
    std::span<const double> dir;
    Vec x;
    Vec g;
    int evals = 0;

    // phi(t) and phi'(t)
    std::pair<double, double> operator()(double t) {
        for (std::size_t i = 0; i < x.size(); ++i) x[i] = x0[i] + t * dir[i];
        const double v = f(x, g);
        ++evals;
        return {v, dot(g, dir)};
    }
};

}  // namespace detail

/// Strong-Wolfe line search along `dir` (bracketing then zoom, with safeguarded
/// cubic interpolation). On success x_out/g_out hold the accepted point.
inline LineSearchResult wolfe_line_search(const Objective& f, std::span<const double> x, double f0,
                                          std::span<const double> g0, std::span<const double> dir, double step,
                                          Vec& x_out, Vec& g_out, const LineSearchOptions& opt = {}) {
    const double d0 = dot(g0, dir);
    LineSearchResult res;
    if (!(d0 < 0.0)) return res;
    detail::Probe phi{f, x, dir, Vec(x.size()), Vec(x.size())};

    auto accept = [&](double t, double ft) {
        res.ok = true;
        res.step = t;
        res.f = ft;
        res.evals = phi.evals;
        x_out = phi.x;
        g_out = phi.g;
        return res;
    };

    auto zoom = [&](double lo, double flo, double dlo, double hi, double fhi, double dhi) -> LineSearchResult {
        while (phi.evals < opt.max_evals) {
            const double a = std::min(lo, hi), b = std::max(lo, hi);
            double t = detail::cubic_minimizer(lo, flo, dlo, hi, fhi, dhi);
            const double margin = 0.1 * (b - a);
            if (!std::isfinite(t) || t < a + margin || t > b - margin) t = 0.5 * (lo + hi);
            const auto [ft, dt] = phi(t);
            if (!std::isfinite(ft) || ft > f0 + opt.c1 * t * d0 || ft >= flo) {
                hi = t;
                fhi = std::isfinite(ft) ? ft : std::numeric_limits<double>::max();
                dhi = std::isfinite(dt) ? dt : 0.0;
            } else {
                if (std::abs(dt) <= -opt.c2 * d0) return accept(t, ft);
                if (dt * (hi - lo) >= 0.0) {
                    hi = lo;
                    fhi = flo;
                    dhi = dlo;
                }
                lo = t;
                flo = ft;
                dlo = dt;
            }
            if (std::abs(hi - lo) < 1e-16 * std::max(1.0, std::abs(lo))) break;
        }
        res.evals = phi.evals;
        return res;
    };

    double prev = 0.0, fprev = f0, dprev = d0;
    double t = std::min(step, opt.max_step);
    while (phi.evals < opt.max_evals) {
        const auto [ft, dt] = phi(t);
        if (!std::isfinite(ft) || ft > f0 + opt.c1 * t * d0 || (phi.evals > 1 && ft >= fprev)) {
            const double fhi = std::isfinite(ft) ? ft : std::numeric_limits<double>::max();
            return zoom(prev, fprev, dprev, t, fhi, std::isfinite(dt) ? dt : 0.0);
        }
        if (std::abs(dt) <= -opt.c2 * d0) return accept(t, ft);
        if (dt >= 0.0) return zoom(t, ft, dt, prev, fprev, dprev);
        prev = t;
        fprev = ft;
        dprev = dt;
        t = std::min(2.0 * t, opt.max_step);
    }
    res.evals = phi.evals;
    return res;
}

struct LbfgsOptions {
    std::size_t history = 10;
    LineSearchOptions line_search;
};

/// Limited-memory BFGS. The curvature history survives across calls to
/// iterate() until reset().
class Lbfgs {
public:
    explicit Lbfgs(LbfgsOptions opt = {}) : opt_(opt) {}

    void reset() {
        s_.clear();
        y_.clear();
    }

    std::size_t history_size() const noexcept { return s_.size(); }

    /// Two-loop recursion: returns -H g.
    Vec direction(std::span<const double> g) const {
        Vec q(g.begin(), g.end());
        const std::size_t m = s_.size();
        std::vector<double> alpha(m), rho(m);
        for (std::size_t k = m; k-- > 0;) {
            rho[k] = 1.0 / dot(y_[k], s_[k]);
            alpha[k] = rho[k] * dot(s_[k], q);
            axpy(-alpha[k], y_[k], q);
        }
        if (m > 0) {
            const double gamma = dot(s_[m - 1], y_[m - 1]) / dot(y_[m - 1], y_[m - 1]);
            for (double& v : q) v *= gamma;
        }
        for (std::size_t k = 0; k < m; ++k) {
            const double beta = rho[k] * dot(y_[k], q);
            axpy(alpha[k] - beta, s_[k], q);
        }
        for (double& v : q) v = -v;
        return q;
    }

    /// One quasi-Newton step from (x, fx, g), updated in place. Returns false
    /// when no acceptable step was found; x, fx and g are then unchanged.
    bool iterate(const Objective& f, Vec& x, double& fx, Vec& g) {
        Vec d = direction(g);
        if (!(dot(d, g) < 0.0)) {
            reset();
            d = direction(g);
        }
        const double gnorm = std::sqrt(squared_norm(g));
        if (gnorm == 0.0) return false;
        const double step0 = s_.empty() ? std::min(1.0, 1.0 / gnorm) : 1.0;
        Vec xn, gn;
        const auto ls = wolfe_line_search(f, x, fx, g, d, step0, xn, gn, opt_.line_search);
        if (!ls.ok) {
            reset();
            return false;
        }
        Vec s(x.size()), y(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) {
            s[i] = xn[i] - x[i];
            y[i] = gn[i] - g[i];
        }
        const double sy = dot(s, y);
        if (sy > 1e-10 * squared_norm(y)) {
            s_.push_back(std::move(s));
            y_.push_back(std::move(y));
            if (s_.size() > opt_.history) {
                s_.pop_front();
                y_.pop_front();
            }
        }
        x = std::move(xn);
        g = std::move(gn);
        fx = ls.f;
        return true;
    }

private:
    LbfgsOptions opt_;
    std::deque<Vec> s_;
    std::deque<Vec> y_;
};

struct AdamOptions {
    double learning_rate = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

class Adam {
public:
    explicit Adam(AdamOptions opt = {}) : opt_(opt) {}

    void step(std::span<double> x, std::span<const double> g) {
        if (m_.size() != x.size()) {
            m_.assign(x.size(), 0.0);
            v_.assign(x.size(), 0.0);
            t_ = 0;
        }
        ++t_;
        const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < x.size(); ++i) {
            m_[i] = opt_.beta1 * m_[i] + (1.0 - opt_.beta1) * g[i];
            v_[i] = opt_.beta2 * v_[i] + (1.0 - opt_.beta2) * g[i] * g[i];
            x[i] -= opt_.learning_rate * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + opt_.epsilon);
        }
    }

private:
    AdamOptions opt_;
    Vec m_, v_;
    long t_ = 0;
};

class Sgd {
public:
    explicit Sgd(double learning_rate = 0.1) : lr_(learning_rate) {}
    void step(std::span<double> x, std::span<const double> g) const { axpy(-lr_, g, x); }

private:
    double lr_;
};

}  // namespace discourse
