#pragma once

#include <functional>
#include <string>
#include <vector>

#include "crl/rng.hpp"
#include "crl/tensor.hpp"

namespace crl {

// Finite-difference verification of reverse-mode gradients. Each case builds
// a scalar loss from leaf variables; the analytic grads from one backward
// pass are compared against central differences on every input element.

struct GradCase {
    std::vector<Shape> shapes;
    // Sample input values; defaults to uniform(-2,2) on every element.
    std::function<std::vector<std::vector<double>>(Rng&)> sample;
    // Build a scalar loss from the leaf variables.
    std::function<Tensor(Tape&, const std::vector<Tensor>&)> build;
};

struct OpCheck {
    std::string name;
    std::function<GradCase(Rng&)> make;  // fresh random instance per call
    int instances = 10;
};

struct OpReport {
    std::string name;
    int instances = 0;
    double max_rel_err = 0.0;
    bool pass = false;
};

struct GradReport {
    std::vector<OpReport> ops;
    double tolerance = 1e-4;
    bool all_pass() const {
        for (const auto& o : ops)
            if (!o.pass) return false;
        return !ops.empty();
    }
};

inline std::vector<std::vector<double>> default_sample(Rng& rng, const std::vector<Shape>& shapes) {
    std::vector<std::vector<double>> out;
    for (const Shape& s : shapes) {
        std::vector<double> v(static_cast<std::size_t>(numel(s)));
        for (double& x : v) x = rng.uniform(-2.0, 2.0);
        out.push_back(std::move(v));
    }
    return out;
}

// Max relative error between analytic and numeric gradients for one case.
inline double gradcheck_case(const GradCase& c, Rng& rng, double h = 1e-5) {
    auto vals = c.sample ? c.sample(rng) : default_sample(rng, c.shapes);

    Tape tape(true, true);
    std::vector<Tensor> leaves;
    for (std::size_t i = 0; i < c.shapes.size(); ++i)
        leaves.push_back(variable(tape, c.shapes[i], vals[i]));
    Tensor loss = c.build(tape, leaves);
    if (loss.size() != 1) throw UsageError("gradcheck: builder must return a scalar");
    backward(loss);
    std::vector<std::vector<double>> analytic;
    for (const Tensor& l : leaves) analytic.push_back(l.grad());

    auto eval = [&](const std::vector<std::vector<double>>& vs) {
        Tape t2(false, true);
        std::vector<Tensor> ls;
        for (std::size_t i = 0; i < c.shapes.size(); ++i)
            ls.push_back(variable(t2, c.shapes[i], vs[i]));
        return c.build(t2, ls).item();
    };

    double worst = 0.0;
    for (std::size_t i = 0; i < vals.size(); ++i) {
        for (std::size_t j = 0; j < vals[i].size(); ++j) {
            const double orig = vals[i][j];
            vals[i][j] = orig + h;
            const double fp = eval(vals);
            vals[i][j] = orig - h;
            const double fm = eval(vals);
            vals[i][j] = orig;
            const double numeric = (fp - fm) / (2.0 * h);
            const double a = analytic[i][j];
            const double err = std::abs(a - numeric) /
                               std::max({1.0, std::abs(a), std::abs(numeric)});
            worst = std::max(worst, err);
        }
    }
    return worst;
}

inline OpReport run_check(const OpCheck& chk, Rng& rng, double tol = 1e-4) {
    OpReport r;
    r.name = chk.name;
    r.instances = chk.instances;
    for (int i = 0; i < chk.instances; ++i) {
        GradCase c = chk.make(rng);
        r.max_rel_err = std::max(r.max_rel_err, gradcheck_case(c, rng));
    }
    r.pass = r.max_rel_err <= tol;
    return r;
}

inline GradReport run_checks(const std::vector<OpCheck>& checks, std::uint64_t seed,
                             double tol = 1e-4) {
    GradReport rep;
    rep.tolerance = tol;
    Rng rng(seed);
    for (const auto& c : checks) rep.ops.push_back(run_check(c, rng, tol));
    return rep;
}

}  // namespace crl
