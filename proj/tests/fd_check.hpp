#pragma once

// Test-only finite-difference oracle: central differences with h=1e-6 on
// 64-bit floats, compared entrywise against tape gradients.

#include <functional>
#include <vector>

#include "degdit/autodiff.hpp"
#include "degdit/params.hpp"

namespace fd {

using degdit::ad::Mat;
using degdit::ad::Tape;
using degdit::ad::Var;

struct CheckResult {
    double max_rel_err = 0.0;
    int checked = 0;
};

inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

// f builds a scalar loss from differentiable leaves seeded with `inputs`.
inline CheckResult check_input_gradients(
    const std::function<Var(Tape&, std::vector<Var>&)>& f,
    std::vector<Mat> inputs, double h = 1e-6) {
    Tape tape;
    std::vector<Var> leaves;
    for (const auto& m : inputs) leaves.push_back(tape.leaf(m));
    Var loss = f(tape, leaves);
    tape.backward(loss);
    std::vector<Mat> grads;
    for (auto& v : leaves) grads.push_back(tape.grad(v));

    auto eval = [&](const std::vector<Mat>& ins) {
        Tape t2;
        std::vector<Var> ls;
        for (const auto& m : ins) ls.push_back(t2.leaf(m, false));
        return f(t2, ls).scalar();
    };

    CheckResult res;
    for (size_t i = 0; i < inputs.size(); ++i) {
        for (Eigen::Index k = 0; k < inputs[i].size(); ++k) {
            std::vector<Mat> plus = inputs, minus = inputs;
            plus[i](k) += h;
            minus[i](k) -= h;
            double fdg = (eval(plus) - eval(minus)) / (2.0 * h);
            res.max_rel_err =
                std::max(res.max_rel_err, rel_err(grads[i](k), fdg));
            ++res.checked;
        }
    }
    return res;
}

// f builds a scalar loss from a Binding over `store`; every parameter entry
// is checked.
inline CheckResult check_param_gradients(
    const std::function<Var(degdit::Binding&)>& f, degdit::ParamStore store,
    double h = 1e-6) {
    Tape tape;
    degdit::Binding bind(tape, store, true);
    Var loss = f(bind);
    tape.backward(loss);
    std::vector<Mat> grads;
    for (int p = 0; p < store.count(); ++p) grads.push_back(bind.grad(p));

    auto eval = [&](const degdit::ParamStore& s) {
        Tape t2;
        degdit::Binding b2(t2, s, false);
        return f(b2).scalar();
    };

    CheckResult res;
    for (int p = 0; p < store.count(); ++p) {
        for (Eigen::Index k = 0; k < store.value(p).size(); ++k) {
            degdit::ParamStore plus = store, minus = store;
            plus.value(p)(k) += h;
            minus.value(p)(k) -= h;
            double fdg = (eval(plus) - eval(minus)) / (2.0 * h);
            res.max_rel_err =
                std::max(res.max_rel_err, rel_err(grads[p](k), fdg));
            ++res.checked;
        }
    }
    return res;
}

}  // namespace fd
