#pragma once

// Central finite-difference gradient oracle. Runs on the double tensor
// instantiation so the numeric differences carry full 64-bit precision; the
// analytic gradients under test come from the same templated kernels that the
// float build uses.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "ptwin/tensor.hpp"

namespace gradcheck {

using ptwin::TensorT;

struct Result {
    bool ok = true;
    double worst_rel = 0.0;
    std::string where;
};

// rel error with a unit floor, plus a small absolute floor for near-zero pairs
inline double rel_err(double a, double d) {
    const double diff = std::fabs(a - d);
    const double scale = std::max({std::fabs(a), std::fabs(d), 1.0});
    return diff / scale;
}

// f: builds a fresh graph from the inputs and returns a scalar loss.
// Checks d(loss)/d(inputs[i]) for every element of every listed input.
inline Result check(const std::function<TensorT<double>()>& f,
                    std::vector<TensorT<double>> inputs, double h = 1e-3, double tol = 1e-4) {
    auto& tape = ptwin::TapeT<double>::active();
    for (auto& in : inputs) {
        in.set_requires_grad(true);
        in.zero_grad();
    }
    tape.clear();
    TensorT<double> loss = f();
    ptwin::backward(loss);
    std::vector<std::vector<double>> analytic;
    for (auto& in : inputs)
        analytic.push_back(in.has_grad() ? in.grad() : std::vector<double>(in.numel(), 0.0));
    tape.clear();

    Result res;
    ptwin::NoGradGuard ng;
    for (std::size_t t = 0; t < inputs.size(); ++t) {
        auto& vals = inputs[t].data();
        for (std::size_t i = 0; i < vals.size(); ++i) {
            const double keep = vals[i];
            vals[i] = keep + h;
            const double fp = f().item();
            vals[i] = keep - h;
            const double fm = f().item();
            vals[i] = keep;
            const double numeric = (fp - fm) / (2.0 * h);
            const double e = rel_err(analytic[t][i], numeric);
            if (e > res.worst_rel) {
                res.worst_rel = e;
                res.where = "input " + std::to_string(t) + " elem " + std::to_string(i) +
                            " analytic " + std::to_string(analytic[t][i]) + " numeric " +
                            std::to_string(numeric);
            }
            if (e > tol) res.ok = false;
        }
    }
    return res;
}

// Same, but only a deterministic sample of coordinates per input (for the
// model-scale checks where exhaustive probing is wasteful).
inline Result check_sampled(const std::function<TensorT<double>()>& f,
                            std::vector<TensorT<double>> inputs, std::size_t coords_per_input,
                            std::uint64_t seed, double h = 1e-3, double tol = 1e-4) {
    auto& tape = ptwin::TapeT<double>::active();
    for (auto& in : inputs) {
        in.set_requires_grad(true);
        in.zero_grad();
    }
    tape.clear();
    TensorT<double> loss = f();
    ptwin::backward(loss);
    std::vector<std::vector<double>> analytic;
    for (auto& in : inputs)
        analytic.push_back(in.has_grad() ? in.grad() : std::vector<double>(in.numel(), 0.0));
    tape.clear();

    Result res;
    ptwin::NoGradGuard ng;
    ptwin::Rng rng(seed);
    for (std::size_t t = 0; t < inputs.size(); ++t) {
        auto& vals = inputs[t].data();
        const std::size_t n = vals.size();
        const std::size_t m = std::min(coords_per_input, n);
        for (std::size_t s = 0; s < m; ++s) {
            const std::size_t i = (n == m) ? s : static_cast<std::size_t>(rng.below(n));
            const double keep = vals[i];
            vals[i] = keep + h;
            const double fp = f().item();
            vals[i] = keep - h;
            const double fm = f().item();
            vals[i] = keep;
            const double numeric = (fp - fm) / (2.0 * h);
            const double e = rel_err(analytic[t][i], numeric);
            if (e > res.worst_rel) {
                res.worst_rel = e;
                res.where = "input " + std::to_string(t) + " elem " + std::to_string(i);
            }
            if (e > tol) res.ok = false;
        }
    }
    return res;
}

}  // namespace gradcheck
