#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "scalpel/tensor.hpp"

// Finite-difference gradient checking. The analytic gradient from one
// backward pass is compared coordinate-by-coordinate against a central
// difference of the loss, computed through a fresh non-recording forward
// pass each time. This keeps the numeric side fully independent of the
// tape machinery it is checking.

namespace gradcheck {

template <typename S>
using LossFn =
    std::function<scalpel::Tensor<S>(scalpel::Tape<S>&, const std::vector<scalpel::Tensor<S>>&)>;

struct Report {
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
    std::size_t checked = 0;
};

template <typename S>
Report check(std::vector<scalpel::Tensor<S>> params, const LossFn<S>& loss_fn,
             double h = 1e-5) {
    using namespace scalpel;
    for (auto& p : params) {
        p.set_requires_grad(true);
        p.zero_grad();
    }

    Tape<S> tape;
    Tensor<S> loss = loss_fn(tape, params);
    tape.backward(loss);

    std::vector<std::vector<S>> analytic;
    analytic.reserve(params.size());
    for (auto& p : params)
        analytic.emplace_back(p.grad().begin(), p.grad().end());

    Report rep;
    Tape<S> quiet(false);
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto vals = params[pi].data();
        for (std::size_t i = 0; i < vals.size(); ++i) {
            const S orig = vals[i];
            const S step = static_cast<S>(h) * std::max(S(1), std::abs(orig));
            vals[i] = orig + step;
            const double up = static_cast<double>(loss_fn(quiet, params).item());
            vals[i] = orig - step;
            const double dn = static_cast<double>(loss_fn(quiet, params).item());
            vals[i] = orig;
            const double numeric = (up - dn) / (2.0 * static_cast<double>(step));
            const double a = static_cast<double>(analytic[pi][i]);
            const double abs_err = std::abs(a - numeric);
            const double rel = abs_err / std::max({1.0, std::abs(a), std::abs(numeric)});
            rep.max_abs_err = std::max(rep.max_abs_err, abs_err);
            rep.max_rel_err = std::max(rep.max_rel_err, rel);
            ++rep.checked;
        }
    }
    return rep;
}

}  // namespace gradcheck
