// Copyright (c) 2026, the sytta authors
// SPDX-License-Identifier: Apache-2.0
//
// Shared test helpers. The finite-difference oracle lives here and stays
// independent of the library's backward implementations.
#pragma once

#include "sytta/tensor.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <functional>
#include <vector>

namespace sytta_test {

// Central finite differences of f() w.r.t. the elements of x. f must
// re-evaluate the forward computation from x's current contents.
inline std::vector<double> finite_diff_grad(sytta::Tensor& x, const std::function<double()>& f,
                                            double h = 1e-5) {
    std::vector<double> g(x.data().size());
    for (size_t i = 0; i < g.size(); ++i) {
        const double orig = x.data()[i];
        x.data()[i] = orig + h;
        const double fp = f();
        x.data()[i] = orig - h;
        const double fm = f();
        x.data()[i] = orig;
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

inline double rel_err(double a, double b) {
    const double scale = std::max({1.0, std::abs(a), std::abs(b)});
    return std::abs(a - b) / scale;
}

inline void require_grads_close(const std::vector<double>& analytic,
                                const std::vector<double>& numeric, double tol) {
    REQUIRE(analytic.size() == numeric.size());
    for (size_t i = 0; i < analytic.size(); ++i) {
        INFO("element " << i << ": analytic=" << analytic[i] << " numeric=" << numeric[i]);
        REQUIRE(rel_err(analytic[i], numeric[i]) <= tol);
    }
}

// Analytic gradient of scalar-valued fn w.r.t. each tensor in params.
inline std::vector<std::vector<double>> analytic_grads(std::vector<sytta::Tensor>& params,
                                                       const std::function<sytta::Tensor()>& fn) {
    for (auto& p : params) {
        p.mark_trainable();
        p.zero_grad();
    }
    sytta::Tape tape;
    sytta::TapeScope scope(tape);
    sytta::Tensor loss = fn();
    tape.backward(loss);
    std::vector<std::vector<double>> out;
    for (auto& p : params) out.push_back(p.grad());
    return out;
}

inline sytta::Tensor random_tensor(std::vector<int> shape, sytta::Rng& rng, double stddev = 1.0) {
    return sytta::Tensor::randn(std::move(shape), rng, stddev);
}

} // namespace sytta_test
