// Copyright (c) 2026, the sytta authors
// SPDX-License-Identifier: Apache-2.0

#include "testutil.hpp"

#include "sytta/tensor.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

using namespace sytta;
using sytta_test::analytic_grads;
using sytta_test::finite_diff_grad;
using sytta_test::require_grads_close;

TEST_CASE("matmul identity and hand arithmetic") {
    Tensor eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    Tensor m = Tensor::from_data({2, 2}, {3.5, -1, 2, 7});
    Tensor r = matmul(eye, m);
    for (int64_t i = 0; i < 4; ++i) REQUIRE(r.data()[i] == m.data()[i]);

    Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    Tensor b = Tensor::from_data({2, 1}, {0, 1});
    Tensor c = matmul(a, b);
    REQUIRE(c.at(0, 0) == 2.0);
    REQUIRE(c.at(1, 0) == 4.0);
}

TEST_CASE("matmul rejects mismatched inner dims") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({2, 3});
    REQUIRE_THROWS_AS(matmul(a, b), DimensionError);
}

TEST_CASE("matmul gradient matches finite differences") {
    Rng rng(7);
    Tensor a = Tensor::randn({3, 4}, rng);
    Tensor b = Tensor::randn({4, 2}, rng);
    std::vector<Tensor> params{a, b};
    auto grads = analytic_grads(params, [&] { return sum(matmul(a, b)); });
    auto fd_a = finite_diff_grad(a, [&] { return sum(matmul(a, b)).item(); });
    auto fd_b = finite_diff_grad(b, [&] { return sum(matmul(a, b)).item(); });
    require_grads_close(grads[0], fd_a, 1e-6);
    require_grads_close(grads[1], fd_b, 1e-6);
}

TEST_CASE("softmax basics") {
    Tensor x = Tensor::from_data({4}, {0, 0, 0, 0});
    Tensor y = softmax(x);
    for (int64_t i = 0; i < 4; ++i) REQUIRE(y.data()[i] == Catch::Approx(0.25));

    Tensor big = Tensor::from_data({2}, {1000.0, 0.0});
    Tensor yb = softmax(big);
    REQUIRE(yb.all_finite());
    REQUIRE(yb.data()[0] == Catch::Approx(1.0));
    REQUIRE(yb.data()[1] < 1e-300);
}

TEST_CASE("softmax rows sum to one") {
    Rng rng(11);
    for (int t = 0; t < 20; ++t) {
        Tensor x = Tensor::randn({5, 9}, rng, 3.0);
        Tensor y = softmax(x);
        for (int i = 0; i < 5; ++i) {
            double s = 0.0;
            for (int j = 0; j < 9; ++j) s += y.at(i, j);
            REQUIRE(std::abs(s - 1.0) <= 1e-12);
        }
    }
}

TEST_CASE("softmax jacobian-vector product matches finite differences") {
    Rng rng(13);
    Tensor x = Tensor::randn({3, 6}, rng);
    Tensor w = Tensor::randn({3, 6}, rng); // fixed projection vector
    std::vector<Tensor> params{x};
    auto grads = analytic_grads(params, [&] { return sum(mul(softmax(x), w)); });
    auto fd = finite_diff_grad(x, [&] { return sum(mul(softmax(x), w)).item(); });
    require_grads_close(grads[0], fd, 1e-6);
}

TEST_CASE("every differentiable op passes the finite-difference oracle") {
    Rng rng(101);
    const double tol = 1e-4;
    int checked = 0;

    auto check = [&](Tensor& x, const std::function<Tensor()>& fn) {
        std::vector<Tensor> params{x};
        auto grads = analytic_grads(params, fn);
        auto fd = finite_diff_grad(x, [&] { return fn().item(); });
        require_grads_close(grads[0], fd, tol);
        ++checked;
    };

    for (int t = 0; t < 10; ++t) {
        Tensor w = Tensor::randn({4, 5}, rng);

        Tensor x1 = Tensor::randn({4, 5}, rng);
        check(x1, [&] { return sum(mul(log_softmax(x1), w)); });

        Tensor x2 = Tensor::randn({4, 5}, rng);
        check(x2, [&] { return sum(mul(softmax(x2), w)); });

        Tensor x3 = Tensor::randn({4, 5}, rng);
        check(x3, [&] { return sum(mul(gelu(x3), w)); });

        Tensor x4 = Tensor::randn({4, 5}, rng, 0.5);
        check(x4, [&] { return sum(mul(sytta::exp(x4), w)); });

        Tensor x5 = Tensor::randn({4, 5}, rng);
        Tensor g = Tensor::randn({5}, rng);
        Tensor b = Tensor::randn({5}, rng);
        check(x5, [&] { return sum(mul(layer_norm(x5, g, b), w)); });
        check(g, [&] { return sum(mul(layer_norm(x5, g, b), w)); });
        check(b, [&] { return sum(mul(layer_norm(x5, g, b), w)); });

        Tensor x6 = Tensor::randn({4, 4}, rng);
        Tensor w6 = Tensor::randn({4, 4}, rng);
        check(x6, [&] { return sum(mul(causal_softmax(x6), w6)); });

        Tensor x7 = Tensor::randn({4, 5}, rng);
        check(x7, [&] { return mean(x7); });
        Tensor x8 = Tensor::randn({4, 5}, rng);
        check(x8, [&] { return sum(mul(transpose(x8), transpose(w))); });

        Tensor x9 = Tensor::randn({4, 5}, rng);
        std::vector<int> ids{3, 0, 4, 1};
        check(x9, [&] { return sum(gather(x9, ids)); });

        Tensor x10 = Tensor::randn({4, 5}, rng);
        std::vector<int> targets{1, 2, 0, 4};
        check(x10, [&] { return cross_entropy(x10, targets); });

        Tensor x11 = Tensor::randn({4, 5}, rng);
        check(x11, [&] { return sum(mul(slice_rows(x11, 1, 2), slice_rows(w, 1, 2))); });
        Tensor x12 = Tensor::randn({4, 5}, rng);
        check(x12, [&] { return sum(mul(slice_cols(x12, 1, 3), slice_cols(w, 1, 3))); });

        Tensor x13 = Tensor::randn({4, 2}, rng);
        Tensor x14 = Tensor::randn({4, 3}, rng);
        check(x13, [&] { return sum(mul(concat_cols({x13, x14}), w)); });

        Tensor emb = Tensor::randn({6, 3}, rng);
        std::vector<int> toks{2, 5, 2, 0};
        check(emb, [&] { return sum(embedding_lookup(emb, toks)); });

        Tensor xa = Tensor::randn({4, 5}, rng);
        Tensor xb = Tensor::randn({4, 5}, rng);
        check(xa, [&] { return sum(mul(add(xa, xb), w)); });
        check(xb, [&] { return sum(mul(sub(xa, xb), w)); });
        check(xa, [&] { return sum(mul(mul(xa, xb), w)); });
        check(xa, [&] { return sum(scale(xa, -1.7)); });
    }
    REQUIRE(checked >= 100);
}

TEST_CASE("tensor used twice accumulates both gradient paths") {
    Rng rng(23);
    Tensor x = Tensor::randn({3, 3}, rng);
    std::vector<Tensor> params{x};
    auto grads = analytic_grads(params, [&] { return sum(matmul(x, x)); });

    // Duplicated-input oracle: finite-difference through f(u) = sum(u*u)
    // perturbing the single shared input.
    auto fd = finite_diff_grad(x, [&] { return sum(matmul(x, x)).item(); });
    require_grads_close(grads[0], fd, 1e-6);

    // and through an explicit elementwise reuse
    Tensor y = Tensor::randn({4}, rng);
    std::vector<Tensor> params2{y};
    auto g2 = analytic_grads(params2, [&] { return sum(mul(y, y)); });
    for (size_t i = 0; i < 4; ++i) REQUIRE(g2[0][i] == Catch::Approx(2.0 * y.data()[i]));
}

TEST_CASE("tape replays in reverse creation order exactly once") {
    Rng rng(31);
    Tensor x = Tensor::randn({2, 2}, rng);
    x.mark_trainable();
    Tape tape;
    {
        TapeScope scope(tape);
        Tensor a = scale(x, 2.0);
        Tensor b = add(a, x);
        Tensor loss = sum(b);
        REQUIRE(tape.node_count() == 3);
        // recorded order is creation order, i.e. topological by construction
        const auto& nodes = tape.nodes();
        REQUIRE(nodes[0].get() == a.node().get());
        REQUIRE(nodes[1].get() == b.node().get());
        REQUIRE(nodes[2].get() == loss.node().get());
        tape.backward(loss);
        REQUIRE_THROWS_AS(tape.backward(loss), InvariantError);
    }
    // d(sum(2x + x))/dx = 3
    for (double g : x.grad()) REQUIRE(g == Catch::Approx(3.0));
}

TEST_CASE("no recording happens without an active tape or trainable input") {
    Rng rng(37);
    Tensor x = Tensor::randn({3, 3}, rng);
    {
        Tape tape;
        TapeScope scope(tape);
        Tensor y = matmul(x, x); // x not trainable: nothing recorded
        REQUIRE(tape.node_count() == 0);
        REQUIRE(!y.requires_grad());
    }
    x.mark_trainable();
    {
        Tape tape;
        TapeScope scope(tape);
        NoGradGuard guard;
        Tensor y = matmul(x, x);
        REQUIRE(tape.node_count() == 0);
        REQUIRE(!y.requires_grad());
    }
}

TEST_CASE("forward values stay finite on finite inputs") {
    Rng rng(41);
    for (int t = 0; t < 25; ++t) {
        Tensor x = Tensor::randn({3, 7}, rng, 50.0);
        REQUIRE(softmax(x).all_finite());
        REQUIRE(log_softmax(x).all_finite());
        REQUIRE(gelu(x).all_finite());
        Tensor g = Tensor::full({7}, 1.0);
        Tensor b = Tensor::zeros({7});
        REQUIRE(layer_norm(x, g, b).all_finite());
        REQUIRE(mean(x).all_finite());
    }
}

TEST_CASE("shape invariants") {
    REQUIRE_THROWS_AS(Tensor::from_data({2, 2}, {1.0, 2.0}), DimensionError);
    Tensor t = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    REQUIRE(t.size() == 6);
    REQUIRE_THROWS_AS(t.item(), DimensionError);
    REQUIRE_THROWS_AS(slice_rows(t, 1, 3), DimensionError);
    REQUIRE_THROWS_AS(gather(t, {0}), DimensionError);
}
