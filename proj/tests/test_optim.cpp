#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "scalpel/optim.hpp"
#include "scalpel/tensor.hpp"

using namespace scalpel;
using Catch::Approx;

TEST_CASE("first adam step moves by roughly lr in the gradient direction") {
    auto x = Tensor<double>::from({1}, {1.0}, true);
    AdamWConfig cfg;
    cfg.lr = 0.01;
    AdamW<double> opt({x}, cfg);
    x.grad()[0] = 0.5;  // any non-tiny gradient: mhat/sqrt(vhat) = sign(g)
    opt.step();
    CHECK(x.data()[0] == Approx(1.0 - 0.01).epsilon(1e-5));
}

TEST_CASE("two adam steps match an independent scalar recomputation") {
    auto x = Tensor<double>::from({1}, {2.0}, true);
    AdamWConfig cfg;
    cfg.lr = 0.1;
    cfg.beta1 = 0.9;
    cfg.beta2 = 0.999;
    cfg.eps = 1e-8;
    AdamW<double> opt({x}, cfg);

    // independent bookkeeping
    double theta = 2.0, m = 0.0, v = 0.0;
    const double g1 = 3.0, g2 = -1.0;
    auto adam = [&](double g, int t) {
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        const double mhat = m / (1.0 - std::pow(0.9, t));
        const double vhat = v / (1.0 - std::pow(0.999, t));
        theta -= 0.1 * mhat / (std::sqrt(vhat) + 1e-8);
    };

    x.grad()[0] = g1;
    opt.step();
    adam(g1, 1);
    CHECK(x.data()[0] == Approx(theta).margin(1e-14));

    x.zero_grad();
    x.grad()[0] = g2;
    opt.step();
    adam(g2, 2);
    CHECK(x.data()[0] == Approx(theta).margin(1e-14));
}

TEST_CASE("decoupled weight decay shrinks by exactly (1 - lr*wd) on a zero-grad step") {
    auto x = Tensor<double>::from({2}, {5.0, -3.0}, true);
    AdamWConfig cfg;
    cfg.lr = 0.01;
    cfg.weight_decay = 0.1;
    AdamW<double> opt({x}, cfg);
    opt.zero_grad();
    opt.step();
    const double factor = 1.0 - 0.01 * 0.1;
    REQUIRE(x.data()[0] == 5.0 * factor);
    REQUIRE(x.data()[1] == -3.0 * factor);
    // moments stayed zero, so a second zero-grad step shrinks again
    opt.zero_grad();
    opt.step();
    REQUIRE(x.data()[0] == 5.0 * factor * factor);
}

TEST_CASE("adamw minimizes a quadratic") {
    auto x = Tensor<double>::from({1}, {-4.0}, true);
    AdamWConfig cfg;
    cfg.lr = 0.05;
    AdamW<double> opt({x}, cfg);
    auto c = Tensor<double>::from({1}, {3.0});
    for (int i = 0; i < 1000; ++i) {
        opt.zero_grad();
        Tape<double> tp;
        auto d = sub(tp, x, c);
        auto loss = mul(tp, d, d);
        tp.backward(loss);
        opt.step();
    }
    CHECK(x.data()[0] == Approx(3.0).margin(1e-3));
}

TEST_CASE("global norm clip rescales only above the threshold") {
    auto a = Tensor<double>::from({1}, {0.0}, true);
    auto b = Tensor<double>::from({1}, {0.0}, true);
    a.grad()[0] = 3.0;
    b.grad()[0] = 4.0;
    std::vector<Tensor<double>> params{a, b};
    const double norm = clip_global_norm(params, 1.0);
    CHECK(norm == Approx(5.0));
    CHECK(a.grad()[0] == Approx(0.6));
    CHECK(b.grad()[0] == Approx(0.8));

    a.grad()[0] = 0.3;
    b.grad()[0] = 0.4;
    const double small = clip_global_norm(params, 1.0);
    CHECK(small == Approx(0.5));
    CHECK(a.grad()[0] == Approx(0.3));  // untouched below the threshold
}

TEST_CASE("optimizer rejects invalid setups") {
    auto x = Tensor<double>::from({1}, {1.0});
    REQUIRE_THROWS_AS(AdamW<double>({x}, AdamWConfig{}), ContractError);
    x.set_requires_grad(true);
    AdamWConfig bad;
    bad.lr = 0.0;
    REQUIRE_THROWS_AS(AdamW<double>({x}, bad), ConfigError);
    std::vector<Tensor<double>> params{x};
    REQUIRE_THROWS_AS(clip_global_norm(params, 0.0), ConfigError);
}
