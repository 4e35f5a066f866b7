#include <doctest.h>

#include "c3/norm_act.hpp"

using namespace c3;

TEST_CASE("frozen batchnorm with identity statistics is nearly the identity") {
    const Tensor<double> x = random_init<double>({2, 3, 4, 4}, 1, 1);
    const auto p = BatchNormParams<double>::identity(3);  // eps 1e-5
    const Tensor<double> y = batchnorm_forward(x, p);
    CHECK(max_abs_diff(x, y) < 1e-5);
}

TEST_CASE("gamma zero collapses frozen batchnorm to the constant beta") {
    const Tensor<double> x = random_init<double>({1, 2, 5, 5}, 2, 1);
    auto p = BatchNormParams<double>::identity(2);
    p.gamma = {0.0, 0.0};
    p.beta = {0.5, -0.25};
    const Tensor<double> y = batchnorm_forward(x, p);
    for (int64_t i = 0; i < 25; ++i) {
        CHECK(y[i] == 0.5);
        CHECK(y[25 + i] == -0.25);
    }
}

TEST_CASE("train-mode batchnorm on constant input emits beta and updates running stats") {
    const Tensor<double> x = full<double>({2, 2, 4, 4}, 3.0);
    auto p = BatchNormParams<double>::identity(2);
    p.beta = {1.0, -1.0};
    const Tensor<double> y = batchnorm_forward_train(x, p, 0.1);
    for (int64_t n = 0; n < 2; ++n)
        for (int64_t h = 0; h < 4; ++h)
            for (int64_t w = 0; w < 4; ++w) {
                CHECK(y.at(n, 0, h, w) == doctest::Approx(1.0).epsilon(1e-9));
                CHECK(y.at(n, 1, h, w) == doctest::Approx(-1.0).epsilon(1e-9));
            }
    // running 0.9*old + 0.1*batch: mean 0 -> 0.3, var 1 -> 0.9
    CHECK(p.running_mean[0] == doctest::Approx(0.3));
    CHECK(p.running_var[0] == doctest::Approx(0.9));
}

TEST_CASE("batchnorm validates parameter lengths") {
    const Tensor<double> x = zeros<double>({1, 3, 2, 2});
    const auto p = BatchNormParams<double>::identity(2);
    CHECK_THROWS_AS(batchnorm_forward(x, p), std::invalid_argument);
    CHECK_THROWS_AS(batchnorm_backward_frozen(x, p), std::invalid_argument);
}

TEST_CASE("frozen batchnorm backward scales by gamma over std") {
    const Tensor<double> dout = random_init<double>({1, 2, 3, 3}, 3, 1);
    auto p = BatchNormParams<double>::identity(2);
    SUBCASE("identity stats pass the gradient through") {
        const Tensor<double> din = batchnorm_backward_frozen(dout, p);
        CHECK(max_abs_diff(din, dout) < 1e-5);
    }
    SUBCASE("zero gamma kills the gradient") {
        p.gamma = {0.0, 0.0};
        const Tensor<double> din = batchnorm_backward_frozen(dout, p);
        for (int64_t i = 0; i < din.size(); ++i) CHECK(din[i] == 0.0);
    }
}

TEST_CASE("frozen batchnorm backward matches finite differences") {
    std::mt19937_64 rng(11);
    auto p = BatchNormParams<double>::identity(3);
    p.gamma = {0.7, -1.3, 2.1};
    p.running_mean = {0.2, -0.4, 0.0};
    p.running_var = {1.5, 0.3, 2.0};
    const Tensor<double> x = random_init<double>({1, 3, 4, 4}, rng(), 1);
    const Tensor<double> dout = random_init<double>(x.shape(), rng(), 1);
    const Tensor<double> din = batchnorm_backward_frozen(dout, p);
    const Tensor<double> v = random_init<double>(x.shape(), rng(), 1);
    double analytic = 0.0;
    for (int64_t i = 0; i < v.size(); ++i) analytic += din[i] * v[i];
    const double h = 1e-6;
    auto objective = [&](double dir) {
        Tensor<double> xs(x.shape());
        for (int64_t i = 0; i < xs.size(); ++i) xs[i] = x[i] + dir * h * v[i];
        const Tensor<double> y = batchnorm_forward(xs, p);
        double j = 0.0;
        for (int64_t i = 0; i < y.size(); ++i) j += dout[i] * y[i];
        return j;
    };
    const double numeric = (objective(1.0) - objective(-1.0)) / (2.0 * h);
    CHECK(std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric)) < 1e-8);
}

TEST_CASE("prelu forward basics") {
    const Tensor<double> pos = full<double>({1, 2, 3, 3}, 0.5);
    const auto quarter = PReLUParams<double>::filled(2, 0.25);
    CHECK(max_abs_diff(prelu_forward(pos, quarter), pos) == 0.0);

    const Tensor<double> x = random_init<double>({1, 2, 4, 4}, 21, 1);
    const auto one = PReLUParams<double>::filled(2, 1.0);
    CHECK(max_abs_diff(prelu_forward(x, one), x) == 0.0);

    Tensor<double> neg = full<double>({1, 1, 2, 2}, -2.0);
    const auto p = PReLUParams<double>::filled(1, 0.25);
    const Tensor<double> y = prelu_forward(neg, p);
    for (int64_t i = 0; i < y.size(); ++i) CHECK(y[i] == -0.5);
}

TEST_CASE("prelu validates slope length") {
    const Tensor<double> x = zeros<double>({1, 3, 2, 2});
    const auto p = PReLUParams<double>::filled(2, 0.25);
    CHECK_THROWS_AS(prelu_forward(x, p), std::invalid_argument);
}

TEST_CASE("prelu backward matches finite differences away from the kink") {
    std::mt19937_64 rng(31);
    const auto p = PReLUParams<double>::filled(3, 0.2);
    Tensor<double> x = random_init<double>({1, 3, 5, 5}, rng(), 1);
    for (int64_t i = 0; i < x.size(); ++i)
        if (std::abs(x[i]) < 0.05) x[i] = x[i] < 0 ? -0.05 : 0.05;  // keep clear of x == 0
    const Tensor<double> dout = random_init<double>(x.shape(), rng(), 1);
    const PReLUGrads<double> g = prelu_backward(x, p, dout);

    const Tensor<double> vx = random_init<double>(x.shape(), rng(), 1);
    std::vector<double> vs = {0.3, -0.8, 0.1};
    double analytic = 0.0;
    for (int64_t i = 0; i < vx.size(); ++i) analytic += g.d_input[i] * vx[i];
    for (size_t c = 0; c < vs.size(); ++c) analytic += g.d_slope[c] * vs[c];
    const double h = 1e-6;
    auto objective = [&](double dir) {
        Tensor<double> xs(x.shape());
        for (int64_t i = 0; i < xs.size(); ++i) xs[i] = x[i] + dir * h * vx[i];
        PReLUParams<double> ps = p;
        for (size_t c = 0; c < vs.size(); ++c) ps.slope[c] += dir * h * vs[c];
        const Tensor<double> y = prelu_forward(xs, ps);
        double j = 0.0;
        for (int64_t i = 0; i < y.size(); ++i) j += dout[i] * y[i];
        return j;
    };
    const double numeric = (objective(1.0) - objective(-1.0)) / (2.0 * h);
    CHECK(std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric)) < 1e-8);
}

TEST_CASE("prelu assigns the x == 0 tie to the positive branch") {
    Tensor<double> x = zeros<double>({1, 1, 1, 2});
    x[1] = -1.0;
    const auto p = PReLUParams<double>::filled(1, 0.25);
    const Tensor<double> dout = full<double>(x.shape(), 1.0);
    const PReLUGrads<double> g = prelu_backward(x, p, dout);
    CHECK(g.d_input[0] == 1.0);   // tie: factor 1
    CHECK(g.d_input[1] == 0.25);  // negative side: slope
    CHECK(g.d_slope[0] == -1.0);  // only the x < 0 element contributes
}
