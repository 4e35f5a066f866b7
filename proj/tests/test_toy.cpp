#include <doctest.h>

#include "c3/toy.hpp"

using namespace c3;

TEST_CASE("toy dataset is deterministic and labels mirror the rectangles") {
    const ToyData a = toy_dataset(0);
    const ToyData b = toy_dataset(0);
    CHECK(max_abs_diff(a.images, b.images) == 0.0);
    CHECK(a.labels == b.labels);
    const Shape& s = a.images.shape();
    int64_t inside = 0;
    for (int64_t n = 0; n < s.n; ++n)
        for (int64_t h = 0; h < s.h; ++h)
            for (int64_t w = 0; w < s.w; ++w) {
                const int label = a.labels[static_cast<size_t>((n * s.h + h) * s.w + w)];
                CHECK(a.images.at(n, 0, h, w) == (label ? 1.0 : -1.0));
                inside += label;
            }
    CHECK(inside > 0);
    CHECK(inside < s.n * s.h * s.w);
}

TEST_CASE("toy net wires up and maps 1 channel to 2 logit planes") {
    const GraphPlan plan = plan_toy_net();
    const Graph<double> g = materialize<double>(plan, 3);
    const Tensor<double> x = zeros<double>({2, 1, 32, 32});
    CHECK(graph_forward(g, x).shape() == Shape{2, 2, 32, 32});
}

TEST_CASE("softmax cross entropy at zero logits is ln 2 with a balanced gradient") {
    const Tensor<double> logits = zeros<double>({1, 2, 2, 2});
    const std::vector<int> labels = {0, 1, 0, 1};
    const SoftmaxCE ce = softmax_cross_entropy(logits, labels);
    CHECK(ce.loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    for (int64_t h = 0; h < 2; ++h)
        for (int64_t w = 0; w < 2; ++w) {
            const int label = labels[static_cast<size_t>(h * 2 + w)];
            CHECK(ce.d_logits.at(0, label, h, w) == doctest::Approx(-0.5 / 4.0));
            CHECK(ce.d_logits.at(0, 1 - label, h, w) == doctest::Approx(0.5 / 4.0));
        }
}

TEST_CASE("initial toy loss sits near the uniform-predictor baseline") {
    const ToyTrainResult r = train_toy(0, 0);
    REQUIRE(r.losses.size() == 1);
    CHECK(std::abs(r.losses.front() - std::log(2.0)) < 0.2);
}

TEST_CASE("a short toy run is bit-reproducible and reduces the loss") {
    const ToyTrainResult a = train_toy(5, 0);
    const ToyTrainResult b = train_toy(5, 0);
    REQUIRE(a.losses.size() == 6);
    REQUIRE(a.losses.size() == b.losses.size());
    for (size_t i = 0; i < a.losses.size(); ++i) CHECK(a.losses[i] == b.losses[i]);  // bitwise
    CHECK(a.losses.back() < a.losses.front());
}
