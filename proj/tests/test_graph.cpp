#include <doctest.h>

#include "c3/analysis.hpp"

using namespace c3;

namespace {

int find_node(const GraphPlan& g, const std::string& id) {
    for (int i = 0; i < g.size(); ++i)
        if (g.node(i).id == id) return i;
    FAIL("node not found: ", id);
    return -1;
}

int64_t conv_only_params(const GraphPlan& g) {
    int64_t total = 0;
    for (const auto& n : g.nodes)
        if (is_conv_family(n.kind)) total += n.spec.weight_count();
    return total;
}

template <typename T>
void zero_all_kernels(Graph<T>& g) {
    for (auto& p : g.params)
        for (int64_t i = 0; i < p.kernel.weights.size(); ++i) p.kernel.weights[i] = 0;
}

}  // namespace

TEST_CASE("ds-dilate block: conv parameter count and shape preservation") {
    const GraphPlan g = plan_ds_dilate_block(32, 2);
    CHECK(conv_only_params(g) == 1312);  // 9C + C^2 at C=32
    const Graph<float> m = materialize<float>(g, 1);
    const Tensor<float> x = random_init<float>({1, 32, 9, 9}, 2, 1);
    CHECK(graph_forward(m, x).shape() == x.shape());
}

TEST_CASE("ds-dilate block at d=1, C=1 with identity weights is a per-pixel affine map") {
    const GraphPlan plan = plan_ds_dilate_block(1, 1);
    Graph<double> g = materialize<double>(plan, 0);
    zero_all_kernels(g);
    // dw center tap 2, pw weight 3; bn shifts by 0.5 after scaling by 2
    g.params[static_cast<size_t>(find_node(plan, "dw"))].kernel.weights.at(0, 0, 1, 1) = 2.0;
    g.params[static_cast<size_t>(find_node(plan, "pw"))].kernel.weights.at(0, 0, 0, 0) = 3.0;
    auto& bn = g.params[static_cast<size_t>(find_node(plan, "bn"))].bn;
    bn.gamma = {2.0};
    bn.beta = {0.5};
    bn.eps = 1e-12;
    const Tensor<double> x = random_init<double>({1, 1, 5, 5}, 3, 1);
    const Tensor<double> y = graph_forward(g, x);
    for (int64_t i = 0; i < x.size(); ++i) CHECK(y[i] == doctest::Approx(3.0 * (2.0 * (2.0 * x[i]) + 0.5)).epsilon(1e-9));
}

TEST_CASE("rc3 block: concentration stage size and degenerate d=1") {
    const GraphPlan g = plan_rc3_block(128, 16);
    const int conc = find_node(g, "conc");
    CHECK(g.node(conc).spec.kernel_h == 31);
    CHECK(g.node(conc).spec.weight_count() == 123008);  // (2d-1)^2 * C
    // concentration FLOPs on an H x W map: 2*(2d-1)^2*H*W*C
    const CostReport r = count_flops(g, 16, 16);
    CHECK(r.rows[static_cast<size_t>(conc)].flops == 2 * 31 * 31 * 16 * 16 * 128);

    const GraphPlan g1 = plan_rc3_block(8, 1);
    CHECK(g1.node(find_node(g1, "conc")).spec.kernel_h == 1);  // 1x1 depthwise
}

TEST_CASE("c3 block: conv-only and full parameter closed forms") {
    const int64_t c = 32;
    int64_t conv_sum = 0, full_sum = 0;
    const int64_t expected_conv[] = {1504, 1760, 2272, 3296};
    int idx = 0;
    for (int64_t d : {2, 4, 8, 16}) {
        const GraphPlan g = plan_c3_block(c, d);
        const int64_t conv_params = conv_only_params(g);
        CHECK(conv_params == c * (2 * (2 * d - 1) + 9 + c));
        CHECK(conv_params == expected_conv[idx++]);
        conv_sum += conv_params;
        const int64_t total = count_params(g).total_params;
        CHECK(total == conv_params + 160);  // 2 BN (2C each) + 1 PReLU (C) at C=32
        full_sum += total;
    }
    CHECK(conv_sum == 8832);
    CHECK(full_sum == 9472);
}

TEST_CASE("c3 block at d=1 degenerates to 1x1 asymmetric kernels") {
    const GraphPlan g = plan_c3_block(8, 1);
    CHECK(g.node(find_node(g, "row")).spec.kernel_w == 1);
    CHECK(g.node(find_node(g, "col")).spec.kernel_h == 1);
    const Graph<double> m = materialize<double>(g, 4);
    const Tensor<double> x = random_init<double>({1, 8, 6, 6}, 5, 1);
    CHECK(graph_forward(m, x).shape() == x.shape());
}

TEST_CASE("esp module: channel split, row sizes and executable forward") {
    const GraphPlan g = plan_esp_module(128, 5);
    // branch output channels 25,25,25,25,28 with the remainder on the last branch
    const int64_t expect_co[] = {25, 25, 25, 25, 28};
    for (int b = 0; b < 5; ++b) {
        const PlanNode& n = g.node(find_node(g, "b" + std::to_string(b + 1)));
        CHECK(n.spec.out_channels == expect_co[b]);
        CHECK(n.spec.dilation == (int64_t(1) << b));
        CHECK(n.spec.groups == 1);  // standard convs, not depthwise
    }
    const CostReport r = count_params(g);
    int64_t a = 0, b = 0;
    for (const auto& row : r.rows) {
        if (row.component == "A") a += row.params;
        if (row.component == "B") b += row.params;
    }
    CHECK(a == 3200);
    CHECK(b == 28800);
    CHECK(r.total_params == 32000);

    const Graph<float> m = materialize<float>(g, 9);
    const Tensor<float> x = random_init<float>({1, 128, 12, 12}, 10, 1);
    CHECK(graph_forward(m, x).shape() == x.shape());

    CHECK_THROWS_AS(plan_esp_module(3, 5), std::invalid_argument);
}

TEST_CASE("esp module remainder placement is configurable without changing the row sizes") {
    const GraphPlan g = plan_esp_module(128, 5, 0);  // remainder on the dilation-1 branch
    CHECK(g.node(find_node(g, "b1")).spec.out_channels == 28);
    CHECK(g.node(find_node(g, "b5")).spec.out_channels == 25);
    int64_t b = 0;
    for (const auto& row : count_params(g).rows)
        if (row.component == "B") b += row.params;
    CHECK(b == 28800);  // the row only constrains the channel sum
    const Graph<double> m = materialize<double>(g, 30);
    const Tensor<double> x = random_init<double>({1, 128, 8, 8}, 31, 1);
    CHECK(graph_forward(m, x).shape() == x.shape());
    CHECK_THROWS_AS(plan_esp_module(128, 5, 5), std::invalid_argument);
}

TEST_CASE("c3 module: reduce stage, totals and shape identity") {
    const GraphPlan g = plan_c3_module(128, {2, 4, 8, 16});
    CHECK(g.node(find_node(g, "reduce")).spec.weight_count() == 4096);
    CHECK(count_params(g).total_params == 13568);

    const Graph<float> m = materialize<float>(g, 11);
    const Tensor<float> x = random_init<float>({2, 128, 10, 10}, 12, 1);
    CHECK(graph_forward(m, x).shape() == x.shape());

    CHECK_THROWS_AS(plan_c3_module(127, {2, 4, 8, 16}), std::invalid_argument);
}

TEST_CASE("c3 module keeps its channel count for any schedule length dividing C") {
    std::mt19937_64 rng(77);
    for (int iter = 0; iter < 8; ++iter) {
        const int64_t len = 1 + static_cast<int64_t>(rng() % 4);
        std::vector<int64_t> rates;
        for (int64_t i = 0; i < len; ++i) rates.push_back(1 + static_cast<int64_t>(rng() % 6));
        const int64_t c = len * (1 + static_cast<int64_t>(rng() % 4));
        const GraphPlan plan = plan_c3_module(c, rates);
        const auto shapes = plan.infer_shapes(Shape{1, c, 12, 12});
        CHECK(shapes[static_cast<size_t>(plan.output)] == Shape{1, c, 12, 12});
    }
}

TEST_CASE("every builder preserves the input shape through the forward pass") {
    const Tensor<double> x = random_init<double>({1, 12, 11, 13}, 13, 1);
    for (const GraphPlan& plan : {plan_ds_dilate_block(12, 3), plan_rc3_block(12, 3), plan_c3_block(12, 3),
                                  plan_std_dilated(12, 5), plan_esp_module(12, 5), plan_c3_module(12, {2, 3})}) {
        const Graph<double> g = materialize<double>(plan, 14);
        CHECK(graph_forward(g, x).shape() == x.shape());
    }
}

TEST_CASE("hff_sum basics") {
    const Shape s{1, 3, 4, 4};
    SUBCASE("all-zero branches stay zero") {
        const auto outs = hff_sum<double>({zeros<double>(s), zeros<double>(s), zeros<double>(s)});
        for (const auto& o : outs)
            for (int64_t i = 0; i < o.size(); ++i) CHECK(o[i] == 0.0);
    }
    SUBCASE("two branches give (a, a+b)") {
        const Tensor<double> a = random_init<double>(s, 21, 1);
        const Tensor<double> b = random_init<double>(s, 22, 1);
        const auto outs = hff_sum<double>({a, b});
        REQUIRE(outs.size() == 2);
        CHECK(max_abs_diff(outs[0], a) == 0.0);
        CHECK(max_abs_diff(outs[1], add(a, b)) == 0.0);
    }
    SUBCASE("five branches accumulate to the total sum") {
        std::vector<Tensor<double>> branches;
        for (int i = 0; i < 5; ++i) branches.push_back(random_init<double>(s, 30 + static_cast<uint64_t>(i), 1));
        const auto outs = hff_sum(branches);
        Tensor<double> want = zeros<double>(s);
        for (const auto& b : branches)
            for (int64_t i = 0; i < want.size(); ++i) want[i] += b[i];
        CHECK(max_abs_diff(outs.back(), want) < 1e-12);
    }
    SUBCASE("shape mismatch and empty list are rejected") {
        CHECK_THROWS_AS(hff_sum<double>({}), std::invalid_argument);
        CHECK_THROWS_AS(hff_sum<double>({zeros<double>(s), zeros<double>({1, 4, 4, 4})}), std::invalid_argument);
    }
}

TEST_CASE("hff_sum is linear in its branches") {
    const Shape s{1, 2, 3, 3};
    std::vector<Tensor<double>> branches, scaled;
    const double k = -2.5;
    for (int i = 0; i < 4; ++i) {
        branches.push_back(random_init<double>(s, 40 + static_cast<uint64_t>(i), 1));
        Tensor<double> sc(s);
        for (int64_t j = 0; j < sc.size(); ++j) sc[j] = k * branches.back()[j];
        scaled.push_back(sc);
    }
    const auto a = hff_sum(branches);
    const auto b = hff_sum(scaled);
    for (size_t i = 0; i < a.size(); ++i)
        for (int64_t j = 0; j < a[i].size(); ++j) CHECK(b[i][j] == doctest::Approx(k * a[i][j]).epsilon(1e-12));
}

TEST_CASE("graph of a single identity pointwise conv passes the input through") {
    GraphPlan g;
    PlanNode in;
    in.kind = NodeKind::Input;
    in.id = "in";
    const int i = g.add(in);
    const int pw = g.add(detail::conv_node(NodeKind::PointwiseConv, "pw", ConvSpec::pointwise(3, 3), i));
    PlanNode out;
    out.kind = NodeKind::Output;
    out.id = "out";
    out.inputs = {pw};
    g.add(out);
    g.finalize();
    Graph<double> m = materialize<double>(g, 0);
    zero_all_kernels(m);
    for (int64_t c = 0; c < 3; ++c) m.params[static_cast<size_t>(pw)].kernel.weights.at(c, c, 0, 0) = 1.0;
    const Tensor<double> x = random_init<double>({1, 3, 5, 5}, 50, 1);
    CHECK(max_abs_diff(graph_forward(m, x), x) == 0.0);
}

TEST_CASE("zeroed c3 module reduces to its skip connection") {
    Graph<double> g = materialize<double>(plan_c3_module(8, {2, 3}), 17);
    zero_all_kernels(g);  // batch norms stay identity-frozen, beta = 0
    const Tensor<double> x = random_init<double>({1, 8, 7, 7}, 18, 1);
    CHECK(max_abs_diff(graph_forward(g, x), x) == 0.0);
}

TEST_CASE("c3 block graph equals the hand-chained primitive calls") {
    const GraphPlan plan = plan_c3_block(6, 3);
    const Graph<double> g = materialize<double>(plan, 19);
    const Tensor<double> x = random_init<double>({1, 6, 9, 9}, 20, 1);
    const Tensor<double> got = graph_forward(g, x);

    auto P = [&](const char* id) -> const NodeParams<double>& {
        return g.params[static_cast<size_t>(find_node(plan, id))];
    };
    auto S = [&](const char* id) { return plan.node(find_node(plan, id)).spec; };
    Tensor<double> t = depthwise_dilated_forward(x, P("row").kernel, S("row"));
    t = batchnorm_forward(t, P("bn1").bn);
    t = prelu_forward(t, P("act").prelu);
    t = depthwise_dilated_forward(t, P("col").kernel, S("col"));
    t = depthwise_dilated_forward(t, P("dw").kernel, S("dw"));
    t = batchnorm_forward(t, P("bn2").bn);
    t = pointwise_forward(t, P("pw").kernel, S("pw"));
    CHECK(max_abs_diff(got, t) < 1e-12);
}

TEST_CASE("graph_backward: zero upstream gradient zeroes everything") {
    const Graph<double> g = materialize<double>(plan_c3_block(4, 2), 23);
    const Tensor<double> x = random_init<double>({1, 4, 8, 8}, 24, 1);
    const GraphGradients<double> grads = graph_backward(g, x, zeros<double>(x.shape()));
    for (int64_t i = 0; i < grads.d_input.size(); ++i) CHECK(grads.d_input[i] == 0.0);
    for (const auto& dk : grads.d_kernel)
        for (int64_t i = 0; i < dk.size(); ++i) CHECK(dk[i] == 0.0);
}

TEST_CASE("skip connection passes the upstream gradient straight to the input") {
    Graph<double> g = materialize<double>(plan_c3_module(8, {2, 3}), 25);
    zero_all_kernels(g);  // branch contributions vanish, the add adjoint remains
    const Tensor<double> x = random_init<double>({1, 8, 6, 6}, 26, 1);
    const Tensor<double> dout = random_init<double>(x.shape(), 27, 1);
    const GraphGradients<double> grads = graph_backward(g, x, dout);
    CHECK(max_abs_diff(grads.d_input, dout) == 0.0);
}

TEST_CASE("graph executor rejects cost-only node kinds and train-mode batch norm") {
    GraphPlan g;
    PlanNode in;
    in.kind = NodeKind::Input;
    in.id = "in";
    const int i = g.add(in);
    PlanNode bn;
    bn.kind = NodeKind::BatchNorm;
    bn.id = "bn";
    bn.channels = 2;
    bn.bn_train = true;
    bn.inputs = {i};
    const int b = g.add(bn);
    PlanNode out;
    out.kind = NodeKind::Output;
    out.id = "out";
    out.inputs = {b};
    g.add(out);
    g.finalize();
    const Graph<float> m = materialize<float>(g, 0);
    const Tensor<float> x = zeros<float>({1, 2, 3, 3});
    CHECK_THROWS_AS(graph_forward(m, x), std::invalid_argument);
    CHECK_THROWS_AS(graph_backward(m, x, x), std::invalid_argument);

    GraphPlan g2;
    PlanNode in2;
    in2.kind = NodeKind::Input;
    in2.id = "in";
    const int i2 = g2.add(in2);
    PlanNode pool;
    pool.kind = NodeKind::AvgPool;
    pool.id = "pool";
    pool.spec.kernel_h = pool.spec.kernel_w = 2;
    pool.spec.stride = 2;
    pool.inputs = {i2};
    const int p2 = g2.add(pool);
    PlanNode out2;
    out2.kind = NodeKind::Output;
    out2.id = "out";
    out2.inputs = {p2};
    g2.add(out2);
    g2.finalize();
    const Graph<float> m2 = materialize<float>(g2, 0);
    CHECK_THROWS_AS(graph_forward(m2, zeros<float>({1, 2, 4, 4})), std::invalid_argument);
}

TEST_CASE("graph wiring validation") {
    GraphPlan g;
    PlanNode in;
    in.kind = NodeKind::Input;
    in.id = "in";
    g.add(in);
    CHECK_THROWS_AS(g.finalize(), std::invalid_argument);  // no output

    GraphPlan dangling;
    PlanNode i2;
    i2.kind = NodeKind::Input;
    i2.id = "in";
    const int ii = dangling.add(i2);
    PlanNode orphan = detail::conv_node(NodeKind::PointwiseConv, "orphan", ConvSpec::pointwise(2, 2), ii);
    dangling.add(orphan);
    PlanNode o2;
    o2.kind = NodeKind::Output;
    o2.id = "out";
    o2.inputs = {ii};
    dangling.add(o2);
    CHECK_THROWS_AS(dangling.finalize(), std::invalid_argument);  // orphan never reaches the output
}
