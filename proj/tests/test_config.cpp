#include <doctest.h>

#include <sstream>

#include "c3/analysis.hpp"
#include "c3/config.hpp"

using namespace c3;

namespace {

const char* kC3ModuleConfig = R"({
  "input_shape": [1, 128, 128, 128],
  "precision": "single",
  "seed": 7,
  "nodes": [
    {"id": "in", "kind": "input"},
    {"id": "m0", "kind": "c3_module", "channels": 128, "dilations": [2, 4, 8, 16], "inputs": ["in"]},
    {"id": "out", "kind": "output", "inputs": ["m0"]}
  ]
})";

}  // namespace

TEST_CASE("shorthand expansion equals the builder graph node for node") {
    const ModelConfig mc = parse_config(kC3ModuleConfig);
    CHECK(same_structure(mc.plan, plan_c3_module(128, {2, 4, 8, 16})));
    CHECK(mc.seed == 7);
    CHECK(mc.input_shape == Shape{1, 128, 128, 128});

    const ModelConfig esp = parse_config(R"({
      "input_shape": [1, 128, 64, 64],
      "nodes": [
        {"id": "in", "kind": "input"},
        {"id": "e", "kind": "esp_module", "channels": 128, "inputs": ["in"]},
        {"id": "out", "kind": "output", "inputs": ["e"]}
      ]})");
    CHECK(same_structure(esp.plan, plan_esp_module(128, 5)));

    const ModelConfig blk = parse_config(R"({
      "input_shape": [1, 16, 32, 32],
      "nodes": [
        {"id": "in", "kind": "input"},
        {"id": "b", "kind": "c3_block", "channels": 16, "dilation": 4, "inputs": ["in"]},
        {"id": "out", "kind": "output", "inputs": ["b"]}
      ]})");
    CHECK(same_structure(blk.plan, plan_c3_block(16, 4)));
}

TEST_CASE("parse -> serialize -> parse round trip preserves the expanded graph") {
    const ModelConfig a = parse_config(kC3ModuleConfig);
    const std::string text = serialize_config(a);
    const ModelConfig b = parse_config(text);
    CHECK(same_structure(a.plan, b.plan));
    CHECK(a.input_shape == b.input_shape);
    CHECK(a.precision == b.precision);
    CHECK(a.seed == b.seed);
    // the canonical form is a fixed point
    CHECK(serialize_config(b) == text);
    // labels survive: component rows still group after the round trip
    const CostReport ra = count_flops(a.plan, 128, 128);
    const CostReport rb = count_flops(b.plan, 128, 128);
    CHECK(ra.total_flops == rb.total_flops);
    CHECK(ra.total_params == rb.total_params);
}

TEST_CASE("full-node config matches the equivalent builder") {
    const ModelConfig mc = parse_config(R"({
      "input_shape": [1, 8, 16, 16],
      "nodes": [
        {"id": "in", "kind": "input"},
        {"id": "dw", "kind": "depthwise_conv", "channels": 8, "kernel": 3, "dilation": 2, "inputs": ["in"]},
        {"id": "bn", "kind": "batchnorm", "channels": 8, "inputs": ["dw"]},
        {"id": "pw", "kind": "pointwise_conv", "in_channels": 8, "out_channels": 8, "inputs": ["bn"]},
        {"id": "out", "kind": "output", "inputs": ["pw"]}
      ]})");
    CHECK(same_structure(mc.plan, plan_ds_dilate_block(8, 2)));
    // default padding preserved the spatial extent
    const Graph<float> g = config_graph<float>(mc);
    CHECK(graph_forward(g, zeros<float>({1, 8, 16, 16})).shape() == Shape{1, 8, 16, 16});
}

TEST_CASE("config errors carry the offending node and field") {
    // unknown field
    CHECK_THROWS_WITH_AS(parse_config(R"({
      "input_shape": [1, 4, 8, 8],
      "nodes": [
        {"id": "in", "kind": "input"},
        {"id": "c", "kind": "pointwise_conv", "in_channels": 4, "out_channels": 4, "bias": true, "inputs": ["in"]},
        {"id": "out", "kind": "output", "inputs": ["c"]}
      ]})"),
                         doctest::Contains("unknown field \"bias\""), ConfigError);
    // unknown kind
    CHECK_THROWS_WITH_AS(parse_config(R"({
      "input_shape": [1, 4, 8, 8],
      "nodes": [
        {"id": "in", "kind": "input"},
        {"id": "c", "kind": "transposed_conv", "inputs": ["in"]},
        {"id": "out", "kind": "output", "inputs": ["c"]}
      ]})"),
                         doctest::Contains("unknown kind"), ConfigError);
    // dangling reference
    CHECK_THROWS_WITH_AS(parse_config(R"({
      "input_shape": [1, 4, 8, 8],
      "nodes": [
        {"id": "in", "kind": "input"},
        {"id": "out", "kind": "output", "inputs": ["ghost"]}
      ]})"),
                         doctest::Contains("unknown input node \"ghost\""), ConfigError);
    // duplicate id
    CHECK_THROWS_AS(parse_config(R"({
      "input_shape": [1, 4, 8, 8],
      "nodes": [
        {"id": "in", "kind": "input"},
        {"id": "in", "kind": "prelu", "channels": 4, "inputs": ["in"]},
        {"id": "out", "kind": "output", "inputs": ["in"]}
      ]})"),
                    ConfigError);
    // empty node list
    CHECK_THROWS_AS(parse_config(R"({"input_shape": [1, 4, 8, 8], "nodes": []})"), ConfigError);
    // malformed JSON
    CHECK_THROWS_AS(parse_config("{"), ConfigError);
    // top-level unknown key
    CHECK_THROWS_AS(parse_config(R"({"input_shape": [1,4,8,8], "nodes": [{"id":"in","kind":"input"}], "extra": 1})"),
                    ConfigError);
    // indivisible channel count surfaces through the shorthand
    CHECK_THROWS_WITH_AS(parse_config(R"({
      "input_shape": [1, 127, 8, 8],
      "nodes": [
        {"id": "in", "kind": "input"},
        {"id": "m", "kind": "c3_module", "channels": 127, "inputs": ["in"]},
        {"id": "out", "kind": "output", "inputs": ["m"]}
      ]})"),
                         doctest::Contains("not divisible"), ConfigError);
}

TEST_CASE("train-mode batch norm round trips through the config") {
    const ModelConfig mc = parse_config(R"({
      "input_shape": [1, 4, 8, 8],
      "nodes": [
        {"id": "in", "kind": "input"},
        {"id": "bn", "kind": "batchnorm", "channels": 4, "mode": "train", "inputs": ["in"]},
        {"id": "out", "kind": "output", "inputs": ["bn"]}
      ]})");
    CHECK(mc.plan.node(1).bn_train);
    const ModelConfig back = parse_config(serialize_config(mc));
    CHECK(back.plan.node(1).bn_train);
    // executable graphs refuse it
    CHECK_THROWS_AS(graph_forward(config_graph<float>(mc), zeros<float>({1, 4, 8, 8})), std::invalid_argument);
}

TEST_CASE("machine report totals equal the table totals") {
    const ModelConfig mc = parse_config(kC3ModuleConfig);
    const CostReport r = count_flops(mc.plan, 128, 128);
    std::ostringstream table, machine;
    emit_table(table, r);
    emit_machine(machine, r);
    CHECK(table.str().find("total: 13,568 params, 434.13M flops (434126848 exact)") != std::string::npos);
    // last machine record is the totals line
    std::string last;
    std::string line;
    std::istringstream in(machine.str());
    while (std::getline(in, line))
        if (!line.empty()) last = line;
    const auto j = nlohmann::json::parse(last);
    CHECK(j.at("params").get<int64_t>() == r.total_params);
    CHECK(j.at("flops_exact").get<int64_t>() == r.total_flops);
    CHECK(j.at("flops_formatted").get<std::string>() == "434.13");
    // every node line parses and sums to the totals
    int64_t params_sum = 0, flops_sum = 0;
    std::istringstream in2(machine.str());
    while (std::getline(in2, line)) {
        if (line.empty()) continue;
        const auto rec = nlohmann::json::parse(line);
        if (rec.at("id") == "total") continue;
        params_sum += rec.at("params").get<int64_t>();
        flops_sum += rec.at("flops_exact").get<int64_t>();
    }
    CHECK(params_sum == r.total_params);
    CHECK(flops_sum == r.total_flops);
}
