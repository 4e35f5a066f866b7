#pragma once

#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "c3/graph.hpp"

namespace c3 {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Precision { Single, Double };

inline Precision precision_from_name(const std::string& s) {
    if (s == "single") return Precision::Single;
    if (s == "double") return Precision::Double;
    throw ConfigError("config: precision must be \"single\" or \"double\", got \"" + s + "\"");
}

inline const char* precision_name(Precision p) { return p == Precision::Single ? "single" : "double"; }

// A parsed and fully expanded model description: builder shorthands in the
// source document have already been spliced into full node lists.
struct ModelConfig {
    Shape input_shape{1, 1, 1, 1};
    Precision precision = Precision::Single;
    uint64_t seed = 0;
    GraphPlan plan;
};

namespace cfg_detail {

using json = nlohmann::ordered_json;

inline void check_keys(const json& obj, const std::set<std::string>& allowed, const std::string& ctx) {
    for (const auto& item : obj.items())
        if (!allowed.count(item.key())) throw ConfigError(ctx + ": unknown field \"" + item.key() + "\"");
}

inline int64_t req_int(const json& obj, const std::string& key, const std::string& ctx) {
    if (!obj.contains(key)) throw ConfigError(ctx + ": missing field \"" + key + "\"");
    if (!obj[key].is_number_integer()) throw ConfigError(ctx + ": field \"" + key + "\" must be an integer");
    return obj[key].get<int64_t>();
}

inline int64_t opt_int(const json& obj, const std::string& key, int64_t fallback, const std::string& ctx) {
    if (!obj.contains(key)) return fallback;
    if (!obj[key].is_number_integer()) throw ConfigError(ctx + ": field \"" + key + "\" must be an integer");
    return obj[key].get<int64_t>();
}

inline std::string req_str(const json& obj, const std::string& key, const std::string& ctx) {
    if (!obj.contains(key)) throw ConfigError(ctx + ": missing field \"" + key + "\"");
    if (!obj[key].is_string()) throw ConfigError(ctx + ": field \"" + key + "\" must be a string");
    return obj[key].get<std::string>();
}

inline std::string opt_str(const json& obj, const std::string& key, const std::string& fallback,
                           const std::string& ctx) {
    if (!obj.contains(key)) return fallback;
    if (!obj[key].is_string()) throw ConfigError(ctx + ": field \"" + key + "\" must be a string");
    return obj[key].get<std::string>();
}

// kernel/padding accept a single integer (square) or a [h, w] pair
inline std::pair<int64_t, int64_t> int_pair(const json& v, const std::string& key, const std::string& ctx) {
    if (v.is_number_integer()) {
        const int64_t k = v.get<int64_t>();
        return {k, k};
    }
    if (v.is_array() && v.size() == 2 && v[0].is_number_integer() && v[1].is_number_integer())
        return {v[0].get<int64_t>(), v[1].get<int64_t>()};
    throw ConfigError(ctx + ": field \"" + key + "\" must be an integer or [h, w]");
}

inline std::vector<int64_t> int_list(const json& v, const std::string& key, const std::string& ctx) {
    if (!v.is_array() || v.empty()) throw ConfigError(ctx + ": field \"" + key + "\" must be a non-empty array");
    std::vector<int64_t> out;
    for (const auto& e : v) {
        if (!e.is_number_integer()) throw ConfigError(ctx + ": field \"" + key + "\" must hold integers");
        out.push_back(e.get<int64_t>());
    }
    return out;
}

}  // namespace cfg_detail

inline ModelConfig parse_config(const std::string& text) {
    using cfg_detail::json;
    json doc;
    try {
        doc = json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("config: JSON parse error: ") + e.what());
    }
    if (!doc.is_object()) throw ConfigError("config: top level must be an object");
    cfg_detail::check_keys(doc, {"input_shape", "precision", "seed", "nodes"}, "config");

    ModelConfig mc;
    if (!doc.contains("input_shape") || !doc["input_shape"].is_array() || doc["input_shape"].size() != 4)
        throw ConfigError("config: \"input_shape\" must be [n, c, h, w]");
    for (int k = 0; k < 4; ++k)
        if (!doc["input_shape"][static_cast<size_t>(k)].is_number_integer())
            throw ConfigError("config: \"input_shape\" must hold integers");
    mc.input_shape = Shape{doc["input_shape"][0].get<int64_t>(), doc["input_shape"][1].get<int64_t>(),
                           doc["input_shape"][2].get<int64_t>(), doc["input_shape"][3].get<int64_t>()};
    mc.input_shape.checked_elems();
    mc.precision = precision_from_name(cfg_detail::opt_str(doc, "precision", "single", "config"));
    mc.seed = static_cast<uint64_t>(cfg_detail::opt_int(doc, "seed", 0, "config"));

    if (!doc.contains("nodes") || !doc["nodes"].is_array() || doc["nodes"].empty())
        throw ConfigError("config: \"nodes\" must be a non-empty array");

    std::unordered_map<std::string, int> by_id;  // config id -> plan index of the node's output
    auto resolve_inputs = [&](const json& obj, const std::string& ctx) {
        std::vector<int> in;
        if (!obj.contains("inputs")) throw ConfigError(ctx + ": missing field \"inputs\"");
        if (!obj["inputs"].is_array() || obj["inputs"].empty())
            throw ConfigError(ctx + ": \"inputs\" must be a non-empty array of node ids");
        for (const auto& r : obj["inputs"]) {
            if (!r.is_string()) throw ConfigError(ctx + ": \"inputs\" must hold node ids");
            const auto it = by_id.find(r.get<std::string>());
            if (it == by_id.end())
                throw ConfigError(ctx + ": unknown input node \"" + r.get<std::string>() + "\"");
            in.push_back(it->second);
        }
        return in;
    };

    for (const auto& nj : doc["nodes"]) {
        if (!nj.is_object()) throw ConfigError("config: every node must be an object");
        const std::string id = cfg_detail::req_str(nj, "id", "node");
        const std::string ctx = "node \"" + id + "\"";
        if (by_id.count(id)) throw ConfigError(ctx + ": duplicate id");
        const std::string kind = cfg_detail::req_str(nj, "kind", ctx);

        PlanNode n;
        n.id = id;
        n.component = cfg_detail::opt_str(nj, "component", "", ctx);
        n.stage = cfg_detail::opt_str(nj, "stage", "", ctx);
        const std::set<std::string> base = {"id", "kind", "inputs", "component", "stage"};
        auto with = [&](std::initializer_list<std::string> extra) {
            std::set<std::string> s = base;
            for (const auto& e : extra) s.insert(e);
            return s;
        };

        if (kind == "input") {
            cfg_detail::check_keys(nj, {"id", "kind"}, ctx);
            n.kind = NodeKind::Input;
            by_id[id] = mc.plan.add(std::move(n));
            continue;
        }

        // builder shorthands expand in place
        if (kind == "c3_block" || kind == "rc3_block" || kind == "ds_dilate_block") {
            cfg_detail::check_keys(nj, with({"channels", "dilation"}), ctx);
            const int64_t c = cfg_detail::req_int(nj, "channels", ctx);
            const int64_t d = cfg_detail::req_int(nj, "dilation", ctx);
            const auto in = resolve_inputs(nj, ctx);
            if (in.size() != 1) throw ConfigError(ctx + ": block shorthand takes exactly one input");
            GraphPlan sub;
            try {
                sub = kind == "c3_block"    ? plan_c3_block(c, d)
                      : kind == "rc3_block" ? plan_rc3_block(c, d)
                                            : plan_ds_dilate_block(c, d);
            } catch (const std::invalid_argument& e) {
                throw ConfigError(ctx + ": " + e.what());
            }
            by_id[id] = splice_plan(mc.plan, sub, in.front(), id);
            continue;
        }
        if (kind == "esp_module" || kind == "c3_module") {
            const auto in = resolve_inputs(nj, ctx);
            if (in.size() != 1) throw ConfigError(ctx + ": module shorthand takes exactly one input");
            const int64_t c = cfg_detail::req_int(nj, "channels", ctx);
            GraphPlan sub;
            try {
                if (kind == "esp_module") {
                    cfg_detail::check_keys(nj, with({"channels", "branches", "remainder_branch"}), ctx);
                    sub = plan_esp_module(c, cfg_detail::opt_int(nj, "branches", 5, ctx),
                                          cfg_detail::opt_int(nj, "remainder_branch", -1, ctx));
                } else {
                    cfg_detail::check_keys(nj, with({"channels", "dilations"}), ctx);
                    std::vector<int64_t> rates = {2, 4, 8, 16};
                    if (nj.contains("dilations")) rates = cfg_detail::int_list(nj["dilations"], "dilations", ctx);
                    sub = plan_c3_module(c, rates);
                }
            } catch (const std::invalid_argument& e) {
                throw ConfigError(ctx + ": " + e.what());
            }
            by_id[id] = splice_plan(mc.plan, sub, in.front(), id);
            continue;
        }

        const auto nk = node_kind_from_name(kind);
        if (!nk) throw ConfigError(ctx + ": unknown kind \"" + kind + "\"");
        n.kind = *nk;
        n.inputs = resolve_inputs(nj, ctx);

        try {
            switch (*nk) {
                case NodeKind::Output:
                    cfg_detail::check_keys(nj, {"id", "kind", "inputs"}, ctx);
                    break;
                case NodeKind::Conv:
                case NodeKind::Deconv: {
                    cfg_detail::check_keys(
                        nj, with({"in_channels", "out_channels", "kernel", "dilation", "stride", "padding", "groups"}),
                        ctx);
                    n.spec.in_channels = cfg_detail::req_int(nj, "in_channels", ctx);
                    n.spec.out_channels = cfg_detail::req_int(nj, "out_channels", ctx);
                    std::tie(n.spec.kernel_h, n.spec.kernel_w) =
                        cfg_detail::int_pair(nj.contains("kernel") ? nj["kernel"] : json(1), "kernel", ctx);
                    n.spec.dilation = cfg_detail::opt_int(nj, "dilation", 1, ctx);
                    n.spec.stride = cfg_detail::opt_int(nj, "stride", 1, ctx);
                    n.spec.groups = cfg_detail::opt_int(nj, "groups", 1, ctx);
                    if (nj.contains("padding"))
                        std::tie(n.spec.pad_h, n.spec.pad_w) = cfg_detail::int_pair(nj["padding"], "padding", ctx);
                    else {  // default preserves spatial extent at stride 1
                        n.spec.pad_h = n.spec.dilation * (n.spec.kernel_h - 1) / 2;
                        n.spec.pad_w = n.spec.dilation * (n.spec.kernel_w - 1) / 2;
                    }
                    n.spec.validate();
                    break;
                }
                case NodeKind::DepthwiseConv: {
                    cfg_detail::check_keys(nj, with({"channels", "kernel", "dilation", "stride", "padding"}), ctx);
                    const int64_t c = cfg_detail::req_int(nj, "channels", ctx);
                    n.spec.in_channels = n.spec.out_channels = n.spec.groups = c;
                    std::tie(n.spec.kernel_h, n.spec.kernel_w) =
                        cfg_detail::int_pair(nj.contains("kernel") ? nj["kernel"] : json(3), "kernel", ctx);
                    n.spec.dilation = cfg_detail::opt_int(nj, "dilation", 1, ctx);
                    n.spec.stride = cfg_detail::opt_int(nj, "stride", 1, ctx);
                    if (nj.contains("padding"))
                        std::tie(n.spec.pad_h, n.spec.pad_w) = cfg_detail::int_pair(nj["padding"], "padding", ctx);
                    else {
                        n.spec.pad_h = n.spec.dilation * (n.spec.kernel_h - 1) / 2;
                        n.spec.pad_w = n.spec.dilation * (n.spec.kernel_w - 1) / 2;
                    }
                    n.spec.validate();
                    break;
                }
                case NodeKind::PointwiseConv: {
                    cfg_detail::check_keys(nj, with({"in_channels", "out_channels"}), ctx);
                    n.spec = ConvSpec::pointwise(cfg_detail::req_int(nj, "in_channels", ctx),
                                                 cfg_detail::req_int(nj, "out_channels", ctx));
                    break;
                }
                case NodeKind::BatchNorm: {
                    cfg_detail::check_keys(nj, with({"channels", "mode"}), ctx);
                    n.channels = cfg_detail::req_int(nj, "channels", ctx);
                    const std::string mode = cfg_detail::opt_str(nj, "mode", "frozen", ctx);
                    if (mode != "frozen" && mode != "train")
                        throw ConfigError(ctx + ": mode must be \"frozen\" or \"train\"");
                    n.bn_train = mode == "train";
                    break;
                }
                case NodeKind::PReLU:
                    cfg_detail::check_keys(nj, with({"channels"}), ctx);
                    n.channels = cfg_detail::req_int(nj, "channels", ctx);
                    break;
                case NodeKind::Add:
                case NodeKind::ConcatChannels:
                case NodeKind::HFFSum:
                    cfg_detail::check_keys(nj, with({}), ctx);
                    break;
                case NodeKind::AvgPool: {
                    cfg_detail::check_keys(nj, with({"kernel", "stride", "padding"}), ctx);
                    std::tie(n.spec.kernel_h, n.spec.kernel_w) =
                        cfg_detail::int_pair(nj.contains("kernel") ? nj["kernel"] : json(2), "kernel", ctx);
                    n.spec.stride = cfg_detail::opt_int(nj, "stride", n.spec.kernel_h, ctx);
                    if (nj.contains("padding"))
                        std::tie(n.spec.pad_h, n.spec.pad_w) = cfg_detail::int_pair(nj["padding"], "padding", ctx);
                    break;
                }
                case NodeKind::BilinearUpsample:
                    cfg_detail::check_keys(nj, with({"scale"}), ctx);
                    n.scale = cfg_detail::opt_int(nj, "scale", 2, ctx);
                    if (n.scale < 1) throw ConfigError(ctx + ": scale must be >= 1");
                    break;
                default: throw ConfigError(ctx + ": kind \"" + kind + "\" not allowed here");
            }
        } catch (const std::invalid_argument& e) {
            throw ConfigError(ctx + ": " + e.what());
        }
        by_id[id] = mc.plan.add(std::move(n));
    }

    std::unordered_set<std::string> ids;
    for (const auto& n : mc.plan.nodes)
        if (!ids.insert(n.id).second) throw ConfigError("config: expansion produced duplicate id \"" + n.id + "\"");
    try {
        mc.plan.finalize();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    return mc;
}

inline ModelConfig parse_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("config: cannot open \"" + path + "\"");
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_config(ss.str());
}

// Canonical expanded form: every node fully spelled out, keys in fixed order.
inline std::string serialize_config(const ModelConfig& mc) {
    using cfg_detail::json;
    json doc;
    doc["input_shape"] = {mc.input_shape.n, mc.input_shape.c, mc.input_shape.h, mc.input_shape.w};
    doc["precision"] = precision_name(mc.precision);
    doc["seed"] = mc.seed;
    doc["nodes"] = json::array();
    for (const auto& n : mc.plan.nodes) {
        json nj;
        nj["id"] = n.id;
        nj["kind"] = node_kind_name(n.kind);
        switch (n.kind) {
            case NodeKind::Conv:
            case NodeKind::Deconv:
                nj["in_channels"] = n.spec.in_channels;
                nj["out_channels"] = n.spec.out_channels;
                nj["kernel"] = {n.spec.kernel_h, n.spec.kernel_w};
                nj["dilation"] = n.spec.dilation;
                nj["stride"] = n.spec.stride;
                nj["padding"] = {n.spec.pad_h, n.spec.pad_w};
                nj["groups"] = n.spec.groups;
                break;
            case NodeKind::DepthwiseConv:
                nj["channels"] = n.spec.in_channels;
                nj["kernel"] = {n.spec.kernel_h, n.spec.kernel_w};
                nj["dilation"] = n.spec.dilation;
                nj["stride"] = n.spec.stride;
                nj["padding"] = {n.spec.pad_h, n.spec.pad_w};
                break;
            case NodeKind::PointwiseConv:
                nj["in_channels"] = n.spec.in_channels;
                nj["out_channels"] = n.spec.out_channels;
                break;
            case NodeKind::BatchNorm:
                nj["channels"] = n.channels;
                nj["mode"] = n.bn_train ? "train" : "frozen";
                break;
            case NodeKind::PReLU: nj["channels"] = n.channels; break;
            case NodeKind::AvgPool:
                nj["kernel"] = {n.spec.kernel_h, n.spec.kernel_w};
                nj["stride"] = n.spec.stride;
                nj["padding"] = {n.spec.pad_h, n.spec.pad_w};
                break;
            case NodeKind::BilinearUpsample: nj["scale"] = n.scale; break;
            default: break;
        }
        if (!n.component.empty()) nj["component"] = n.component;
        if (!n.stage.empty()) nj["stage"] = n.stage;
        if (n.kind != NodeKind::Input) {
            json in = json::array();
            for (int j : n.inputs) in.push_back(mc.plan.node(j).id);
            nj["inputs"] = in;
        }
        doc["nodes"].push_back(std::move(nj));
    }
    return doc.dump(2) + "\n";
}

template <typename T>
Graph<T> config_graph(const ModelConfig& mc) {
    return materialize<T>(mc.plan, mc.seed);
}

}  // namespace c3
