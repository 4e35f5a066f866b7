#pragma once

#include <deque>
#include <optional>
#include <string>

#include "c3/conv.hpp"
#include "c3/norm_act.hpp"

namespace c3 {

enum class NodeKind {
    Input,
    Output,
    Conv,
    DepthwiseConv,
    PointwiseConv,
    BatchNorm,
    PReLU,
    Add,
    ConcatChannels,
    HFFSum,
    // cost-vocabulary-only kinds: the analyzer prices them, the executor rejects them
    Deconv,
    AvgPool,
    BilinearUpsample,
};

inline const char* node_kind_name(NodeKind k) {
    switch (k) {
        case NodeKind::Input: return "input";
        case NodeKind::Output: return "output";
        case NodeKind::Conv: return "conv";
        case NodeKind::DepthwiseConv: return "depthwise_conv";
        case NodeKind::PointwiseConv: return "pointwise_conv";
        case NodeKind::BatchNorm: return "batchnorm";
        case NodeKind::PReLU: return "prelu";
        case NodeKind::Add: return "add";
        case NodeKind::ConcatChannels: return "concat_channels";
        case NodeKind::HFFSum: return "hff_sum";
        case NodeKind::Deconv: return "deconv";
        case NodeKind::AvgPool: return "avg_pool";
        case NodeKind::BilinearUpsample: return "bilinear_upsample";
    }
    return "?";
}

inline std::optional<NodeKind> node_kind_from_name(const std::string& s) {
    for (NodeKind k : {NodeKind::Input, NodeKind::Output, NodeKind::Conv, NodeKind::DepthwiseConv,
                       NodeKind::PointwiseConv, NodeKind::BatchNorm, NodeKind::PReLU, NodeKind::Add,
                       NodeKind::ConcatChannels, NodeKind::HFFSum, NodeKind::Deconv, NodeKind::AvgPool,
                       NodeKind::BilinearUpsample})
        if (s == node_kind_name(k)) return k;
    return std::nullopt;
}

inline bool is_conv_family(NodeKind k) {
    return k == NodeKind::Conv || k == NodeKind::DepthwiseConv || k == NodeKind::PointwiseConv || k == NodeKind::Deconv;
}

// One layer in a block graph. The precision-independent part: specs, wiring
// and labels, no weights. `component` carries the module row tag (A/B/C/D)
// used by cost reports; `stage` tags concentration vs comprehensive layers
// for receptive-field queries.
struct PlanNode {
    NodeKind kind = NodeKind::Input;
    std::string id;
    std::string component;
    std::string stage;
    ConvSpec spec;         // conv family, avg_pool (kernel/stride/pad)
    int64_t channels = 0;  // batchnorm / prelu / avg_pool / bilinear
    int64_t scale = 2;     // bilinear_upsample
    bool bn_train = false;
    std::vector<int> inputs;

    // structural equality; ids and labels are not part of it
    bool same_structure(const PlanNode& o) const {
        return kind == o.kind && spec == o.spec && channels == o.channels && scale == o.scale &&
               bn_train == o.bn_train && inputs == o.inputs;
    }
};

class GraphPlan {
public:
    std::vector<PlanNode> nodes;
    int input = -1;
    int output = -1;

    int add(PlanNode n) {
        nodes.push_back(std::move(n));
        const int idx = static_cast<int>(nodes.size()) - 1;
        if (nodes.back().kind == NodeKind::Input) input = idx;
        if (nodes.back().kind == NodeKind::Output) output = idx;
        return idx;
    }

    const PlanNode& node(int i) const { return nodes[static_cast<size_t>(i)]; }
    int size() const { return static_cast<int>(nodes.size()); }

    // Validates wiring and computes a topological order.
    void finalize() {
        if (nodes.empty()) throw std::invalid_argument("graph: no nodes");
        int n_in = 0, n_out = 0;
        for (const auto& n : nodes) {
            n_in += n.kind == NodeKind::Input;
            n_out += n.kind == NodeKind::Output;
        }
        if (n_in != 1 || n_out != 1) throw std::invalid_argument("graph: exactly one input and one output required");
        for (int i = 0; i < size(); ++i) {
            const PlanNode& n = nodes[static_cast<size_t>(i)];
            for (int j : n.inputs)
                if (j < 0 || j >= size() || j == i)
                    throw std::invalid_argument("graph: node '" + n.id + "' has a bad input reference");
            check_arity(n);
        }
        topo_sort();
        check_reachability();
    }

    const std::vector<int>& order() const { return order_; }

    void require_finalized() const {
        if (order_.size() != nodes.size() || input < 0 || output < 0)
            throw std::logic_error("graph: finalize() must run before use");
    }

    // Output shape of every node for the given graph input shape.
    std::vector<Shape> infer_shapes(const Shape& in) const {
        require_finalized();
        in.checked_elems();
        std::vector<Shape> shapes(nodes.size());
        for (int i : order_) {
            const PlanNode& n = nodes[static_cast<size_t>(i)];
            auto is = [&](int k) -> const Shape& { return shapes[static_cast<size_t>(n.inputs[static_cast<size_t>(k)])]; };
            Shape& out = shapes[static_cast<size_t>(i)];
            switch (n.kind) {
                case NodeKind::Input: out = in; break;
                case NodeKind::Output: out = is(0); break;
                case NodeKind::Conv:
                case NodeKind::DepthwiseConv:
                case NodeKind::PointwiseConv: out = n.spec.out_shape(is(0)); break;
                case NodeKind::Deconv: out = deconv_out_shape(n.spec, is(0)); break;
                case NodeKind::AvgPool: out = pool_out_shape(n.spec, is(0)); break;
                case NodeKind::BilinearUpsample:
                    out = Shape{is(0).n, is(0).c, is(0).h * n.scale, is(0).w * n.scale};
                    break;
                case NodeKind::BatchNorm:
                case NodeKind::PReLU:
                    if (is(0).c != n.channels)
                        throw std::invalid_argument("graph: node '" + n.id + "' expects " +
                                                    std::to_string(n.channels) + " channels, got " + is(0).str());
                    out = is(0);
                    break;
                case NodeKind::Add:
                    out = is(0);
                    for (size_t k = 1; k < n.inputs.size(); ++k)
                        if (!(is(static_cast<int>(k)) == out))
                            throw std::invalid_argument("graph: add node '" + n.id + "' input shape mismatch");
                    break;
                case NodeKind::ConcatChannels: {
                    out = is(0);
                    for (size_t k = 1; k < n.inputs.size(); ++k) {
                        const Shape& s = is(static_cast<int>(k));
                        if (s.n != out.n || s.h != out.h || s.w != out.w)
                            throw std::invalid_argument("graph: concat node '" + n.id + "' spatial/batch mismatch");
                        out.c += s.c;
                    }
                    break;
                }
                case NodeKind::HFFSum: {
                    // inputs: [branch, accumulated]; channel counts may differ
                    // when one branch carries the split remainder
                    const Shape& b = is(0);
                    const Shape& p = is(1);
                    if (b.n != p.n || b.h != p.h || b.w != p.w)
                        throw std::invalid_argument("graph: hff node '" + n.id + "' incompatible inputs " + b.str() +
                                                    " vs " + p.str());
                    out = b;
                    break;
                }
            }
        }
        return shapes;
    }

    static Shape deconv_out_shape(const ConvSpec& spec, const Shape& in) {
        spec.validate();
        if (in.c != spec.in_channels) throw std::invalid_argument("deconv: channel mismatch");
        const int64_t ho = spec.stride * (in.h - 1) + spec.dilation * (spec.kernel_h - 1) + 1 - 2 * spec.pad_h;
        const int64_t wo = spec.stride * (in.w - 1) + spec.dilation * (spec.kernel_w - 1) + 1 - 2 * spec.pad_w;
        if (ho < 1 || wo < 1) throw std::invalid_argument("deconv: non-positive output extent");
        return Shape{in.n, spec.out_channels, ho, wo};
    }

    static Shape pool_out_shape(const ConvSpec& spec, const Shape& in) {
        const int64_t ho = (in.h + 2 * spec.pad_h - spec.kernel_h) / spec.stride + 1;
        const int64_t wo = (in.w + 2 * spec.pad_w - spec.kernel_w) / spec.stride + 1;
        if (ho < 1 || wo < 1) throw std::invalid_argument("avg_pool: non-positive output extent");
        return Shape{in.n, in.c, ho, wo};
    }

private:
    std::vector<int> order_;

    void check_arity(const PlanNode& n) const {
        const size_t k = n.inputs.size();
        switch (n.kind) {
            case NodeKind::Input:
                if (k != 0) throw std::invalid_argument("graph: input node takes no inputs");
                break;
            case NodeKind::Add:
                if (k < 2) throw std::invalid_argument("graph: add node '" + n.id + "' needs >= 2 inputs");
                break;
            case NodeKind::ConcatChannels:
                if (k < 1) throw std::invalid_argument("graph: concat node '" + n.id + "' needs >= 1 input");
                break;
            case NodeKind::HFFSum:
                if (k != 2) throw std::invalid_argument("graph: hff node '" + n.id + "' needs exactly 2 inputs");
                break;
            default:
                if (k != 1) throw std::invalid_argument("graph: node '" + n.id + "' needs exactly 1 input");
                break;
        }
    }

    void topo_sort() {
        const int n = size();
        std::vector<int> indeg(static_cast<size_t>(n), 0);
        std::vector<std::vector<int>> consumers(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) {
            indeg[static_cast<size_t>(i)] = static_cast<int>(nodes[static_cast<size_t>(i)].inputs.size());
            for (int j : nodes[static_cast<size_t>(i)].inputs) consumers[static_cast<size_t>(j)].push_back(i);
        }
        order_.clear();
        std::deque<int> ready;
        for (int i = 0; i < n; ++i)
            if (indeg[static_cast<size_t>(i)] == 0) ready.push_back(i);
        while (!ready.empty()) {
            const int i = ready.front();
            ready.pop_front();
            order_.push_back(i);
            for (int j : consumers[static_cast<size_t>(i)])
                if (--indeg[static_cast<size_t>(j)] == 0) ready.push_back(j);
        }
        if (static_cast<int>(order_.size()) != n) throw std::invalid_argument("graph: cycle detected");
    }

    void check_reachability() const {
        const int n = size();
        // forward from input
        std::vector<char> seen(static_cast<size_t>(n), 0);
        seen[static_cast<size_t>(input)] = 1;
        for (int i : order_) {
            if (nodes[static_cast<size_t>(i)].inputs.empty()) continue;
            bool any = false;
            for (int j : nodes[static_cast<size_t>(i)].inputs) any = any || seen[static_cast<size_t>(j)];
            if (any) seen[static_cast<size_t>(i)] = 1;
        }
        for (int i = 0; i < n; ++i)
            if (!seen[static_cast<size_t>(i)])
                throw std::invalid_argument("graph: node '" + nodes[static_cast<size_t>(i)].id +
                                            "' unreachable from input");
        // backward from output: every node must feed the output
        std::vector<char> feeds(static_cast<size_t>(n), 0);
        feeds[static_cast<size_t>(output)] = 1;
        for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
            if (!feeds[static_cast<size_t>(*it)]) continue;
            for (int j : nodes[static_cast<size_t>(*it)].inputs) feeds[static_cast<size_t>(j)] = 1;
        }
        for (int i = 0; i < n; ++i)
            if (!feeds[static_cast<size_t>(i)])
                throw std::invalid_argument("graph: node '" + nodes[static_cast<size_t>(i)].id +
                                            "' does not reach the output");
    }
};

inline bool same_structure(const GraphPlan& a, const GraphPlan& b) {
    if (a.nodes.size() != b.nodes.size()) return false;
    for (size_t i = 0; i < a.nodes.size(); ++i)
        if (!a.nodes[i].same_structure(b.nodes[i])) return false;
    return true;
}

// ------ block builders ------

namespace detail {

inline PlanNode conv_node(NodeKind kind, std::string id, ConvSpec spec, int in, std::string component = "",
                          std::string stage = "") {
    PlanNode n;
    n.kind = kind;
    n.id = std::move(id);
    n.spec = spec;
    n.component = std::move(component);
    n.stage = std::move(stage);
    n.inputs = {in};
    return n;
}

inline PlanNode chan_node(NodeKind kind, std::string id, int64_t channels, int in, std::string component = "",
                          std::string stage = "") {
    PlanNode n;
    n.kind = kind;
    n.id = std::move(id);
    n.channels = channels;
    n.component = std::move(component);
    n.stage = std::move(stage);
    n.inputs = {in};
    return n;
}

}  // namespace detail

// Naive depth-wise separable dilated block:
//   depthwise 3x3 (dilation d) -> batchnorm -> pointwise CxC
inline int append_ds_dilate_body(GraphPlan& g, int in, int64_t c, int64_t d, const std::string& prefix,
                                 const std::string& component) {
    using detail::chan_node;
    using detail::conv_node;
    int x = g.add(conv_node(NodeKind::DepthwiseConv, prefix + "dw", ConvSpec::depthwise(c, 3, 3, d), in, component));
    x = g.add(chan_node(NodeKind::BatchNorm, prefix + "bn", c, x, component));
    x = g.add(conv_node(NodeKind::PointwiseConv, prefix + "pw", ConvSpec::pointwise(c, c), x, component));
    return x;
}

// Concentration stage as a single regular (2d-1)x(2d-1) depth-wise convolution,
// then the comprehensive stage (depthwise dilated 3x3 + pointwise).
inline int append_rc3_body(GraphPlan& g, int in, int64_t c, int64_t d, const std::string& prefix,
                           const std::string& component) {
    using detail::chan_node;
    using detail::conv_node;
    const int64_t k = 2 * d - 1;
    int x = g.add(conv_node(NodeKind::DepthwiseConv, prefix + "conc", ConvSpec::depthwise(c, k, k, 1), in, component,
                            "concentration"));
    x = g.add(chan_node(NodeKind::BatchNorm, prefix + "bn1", c, x, component, "concentration"));
    x = g.add(chan_node(NodeKind::PReLU, prefix + "act", c, x, component, "concentration"));
    x = g.add(conv_node(NodeKind::DepthwiseConv, prefix + "dw", ConvSpec::depthwise(c, 3, 3, d), x, component,
                        "comprehensive"));
    x = g.add(chan_node(NodeKind::BatchNorm, prefix + "bn2", c, x, component, "comprehensive"));
    x = g.add(conv_node(NodeKind::PointwiseConv, prefix + "pw", ConvSpec::pointwise(c, c), x, component,
                        "comprehensive"));
    return x;
}

// Factorized concentration stage: 1x(2d-1) then (2d-1)x1 depth-wise asymmetric
// convolutions with BN+PReLU between them, then the comprehensive stage.
inline int append_c3_body(GraphPlan& g, int in, int64_t c, int64_t d, const std::string& prefix,
                          const std::string& component) {
    using detail::chan_node;
    using detail::conv_node;
    const int64_t k = 2 * d - 1;
    int x = g.add(conv_node(NodeKind::DepthwiseConv, prefix + "row", ConvSpec::depthwise(c, 1, k, 1), in, component,
                            "concentration"));
    x = g.add(chan_node(NodeKind::BatchNorm, prefix + "bn1", c, x, component, "concentration"));
    x = g.add(chan_node(NodeKind::PReLU, prefix + "act", c, x, component, "concentration"));
    x = g.add(conv_node(NodeKind::DepthwiseConv, prefix + "col", ConvSpec::depthwise(c, k, 1, 1), x, component,
                        "concentration"));
    x = g.add(conv_node(NodeKind::DepthwiseConv, prefix + "dw", ConvSpec::depthwise(c, 3, 3, d), x, component,
                        "comprehensive"));
    x = g.add(chan_node(NodeKind::BatchNorm, prefix + "bn2", c, x, component, "comprehensive"));
    x = g.add(conv_node(NodeKind::PointwiseConv, prefix + "pw", ConvSpec::pointwise(c, c), x, component,
                        "comprehensive"));
    return x;
}

namespace detail {

inline GraphPlan wrap_block(int64_t channels, int64_t dilation,
                            int (*body)(GraphPlan&, int, int64_t, int64_t, const std::string&, const std::string&)) {
    if (channels < 1 || dilation < 1) throw std::invalid_argument("block: channels and dilation must be >= 1");
    GraphPlan g;
    PlanNode in;
    in.kind = NodeKind::Input;
    in.id = "in";
    const int i = g.add(in);
    const int x = body(g, i, channels, dilation, "", "");
    PlanNode out;
    out.kind = NodeKind::Output;
    out.id = "out";
    out.inputs = {x};
    g.add(out);
    g.finalize();
    return g;
}

}  // namespace detail

inline GraphPlan plan_ds_dilate_block(int64_t channels, int64_t dilation) {
    return detail::wrap_block(channels, dilation, append_ds_dilate_body);
}
inline GraphPlan plan_rc3_block(int64_t channels, int64_t dilation) {
    return detail::wrap_block(channels, dilation, append_rc3_body);
}
inline GraphPlan plan_c3_block(int64_t channels, int64_t dilation) {
    return detail::wrap_block(channels, dilation, append_c3_body);
}

// A single standard dilated 3x3 convolution, the baseline the blocks replace.
inline GraphPlan plan_std_dilated(int64_t channels, int64_t dilation) {
    if (channels < 1 || dilation < 1) throw std::invalid_argument("block: channels and dilation must be >= 1");
    GraphPlan g;
    PlanNode in;
    in.kind = NodeKind::Input;
    in.id = "in";
    const int i = g.add(in);
    const int x = g.add(detail::conv_node(NodeKind::Conv, "conv",
                                          ConvSpec::same_pad(channels, channels, 3, 3, dilation, 1), i));
    PlanNode out;
    out.kind = NodeKind::Output;
    out.id = "out";
    out.inputs = {x};
    g.add(out);
    g.finalize();
    return g;
}

// Spatial pyramid of standard dilated convolutions behind a channel-reducing
// pointwise conv, merged by hierarchical feature fusion, concatenation and a
// skip connection. Branch i uses dilation 2^(i-1). Channels left over from
// the C/n split go to `remainder_branch` (default: the largest-dilation one).
inline GraphPlan plan_esp_module(int64_t channels, int64_t branches = 5, int64_t remainder_branch = -1) {
    if (branches < 1) throw std::invalid_argument("esp_module: need >= 1 branch");
    if (channels < branches) throw std::invalid_argument("esp_module: channels must be >= branch count");
    if (remainder_branch < 0) remainder_branch = branches - 1;
    if (remainder_branch >= branches)
        throw std::invalid_argument("esp_module: remainder_branch out of range");
    using detail::conv_node;
    GraphPlan g;
    PlanNode in;
    in.kind = NodeKind::Input;
    in.id = "in";
    const int i = g.add(in);
    const int64_t cr = channels / branches;
    const int64_t rem = channels % branches;
    const int red =
        g.add(conv_node(NodeKind::PointwiseConv, "reduce", ConvSpec::pointwise(channels, cr), i, "A"));
    std::vector<int> branch_nodes;
    for (int64_t b = 0; b < branches; ++b) {
        const int64_t d = int64_t(1) << b;
        const int64_t co = cr + (b == remainder_branch ? rem : 0);
        branch_nodes.push_back(g.add(conv_node(NodeKind::Conv, "b" + std::to_string(b + 1),
                                               ConvSpec::same_pad(cr, co, 3, 3, d, 1), red, "B")));
    }
    // hierarchical fusion: out_1 = b_1, out_i = b_i + out_{i-1}
    std::vector<int> fused;
    fused.push_back(branch_nodes[0]);
    for (size_t b = 1; b < branch_nodes.size(); ++b) {
        PlanNode h;
        h.kind = NodeKind::HFFSum;
        h.id = "hff" + std::to_string(b + 1);
        h.component = "C";
        h.inputs = {branch_nodes[b], fused.back()};
        fused.push_back(g.add(h));
    }
    PlanNode cat;
    cat.kind = NodeKind::ConcatChannels;
    cat.id = "concat";
    cat.inputs = fused;
    const int catn = g.add(cat);
    PlanNode skip;
    skip.kind = NodeKind::Add;
    skip.id = "skip";
    skip.component = "D";
    skip.inputs = {catn, i};
    const int sk = g.add(skip);
    PlanNode out;
    out.kind = NodeKind::Output;
    out.id = "out";
    out.inputs = {sk};
    g.add(out);
    g.finalize();
    return g;
}

// Parallel C3 blocks behind a channel-reducing pointwise conv; outputs are
// concatenated (no fusion) and joined with a skip connection. No dilation-1
// branch: the concentration stages already gather the local neighborhood.
inline GraphPlan plan_c3_module(int64_t channels, const std::vector<int64_t>& dilations = {2, 4, 8, 16}) {
    if (dilations.empty()) throw std::invalid_argument("c3_module: need >= 1 dilation rate");
    for (int64_t d : dilations)
        if (d < 1) throw std::invalid_argument("c3_module: dilation rates must be >= 1");
    const int64_t n = static_cast<int64_t>(dilations.size());
    if (channels % n != 0)
        throw std::invalid_argument("c3_module: channels (" + std::to_string(channels) +
                                    ") not divisible by branch count (" + std::to_string(n) + ")");
    using detail::conv_node;
    GraphPlan g;
    PlanNode in;
    in.kind = NodeKind::Input;
    in.id = "in";
    const int i = g.add(in);
    const int64_t cr = channels / n;
    const int red =
        g.add(conv_node(NodeKind::PointwiseConv, "reduce", ConvSpec::pointwise(channels, cr), i, "A"));
    std::vector<int> branch_out;
    for (int64_t b = 0; b < n; ++b)
        branch_out.push_back(
            append_c3_body(g, red, cr, dilations[static_cast<size_t>(b)], "b" + std::to_string(b + 1) + ".", "B"));
    PlanNode cat;
    cat.kind = NodeKind::ConcatChannels;
    cat.id = "concat";
    cat.inputs = branch_out;
    const int catn = g.add(cat);
    PlanNode skip;
    skip.kind = NodeKind::Add;
    skip.id = "skip";
    skip.component = "D";
    skip.inputs = {catn, i};
    const int sk = g.add(skip);
    PlanNode out;
    out.kind = NodeKind::Output;
    out.id = "out";
    out.inputs = {sk};
    g.add(out);
    g.finalize();
    return g;
}

// Splice every node of `sub` except its input/output into `dst`, remapping
// the sub-plan's input to `src` and prefixing ids for uniqueness. Returns the
// index of the node that fed the sub-plan's output.
inline int splice_plan(GraphPlan& dst, const GraphPlan& sub, int src, const std::string& prefix) {
    std::vector<int> remap(sub.nodes.size(), -1);
    remap[static_cast<size_t>(sub.input)] = src;
    int result = -1;
    for (int i = 0; i < sub.size(); ++i) {
        const PlanNode& n = sub.node(i);
        if (n.kind == NodeKind::Input) continue;
        if (n.kind == NodeKind::Output) {
            result = remap[static_cast<size_t>(n.inputs.front())];
            continue;
        }
        PlanNode copy = n;
        copy.id = prefix + "." + n.id;
        for (auto& j : copy.inputs) j = remap[static_cast<size_t>(j)];
        remap[static_cast<size_t>(i)] = dst.add(std::move(copy));
    }
    return result;
}

// ------ materialized graph + executor ------

template <typename T>
struct NodeParams {
    Kernel<T> kernel;
    BatchNormParams<T> bn;
    PReLUParams<T> prelu;
};

template <typename T>
struct Graph {
    GraphPlan plan;
    std::vector<NodeParams<T>> params;  // aligned with plan.nodes
};

// Deterministic weight attachment: each conv kernel is drawn from a seed mixed
// with the node index; batch norms start as identity, PReLU slopes at 0.25.
template <typename T>
Graph<T> materialize(const GraphPlan& plan, uint64_t seed) {
    Graph<T> g;
    g.plan = plan;
    g.params.resize(plan.nodes.size());
    for (int i = 0; i < plan.size(); ++i) {
        const PlanNode& n = plan.node(i);
        NodeParams<T>& p = g.params[static_cast<size_t>(i)];
        if (n.kind == NodeKind::Conv || n.kind == NodeKind::DepthwiseConv || n.kind == NodeKind::PointwiseConv)
            p.kernel = random_kernel<T>(n.spec, mix_seed(seed, static_cast<uint64_t>(i)));
        else if (n.kind == NodeKind::BatchNorm)
            p.bn = BatchNormParams<T>::identity(n.channels);
        else if (n.kind == NodeKind::PReLU)
            p.prelu = PReLUParams<T>::filled(n.channels, static_cast<T>(0.25));
    }
    return g;
}

namespace detail {

// One hierarchical-fusion join. The output takes the branch's channel count;
// the accumulated tensor sums into the leading overlap and any extra branch
// channels (a split remainder) pass through. Extra accumulator channels were
// already emitted by the earlier join that produced them.
template <typename T>
Tensor<T> hff_join(const Tensor<T>& branch, const Tensor<T>& prev) {
    const Shape& b = branch.shape();
    const Shape& p = prev.shape();
    if (b.n != p.n || b.h != p.h || b.w != p.w)
        throw std::invalid_argument("hff_join: incompatible shapes " + b.str() + " vs " + p.str());
    const int64_t overlap = std::min(b.c, p.c);
    Tensor<T> out(b);
    const int64_t plane = b.plane();
    for (int64_t n = 0; n < b.n; ++n) {
        for (int64_t c = 0; c < b.c; ++c) {
            const T* bp = branch.data() + (n * b.c + c) * plane;
            T* op = out.data() + (n * b.c + c) * plane;
            if (c < overlap) {
                const T* pp = prev.data() + (n * p.c + c) * plane;
                for (int64_t k = 0; k < plane; ++k) op[k] = bp[k] + pp[k];
            } else {
                std::copy(bp, bp + plane, op);
            }
        }
    }
    return out;
}

template <typename T>
void add_into(Tensor<T>& dst, const Tensor<T>& src) {
    if (dst.empty()) {
        dst = src;
        return;
    }
    if (!dst.same_shape(src)) throw std::invalid_argument("gradient accumulation: shape mismatch");
    for (int64_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace detail

// Cumulative elementwise summation of branch outputs in ascending dilation
// order: out_1 = b_1, out_i = b_i + out_{i-1}. All outputs are returned for
// concatenation. Branches must agree in shape.
template <typename T>
std::vector<Tensor<T>> hff_sum(const std::vector<Tensor<T>>& branches) {
    if (branches.empty()) throw std::invalid_argument("hff_sum: empty branch list");
    std::vector<Tensor<T>> out;
    out.reserve(branches.size());
    out.push_back(branches.front());
    for (size_t i = 1; i < branches.size(); ++i) out.push_back(add(branches[i], out.back()));
    return out;
}

template <typename T>
void check_executable(const Graph<T>& g) {
    for (const auto& n : g.plan.nodes) {
        if (n.kind == NodeKind::Deconv || n.kind == NodeKind::AvgPool || n.kind == NodeKind::BilinearUpsample)
            throw std::invalid_argument("graph: node '" + n.id + "' of kind '" + node_kind_name(n.kind) +
                                        "' has cost rows only and cannot be executed");
        if (n.kind == NodeKind::BatchNorm && n.bn_train)
            throw std::invalid_argument("graph: node '" + n.id + "' uses train-mode batch norm, which the graph "
                                        "executor does not run; use the standalone op");
    }
}

template <typename T>
Tensor<T> graph_forward(const Graph<T>& g, const Tensor<T>& input) {
    check_executable(g);
    g.plan.infer_shapes(input.shape());  // surface shape errors before any work
    std::vector<Tensor<T>> vals(g.plan.nodes.size());
    for (int i : g.plan.order()) {
        const PlanNode& n = g.plan.node(i);
        const NodeParams<T>& p = g.params[static_cast<size_t>(i)];
        auto iv = [&](int k) -> const Tensor<T>& { return vals[static_cast<size_t>(n.inputs[static_cast<size_t>(k)])]; };
        Tensor<T>& out = vals[static_cast<size_t>(i)];
        switch (n.kind) {
            case NodeKind::Input: out = input; break;
            case NodeKind::Output: out = iv(0); break;
            case NodeKind::Conv: out = conv_forward(iv(0), p.kernel, n.spec); break;
            case NodeKind::DepthwiseConv: out = depthwise_dilated_forward(iv(0), p.kernel, n.spec); break;
            case NodeKind::PointwiseConv: out = pointwise_forward(iv(0), p.kernel, n.spec); break;
            case NodeKind::BatchNorm: out = batchnorm_forward(iv(0), p.bn); break;
            case NodeKind::PReLU: out = prelu_forward(iv(0), p.prelu); break;
            case NodeKind::Add: {
                out = iv(0);
                for (size_t k = 1; k < n.inputs.size(); ++k) out = add(out, iv(static_cast<int>(k)));
                break;
            }
            case NodeKind::ConcatChannels: {
                std::vector<Tensor<T>> parts;
                for (size_t k = 0; k < n.inputs.size(); ++k) parts.push_back(iv(static_cast<int>(k)));
                out = concat_channels(parts);
                break;
            }
            case NodeKind::HFFSum: out = detail::hff_join(iv(0), iv(1)); break;
            default: throw std::logic_error("graph_forward: unreachable node kind");
        }
    }
    return vals[static_cast<size_t>(g.plan.output)];
}

template <typename T>
struct GraphGradients {
    Tensor<T> d_input;
    std::vector<Tensor<T>> d_kernel;         // per node; empty for non-conv nodes
    std::vector<std::vector<T>> d_slope;     // per node; empty for non-prelu nodes
};

// Reverse-topological accumulation; fan-out gradients are summed. Requires
// frozen-mode batch norms throughout.
template <typename T>
GraphGradients<T> graph_backward(const Graph<T>& g, const Tensor<T>& input, const Tensor<T>& d_output) {
    check_executable(g);
    g.plan.infer_shapes(input.shape());
    // forward value cache
    std::vector<Tensor<T>> vals(g.plan.nodes.size());
    for (int i : g.plan.order()) {
        const PlanNode& n = g.plan.node(i);
        const NodeParams<T>& p = g.params[static_cast<size_t>(i)];
        auto iv = [&](int k) -> const Tensor<T>& { return vals[static_cast<size_t>(n.inputs[static_cast<size_t>(k)])]; };
        switch (n.kind) {
            case NodeKind::Input: vals[static_cast<size_t>(i)] = input; break;
            case NodeKind::Output: vals[static_cast<size_t>(i)] = iv(0); break;
            case NodeKind::Conv: vals[static_cast<size_t>(i)] = conv_forward(iv(0), p.kernel, n.spec); break;
            case NodeKind::DepthwiseConv:
                vals[static_cast<size_t>(i)] = depthwise_dilated_forward(iv(0), p.kernel, n.spec);
                break;
            case NodeKind::PointwiseConv: vals[static_cast<size_t>(i)] = pointwise_forward(iv(0), p.kernel, n.spec); break;
            case NodeKind::BatchNorm: vals[static_cast<size_t>(i)] = batchnorm_forward(iv(0), p.bn); break;
            case NodeKind::PReLU: vals[static_cast<size_t>(i)] = prelu_forward(iv(0), p.prelu); break;
            case NodeKind::Add: {
                Tensor<T> acc = iv(0);
                for (size_t k = 1; k < n.inputs.size(); ++k) acc = add(acc, iv(static_cast<int>(k)));
                vals[static_cast<size_t>(i)] = std::move(acc);
                break;
            }
            case NodeKind::ConcatChannels: {
                std::vector<Tensor<T>> parts;
                for (size_t k = 0; k < n.inputs.size(); ++k) parts.push_back(iv(static_cast<int>(k)));
                vals[static_cast<size_t>(i)] = concat_channels(parts);
                break;
            }
            case NodeKind::HFFSum: vals[static_cast<size_t>(i)] = detail::hff_join(iv(0), iv(1)); break;
            default: throw std::logic_error("graph_backward: unreachable node kind");
        }
    }
    if (!vals[static_cast<size_t>(g.plan.output)].same_shape(d_output))
        throw std::invalid_argument("graph_backward: d_output shape mismatch");

    GraphGradients<T> out;
    out.d_kernel.resize(g.plan.nodes.size());
    out.d_slope.resize(g.plan.nodes.size());
    std::vector<Tensor<T>> grads(g.plan.nodes.size());
    grads[static_cast<size_t>(g.plan.output)] = d_output;
    const auto& order = g.plan.order();
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        const int i = *it;
        const PlanNode& n = g.plan.node(i);
        const NodeParams<T>& p = g.params[static_cast<size_t>(i)];
        Tensor<T>& go = grads[static_cast<size_t>(i)];
        if (go.empty()) {
            if (n.kind != NodeKind::Input) throw std::logic_error("graph_backward: missing gradient at '" + n.id + "'");
            continue;
        }
        auto gin = [&](int k) -> Tensor<T>& { return grads[static_cast<size_t>(n.inputs[static_cast<size_t>(k)])]; };
        auto iv = [&](int k) -> const Tensor<T>& { return vals[static_cast<size_t>(n.inputs[static_cast<size_t>(k)])]; };
        switch (n.kind) {
            case NodeKind::Input: break;
            case NodeKind::Output: detail::add_into(gin(0), go); break;
            case NodeKind::Conv:
            case NodeKind::DepthwiseConv:
            case NodeKind::PointwiseConv: {
                ConvGrads<T> cg = conv_backward(iv(0), p.kernel, n.spec, go);
                detail::add_into(gin(0), cg.d_input);
                detail::add_into(out.d_kernel[static_cast<size_t>(i)], cg.d_weights);
                break;
            }
            case NodeKind::BatchNorm: detail::add_into(gin(0), batchnorm_backward_frozen(go, p.bn)); break;
            case NodeKind::PReLU: {
                PReLUGrads<T> pg = prelu_backward(iv(0), p.prelu, go);
                detail::add_into(gin(0), pg.d_input);
                auto& ds = out.d_slope[static_cast<size_t>(i)];
                if (ds.empty()) ds.assign(pg.d_slope.size(), static_cast<T>(0));
                for (size_t k = 0; k < ds.size(); ++k) ds[k] += pg.d_slope[k];
                break;
            }
            case NodeKind::Add:
                for (size_t k = 0; k < n.inputs.size(); ++k) detail::add_into(gin(static_cast<int>(k)), go);
                break;
            case NodeKind::ConcatChannels: {
                int64_t off = 0;
                for (size_t k = 0; k < n.inputs.size(); ++k) {
                    const int64_t ck = iv(static_cast<int>(k)).shape().c;
                    detail::add_into(gin(static_cast<int>(k)), slice_channels(go, off, off + ck));
                    off += ck;
                }
                break;
            }
            case NodeKind::HFFSum: {
                detail::add_into(gin(0), go);  // the branch sees every output channel
                const Shape ps = iv(1).shape();
                const int64_t overlap = std::min(ps.c, go.shape().c);
                Tensor<T> dp = zeros<T>(ps);
                const Tensor<T> head = slice_channels(go, 0, overlap);
                for (int64_t n = 0; n < ps.n; ++n)
                    std::copy(head.data() + n * overlap * ps.plane(), head.data() + (n + 1) * overlap * ps.plane(),
                              dp.data() + n * ps.c * ps.plane());
                detail::add_into(gin(1), dp);
                break;
            }
            default: throw std::logic_error("graph_backward: unreachable node kind");
        }
    }
    out.d_input = grads[static_cast<size_t>(g.plan.input)];
    if (out.d_input.empty()) out.d_input = zeros<T>(input.shape());
    return out;
}

}  // namespace c3
