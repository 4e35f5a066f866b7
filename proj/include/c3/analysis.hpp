#pragma once

#include <iomanip>
#include <map>
#include <ostream>

#include "c3/graph.hpp"

namespace c3 {

// How elementwise additions are priced. The source tables count one add as
// H_o*W_o regardless of channel count; the physically complete per-element
// convention is available behind the Full flag.
enum class AddConvention { Paper, Full };

struct CostRow {
    std::string id;
    std::string kind;
    std::string component;
    int64_t params = 0;
    int64_t flops = 0;
};

struct CostReport {
    std::vector<CostRow> rows;  // one per node, in plan order
    int64_t total_params = 0;
    int64_t total_flops = 0;
};

// ------ exact per-node accounting ------

// Learnable parameter count. Convs: Kh*Kw*Ci*Co/g (bias-free). BatchNorm: 2C
// (gamma, beta). PReLU: C. Joins and resampling carry none.
inline int64_t node_params(const PlanNode& n) {
    switch (n.kind) {
        case NodeKind::Conv:
        case NodeKind::DepthwiseConv:
        case NodeKind::PointwiseConv:
        case NodeKind::Deconv: return n.spec.weight_count();
        case NodeKind::BatchNorm: return 2 * n.channels;
        case NodeKind::PReLU: return n.channels;
        default: return 0;
    }
}

// Exact FLOPs for one node, multiply and add counted separately. in/out are
// the inferred shapes; the batch dimension is ignored (N=1 convention).
inline int64_t node_flops(const PlanNode& n, const Shape& in, const Shape& out, AddConvention add_conv) {
    const int64_t hw_in = in.h * in.w;
    const int64_t hw_out = out.h * out.w;
    switch (n.kind) {
        case NodeKind::Conv:
        case NodeKind::DepthwiseConv:
        case NodeKind::PointwiseConv:
            return 2 * hw_out * n.spec.kernel_h * n.spec.kernel_w * n.spec.in_channels * n.spec.out_channels /
                   n.spec.groups;
        case NodeKind::Deconv:
            return 2 * hw_in * n.spec.kernel_h * n.spec.kernel_w * n.spec.in_channels * n.spec.out_channels /
                   n.spec.groups;
        case NodeKind::BatchNorm: return 2 * hw_in * in.c;
        case NodeKind::PReLU: return hw_in * in.c;
        case NodeKind::AvgPool: return hw_in * in.c;
        case NodeKind::BilinearUpsample: return 3 * hw_in * in.c;
        case NodeKind::Add: {
            const int64_t joins = static_cast<int64_t>(n.inputs.size()) - 1;
            return add_conv == AddConvention::Paper ? joins * hw_out : joins * hw_out * out.c;
        }
        case NodeKind::HFFSum: return add_conv == AddConvention::Paper ? hw_out : hw_out * out.c;
        default: return 0;  // input/output/concat
    }
}

inline CostReport count_params(const GraphPlan& g) {
    CostReport r;
    for (const auto& n : g.nodes) {
        CostRow row;
        row.id = n.id;
        row.kind = node_kind_name(n.kind);
        row.component = n.component;
        row.params = node_params(n);
        r.total_params += row.params;
        r.rows.push_back(std::move(row));
    }
    return r;
}

inline CostReport count_flops(const GraphPlan& g, int64_t input_h, int64_t input_w,
                              AddConvention add_conv = AddConvention::Paper) {
    // channel count of the graph input is dictated by its consumers;
    // walk the plan to find one so callers only supply H and W
    int64_t in_c = 1;
    for (const auto& n : g.nodes) {
        bool consumes_input = false;
        for (int j : n.inputs) consumes_input = consumes_input || j == g.input;
        if (!consumes_input) continue;
        if (is_conv_family(n.kind)) in_c = n.spec.in_channels;
        else if ((n.kind == NodeKind::BatchNorm || n.kind == NodeKind::PReLU) && n.channels >= 1) in_c = n.channels;
        else continue;
        break;
    }
    CostReport r;
    const auto shapes = g.infer_shapes(Shape{1, in_c, input_h, input_w});
    for (int i = 0; i < g.size(); ++i) {
        const PlanNode& n = g.node(i);
        CostRow row;
        row.id = n.id;
        row.kind = node_kind_name(n.kind);
        row.component = n.component;
        row.params = node_params(n);
        const Shape in_shape = n.inputs.empty() ? shapes[static_cast<size_t>(i)]
                                                : shapes[static_cast<size_t>(n.inputs.front())];
        row.flops = node_flops(n, in_shape, shapes[static_cast<size_t>(i)], add_conv);
        r.total_params += row.params;
        r.total_flops += row.flops;
        r.rows.push_back(std::move(row));
    }
    return r;
}

// ------ display formatting ------

// Integer half-up rounding of flops/1e6 to `decimals` places.
inline std::string format_mflops(int64_t flops, int decimals) {
    int64_t p = 1;
    for (int i = 0; i < decimals; ++i) p *= 10;
    const int64_t q = (flops * p + 500000) / 1000000;
    std::string head = std::to_string(q / p);
    if (decimals == 0) return head;
    std::string frac = std::to_string(q % p);
    frac.insert(frac.begin(), static_cast<size_t>(decimals) - frac.size(), '0');
    return head + "." + frac;
}

// Row values display one decimal above 1M, three below (small elementwise
// rows would otherwise vanish); totals get two decimals above 1M.
inline int row_decimals(int64_t flops) { return flops < 1000000 ? 3 : 1; }
inline int total_decimals(int64_t flops) { return flops < 1000000 ? 3 : 2; }

inline std::string format_row_mflops(int64_t flops) { return format_mflops(flops, row_decimals(flops)); }
inline std::string format_total_mflops(int64_t flops) { return format_mflops(flops, total_decimals(flops)); }

inline std::string format_grouped(int64_t v) {
    std::string s = std::to_string(v);
    for (int i = static_cast<int>(s.size()) - 3; i > 0; i -= 3) s.insert(static_cast<size_t>(i), ",");
    return s;
}

// Aligned table with per-component subtotals (the A/B/C/D rows of module
// reports) followed by per-node detail and the totals line.
inline void emit_table(std::ostream& os, const CostReport& r) {
    std::map<std::string, std::pair<int64_t, int64_t>> comp;  // ordered by label
    bool any_component = false;
    for (const auto& row : r.rows) {
        if (row.component.empty()) continue;
        any_component = true;
        comp[row.component].first += row.params;
        comp[row.component].second += row.flops;
    }
    if (any_component) {
        os << "component  params       flops(M)\n";
        for (const auto& [label, pf] : comp)
            os << std::left << std::setw(10) << label << " " << std::setw(12) << format_grouped(pf.first) << " "
               << format_row_mflops(pf.second) << "\n";
        os << "\n";
    }
    os << std::left << std::setw(16) << "node" << std::setw(18) << "kind" << std::setw(6) << "comp" << std::right
       << std::setw(12) << "params" << std::setw(14) << "flops(M)" << "\n";
    for (const auto& row : r.rows) {
        if (row.kind == "input" || row.kind == "output") continue;
        os << std::left << std::setw(16) << row.id << std::setw(18) << row.kind << std::setw(6)
           << (row.component.empty() ? "-" : row.component) << std::right << std::setw(12)
           << format_grouped(row.params) << std::setw(14) << format_row_mflops(row.flops) << "\n";
    }
    os << "total: " << format_grouped(r.total_params) << " params, " << format_total_mflops(r.total_flops)
       << "M flops (" << r.total_flops << " exact)\n";
}

// Line-delimited records, one JSON object per node plus a trailing totals record.
inline void emit_machine(std::ostream& os, const CostReport& r) {
    for (const auto& row : r.rows) {
        os << "{\"id\":\"" << row.id << "\",\"kind\":\"" << row.kind << "\"";
        if (!row.component.empty()) os << ",\"component\":\"" << row.component << "\"";
        os << ",\"params\":" << row.params << ",\"flops_exact\":" << row.flops << ",\"flops_formatted\":\""
           << format_row_mflops(row.flops) << "\"}\n";
    }
    os << "{\"id\":\"total\",\"kind\":\"total\",\"params\":" << r.total_params << ",\"flops_exact\":" << r.total_flops
       << ",\"flops_formatted\":\"" << format_total_mflops(r.total_flops) << "\"}\n";
}

// ------ receptive field ------

struct ReceptiveField {
    int64_t rf_h = 1;
    int64_t rf_w = 1;
    bool operator==(const ReceptiveField& o) const { return rf_h == o.rf_h && rf_w == o.rf_w; }
};

namespace detail {

inline void rf_require_stride1(const PlanNode& n) {
    if (is_conv_family(n.kind) && n.spec.stride != 1)
        throw std::invalid_argument("receptive_field: stride != 1 unsupported (node '" + n.id + "')");
    if (n.kind == NodeKind::Deconv || n.kind == NodeKind::AvgPool || n.kind == NodeKind::BilinearUpsample)
        throw std::invalid_argument("receptive_field: resampling node '" + n.id + "' unsupported");
}

}  // namespace detail

// Per-axis growth rf += d*(k-1) composed along every path; joins take the
// maximum over their inputs. `stage_filter`, when non-empty, zeroes the
// contribution of nodes tagged with a different stage, which yields the
// stage-restricted field (e.g. the comprehensive stage alone).
inline ReceptiveField receptive_field(const GraphPlan& g, const std::string& stage_filter = "") {
    g.require_finalized();
    std::vector<ReceptiveField> rf(g.nodes.size());
    for (int i : g.order()) {
        const PlanNode& n = g.node(i);
        detail::rf_require_stride1(n);
        ReceptiveField r;  // max over inputs
        for (int j : n.inputs) {
            r.rf_h = std::max(r.rf_h, rf[static_cast<size_t>(j)].rf_h);
            r.rf_w = std::max(r.rf_w, rf[static_cast<size_t>(j)].rf_w);
        }
        if (is_conv_family(n.kind) && (stage_filter.empty() || n.stage == stage_filter)) {
            r.rf_h += n.spec.dilation * (n.spec.kernel_h - 1);
            r.rf_w += n.spec.dilation * (n.spec.kernel_w - 1);
        }
        rf[static_cast<size_t>(i)] = r;
    }
    return rf[static_cast<size_t>(g.output)];
}

// Sequential stack form.
inline ReceptiveField receptive_field(const std::vector<ConvSpec>& stack) {
    ReceptiveField r;
    for (const auto& s : stack) {
        if (s.stride != 1) throw std::invalid_argument("receptive_field: stride != 1 unsupported");
        r.rf_h += s.dilation * (s.kernel_h - 1);
        r.rf_w += s.dilation * (s.kernel_w - 1);
    }
    return r;
}

inline bool has_stage_labels(const GraphPlan& g) {
    for (const auto& n : g.nodes)
        if (!n.stage.empty()) return true;
    return false;
}

// ------ dilation coverage ------

// Contribution counts of relative input offsets for a stack of dilated
// square kernels. counts[(dy+R)*extent + (dx+R)] = number of distinct
// tap-composition paths reaching offset (dy,dx); R = (extent-1)/2.
struct CoverageMap {
    std::vector<int64_t> dilations;
    int64_t kernel = 3;
    int64_t extent = 1;  // per-axis grid extent, odd
    std::vector<int64_t> counts;
    std::vector<std::pair<int64_t, int64_t>> holes;  // (dy,dx) offsets with count 0

    int64_t radius() const { return (extent - 1) / 2; }
    int64_t count_at(int64_t dy, int64_t dx) const {
        return counts[static_cast<size_t>((dy + radius()) * extent + (dx + radius()))];
    }
    int64_t cells() const { return extent * extent; }
};

// Computed separably: per-axis path counts compose by discrete convolution
// across layers, and the 2-D count is their outer product.
inline CoverageMap coverage_map(const std::vector<int64_t>& dilations, int64_t kernel = 3) {
    if (dilations.empty()) throw std::invalid_argument("coverage_map: empty dilation schedule");
    if (kernel < 1 || kernel % 2 == 0) throw std::invalid_argument("coverage_map: kernel must be odd and >= 1");
    for (int64_t d : dilations)
        if (d < 1) throw std::invalid_argument("coverage_map: dilation rates must be >= 1");
    const int64_t half = (kernel - 1) / 2;
    int64_t radius = 0;
    for (int64_t d : dilations) radius += d * half;
    const int64_t extent = 2 * radius + 1;
    std::vector<int64_t> axis(static_cast<size_t>(extent), 0);
    axis[static_cast<size_t>(radius)] = 1;  // single path at the center before any layer
    for (int64_t d : dilations) {
        std::vector<int64_t> next(static_cast<size_t>(extent), 0);
        for (int64_t i = 0; i < extent; ++i) {
            if (axis[static_cast<size_t>(i)] == 0) continue;
            for (int64_t t = -half; t <= half; ++t)
                next[static_cast<size_t>(i + t * d)] += axis[static_cast<size_t>(i)];
        }
        axis = std::move(next);
    }
    CoverageMap cm;
    cm.dilations = dilations;
    cm.kernel = kernel;
    cm.extent = extent;
    cm.counts.resize(static_cast<size_t>(extent * extent));
    for (int64_t y = 0; y < extent; ++y)
        for (int64_t x = 0; x < extent; ++x) {
            const int64_t c = axis[static_cast<size_t>(y)] * axis[static_cast<size_t>(x)];
            cm.counts[static_cast<size_t>(y * extent + x)] = c;
            if (c == 0) cm.holes.emplace_back(y - radius, x - radius);
        }
    return cm;
}

// Holes inside the centered window of the given (odd) extent; lets schedules
// with different bounding fields be compared over the smaller field.
inline int64_t holes_within(const CoverageMap& cm, int64_t window_extent) {
    if (window_extent < 1 || window_extent % 2 == 0 || window_extent > cm.extent)
        throw std::invalid_argument("holes_within: bad window extent");
    const int64_t wr = (window_extent - 1) / 2;
    int64_t holes = 0;
    for (int64_t dy = -wr; dy <= wr; ++dy)
        for (int64_t dx = -wr; dx <= wr; ++dx) holes += cm.count_at(dy, dx) == 0;
    return holes;
}

inline void emit_coverage_grid(std::ostream& os, const CoverageMap& cm) {
    const int64_t r = cm.radius();
    int64_t width = 1;
    for (int64_t c : cm.counts) width = std::max(width, static_cast<int64_t>(std::to_string(c).size()));
    for (int64_t dy = -r; dy <= r; ++dy) {
        for (int64_t dx = -r; dx <= r; ++dx) {
            const int64_t c = cm.count_at(dy, dx);
            os << std::setw(static_cast<int>(width)) << (c == 0 ? "." : std::to_string(c))
               << (dx == r ? "" : " ");
        }
        os << "\n";
    }
    os << "holes: " << cm.holes.size() << " / " << cm.cells() << "\n";
}

inline void emit_coverage_record(std::ostream& os, const CoverageMap& cm) {
    os << "{\"dilations\":[";
    for (size_t i = 0; i < cm.dilations.size(); ++i) os << (i ? "," : "") << cm.dilations[i];
    os << "],\"kernel\":" << cm.kernel << ",\"extent\":" << cm.extent << ",\"cells\":" << cm.cells()
       << ",\"hole_count\":" << cm.holes.size() << ",\"holes\":[";
    for (size_t i = 0; i < cm.holes.size(); ++i)
        os << (i ? "," : "") << "[" << cm.holes[i].first << "," << cm.holes[i].second << "]";
    os << "]}\n";
}

}  // namespace c3
