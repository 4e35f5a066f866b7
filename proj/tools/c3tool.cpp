#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "c3/bench.hpp"
#include "c3/config.hpp"
#include "c3/toy.hpp"
#include "c3/verify.hpp"

namespace {

struct VerificationFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::pair<int64_t, int64_t> parse_hw(const std::string& s) {
    const auto x = s.find('x');
    if (x == std::string::npos || x == 0 || x + 1 >= s.size())
        throw c3::ConfigError("--input-size expects HxW, e.g. 128x128, got \"" + s + "\"");
    try {
        return {std::stoll(s.substr(0, x)), std::stoll(s.substr(x + 1))};
    } catch (const std::exception&) {
        throw c3::ConfigError("--input-size expects integers, got \"" + s + "\"");
    }
}

std::vector<int64_t> parse_int_list(const std::string& s) {
    std::vector<int64_t> out;
    std::string cur;
    for (char ch : s + ",") {
        if (ch == ',') {
            if (cur.empty()) continue;
            try {
                out.push_back(std::stoll(cur));
            } catch (const std::exception&) {
                throw c3::ConfigError("expected a comma-separated integer list, got \"" + s + "\"");
            }
            cur.clear();
        } else {
            cur.push_back(ch);
        }
    }
    return out;
}

void cmd_analyze(const std::string& config_path, const std::string& input_size, const std::string& convention,
                 const std::string& format) {
    const c3::ModelConfig mc = c3::parse_config_file(config_path);
    int64_t h = mc.input_shape.h, w = mc.input_shape.w;
    if (!input_size.empty()) std::tie(h, w) = parse_hw(input_size);
    const c3::CostReport r = c3::count_flops(
        mc.plan, h, w, convention == "paper" ? c3::AddConvention::Paper : c3::AddConvention::Full);
    if (format == "table")
        c3::emit_table(std::cout, r);
    else
        c3::emit_machine(std::cout, r);
}

void cmd_rf(const std::string& config_path) {
    const c3::ModelConfig mc = c3::parse_config_file(config_path);
    const c3::ReceptiveField rf = c3::receptive_field(mc.plan);
    std::cout << "receptive field: " << rf.rf_h << "x" << rf.rf_w << "\n";
    if (c3::has_stage_labels(mc.plan)) {
        const c3::ReceptiveField comp = c3::receptive_field(mc.plan, "comprehensive");
        std::cout << "comprehensive-only: " << comp.rf_h << "x" << comp.rf_w << "\n";
    }
}

void cmd_coverage(const std::string& dilations, int64_t kernel, const std::string& out_path) {
    const c3::CoverageMap cm = c3::coverage_map(parse_int_list(dilations), kernel);
    c3::emit_coverage_grid(std::cout, cm);
    if (out_path.empty()) {
        c3::emit_coverage_record(std::cout, cm);
    } else {
        std::ofstream f(out_path);
        if (!f) throw c3::ConfigError("coverage: cannot write \"" + out_path + "\"");
        c3::emit_coverage_record(f, cm);
        std::cout << "record written to " << out_path << "\n";
    }
}

void cmd_verify(const std::string& suite, uint64_t seed) {
    const auto results = c3::run_verify_suite(suite, seed);
    int failed = 0;
    for (const auto& r : results) {
        std::cout << (r.pass ? "[PASS] " : "[FAIL] ") << r.name;
        if (!r.detail.empty()) std::cout << " -- " << r.detail;
        if (r.worst != 0.0) std::cout << " (worst " << r.worst << ")";
        std::cout << "\n";
        failed += !r.pass;
    }
    std::cout << results.size() - static_cast<size_t>(failed) << "/" << results.size() << " checks passed\n";
    if (failed) throw VerificationFailure(std::to_string(failed) + " verification check(s) failed");
}

void cmd_bench(const std::string& block, int64_t channels, int64_t hw, int64_t dilation, int reps, uint64_t seed,
               const std::string& precision) {
    const c3::BenchResult r = precision == "double"
                                  ? c3::run_bench<double>(block, channels, hw, dilation, reps, seed)
                                  : c3::run_bench<float>(block, channels, hw, dilation, reps, seed);
    std::cout << "block: " << r.block << "  input: " << r.input.str() << "  reps: " << r.reps << "\n";
    std::cout << "wall time: min " << r.min_ms << " ms, median " << r.median_ms << " ms\n";
    std::cout << "analyzer flops: " << r.flops << " (" << c3::format_total_mflops(r.flops) << "M)\n";
}

void cmd_train_toy(int steps, uint64_t seed) {
    const c3::ToyTrainResult r = c3::train_toy(steps, seed);
    for (size_t i = 0; i < r.losses.size(); ++i) std::cout << "step " << i << " loss " << r.losses[i] << "\n";
    if (steps > 0)
        std::cout << "initial " << r.initial() << " final " << r.final_loss() << " ratio "
                  << r.final_loss() / r.initial() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"concentrated-comprehensive convolution blocks: cost analysis, verification and demos"};
    app.require_subcommand(1);
    std::cout.precision(12);

    std::string config_path, input_size, convention = "paper", format = "table";
    auto* analyze = app.add_subcommand("analyze", "parameter/FLOPs report for a model config");
    analyze->add_option("config", config_path, "model config (JSON)")->required();
    analyze->add_option("--input-size", input_size, "HxW override, e.g. 128x128");
    analyze->add_option("--convention", convention, "elementwise add pricing")
        ->check(CLI::IsMember({"paper", "full"}));
    analyze->add_option("--format", format, "output format")->check(CLI::IsMember({"table", "machine"}));
    analyze->callback([&] { cmd_analyze(config_path, input_size, convention, format); });

    std::string rf_config;
    auto* rf = app.add_subcommand("rf", "receptive field of a model config");
    rf->add_option("config", rf_config, "model config (JSON)")->required();
    rf->callback([&] { cmd_rf(rf_config); });

    std::string dilations, coverage_out;
    int64_t coverage_kernel = 3;
    auto* coverage = app.add_subcommand("coverage", "offset coverage of a stacked dilation schedule");
    coverage->add_option("--dilations", dilations, "comma-separated rates, e.g. 2,4,8,16")->required();
    coverage->add_option("--kernel", coverage_kernel, "square kernel extent (odd)");
    coverage->add_option("--out", coverage_out, "write the machine-readable hole record here");
    coverage->callback([&] { cmd_coverage(dilations, coverage_kernel, coverage_out); });

    std::string suite = "all";
    uint64_t verify_seed = 0;
    auto* verify = app.add_subcommand("verify", "run the numeric verification suites");
    verify->add_option("--suite", suite, "oracle|grad|factorization|table1|all")
        ->check(CLI::IsMember({"oracle", "grad", "factorization", "table1", "all"}));
    verify->add_option("--seed", verify_seed, "randomization seed");
    verify->callback([&] { cmd_verify(suite, verify_seed); });

    std::string block = "c3_module", bench_precision = "single";
    int64_t channels = 128, hw = 64, dilation = 2;
    int reps = 5;
    uint64_t bench_seed = 0;
    auto* bench = app.add_subcommand("bench", "time one block forward pass against its analyzer cost");
    bench->add_option("--block", block, "block kind")
        ->check(CLI::IsMember({"c3", "rc3", "ds", "esp_module", "c3_module", "std_dilated"}));
    bench->add_option("--channels", channels, "channel count");
    bench->add_option("--hw", hw, "square input extent");
    bench->add_option("--dilation", dilation, "dilation rate (block kinds only)");
    bench->add_option("--reps", reps, "repetitions")->check(CLI::PositiveNumber);
    bench->add_option("--seed", bench_seed, "weight seed");
    bench->add_option("--precision", bench_precision, "element type")->check(CLI::IsMember({"single", "double"}));
    bench->callback([&] { cmd_bench(block, channels, hw, dilation, reps, bench_seed, bench_precision); });

    int steps = 200;
    uint64_t toy_seed = 0;
    auto* toy = app.add_subcommand("train_toy", "gradient-descent demo on synthetic rectangles");
    toy->alias("train-toy");
    toy->add_option("--steps", steps, "gradient steps")->check(CLI::NonNegativeNumber);
    toy->add_option("--seed", toy_seed, "data/weight seed");
    toy->callback([&] { cmd_train_toy(steps, toy_seed); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const c3::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const VerificationFailure& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
