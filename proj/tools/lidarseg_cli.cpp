// Command-line front end: generate, train, eval, ablate, predict, bench.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "lidarseg/ablation.hpp"
#include "lidarseg/checkpoint.hpp"
#include "lidarseg/dataset.hpp"
#include "lidarseg/error.hpp"
#include "lidarseg/evaluation.hpp"
#include "lidarseg/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace lidarseg;

namespace {

json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    out << text;
    if (!out) throw IoError("write failed: " + path.string());
}

template <typename C>
C load_config(const std::string& path) {
    if (path.empty()) return C{};
    try {
        return read_json_file(path).get<C>();
    } catch (const json::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

// The network config of a checkpoint: --net if given, otherwise net.json
// next to the checkpoint.
network::NetworkConfig config_for_checkpoint(const fs::path& ckpt, const std::string& net_path) {
    const fs::path p = net_path.empty() ? ckpt.parent_path() / "net.json" : fs::path(net_path);
    if (!fs::exists(p)) throw UsageError("no network config: pass --net or place net.json next to the checkpoint");
    return load_config<network::NetworkConfig>(p.string());
}

std::vector<int> parse_int_list(const std::string& s) {
    std::vector<int> out;
    std::istringstream in(s);
    std::string item;
    while (std::getline(in, item, ',')) {
        try {
            out.push_back(std::stoi(item));
        } catch (const std::exception&) {
            throw UsageError("'" + s + "' is not a comma-separated integer list");
        }
    }
    return out;
}

void print_report(const evaluation::EvalReport& r) {
    using evaluation::format_optional;
    std::cout << "windows " << r.windows << ", " << std::fixed << std::setprecision(2) << r.ms_per_window
              << " ms/window\n";
    std::cout << "overall human IoU " << format_optional(r.overall_iou) << '\n';
    for (const auto& b : r.buckets)
        std::cout << "  " << std::setw(8) << b.bucket.label() << "  IoU " << format_optional(b.iou) << "  (TP "
                  << b.counts.tp << ", FP " << b.counts.fp << ", FN " << b.counts.fn << ")\n";
    std::cout << "velocity error human " << format_optional(r.velocity_error_human) << " m/s (zero predictor "
              << format_optional(r.zero_velocity_error_human) << ")\n";
    std::cout << "velocity error background " << format_optional(r.velocity_error_background)
              << " m/s (zero predictor " << format_optional(r.zero_velocity_error_background) << ")\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Range-image human segmentation and velocity estimation toolkit"};
    app.require_subcommand(1);

    auto* gen = app.add_subcommand("generate", "Generate a synthetic sequence dataset");
    std::string gen_config, gen_out;
    int gen_count = 0;
    std::uint64_t gen_seed = 0;
    gen->add_option("--config", gen_config, "Scene config JSON (defaults if omitted)");
    gen->add_option("--out", gen_out, "Output directory")->required();
    gen->add_option("--count", gen_count, "Number of sequences")->required()->check(CLI::PositiveNumber);
    gen->add_option("--seed", gen_seed, "Dataset seed")->required();

    auto* tr = app.add_subcommand("train", "Train a model");
    std::string tr_data, tr_net, tr_train, tr_out, tr_resume;
    std::uint64_t tr_stop = 0;
    bool tr_validate = false;
    tr->add_option("--data", tr_data, "Dataset directory")->required();
    tr->add_option("--net", tr_net, "Network config JSON");
    tr->add_option("--train", tr_train, "Training config JSON");
    tr->add_option("--out", tr_out, "Run directory")->required();
    tr->add_option("--resume", tr_resume, "Checkpoint to resume from");
    tr->add_option("--stop-after", tr_stop, "Stop after this many total optimizer steps");
    tr->add_flag("--validate", tr_validate, "Select ckpt_best by validation IoU after each epoch");

    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
    std::string ev_ckpt, ev_data, ev_net, ev_buckets = "0:inf,0:4,4:8,8:inf", ev_split = "test", ev_csv;
    int ev_first = -1;
    ev->add_option("--ckpt", ev_ckpt, "Checkpoint")->required();
    ev->add_option("--data", ev_data, "Dataset directory")->required();
    ev->add_option("--net", ev_net, "Network config JSON (default: net.json beside the checkpoint)");
    ev->add_option("--buckets", ev_buckets, "Range buckets, e.g. 0:4,4:8,8:inf");
    ev->add_option("--split", ev_split, "Split to evaluate")->check(CLI::IsMember({"train", "val", "test"}));
    ev->add_option("--first-target", ev_first, "First target frame index (default n-1)");
    ev->add_option("--csv", ev_csv, "Also write the report as CSV");

    auto* ab = app.add_subcommand("ablate", "Component and frame-count ablation tables");
    std::string ab_data, ab_out, ab_net, ab_train, ab_frames = "1,2,4,8,16", ab_plot;
    int ab_seeds = 3;
    bool ab_no_components = false, ab_no_frames = false;
    ab->add_option("--data", ab_data, "Dataset directory (train and test splits)")->required();
    ab->add_option("--seeds", ab_seeds, "Seeds per cell")->check(CLI::PositiveNumber);
    ab->add_option("--out", ab_out, "Output CSV")->required();
    ab->add_option("--net", ab_net, "Base network config JSON");
    ab->add_option("--train", ab_train, "Training config JSON");
    ab->add_option("--frames", ab_frames, "Frame sweep");
    ab->add_option("--plot", ab_plot, "IoU-vs-frames SVG (default: beside --out)");
    ab->add_flag("--no-components", ab_no_components, "Skip the component table");
    ab->add_flag("--no-frames", ab_no_frames, "Skip the frame sweep");

    auto* pr = app.add_subcommand("predict", "Export predictions for one window");
    std::string pr_ckpt, pr_window, pr_out, pr_net;
    int pr_target = -1;
    pr->add_option("--ckpt", pr_ckpt, "Checkpoint")->required();
    pr->add_option("--window", pr_window, "Sequence directory")->required();
    pr->add_option("--out", pr_out, "Output directory")->required();
    pr->add_option("--net", pr_net, "Network config JSON (default: net.json beside the checkpoint)");
    pr->add_option("--target", pr_target, "Target frame index (default: last frame)");

    auto* be = app.add_subcommand("bench", "Measure per-window inference time");
    std::string be_ckpt, be_net;
    int be_reps = 50;
    be->add_option("--ckpt", be_ckpt, "Checkpoint")->required();
    be->add_option("--net", be_net, "Network config JSON (default: net.json beside the checkpoint)");
    be->add_option("--reps", be_reps, "Timed repetitions")->check(CLI::Range(10, 100000));

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            auto config = load_config<datagen::SceneConfig>(gen_config);
            config.validate();
            const auto split = datagen::default_split(gen_count);
            const auto m = datagen::generate_dataset(config, split, gen_seed, gen_out);
            std::cout << "wrote " << m.train.size() << " train, " << m.val.size() << " val, " << m.test.size()
                      << " test sequences to " << gen_out << '\n';
        } else if (tr->parsed()) {
            const auto net = load_config<network::NetworkConfig>(tr_net);
            const auto cfg = load_config<training::TrainConfig>(tr_train);
            const auto data = datagen::load_split(tr_data, "train");
            std::vector<datagen::SequenceSample> val;
            training::TrainOptions options;
            options.out_dir = tr_out;
            if (tr_validate) {
                val = datagen::load_split(tr_data, "val");
                options.validation = &val;
            }
            if (!tr_resume.empty()) options.resume_from = fs::path(tr_resume);
            if (tr->count("--stop-after")) options.stop_after_step = tr_stop;
            options.on_epoch = [](const training::MetricsRow& row) {
                std::cout << training::metrics_line(row) << std::endl;
            };
            write_text(fs::path(tr_out) / "net.json", json(net).dump(2) + "\n");
            write_text(fs::path(tr_out) / "train.json", json(cfg).dump(2) + "\n");
            std::cout << training::metrics_header() << '\n';
            const auto result = training::train(data, net, cfg, options);
            if (result.skipped_samples)
                std::cerr << "warning: skipped " << result.skipped_samples << " samples shorter than " << net.frames
                          << " frames\n";
            std::cout << "final checkpoint " << (fs::path(tr_out) / "ckpt_last.lsqw").string() << " after "
                      << result.adam.step << " steps\n";
        } else if (ev->parsed()) {
            const auto net = config_for_checkpoint(ev_ckpt, ev_net);
            const auto params = tensorcore::load_params(ev_ckpt);
            const auto data = datagen::load_split(ev_data, ev_split);
            evaluation::EvalOptions options;
            options.first_target_frame = ev_first;
            const auto report = evaluation::evaluate(params, net, data, evaluation::parse_buckets(ev_buckets), options);
            print_report(report);
            if (!ev_csv.empty()) write_text(ev_csv, evaluation::report_csv(report));
        } else if (ab->parsed()) {
            evaluation::AblationProtocol protocol;
            protocol.base = load_config<network::NetworkConfig>(ab_net);
            protocol.train = load_config<training::TrainConfig>(ab_train);
            protocol.seeds.clear();
            for (int s = 0; s < ab_seeds; ++s) protocol.seeds.push_back(static_cast<std::uint64_t>(s));
            protocol.frame_sweep = parse_int_list(ab_frames);
            protocol.run_component_table = !ab_no_components;
            protocol.run_frame_table = !ab_no_frames;
            const auto train = datagen::load_split(ab_data, "train");
            const auto test = datagen::load_split(ab_data, "test");
            const auto result = evaluation::ablate(train, test, protocol, [](const evaluation::AblationRun& r) {
                std::cout << "trained n=" << r.config.frames << " velocity=" << r.config.has_velocity_head()
                          << " propagation=" << r.config.propagates() << " seed=" << r.seed
                          << ": IoU " << evaluation::format_optional(r.report.overall_iou) << std::endl;
            });
            std::string csv;
            if (result.components) {
                csv += evaluation::table_csv(*result.components);
                std::cout << '\n' << evaluation::table_text(*result.components);
            }
            if (result.frames) {
                csv += evaluation::table_csv(*result.frames);
                std::cout << '\n' << evaluation::table_text(*result.frames);
                const fs::path plot = ab_plot.empty() ? fs::path(ab_out).replace_extension(".svg") : fs::path(ab_plot);
                write_text(plot, evaluation::frames_plot_svg(*result.frames));
            }
            write_text(ab_out, csv);
        } else if (pr->parsed()) {
            const auto net = config_for_checkpoint(pr_ckpt, pr_net);
            const auto params = tensorcore::load_params(pr_ckpt);
            const auto seq = datagen::read_sequence(pr_window);
            const int target = pr_target < 0 ? static_cast<int>(seq.frames.size()) - 1 : pr_target;
            if (target >= static_cast<int>(seq.frames.size()) || target + 1 < net.frames)
                throw UsageError("target frame " + std::to_string(target) + " needs " + std::to_string(net.frames) +
                                 " frames ending inside the sequence");
            const std::span<const datagen::Frame> window(seq.frames.data() + (target + 1 - net.frames),
                                                         static_cast<std::size_t>(net.frames));
            const auto s = evaluation::export_prediction(params, net, window, pr_out);
            std::cout << "wrote " << s.points << " points; TP " << s.counts.tp << ", FP " << s.counts.fp << ", FN "
                      << s.counts.fn << ", TN " << s.counts.tn << '\n';
        } else if (be->parsed()) {
            const auto net = config_for_checkpoint(be_ckpt, be_net);
            const auto params = tensorcore::load_params(be_ckpt);
            const auto stats = evaluation::measure_runtime(params, net, be_reps);
            std::cout << std::fixed << std::setprecision(3) << "n=" << net.frames << " " << net.height << "x"
                      << net.width << " C=" << net.base_channels << ": median " << stats.median_ms << " ms, p90 "
                      << stats.p90_ms << " ms over " << be_reps << " runs (" << stats.warmup << " warm-up)\n";
            // Orderings checked on freshly built models of the same shape.
            auto timed = [&](network::NetworkConfig c) {
                return evaluation::measure_runtime(network::build(c, 0), c, be_reps).median_ms;
            };
            auto n1 = net, n8 = net, wide = net;
            n1.frames = 1;
            n8.frames = 8;
            wide.width *= 2;
            const double t1 = timed(n1), t8 = timed(n8), tw = timed(wide), tn = timed(net);
            std::cout << "check n=8 (" << t8 << " ms) >= n=1 (" << t1 << " ms): " << (t8 >= t1 ? "ok" : "VIOLATED")
                      << '\n';
            std::cout << "check width " << wide.width << " (" << tw << " ms) > width " << net.width << " (" << tn
                      << " ms): " << (tw > tn ? "ok" : "VIOLATED") << '\n';
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
