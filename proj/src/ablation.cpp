#include "lidarseg/ablation.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>

#include "lidarseg/error.hpp"

namespace lidarseg::evaluation {

void AblationProtocol::validate() const {
    base.validate();
    train.validate();
    if (seeds.empty()) throw ConfigError("ablation needs at least one seed");
    if (!run_component_table && !run_frame_table) throw ConfigError("ablation has nothing to run");
    if (run_component_table && table_frames < 2)
        throw ConfigError("the component table needs at least 2 frames");
    if (run_frame_table && frame_sweep.empty()) throw ConfigError("empty frame sweep");
    for (int n : frame_sweep)
        if (n < 1) throw ConfigError("frame counts must be positive");
    for (const auto& b : buckets) b.validate();
}

CellStats summarize(const std::vector<std::optional<double>>& values) {
    CellStats s;
    s.values = values;
    double sum = 0.0, lo = 0.0, hi = 0.0;
    int count = 0;
    for (const auto& v : values) {
        if (!v) continue;
        lo = count ? std::min(lo, *v) : *v;
        hi = count ? std::max(hi, *v) : *v;
        sum += *v;
        ++count;
    }
    if (count) {
        s.mean = sum / count;
        s.spread = hi - lo;
    }
    return s;
}

namespace {

struct RunKey {
    int frames;
    bool velocity;
    bool propagation;
    bool feedback;
    std::uint64_t seed;
    auto operator<=>(const RunKey&) const = default;
};

NetworkConfig variant(const NetworkConfig& base, int frames, bool velocity, bool propagation) {
    NetworkConfig c = base;
    c.frames = frames;
    c.velocity_head_enabled = velocity;
    c.temporal_propagation_enabled = propagation;
    return c;
}

std::vector<std::optional<double>> row_values(const std::vector<AblationRun>& runs,
                                              const std::vector<std::size_t>& indices, std::size_t row,
                                              std::size_t bucket_count) {
    std::vector<std::optional<double>> out;
    for (auto i : indices) {
        const auto* r = &runs[i].report;
        if (row < bucket_count)
            out.push_back(r->buckets[row].iou);
        else if (row == bucket_count)
            out.push_back(r->velocity_error_human);
        else
            out.push_back(r->zero_velocity_error_human);
    }
    return out;
}

}  // namespace

AblationResult ablate(const std::vector<datagen::SequenceSample>& train_split,
                      const std::vector<datagen::SequenceSample>& test_split, const AblationProtocol& protocol,
                      const AblationProgress& progress) {
    protocol.validate();
    int longest = protocol.run_component_table ? protocol.table_frames : 1;
    if (protocol.run_frame_table)
        longest = std::max(longest, *std::max_element(protocol.frame_sweep.begin(), protocol.frame_sweep.end()));
    for (const auto& s : test_split)
        if (static_cast<int>(s.frames.size()) < longest)
            throw ConfigError("test sequences must hold at least " + std::to_string(longest) + " frames");
    EvalOptions eval_options;
    eval_options.first_target_frame = longest - 1;

    AblationResult result;
    std::map<RunKey, std::size_t> cache;
    auto run = [&](const NetworkConfig& c, std::uint64_t seed) -> std::size_t {
        const RunKey key{c.frames, c.has_velocity_head(), c.propagates(), c.feeds_back(), seed};
        if (auto it = cache.find(key); it != cache.end()) return it->second;
        training::TrainConfig tc = protocol.train;
        tc.seed = seed;
        const auto trained = training::train(train_split, c, tc);
        AblationRun r{c, seed, evaluate(trained.params, c, test_split, protocol.buckets, eval_options)};
        result.runs.push_back(std::move(r));
        cache.emplace(key, result.runs.size() - 1);
        if (progress) progress(result.runs.back());
        return result.runs.size() - 1;
    };

    auto build_table = [&](std::string title, std::vector<std::string> columns, std::vector<NetworkConfig> configs) {
        AblationTable t;
        t.title = std::move(title);
        t.columns = std::move(columns);
        t.column_configs = std::move(configs);
        for (const auto& b : protocol.buckets) t.rows.push_back("iou " + b.label());
        t.rows.push_back("velocity error human");
        t.rows.push_back("zero-velocity error human");
        std::vector<std::vector<std::size_t>> runs(t.columns.size());
        for (std::size_t c = 0; c < t.columns.size(); ++c)
            for (auto seed : protocol.seeds) runs[c].push_back(run(t.column_configs[c], seed));
        t.cells.assign(t.rows.size(), std::vector<CellStats>(t.columns.size()));
        for (std::size_t r = 0; r < t.rows.size(); ++r)
            for (std::size_t c = 0; c < t.columns.size(); ++c)
                t.cells[r][c] = summarize(row_values(result.runs, runs[c], r, protocol.buckets.size()));
        return t;
    };

    const int n = protocol.table_frames;
    if (protocol.run_component_table) {
        result.components = build_table(
            "components at " + std::to_string(n) + " frames",
            {"velocity off / propagation on", "velocity on / propagation off", "velocity on / propagation on"},
            {variant(protocol.base, n, false, true), variant(protocol.base, n, true, false),
             variant(protocol.base, n, true, true)});
    }
    if (protocol.run_frame_table) {
        std::vector<std::string> cols;
        std::vector<NetworkConfig> configs;
        for (int f : protocol.frame_sweep) {
            cols.push_back(std::to_string(f));
            configs.push_back(variant(protocol.base, f, true, true));
        }
        result.frames = build_table("number of input frames", std::move(cols), std::move(configs));
    }
    return result;
}

std::string table_csv(const AblationTable& t) {
    std::ostringstream os;
    os << "# " << t.title << '\n' << "row,column,mean,spread";
    const std::size_t seeds = t.cells.empty() || t.cells[0].empty() ? 0 : t.cells[0][0].values.size();
    for (std::size_t s = 0; s < seeds; ++s) os << ",seed" << s;
    os << '\n';
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        for (std::size_t c = 0; c < t.columns.size(); ++c) {
            const auto& cell = t.cells[r][c];
            os << t.rows[r] << ',' << t.columns[c] << ',' << format_optional(cell.mean, 6) << ','
               << std::fixed << std::setprecision(6) << cell.spread;
            for (const auto& v : cell.values) os << ',' << format_optional(v, 6);
            os << '\n';
        }
    }
    return os.str();
}

std::string table_text(const AblationTable& t) {
    std::ostringstream os;
    os << t.title << '\n';
    constexpr int first = 28, width = 32;
    os << std::left << std::setw(first) << "";
    for (const auto& c : t.columns) os << std::setw(width) << c;
    os << '\n';
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const bool iou_row = t.rows[r].rfind("iou", 0) == 0;
        os << std::setw(first) << t.rows[r];
        for (const auto& cell : t.cells[r]) {
            std::ostringstream v;
            if (!cell.mean) {
                v << "n/a";
            } else if (iou_row) {
                v << std::fixed << std::setprecision(2) << 100.0 * *cell.mean << " +/- " << 100.0 * cell.spread;
            } else {
                v << std::fixed << std::setprecision(3) << *cell.mean << " +/- " << cell.spread << " m/s";
            }
            os << std::setw(width) << v.str();
        }
        os << '\n';
    }
    return os.str();
}

std::string frames_plot_svg(const AblationTable& t) {
    if (t.rows.empty() || t.columns.empty()) throw UsageError("frames_plot_svg: empty table");
    constexpr double W = 480, H = 320, left = 60, right = 20, top = 30, bottom = 50;
    const std::size_t cols = t.columns.size();
    const auto& overall = t.cells[0];
    double lo = 1.0, hi = 0.0;
    for (const auto& cell : overall)
        for (const auto& v : cell.values)
            if (v) {
                lo = std::min(lo, *v);
                hi = std::max(hi, *v);
            }
    if (lo > hi) lo = 0.0, hi = 1.0;
    lo = std::max(0.0, std::floor(lo * 10.0 - 0.5) / 10.0);
    hi = std::min(1.0, std::ceil(hi * 10.0 + 0.5) / 10.0);
    if (hi <= lo) hi = lo + 0.1;
    auto x = [&](std::size_t c) { return left + (W - left - right) * (cols == 1 ? 0.5 : double(c) / double(cols - 1)); };
    auto y = [&](double v) { return top + (H - top - bottom) * (1.0 - (v - lo) / (hi - lo)); };

    std::ostringstream os;
    os << std::fixed << std::setprecision(1);
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << W / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">overall human IoU vs input frames</text>\n";
    os << "<line x1=\"" << left << "\" y1=\"" << H - bottom << "\" x2=\"" << W - right << "\" y2=\"" << H - bottom
       << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << H - bottom
       << "\" stroke=\"black\"/>\n";
    for (int k = 0; k <= 4; ++k) {
        const double v = lo + (hi - lo) * k / 4.0;
        os << "<text x=\"" << left - 6 << "\" y=\"" << y(v) + 4 << "\" text-anchor=\"end\" font-size=\"11\">"
           << std::setprecision(2) << v << std::setprecision(1) << "</text>\n";
    }
    for (std::size_t c = 0; c < cols; ++c)
        os << "<text x=\"" << x(c) << "\" y=\"" << H - bottom + 16 << "\" text-anchor=\"middle\" font-size=\"11\">"
           << t.columns[c] << "</text>\n";
    os << "<text x=\"" << W / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\" font-size=\"12\">frames</text>\n";
    for (std::size_t c = 0; c < cols; ++c)
        for (const auto& v : overall[c].values)
            if (v) os << "<circle cx=\"" << x(c) << "\" cy=\"" << y(*v) << "\" r=\"2.5\" fill=\"#999\"/>\n";
    os << "<polyline fill=\"none\" stroke=\"#1f5fbf\" stroke-width=\"2\" points=\"";
    for (std::size_t c = 0; c < cols; ++c)
        if (overall[c].mean) os << x(c) << ',' << y(*overall[c].mean) << ' ';
    os << "\"/>\n</svg>\n";
    return os.str();
}

}  // namespace lidarseg::evaluation
