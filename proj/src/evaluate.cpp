#include "hichunk/evaluate.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace hichunk {

using nlohmann::json;

std::string to_string(EvalMode mode) {
    switch (mode) {
        case EvalMode::EntropyGated: return "entropy-gated";
        case EvalMode::FixedHigh: return "fixed-high";
        case EvalMode::FixedMid: return "fixed-mid";
        case EvalMode::FixedLow: return "fixed-low";
    }
    return "entropy-gated";
}

EvalMode eval_mode_from_string(const std::string& s) {
    for (EvalMode m : {EvalMode::EntropyGated, EvalMode::FixedHigh, EvalMode::FixedMid, EvalMode::FixedLow}) {
        if (to_string(m) == s) return m;
    }
    throw std::invalid_argument("unknown eval mode '" + s + "'");
}

std::vector<std::string> eval_mode_names() { return {"entropy-gated", "fixed-high", "fixed-mid", "fixed-low"}; }

std::optional<int> fixed_index(EvalMode mode, int num_frequencies) {
    switch (mode) {
        case EvalMode::EntropyGated: return std::nullopt;
        case EvalMode::FixedHigh: return 0;
        case EvalMode::FixedMid: return num_frequencies / 2;
        case EvalMode::FixedLow: return num_frequencies - 1;
    }
    return std::nullopt;
}

EvalReport evaluate_policy(ChunkModel& model, const Task& task, const FrequencyLadder& ladder,
                           const EvalOptions& options) {
    RolloutConfig rc;
    rc.action_horizon = options.action_horizon;
    rc.samples = options.samples;
    rc.max_steps = options.max_steps;
    rc.fixed_frequency = fixed_index(options.mode, ladder.size());
    PolicyRunner runner = [&](const Task& t, std::uint64_t seed) {
        Rng rng(mix_seed(options.policy_seed, seed));
        return rollout(model, t, seed, ladder, rc, rng);
    };
    return evaluate(runner, task, options.episodes, options.env_seed);
}

double percentile(std::vector<double> values, double p) {
    if (values.empty()) throw std::invalid_argument("percentile of an empty set");
    if (!(p >= 0.0 && p <= 100.0)) throw std::invalid_argument("percentile must lie in [0, 100]");
    std::sort(values.begin(), values.end());
    const double pos = p / 100.0 * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

std::vector<double> thresholds_from_entropies(const std::vector<double>& entropies, int num_frequencies,
                                              double p_low, double p_high, std::size_t min_samples) {
    std::vector<double> finite;
    for (double h : entropies) {
        if (std::isfinite(h)) finite.push_back(h);
    }
    if (finite.size() < min_samples) {
        throw CalibrationError("calibration needs at least " + std::to_string(min_samples) + " decisions, got " +
                               std::to_string(finite.size()));
    }
    if (!(p_low < p_high)) throw CalibrationError("low percentile must be below the high percentile");
    const int inner = num_frequencies - 1;
    std::vector<double> out;
    for (int i = 0; i < inner; ++i) {
        const double p = inner == 1 ? p_low : p_low + (p_high - p_low) * i / (inner - 1);
        out.push_back(percentile(finite, p));
    }
    for (std::size_t i = 1; i < out.size(); ++i) {
        if (!(out[i] > out[i - 1])) throw CalibrationError("entropy percentiles are not strictly increasing");
    }
    return out;
}

std::vector<double> calibrate_thresholds(ChunkModel& model, const Task& task, const FrequencyLadder& ladder,
                                         const EvalOptions& options, double p_low, double p_high,
                                         std::vector<double>* entropies) {
    if (options.samples < 2) throw CalibrationError("calibration needs N >= 2");
    EvalOptions o = options;
    o.mode = EvalMode::FixedHigh;
    const auto report = evaluate_policy(model, task, ladder, o);
    std::vector<double> h;
    for (const auto& tr : report.traces) {
        for (const auto& d : tr.decisions) h.push_back(d.entropy);
    }
    if (entropies) *entropies = h;
    return thresholds_from_entropies(h, ladder.size(), p_low, p_high);
}

namespace {

std::string now_iso8601() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

}  // namespace

ResultRecord make_record(const EvalReport& report, const std::string& label, EvalMode mode) {
    ResultRecord r;
    r.timestamp = now_iso8601();
    r.label = label;
    r.task_id = report.task_id;
    r.mode = to_string(mode);
    r.episodes = report.episodes;
    r.success_rate = report.success_rate;
    r.mean_executed_commands = report.mean_executed_commands;
    r.mean_base_steps = report.mean_base_steps;
    r.aborted = report.aborted;
    return r;
}

void append_result(const std::filesystem::path& path, const ResultRecord& r) {
    std::ofstream os(path, std::ios::app);
    if (!os) throw std::runtime_error("cannot append to " + path.string());
    json j = {{"timestamp", r.timestamp},
              {"label", r.label},
              {"task", r.task_id},
              {"mode", r.mode},
              {"episodes", r.episodes},
              {"success_rate", r.success_rate},
              {"mean_executed_commands", r.mean_executed_commands},
              {"mean_base_steps", r.mean_base_steps},
              {"aborted", r.aborted}};
    os << j.dump() << '\n';
}

std::vector<ResultRecord> read_results(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open " + path.string());
    std::vector<ResultRecord> out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const json j = json::parse(line);
        ResultRecord r;
        r.timestamp = j.at("timestamp").get<std::string>();
        r.label = j.at("label").get<std::string>();
        r.task_id = j.at("task").get<std::string>();
        r.mode = j.at("mode").get<std::string>();
        r.episodes = j.at("episodes").get<int>();
        r.success_rate = j.at("success_rate").get<double>();
        r.mean_executed_commands = j.at("mean_executed_commands").get<double>();
        r.mean_base_steps = j.at("mean_base_steps").get<double>();
        r.aborted = j.at("aborted").get<int>();
        out.push_back(r);
    }
    return out;
}

void print_table(std::ostream& os, const std::vector<ResultRecord>& records) {
    os << std::left << std::setw(30) << "label" << ' ' << std::setw(21) << "task" << ' ' << std::setw(14) << "mode"
       << std::right
       << std::setw(8) << "SR" << std::setw(12) << "commands" << std::setw(12) << "base_steps" << '\n';
    for (const auto& r : records) {
        os << std::left << std::setw(30) << r.label << ' ' << std::setw(21) << r.task_id << ' ' << std::setw(14)
           << r.mode << std::right << std::fixed << std::setprecision(2) << std::setw(8) << r.success_rate << std::setw(12)
           << std::setprecision(1) << r.mean_executed_commands << std::setw(12) << r.mean_base_steps << '\n';
    }
    os.unsetf(std::ios::floatfield);
}

void write_entropy_csv(std::ostream& os, const RolloutTrace& trace) {
    os << "decision_index,base_step,entropy,frequency_index\n";
    os << std::setprecision(10);
    for (const auto& d : trace.decisions) {
        os << d.decision << ',' << d.base_step << ',';
        if (std::isfinite(d.entropy)) os << d.entropy;
        os << ',' << d.frequency_index << '\n';
    }
}

void write_entropy_svg(std::ostream& os, const RolloutTrace& trace, const std::vector<double>& thresholds) {
    const double w = 800, h = 300, pad = 40;
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (const auto& d : trace.decisions) {
        if (!std::isfinite(d.entropy)) continue;
        lo = std::min(lo, d.entropy);
        hi = std::max(hi, d.entropy);
    }
    for (double t : thresholds) {
        lo = std::min(lo, t);
        hi = std::max(hi, t);
    }
    if (!std::isfinite(lo)) {
        lo = -1.0;
        hi = 1.0;
    }
    if (hi - lo < 1e-9) {
        lo -= 0.5;
        hi += 0.5;
    }
    const auto n = static_cast<double>(std::max<std::size_t>(trace.decisions.size(), 2) - 1);
    auto px = [&](double i) { return pad + (w - 2 * pad) * i / n; };
    auto py = [&](double e) { return h - pad - (h - 2 * pad) * (e - lo) / (hi - lo); };
    static const char* colors[] = {"#dbeafe", "#fde68a", "#fecaca", "#d1fae5", "#e9d5ff"};
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    const double band = (w - 2 * pad) / (n + 1);
    for (std::size_t i = 0; i < trace.decisions.size(); ++i) {
        const int f = trace.decisions[i].frequency_index;
        os << "<rect x=\"" << px(static_cast<double>(i)) - band / 2 << "\" y=\"" << pad << "\" width=\"" << band
           << "\" height=\"" << h - 2 * pad << "\" fill=\"" << colors[static_cast<std::size_t>(f) % 5] << "\"/>\n";
    }
    for (double t : thresholds) {
        os << "<line x1=\"" << pad << "\" x2=\"" << w - pad << "\" y1=\"" << py(t) << "\" y2=\"" << py(t)
           << "\" stroke=\"gray\" stroke-dasharray=\"4 3\"/>\n";
    }
    os << "<polyline fill=\"none\" stroke=\"black\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < trace.decisions.size(); ++i) {
        const double e = trace.decisions[i].entropy;
        if (std::isfinite(e)) os << px(static_cast<double>(i)) << ',' << py(e) << ' ';
    }
    os << "\"/>\n";
    os << "<text x=\"" << pad << "\" y=\"20\" font-family=\"sans-serif\" font-size=\"12\">entropy per decision ("
       << trace.task_id << ", seed " << trace.seed << "), range [" << lo << ", " << hi << "]</text>\n";
    os << "</svg>\n";
}

}  // namespace hichunk
