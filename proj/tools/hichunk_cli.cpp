// hichunk: demo generation, training, evaluation, calibration, entropy plots and ablations.
//
// Exit codes: 0 ok, 1 user error (bad arguments, config, missing files), 2 internal error.

#include "hichunk/checkpoint.hpp"
#include "hichunk/config.hpp"
#include "hichunk/dataset.hpp"
#include "hichunk/envbench.hpp"
#include "hichunk/evaluate.hpp"
#include "hichunk/executor.hpp"
#include "hichunk/experiments.hpp"
#include "hichunk/training.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <set>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace hichunk;

namespace {

constexpr const char* kDataRootEnv = "HICHUNK_DATA_ROOT";

class UserError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ConfigArgs {
    std::string config_path;
    std::vector<std::string> overrides;
};

void add_config_args(CLI::App* cmd, ConfigArgs& args) {
    cmd->add_option("--config,-c", args.config_path, "flat JSON config file");
    cmd->add_option("overrides", args.overrides, "key=value config overrides");
}

std::pair<std::string, std::string> split_override(const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) throw UserError("override '" + kv + "' is not key=value");
    return {kv.substr(0, eq), kv.substr(eq + 1)};
}

// Defaults, then the data-root env var, then the config file, then key=value overrides.
RunConfig resolve_config(const ConfigArgs& args) {
    RunConfig c;
    if (const char* env = std::getenv(kDataRootEnv); env && *env) c.data_root = env;
    if (!args.config_path.empty()) {
        std::ifstream is(args.config_path);
        if (!is) throw UserError("cannot open config " + args.config_path);
        std::stringstream ss;
        ss << is.rdbuf();
        const std::string env_root = c.data_root;
        c = config_from_json(ss.str());
        json raw = json::parse(ss.str(), nullptr, false);
        if (!(raw.is_object() && raw.contains("data_root"))) c.data_root = env_root;
    }
    for (const auto& kv : args.overrides) {
        const auto [k, v] = split_override(kv);
        apply_override(c, k, v);
    }
    c.validate();
    return c;
}

void print_thresholds(std::ostream& os, const std::vector<double>& inner) {
    os << "thresholds: -inf";
    for (double t : inner) os << ' ' << std::setprecision(6) << t;
    os << " +inf\n";
}

std::vector<double> read_thresholds_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw UserError("cannot open thresholds file " + path);
    json j = json::parse(is, nullptr, false);
    if (!j.is_object() || !j.contains("thresholds") || !j["thresholds"].is_array()) {
        throw UserError("thresholds file must hold {\"thresholds\": [...]}");
    }
    return j["thresholds"].get<std::vector<double>>();
}

// gen-demos ------------------------------------------------------------------------------

struct GenDemosArgs {
    ConfigArgs cfg;
    std::string task;
    bool force = false;
};

int cmd_gen_demos(const GenDemosArgs& a) {
    const RunConfig c = resolve_config(a.cfg);
    std::vector<std::string> tasks;
    if (a.task == "all") {
        tasks = registered_tasks();
    } else {
        tasks.push_back(a.task.empty() ? c.task : a.task);
    }
    for (const auto& t : tasks) (void)find_task(t);
    for (const auto& t : tasks) {
        const auto eps = generate_demos(t, c.demos, c.demo_seed);
        write_dataset(c.data_root, t, eps, a.force);
        std::size_t frames = 0;
        for (const auto& e : eps) frames += e.length();
        std::cout << t << ": " << eps.size() << " episodes, " << frames << " frames -> "
                  << task_dir(c.data_root, t).string() << '\n';
    }
    return 0;
}

// train ----------------------------------------------------------------------------------

struct TrainArgs {
    ConfigArgs cfg;
    std::string run_dir;
    std::string resume;
};

int cmd_train(const TrainArgs& a) {
    TrainingState state;
    std::vector<EpisodeRecord> eps;
    if (!a.resume.empty()) {
        if (!fs::exists(a.resume)) throw UserError("no checkpoint at " + a.resume);
        state = load_checkpoint(a.resume);
        // Only the epoch budget and bookkeeping may change on resume.
        static const std::set<std::string> allowed{"epochs", "checkpoint_every", "out_dir", "data_root"};
        RunConfig c = state.config;
        for (const auto& kv : a.cfg.overrides) {
            const auto [k, v] = split_override(kv);
            if (!allowed.count(k)) throw UserError("cannot change '" + k + "' when resuming");
            apply_override(c, k, v);
        }
        if (!a.cfg.config_path.empty()) throw UserError("--config cannot be combined with --resume");
        if (const char* env = std::getenv(kDataRootEnv); env && *env && c.data_root == state.config.data_root) {
            c.data_root = env;
        }
        c.validate();
        state.config = c;
        eps = load_dataset(c.data_root, c.task);
        std::cout << "resuming at epoch " << state.epoch << " step " << state.step << '\n';
    } else {
        const RunConfig c = resolve_config(a.cfg);
        (void)find_task(c.task);
        eps = load_dataset(c.data_root, c.task);
        state = init_training(c, eps);
    }
    const fs::path dir = a.run_dir.empty() ? fs::path(state.config.out_dir) / state.config.task : fs::path(a.run_dir);
    fs::create_directories(dir);
    save_config(dir / "config.json", state.config);
    std::cout << "task " << state.config.task << ", " << eps.size() << " episodes, "
              << state.net->parameter_count() << " parameters, " << steps_per_epoch(state.config, eps)
              << " steps/epoch\n";

    std::ofstream loss_log(dir / "losses.csv", a.resume.empty() ? std::ios::trunc : std::ios::app);
    if (a.resume.empty()) loss_log << "epoch,loss\n";
    train(state, eps, [&](const TrainingState& s, double loss) {
        std::cout << "epoch " << s.epoch << "/" << s.config.epochs << " loss " << std::setprecision(6) << loss
                  << std::endl;
        loss_log << s.epoch << ',' << std::setprecision(10) << loss << '\n';
        if (s.config.checkpoint_every > 0 && s.epoch % s.config.checkpoint_every == 0 && s.epoch < s.config.epochs) {
            save_checkpoint(dir / ("epoch_" + std::to_string(s.epoch) + ".ckpt"), s);
        }
    });
    save_checkpoint(dir / "final.ckpt", state);
    std::cout << "wrote " << (dir / "final.ckpt").string() << '\n';
    return 0;
}

// eval / calibrate -------------------------------------------------------------------------

// Keys that only affect execution; anything else must agree with the checkpoint.
const std::set<std::string>& eval_keys() {
    static const std::set<std::string> k{"samples",        "eval_episodes",   "eval_seed",  "max_steps",
                                         "thresholds",     "action_horizon",  "seed",       "out_dir",
                                         "data_root",      "percentile_low",  "percentile_high"};
    return k;
}

RunConfig merge_eval_config(const RunConfig& trained, const ConfigArgs& args) {
    RunConfig c = trained;
    if (!args.config_path.empty()) {
        const RunConfig file = load_config(args.config_path);
        const json fj = json::parse(config_to_json(file));
        const json tj = json::parse(config_to_json(trained));
        for (const auto& [k, v] : fj.items()) {
            if (eval_keys().count(k)) {
                apply_override(c, k, v.dump());
            } else if (v != tj.at(k)) {
                throw UserError("checkpoint/config mismatch on '" + k + "': checkpoint has " + tj.at(k).dump() +
                                ", config has " + v.dump());
            }
        }
    }
    const json tj = json::parse(config_to_json(trained));
    for (const auto& kv : args.overrides) {
        const auto [k, v] = split_override(kv);
        if (!eval_keys().count(k)) {
            RunConfig probe = trained;
            apply_override(probe, k, v);
            const json pj = json::parse(config_to_json(probe));
            if (pj.at(k) != tj.at(k)) {
                throw UserError("checkpoint/config mismatch on '" + k + "': checkpoint has " + tj.at(k).dump());
            }
            continue;
        }
        apply_override(c, k, v);
    }
    c.validate();
    return c;
}

struct EvalArgs {
    ConfigArgs cfg;
    std::string checkpoint;
    std::string mode = "entropy-gated";
    std::string label;
    std::string results;
    std::string traces_dir;
    std::string thresholds_file;
};

EvalOptions eval_options(const RunConfig& c, EvalMode mode) {
    EvalOptions o;
    o.mode = mode;
    o.episodes = c.eval_episodes;
    o.env_seed = c.eval_seed;
    o.policy_seed = c.seed;
    o.samples = c.samples;
    o.action_horizon = c.action_horizon;
    o.max_steps = c.max_steps;
    return o;
}

TrainingState load_trained(const std::string& path) {
    if (path.empty()) throw UserError("--checkpoint is required");
    if (!fs::exists(path)) throw UserError("no checkpoint at " + path);
    return load_checkpoint(path);
}

int cmd_eval(const EvalArgs& a) {
    const TrainingState state = load_trained(a.checkpoint);
    RunConfig c = merge_eval_config(state.config, a.cfg);
    if (!a.thresholds_file.empty()) c.thresholds = read_thresholds_file(a.thresholds_file);
    c.validate();
    const EvalMode mode = eval_mode_from_string(a.mode);
    const FrequencyLadder ladder = c.ladder();
    DiffusionPolicy policy = make_policy(state);
    const Task& task = find_task(c.task);

    if (mode == EvalMode::EntropyGated && c.samples < 2) throw UserError("entropy-gated execution needs samples >= 2");
    const EvalReport report = evaluate_policy(policy, task, ladder, eval_options(c, mode));

    const std::string label = a.label.empty() ? c.task + "/" + a.mode : a.label;
    const fs::path results = a.results.empty() ? fs::path(c.out_dir) / "results.jsonl" : fs::path(a.results);
    if (results.has_parent_path()) fs::create_directories(results.parent_path());
    const ResultRecord rec = make_record(report, label, mode);
    append_result(results, rec);
    if (!a.traces_dir.empty()) {
        fs::create_directories(a.traces_dir);
        for (const auto& tr : report.traces) {
            std::ofstream os(fs::path(a.traces_dir) / ("episode_" + std::to_string(tr.seed) + ".jsonl"));
            write_trace(os, tr);
        }
    }
    if (mode == EvalMode::EntropyGated) print_thresholds(std::cout, c.thresholds);
    print_table(std::cout, {rec});
    std::cout << "appended to " << results.string() << '\n';
    return 0;
}

struct CalibrateArgs {
    ConfigArgs cfg;
    std::string checkpoint;
    std::string out;
};

int cmd_calibrate(const CalibrateArgs& a) {
    const TrainingState state = load_trained(a.checkpoint);
    const RunConfig c = merge_eval_config(state.config, a.cfg);
    if (c.num_frequencies < 2) throw UserError("a single-frequency model has no thresholds to calibrate");
    DiffusionPolicy policy = make_policy(state);
    const Task& task = find_task(c.task);
    EvalOptions o = eval_options(c, EvalMode::FixedHigh);
    std::vector<double> h;
    const auto th = calibrate_thresholds(policy, task, c.ladder(), o, c.percentile_low, c.percentile_high, &h);
    print_thresholds(std::cout, th);
    std::cout << "from " << h.size() << " decisions at percentiles " << c.percentile_low << "/" << c.percentile_high
              << '\n';
    if (!a.out.empty()) {
        json j = {{"thresholds", th},
                  {"percentiles", {c.percentile_low, c.percentile_high}},
                  {"decisions", h.size()},
                  {"task", c.task}};
        std::ofstream os(a.out);
        if (!os) throw UserError("cannot write " + a.out);
        os << j.dump(2) << '\n';
        std::cout << "wrote " << a.out << '\n';
    }
    return 0;
}

// plot-entropy ---------------------------------------------------------------------------

struct PlotArgs {
    std::string trace;
    std::string out_prefix;
    std::string thresholds_file;
};

int cmd_plot_entropy(const PlotArgs& a) {
    std::ifstream is(a.trace);
    if (!is) throw UserError("cannot open trace " + a.trace);
    RolloutTrace trace;
    try {
        trace = read_trace(is);
    } catch (const std::runtime_error& e) {
        throw UserError(e.what());
    }
    if (trace.decisions.empty()) throw UserError("trace has no decisions; nothing to plot");
    std::vector<double> th;
    if (!a.thresholds_file.empty()) th = read_thresholds_file(a.thresholds_file);
    const fs::path prefix = a.out_prefix.empty() ? fs::path(a.trace).replace_extension("") : fs::path(a.out_prefix);
    const fs::path csv = prefix.string() + ".csv";
    const fs::path svg = prefix.string() + ".svg";
    {
        std::ofstream os(csv);
        if (!os) throw UserError("cannot write " + csv.string());
        write_entropy_csv(os, trace);
    }
    {
        std::ofstream os(svg);
        if (!os) throw UserError("cannot write " + svg.string());
        write_entropy_svg(os, trace, th);
    }
    std::cout << "wrote " << csv.string() << " and " << svg.string() << '\n';
    return 0;
}

// ablate / table -------------------------------------------------------------------------

struct AblateArgs {
    ConfigArgs cfg;
    std::vector<std::string> only;
    std::string results;
    bool list = false;
};

int cmd_ablate(const AblateArgs& a) {
    const RunConfig c = resolve_config(a.cfg);
    auto cells = ablation_grid(c);
    if (a.list) {
        for (const auto& cell : cells) {
            std::cout << cell.label << "  mode=" << to_string(cell.mode) << " N=" << cell.samples
                      << " M=" << cell.config.num_frequencies << " Lh=" << cell.config.history_len
                      << " Lc=" << cell.config.chunk_len << " condition=" << cell.config.condition
                      << " fusion=" << cell.config.global_fusion << '\n';
        }
        return 0;
    }
    if (!a.only.empty()) {
        std::vector<AblationCell> kept;
        for (const auto& cell : cells) {
            if (std::find(a.only.begin(), a.only.end(), cell.label) != a.only.end()) kept.push_back(cell);
        }
        if (kept.size() != a.only.size()) throw UserError("unknown ablation cell in --only (see --list)");
        cells = std::move(kept);
    }
    (void)find_task(c.task);
    const auto eps = load_dataset(c.data_root, c.task);
    const auto results = run_ablation(cells, eps, [](const std::string& msg) { std::cout << msg << std::endl; });

    const fs::path path = a.results.empty() ? fs::path(c.out_dir) / "ablation.jsonl" : fs::path(a.results);
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::vector<ResultRecord> ok;
    int failed = 0;
    for (const auto& r : results) {
        if (r.failed) {
            ++failed;
            continue;
        }
        append_result(path, r.record);
        ok.push_back(r.record);
    }
    print_table(std::cout, ok);
    for (const auto& r : results) {
        if (r.failed) std::cout << "FAILED " << r.label << ": " << r.error << '\n';
    }
    std::cout << "appended " << ok.size() << " records to " << path.string() << '\n';
    return failed == static_cast<int>(results.size()) ? 2 : 0;
}

int cmd_table(const std::string& path) {
    if (!fs::exists(path)) throw UserError("no results file at " + path);
    print_table(std::cout, read_results(path));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hierarchical multi-frequency action chunking: demos, training, gated execution"};
    app.require_subcommand(1);

    GenDemosArgs gen;
    auto* g = app.add_subcommand("gen-demos", "record scripted expert demonstrations");
    add_config_args(g, gen.cfg);
    g->add_option("--task,-t", gen.task, "task id, or 'all' (default: config task)");
    g->add_flag("--force", gen.force, "overwrite an existing dataset");

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "train a denoiser on a recorded dataset");
    add_config_args(t, tr.cfg);
    t->add_option("--run-dir", tr.run_dir, "output directory (default: <out_dir>/<task>)");
    t->add_option("--resume", tr.resume, "checkpoint to continue from");

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "evaluate a checkpoint");
    add_config_args(e, ev.cfg);
    e->add_option("--checkpoint", ev.checkpoint, "trained checkpoint")->required();
    e->add_option("--mode", ev.mode, "entropy-gated | fixed-high | fixed-mid | fixed-low")
        ->check(CLI::IsMember(eval_mode_names()));
    e->add_option("--label", ev.label, "row label in the results file");
    e->add_option("--results", ev.results, "results JSONL (default: <out_dir>/results.jsonl)");
    e->add_option("--traces", ev.traces_dir, "write one JSONL trace per episode here");
    e->add_option("--thresholds-file", ev.thresholds_file, "thresholds written by calibrate");

    CalibrateArgs cal;
    auto* ca = app.add_subcommand("calibrate", "derive gating thresholds from fixed-high rollouts");
    add_config_args(ca, cal.cfg);
    ca->add_option("--checkpoint", cal.checkpoint, "trained checkpoint")->required();
    ca->add_option("--out", cal.out, "write thresholds JSON here");

    PlotArgs pl;
    auto* p = app.add_subcommand("plot-entropy", "entropy curve (SVG) and CSV from a rollout trace");
    p->add_option("trace", pl.trace, "trace JSONL")->required();
    p->add_option("--out", pl.out_prefix, "output path prefix (default: trace path without extension)");
    p->add_option("--thresholds-file", pl.thresholds_file, "draw these thresholds");

    AblateArgs ab;
    auto* a = app.add_subcommand("ablate", "train and evaluate the ablation grid");
    add_config_args(a, ab.cfg);
    a->add_option("--only", ab.only, "run only these cell labels");
    a->add_option("--results", ab.results, "results JSONL (default: <out_dir>/ablation.jsonl)");
    a->add_flag("--list", ab.list, "print the grid and exit");

    std::string table_path;
    auto* tb = app.add_subcommand("table", "print a results file as a table");
    tb->add_option("results", table_path, "results JSONL")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int rc = app.exit(err);
        return rc == 0 ? 0 : 1;
    }

    try {
        if (*g) return cmd_gen_demos(gen);
        if (*t) return cmd_train(tr);
        if (*e) return cmd_eval(ev);
        if (*ca) return cmd_calibrate(cal);
        if (*p) return cmd_plot_entropy(pl);
        if (*a) return cmd_ablate(ab);
        if (*tb) return cmd_table(table_path);
    } catch (const UserError& err) {
        std::cerr << "error: " << err.what() << '\n';
        return 1;
    } catch (const UnknownTask& err) {
        std::cerr << "error: " << err.what() << '\n';
        return 1;
    } catch (const ConfigError& err) {
        std::cerr << "config error: " << err.what() << '\n';
        return 1;
    } catch (const CheckpointError& err) {
        std::cerr << "checkpoint error: " << err.what() << '\n';
        return 1;
    } catch (const CalibrationError& err) {
        std::cerr << "calibration error: " << err.what() << '\n';
        return 1;
    } catch (const std::invalid_argument& err) {
        std::cerr << "error: " << err.what() << '\n';
        return 1;
    } catch (const TrainingDiverged& err) {
        std::cerr << "training diverged: " << err.what() << '\n';
        return 2;
    } catch (const std::exception& err) {
        std::cerr << "internal error: " << err.what() << '\n';
        return 2;
    }
    return 0;
}
