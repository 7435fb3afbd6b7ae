#include "mdm/cli.hpp"

#include "mdm/checkpoint.hpp"
#include "mdm/config.hpp"
#include "mdm/errors.hpp"
#include "mdm/experiment.hpp"
#include "mdm/format.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>

namespace mdm::cli {

namespace {

namespace fs = std::filesystem;

struct CommonArgs {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::vector<std::string> sets;
};

void add_common(CLI::App* app, CommonArgs& args) {
    app->add_option("--config", args.config_path, "key = value configuration file");
    app->add_option("--seed", args.seed, "master seed");
    app->add_option("--out", args.out, "output directory");
    app->add_option("--set", args.sets, "override a configuration key, as key=value")->take_all();
}

RunConfig build_config(const CommonArgs& args) {
    RunConfig config;
    if (!args.config_path.empty()) config.load_file(args.config_path);
    for (const auto& kv : args.sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
        config.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (args.seed) config.set("seed", std::to_string(*args.seed));
    if (!args.out.empty()) config.set("out", args.out);
    return config;
}

fs::path output_dir(const RunConfig& config) {
    fs::path out(config.get("out"));
    fs::create_directories(out);
    return out;
}

std::ofstream open_out(const fs::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    return os;
}

void write_manifest(const fs::path& dir, const std::string& command, const RunConfig& config) {
    std::ofstream os = open_out(dir / "run_manifest.txt");
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    os << "command = " << command << '\n';
    os << "timestamp = " << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ") << '\n';
    for (const auto& [k, v] : config.values()) os << k << " = " << v << '\n';
}

std::vector<double> labels(const data::Dataset& d) {
    std::vector<double> y;
    for (const auto& s : d) y.push_back(s.y);
    return y;
}

// Rebuilds the architecture the config describes and loads the checkpoint
// into it. The critic is attached only when the checkpoint carries one.
fusion::FusionModel load_model(const RunConfig& config, const data::DatasetShape& shape,
                               const fs::path& checkpoint) {
    const fusion::FusionEncoderSpec enc = encoder_spec(config, shape);
    fusion::TotalLossConfig loss = loss_config(config);
    const std::vector<nn::Parameter> loaded = nn::load_checkpoint(checkpoint);
    const bool has_critic = std::any_of(loaded.begin(), loaded.end(),
                                        [](const nn::Parameter& p) { return p.name.rfind("critic.", 0) == 0; });
    loss.lambda = has_critic ? std::max(loss.lambda, 1.0) : 0.0;
    Rng init = make_stream(0, "init");
    fusion::FusionModel model = fusion::make_model(enc, loss, init);
    model.has_critic = has_critic;
    nn::assign_parameters(loaded, model.checkpoint_parameters());
    return model;
}

fs::path checkpoint_path(const std::string& flag, const RunConfig& config) {
    return flag.empty() ? fs::path(config.get("out")) / "checkpoint.bin" : fs::path(flag);
}

// ---------------------------------------------------------------------------

int cmd_gaussian_bench(const RunConfig& config, std::ostream& out, std::ostream& err) {
    const experiment::BenchSettings settings = experiment::bench_settings(config);
    const std::uint64_t seed = config.get_u64("seed");
    const fs::path dir = output_dir(config);
    const experiment::BenchResult result = experiment::run_gaussian_bench(settings, seed);
    std::ofstream os = open_out(dir / "gaussian_bench.csv");
    experiment::write_bench_csv(os, result.rows);
    for (const auto& r : result.rows) {
        out << "rho=" << format_double(r.rho) << " kind=" << est::to_string(r.kind)
            << " estimate=" << format_double(r.estimate) << " oracle=" << format_double(r.oracle) << '\n';
    }
    if (result.error) {
        err << "gaussian-bench: " << *result.error << '\n';
        return kExitRuntime;
    }
    return kExitOk;
}

int cmd_gen_data(const RunConfig& config, std::ostream& out) {
    const data::SyntheticTaskSpec spec = synthetic_spec(config);
    const fs::path dir = output_dir(config);
    Rng rng = make_stream(config.get_u64("seed"), "data");
    const data::DatasetSplits splits = data::gen_synthetic_multimodal(spec, rng);
    data::save_dataset(dir / "train.jsonl", splits.train);
    data::save_dataset(dir / "val.jsonl", splits.val);
    data::save_dataset(dir / "test.jsonl", splits.test);
    out << "wrote " << splits.train.size() << '/' << splits.val.size() << '/' << splits.test.size()
        << " samples to " << dir.string() << '\n';
    return kExitOk;
}

int cmd_train(const RunConfig& config, std::ostream& out, std::ostream& err) {
    const std::uint64_t seed = config.get_u64("seed");
    if (!config.get_strings("grid.lambdas").empty()) {
        const auto cells = experiment::grid_cells(config, seed);
        // Surface data/config problems before any training starts.
        (void)experiment::load_splits(config, seed);
        (void)loss_config(config);
        const fs::path dir = output_dir(config);
        const auto rows = experiment::run_grid(config, cells);
        std::ofstream os = open_out(dir / "grid_summary.csv");
        experiment::write_grid_csv(os, rows);
        write_manifest(dir, "train (grid)", config);
        out << "grid: " << rows.size() << " cells written to " << (dir / "grid_summary.csv").string() << '\n';
        return kExitOk;
    }

    const data::DatasetSplits splits = experiment::load_splits(config, seed);
    const data::DatasetShape shape = data::validate_dataset(splits.train);
    const fusion::FusionEncoderSpec enc = encoder_spec(config, shape);
    const fusion::TotalLossConfig loss = loss_config(config);
    const fs::path dir = output_dir(config);

    fusion::TrainResult result = fusion::train(enc, loss, splits.train, splits.val, seed);
    fusion::FusionModel& best = result.state.best;

    nn::save_checkpoint(dir / "checkpoint.bin", best.checkpoint_parameters());
    {
        std::ofstream os = open_out(dir / "train_log.csv");
        fusion::write_log_csv(os, result.log);
    }
    std::vector<std::pair<std::string, eval::MetricsReport>> rows;
    const std::pair<const char*, const data::Dataset*> parts[] = {
        {"train", &splits.train}, {"val", &splits.val}, {"test", &splits.test}};
    for (const auto& [name, set] : parts) {
        if (set->empty()) continue;
        const std::vector<double> pred = fusion::predict_dataset(best, *set);
        const std::vector<double> y = labels(*set);
        try {
            rows.emplace_back(name, eval::compute_metrics(pred, y));
        } catch (const eval::CorrelationUndefined& e) {
            rows.emplace_back(name, e.partial);
            rows.back().second.pearson_corr = std::numeric_limits<double>::quiet_NaN();
        }
    }
    {
        std::ofstream os = open_out(dir / "metrics.csv");
        eval::write_metrics_csv(os, rows);
    }
    write_manifest(dir, "train", config);

    for (const auto& [name, r] : rows) {
        out << name << ": mae=" << format_double(r.mae) << " acc2=" << format_double(r.acc2)
            << " acc7=" << format_double(r.acc7) << '\n';
    }
    if (result.aborted) {
        err << "train: aborted at epoch " << result.state.epoch << ": " << result.abort_reason
            << " (best snapshot from epoch " << result.state.best_epoch << " kept)\n";
        return kExitRuntime;
    }
    return kExitOk;
}

int cmd_eval_drop(const RunConfig& config, const std::string& checkpoint, std::ostream& out) {
    const data::DatasetSplits splits = experiment::load_splits(config, config.get_u64("seed"));
    const data::DatasetShape shape = data::validate_dataset(splits.train);
    const fs::path ckpt = checkpoint_path(checkpoint, config);
    const fusion::FusionModel model = load_model(config, shape, ckpt);
    const fusion::ModalityMeans means = fusion::modality_means(splits.train);
    const auto rows = eval::modality_drop_eval(model, splits.test, substitution(config), &means);
    const fs::path dir = output_dir(config);
    std::ofstream os = open_out(dir / "drop_ratios.csv");
    eval::write_drop_csv(os, rows);
    for (const auto& r : rows) {
        out << eval::to_string(r.condition) << ": acc2=" << format_double(r.acc2)
            << " corrupt=" << format_double(r.acc2_corrupt) << " ratio=" << format_double(r.ratio) << '\n';
    }
    return kExitOk;
}

int cmd_score(const RunConfig& config, const std::string& checkpoint, const std::string& dataset,
              std::ostream& out) {
    const std::size_t k = config.get_size("score.k");
    const data::DatasetSplits splits = experiment::load_splits(config, config.get_u64("seed"));
    const data::DatasetShape shape = data::validate_dataset(splits.train);
    data::Dataset samples;
    if (!dataset.empty()) {
        samples = data::load_dataset(dataset);
    } else {
        const std::string& split = config.get("score.split");
        if (split == "train") samples = splits.train;
        else if (split == "val") samples = splits.val;
        else if (split == "test") samples = splits.test;
        else throw ConfigError("score.split must be train, val or test");
    }
    const fs::path ckpt = checkpoint_path(checkpoint, config);
    const fusion::FusionModel model = load_model(config, shape, ckpt);
    if (!model.has_critic) {
        throw std::runtime_error("checkpoint " + ckpt.string() +
                                 " has no critic parameters (trained with lambda = 0); nothing to score with");
    }
    const fusion::CriticInput mode = loss_config(config).critic_input;
    const eval::ScoreReport report = eval::interpretability_score(model, samples, k, mode);
    const fs::path dir = output_dir(config);
    std::ofstream os = open_out(dir / "scores.csv");
    eval::write_scores_csv(os, report);
    for (const auto& s : report.high) out << "H " << s.index << ' ' << format_double(s.score) << '\n';
    for (const auto& s : report.low) out << "L " << s.index << ' ' << format_double(s.score) << '\n';
    return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Neural multivariate dependency measures for multimodal fusion"};
    app.require_subcommand(1);

    CommonArgs bench_args, gen_args, train_args, drop_args, score_args;
    std::string drop_ckpt, score_ckpt, score_data;
    CLI::App* bench = app.add_subcommand("gaussian-bench", "estimate dependency of correlated Gaussians");
    add_common(bench, bench_args);
    CLI::App* gen = app.add_subcommand("gen-data", "write the synthetic multimodal task as JSON lines");
    add_common(gen, gen_args);
    CLI::App* train = app.add_subcommand("train", "train a fusion model, or a grid when grid.lambdas is set");
    add_common(train, train_args);
    CLI::App* drop = app.add_subcommand("eval-drop", "modality-drop robustness of a checkpoint");
    add_common(drop, drop_args);
    drop->add_option("--checkpoint", drop_ckpt, "checkpoint file (default <out>/checkpoint.bin)");
    CLI::App* score = app.add_subcommand("score", "rank samples by critic score");
    add_common(score, score_args);
    score->add_option("--checkpoint", score_ckpt, "checkpoint file (default <out>/checkpoint.bin)");
    score->add_option("--dataset", score_data, "JSON-lines samples to score (default: score.split)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (*bench) return cmd_gaussian_bench(build_config(bench_args), out, err);
        if (*gen) return cmd_gen_data(build_config(gen_args), out);
        if (*train) return cmd_train(build_config(train_args), out, err);
        if (*drop) return cmd_eval_drop(build_config(drop_args), drop_ckpt, out);
        if (*score) return cmd_score(build_config(score_args), score_ckpt, score_data, out);
    } catch (const ConfigError& e) {
        err << "configuration error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitConfig;
}

}  // namespace mdm::cli
