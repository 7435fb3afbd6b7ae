#include "mdm/experiment.hpp"

#include "mdm/errors.hpp"
#include "mdm/format.hpp"

#include <algorithm>
#include <numeric>

#ifdef MDM_HAVE_OPENMP
#include <omp.h>
#endif

namespace mdm::experiment {

namespace {

Matrix gather_rows(const Matrix& m, std::span<const std::size_t> idx) {
    Matrix out{idx.size(), m.cols, std::vector<double>(idx.size() * m.cols)};
    for (std::size_t i = 0; i < idx.size(); ++i) {
        std::copy_n(m.data.begin() + static_cast<std::ptrdiff_t>(idx[i] * m.cols), m.cols,
                    out.data.begin() + static_cast<std::ptrdiff_t>(i * m.cols));
    }
    return out;
}

std::vector<est::EstimatorKind> parse_kinds(const std::vector<std::string>& names) {
    std::vector<est::EstimatorKind> kinds;
    for (const auto& n : names) kinds.push_back(est::parse_kind(n));
    return kinds;
}

eval::MetricsReport metrics_or_partial(std::span<const double> pred, std::span<const double> y) {
    try {
        return eval::compute_metrics(pred, y);
    } catch (const eval::CorrelationUndefined& e) {
        eval::MetricsReport r = e.partial;
        r.pearson_corr = std::numeric_limits<double>::quiet_NaN();
        return r;
    }
}

std::vector<double> labels(const data::Dataset& d) {
    std::vector<double> y;
    y.reserve(d.size());
    for (const auto& s : d) y.push_back(s.y);
    return y;
}

}  // namespace

BenchSettings bench_settings(const cli::RunConfig& c) {
    BenchSettings s;
    s.dim = c.get_size("gaussian.d");
    s.variables = c.get_size("gaussian.variables");
    s.n = c.get_size("gaussian.n");
    s.rhos = c.get_doubles("gaussian.rhos");
    s.kinds = parse_kinds(c.get_strings("bench.kinds"));
    const auto cov = c.get_doubles("gaussian.covariance");
    if (!cov.empty()) {
        const std::size_t p = s.dim * s.variables;
        if (cov.size() != p * p) {
            throw ConfigError("gaussian.covariance needs " + std::to_string(p * p) + " entries, got " +
                              std::to_string(cov.size()));
        }
        s.covariance = Matrix{p, p, cov};
    }
    s.steps = c.get_size("bench.steps");
    s.batch_size = c.get_size("bench.batch_size");
    s.lr = c.get_double("bench.lr");
    s.weight_decay = c.get_double("train.weight_decay");
    s.width_scale = c.get_size("bench.width_scale");
    s.dropout = c.get_double("bench.dropout");
    s.clip = c.get_double("bench.clip");
    s.eval_shuffles = c.get_size("bench.eval_shuffles");
    s.eval_every = c.get_size("bench.eval_every");
    s.w_output = est::parse_output(c.get("bench.w_output"));
    if (s.variables != 2 && s.variables != 3) throw ConfigError("gaussian.variables must be 2 or 3");
    if (s.dim == 0 || s.n < 2) throw ConfigError("gaussian.d must be positive and gaussian.n at least 2");
    if (s.batch_size < 2) throw ConfigError("bench.batch_size must be at least 2");
    if (s.eval_shuffles == 0) throw ConfigError("bench.eval_shuffles must be positive");
    if (s.width_scale == 0) throw ConfigError("bench.width_scale must be positive");
    if (s.dropout < 0.0 || s.dropout >= 1.0) throw ConfigError("bench.dropout must lie in [0, 1)");
    if (s.rhos.empty() || s.kinds.empty()) throw ConfigError("gaussian.rhos and bench.kinds must be non-empty");
    for (auto k : s.kinds) {
        if (k == est::EstimatorKind::W && s.w_output == est::OutputActivation::Identity) {
            throw ConfigError("bench.w_output must be positive (sigmoid or softplus)");
        }
        if (k == est::EstimatorKind::W && s.clip <= 0.0) throw ConfigError("bench.clip must be positive for W");
    }
    return s;
}

BenchRow run_bench_cell(const BenchSettings& s, double rho, est::EstimatorKind kind, std::uint64_t seed,
                        std::vector<double>* trace) {
    data::GaussianSpec g;
    g.dim = s.dim;
    g.rho = rho;
    g.variables = s.variables;
    g.n = s.n;
    g.covariance = s.covariance;

    // Same samples for every estimator at a given rho.
    Rng data_rng = make_stream(seed, "data/rho=" + format_double(rho));
    const std::vector<Matrix> train = data::gen_correlated_gaussian(g, data_rng);
    const std::vector<Matrix> held = data::gen_correlated_gaussian(g, data_rng);

    est::CriticConfig cc;
    cc.input_width = s.dim * s.variables;
    cc.output = kind == est::EstimatorKind::W ? s.w_output : est::OutputActivation::Identity;
    cc.dropout = s.dropout;
    cc.width_scale = s.width_scale;
    Rng init = make_stream(seed, "init");
    est::StatisticNetwork critic(cc, init);

    nn::AdamWConfig oc;
    oc.lr = s.lr;
    oc.weight_decay = s.weight_decay;
    nn::AdamWState opt = nn::make_adamw(oc, critic.parameters());

    Rng batch_rng = make_stream(seed, "batch");
    Rng shuffle_rng = make_stream(seed, "shuffle");
    Rng dropout_rng = make_stream(seed, "dropout");
    est::StatisticStepOptions options;
    options.clip = s.clip;

    // Fixed marginal draws of the held-out set, shared by every evaluation.
    const Matrix held_joint = est::concat_columns(held);
    std::vector<Matrix> held_marg;
    for (std::size_t r = 0; r < s.eval_shuffles; ++r) {
        held_marg.push_back(est::concat_columns(est::shuffle_product_of_marginals(held, shuffle_rng).modalities));
    }
    auto held_out = [&](double* floor) {
        const std::vector<double> tj = critic.score(held_joint);
        std::vector<double> tm;
        tm.reserve(s.n * s.eval_shuffles);
        for (const Matrix& mm : held_marg) {
            const std::vector<double> part = critic.score(mm);
            tm.insert(tm.end(), part.begin(), part.end());
        }
        if (floor) *floor = est::constant_critic_floor(kind, tm);
        return est::estimate_from_scores(kind, tj, tm);
    };

    BenchRow row;
    row.rho = rho;
    row.kind = kind;
    row.oracle = data::gaussian_dependency_oracle(g);
    bool have_best = false;
    auto consider = [&] {
        double floor = 0.0;
        const double v = held_out(&floor);
        if (!have_best || v > row.estimate) {
            row.estimate = v;
            row.floor = floor;
            have_best = true;
        }
    };

    const std::size_t m = std::min(s.batch_size, s.n);
    std::vector<std::size_t> order(s.n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::size_t cursor = s.n;
    std::vector<Matrix> parts(s.variables);
    if (trace) trace->reserve(trace->size() + s.steps);
    for (std::size_t step = 0; step < s.steps; ++step) {
        if (cursor + m > s.n) {
            std::shuffle(order.begin(), order.end(), batch_rng);
            cursor = 0;
        }
        const std::span<const std::size_t> idx(order.data() + cursor, m);
        cursor += m;
        for (std::size_t j = 0; j < s.variables; ++j) parts[j] = gather_rows(train[j], idx);
        const Matrix joint = est::concat_columns(parts);
        const est::ShuffledBatch sh = est::shuffle_product_of_marginals(parts, shuffle_rng);
        const Matrix marg = est::concat_columns(sh.modalities);
        const double v = est::statistic_step(kind, critic, joint, marg, opt, dropout_rng, options);
        if (trace) trace->push_back(v);
        if (s.eval_every > 0 && (step + 1) % s.eval_every == 0) consider();
    }
    if (s.eval_every == 0 || s.steps % s.eval_every != 0) consider();

    row.abs_error = std::abs(row.estimate - row.oracle);
    return row;
}

BenchResult run_gaussian_bench(const BenchSettings& s, std::uint64_t seed) {
    struct Cell {
        double rho;
        est::EstimatorKind kind;
    };
    std::vector<Cell> cells;
    for (double rho : s.rhos)
        for (auto k : s.kinds) cells.push_back({rho, k});

    std::vector<std::optional<BenchRow>> rows(cells.size());
    std::vector<std::string> errors(cells.size());
    const auto n_cells = static_cast<std::ptrdiff_t>(cells.size());
#ifdef MDM_HAVE_OPENMP
#pragma omp parallel for schedule(dynamic, 1)
#endif
    for (std::ptrdiff_t i = 0; i < n_cells; ++i) {
        const Cell& c = cells[static_cast<std::size_t>(i)];
        try {
            rows[static_cast<std::size_t>(i)] = run_bench_cell(s, c.rho, c.kind, seed);
        } catch (const std::exception& e) {
            errors[static_cast<std::size_t>(i)] = std::string("rho=") + format_double(c.rho) + " kind=" +
                                                  est::to_string(c.kind) + ": " + e.what();
        }
    }

    BenchResult result;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (!rows[i]) {
            result.error = errors[i];
            break;
        }
        result.rows.push_back(*rows[i]);
    }
    return result;
}

void write_bench_csv(std::ostream& os, const std::vector<BenchRow>& rows) {
    os << "rho,kind,estimate,oracle,abs_error\n";
    for (const auto& r : rows) {
        os << format_double(r.rho) << ',' << est::to_string(r.kind) << ',' << format_double(r.estimate) << ','
           << format_double(r.oracle) << ',' << format_double(r.abs_error) << '\n';
    }
    os.flush();
}

// ---------------------------------------------------------------------------

data::DatasetSplits load_splits(const cli::RunConfig& c, std::uint64_t seed) {
    const std::string& dir = c.get("data.dir");
    if (!dir.empty()) {
        const std::filesystem::path root(dir);
        data::DatasetSplits splits;
        splits.train = data::load_dataset(root / "train.jsonl");
        splits.val = data::load_dataset(root / "val.jsonl");
        splits.test = data::load_dataset(root / "test.jsonl");
        return splits;
    }
    if (c.get_bool("data.synthetic")) {
        const data::SyntheticTaskSpec spec = cli::synthetic_spec(c);
        Rng rng = make_stream(seed, "data");
        return data::gen_synthetic_multimodal(spec, rng);
    }
    throw ConfigError("no dataset: set data.dir or data.synthetic = true");
}

std::vector<GridCell> grid_cells(const cli::RunConfig& c, std::uint64_t base_seed) {
    std::vector<double> lambdas = c.get_doubles("grid.lambdas");
    if (lambdas.empty()) lambdas.push_back(c.get_double("loss.lambda"));
    std::vector<double> lrs = c.get_doubles("grid.lrs");
    if (lrs.empty()) lrs.push_back(c.get_double("train.lr"));
    std::vector<est::EstimatorKind> kinds = parse_kinds(c.get_strings("grid.kinds"));
    if (kinds.empty()) kinds.push_back(est::parse_kind(c.get("loss.kind")));
    const std::size_t seeds = c.get_size("grid.seeds");
    if (seeds == 0) throw ConfigError("grid.seeds must be positive");
    for (double l : lambdas)
        if (l < 0.0) throw ConfigError("grid.lambdas entries must be >= 0");

    std::vector<GridCell> cells;
    for (std::size_t s = 0; s < seeds; ++s) {
        for (double lambda : lambdas) {
            for (double lr : lrs) {
                // Without the penalty the estimator kind plays no role.
                const std::size_t n_kinds = lambda == 0.0 ? 1 : kinds.size();
                for (std::size_t k = 0; k < n_kinds; ++k) {
                    cells.push_back({base_seed + s, lambda, lr, kinds[k]});
                }
            }
        }
    }
    return cells;
}

GridRow run_grid_cell(const cli::RunConfig& c, const GridCell& cell) {
    const data::DatasetSplits splits = load_splits(c, cell.seed);
    const data::DatasetShape shape = data::validate_dataset(splits.train);
    const fusion::FusionEncoderSpec enc = cli::encoder_spec(c, shape);
    fusion::TotalLossConfig loss = cli::loss_config(c);
    loss.lambda = cell.lambda;
    loss.lr = cell.lr;
    loss.kind = cell.kind;
    try {
        fusion::validate(loss);
    } catch (const ContractError& e) {
        throw ConfigError(e.what());
    }

    fusion::TrainOptions options;
    options.record_critic_steps = false;
    const fusion::TrainResult result = fusion::train(enc, loss, splits.train, splits.val, cell.seed, options);
    const fusion::FusionModel& best = result.state.best;

    GridRow row;
    row.cell = cell;
    row.aborted = result.aborted;
    row.best_epoch = result.state.best_epoch;
    row.val = metrics_or_partial(fusion::predict_dataset(best, splits.val), labels(splits.val));
    row.test = metrics_or_partial(fusion::predict_dataset(best, splits.test), labels(splits.test));
    const fusion::ModalityMeans means = fusion::modality_means(splits.train);
    row.drop = eval::modality_drop_eval(best, splits.test, cli::substitution(c), &means);
    return row;
}

std::vector<GridRow> run_grid(const cli::RunConfig& c, const std::vector<GridCell>& cells) {
    std::vector<std::optional<GridRow>> rows(cells.size());
    std::vector<std::string> errors(cells.size());
    const auto n_cells = static_cast<std::ptrdiff_t>(cells.size());
#ifdef MDM_HAVE_OPENMP
#pragma omp parallel for schedule(dynamic, 1)
#endif
    for (std::ptrdiff_t i = 0; i < n_cells; ++i) {
        const auto u = static_cast<std::size_t>(i);
        try {
            rows[u] = run_grid_cell(c, cells[u]);
        } catch (const std::exception& e) {
            errors[u] = e.what();
        }
    }
    std::vector<GridRow> out;
    out.reserve(cells.size());
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (!rows[i]) {
            throw std::runtime_error("grid cell seed=" + std::to_string(cells[i].seed) + " lambda=" +
                                     format_double(cells[i].lambda) + ": " + errors[i]);
        }
        out.push_back(std::move(*rows[i]));
    }
    return out;
}

void write_grid_csv(std::ostream& os, const std::vector<GridRow>& rows) {
    os << "seed,lambda,lr,kind,best_epoch,aborted,val_mae,val_corr,val_acc2,val_acc7,"
          "test_mae,test_corr,test_acc2,test_acc7,ratio_A,ratio_V,ratio_AV\n";
    for (const auto& r : rows) {
        os << r.cell.seed << ',' << format_double(r.cell.lambda) << ',' << format_double(r.cell.lr) << ','
           << est::to_string(r.cell.kind) << ',' << r.best_epoch << ',' << (r.aborted ? 1 : 0) << ','
           << format_double(r.val.mae) << ',' << format_double(r.val.pearson_corr) << ','
           << format_double(r.val.acc2) << ',' << format_double(r.val.acc7) << ',' << format_double(r.test.mae)
           << ',' << format_double(r.test.pearson_corr) << ',' << format_double(r.test.acc2) << ','
           << format_double(r.test.acc7);
        for (std::size_t k = 1; k < r.drop.size(); ++k) os << ',' << format_double(r.drop[k].ratio);
        os << '\n';
    }
}

}  // namespace mdm::experiment
