#pragma once

// Experiment drivers shared by the command-line tool and the acceptance
// runner: the Gaussian estimation sweep and the (seed, lambda, lr, kind) grid.

#include "mdm/config.hpp"
#include "mdm/eval.hpp"

#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace mdm::experiment {

// ---------------------------------------------------------------------------
// Gaussian sweep

struct BenchSettings {
    std::size_t dim = 5;
    std::size_t variables = 2;
    std::size_t n = 10000;
    std::vector<double> rhos{0.0, 0.3, 0.5, 0.7, 0.9};
    std::vector<est::EstimatorKind> kinds{est::EstimatorKind::KL, est::EstimatorKind::F, est::EstimatorKind::W};
    std::optional<Matrix> covariance;
    std::size_t steps = 4000;
    std::size_t batch_size = 256;
    double lr = 2e-3;
    double weight_decay = 0.01;
    std::size_t width_scale = 4;
    double dropout = 0.0;
    double clip = 0.05;
    std::size_t eval_shuffles = 5;
    std::size_t eval_every = 250;  // held-out evaluation period; 0 = only at the end
    est::OutputActivation w_output = est::OutputActivation::Sigmoid;
};

BenchSettings bench_settings(const cli::RunConfig& config);

struct BenchRow {
    double rho = 0.0;
    est::EstimatorKind kind = est::EstimatorKind::KL;
    double estimate = 0.0;
    double oracle = 0.0;
    double abs_error = 0.0;
    double floor = 0.0;  // constant-critic value on the evaluation marginals
};

/// Trains one critic on n samples at correlation `rho`. Every `eval_every`
/// steps the eval-mode critic is scored on an independent draw of n samples
/// (joint rows against `eval_shuffles` fixed shuffles of them); the best
/// held-out value is reported. `trace`, when given, receives the pre-step
/// training objective of every step.
BenchRow run_bench_cell(const BenchSettings& settings, double rho, est::EstimatorKind kind, std::uint64_t seed,
                        std::vector<double>* trace = nullptr);

struct BenchResult {
    std::vector<BenchRow> rows;  // rho-major, only cells before the first failure
    std::optional<std::string> error;
};

BenchResult run_gaussian_bench(const BenchSettings& settings, std::uint64_t seed);

void write_bench_csv(std::ostream& os, const std::vector<BenchRow>& rows);

// ---------------------------------------------------------------------------
// Datasets and training grid

/// Loads train/val/test.jsonl from data.dir, or generates the synthetic task
/// from the "data" stream of `seed`. Throws ConfigError when neither is set.
data::DatasetSplits load_splits(const cli::RunConfig& config, std::uint64_t seed);

struct GridCell {
    std::uint64_t seed = 0;
    double lambda = 0.0;
    double lr = 0.001;
    est::EstimatorKind kind = est::EstimatorKind::KL;
};

struct GridRow {
    GridCell cell;
    eval::MetricsReport val;
    eval::MetricsReport test;
    std::size_t best_epoch = 0;
    std::vector<eval::DropRow> drop;  // control, A, V, A+V on the test split
    bool aborted = false;
};

/// Cells from grid.seeds x grid.lambdas x grid.lrs x grid.kinds. Seeds are
/// base_seed, base_seed+1, ...; empty lists fall back to the single values.
std::vector<GridCell> grid_cells(const cli::RunConfig& config, std::uint64_t base_seed);

/// Trains and evaluates one cell; the dataset is built from the cell seed.
GridRow run_grid_cell(const cli::RunConfig& config, const GridCell& cell);

/// Runs every cell, in parallel when OpenMP is available. Rows come back in
/// cell order regardless of scheduling.
std::vector<GridRow> run_grid(const cli::RunConfig& config, const std::vector<GridCell>& cells);

void write_grid_csv(std::ostream& os, const std::vector<GridRow>& rows);

}  // namespace mdm::experiment
