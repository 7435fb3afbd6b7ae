#pragma once

// Neural estimators of the dependency between jointly drawn and
// independently shuffled samples.
//
// Every estimator contrasts critic scores T on joint samples with scores on
// samples from the product of marginals:
//   KL (Donsker-Varadhan):   mean T_joint - log mean exp(T_marg)
//   F  (NWJ f-divergence):   mean T_joint - mean exp(T_marg - 1)
//   W  (Wasserstein form):   mean T_joint - log mean T_marg
// The W form keeps the log on the second term, so it needs a critic with
// strictly positive output and weight clipping while it trains.

#include "mdm/matrix.hpp"
#include "mdm/nn.hpp"
#include "mdm/rng.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace mdm::est {

enum class EstimatorKind { KL, F, W };

const char* to_string(EstimatorKind kind);
/// Accepts "kl", "f", "w" (any case).
EstimatorKind parse_kind(std::string_view text);

enum class OutputActivation { Identity, Sigmoid, Softplus };

const char* to_string(OutputActivation act);
OutputActivation parse_output(std::string_view text);
/// Identity for KL and F, sigmoid for W.
OutputActivation default_output(EstimatorKind kind);

struct CriticConfig {
    std::size_t input_width = 0;
    OutputActivation output = OutputActivation::Identity;
    double dropout = 0.4;
    std::size_t width_scale = 1;
    double slope = 0.01;
};

/// Hidden widths d/2, d, d, d/4, d/4 (integer division, at least 4), each
/// multiplied by `width_scale`.
std::vector<std::size_t> critic_widths(std::size_t input_width, std::size_t width_scale = 1);

/// The critic T: five LeakyReLU dense layers with dropout after each, then a
/// single scalar output with a configurable activation.
class StatisticNetwork {
public:
    StatisticNetwork() = default;
    StatisticNetwork(const CriticConfig& config, Rng& init);

    /// Scores each row of z ([m x input_width]) into [m x 1]. Dropout is
    /// applied only when `training` is set, drawing its masks from `dropout_rng`.
    ad::Var forward(ad::Tape& tape, ad::Var z, nn::Track track, bool training, Rng* dropout_rng);
    /// Eval-mode forward on a constant tape node.
    ad::Var forward(ad::Tape& tape, ad::Var z) const;
    /// Eval-mode scores as a flat vector.
    std::vector<double> score(const Matrix& z) const;

    nn::ParamRefs parameters();
    [[nodiscard]] const CriticConfig& config() const { return config_; }
    [[nodiscard]] std::size_t input_width() const { return config_.input_width; }
    [[nodiscard]] const std::vector<nn::DenseLayer>& layers() const { return layers_; }
    std::vector<nn::DenseLayer>& layers() { return layers_; }

private:
    CriticConfig config_;
    std::vector<nn::DenseLayer> layers_;
};

struct MDMEstimate {
    double value = 0.0;  // nats
    EstimatorKind kind = EstimatorKind::KL;
    std::size_t batch_size = 0;
    std::uint64_t critic_snapshot = 0;  // parameter hash of the critic that produced it
};

/// Differentiable objective on critic scores, with the domain checks each
/// kind needs (finite scores, exp overflow, positive mean for W).
ad::Var objective(EstimatorKind kind, ad::Var t_joint, ad::Var t_marg);

/// Objective value for given critic scores.
double estimate_from_scores(EstimatorKind kind, std::span<const double> t_joint, std::span<const double> t_marg);

MDMEstimate estimate_kl(const StatisticNetwork& critic, const Matrix& z_joint, const Matrix& z_marg);
MDMEstimate estimate_f(const StatisticNetwork& critic, const Matrix& z_joint, const Matrix& z_marg);
MDMEstimate estimate_w(const StatisticNetwork& critic, const Matrix& z_joint, const Matrix& z_marg);
MDMEstimate estimate(EstimatorKind kind, const StatisticNetwork& critic, const Matrix& z_joint,
                     const Matrix& z_marg);

/// Value a constant critic equal to the mean marginal score would reach
/// under `kind`; the baseline an uninformative critic can attain.
double constant_critic_floor(EstimatorKind kind, std::span<const double> t_marg);

using Permutation = std::vector<std::size_t>;

/// Product-of-marginals batch: row i of modality j is source row perms[j][i].
struct ShuffledBatch {
    std::vector<Permutation> permutations;
    std::vector<Matrix> modalities;
};

Permutation random_permutation(std::size_t n, Rng& rng);

/// Applies the given permutations, one per modality.
ShuffledBatch apply_permutations(std::span<const Matrix> modalities, std::vector<Permutation> perms);

/// Draws an independent uniform permutation per modality. Requires m >= 2.
ShuffledBatch shuffle_product_of_marginals(std::span<const Matrix> modalities, Rng& rng);

/// Horizontal concatenation of equally tall matrices.
Matrix concat_columns(std::span<const Matrix> parts);

struct StatisticStepOptions {
    double clip = 0.05;            // applied after every W step; <= 0 disables for KL/F
    bool ema_correction = false;   // bias-corrected gradient for the KL log term
    double ema_decay = 0.99;
};

/// Running average of mean exp(T_marg) for the corrected KL gradient.
struct EmaState {
    double value = 0.0;
    bool initialized = false;
};

/// One gradient-ascent step on the critic parameters only, with dropout
/// active. Returns the objective evaluated before the update.
double statistic_step(EstimatorKind kind, StatisticNetwork& critic, const Matrix& z_joint, const Matrix& z_marg,
                      nn::AdamWState& optimizer, Rng& dropout_rng, const StatisticStepOptions& options = {},
                      EmaState* ema = nullptr);

/// Throws ContractError when `kind` cannot be trained with this critic/options pair.
void validate_setup(EstimatorKind kind, const CriticConfig& critic, const StatisticStepOptions& options);

}  // namespace mdm::est
