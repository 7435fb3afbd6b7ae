#pragma once

// Multimodal fusion encoder, linear regression head and the two-stage
// trainer that alternates critic ascent with penalised classifier descent.

#include "mdm/data.hpp"
#include "mdm/estimators.hpp"
#include "mdm/nn.hpp"

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mdm::fusion {

enum class EncoderVariant { ConcatMLP, EFLSTM };

const char* to_string(EncoderVariant v);
EncoderVariant parse_variant(std::string_view text);

struct FusionEncoderSpec {
    EncoderVariant variant = EncoderVariant::ConcatMLP;
    std::size_t d_a = 8;
    std::size_t d_v = 8;
    std::size_t d_l = 8;
    std::size_t hidden = 32;
    std::size_t d_in = 16;      // width of the fused representation Z
    std::size_t seq_len = 1;    // EFLSTM only
    double dropout = 0.2;
    nn::Activation activation = nn::Activation::LeakyRelu;

    [[nodiscard]] std::size_t input_width() const { return d_a + d_v + d_l; }
};

void validate(const FusionEncoderSpec& spec);

/// Which modalities reach the encoder; dropped ones are replaced.
struct ModalityMask {
    bool a = true;
    bool v = true;
    bool l = true;
};

enum class Substitution { Zeros, TrainMean };

/// Per-modality feature means over a training set, used for TrainMean substitution.
struct ModalityMeans {
    std::vector<double> a;
    std::vector<double> v;
    std::vector<double> l;
};

ModalityMeans modality_means(const data::Dataset& train);

/// Encoder input for a batch: one [m x (d_a+d_v+d_l)] matrix per time step.
/// ConcatMLP batches carry a single step holding the time-average.
struct FusionBatch {
    std::vector<Matrix> steps;
    std::vector<double> y;

    [[nodiscard]] std::size_t size() const { return y.size(); }
};

/// Gathers rows; modality j of row i comes from samples[index_j[i]].
FusionBatch make_batch(const FusionEncoderSpec& spec, const data::Dataset& samples,
                       std::span<const std::size_t> index_a, std::span<const std::size_t> index_v,
                       std::span<const std::size_t> index_l, const ModalityMask& mask = {},
                       Substitution substitution = Substitution::Zeros, const ModalityMeans* means = nullptr);

/// Aligned batch over `index`.
FusionBatch make_batch(const FusionEncoderSpec& spec, const data::Dataset& samples,
                       std::span<const std::size_t> index, const ModalityMask& mask = {},
                       Substitution substitution = Substitution::Zeros, const ModalityMeans* means = nullptr);

class FusionEncoder {
public:
    FusionEncoder() = default;
    FusionEncoder(const FusionEncoderSpec& spec, Rng& init);

    /// Z = f(x_a, x_v, x_l) as [m x d_in].
    ad::Var encode(ad::Tape& tape, const FusionBatch& batch, nn::Track track, bool training, Rng* dropout_rng);
    ad::Var encode(ad::Tape& tape, const FusionBatch& batch) const;
    Matrix encode(const FusionBatch& batch) const;

    nn::ParamRefs parameters();
    [[nodiscard]] const FusionEncoderSpec& spec() const { return spec_; }
    std::vector<nn::DenseLayer>& mlp() { return mlp_; }
    nn::LSTMCellParams& lstm() { return lstm_; }

private:
    FusionEncoderSpec spec_;
    std::vector<nn::DenseLayer> mlp_;  // ConcatMLP
    nn::LSTMCellParams lstm_;          // EFLSTM
};

/// Affine map d_in -> 1.
struct RegressionHead {
    nn::DenseLayer linear;

    RegressionHead() = default;
    RegressionHead(std::size_t d_in, Rng& init);

    ad::Var forward(ad::Tape& tape, ad::Var z, nn::Track track = nn::Track::Yes);
    ad::Var forward(ad::Tape& tape, ad::Var z) const;
    nn::ParamRefs parameters() { return linear.parameters(); }
};

enum class DownstreamLoss { L1, BCE };

const char* to_string(DownstreamLoss k);
DownstreamLoss parse_downstream(std::string_view text);

/// L1: mean |pred - y|. BCE: `pred` are logits, targets must be 0 or 1;
/// returns mean softplus(pred) - y*pred, the cross-entropy of sigmoid(pred).
ad::Var downstream_loss(DownstreamLoss kind, ad::Var pred, ad::Var y);

/// Critic input: fused representations (default) or the raw concatenated triple.
enum class CriticInput { Fused, Raw };

struct TotalLossConfig {
    double lambda = 0.1;
    est::EstimatorKind kind = est::EstimatorKind::KL;
    DownstreamLoss downstream = DownstreamLoss::L1;
    std::size_t unroll = 10;
    double lr = 0.001;
    std::optional<double> critic_lr;  // defaults to lr
    double weight_decay = 0.01;
    double clip = 0.05;
    std::size_t batch_size = 32;
    std::size_t epochs = 40;
    std::size_t patience = 10;
    bool static_shuffle = false;
    bool ema_correction = false;
    CriticInput critic_input = CriticInput::Fused;
    std::optional<est::OutputActivation> critic_output;  // defaults per kind
    double critic_dropout = 0.4;
    std::size_t critic_width_scale = 1;
};

void validate(const TotalLossConfig& config);

struct FusionModel {
    FusionEncoder encoder;
    RegressionHead head;
    est::StatisticNetwork critic;
    bool has_critic = false;  // false when trained without the penalty

    /// Encoder and head parameters.
    nn::ParamRefs classifier_parameters();
    nn::ParamRefs critic_parameters() { return critic.parameters(); }
    /// Everything that goes into a checkpoint.
    nn::ParamRefs checkpoint_parameters();

    /// Eval-mode predictions.
    std::vector<double> predict(const FusionBatch& batch) const;
    /// Matrix fed to the critic for a batch (Z or the raw triple).
    Matrix critic_input(const FusionBatch& batch, CriticInput mode) const;
};

FusionModel make_model(const FusionEncoderSpec& encoder, const TotalLossConfig& loss, Rng& init);

/// L_down(pred, y) - lambda * I(T frozen; Z_joint, Z_marg). The critic is
/// evaluated in eval mode as constants; gradient reaches the encoder through
/// both representations. With lambda = 0 the marginal batch is ignored.
ad::Var total_loss(ad::Tape& tape, const TotalLossConfig& config, FusionModel& model, const FusionBatch& batch,
                   const FusionBatch* shuffled, nn::Track track, bool training, Rng* dropout_rng,
                   double* mdm_estimate = nullptr, double* loss_down = nullptr);

struct TrainLogRow {
    std::size_t step = 0;
    std::size_t epoch = 0;
    std::string phase;  // critic | classifier | validation
    std::optional<double> loss_down;
    std::optional<double> mdm_estimate;
    std::optional<double> loss_total;
    std::optional<double> val_mae;
};

struct FusionTrainState {
    FusionModel model;
    nn::AdamWState classifier_opt;
    nn::AdamWState critic_opt;
    std::size_t epoch = 0;
    FusionModel best;
    double best_val_mae = 0.0;
    std::size_t best_epoch = 0;
};

struct TrainResult {
    FusionTrainState state;
    std::vector<TrainLogRow> log;
    bool aborted = false;
    std::string abort_reason;
};

struct TrainOptions {
    bool record_critic_steps = true;
};

/// Two-stage training. Randomness comes from named streams of `seed`:
/// "init", "batch", "critic_batch", "shuffle", "dropout", "critic_dropout".
TrainResult train(const FusionEncoderSpec& encoder, const TotalLossConfig& config, const data::Dataset& train_set,
                  const data::Dataset& val_set, std::uint64_t seed, const TrainOptions& options = {});

/// Predictions of `model` over a whole dataset, in order.
std::vector<double> predict_dataset(const FusionModel& model, const data::Dataset& samples,
                                    const ModalityMask& mask = {}, Substitution substitution = Substitution::Zeros,
                                    const ModalityMeans* means = nullptr);

double mean_absolute_error(std::span<const double> pred, std::span<const double> y);

void write_log_csv(std::ostream& os, std::span<const TrainLogRow> log);

}  // namespace mdm::fusion
