#pragma once

#include "mdm/fusion.hpp"

#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace mdm::eval {

struct MetricsReport {
    double mae = 0.0;
    double pearson_corr = 0.0;
    double acc2 = 0.0;
    double acc7 = 0.0;
    std::size_t n = 0;
};

/// Thrown when either side has zero variance; carries the other metrics.
struct CorrelationUndefined : std::runtime_error {
    MetricsReport partial;
    explicit CorrelationUndefined(MetricsReport report)
        : std::runtime_error("correlation undefined: zero variance in predictions or labels"), partial(report) {}
};

/// Round half away from zero, then clamp to [-3, 3].
int acc7_bin(double x);
/// Positive class for x >= 0.
bool acc2_positive(double x);

double pearson(std::span<const double> pred, std::span<const double> y);
double acc2(std::span<const double> pred, std::span<const double> y);
double acc7(std::span<const double> pred, std::span<const double> y);

MetricsReport compute_metrics(std::span<const double> pred, std::span<const double> y);

enum class KeepCondition { Control, A, V, AV };

const char* to_string(KeepCondition c);
fusion::ModalityMask mask_for(KeepCondition c);

struct DropConfig {
    bool keep_a = false;
    bool keep_v = false;
    fusion::Substitution substitution = fusion::Substitution::Zeros;
};

struct DropRow {
    KeepCondition condition = KeepCondition::Control;
    double acc2 = 0.0;
    double acc2_corrupt = 0.0;
    double ratio = 1.0;
};

/// Acc2 with all modalities, then with the modalities outside the keep set
/// substituted. Language is always substituted except in the control row.
/// Rows come back in the order control, A, V, A+V.
std::vector<DropRow> modality_drop_eval(const fusion::FusionModel& model, const data::Dataset& test,
                                        fusion::Substitution substitution, const fusion::ModalityMeans* means = nullptr);

/// Single corrupted condition as described by `config`.
DropRow evaluate_drop(const fusion::FusionModel& model, const data::Dataset& test, const DropConfig& config,
                      const fusion::ModalityMeans* means = nullptr);

struct ScoredSample {
    std::size_t index = 0;
    double score = 0.0;
    std::size_t rank = 0;  // 1 = highest score
};

struct ScoreReport {
    std::vector<ScoredSample> ranked;  // descending score, ties by index
    std::vector<ScoredSample> high;    // top k
    std::vector<ScoredSample> low;     // bottom k, lowest first
};

/// Eval-mode critic scores of each aligned sample's critic input.
std::vector<double> critic_scores(const fusion::FusionModel& model, const data::Dataset& samples,
                                  fusion::CriticInput mode = fusion::CriticInput::Fused);

/// Critic scores for triples whose modalities come from index_a/v/l.
std::vector<double> critic_scores(const fusion::FusionModel& model, const data::Dataset& samples,
                                  std::span<const std::size_t> index_a, std::span<const std::size_t> index_v,
                                  std::span<const std::size_t> index_l,
                                  fusion::CriticInput mode = fusion::CriticInput::Fused);

ScoreReport rank_scores(std::span<const double> scores, std::size_t k);

ScoreReport interpretability_score(const fusion::FusionModel& model, const data::Dataset& samples, std::size_t k,
                                   fusion::CriticInput mode = fusion::CriticInput::Fused);

/// Two-sided exact sign test p-value for `positives` successes out of `trials`.
double sign_test_p_value(std::size_t positives, std::size_t trials);

/// A NaN correlation is written as an empty field.
void write_metrics_csv(std::ostream& os, std::span<const std::pair<std::string, MetricsReport>> rows);
void write_drop_csv(std::ostream& os, std::span<const DropRow> rows);
void write_scores_csv(std::ostream& os, const ScoreReport& report);

}  // namespace mdm::eval
