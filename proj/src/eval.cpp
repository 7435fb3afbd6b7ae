#include "mdm/eval.hpp"

#include "mdm/errors.hpp"
#include "mdm/format.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mdm::eval {

namespace {

void check_lengths(std::span<const double> pred, std::span<const double> y) {
    if (pred.size() != y.size()) {
        throw ContractError("metrics: " + std::to_string(pred.size()) + " predictions for " +
                            std::to_string(y.size()) + " labels");
    }
    if (pred.empty()) throw ContractError("metrics: empty input");
}

}  // namespace

int acc7_bin(double x) {
    const double r = std::round(x);  // halves away from zero
    return static_cast<int>(std::clamp(r, -3.0, 3.0));
}

bool acc2_positive(double x) { return x >= 0.0; }

double pearson(std::span<const double> pred, std::span<const double> y) {
    check_lengths(pred, y);
    const double n = static_cast<double>(pred.size());
    const double mp = std::accumulate(pred.begin(), pred.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double dp = pred[i] - mp;
        const double dy = y[i] - my;
        sxy += dp * dy;
        sxx += dp * dp;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) throw std::domain_error("zero variance");
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double acc2(std::span<const double> pred, std::span<const double> y) {
    check_lengths(pred, y);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) hits += acc2_positive(pred[i]) == acc2_positive(y[i]);
    return static_cast<double>(hits) / static_cast<double>(pred.size());
}

double acc7(std::span<const double> pred, std::span<const double> y) {
    check_lengths(pred, y);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) hits += acc7_bin(pred[i]) == acc7_bin(y[i]);
    return static_cast<double>(hits) / static_cast<double>(pred.size());
}

MetricsReport compute_metrics(std::span<const double> pred, std::span<const double> y) {
    check_lengths(pred, y);
    MetricsReport r;
    r.n = pred.size();
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) s += std::fabs(pred[i] - y[i]);
    r.mae = s / static_cast<double>(pred.size());
    r.acc2 = acc2(pred, y);
    r.acc7 = acc7(pred, y);
    try {
        r.pearson_corr = pearson(pred, y);
    } catch (const std::domain_error&) {
        r.pearson_corr = std::nan("");
        throw CorrelationUndefined(r);
    }
    return r;
}

// ---------------------------------------------------------------------------

const char* to_string(KeepCondition c) {
    switch (c) {
        case KeepCondition::Control: return "control";
        case KeepCondition::A: return "A";
        case KeepCondition::V: return "V";
        case KeepCondition::AV: return "A+V";
    }
    return "?";
}

fusion::ModalityMask mask_for(KeepCondition c) {
    switch (c) {
        case KeepCondition::Control: return {true, true, true};
        case KeepCondition::A: return {true, false, false};
        case KeepCondition::V: return {false, true, false};
        case KeepCondition::AV: return {true, true, false};
    }
    return {};
}

namespace {

std::vector<double> labels_of(const data::Dataset& samples) {
    std::vector<double> y;
    y.reserve(samples.size());
    for (const auto& s : samples) y.push_back(s.y);
    return y;
}

DropRow drop_row(const fusion::FusionModel& model, const data::Dataset& test, KeepCondition condition,
                 const fusion::ModalityMask& mask, fusion::Substitution substitution,
                 const fusion::ModalityMeans* means, double clean_acc2) {
    const auto y = labels_of(test);
    DropRow row;
    row.condition = condition;
    row.acc2 = clean_acc2;
    row.acc2_corrupt = acc2(fusion::predict_dataset(model, test, mask, substitution, means), y);
    if (clean_acc2 == 0.0) throw ContractError("drop ratio undefined: Acc2 is 0 on uncorrupted inputs");
    row.ratio = row.acc2_corrupt / clean_acc2;
    return row;
}

}  // namespace

std::vector<DropRow> modality_drop_eval(const fusion::FusionModel& model, const data::Dataset& test,
                                        fusion::Substitution substitution, const fusion::ModalityMeans* means) {
    if (test.empty()) throw ContractError("modality_drop_eval: empty test set");
    const auto y = labels_of(test);
    const double clean = acc2(fusion::predict_dataset(model, test), y);
    std::vector<DropRow> rows;
    for (KeepCondition c : {KeepCondition::Control, KeepCondition::A, KeepCondition::V, KeepCondition::AV}) {
        rows.push_back(drop_row(model, test, c, mask_for(c), substitution, means, clean));
    }
    return rows;
}

DropRow evaluate_drop(const fusion::FusionModel& model, const data::Dataset& test, const DropConfig& config,
                      const fusion::ModalityMeans* means) {
    if (test.empty()) throw ContractError("evaluate_drop: empty test set");
    const auto y = labels_of(test);
    const double clean = acc2(fusion::predict_dataset(model, test), y);
    KeepCondition c = KeepCondition::AV;
    if (config.keep_a && !config.keep_v) c = KeepCondition::A;
    if (!config.keep_a && config.keep_v) c = KeepCondition::V;
    const fusion::ModalityMask mask{config.keep_a, config.keep_v, false};
    return drop_row(model, test, c, mask, config.substitution, means, clean);
}

// ---------------------------------------------------------------------------

std::vector<double> critic_scores(const fusion::FusionModel& model, const data::Dataset& samples,
                                  std::span<const std::size_t> index_a, std::span<const std::size_t> index_v,
                                  std::span<const std::size_t> index_l, fusion::CriticInput mode) {
    constexpr std::size_t kChunk = 256;
    std::vector<double> out;
    out.reserve(index_a.size());
    for (std::size_t start = 0; start < index_a.size(); start += kChunk) {
        const std::size_t len = std::min(kChunk, index_a.size() - start);
        const auto batch = fusion::make_batch(model.encoder.spec(), samples, index_a.subspan(start, len),
                                              index_v.subspan(start, len), index_l.subspan(start, len));
        const auto s = model.critic.score(model.critic_input(batch, mode));
        out.insert(out.end(), s.begin(), s.end());
    }
    return out;
}

std::vector<double> critic_scores(const fusion::FusionModel& model, const data::Dataset& samples,
                                  fusion::CriticInput mode) {
    std::vector<std::size_t> idx(samples.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return critic_scores(model, samples, idx, idx, idx, mode);
}

ScoreReport rank_scores(std::span<const double> scores, std::size_t k) {
    if (k > scores.size()) {
        throw ContractError("k = " + std::to_string(k) + " exceeds the " + std::to_string(scores.size()) + " samples");
    }
    ScoreReport report;
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    for (std::size_t r = 0; r < order.size(); ++r) report.ranked.push_back({order[r], scores[order[r]], r + 1});
    report.high.assign(report.ranked.begin(), report.ranked.begin() + static_cast<std::ptrdiff_t>(k));
    report.low.assign(report.ranked.rbegin(), report.ranked.rbegin() + static_cast<std::ptrdiff_t>(k));
    return report;
}

ScoreReport interpretability_score(const fusion::FusionModel& model, const data::Dataset& samples, std::size_t k,
                                   fusion::CriticInput mode) {
    if (k > samples.size()) {
        throw ContractError("k = " + std::to_string(k) + " exceeds the " + std::to_string(samples.size()) + " samples");
    }
    return rank_scores(critic_scores(model, samples, mode), k);
}

double sign_test_p_value(std::size_t positives, std::size_t trials) {
    if (trials == 0) return 1.0;
    const std::size_t extreme = std::min(positives, trials - positives);
    // P(X <= extreme) for X ~ Binomial(trials, 1/2), in log space.
    double tail = 0.0;
    const double log_half_n = static_cast<double>(trials) * std::log(0.5);
    for (std::size_t i = 0; i <= extreme; ++i) {
        const double log_choose = std::lgamma(static_cast<double>(trials) + 1.0) -
                                  std::lgamma(static_cast<double>(i) + 1.0) -
                                  std::lgamma(static_cast<double>(trials - i) + 1.0);
        tail += std::exp(log_choose + log_half_n);
    }
    return std::min(1.0, 2.0 * tail);
}

// ---------------------------------------------------------------------------

void write_metrics_csv(std::ostream& os, std::span<const std::pair<std::string, MetricsReport>> rows) {
    os << "split,mae,pearson_corr,acc2,acc7,n\n";
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& [split, r] = rows[i];
        os << split << ',' << format_double(r.mae) << ','
           << (std::isnan(r.pearson_corr) ? std::string() : format_double(r.pearson_corr)) << ',' << format_double(r.acc2) << ','
           << format_double(r.acc7) << ',' << r.n << '\n';
    }
}

void write_drop_csv(std::ostream& os, std::span<const DropRow> rows) {
    os << "condition,acc2,acc2_corrupt,ratio\n";
    for (const auto& r : rows) {
        os << to_string(r.condition) << ',' << format_double(r.acc2) << ',' << format_double(r.acc2_corrupt) << ','
           << format_double(r.ratio) << '\n';
    }
}

void write_scores_csv(std::ostream& os, const ScoreReport& report) {
    os << "sample_index,score,rank\n";
    for (const auto& s : report.ranked) os << s.index << ',' << format_double(s.score) << ',' << s.rank << '\n';
}

}  // namespace mdm::eval
