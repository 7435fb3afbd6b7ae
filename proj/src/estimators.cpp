#include "mdm/estimators.hpp"

#include "mdm/errors.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <sstream>
#include <string>

namespace mdm::est {

namespace {

std::string lower(std::string_view text) {
    std::string out(text);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
    return out;
}

// exp() of anything above this overflows a double.
constexpr double kExpLimit = 700.0;

void require_finite(std::span<const double> scores, const char* which) {
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!std::isfinite(scores[i])) {
            std::ostringstream os;
            os << "non-finite critic output " << scores[i] << " on " << which << " row " << i;
            throw EstimationError(os.str());
        }
    }
}

double mean_of(std::span<const double> v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

const char* to_string(EstimatorKind kind) {
    switch (kind) {
        case EstimatorKind::KL: return "kl";
        case EstimatorKind::F: return "f";
        case EstimatorKind::W: return "w";
    }
    return "?";
}

EstimatorKind parse_kind(std::string_view text) {
    const std::string t = lower(text);
    if (t == "kl") return EstimatorKind::KL;
    if (t == "f") return EstimatorKind::F;
    if (t == "w") return EstimatorKind::W;
    throw ConfigError("unknown estimator kind '" + std::string(text) + "' (expected kl, f or w)");
}

const char* to_string(OutputActivation act) {
    switch (act) {
        case OutputActivation::Identity: return "identity";
        case OutputActivation::Sigmoid: return "sigmoid";
        case OutputActivation::Softplus: return "softplus";
    }
    return "?";
}

OutputActivation parse_output(std::string_view text) {
    const std::string t = lower(text);
    if (t == "identity") return OutputActivation::Identity;
    if (t == "sigmoid") return OutputActivation::Sigmoid;
    if (t == "softplus") return OutputActivation::Softplus;
    throw ConfigError("unknown critic output '" + std::string(text) + "' (expected identity, sigmoid or softplus)");
}

OutputActivation default_output(EstimatorKind kind) {
    return kind == EstimatorKind::W ? OutputActivation::Sigmoid : OutputActivation::Identity;
}

std::vector<std::size_t> critic_widths(std::size_t input_width, std::size_t width_scale) {
    if (input_width == 0) throw ContractError("critic input width must be positive");
    if (width_scale == 0) throw ContractError("critic width scale must be positive");
    auto width = [&](std::size_t w) { return std::max<std::size_t>(w, 4) * width_scale; };
    const std::size_t d = input_width;
    return {width(d / 2), width(d), width(d), width(d / 4), width(d / 4)};
}

// ---------------------------------------------------------------------------

StatisticNetwork::StatisticNetwork(const CriticConfig& config, Rng& init) : config_(config) {
    if (!(config.dropout >= 0.0 && config.dropout < 1.0)) throw ContractError("critic dropout must lie in [0, 1)");
    std::size_t in = config.input_width;
    const auto widths = critic_widths(config.input_width, config.width_scale);
    for (std::size_t i = 0; i < widths.size(); ++i) {
        layers_.push_back(nn::make_dense("critic.l" + std::to_string(i), in, widths[i], nn::Activation::LeakyRelu, init));
        layers_.back().slope = config.slope;
        in = widths[i];
    }
    nn::Activation out_act = nn::Activation::Identity;
    if (config.output == OutputActivation::Sigmoid) out_act = nn::Activation::Sigmoid;
    if (config.output == OutputActivation::Softplus) out_act = nn::Activation::Softplus;
    layers_.push_back(nn::make_dense("critic.out", in, 1, out_act, init));
}

ad::Var StatisticNetwork::forward(ad::Tape& tape, ad::Var z, nn::Track track, bool training, Rng* dropout_rng) {
    if (z.cols() != config_.input_width) {
        throw ShapeError("critic expects width " + std::to_string(config_.input_width) + ", got " +
                         ad::to_string(z.shape()));
    }
    const nn::DropoutSpec drop{config_.dropout, training};
    if (training && config_.dropout > 0.0 && dropout_rng == nullptr) {
        throw ContractError("critic forward in training mode needs a dropout stream");
    }
    ad::Var h = z;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        h = nn::dense_forward(tape, layers_[i], h, track);
        if (i + 1 < layers_.size() && training && config_.dropout > 0.0) h = nn::dropout_forward(drop, h, *dropout_rng);
    }
    return h;
}

ad::Var StatisticNetwork::forward(ad::Tape& tape, ad::Var z) const {
    if (z.cols() != config_.input_width) {
        throw ShapeError("critic expects width " + std::to_string(config_.input_width) + ", got " +
                         ad::to_string(z.shape()));
    }
    ad::Var h = z;
    for (const auto& layer : layers_) h = nn::dense_forward(tape, layer, h);
    return h;
}

std::vector<double> StatisticNetwork::score(const Matrix& z) const {
    ad::Tape tape;
    ad::Var out = forward(tape, tape.constant(z));
    return {out.value().begin(), out.value().end()};
}

nn::ParamRefs StatisticNetwork::parameters() {
    nn::ParamRefs out;
    for (auto& layer : layers_) {
        out.push_back(&layer.weight);
        out.push_back(&layer.bias);
    }
    return out;
}

// ---------------------------------------------------------------------------

ad::Var objective(EstimatorKind kind, ad::Var t_joint, ad::Var t_marg) {
    if (t_joint.size() == 0 || t_marg.size() == 0) throw EstimationError("empty critic score batch");
    require_finite(t_joint.value(), "joint");
    require_finite(t_marg.value(), "marginal");
    switch (kind) {
        case EstimatorKind::KL:
            return ad::sub(ad::mean(t_joint), ad::log_mean_exp(t_marg));
        case EstimatorKind::F: {
            const auto v = t_marg.value();
            const double mx = *std::max_element(v.begin(), v.end());
            if (mx > kExpLimit) {
                std::ostringstream os;
                os << "critic output " << mx << " overflows exp in the f-divergence bound; "
                   << "enable weight clipping or lower the critic learning rate";
                throw EstimationError(os.str());
            }
            return ad::sub(ad::mean(t_joint), ad::mean(ad::exp(ad::add_scalar(t_marg, -1.0))));
        }
        case EstimatorKind::W: {
            const double m = mean_of(t_marg.value());
            if (!(m > 0.0)) {
                std::ostringstream os;
                os << "mean critic output on marginal samples is " << m
                   << "; the Wasserstein bound needs a strictly positive critic";
                throw EstimationError(os.str());
            }
            return ad::sub(ad::mean(t_joint), ad::log(ad::mean(t_marg)));
        }
    }
    throw ContractError("unknown estimator kind");
}

double estimate_from_scores(EstimatorKind kind, std::span<const double> t_joint, std::span<const double> t_marg) {
    ad::Tape tape;
    ad::Var tj = tape.constant(ad::Shape{t_joint.size()}, {t_joint.begin(), t_joint.end()});
    ad::Var tm = tape.constant(ad::Shape{t_marg.size()}, {t_marg.begin(), t_marg.end()});
    return objective(kind, tj, tm).item();
}

MDMEstimate estimate(EstimatorKind kind, const StatisticNetwork& critic, const Matrix& z_joint,
                     const Matrix& z_marg) {
    if (z_joint.empty() || z_marg.empty()) throw ContractError("estimate: empty batch");
    ad::Tape tape;
    ad::Var tj = critic.forward(tape, tape.constant(z_joint));
    ad::Var tm = critic.forward(tape, tape.constant(z_marg));
    MDMEstimate out;
    out.value = objective(kind, tj, tm).item();
    out.kind = kind;
    out.batch_size = z_joint.rows;
    auto params = const_cast<StatisticNetwork&>(critic).parameters();
    out.critic_snapshot = nn::hash_parameters(params);
    return out;
}

MDMEstimate estimate_kl(const StatisticNetwork& critic, const Matrix& z_joint, const Matrix& z_marg) {
    return estimate(EstimatorKind::KL, critic, z_joint, z_marg);
}

MDMEstimate estimate_f(const StatisticNetwork& critic, const Matrix& z_joint, const Matrix& z_marg) {
    return estimate(EstimatorKind::F, critic, z_joint, z_marg);
}

MDMEstimate estimate_w(const StatisticNetwork& critic, const Matrix& z_joint, const Matrix& z_marg) {
    return estimate(EstimatorKind::W, critic, z_joint, z_marg);
}

double constant_critic_floor(EstimatorKind kind, std::span<const double> t_marg) {
    const double c = mean_of(t_marg);
    switch (kind) {
        case EstimatorKind::KL: return 0.0;
        case EstimatorKind::F: return c - std::exp(c - 1.0);
        case EstimatorKind::W:
            if (!(c > 0.0)) throw EstimationError("constant floor of the Wasserstein bound needs a positive critic");
            return c - std::log(c);
    }
    throw ContractError("unknown estimator kind");
}

// ---------------------------------------------------------------------------

Permutation random_permutation(std::size_t n, Rng& rng) {
    Permutation p(n);
    std::iota(p.begin(), p.end(), std::size_t{0});
    std::shuffle(p.begin(), p.end(), rng);
    return p;
}

ShuffledBatch apply_permutations(std::span<const Matrix> modalities, std::vector<Permutation> perms) {
    if (perms.size() != modalities.size()) {
        throw ContractError("apply_permutations: one permutation per modality required");
    }
    ShuffledBatch out;
    for (std::size_t j = 0; j < modalities.size(); ++j) {
        const Matrix& src = modalities[j];
        const Permutation& p = perms[j];
        if (p.size() != src.rows) throw ShapeError("permutation length differs from batch size");
        std::vector<bool> seen(p.size(), false);
        for (std::size_t v : p) {
            if (v >= p.size() || seen[v]) throw ContractError("apply_permutations: not a bijection");
            seen[v] = true;
        }
        Matrix dst(src.rows, src.cols);
        for (std::size_t i = 0; i < src.rows; ++i) std::copy(src.row(p[i]).begin(), src.row(p[i]).end(), dst.row(i).begin());
        out.modalities.push_back(std::move(dst));
    }
    out.permutations = std::move(perms);
    return out;
}

ShuffledBatch shuffle_product_of_marginals(std::span<const Matrix> modalities, Rng& rng) {
    if (modalities.empty()) throw ContractError("shuffle: no modalities");
    const std::size_t m = modalities[0].rows;
    for (const Matrix& x : modalities) {
        if (x.rows != m) throw ShapeError("shuffle: modalities have different batch sizes");
    }
    if (m < 2) throw ContractError("shuffle: batch size must be at least 2, got " + std::to_string(m));
    std::vector<Permutation> perms;
    for (std::size_t j = 0; j < modalities.size(); ++j) perms.push_back(random_permutation(m, rng));
    return apply_permutations(modalities, std::move(perms));
}

Matrix concat_columns(std::span<const Matrix> parts) {
    if (parts.empty()) return {};
    const std::size_t rows = parts[0].rows;
    std::size_t cols = 0;
    for (const Matrix& p : parts) {
        if (p.rows != rows) throw ShapeError("concat_columns: row mismatch");
        cols += p.cols;
    }
    Matrix out(rows, cols);
    for (std::size_t i = 0; i < rows; ++i) {
        std::size_t offset = 0;
        for (const Matrix& p : parts) {
            std::copy(p.row(i).begin(), p.row(i).end(), out.row(i).begin() + static_cast<std::ptrdiff_t>(offset));
            offset += p.cols;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

void validate_setup(EstimatorKind kind, const CriticConfig& critic, const StatisticStepOptions& options) {
    if (kind == EstimatorKind::W) {
        if (critic.output == OutputActivation::Identity) {
            throw ContractError("the Wasserstein estimator needs a positive critic output (sigmoid or softplus)");
        }
        if (!(options.clip > 0.0)) throw ContractError("the Wasserstein estimator needs weight clipping enabled");
    }
}

double statistic_step(EstimatorKind kind, StatisticNetwork& critic, const Matrix& z_joint, const Matrix& z_marg,
                      nn::AdamWState& optimizer, Rng& dropout_rng, const StatisticStepOptions& options,
                      EmaState* ema) {
    validate_setup(kind, critic.config(), options);
    if (z_joint.rows != z_marg.rows) {
        throw ContractError("statistic_step: joint and marginal batches differ in size");
    }
    auto params = critic.parameters();
    ad::Tape tape;
    ad::Var tj = critic.forward(tape, tape.constant(z_joint), nn::Track::Yes, true, &dropout_rng);
    ad::Var tm = critic.forward(tape, tape.constant(z_marg), nn::Track::Yes, true, &dropout_rng);
    ad::Var obj = objective(kind, tj, tm);
    const double value = obj.item();

    ad::Var target = obj;
    if (kind == EstimatorKind::KL && options.ema_correction && ema != nullptr) {
        ad::Var e = ad::mean(ad::exp(tm));
        const double current = e.item();
        if (!std::isfinite(current)) throw EstimationError("ema correction: mean exp(T_marg) overflowed");
        ema->value = ema->initialized ? options.ema_decay * ema->value + (1.0 - options.ema_decay) * current : current;
        ema->initialized = true;
        target = ad::sub(ad::mean(tj), ad::scale(e, 1.0 / ema->value));
    }

    nn::zero_grad(params);
    tape.backward(ad::scale(target, -1.0));
    nn::adamw_step(optimizer, params);
    if (kind == EstimatorKind::W) nn::clip_weights(params, options.clip);
    return value;
}

}  // namespace mdm::est
