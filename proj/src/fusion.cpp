#include "mdm/fusion.hpp"

#include "mdm/errors.hpp"
#include "mdm/format.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <ostream>

namespace mdm::fusion {

namespace {

std::string lower(std::string_view text) {
    std::string out(text);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
    return out;
}

}  // namespace

const char* to_string(EncoderVariant v) {
    return v == EncoderVariant::ConcatMLP ? "concat_mlp" : "ef_lstm";
}

EncoderVariant parse_variant(std::string_view text) {
    const std::string t = lower(text);
    if (t == "concat_mlp" || t == "concatmlp") return EncoderVariant::ConcatMLP;
    if (t == "ef_lstm" || t == "eflstm") return EncoderVariant::EFLSTM;
    throw ConfigError("unknown encoder variant '" + std::string(text) + "' (expected concat_mlp or ef_lstm)");
}

const char* to_string(DownstreamLoss k) { return k == DownstreamLoss::L1 ? "l1" : "bce"; }

DownstreamLoss parse_downstream(std::string_view text) {
    const std::string t = lower(text);
    if (t == "l1") return DownstreamLoss::L1;
    if (t == "bce") return DownstreamLoss::BCE;
    throw ConfigError("unknown downstream loss '" + std::string(text) + "' (expected l1 or bce)");
}

void validate(const FusionEncoderSpec& spec) {
    if (spec.d_in == 0) throw ContractError("encoder output width d_in must be positive");
    if (spec.d_a == 0 || spec.d_v == 0 || spec.d_l == 0) throw ContractError("modality dims must be positive");
    if (spec.variant == EncoderVariant::ConcatMLP && spec.hidden == 0) {
        throw ContractError("ConcatMLP needs a positive hidden size");
    }
    if (spec.variant == EncoderVariant::EFLSTM && spec.seq_len < 1) {
        throw ContractError("EFLSTM needs sequence length >= 1");
    }
    if (!(spec.dropout >= 0.0 && spec.dropout < 1.0)) throw ContractError("encoder dropout must lie in [0, 1)");
}

void validate(const TotalLossConfig& config) {
    if (!(config.lambda >= 0.0)) throw ContractError("lambda must be non-negative");
    if (config.unroll == 0) throw ContractError("unroll must be a positive integer");
    if (config.batch_size < 2) throw ContractError("batch size must be at least 2");
    if (!(config.lr >= 0.0)) throw ContractError("learning rate must be non-negative");
    if (config.critic_lr && !(*config.critic_lr >= 0.0)) throw ContractError("critic learning rate must be non-negative");
    est::CriticConfig critic;
    critic.output = config.critic_output.value_or(est::default_output(config.kind));
    if (config.lambda > 0.0) est::validate_setup(config.kind, critic, {config.clip, config.ema_correction, 0.99});
}

// ---------------------------------------------------------------------------
// Batches

ModalityMeans modality_means(const data::Dataset& train) {
    ModalityMeans means;
    if (train.empty()) return means;
    auto mean_of = [&](auto pick) {
        const data::Sequence& first = pick(train.front());
        std::vector<double> acc(first.front().size(), 0.0);
        std::size_t count = 0;
        for (const auto& s : train) {
            for (const auto& step : pick(s)) {
                for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += step[i];
                ++count;
            }
        }
        for (double& x : acc) x /= static_cast<double>(count);
        return acc;
    };
    means.a = mean_of([](const data::MultimodalSample& s) -> const data::Sequence& { return s.a; });
    means.v = mean_of([](const data::MultimodalSample& s) -> const data::Sequence& { return s.v; });
    means.l = mean_of([](const data::MultimodalSample& s) -> const data::Sequence& { return s.l; });
    return means;
}

FusionBatch make_batch(const FusionEncoderSpec& spec, const data::Dataset& samples,
                       std::span<const std::size_t> index_a, std::span<const std::size_t> index_v,
                       std::span<const std::size_t> index_l, const ModalityMask& mask, Substitution substitution,
                       const ModalityMeans* means) {
    const std::size_t m = index_a.size();
    if (index_v.size() != m || index_l.size() != m) throw ShapeError("make_batch: index lists differ in length");
    if (substitution == Substitution::TrainMean && (!mask.a || !mask.v || !mask.l) && means == nullptr) {
        throw ContractError("train-mean substitution needs modality means");
    }
    const std::size_t width = spec.input_width();
    const bool sequential = spec.variant == EncoderVariant::EFLSTM;
    const std::size_t steps = sequential ? spec.seq_len : 1;

    FusionBatch batch;
    batch.steps.assign(steps, Matrix(m, width));
    batch.y.resize(m);

    struct Block {
        std::span<const std::size_t> index;
        const data::Sequence data::MultimodalSample::*field;
        std::size_t dim;
        std::size_t offset;
        bool keep;
        const std::vector<double>* mean;
        const char* name;
    };
    const Block blocks[3] = {
        {index_a, &data::MultimodalSample::a, spec.d_a, 0, mask.a, means ? &means->a : nullptr, "a"},
        {index_v, &data::MultimodalSample::v, spec.d_v, spec.d_a, mask.v, means ? &means->v : nullptr, "v"},
        {index_l, &data::MultimodalSample::l, spec.d_l, spec.d_a + spec.d_v, mask.l, means ? &means->l : nullptr, "l"},
    };

    for (std::size_t i = 0; i < m; ++i) {
        for (const Block& b : blocks) {
            const std::size_t src = b.index[i];
            if (src >= samples.size()) throw ContractError("make_batch: sample index out of range");
            const data::Sequence& seq = samples[src].*(b.field);
            if (seq.empty() || seq.front().size() != b.dim) {
                throw ShapeError(std::string("make_batch: modality '") + b.name + "' has dimension " +
                                 std::to_string(seq.empty() ? 0 : seq.front().size()) + ", encoder expects " +
                                 std::to_string(b.dim));
            }
            if (sequential && seq.size() != 1 && seq.size() != steps) {
                throw ShapeError(std::string("make_batch: modality '") + b.name + "' has " +
                                 std::to_string(seq.size()) + " steps, encoder expects " + std::to_string(steps));
            }
            for (std::size_t t = 0; t < steps; ++t) {
                double* dst = batch.steps[t].row(i).data() + b.offset;
                if (!b.keep) {
                    for (std::size_t c = 0; c < b.dim; ++c)
                        dst[c] = substitution == Substitution::TrainMean ? (*b.mean)[c] : 0.0;
                } else if (sequential) {
                    const auto& step = seq.size() == 1 ? seq.front() : seq[t];
                    std::copy(step.begin(), step.end(), dst);
                } else {
                    for (std::size_t c = 0; c < b.dim; ++c) {
                        double s = 0.0;
                        for (const auto& step : seq) s += step[c];
                        dst[c] = s / static_cast<double>(seq.size());
                    }
                }
            }
        }
        batch.y[i] = samples[index_l[i]].y;
    }
    return batch;
}

FusionBatch make_batch(const FusionEncoderSpec& spec, const data::Dataset& samples,
                       std::span<const std::size_t> index, const ModalityMask& mask, Substitution substitution,
                       const ModalityMeans* means) {
    return make_batch(spec, samples, index, index, index, mask, substitution, means);
}

// ---------------------------------------------------------------------------
// Encoder and head

FusionEncoder::FusionEncoder(const FusionEncoderSpec& spec, Rng& init) : spec_(spec) {
    validate(spec);
    if (spec.variant == EncoderVariant::ConcatMLP) {
        mlp_.push_back(nn::make_dense("encoder.l0", spec.input_width(), spec.hidden, spec.activation, init));
        mlp_.push_back(nn::make_dense("encoder.l1", spec.hidden, spec.d_in, spec.activation, init));
    } else {
        lstm_ = nn::make_lstm("encoder.lstm", spec.input_width(), spec.d_in, init);
    }
}

ad::Var FusionEncoder::encode(ad::Tape& tape, const FusionBatch& batch, nn::Track track, bool training,
                              Rng* dropout_rng) {
    if (batch.steps.empty()) throw ShapeError("encode: empty batch");
    const nn::DropoutSpec drop{spec_.dropout, training};
    if (training && spec_.dropout > 0.0 && dropout_rng == nullptr) {
        throw ContractError("encoder forward in training mode needs a dropout stream");
    }
    for (const Matrix& x : batch.steps) {
        if (x.cols != spec_.input_width()) {
            throw ShapeError("encode: input width " + std::to_string(x.cols) + ", expected " +
                             std::to_string(spec_.input_width()));
        }
    }
    if (spec_.variant == EncoderVariant::ConcatMLP) {
        ad::Var h = nn::dense_forward(tape, mlp_[0], tape.constant(batch.steps.front()), track);
        if (training) h = nn::dropout_forward(drop, h, *dropout_rng);
        return nn::dense_forward(tape, mlp_[1], h, track);
    }
    if (batch.steps.size() != spec_.seq_len) {
        throw ShapeError("encode: batch has " + std::to_string(batch.steps.size()) + " steps, expected " +
                         std::to_string(spec_.seq_len));
    }
    const std::size_t m = batch.size();
    ad::Var h = tape.constant(ad::Shape{m, spec_.d_in}, std::vector<double>(m * spec_.d_in, 0.0));
    ad::Var c = h;
    for (const Matrix& x : batch.steps) {
        ad::Var xt = tape.constant(x);
        if (training) xt = nn::dropout_forward(drop, xt, *dropout_rng);
        std::tie(h, c) = nn::lstm_step(tape, lstm_, xt, h, c, track);
    }
    return h;
}

ad::Var FusionEncoder::encode(ad::Tape& tape, const FusionBatch& batch) const {
    // Eval mode with untracked parameters never writes through the encoder.
    return const_cast<FusionEncoder*>(this)->encode(tape, batch, nn::Track::No, false, nullptr);
}

Matrix FusionEncoder::encode(const FusionBatch& batch) const {
    ad::Tape tape;
    return encode(tape, batch).to_matrix();
}

nn::ParamRefs FusionEncoder::parameters() {
    if (spec_.variant == EncoderVariant::ConcatMLP) {
        nn::ParamRefs out;
        for (auto& layer : mlp_) {
            out.push_back(&layer.weight);
            out.push_back(&layer.bias);
        }
        return out;
    }
    return lstm_.parameters();
}

RegressionHead::RegressionHead(std::size_t d_in, Rng& init)
    : linear(nn::make_dense("head", d_in, 1, nn::Activation::Identity, init)) {}

ad::Var RegressionHead::forward(ad::Tape& tape, ad::Var z, nn::Track track) {
    return nn::dense_forward(tape, linear, z, track);
}

ad::Var RegressionHead::forward(ad::Tape& tape, ad::Var z) const { return nn::dense_forward(tape, linear, z); }

// ---------------------------------------------------------------------------
// Losses

ad::Var downstream_loss(DownstreamLoss kind, ad::Var pred, ad::Var y) {
    if (pred.size() != y.size()) {
        throw ShapeError("downstream_loss: " + std::to_string(pred.size()) + " predictions for " +
                         std::to_string(y.size()) + " labels");
    }
    if (pred.shape() != y.shape()) {
        throw ShapeError("downstream_loss: shape " + ad::to_string(pred.shape()) + " vs " + ad::to_string(y.shape()));
    }
    if (kind == DownstreamLoss::L1) return ad::mean(ad::abs(ad::sub(pred, y)));
    for (double t : y.value()) {
        if (t != 0.0 && t != 1.0) throw ContractError("binary cross-entropy needs targets in {0, 1}");
    }
    return ad::mean(ad::sub(ad::softplus(pred), ad::mul(y, pred)));
}

namespace {

Matrix time_average(const FusionBatch& batch) {
    Matrix out = batch.steps.front();
    if (batch.steps.size() == 1) return out;
    for (std::size_t t = 1; t < batch.steps.size(); ++t)
        for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += batch.steps[t].data[i];
    for (double& x : out.data) x /= static_cast<double>(batch.steps.size());
    return out;
}

}  // namespace

FusionModel make_model(const FusionEncoderSpec& encoder, const TotalLossConfig& loss, Rng& init) {
    FusionModel model;
    model.encoder = FusionEncoder(encoder, init);
    model.head = RegressionHead(encoder.d_in, init);
    est::CriticConfig critic;
    critic.input_width = loss.critic_input == CriticInput::Fused ? encoder.d_in : encoder.input_width();
    critic.output = loss.critic_output.value_or(est::default_output(loss.kind));
    critic.dropout = loss.critic_dropout;
    critic.width_scale = loss.critic_width_scale;
    model.critic = est::StatisticNetwork(critic, init);
    model.has_critic = loss.lambda > 0.0;
    return model;
}

nn::ParamRefs FusionModel::classifier_parameters() {
    nn::ParamRefs out = encoder.parameters();
    for (auto* p : head.parameters()) out.push_back(p);
    return out;
}

nn::ParamRefs FusionModel::checkpoint_parameters() {
    nn::ParamRefs out = classifier_parameters();
    if (has_critic)
        for (auto* p : critic.parameters()) out.push_back(p);
    return out;
}

std::vector<double> FusionModel::predict(const FusionBatch& batch) const {
    ad::Tape tape;
    ad::Var out = head.forward(tape, encoder.encode(tape, batch));
    return {out.value().begin(), out.value().end()};
}

Matrix FusionModel::critic_input(const FusionBatch& batch, CriticInput mode) const {
    return mode == CriticInput::Fused ? encoder.encode(batch) : time_average(batch);
}

ad::Var total_loss(ad::Tape& tape, const TotalLossConfig& config, FusionModel& model, const FusionBatch& batch,
                   const FusionBatch* shuffled, nn::Track track, bool training, Rng* dropout_rng,
                   double* mdm_estimate, double* loss_down) {
    const std::size_t m = batch.size();
    ad::Var z = model.encoder.encode(tape, batch, track, training, dropout_rng);
    ad::Var pred = model.head.forward(tape, z, track);
    std::vector<double> target = batch.y;
    if (config.downstream == DownstreamLoss::BCE)
        for (double& t : target) t = t >= 0.0 ? 1.0 : 0.0;
    ad::Var y = tape.constant(ad::Shape{m, 1}, std::move(target));
    ad::Var down = downstream_loss(config.downstream, pred, y);
    if (loss_down) *loss_down = down.item();
    if (config.lambda == 0.0) {
        if (mdm_estimate) *mdm_estimate = 0.0;
        return down;
    }
    if (shuffled == nullptr) throw ContractError("total_loss: the dependency term needs a marginal batch");
    if (shuffled->size() != m) throw ContractError("total_loss: joint and marginal batches differ in size");

    ad::Var zj, zm;
    if (config.critic_input == CriticInput::Fused) {
        zj = z;
        zm = model.encoder.encode(tape, *shuffled, track, training, dropout_rng);
    } else {
        zj = tape.constant(time_average(batch));
        zm = tape.constant(time_average(*shuffled));
    }
    const est::StatisticNetwork& critic = model.critic;
    ad::Var mdm = est::objective(config.kind, critic.forward(tape, zj), critic.forward(tape, zm));
    if (mdm_estimate) *mdm_estimate = mdm.item();
    return ad::sub(down, ad::scale(mdm, config.lambda));
}

// ---------------------------------------------------------------------------
// Training

std::vector<double> predict_dataset(const FusionModel& model, const data::Dataset& samples, const ModalityMask& mask,
                                    Substitution substitution, const ModalityMeans* means) {
    constexpr std::size_t kChunk = 256;
    std::vector<double> out;
    out.reserve(samples.size());
    std::vector<std::size_t> index;
    for (std::size_t start = 0; start < samples.size(); start += kChunk) {
        const std::size_t end = std::min(samples.size(), start + kChunk);
        index.resize(end - start);
        std::iota(index.begin(), index.end(), start);
        const auto pred = model.predict(make_batch(model.encoder.spec(), samples, index, mask, substitution, means));
        out.insert(out.end(), pred.begin(), pred.end());
    }
    return out;
}

double mean_absolute_error(std::span<const double> pred, std::span<const double> y) {
    if (pred.size() != y.size() || pred.empty()) throw ContractError("mean_absolute_error: bad lengths");
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) s += std::fabs(pred[i] - y[i]);
    return s / static_cast<double>(pred.size());
}

namespace {

std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t m, Rng& rng) {
    std::vector<std::size_t> pool(n);
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    for (std::size_t i = 0; i < m; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, n - 1);
        std::swap(pool[i], pool[pick(rng)]);
    }
    pool.resize(m);
    return pool;
}

std::vector<double> labels_of(const data::Dataset& samples) {
    std::vector<double> y;
    y.reserve(samples.size());
    for (const auto& s : samples) y.push_back(s.y);
    return y;
}

}  // namespace

TrainResult train(const FusionEncoderSpec& encoder, const TotalLossConfig& config, const data::Dataset& train_set,
                  const data::Dataset& val_set, std::uint64_t seed, const TrainOptions& options) {
    validate(encoder);
    validate(config);
    if (train_set.size() < 2 || val_set.empty()) throw ContractError("train: need >= 2 training and >= 1 validation samples");

    Rng init = make_stream(seed, "init");
    Rng batch_rng = make_stream(seed, "batch");
    Rng critic_batch_rng = make_stream(seed, "critic_batch");
    Rng shuffle_rng = make_stream(seed, "shuffle");
    Rng dropout_rng = make_stream(seed, "dropout");
    Rng critic_dropout_rng = make_stream(seed, "critic_dropout");

    TrainResult result;
    FusionTrainState& st = result.state;
    st.model = make_model(encoder, config, init);
    {
        auto cls = st.model.classifier_parameters();
        st.classifier_opt = nn::make_adamw({config.lr, 0.9, 0.999, 1e-8, config.weight_decay}, cls);
        auto crit = st.model.critic_parameters();
        st.critic_opt = nn::make_adamw({config.critic_lr.value_or(config.lr), 0.9, 0.999, 1e-8, config.weight_decay}, crit);
    }
    st.best = st.model;
    st.best_val_mae = std::numeric_limits<double>::infinity();

    const std::size_t n = train_set.size();
    const std::size_t m = std::min(config.batch_size, n);
    const bool penalised = config.lambda > 0.0;
    const est::StatisticStepOptions step_options{config.clip, config.ema_correction, 0.99};
    est::EmaState ema;
    const std::vector<double> val_y = labels_of(val_set);

    // Literal variant: one shuffled copy of the training set built up front.
    std::array<est::Permutation, 3> static_perm;
    if (penalised && config.static_shuffle)
        for (auto& p : static_perm) p = est::random_permutation(n, shuffle_rng);

    auto marginal_batch = [&](std::span<const std::size_t> idx) {
        std::array<std::vector<std::size_t>, 3> src;
        if (config.static_shuffle) {
            const auto rows = sample_without_replacement(n, idx.size(), shuffle_rng);
            for (std::size_t j = 0; j < 3; ++j)
                for (std::size_t r : rows) src[j].push_back(static_perm[j][r]);
        } else {
            for (std::size_t j = 0; j < 3; ++j) {
                const auto p = est::random_permutation(idx.size(), shuffle_rng);
                for (std::size_t i = 0; i < idx.size(); ++i) src[j].push_back(idx[p[i]]);
            }
        }
        return make_batch(encoder, train_set, src[0], src[1], src[2]);
    };

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::size_t step = 0;
    std::size_t stale_epochs = 0;
    auto cls_params = st.model.classifier_parameters();
    auto critic_params = st.model.critic_parameters();

    try {
        for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
            st.epoch = epoch;
            std::shuffle(order.begin(), order.end(), batch_rng);
            for (std::size_t start = 0; start + 2 <= n; start += m) {
                const std::size_t end = std::min(n, start + m);
                const std::span<const std::size_t> idx(order.data() + start, end - start);

                if (penalised) {
                    for (std::size_t u = 0; u < config.unroll; ++u) {
                        const auto cidx = sample_without_replacement(n, idx.size(), critic_batch_rng);
                        const FusionBatch joint = make_batch(encoder, train_set, cidx);
                        const FusionBatch marg = marginal_batch(cidx);
                        const Matrix zj = st.model.critic_input(joint, config.critic_input);
                        const Matrix zm = st.model.critic_input(marg, config.critic_input);
                        const double value = est::statistic_step(config.kind, st.model.critic, zj, zm, st.critic_opt,
                                                                 critic_dropout_rng, step_options, &ema);
                        ++step;
                        if (options.record_critic_steps) {
                            TrainLogRow row;
                            row.step = step;
                            row.epoch = epoch;
                            row.phase = "critic";
                            row.mdm_estimate = value;
                            row.loss_total = -value;
                            result.log.push_back(std::move(row));
                        }
                    }
                }

                const FusionBatch batch = make_batch(encoder, train_set, idx);
                std::optional<FusionBatch> marg;
                if (penalised) marg = marginal_batch(idx);
                ad::Tape tape;
                double mdm_value = 0.0, down_value = 0.0;
                ad::Var loss = total_loss(tape, config, st.model, batch, marg ? &*marg : nullptr, nn::Track::Yes, true,
                                          &dropout_rng, &mdm_value, &down_value);
                if (!std::isfinite(loss.item())) throw EstimationError("non-finite training loss at step " + std::to_string(step + 1));
                nn::zero_grad(cls_params);
                tape.backward(loss);
                nn::adamw_step(st.classifier_opt, cls_params);
                ++step;

                TrainLogRow row;
                row.step = step;
                row.epoch = epoch;
                row.phase = "classifier";
                row.loss_down = down_value;
                if (penalised) row.mdm_estimate = mdm_value;
                row.loss_total = loss.item();
                result.log.push_back(std::move(row));
            }

            const auto pred = predict_dataset(st.model, val_set);
            const double val_mae = mean_absolute_error(pred, val_y);
            if (!std::isfinite(val_mae)) throw EstimationError("non-finite validation MAE in epoch " + std::to_string(epoch));
            TrainLogRow row;
            row.step = step;
            row.epoch = epoch;
            row.phase = "validation";
            row.val_mae = val_mae;
            result.log.push_back(std::move(row));

            if (val_mae < st.best_val_mae) {
                st.best_val_mae = val_mae;
                st.best_epoch = epoch;
                st.best = st.model;
                stale_epochs = 0;
            } else if (++stale_epochs >= config.patience) {
                break;
            }
        }
    } catch (const EstimationError& e) {
        result.aborted = true;
        result.abort_reason = e.what();
    } catch (const OptimizerError& e) {
        result.aborted = true;
        result.abort_reason = e.what();
    }
    return result;
}

void write_log_csv(std::ostream& os, std::span<const TrainLogRow> log) {
    os << "step,epoch,phase,loss_down,mdm_estimate,loss_total,val_mae\n";
    for (const auto& r : log) {
        os << r.step << ',' << r.epoch << ',' << r.phase << ',' << format_optional(r.loss_down) << ','
           << format_optional(r.mdm_estimate) << ',' << format_optional(r.loss_total) << ','
           << format_optional(r.val_mae) << '\n';
    }
}

}  // namespace mdm::fusion
