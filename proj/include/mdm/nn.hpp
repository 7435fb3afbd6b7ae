#pragma once

#include "mdm/autodiff.hpp"
#include "mdm/rng.hpp"

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace mdm::nn {

/// Named trainable array with its gradient accumulator.
struct Parameter {
    std::string name;
    ad::Shape shape;
    std::vector<double> value;
    std::vector<double> grad;

    Parameter() = default;
    Parameter(std::string n, ad::Shape s)
        : name(std::move(n)), shape(std::move(s)), value(ad::numel(shape), 0.0), grad(value.size(), 0.0) {}

    [[nodiscard]] std::size_t size() const { return value.size(); }
    void zero_grad() { grad.assign(value.size(), 0.0); }
};

using ParamRefs = std::vector<Parameter*>;

void zero_grad(std::span<Parameter* const> params);
/// Order-sensitive FNV-1a over names, shapes and raw value bytes.
std::uint64_t hash_parameters(std::span<Parameter* const> params);

/// Whether parameters enter a tape with gradient tracking.
enum class Track { Yes, No };

/// Puts a parameter on the tape; with Track::Yes its gradient flows into p.grad.
ad::Var bind(ad::Tape& tape, Parameter& p, Track track = Track::Yes);
/// Read-only binding: the parameter enters the tape as a constant.
ad::Var bind(ad::Tape& tape, const Parameter& p);

enum class Activation { Identity, LeakyRelu, Sigmoid, Tanh, Softplus };

ad::Var activate(Activation act, ad::Var x, double slope = 0.01);

struct DenseLayer {
    Parameter weight;  // [out x in]
    Parameter bias;    // [out]
    Activation activation = Activation::Identity;
    double slope = 0.01;

    [[nodiscard]] std::size_t in() const { return weight.shape.at(1); }
    [[nodiscard]] std::size_t out() const { return weight.shape.at(0); }
    ParamRefs parameters() { return {&weight, &bias}; }
};

/// Weights uniform in [-1/sqrt(in), 1/sqrt(in)], zero bias.
DenseLayer make_dense(const std::string& name, std::size_t in, std::size_t out, Activation act, Rng& rng);

/// activation(x * W^T + b) for a batch x of shape [m x in].
ad::Var dense_forward(ad::Tape& tape, DenseLayer& layer, ad::Var x, Track track = Track::Yes);
ad::Var dense_forward(ad::Tape& tape, const DenseLayer& layer, ad::Var x);

struct DropoutSpec {
    double rate = 0.0;
    bool training = false;
};

/// Inverted dropout: in training mode each unit is zeroed with probability
/// `rate` and survivors are scaled by 1/(1-rate). Identity in eval mode.
ad::Var dropout_forward(const DropoutSpec& spec, ad::Var x, Rng& rng);

/// One gate's parameters: W [hidden x in], U [hidden x hidden], b [hidden].
struct GateParams {
    Parameter w;
    Parameter u;
    Parameter b;
};

/// Gate order: input, forget, cell candidate, output.
struct LSTMCellParams {
    std::array<GateParams, 4> gates;
    std::size_t input_size = 0;
    std::size_t hidden_size = 0;

    ParamRefs parameters();
};

enum Gate : std::size_t { kInputGate = 0, kForgetGate = 1, kCellGate = 2, kOutputGate = 3 };

/// Uniform [-1/sqrt(fan_in), 1/sqrt(fan_in)] weights, zero biases, forget bias +1.
LSTMCellParams make_lstm(const std::string& name, std::size_t input_size, std::size_t hidden_size, Rng& rng);

/// Standard LSTM update. x_t [m x in], h_prev and c_prev [m x hidden].
std::pair<ad::Var, ad::Var> lstm_step(ad::Tape& tape, LSTMCellParams& params, ad::Var x_t, ad::Var h_prev,
                                      ad::Var c_prev, Track track = Track::Yes);

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

struct AdamWState {
    AdamWConfig config;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    std::uint64_t step = 0;
};

AdamWState make_adamw(const AdamWConfig& config, std::span<Parameter* const> params);

/// p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p) using each p.grad.
/// All gradients are checked before any parameter moves.
void adamw_step(AdamWState& state, std::span<Parameter* const> params);

/// Clamps every entry into [-c, c].
void clip_weights(std::span<Parameter* const> params, double c);

/// Largest absolute entry over all parameters.
double max_abs(std::span<Parameter* const> params);

}  // namespace mdm::nn
