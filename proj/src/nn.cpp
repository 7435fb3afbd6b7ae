#include "mdm/nn.hpp"

#include "mdm/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace mdm::nn {

void zero_grad(std::span<Parameter* const> params) {
    for (Parameter* p : params) p->zero_grad();
}

std::uint64_t hash_parameters(std::span<Parameter* const> params) {
    std::uint64_t h = fnv1a("");
    for (const Parameter* p : params) {
        h = fnv1a(p->name, h);
        for (std::size_t d : p->shape) h = fnv1a(std::string_view(reinterpret_cast<const char*>(&d), sizeof d), h);
        h = fnv1a(std::string_view(reinterpret_cast<const char*>(p->value.data()), p->value.size() * sizeof(double)), h);
    }
    return h;
}

ad::Var bind(ad::Tape& tape, Parameter& p, Track track) {
    if (p.grad.size() != p.value.size()) p.zero_grad();
    return tape.parameter(p.shape, p.value, track == Track::Yes ? &p.grad : nullptr);
}

ad::Var bind(ad::Tape& tape, const Parameter& p) {
    return tape.parameter(p.shape, p.value, nullptr);
}

ad::Var activate(Activation act, ad::Var x, double slope) {
    switch (act) {
        case Activation::Identity: return x;
        case Activation::LeakyRelu: return ad::leaky_relu(x, slope);
        case Activation::Sigmoid: return ad::sigmoid(x);
        case Activation::Tanh: return ad::tanh(x);
        case Activation::Softplus: return ad::softplus(x);
    }
    throw ContractError("activate: unknown activation");
}

DenseLayer make_dense(const std::string& name, std::size_t in, std::size_t out, Activation act, Rng& rng) {
    if (in == 0 || out == 0) throw ContractError("make_dense: zero-sized layer " + name);
    DenseLayer layer;
    layer.weight = Parameter(name + ".weight", {out, in});
    layer.bias = Parameter(name + ".bias", {out});
    layer.activation = act;
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& w : layer.weight.value) w = dist(rng);
    return layer;
}

ad::Var dense_forward(ad::Tape& tape, DenseLayer& layer, ad::Var x, Track track) {
    if (x.cols() != layer.in()) {
        throw ShapeError("dense " + layer.weight.name + ": input has " + std::to_string(x.cols()) +
                         " columns, layer expects " + std::to_string(layer.in()));
    }
    ad::Var w = bind(tape, layer.weight, track);
    ad::Var b = bind(tape, layer.bias, track);
    return activate(layer.activation, ad::linear(x, w, b), layer.slope);
}

ad::Var dense_forward(ad::Tape& tape, const DenseLayer& layer, ad::Var x) {
    if (x.cols() != layer.in()) {
        throw ShapeError("dense " + layer.weight.name + ": input has " + std::to_string(x.cols()) +
                         " columns, layer expects " + std::to_string(layer.in()));
    }
    return activate(layer.activation, ad::linear(x, bind(tape, layer.weight), bind(tape, layer.bias)), layer.slope);
}

ad::Var dropout_forward(const DropoutSpec& spec, ad::Var x, Rng& rng) {
    if (!(spec.rate >= 0.0 && spec.rate < 1.0)) {
        throw ContractError("dropout rate must lie in [0, 1)");
    }
    if (!spec.training || spec.rate == 0.0) return x;
    const double keep_scale = 1.0 / (1.0 - spec.rate);
    std::bernoulli_distribution drop(spec.rate);
    std::vector<double> mask(x.size());
    for (double& m : mask) m = drop(rng) ? 0.0 : keep_scale;
    return ad::mul_const(x, std::move(mask));
}

ParamRefs LSTMCellParams::parameters() {
    ParamRefs out;
    for (auto& g : gates) {
        out.push_back(&g.w);
        out.push_back(&g.u);
        out.push_back(&g.b);
    }
    return out;
}

LSTMCellParams make_lstm(const std::string& name, std::size_t input_size, std::size_t hidden_size, Rng& rng) {
    if (input_size == 0 || hidden_size == 0) throw ContractError("make_lstm: zero-sized cell " + name);
    static constexpr const char* kGateNames[4] = {"input", "forget", "cell", "output"};
    LSTMCellParams cell;
    cell.input_size = input_size;
    cell.hidden_size = hidden_size;
    const double bound_w = 1.0 / std::sqrt(static_cast<double>(input_size));
    const double bound_u = 1.0 / std::sqrt(static_cast<double>(hidden_size));
    std::uniform_real_distribution<double> dist_w(-bound_w, bound_w);
    std::uniform_real_distribution<double> dist_u(-bound_u, bound_u);
    for (std::size_t g = 0; g < 4; ++g) {
        const std::string prefix = name + "." + kGateNames[g];
        GateParams& gp = cell.gates[g];
        gp.w = Parameter(prefix + ".w", {hidden_size, input_size});
        gp.u = Parameter(prefix + ".u", {hidden_size, hidden_size});
        gp.b = Parameter(prefix + ".b", {hidden_size});
        for (double& w : gp.w.value) w = dist_w(rng);
        for (double& u : gp.u.value) u = dist_u(rng);
    }
    std::fill(cell.gates[kForgetGate].b.value.begin(), cell.gates[kForgetGate].b.value.end(), 1.0);
    return cell;
}

std::pair<ad::Var, ad::Var> lstm_step(ad::Tape& tape, LSTMCellParams& params, ad::Var x_t, ad::Var h_prev,
                                      ad::Var c_prev, Track track) {
    const std::size_t hidden = params.hidden_size;
    if (x_t.cols() != params.input_size || h_prev.cols() != hidden || c_prev.cols() != hidden ||
        h_prev.rows() != x_t.rows() || c_prev.rows() != x_t.rows()) {
        throw ShapeError("lstm_step: x " + ad::to_string(x_t.shape()) + ", h " + ad::to_string(h_prev.shape()) +
                         ", c " + ad::to_string(c_prev.shape()) + " for cell " +
                         std::to_string(params.input_size) + "->" + std::to_string(hidden));
    }
    ad::Var zero_bias = tape.constant(ad::Shape{hidden}, std::vector<double>(hidden, 0.0));
    std::array<ad::Var, 4> pre;
    for (std::size_t g = 0; g < 4; ++g) {
        GateParams& gp = params.gates[g];
        ad::Var w = bind(tape, gp.w, track);
        ad::Var u = bind(tape, gp.u, track);
        ad::Var b = bind(tape, gp.b, track);
        pre[g] = ad::add(ad::linear(x_t, w, b), ad::linear(h_prev, u, zero_bias));
    }
    ad::Var i = ad::sigmoid(pre[kInputGate]);
    ad::Var f = ad::sigmoid(pre[kForgetGate]);
    ad::Var g = ad::tanh(pre[kCellGate]);
    ad::Var o = ad::sigmoid(pre[kOutputGate]);
    ad::Var c = ad::add(ad::mul(f, c_prev), ad::mul(i, g));
    ad::Var h = ad::mul(o, ad::tanh(c));
    return {h, c};
}

AdamWState make_adamw(const AdamWConfig& config, std::span<Parameter* const> params) {
    AdamWState state;
    state.config = config;
    for (const Parameter* p : params) {
        state.m.emplace_back(p->size(), 0.0);
        state.v.emplace_back(p->size(), 0.0);
    }
    return state;
}

void adamw_step(AdamWState& state, std::span<Parameter* const> params) {
    if (params.size() != state.m.size()) {
        throw ShapeError("adamw_step: optimizer tracks " + std::to_string(state.m.size()) + " parameters, got " +
                         std::to_string(params.size()));
    }
    for (std::size_t k = 0; k < params.size(); ++k) {
        const Parameter& p = *params[k];
        if (p.grad.size() != p.value.size() || state.m[k].size() != p.value.size()) {
            throw ShapeError("adamw_step: shape mismatch for parameter " + p.name);
        }
        for (std::size_t i = 0; i < p.grad.size(); ++i) {
            if (!std::isfinite(p.grad[i])) {
                std::ostringstream os;
                os << "non-finite gradient " << p.grad[i] << " in parameter '" << p.name << "' at index " << i;
                throw OptimizerError(os.str());
            }
        }
    }

    const AdamWConfig& c = state.config;
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(c.beta1, t);
    const double bc2 = 1.0 - std::pow(c.beta2, t);
    for (std::size_t k = 0; k < params.size(); ++k) {
        Parameter& p = *params[k];
        auto& m = state.m[k];
        auto& v = state.v[k];
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const double g = p.grad[i];
            m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
            v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            p.value[i] -= c.lr * (m_hat / (std::sqrt(v_hat) + c.eps) + c.weight_decay * p.value[i]);
        }
    }
}

void clip_weights(std::span<Parameter* const> params, double c) {
    if (!(c > 0.0)) throw ContractError("clip_weights: bound must be positive");
    for (Parameter* p : params)
        for (double& w : p->value) w = std::clamp(w, -c, c);
}

double max_abs(std::span<Parameter* const> params) {
    double best = 0.0;
    for (const Parameter* p : params)
        for (double w : p->value) best = std::max(best, std::fabs(w));
    return best;
}

}  // namespace mdm::nn
