#include "mdm/data.hpp"

#include "mdm/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace mdm::data {

namespace {

void check_sequence(const Sequence& s, std::size_t expected_dim, std::size_t expected_steps, const char* name,
                    std::size_t index) {
    const auto where = [&] { return std::string("sample ") + std::to_string(index + 1) + ", modality '" + name + "'"; };
    if (s.size() != expected_steps) {
        throw SchemaError(where() + ": " + std::to_string(s.size()) + " steps, expected " + std::to_string(expected_steps));
    }
    for (const auto& step : s) {
        if (step.size() != expected_dim) {
            throw SchemaError(where() + ": dimension " + std::to_string(step.size()) + ", expected " +
                              std::to_string(expected_dim));
        }
        for (double x : step)
            if (!std::isfinite(x)) throw SchemaError(where() + ": non-finite entry");
    }
}

}  // namespace

DatasetShape validate_dataset(const Dataset& samples) {
    DatasetShape shape;
    if (samples.empty()) return shape;
    const MultimodalSample& first = samples.front();
    if (first.a.empty() || first.v.empty() || first.l.empty()) throw SchemaError("sample 1: empty modality");
    shape.steps = first.a.size();
    shape.d_a = first.a.front().size();
    shape.d_v = first.v.front().size();
    shape.d_l = first.l.front().size();
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const MultimodalSample& s = samples[i];
        check_sequence(s.a, shape.d_a, shape.steps, "a", i);
        check_sequence(s.v, shape.d_v, shape.steps, "v", i);
        check_sequence(s.l, shape.d_l, shape.steps, "l", i);
        if (!std::isfinite(s.y) || std::fabs(s.y) > 3.0) {
            throw SchemaError("sample " + std::to_string(i + 1) + ": label " + std::to_string(s.y) +
                              " outside [-3, 3]");
        }
    }
    return shape;
}

// ---------------------------------------------------------------------------

Matrix cholesky(const Matrix& a) {
    if (a.rows != a.cols) throw ShapeError("cholesky: matrix is not square");
    const std::size_t n = a.rows;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < i; ++j)
            if (std::fabs(a(i, j) - a(j, i)) > 1e-12 * (1.0 + std::fabs(a(i, j)))) {
                throw ContractError("covariance is not symmetric");
            }
    Matrix l(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        double diag = a(j, j);
        for (std::size_t k = 0; k < j; ++k) diag -= l(j, k) * l(j, k);
        if (!(diag > 0.0)) throw ContractError("covariance is not positive definite");
        l(j, j) = std::sqrt(diag);
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = a(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
            l(i, j) = s / l(j, j);
        }
    }
    return l;
}

namespace {

double log_det_spd(const Matrix& a) {
    const Matrix l = cholesky(a);
    double s = 0.0;
    for (std::size_t i = 0; i < l.rows; ++i) s += std::log(l(i, i));
    return 2.0 * s;
}

}  // namespace

Matrix gaussian_covariance(const GaussianSpec& spec) {
    if (spec.variables < 2 || spec.variables > 3) throw ContractError("Gaussian spec supports 2 or 3 variables");
    if (spec.dim == 0) throw ContractError("Gaussian spec needs dim >= 1");
    const std::size_t total = spec.variables * spec.dim;
    Matrix cov;
    if (spec.covariance) {
        cov = *spec.covariance;
        if (cov.rows != total || cov.cols != total) {
            throw ShapeError("explicit covariance must be " + std::to_string(total) + "x" + std::to_string(total));
        }
    } else {
        if (!(spec.rho > -1.0 && spec.rho < 1.0)) throw ContractError("rho must lie in (-1, 1)");
        if (spec.variables == 3 && !(spec.rho > -0.5)) {
            throw ContractError("three variables with common correlation need rho > -1/2");
        }
        cov = Matrix(total, total);
        for (std::size_t i = 0; i < total; ++i)
            for (std::size_t j = 0; j < total; ++j) {
                const bool same_coord = (i % spec.dim) == (j % spec.dim);
                cov(i, j) = i == j ? 1.0 : (same_coord ? spec.rho : 0.0);
            }
    }
    (void)cholesky(cov);
    return cov;
}

std::vector<Matrix> gen_correlated_gaussian(const GaussianSpec& spec, Rng& rng) {
    const Matrix cov = gaussian_covariance(spec);
    const Matrix l = cholesky(cov);
    const std::size_t total = cov.rows;
    std::vector<Matrix> out(spec.variables, Matrix(spec.n, spec.dim));
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> eps(total), x(total);
    for (std::size_t r = 0; r < spec.n; ++r) {
        for (double& e : eps) e = normal(rng);
        for (std::size_t i = 0; i < total; ++i) {
            double s = 0.0;
            for (std::size_t k = 0; k <= i; ++k) s += l(i, k) * eps[k];
            x[i] = s;
        }
        for (std::size_t j = 0; j < spec.variables; ++j)
            for (std::size_t c = 0; c < spec.dim; ++c) out[j](r, c) = x[j * spec.dim + c];
    }
    return out;
}

double gaussian_dependency_oracle(const GaussianSpec& spec) {
    const Matrix cov = gaussian_covariance(spec);
    double blocks = 0.0;
    for (std::size_t j = 0; j < spec.variables; ++j) {
        Matrix block(spec.dim, spec.dim);
        for (std::size_t r = 0; r < spec.dim; ++r)
            for (std::size_t c = 0; c < spec.dim; ++c) block(r, c) = cov(j * spec.dim + r, j * spec.dim + c);
        blocks += log_det_spd(block);
    }
    return 0.5 * (blocks - log_det_spd(cov));
}

// ---------------------------------------------------------------------------

void validate(const SyntheticTaskSpec& spec) {
    if (spec.latent_dim == 0 || spec.d_a == 0 || spec.d_v == 0 || spec.d_l == 0 || spec.seq_len == 0) {
        throw ContractError("synthetic task dims and sequence length must be positive");
    }
    if (!(spec.noise_a > 0.0 && spec.noise_v > 0.0 && spec.noise_l > 0.0)) {
        throw ContractError("synthetic modality noise stds must be positive");
    }
    if (!(spec.noise_l <= spec.noise_a && spec.noise_l <= spec.noise_v)) {
        throw ContractError("the language modality must have the smallest noise");
    }
    if (spec.label_noise < 0.0) throw ContractError("label noise std must be non-negative");
}

DatasetSplits gen_synthetic_multimodal(const SyntheticTaskSpec& spec, Rng& rng) {
    validate(spec);
    const std::size_t k = spec.latent_dim;
    std::normal_distribution<double> normal(0.0, 1.0);
    const double load_sd = spec.loading_scale / std::sqrt(static_cast<double>(k));

    auto draw_loading = [&](std::size_t d) {
        Matrix w(d, k);
        for (double& x : w.data) x = load_sd * normal(rng);
        return w;
    };
    const Matrix w_a = draw_loading(spec.d_a);
    const Matrix w_v = draw_loading(spec.d_v);
    const Matrix w_l = draw_loading(spec.d_l);
    std::vector<double> w_y(k);
    for (double& x : w_y) x = spec.label_scale / std::sqrt(static_cast<double>(k)) * normal(rng);

    auto observe = [&](const Matrix& w, const std::vector<double>& z, double noise) {
        Sequence seq(spec.seq_len, std::vector<double>(w.rows));
        for (auto& step : seq)
            for (std::size_t r = 0; r < w.rows; ++r) {
                double s = 0.0;
                for (std::size_t c = 0; c < k; ++c) s += w(r, c) * z[c];
                step[r] = s + noise * normal(rng);
            }
        return seq;
    };

    auto draw = [&](std::size_t n) {
        Dataset out;
        out.reserve(n);
        std::vector<double> z(k);
        for (std::size_t i = 0; i < n; ++i) {
            for (double& x : z) x = normal(rng);
            MultimodalSample s;
            s.a = observe(w_a, z, spec.noise_a);
            s.v = observe(w_v, z, spec.noise_v);
            s.l = observe(w_l, z, spec.noise_l);
            double y = 0.0;
            for (std::size_t c = 0; c < k; ++c) y += w_y[c] * z[c];
            y += spec.label_noise * normal(rng);
            s.y = std::clamp(y, -3.0, 3.0);
            out.push_back(std::move(s));
        }
        return out;
    };

    DatasetSplits splits;
    splits.train = draw(spec.n_train);
    splits.val = draw(spec.n_val);
    splits.test = draw(spec.n_test);
    return splits;
}

// ---------------------------------------------------------------------------

namespace {

void append_number(std::string& out, double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
    out.append(buf, res.ptr);
}

void append_vector(std::string& out, const std::vector<double>& v) {
    out.push_back('[');
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out.push_back(',');
        append_number(out, v[i]);
    }
    out.push_back(']');
}

void append_sequence(std::string& out, const Sequence& s) {
    if (s.size() == 1) {
        append_vector(out, s.front());
        return;
    }
    out.push_back('[');
    for (std::size_t t = 0; t < s.size(); ++t) {
        if (t) out.push_back(',');
        append_vector(out, s[t]);
    }
    out.push_back(']');
}

Sequence parse_sequence(const nlohmann::json& j, const char* key, std::size_t line_no) {
    const auto fail = [&](const std::string& msg) {
        return ParseError("line " + std::to_string(line_no) + ": field \"" + key + "\" " + msg);
    };
    if (!j.is_array() || j.empty()) throw fail("must be a non-empty array");
    Sequence out;
    if (j.front().is_array()) {
        for (const auto& step : j) {
            if (!step.is_array()) throw fail("mixes numbers and arrays");
            std::vector<double> v;
            for (const auto& x : step) {
                if (!x.is_number()) throw fail("contains a non-number");
                v.push_back(x.get<double>());
            }
            out.push_back(std::move(v));
        }
    } else {
        std::vector<double> v;
        for (const auto& x : j) {
            if (!x.is_number()) throw fail("contains a non-number");
            v.push_back(x.get<double>());
        }
        out.push_back(std::move(v));
    }
    return out;
}

}  // namespace

std::string to_json_line(const MultimodalSample& sample) {
    std::string out = "{\"a\":";
    append_sequence(out, sample.a);
    out += ",\"v\":";
    append_sequence(out, sample.v);
    out += ",\"l\":";
    append_sequence(out, sample.l);
    out += ",\"y\":";
    append_number(out, sample.y);
    out += '}';
    return out;
}

MultimodalSample parse_json_line(const std::string& line, std::size_t line_no) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError("line " + std::to_string(line_no) + ": malformed JSON (" + e.what() + ")");
    }
    if (!j.is_object()) throw ParseError("line " + std::to_string(line_no) + ": expected a JSON object");
    for (const char* key : {"a", "v", "l", "y"}) {
        if (!j.contains(key)) {
            throw ParseError("line " + std::to_string(line_no) + ": missing field \"" + key + "\"");
        }
    }
    for (const auto& item : j.items()) {
        const std::string& k = item.key();
        if (k != "a" && k != "v" && k != "l" && k != "y") {
            throw ParseError("line " + std::to_string(line_no) + ": unknown field \"" + k + "\"");
        }
    }
    if (!j["y"].is_number()) throw ParseError("line " + std::to_string(line_no) + ": field \"y\" must be a number");
    MultimodalSample s;
    s.a = parse_sequence(j["a"], "a", line_no);
    s.v = parse_sequence(j["v"], "v", line_no);
    s.l = parse_sequence(j["l"], "l", line_no);
    s.y = j["y"].get<double>();
    return s;
}

void save_dataset(const std::filesystem::path& path, const Dataset& samples) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write dataset " + path.string());
    for (const auto& s : samples) os << to_json_line(s) << '\n';
    if (!os) throw std::runtime_error("failed writing dataset " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open dataset " + path.string());
    Dataset out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        out.push_back(parse_json_line(line, line_no));
    }
    validate_dataset(out);
    return out;
}

}  // namespace mdm::data
