#include <doctest.h>

#include "gradcheck.hpp"
#include "mdm/data.hpp"
#include "mdm/errors.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace mdm;
namespace fs = std::filesystem;

namespace {

double corr(const Matrix& x, std::size_t cx, const Matrix& y, std::size_t cy) {
    const double n = static_cast<double>(x.rows);
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.rows; ++i) {
        mx += x(i, cx);
        my += y(i, cy);
    }
    mx /= n;
    my /= n;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < x.rows; ++i) {
        sxy += (x(i, cx) - mx) * (y(i, cy) - my);
        sxx += (x(i, cx) - mx) * (x(i, cx) - mx);
        syy += (y(i, cy) - my) * (y(i, cy) - my);
    }
    return sxy / std::sqrt(sxx * syy);
}

data::GaussianSpec spec(std::size_t d, double rho, std::size_t vars = 2, std::size_t n = 10000) {
    data::GaussianSpec s;
    s.dim = d;
    s.rho = rho;
    s.variables = vars;
    s.n = n;
    return s;
}

fs::path temp_dir(const std::string& name) {
    const fs::path d = fs::temp_directory_path() / name;
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

}  // namespace

TEST_CASE("cholesky of the rho = 0.5 pair") {
    const Matrix l = data::cholesky(data::gaussian_covariance(spec(1, 0.5)));
    CHECK(l(0, 0) == doctest::Approx(1.0));
    CHECK(l(0, 1) == 0.0);
    CHECK(l(1, 0) == doctest::Approx(0.5));
    CHECK(l(1, 1) == doctest::Approx(0.8660).epsilon(1e-4));
    CHECK_THROWS_AS((void)data::cholesky(Matrix(2, 2, std::vector<double>{1, 2, 2, 1})), ContractError);
}

TEST_CASE("covariance validity") {
    CHECK_THROWS_AS((void)data::gaussian_covariance(spec(2, -0.6, 3)), ContractError);
    CHECK_NOTHROW((void)data::gaussian_covariance(spec(2, -0.4, 3)));
    CHECK_THROWS_AS((void)data::gaussian_covariance(spec(2, 1.0)), ContractError);
    const Matrix c = data::gaussian_covariance(spec(2, 0.3, 3));
    CHECK(c.rows == 6);
    CHECK(c(0, 2) == 0.3);  // same coordinate, different variable
    CHECK(c(0, 3) == 0.0);
    CHECK(c(0, 1) == 0.0);
}

TEST_CASE("oracle values") {
    CHECK(data::gaussian_dependency_oracle(spec(5, 0.0)) == doctest::Approx(0.0));
    CHECK(data::gaussian_dependency_oracle(spec(1, 0.5)) == doctest::Approx(-0.5 * std::log(0.75)).epsilon(1e-14));
    CHECK(data::gaussian_dependency_oracle(spec(1, 0.5)) == doctest::Approx(0.14384).epsilon(1e-4));
    CHECK(data::gaussian_dependency_oracle(spec(5, 0.5)) == doctest::Approx(0.71921).epsilon(1e-5));
    for (double rho : {0.1, 0.3, 0.5, 0.7, 0.9, 0.99}) {
        CHECK(data::gaussian_dependency_oracle(spec(5, rho)) ==
              doctest::Approx(-2.5 * std::log(1.0 - rho * rho)).epsilon(1e-12));
    }
}

TEST_CASE("oracle is additive over independent coordinates") {
    for (std::size_t vars : {2u, 3u}) {
        for (double rho : {0.2, 0.45, 0.8}) {
            const double one = data::gaussian_dependency_oracle(spec(1, rho, vars));
            for (std::size_t d : {2u, 5u, 9u}) {
                const double many = data::gaussian_dependency_oracle(spec(d, rho, vars));
                CHECK(std::abs(many - static_cast<double>(d) * one) <= 1e-12 * std::abs(many));
            }
        }
    }
}

TEST_CASE("explicit covariance overrides rho") {
    auto s = spec(1, 0.0);
    s.covariance = Matrix(2, 2, std::vector<double>{1.0, 0.5, 0.5, 1.0});
    CHECK(data::gaussian_dependency_oracle(s) == doctest::Approx(0.14384).epsilon(1e-4));
}

TEST_CASE("empirical correlations and moments") {
    Rng rng(5);
    {
        const auto x = data::gen_correlated_gaussian(spec(3, 0.0), rng);
        for (std::size_t c = 0; c < 3; ++c) CHECK(std::abs(corr(x[0], c, x[1], c)) <= 0.05);
    }
    {
        const auto x = data::gen_correlated_gaussian(spec(1, 0.9), rng);
        const double r = corr(x[0], 0, x[1], 0);
        CHECK(r >= 0.88);
        CHECK(r <= 0.92);
    }
    {
        const std::size_t n = 10000;
        const auto x = data::gen_correlated_gaussian(spec(4, 0.6, 3, n), rng);
        const double tol = 3.0 / std::sqrt(static_cast<double>(n));
        for (const Matrix& m : x) {
            for (std::size_t c = 0; c < m.cols; ++c) {
                double s = 0, s2 = 0;
                for (std::size_t i = 0; i < n; ++i) {
                    s += m(i, c);
                    s2 += m(i, c) * m(i, c);
                }
                const double mean = s / n;
                CHECK(std::abs(mean) <= tol);
                CHECK(std::abs(s2 / n - mean * mean - 1.0) <= tol * std::sqrt(2.0));
            }
        }
    }
}

TEST_CASE("synthetic task is deterministic and well formed") {
    data::SyntheticTaskSpec s;
    s.n_train = 50;
    s.n_val = 20;
    s.n_test = 20;
    Rng r1(9), r2(9);
    const auto a = data::gen_synthetic_multimodal(s, r1);
    const auto b = data::gen_synthetic_multimodal(s, r2);
    CHECK(a.train == b.train);
    CHECK(a.val == b.val);
    CHECK(a.test == b.test);
    CHECK(a.train.size() == 50);
    const auto shape = data::validate_dataset(a.train);
    CHECK(shape.d_a == 8);
    CHECK(shape.steps == 1);
    for (const auto& x : a.train) CHECK(std::abs(x.y) <= 3.0);
    CHECK(a.train.front() != a.val.front());

    s.noise_l = 2.0;  // no longer the cleanest modality
    CHECK_THROWS_AS(data::validate(s), ContractError);
}

TEST_CASE("noiseless task is linearly identifiable") {
    data::SyntheticTaskSpec s;
    s.noise_a = 2e-6;
    s.noise_v = 2e-6;
    s.noise_l = 1e-6;
    s.label_noise = 0.0;
    s.label_scale = 0.5;  // keeps labels away from the clamp
    s.n_train = 400;
    s.n_test = 200;
    Rng rng(3);
    const auto splits = data::gen_synthetic_multimodal(s, rng);
    auto features = [](const data::MultimodalSample& x) {
        std::vector<double> f{1.0};
        for (const auto* m : {&x.a, &x.v, &x.l}) f.insert(f.end(), (*m)[0].begin(), (*m)[0].end());
        return f;
    };
    const std::size_t p = 25;
    // Ridge-free normal equations, solved with the library Cholesky plus a tiny jitter.
    Matrix xtx(p, p);
    std::vector<double> xty(p, 0.0);
    for (const auto& x : splits.train) {
        const auto f = features(x);
        for (std::size_t i = 0; i < p; ++i) {
            xty[i] += f[i] * x.y;
            for (std::size_t j = 0; j < p; ++j) xtx(i, j) += f[i] * f[j];
        }
    }
    for (std::size_t i = 0; i < p; ++i) xtx(i, i) += 1e-9;
    const Matrix l = data::cholesky(xtx);
    std::vector<double> z(p), w(p);
    for (std::size_t i = 0; i < p; ++i) {
        double s2 = xty[i];
        for (std::size_t k = 0; k < i; ++k) s2 -= l(i, k) * z[k];
        z[i] = s2 / l(i, i);
    }
    for (std::size_t i = p; i-- > 0;) {
        double s2 = z[i];
        for (std::size_t k = i + 1; k < p; ++k) s2 -= l(k, i) * w[k];
        w[i] = s2 / l(i, i);
    }
    double mae = 0.0;
    for (const auto& x : splits.test) {
        const auto f = features(x);
        double pred = 0.0;
        for (std::size_t i = 0; i < p; ++i) pred += w[i] * f[i];
        mae += std::abs(pred - x.y);
    }
    mae /= static_cast<double>(splits.test.size());
    CHECK(mae < 0.05);
}

TEST_CASE("dataset round trip is lossless") {
    const fs::path dir = temp_dir("mdm_test_data");
    data::SyntheticTaskSpec s;
    s.seq_len = 3;
    s.n_train = 30;
    s.n_val = 2;
    s.n_test = 2;
    Rng rng(1);
    auto splits = data::gen_synthetic_multimodal(s, rng);
    splits.train[0].a[0][0] = 0.1 + 0.2;  // not exactly representable in short decimal
    splits.train[1].v[0][0] = 5e-324;
    splits.train[2].l[2][1] = -1.7976931348623157e308;
    data::save_dataset(dir / "train.jsonl", splits.train);
    CHECK(data::load_dataset(dir / "train.jsonl") == splits.train);

    data::MultimodalSample flat{{{1.0, 2.0}}, {{3.0}}, {{4.0, 5.0}}, -1.5};
    const std::string line = data::to_json_line(flat);
    CHECK(data::parse_json_line(line, 1) == flat);
    fs::remove_all(dir);
}

TEST_CASE("dataset loading errors") {
    const fs::path dir = temp_dir("mdm_test_data_err");
    auto write = [&](const std::string& name, const std::string& text) {
        std::ofstream os(dir / name);
        os << text;
        return dir / name;
    };
    CHECK(data::load_dataset(write("empty.jsonl", "")).empty());

    const std::string good = R"({"a":[1,2],"v":[3],"l":[4],"y":0.5})";
    try {
        (void)data::load_dataset(write("noy.jsonl", good + "\n" + R"({"a":[1,2],"v":[3],"l":[4]})" + "\n"));
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("line 2") != std::string::npos);
        CHECK(msg.find("\"y\"") != std::string::npos);
    }
    CHECK_THROWS_AS((void)data::load_dataset(write("bad.jsonl", good + "\n{not json\n")), ParseError);
    CHECK_THROWS_AS((void)data::load_dataset(write("extra.jsonl", R"({"a":[1],"v":[3],"l":[4],"y":0,"q":1})")),
                    ParseError);
    CHECK_THROWS_AS((void)data::load_dataset(write("dims.jsonl", good + "\n" + R"({"a":[1],"v":[3],"l":[4],"y":0})")),
                    SchemaError);
    CHECK_THROWS_AS((void)data::load_dataset(write("label.jsonl", R"({"a":[1],"v":[3],"l":[4],"y":3.5})")),
                    SchemaError);
    fs::remove_all(dir);
}
