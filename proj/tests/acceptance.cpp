// Acceptance runner: one PASS/FAIL line per criterion. `--only N` runs a
// single criterion; exit status is non-zero when any selected one fails.

#include "gradcheck.hpp"
#include "mdm/config.hpp"
#include "mdm/data.hpp"
#include "mdm/estimators.hpp"
#include "mdm/eval.hpp"
#include "mdm/experiment.hpp"
#include "mdm/format.hpp"
#include "mdm/fusion.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>

namespace fs = std::filesystem;
using namespace mdm;
using est::EstimatorKind;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fixed(double v, int digits = 4) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(digits);
    os << v;
    return os.str();
}

// ---------------------------------------------------------------------------
// 1. Gaussian oracle recovery with the KL estimator.

Outcome gaussian_recovery() {
    experiment::BenchSettings s;
    s.kinds = {EstimatorKind::KL};
    const auto start = std::chrono::steady_clock::now();
    const auto result = experiment::run_gaussian_bench(s, 0);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (result.error) return {false, *result.error};
    bool ok = result.rows.size() == s.rhos.size();
    std::ostringstream d;
    for (const auto& r : result.rows) {
        const double tol = std::max(0.10 * r.oracle, 0.05);
        const bool cell = r.abs_error <= tol;
        ok = ok && cell;
        d << "rho=" << r.rho << " est=" << fixed(r.estimate) << " oracle=" << fixed(r.oracle) << " tol="
          << fixed(tol) << (cell ? "" : " OUT") << "; ";
    }
    const bool fast = secs < 300.0;
    d << "runtime " << fixed(secs, 1) << " s (limit 300)";
    return {ok && fast, d.str()};
}

// ---------------------------------------------------------------------------
// 2. All three estimators non-decreasing in rho; W differs from KL at 0.9.

Outcome curve_shape() {
    experiment::BenchSettings s;
    const auto result = experiment::run_gaussian_bench(s, 0);
    if (result.error) return {false, *result.error};
    std::map<EstimatorKind, std::vector<double>> curves;
    for (const auto& r : result.rows) curves[r.kind].push_back(r.estimate);
    bool ok = true;
    std::ostringstream d;
    for (auto kind : s.kinds) {
        const auto& c = curves[kind];
        bool mono = c.size() == s.rhos.size();
        for (std::size_t i = 1; i < c.size(); ++i) mono = mono && c[i] >= c[i - 1] - 0.02;
        ok = ok && mono;
        d << est::to_string(kind) << " [";
        for (std::size_t i = 0; i < c.size(); ++i) d << (i ? " " : "") << fixed(c[i], 3);
        d << "]" << (mono ? "" : " NOT MONOTONE") << "; ";
    }
    const double gap = std::fabs(curves[EstimatorKind::W].back() - curves[EstimatorKind::KL].back());
    ok = ok && gap > 0.1;
    d << "|W - KL| at rho 0.9 = " << fixed(gap, 3) << " (need > 0.1)";
    return {ok, d.str()};
}

// ---------------------------------------------------------------------------
// 3. DV bound dominates NWJ for random critics and batches.

Outcome bound_ordering() {
    const auto start = std::chrono::steady_clock::now();
    Rng rng(3);
    std::uniform_int_distribution<std::size_t> width(2, 16), batch(2, 64);
    std::size_t violations = 0;
    double worst = std::numeric_limits<double>::infinity();
    for (int i = 0; i < 100; ++i) {
        est::CriticConfig cfg;
        cfg.input_width = width(rng);
        cfg.output = est::OutputActivation::Identity;
        Rng init(rng());
        est::StatisticNetwork t(cfg, init);
        for (auto* p : t.parameters()) p->value = testing::uniform_vec(p->size(), rng, -1.0, 1.0);
        const std::size_t m = batch(rng);
        const Matrix zj = testing::random_matrix(m, cfg.input_width, rng);
        const Matrix zm = testing::random_matrix(m, cfg.input_width, rng);
        const double kl = est::estimate_kl(t, zj, zm).value;
        const double f = est::estimate_f(t, zj, zm).value;
        worst = std::min(worst, kl - f);
        if (kl < f - 1e-12) ++violations;
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return {violations == 0 && secs < 10.0, std::to_string(violations) + " violations in 100; min(kl - f) = " +
                                                format_double(worst) + "; runtime " + fixed(secs, 2) + " s"};
}

// ---------------------------------------------------------------------------
// 4. Finite-difference gradient suite.

struct SuiteTally {
    std::size_t instances = 0;
    std::size_t failures = 0;
    double worst_rel = 0.0;
    double worst_abs = 0.0;

    void add(const testing::GradCheck& r) {
        ++instances;
        if (!r.ok) ++failures;
        worst_rel = std::max(worst_rel, r.worst_rel);
        worst_abs = std::max(worst_abs, r.worst_abs);
    }
};

Outcome gradient_suite() {
    const auto start = std::chrono::steady_clock::now();
    constexpr int kInstances = 20;
    std::map<std::string, SuiteTally> tally;
    Rng rng(4);
    std::uniform_int_distribution<std::size_t> dim(1, 6);

    const std::pair<const char*, nn::Activation> acts[] = {{"dense/identity", nn::Activation::Identity},
                                                           {"dense/leaky_relu", nn::Activation::LeakyRelu},
                                                           {"dense/sigmoid", nn::Activation::Sigmoid},
                                                           {"dense/tanh", nn::Activation::Tanh},
                                                           {"dense/softplus", nn::Activation::Softplus}};
    for (const auto& [name, act] : acts) {
        for (int i = 0; i < kInstances; ++i) {
            const std::size_t in = dim(rng), out = dim(rng), m = dim(rng);
            nn::DenseLayer layer = nn::make_dense("d", in, out, act, rng);
            layer.bias.value = testing::uniform_vec(out, rng, -0.5, 0.5);
            nn::Parameter x = testing::random_param("x", {m, in}, rng);
            nn::ParamRefs refs = layer.parameters();
            refs.push_back(&x);
            const auto w = testing::uniform_vec(m * out, rng);
            tally[name].add(testing::check_gradients(
                [&](ad::Tape& t) { return ad::sum(ad::mul_const(nn::dense_forward(t, layer, nn::bind(t, x)), w)); },
                refs));
        }
    }

    for (int i = 0; i < kInstances; ++i) {
        const std::size_t in = dim(rng), hid = dim(rng), m = dim(rng);
        auto cell = nn::make_lstm("cell", in, hid, rng);
        std::vector<nn::Parameter> xs;
        for (int s = 0; s < 3; ++s) xs.push_back(testing::random_param("x", {m, in}, rng));
        nn::ParamRefs refs = cell.parameters();
        for (auto& x : xs) refs.push_back(&x);
        const auto w = testing::uniform_vec(m * hid, rng);
        tally["lstm"].add(testing::check_gradients(
            [&](ad::Tape& t) {
                ad::Var h = t.constant(ad::Shape{m, hid}, std::vector<double>(m * hid, 0.0));
                ad::Var c = h;
                for (auto& x : xs) std::tie(h, c) = nn::lstm_step(t, cell, nn::bind(t, x), h, c);
                return ad::add(ad::sum(ad::mul_const(h, w)), ad::mean(c));
            },
            refs));
    }

    for (int i = 0; i < kInstances; ++i) {
        const std::size_t in = dim(rng), m = dim(rng) + 1;
        const nn::DropoutSpec spec{0.4, true};
        nn::Parameter x = testing::random_param("x", {m, in}, rng);
        nn::ParamRefs refs{&x};
        const std::uint64_t mask = rng();
        const auto w = testing::uniform_vec(m * in, rng);
        tally["dropout"].add(testing::check_gradients(
            [&](ad::Tape& t) {
                Rng drop(mask);
                return ad::sum(ad::mul_const(nn::dropout_forward(spec, nn::bind(t, x), drop), w));
            },
            refs));
    }

    for (auto kind : {EstimatorKind::KL, EstimatorKind::F, EstimatorKind::W}) {
        const std::string name = std::string("critic/") + est::to_string(kind);
        for (int i = 0; i < kInstances; ++i) {
            est::CriticConfig cfg;
            cfg.input_width = dim(rng) + 1;
            cfg.output = est::default_output(kind);
            est::StatisticNetwork t(cfg, rng);
            for (auto* p : t.parameters()) p->value = testing::uniform_vec(p->size(), rng, -0.6, 0.6);
            const std::size_t m = dim(rng) + 1;
            const Matrix zj = testing::random_matrix(m, cfg.input_width, rng);
            const Matrix zm = testing::random_matrix(m, cfg.input_width, rng);
            const std::uint64_t mask = rng();
            tally[name].add(testing::check_gradients(
                [&](ad::Tape& tape) {
                    Rng drop(mask);
                    auto tj = t.forward(tape, tape.constant(zj), nn::Track::Yes, true, &drop);
                    auto tm = t.forward(tape, tape.constant(zm), nn::Track::Yes, true, &drop);
                    return est::objective(kind, tj, tm);
                },
                t.parameters()));
        }
    }

    for (auto variant : {fusion::EncoderVariant::ConcatMLP, fusion::EncoderVariant::EFLSTM}) {
        const std::string name = std::string("encoder/") + fusion::to_string(variant);
        for (int i = 0; i < kInstances; ++i) {
            fusion::FusionEncoderSpec spec;
            spec.variant = variant;
            spec.d_a = dim(rng);
            spec.d_v = dim(rng);
            spec.d_l = dim(rng);
            spec.hidden = dim(rng) + 1;
            spec.d_in = dim(rng) + 1;
            spec.seq_len = variant == fusion::EncoderVariant::EFLSTM ? 3 : 1;
            spec.dropout = 0.0;
            fusion::FusionEncoder enc(spec, rng);
            fusion::RegressionHead head(spec.d_in, rng);
            nn::ParamRefs refs = enc.parameters();
            for (auto* p : head.parameters()) refs.push_back(p);
            for (auto* p : refs) p->value = testing::uniform_vec(p->size(), rng, -0.6, 0.6);
            const std::size_t m = dim(rng) + 1;
            data::Dataset ds(m);
            auto seq = [&](std::size_t d) {
                data::Sequence s;
                for (std::size_t k = 0; k < spec.seq_len; ++k) s.push_back(testing::uniform_vec(d, rng));
                return s;
            };
            for (auto& s : ds) {
                s.a = seq(spec.d_a);
                s.v = seq(spec.d_v);
                s.l = seq(spec.d_l);
            }
            std::vector<std::size_t> idx(m);
            std::iota(idx.begin(), idx.end(), std::size_t{0});
            const auto batch = fusion::make_batch(spec, ds, idx);
            const auto w = testing::uniform_vec(m, rng);
            tally[name].add(testing::check_gradients(
                [&](ad::Tape& t) {
                    ad::Var z = enc.encode(t, batch, nn::Track::Yes, false, nullptr);
                    return ad::sum(ad::mul_const(head.forward(t, z, nn::Track::Yes), w));
                },
                refs));
        }
    }

    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    bool ok = secs < 60.0;
    std::ostringstream d;
    for (const auto& [name, t] : tally) {
        ok = ok && t.failures == 0 && t.instances >= kInstances;
        d << name << ' ' << (t.instances - t.failures) << '/' << t.instances << " (worst rel "
          << fixed(t.worst_rel, 8) << ", abs " << std::scientific << std::setprecision(1) << t.worst_abs
          << std::defaultfloat << "); ";
    }
    d << "runtime " << fixed(secs, 1) << " s (limit 60)";
    return {ok, d.str()};
}

// ---------------------------------------------------------------------------
// 5 and 6. Directional analogues on the synthetic task.

struct GridSummary {
    std::vector<experiment::GridRow> rows;
    double seconds = 0.0;
};

cli::RunConfig grid_config() {
    cli::RunConfig c;
    c.set("data.synthetic", "true");
    c.set("synthetic.latent_dim", "8");
    c.set("synthetic.n_train", "2000");
    c.set("grid.lambdas", "0,0.05,0.1,0.3");
    c.set("grid.kinds", "kl,f,w");
    c.set("grid.seeds", "10");
    return c;
}

GridSummary run_directional_grid() {
    const auto config = grid_config();
    const auto start = std::chrono::steady_clock::now();
    GridSummary g;
    g.rows = experiment::run_grid(config, experiment::grid_cells(config, 0));
    g.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return g;
}

// Per seed: the lambda = 0 row and, for `kind`, the lambda > 0 row with the
// best validation Acc2 (first in grid order on ties).
struct SeedPair {
    const experiment::GridRow* base = nullptr;
    const experiment::GridRow* best = nullptr;
};

std::map<std::uint64_t, SeedPair> pair_by_seed(const std::vector<experiment::GridRow>& rows, EstimatorKind kind) {
    std::map<std::uint64_t, SeedPair> out;
    for (const auto& r : rows) {
        auto& p = out[r.cell.seed];
        if (r.cell.lambda == 0.0) {
            p.base = &r;
        } else if (r.cell.kind == kind && (p.best == nullptr || r.val.acc2 > p.best->val.acc2)) {
            p.best = &r;
        }
    }
    return out;
}

std::size_t wins(const std::map<std::uint64_t, SeedPair>& pairs) {
    std::size_t n = 0;
    for (const auto& [seed, p] : pairs)
        if (p.base && p.best && p.best->val.acc2 > p.base->val.acc2) ++n;
    return n;
}

const EstimatorKind kKinds[] = {EstimatorKind::KL, EstimatorKind::F, EstimatorKind::W};

Outcome directional_accuracy() {
    const auto g = run_directional_grid();
    bool any = false;
    std::ostringstream d;
    for (auto kind : kKinds) {
        const std::size_t w = wins(pair_by_seed(g.rows, kind));
        any = any || w >= 7;
        d << est::to_string(kind) << " wins " << w << "/10; ";
    }
    const bool fast = g.seconds < 1800.0;
    d << "runtime " << fixed(g.seconds, 1) << " s (limit 1800)";
    return {any && fast, d.str()};
}

Outcome directional_robustness() {
    const auto g = run_directional_grid();
    // The kind with the most Acc2 wins, first in kl, f, w order on ties.
    EstimatorKind kind = EstimatorKind::KL;
    std::size_t most = 0;
    for (auto k : kKinds) {
        const std::size_t w = wins(pair_by_seed(g.rows, k));
        if (w > most) {
            most = w;
            kind = k;
        }
    }
    const auto pairs = pair_by_seed(g.rows, kind);
    std::ostringstream d;
    d << "kind " << est::to_string(kind) << "; ";
    std::size_t better = 0;
    const char* names[] = {"A", "V", "A+V"};
    for (std::size_t c = 1; c <= 3; ++c) {
        double base = 0.0, pen = 0.0;
        for (const auto& [seed, p] : pairs) {
            base += p.base->drop[c].ratio;
            pen += p.best->drop[c].ratio;
        }
        base /= static_cast<double>(pairs.size());
        pen /= static_cast<double>(pairs.size());
        if (pen >= base) ++better;
        d << names[c - 1] << ": lambda>0 " << fixed(pen) << " vs lambda=0 " << fixed(base) << "; ";
    }
    d << better << "/3 conditions hold (need 2)";
    return {better >= 2, d.str()};
}

// ---------------------------------------------------------------------------
// 7. The trained critic separates aligned from shuffled test triples.

Outcome interpretability() {
    cli::RunConfig c;
    c.set("data.synthetic", "true");
    const auto splits = experiment::load_splits(c, 0);
    const auto enc = cli::encoder_spec(c, data::validate_dataset(splits.train));
    const auto loss = cli::loss_config(c);
    auto result = fusion::train(enc, loss, splits.train, splits.val, 0, {false});
    if (result.aborted) return {false, "training aborted: " + result.abort_reason};
    const auto& model = result.state.best;
    const auto& test = splits.test;
    const std::size_t n = test.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng = make_stream(0, "score_shuffle");
    const auto pa = est::random_permutation(n, rng);
    const auto pv = est::random_permutation(n, rng);
    const auto pl = est::random_permutation(n, rng);
    const auto aligned = eval::critic_scores(model, test, loss.critic_input);
    const auto shuffled = eval::critic_scores(model, test, pa, pv, pl, loss.critic_input);
    std::size_t positives = 0, trials = 0;
    double ma = 0.0, ms = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        ma += aligned[i] / static_cast<double>(n);
        ms += shuffled[i] / static_cast<double>(n);
        if (aligned[i] == shuffled[i]) continue;
        ++trials;
        if (aligned[i] > shuffled[i]) ++positives;
    }
    const double p = eval::sign_test_p_value(positives, trials);
    std::ostringstream d;
    d << "n=" << n << " mean aligned " << fixed(ma) << " vs shuffled " << fixed(ms) << "; " << positives << '/'
      << trials << " aligned higher; sign-test p = " << format_double(p);
    return {n == 500 && ma > ms && p < 0.05, d.str()};
}

// ---------------------------------------------------------------------------
// 8. Every command rerun with the same seed and config is byte-identical.

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) return "<missing " + p.string() + ">";
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int shell(const std::string& cmd) {
    const int status = std::system((cmd + " > /dev/null 2>&1").c_str());
    return status == -1 ? -1 : WEXITSTATUS(status);
}

Outcome determinism() {
    const fs::path root = fs::temp_directory_path() / "mdm_acceptance_determinism";
    fs::remove_all(root);
    const std::string bin = std::string("\"") + MDM_CLI_PATH + "\"";
    struct Command {
        std::string name;
        std::string args;
        std::vector<std::string> files;
    };
    const std::vector<Command> commands = {
        {"gen-data", "gen-data --seed 7 --set data.synthetic=true", {"train.jsonl", "val.jsonl", "test.jsonl"}},
        {"train", "train --seed 7 --set data.synthetic=true", {"checkpoint.bin", "train_log.csv", "metrics.csv"}},
        {"eval-drop", "eval-drop --seed 7 --set data.synthetic=true --checkpoint {run}/train/checkpoint.bin",
         {"drop_ratios.csv"}},
        {"score", "score --seed 7 --set data.synthetic=true --checkpoint {run}/train/checkpoint.bin",
         {"scores.csv"}},
        {"grid", "train --seed 7 --set data.synthetic=true --set grid.lambdas=0,0.1 --set grid.kinds=kl,w "
                 "--set grid.seeds=2 --set train.epochs=3",
         {"grid_summary.csv"}},
        {"gaussian-bench", "gaussian-bench --seed 7 --set bench.steps=300 --set gaussian.n=2000 "
                           "--set gaussian.rhos=0,0.5",
         {"gaussian_bench.csv"}},
    };
    std::size_t compared = 0;
    std::vector<std::string> diffs;
    for (const char* run : {"a", "b"}) {
        const fs::path base = root / run;
        for (const auto& c : commands) {
            std::string args = c.args;
            if (auto pos = args.find("{run}"); pos != std::string::npos) args.replace(pos, 5, base.string());
            const int code = shell(bin + " " + args + " --out \"" + (base / c.name).string() + "\"");
            if (code != 0) return {false, c.name + " exited with " + std::to_string(code)};
        }
    }
    for (const auto& c : commands) {
        for (const auto& f : c.files) {
            ++compared;
            if (slurp(root / "a" / c.name / f) != slurp(root / "b" / c.name / f)) diffs.push_back(c.name + "/" + f);
        }
    }
    std::ostringstream d;
    d << commands.size() << " commands, " << compared << " files compared, " << diffs.size() << " differ";
    for (const auto& x : diffs) d << " " << x;
    fs::remove_all(root);
    return {diffs.empty(), d.str()};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance criteria"};
    std::vector<int> only;
    app.add_option("--only", only, "criterion numbers to run (default: all)")->check(CLI::Range(1, 8));
    CLI11_PARSE(app, argc, argv);

    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
        {"Gaussian oracle recovery", gaussian_recovery},
        {"estimate curves rise with rho", curve_shape},
        {"DV bound dominates NWJ", bound_ordering},
        {"finite-difference gradient suite", gradient_suite},
        {"penalty improves validation Acc2", directional_accuracy},
        {"penalty improves modality-drop ratios", directional_robustness},
        {"critic separates aligned from shuffled triples", interpretability},
        {"byte-identical reruns", determinism},
    };
    bool all = true;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i) + 1;
        if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << criteria[i].first << ", "
                  << fixed(secs, 1) << " s): " << o.detail << std::endl;
        all = all && o.pass;
    }
    return all ? 0 : 1;
}
