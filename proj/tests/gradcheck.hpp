#pragma once

// Central finite-difference oracle for analytic gradients.

#include "mdm/nn.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

namespace mdm::testing {

struct GradCheck {
    double worst_rel = 0.0;  // over entries whose absolute error exceeds abs_tol
    double worst_abs = 0.0;
    std::size_t checked = 0;
    bool ok = true;
};

/// `loss` must rebuild the scalar from the current parameter values each call,
/// binding every parameter in `params` with Track::Yes.
inline GradCheck check_gradients(const std::function<ad::Var(ad::Tape&)>& loss, std::span<nn::Parameter* const> params,
                                 double h = 1e-5, double rel_tol = 1e-4, double abs_tol = 1e-6) {
    nn::zero_grad(params);
    {
        ad::Tape tape;
        tape.backward(loss(tape));
    }
    GradCheck r;
    for (nn::Parameter* p : params) {
        for (std::size_t i = 0; i < p->size(); ++i) {
            const double saved = p->value[i];
            p->value[i] = saved + h;
            ad::Tape t1;
            const double up = loss(t1).item();
            p->value[i] = saved - h;
            ad::Tape t2;
            const double down = loss(t2).item();
            p->value[i] = saved;
            const double numeric = (up - down) / (2.0 * h);
            const double analytic = p->grad[i];
            const double err = std::abs(numeric - analytic);
            r.worst_abs = std::max(r.worst_abs, err);
            if (err > abs_tol) {
                const double rel = err / std::max(std::abs(numeric), std::abs(analytic));
                r.worst_rel = std::max(r.worst_rel, rel);
                if (rel >= rel_tol) r.ok = false;
            }
            ++r.checked;
        }
    }
    return r;
}

inline std::vector<double> uniform_vec(std::size_t n, Rng& rng, double lo = -2.0, double hi = 2.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(n);
    for (auto& x : v) x = u(rng);
    return v;
}

inline nn::Parameter random_param(const std::string& name, ad::Shape shape, Rng& rng, double lo = -2.0,
                                  double hi = 2.0) {
    nn::Parameter p(name, std::move(shape));
    p.value = uniform_vec(p.size(), rng, lo, hi);
    return p;
}

inline Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double lo = -2.0, double hi = 2.0) {
    return Matrix{r, c, uniform_vec(r * c, rng, lo, hi)};
}

}  // namespace mdm::testing
