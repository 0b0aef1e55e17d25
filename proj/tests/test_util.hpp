#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "doctest.h"

#include "ffdc/params.hpp"
#include "ffdc/rng.hpp"

namespace ffdc {
namespace testutil {

// Central finite differences against the tape gradients, on randomly sampled
// parameter coordinates. `loss(true)` must run forward+backward (accumulating
// into store grads); `loss(false)` forward only, returning the loss value.
struct FdReport {
    double worst = 0.0;
    int checked = 0;
};

inline FdReport check_param_gradients(ParamStore& store, const std::function<double(bool)>& loss,
                                      int coords_per_param, Rng& rng, double tol = 1e-4, double h = 1e-5) {
    store.zero_grads();
    loss(true);
    std::map<std::string, std::vector<double>> grads;
    for (const auto& p : store.params()) grads[p.name] = p.grad.v;
    store.zero_grads();

    FdReport report;
    for (auto& p : store.params()) {
        const int n = static_cast<int>(p.value.v.size());
        for (int c = 0; c < coords_per_param; ++c) {
            const int idx = static_cast<int>(rng.uniform_int(0, n - 1));
            const double orig = p.value.v[idx];
            p.value.v[idx] = orig + h;
            const double lp = loss(false);
            p.value.v[idx] = orig - h;
            const double lm = loss(false);
            p.value.v[idx] = orig;
            const double fd = (lp - lm) / (2.0 * h);
            const double an = grads[p.name][static_cast<size_t>(idx)];
            const double err = std::abs(fd - an) / std::max({1.0e-6, std::abs(fd), std::abs(an)});
            report.worst = std::max(report.worst, err);
            report.checked += 1;
            INFO("param ", p.name, " coord ", idx, " fd=", fd, " analytic=", an);
            CHECK(err < tol);
        }
    }
    return report;
}

}  // namespace testutil
}  // namespace ffdc
