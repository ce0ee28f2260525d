#pragma once

// Shared test oracles. These stay independent of the library's fast paths:
// the matmul oracle is a plain triple loop, and the gradient checker runs
// central finite differences over a caller-supplied loss closure.

#include <cmath>
#include <functional>
#include <vector>

#include "likra/adam.hpp"
#include "likra/tensor.hpp"

namespace likra::test {

// Naive triple-loop product of row-major buffers, the reference for matmul.
inline std::vector<double> naive_matmul(const std::vector<double>& a, const std::vector<double>& b,
                                        int m, int k, int n) {
    std::vector<double> c(static_cast<size_t>(m) * n, 0.0);
    for (int i = 0; i < m; ++i)
        for (int p = 0; p < k; ++p)
            for (int j = 0; j < n; ++j) c[i * n + j] += a[i * k + p] * b[p * n + j];
    return c;
}

struct GradCheckResult {
    double max_rel_err = 0;
    std::string worst_param;
    size_t worst_index = 0;
    double analytic = 0, numeric = 0;
};

// Central finite differences (64-bit) against analytic gradients. `loss_fn`
// must rebuild the forward pass from the current parameter values on every
// call. Relative error uses a floor so near-zero gradient pairs are compared
// absolutely.
inline GradCheckResult grad_check(std::vector<NamedParam<double>> params,
                                  const std::function<Tensor64()>& loss_fn, double h = 1e-3,
                                  double denom_floor = 1e-2) {
    for (auto& p : params) {
        p.tensor.set_requires_grad(true);
        p.tensor.zero_grad();
    }
    Tensor64 loss = loss_fn();
    loss.backward();
    std::vector<std::vector<double>> analytic;
    for (auto& p : params) analytic.push_back(p.tensor.grad());

    GradCheckResult res;
    for (size_t k = 0; k < params.size(); ++k) {
        auto& data = params[k].tensor.data();
        for (size_t i = 0; i < data.size(); ++i) {
            double orig = data[i];
            data[i] = orig + h;
            double lp = loss_fn().item();
            data[i] = orig - h;
            double lm = loss_fn().item();
            data[i] = orig;
            double fd = (lp - lm) / (2 * h);
            double an = analytic[k][i];
            double denom = std::max({std::abs(fd), std::abs(an), denom_floor});
            double rel = std::abs(fd - an) / denom;
            if (rel > res.max_rel_err) {
                res.max_rel_err = rel;
                res.worst_param = params[k].name;
                res.worst_index = i;
                res.analytic = an;
                res.numeric = fd;
            }
        }
    }
    return res;
}

}  // namespace likra::test
