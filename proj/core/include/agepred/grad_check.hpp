#pragma once
// Central finite-difference verification of analytic gradients. The caller
// computes analytic gradients first (they are read through the ParamRef grad
// pointers), then supplies a loss re-evaluation callback. The callback must be
// a deterministic function of the parameters: reset any RNG it consumes.
//
// Relu-style kinks make the loss piecewise linear in any one parameter, and a
// central difference that straddles a kink estimates nothing. At a straddle
// the two one-sided slopes differ by the full slope jump, so coordinates with
// |forward slope - backward slope| > kink_tol * scale are skipped and counted.
// A coordinate that survives the filter has kink corruption bounded by
// kink_tol * scale / 2, which keeps the central estimate inside the check
// tolerance.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "agepred/optimizer.hpp"

namespace agepred {

struct GradCheckReport {
    double max_rel_err = 0.0;
    bool pass = false;
    std::size_t checked = 0;
    std::size_t skipped_nonsmooth = 0;
    std::string worst_param;
};

// max_checks > 0 caps the number of probed entries: parameter blocks are
// sampled with an even stride so every block stays covered.
inline GradCheckReport grad_check(const std::vector<ParamRef>& params,
                                  const std::function<double()>& loss_value,
                                  double h = 1e-5, double tol = 1e-4,
                                  std::size_t max_checks = 0,
                                  double kink_tol = 1e-4) {
    GradCheckReport rep;
    Eigen::Index total = 0;
    for (const auto& p : params) total += p.size;
    Eigen::Index stride = 1;
    if (max_checks > 0 && total > Eigen::Index(max_checks)) {
        stride = (total + Eigen::Index(max_checks) - 1) / Eigen::Index(max_checks);
    }
    // Snapshot the analytic gradients now: the loss callback may recompute
    // them as a side effect of its own backward pass.
    std::vector<std::vector<double>> analytic_grads;
    analytic_grads.reserve(params.size());
    for (const auto& p : params) {
        analytic_grads.emplace_back(p.grad, p.grad + p.size);
    }
    const double f0 = loss_value();
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        const auto& p = params[pi];
        for (Eigen::Index k = 0; k < p.size; k += stride) {
            const double orig = p.value[k];
            p.value[k] = orig + h;
            const double fp = loss_value();
            p.value[k] = orig - h;
            const double fm = loss_value();
            p.value[k] = orig;

            const double numeric = (fp - fm) / (2.0 * h);
            const double analytic = analytic_grads[pi][std::size_t(k)];
            const double scale =
                std::max({std::fabs(numeric), std::fabs(analytic), 1.0});

            const double slope_fwd = (fp - f0) / h;
            const double slope_bwd = (f0 - fm) / h;
            if (std::fabs(slope_fwd - slope_bwd) > kink_tol * scale) {
                ++rep.skipped_nonsmooth;
                continue;
            }

            double err = 0.0;
            // Below the FD noise floor both estimates read as zero.
            if (std::fabs(analytic) > 1e-7 || std::fabs(numeric) > 1e-7) {
                err = std::fabs(analytic - numeric) /
                      std::max(std::fabs(analytic), std::fabs(numeric));
            }
            if (err > rep.max_rel_err) {
                rep.max_rel_err = err;
                rep.worst_param = p.name + "[" + std::to_string(k) + "]";
            }
            ++rep.checked;
        }
    }
    rep.pass = rep.max_rel_err < tol;
    return rep;
}

}  // namespace agepred
