#include "agepred/optimizer.hpp"

#include <cmath>

#include "agepred/errors.hpp"

namespace agepred {

void AdamOptimizer::attach(const std::vector<ParamRef>& params) {
    m_.clear();
    v_.clear();
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (const auto& p : params) {
        m_.push_back(Eigen::VectorXd::Zero(p.size));
        v_.push_back(Eigen::VectorXd::Zero(p.size));
    }
    step_count_ = 0;
}

void AdamOptimizer::step(const std::vector<ParamRef>& params) {
    if (params.size() != m_.size()) {
        throw InvariantError("optimizer not attached to this parameter list");
    }
    ++step_count_;
    const double bc1 = 1.0 - std::pow(beta1_, double(step_count_));
    const double bc2 = 1.0 - std::pow(beta2_, double(step_count_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& p = params[i];
        double* m = m_[i].data();
        double* v = v_[i].data();
        for (Eigen::Index k = 0; k < p.size; ++k) {
            const double g = p.grad[k];
            if (!std::isfinite(g)) {
                throw NumericsError("non-finite gradient in " + p.name);
            }
            m[k] = beta1_ * m[k] + (1.0 - beta1_) * g;
            v[k] = beta2_ * v[k] + (1.0 - beta2_) * g * g;
            const double mhat = m[k] / bc1;
            const double vhat = v[k] / bc2;
            p.value[k] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

void AdamOptimizer::restore(long step_count, std::vector<Eigen::VectorXd> m,
                            std::vector<Eigen::VectorXd> v) {
    step_count_ = step_count;
    m_ = std::move(m);
    v_ = std::move(v);
}

}  // namespace agepred
