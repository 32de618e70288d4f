#pragma once
// Adam with bias correction over flat views into parameter storage.

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace agepred {

// Non-owning view of one parameter block and its gradient accumulator.
struct ParamRef {
    std::string name;
    double* value = nullptr;
    double* grad = nullptr;
    Eigen::Index size = 0;
};

class AdamOptimizer {
public:
    explicit AdamOptimizer(double lr, double beta1 = 0.9, double beta2 = 0.999,
                           double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    // Allocates zeroed moment accumulators matching the parameter list.
    void attach(const std::vector<ParamRef>& params);

    // One update; throws NumericsError on a non-finite gradient.
    void step(const std::vector<ParamRef>& params);

    long step_count() const { return step_count_; }
    double lr() const { return lr_; }

    // Checkpoint access.
    const std::vector<Eigen::VectorXd>& first_moments() const { return m_; }
    const std::vector<Eigen::VectorXd>& second_moments() const { return v_; }
    void restore(long step_count, std::vector<Eigen::VectorXd> m,
                 std::vector<Eigen::VectorXd> v);

private:
    double lr_, beta1_, beta2_, eps_;
    long step_count_ = 0;
    std::vector<Eigen::VectorXd> m_, v_;
};

}  // namespace agepred
