#pragma once

#include <cstddef>
#include <vector>

#include "ranktower/params.hpp"

namespace ranktower {

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adam with bias correction. Moments are kept per parameter, in ParameterSet order.
class Adam {
public:
    Adam() = default;
    Adam(const ParameterSet& params, AdamConfig config);

    // grads[i] is the gradient of parameter i; must match its size.
    void step(ParameterSet& params, const std::vector<std::vector<double>>& grads);

    const AdamConfig& config() const { return config_; }
    std::size_t steps() const { return t_; }
    std::vector<std::vector<double>>& first_moments() { return m_; }
    std::vector<std::vector<double>>& second_moments() { return v_; }
    const std::vector<std::vector<double>>& first_moments() const { return m_; }
    const std::vector<std::vector<double>>& second_moments() const { return v_; }
    void set_steps(std::size_t t) { t_ = t; }

private:
    AdamConfig config_;
    std::size_t t_ = 0;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
};

} // namespace ranktower
