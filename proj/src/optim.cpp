#include "ranktower/optim.hpp"

#include <cmath>

#include "ranktower/errors.hpp"

namespace ranktower {

Adam::Adam(const ParameterSet& params, AdamConfig config) : config_(config) {
    for (const auto& e : params.entries()) {
        m_.emplace_back(e.value.values.size(), 0.0);
        v_.emplace_back(e.value.values.size(), 0.0);
    }
}

void Adam::step(ParameterSet& params, const std::vector<std::vector<double>>& grads) {
    if (grads.size() != m_.size() || params.size() != m_.size())
        throw DimensionError("adam: gradient count does not match parameter count");
    ++t_;
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    for (std::size_t p = 0; p < m_.size(); ++p) {
        auto& value = params.entries()[p].value.values;
        const auto& g = grads[p];
        if (g.size() != value.size()) throw DimensionError("adam: gradient size mismatch for " + params.entries()[p].name);
        auto& m = m_[p];
        auto& v = v_[p];
        for (std::size_t i = 0; i < g.size(); ++i) {
            m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
            v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
            value[i] -= config_.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.eps);
        }
    }
}

} // namespace ranktower
