#include "ranktower/diff/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ranktower/errors.hpp"

namespace ranktower::diff {
namespace {

double evaluate(const ScalarFn& f, const std::vector<Tensor>& inputs) {
    Graph g(false);
    std::vector<Var> vars;
    vars.reserve(inputs.size());
    for (const auto& t : inputs) vars.push_back(g.bind(t, false));
    const double v = f(g, vars).item();
    if (!std::isfinite(v)) throw EvaluationError("finite_difference_check: function value is not finite");
    return v;
}

} // namespace

GradCheckResult finite_difference_check(const ScalarFn& f, std::vector<Tensor> inputs, double step) {
    std::vector<std::vector<double>> analytic;
    {
        Graph g;
        std::vector<Var> vars;
        for (const auto& t : inputs) vars.push_back(g.bind(t, true));
        Var out = f(g, vars);
        if (!std::isfinite(out.item())) throw EvaluationError("finite_difference_check: function value is not finite");
        g.backward(out);
        for (auto v : vars) analytic.push_back(g.grad(v));
    }

    GradCheckResult result;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        for (std::size_t i = 0; i < inputs[k].size(); ++i) {
            const double saved = inputs[k].values[i];
            inputs[k].values[i] = saved + step;
            const double up = evaluate(f, inputs);
            inputs[k].values[i] = saved - step;
            const double down = evaluate(f, inputs);
            inputs[k].values[i] = saved;
            const double numeric = (up - down) / (2.0 * step);
            const double a = analytic[k][i];
            const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a));
            if (err > result.max_rel_error || (k == 0 && i == 0)) {
                result = {err, k, i, a, numeric};
            }
        }
    }
    return result;
}

GradCheckResult finite_difference_check(const std::function<Var(Graph&, Var)>& f, const Tensor& x, double step) {
    return finite_difference_check([&f](Graph& g, std::span<const Var> v) { return f(g, v[0]); },
                                   std::vector<Tensor>{x}, step);
}

} // namespace ranktower::diff
