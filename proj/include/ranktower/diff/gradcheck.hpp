#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "ranktower/diff/graph.hpp"

namespace ranktower::diff {

// Scalar-valued function of one or more tensors, recorded on the given graph.
using ScalarFn = std::function<Var(Graph&, std::span<const Var>)>;

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t worst_input = 0;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
};

// Compares reverse-mode gradients against central differences over every coordinate of
// every input. Error per coordinate is |analytic - numeric| / max(1, |analytic|).
// Throws EvaluationError if f is not finite at any probe.
GradCheckResult finite_difference_check(const ScalarFn& f, std::vector<Tensor> inputs, double step = 1e-5);

GradCheckResult finite_difference_check(const std::function<Var(Graph&, Var)>& f, const Tensor& x,
                                        double step = 1e-5);

} // namespace ranktower::diff
