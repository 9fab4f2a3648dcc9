#pragma once

#include <random>
#include <string>
#include <vector>

#include "ranktower/diff/gradcheck.hpp"
#include "ranktower/params.hpp"

namespace testutil {

inline ranktower::diff::Tensor random_tensor(std::mt19937_64& rng, ranktower::diff::Shape shape, double lo = -1.0,
                                             double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> v(ranktower::diff::shape_size(shape));
    for (auto& x : v) x = dist(rng);
    return ranktower::diff::Tensor(std::move(shape), std::move(v));
}

inline std::size_t random_dim(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

// Finite-difference check over the tensors in `params` accepted by `include` plus `extra`
// inputs. f(bind, extra_vars) builds the scalar; parameters are reached through `bind`.
template <class F, class Pred>
double params_gradcheck(const ranktower::ParameterSet& params, std::vector<ranktower::diff::Tensor> extra, F f,
                        Pred include, double step = 1e-5) {
    using namespace ranktower;
    std::vector<diff::Tensor> inputs = extra;
    std::vector<std::size_t> checked;
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!include(params.entries()[i].name)) continue;
        checked.push_back(i);
        inputs.push_back(params.entries()[i].value);
    }
    const auto n_extra = extra.size();
    return diff::finite_difference_check(
               [&](diff::Graph& g, std::span<const diff::Var> v) {
                   Binding bind(g, params);
                   for (std::size_t j = 0; j < checked.size(); ++j) bind.set(ParamId{checked[j]}, v[n_extra + j]);
                   return f(bind, v.subspan(0, n_extra));
               },
               inputs, step)
        .max_rel_error;
}

template <class F>
double params_gradcheck(const ranktower::ParameterSet& params, std::vector<ranktower::diff::Tensor> extra, F f,
                        double step = 1e-5) {
    return params_gradcheck(params, std::move(extra), f, [](const std::string&) { return true; }, step);
}

} // namespace testutil
