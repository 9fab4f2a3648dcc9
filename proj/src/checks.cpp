#include "ranktower/checks.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>

#include "ranktower/diff/gradcheck.hpp"
#include "ranktower/interaction.hpp"
#include "ranktower/losses.hpp"
#include "ranktower/metrics.hpp"
#include "ranktower/towers.hpp"

namespace ranktower::checks {

using diff::Graph;
using diff::Shape;
using diff::Tensor;
using diff::Var;

namespace {

using Rng = std::mt19937_64;

Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> v(diff::shape_size(shape));
    for (auto& x : v) x = dist(rng);
    return Tensor(std::move(shape), std::move(v));
}

// Entries with magnitude in [0.2, 1] and random sign, away from kinks at 0.
Tensor away_from_zero(Rng& rng, Shape shape) {
    auto t = random_tensor(rng, std::move(shape), 0.2, 1.0);
    std::bernoulli_distribution flip(0.5);
    for (auto& x : t.values)
        if (flip(rng)) x = -x;
    return t;
}

std::size_t dim(Rng& rng, std::size_t lo = 1, std::size_t hi = 8) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

std::vector<double> labels(Rng& rng, std::size_t n, int max_label) {
    std::uniform_int_distribution<int> d(0, max_label);
    std::vector<double> y(n);
    for (auto& v : y) v = d(rng);
    return y;
}

// Reduces any output to a scalar with fixed, non-uniform weights.
Var probe(Var y) {
    std::vector<double> w(y.size());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::cos(0.9 * static_cast<double>(i) + 0.1);
    return diff::sum(diff::mul(y, y.graph().constant(Tensor(y.shape(), w))));
}

double fd(const diff::ScalarFn& f, std::vector<Tensor> inputs) {
    return diff::finite_difference_check(f, std::move(inputs)).max_rel_error;
}

// FD over every parameter plus `extra` inputs; f reaches parameters through the binding.
double fd_params(const ParameterSet& params, std::vector<Tensor> extra,
                 const std::function<Var(Binding&, std::span<const Var>)>& f) {
    std::vector<Tensor> inputs = extra;
    for (const auto& e : params.entries()) inputs.push_back(e.value);
    const auto n_extra = extra.size();
    return fd(
        [&](Graph& g, std::span<const Var> v) {
            Binding bind(g, params);
            for (std::size_t i = 0; i < params.size(); ++i) bind.set(ParamId{i}, v[n_extra + i]);
            return f(bind, v.subspan(0, n_extra));
        },
        std::move(inputs));
}

using Check = std::function<double(Rng&)>;

double unary(Rng& rng, Var (*op)(Var), bool positive = false, bool kink_at_zero = false) {
    Shape s{dim(rng, 1, 4), dim(rng)};
    auto x = positive ? random_tensor(rng, s, 0.5, 2.0) : kink_at_zero ? away_from_zero(rng, s) : random_tensor(rng, s);
    return fd([&](Graph&, std::span<const Var> v) { return probe(op(v[0])); }, {x});
}

double binary(Rng& rng, Var (*op)(Var, Var)) {
    Shape s{dim(rng, 1, 4), dim(rng)};
    return fd([&](Graph&, std::span<const Var> v) { return probe(op(v[0], v[1])); },
              {random_tensor(rng, s), random_tensor(rng, s)});
}

std::vector<std::pair<std::string, Check>> op_checks() {
    std::vector<std::pair<std::string, Check>> c;
    c.push_back({"op/add", [](Rng& r) { return binary(r, diff::add); }});
    c.push_back({"op/sub", [](Rng& r) { return binary(r, diff::sub); }});
    c.push_back({"op/mul", [](Rng& r) { return binary(r, diff::mul); }});
    c.push_back({"op/scale", [](Rng& r) {
                     return fd([](Graph&, std::span<const Var> v) { return probe(diff::scale(v[0], -1.7)); },
                               {random_tensor(r, {dim(r), dim(r)})});
                 }});
    c.push_back({"op/add_scalar", [](Rng& r) {
                     return fd([](Graph&, std::span<const Var> v) { return probe(diff::add_scalar(v[0], 0.3)); },
                               {random_tensor(r, {dim(r)})});
                 }});
    c.push_back({"op/sigmoid", [](Rng& r) { return unary(r, diff::sigmoid); }});
    c.push_back({"op/silu", [](Rng& r) { return unary(r, diff::silu); }});
    c.push_back({"op/relu", [](Rng& r) { return unary(r, diff::relu, false, true); }});
    c.push_back({"op/exp", [](Rng& r) { return unary(r, diff::exp); }});
    c.push_back({"op/log", [](Rng& r) { return unary(r, diff::log, true); }});
    c.push_back({"op/softplus", [](Rng& r) { return unary(r, diff::softplus); }});
    c.push_back({"op/abs_pow", [](Rng& r) {
                     const double p = std::uniform_real_distribution<double>(1.2, 3.0)(r);
                     return fd([p](Graph&, std::span<const Var> v) { return probe(diff::abs_pow(v[0], p)); },
                               {away_from_zero(r, {dim(r)})});
                 }});
    c.push_back({"op/add_bias", [](Rng& r) {
                     const auto n = dim(r);
                     return fd([](Graph&, std::span<const Var> v) { return probe(diff::add_bias(v[0], v[1])); },
                               {random_tensor(r, {dim(r), n}), random_tensor(r, {n})});
                 }});
    c.push_back({"op/mul_scalar", [](Rng& r) {
                     return fd([](Graph&, std::span<const Var> v) { return probe(diff::mul_scalar(v[0], v[1])); },
                               {random_tensor(r, {dim(r), dim(r)}), random_tensor(r, {1})});
                 }});
    c.push_back({"op/broadcast_batch", [](Rng& r) {
                     const auto b = dim(r, 1, 4);
                     return fd([b](Graph&, std::span<const Var> v) { return probe(diff::broadcast_batch(v[0], b)); },
                               {random_tensor(r, {dim(r), dim(r)})});
                 }});
    c.push_back({"op/reshape", [](Rng& r) {
                     const auto a = dim(r), b = dim(r);
                     return fd([=](Graph&, std::span<const Var> v) { return probe(diff::reshape(v[0], {a * b})); },
                               {random_tensor(r, {a, b})});
                 }});
    c.push_back({"op/concat_last", [](Rng& r) {
                     const auto n = dim(r);
                     return fd([](Graph&, std::span<const Var> v) { return probe(diff::concat_last(v)); },
                               {random_tensor(r, {n, dim(r)}), random_tensor(r, {n, dim(r)}), random_tensor(r, {n, dim(r)})});
                 }});
    c.push_back({"op/gather_rows", [](Rng& r) {
                     const auto rows = dim(r);
                     std::vector<std::size_t> idx(dim(r));
                     for (auto& i : idx) i = std::uniform_int_distribution<std::size_t>(0, rows - 1)(r);
                     return fd([idx](Graph&, std::span<const Var> v) { return probe(diff::gather_rows(v[0], idx)); },
                               {random_tensor(r, {rows, dim(r)})});
                 }});
    c.push_back({"op/select", [](Rng& r) {
                     const auto n = dim(r);
                     std::vector<std::size_t> idx(dim(r));
                     for (auto& i : idx) i = std::uniform_int_distribution<std::size_t>(0, n - 1)(r);
                     return fd([idx](Graph&, std::span<const Var> v) { return probe(diff::select(v[0], idx)); },
                               {random_tensor(r, {n})});
                 }});
    // Central differences see through a stop, so this row compares the tape gradient of
    // sum(x^2) + probe(sg(x)) against the exact 2x instead.
    c.push_back({"op/stop_gradient", [](Rng& r) {
                     auto x = random_tensor(r, {dim(r), dim(r)});
                     Graph g;
                     auto v = g.variable(x);
                     g.backward(diff::add(diff::sum(diff::mul(v, v)), probe(diff::stop_gradient(v))));
                     auto grad = g.grad(v);
                     double err = 0;
                     for (std::size_t i = 0; i < grad.size(); ++i) err = std::max(err, std::abs(grad[i] - 2 * x.values[i]));
                     return err;
                 }});
    c.push_back({"op/matmul", [](Rng& r) {
                     const auto n = dim(r);
                     return fd([](Graph&, std::span<const Var> v) { return probe(diff::matmul(v[0], v[1])); },
                               {random_tensor(r, {dim(r, 1, 3), dim(r), n}), random_tensor(r, {n, dim(r)})});
                 }});
    c.push_back({"op/bmm", [](Rng& r) {
                     const auto b = dim(r, 1, 3), n = dim(r);
                     return fd([](Graph&, std::span<const Var> v) { return probe(diff::bmm(v[0], v[1])); },
                               {random_tensor(r, {b, dim(r), n}), random_tensor(r, {b, n, dim(r)})});
                 }});
    c.push_back({"op/bmm_transposed", [](Rng& r) {
                     const auto b = dim(r, 1, 3), n = dim(r);
                     return fd([](Graph&, std::span<const Var> v) { return probe(diff::bmm(v[0], v[1], true)); },
                               {random_tensor(r, {b, dim(r), n}), random_tensor(r, {b, dim(r), n})});
                 }});
    c.push_back({"op/sum", [](Rng& r) {
                     return fd([](Graph&, std::span<const Var> v) { return diff::sum(v[0]); },
                               {random_tensor(r, {dim(r), dim(r)})});
                 }});
    c.push_back({"op/sum_last", [](Rng& r) {
                     return fd([](Graph&, std::span<const Var> v) { return probe(diff::sum_last(v[0])); },
                               {random_tensor(r, {dim(r), dim(r)})});
                 }});
    c.push_back({"op/reduce_max_last", [](Rng& r) {
                     return fd([](Graph&, std::span<const Var> v) { return probe(diff::reduce_max_last(v[0]).value); },
                               {random_tensor(r, {dim(r), dim(r)})});
                 }});
    c.push_back({"op/row_softmax", [](Rng& r) {
                     return fd([](Graph&, std::span<const Var> v) { return probe(diff::row_softmax(v[0])); },
                               {random_tensor(r, {dim(r), dim(r)}, -3, 3)});
                 }});
    c.push_back({"op/log_softmax", [](Rng& r) {
                     return fd([](Graph&, std::span<const Var> v) { return probe(diff::log_softmax(v[0])); },
                               {random_tensor(r, {dim(r), dim(r)}, -3, 3)});
                 }});
    c.push_back({"op/layer_norm", [](Rng& r) {
                     const auto n = dim(r, 2, 8);
                     return fd([](Graph&, std::span<const Var> v) { return probe(diff::layer_norm(v[0], v[1], v[2], 1e-5)); },
                               {random_tensor(r, {dim(r), n}), random_tensor(r, {n}), random_tensor(r, {n})});
                 }});
    c.push_back({"op/l2_normalize_last", [](Rng& r) {
                     return fd([](Graph&, std::span<const Var> v) { return probe(diff::l2_normalize_last(v[0])); },
                               {random_tensor(r, {dim(r), dim(r)})});
                 }});
    c.push_back({"op/outer_sub", [](Rng& r) {
                     return fd([](Graph&, std::span<const Var> v) { return probe(diff::outer_sub(v[0], v[1])); },
                               {random_tensor(r, {dim(r)}), random_tensor(r, {dim(r)})});
                 }});
    c.push_back({"op/cosine_similarity", [](Rng& r) {
                     Shape s{dim(r), dim(r)};
                     return fd([](Graph&, std::span<const Var> v) { return probe(diff::cosine_similarity(v[0], v[1])); },
                               {random_tensor(r, s), random_tensor(r, s)});
                 }});
    c.push_back({"op/cosine_matrix", [](Rng& r) {
                     const auto b = dim(r, 1, 3), k = dim(r);
                     return fd([](Graph&, std::span<const Var> v) { return probe(diff::cosine_matrix(v[0], v[1])); },
                               {random_tensor(r, {b, dim(r), k}), random_tensor(r, {b, dim(r), k})});
                 }});
    return c;
}

std::vector<std::pair<std::string, Check>> loss_checks() {
    using namespace losses;
    std::vector<std::pair<std::string, Check>> c;
    auto one = [](Rng& r, std::function<Var(Var, std::size_t, Rng&)> make) {
        const auto n = dim(r, 2, 8);
        auto z = random_tensor(r, {n}, -2, 2);
        // Every probe replays the same label draw.
        auto state = r();
        return fd(
            [&](Graph&, std::span<const Var> v) {
                Rng local(state);
                return make(v[0], n, local);
            },
            {z});
    };
    c.push_back({"loss/distillation", [one](Rng& r) {
                     return one(r, [](Var z, std::size_t n, Rng& l) {
                         auto p = random_tensor(l, {n}, 0.0, 1.0).values;
                         return distillation_loss(z, p);
                     });
                 }});
    c.push_back({"loss/sorting", [one](Rng& r) {
                     return one(r, [](Var z, std::size_t n, Rng& l) { return sorting_loss(z, labels(l, n, 3), 0.7, 2.0); });
                 }});
    c.push_back({"loss/rankmax", [one](Rng& r) {
                     return one(r, [](Var z, std::size_t n, Rng& l) {
                         auto y = labels(l, n, 1);
                         y[0] = 1;
                         return rankmax_loss(z, y);
                     });
                 }});
    c.push_back({"loss/am_rankmax", [one](Rng& r) {
                     return one(r, [](Var z, std::size_t n, Rng& l) {
                         auto y = labels(l, n, 3);
                         y[0] = std::max(y[0], 1.0);
                         return am_rankmax_loss(z, y, MarginParams{});
                     });
                 }});
    c.push_back({"loss/am_rankmax_scaled_margin", [one](Rng& r) {
                     return one(r, [](Var z, std::size_t n, Rng& l) {
                         auto y = labels(l, n, 3);
                         y[0] = std::max(y[0], 1.0);
                         return am_rankmax_loss(z, y, MarginParams{2.0, MarginMetric::scaled_power, 0.5, 2.0});
                     });
                 }});
    c.push_back({"loss/listwise_softmax", [one](Rng& r) {
                     return one(r, [](Var z, std::size_t n, Rng& l) { return listwise_softmax_loss(z, labels(l, n, 3)); });
                 }});
    c.push_back({"loss/pairwise_logistic", [one](Rng& r) {
                     return one(r, [](Var z, std::size_t n, Rng& l) { return pairwise_logistic_loss(z, labels(l, n, 3)); });
                 }});
    c.push_back({"loss/weighted_logloss", [one](Rng& r) {
                     return one(r, [](Var z, std::size_t n, Rng& l) {
                         auto t = random_tensor(l, {n}, 0.0, 1.0).values;
                         auto w = random_tensor(l, {n}, 0.5, 2.0).values;
                         return weighted_logloss(z, t, w);
                     });
                 }});
    c.push_back({"loss/hybrid_6_items", [](Rng& r) {
                     ListScores group;
                     group.y = labels(r, 6, 3);
                     group.y[0] = std::max(group.y[0], 1.0);
                     group.stage = {features::Stage::impression, features::Stage::impression, features::Stage::candidate,
                                    features::Stage::candidate,  features::Stage::random,     features::Stage::random};
                     auto p = random_tensor(r, {2}, 0.05, 1.0).values;
                     group.teacher = {p[0], p[1], std::nullopt, std::nullopt, std::nullopt, std::nullopt};
                     return fd(
                         [&](Graph&, std::span<const Var> v) {
                             group.z = v[0];
                             return hybrid_loss(group, HybridWeights{});
                         },
                         {random_tensor(r, {6}, -2, 2)});
                 }});
    return c;
}

std::vector<std::pair<std::string, Check>> model_checks() {
    std::vector<std::pair<std::string, Check>> c;
    c.push_back({"model/gated_tower", [](Rng& r) {
                     ParameterSet params;
                     const auto in = dim(r, 2, 6);
                     towers::TowerConfig cfg{dim(r, 1, 3), dim(r, 1, 4), {dim(r, 2, 6)}, 2};
                     auto tower = towers::GatedTower::create(params, "t", in, cfg, r);
                     auto x = random_tensor(r, {2, in});
                     // The gate reads a detached copy of x, so x stays constant here.
                     return fd_params(params, {}, [&](Binding& b, std::span<const Var>) {
                         return probe(tower.forward(b, b.graph().constant(x)));
                     });
                 }});
    c.push_back({"model/gau", [](Rng& r) {
                     ParameterSet params;
                     const auto k = dim(r, 1, 4);
                     auto gau = interaction::GAU::create(params, "g", k, diff::Activation::silu, r);
                     auto q = random_tensor(r, {2, dim(r, 1, 3), k});
                     auto kv = random_tensor(r, {2, dim(r, 1, 3), k});
                     return fd_params(params, {q, kv}, [&](Binding& b, std::span<const Var> v) {
                         return probe(gau.forward(b, v[0], v[1]).out);
                     });
                 }});
    c.push_back({"model/cross_attention", [](Rng& r) {
                     ParameterSet params;
                     const auto k = dim(r, 2, 4);
                     auto cross = interaction::CrossAttention::create(params, {k, 1, diff::Activation::silu, 1e-5}, r);
                     auto u = random_tensor(r, {2, dim(r, 1, 3), k});
                     auto i = random_tensor(r, {2, dim(r, 1, 3), k});
                     return fd_params(params, {u, i}, [&](Binding& b, std::span<const Var> v) {
                         auto out = cross.forward(b, v[0], v[1]);
                         return diff::add(probe(out.user), probe(out.item));
                     });
                 }});
    c.push_back({"model/maxsim", [](Rng& r) {
                     ParameterSet params;
                     auto head = interaction::MaxSimHead::create(params, std::uniform_real_distribution<double>(0.5, 2.0)(r));
                     const auto k = dim(r, 2, 6);
                     auto u = random_tensor(r, {2, dim(r, 1, 4), k});
                     auto i = random_tensor(r, {2, dim(r, 1, 4), k});
                     return fd_params(params, {u, i}, [&](Binding& b, std::span<const Var> v) {
                         return probe(head.score(b, v[0], v[1]));
                     });
                 }});
    return c;
}

} // namespace

std::vector<GradRow> gradient_suite(std::size_t seeds, double tolerance) {
    std::vector<std::pair<std::string, Check>> all = op_checks();
    for (auto& c : loss_checks()) all.push_back(std::move(c));
    for (auto& c : model_checks()) all.push_back(std::move(c));
    std::vector<GradRow> rows;
    for (std::size_t c = 0; c < all.size(); ++c) {
        GradRow row{all[c].first, seeds, 0.0, false};
        for (std::size_t s = 0; s < seeds; ++s) {
            Rng rng(1000 * (c + 1) + s);
            row.max_rel_error = std::max(row.max_rel_error, all[c].second(rng));
        }
        row.pass = row.max_rel_error < tolerance;
        rows.push_back(row);
    }
    return rows;
}

std::vector<PinRow> loss_pins(double tolerance) {
    using namespace losses;
    auto eval = [](std::vector<double> z, const std::function<Var(Var)>& f) {
        Graph g(false);
        return f(g.constant(Tensor::vector(std::move(z)))).item();
    };
    std::vector<PinRow> rows;
    auto add = [&](std::string name, double value, double expected) {
        rows.push_back({std::move(name), value, expected, std::abs(value - expected) <= tolerance});
    };
    const std::vector<double> y10{1, 0};
    add("rankmax n=2 z=[0,0] y=[1,0]", eval({0, 0}, [&](Var z) { return rankmax_loss(z, y10); }), std::log(2.0));
    add("rankmax saturated", eval({3, 0}, [&](Var z) { return rankmax_loss(z, y10); }), 0.0);
    const std::vector<double> y3{2, 1, 0};
    add("am_rankmax zero floor y=[2,1,0] z=[5,3,0]",
        eval({5, 3, 0}, [&](Var z) { return am_rankmax_loss(z, y3, MarginParams{1.0}); }), 0.0);
    add("am_rankmax alpha=0 y=[1,0] z=[0,0]",
        eval({0, 0}, [&](Var z) { return am_rankmax_loss(z, y10, MarginParams{0.0}); }), std::log(2.0));
    const std::vector<double> y4{3, 1, 0, 0};
    add("am_rankmax y=[3,1,0,0] alpha=3", eval({0.5, 0.2, 0.4, -1}, [&](Var z) { return am_rankmax_loss(z, y4, MarginParams{}); }),
        4.1713056033582294);
    const std::vector<double> p{0.75, 0.25};
    add("distillation p=[0.75,0.25] z=[0,0]", eval({0, 0}, [&](Var z) { return distillation_loss(z, p); }), std::log(2.0));
    const std::vector<double> u4(4, 0.3);
    add("distillation uniform n=4", eval({1, 1, 1, 1}, [&](Var z) { return distillation_loss(z, u4); }), std::log(4.0));
    add("sorting y=[2,1,0] z=[0,1,2]", eval({0, 1, 2}, [&](Var z) { return sorting_loss(z, y3, 1.0, 2.0); }),
        7.9304224434373953);
    const std::vector<double> s{2, 1, 3};
    add("softsort [2,1,3] row 1 col 3", softsort(s, 1.0, 2.0).at(0, 2), 0.7213991842739687);
    add("margin y_i=0 y_j=2", adaptive_margin(0, 2, MarginParams{}), 4.0);
    add("margin y_i=1 y_j=2", adaptive_margin(1, 2, MarginParams{}), 1.0);
    add("margin scaled_power beta=0.5 p=2 alpha=2",
        adaptive_margin(0, 2, MarginParams{2.0, MarginMetric::scaled_power, 0.5, 2.0}), 4.0);
    const std::vector<metrics::ItemId> ranked{2, 1};
    add("ndcg {a:1,b:0} ranking [b,a] K=2", metrics::ndcg_at_k(ranked, {{1, 1.0}, {2, 0.0}}, 2), 0.6309297535714575);
    const std::vector<metrics::ItemId> top{1, 3};
    add("recall relevant {a,b} top-2 [a,c]", *metrics::recall_at_k(top, {1, 2}, 2), 0.5);
    return rows;
}

std::string format_grad_table(const std::vector<GradRow>& rows) {
    std::ostringstream out;
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-32s %6s %14s  %s\n", "check", "seeds", "max_rel_error", "status");
    out << buf;
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%-32s %6zu %14.3e  %s\n", r.name.c_str(), r.seeds, r.max_rel_error,
                      r.pass ? "PASS" : "FAIL");
        out << buf;
    }
    return out.str();
}

std::string format_pin_table(const std::vector<PinRow>& rows) {
    std::ostringstream out;
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-44s %22s %22s  %s\n", "instance", "value", "expected", "status");
    out << buf;
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%-44s %22.17g %22.17g  %s\n", r.name.c_str(), r.value, r.expected,
                      r.pass ? "PASS" : "FAIL");
        out << buf;
    }
    return out.str();
}

} // namespace ranktower::checks
