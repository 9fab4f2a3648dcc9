#include "ranktower/diff/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>

#include "ranktower/errors.hpp"

namespace ranktower::diff {
namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using MutMap = Eigen::Map<RowMajor>;

bool wants_grad(Graph& g, Var v) { return g.requires_grad(v.id()); }

void require_same_shape(Var a, Var b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shapes " + shape_to_string(a.shape()) + " and " +
                             shape_to_string(b.shape()) + " differ");
    }
}

void require_same_graph(Var a, Var b) {
    if (&a.graph() != &b.graph()) throw std::logic_error("operands recorded on different graphs");
}

Shape drop_last(const Shape& s) {
    if (s.size() <= 1) return {1};
    return Shape(s.begin(), s.end() - 1);
}

double stable_sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// Elementwise unary op given forward f(x) and derivative df(x, y).
template <class F, class DF>
Var unary(Var x, F f, DF df) {
    auto& g = x.graph();
    auto xv = x.values();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
    return g.emit(x.shape(), std::move(out), {x}, [x, df](Graph& g, std::uint32_t self) {
        auto xv = x.values();
        auto y = g.value(self);
        auto gy = g.grad_span(self);
        auto gx = g.grad_accumulator(x.id());
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * df(xv[i], y[i]);
    });
}

} // namespace

Var add(Var a, Var b) {
    require_same_graph(a, b);
    require_same_shape(a, b, "add");
    auto av = a.values(), bv = b.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    return a.graph().emit(a.shape(), std::move(out), {a, b}, [a, b](Graph& g, std::uint32_t self) {
        auto gy = g.grad_span(self);
        for (Var v : {a, b}) {
            if (!wants_grad(g, v)) continue;
            auto gv = g.grad_accumulator(v.id());
            for (std::size_t i = 0; i < gv.size(); ++i) gv[i] += gy[i];
        }
    });
}

Var sub(Var a, Var b) {
    require_same_graph(a, b);
    require_same_shape(a, b, "sub");
    auto av = a.values(), bv = b.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
    return a.graph().emit(a.shape(), std::move(out), {a, b}, [a, b](Graph& g, std::uint32_t self) {
        auto gy = g.grad_span(self);
        if (wants_grad(g, a)) {
            auto ga = g.grad_accumulator(a.id());
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gy[i];
        }
        if (wants_grad(g, b)) {
            auto gb = g.grad_accumulator(b.id());
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= gy[i];
        }
    });
}

Var mul(Var a, Var b) {
    require_same_graph(a, b);
    require_same_shape(a, b, "mul");
    auto av = a.values(), bv = b.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    return a.graph().emit(a.shape(), std::move(out), {a, b}, [a, b](Graph& g, std::uint32_t self) {
        auto gy = g.grad_span(self);
        auto av = a.values(), bv = b.values();
        if (wants_grad(g, a)) {
            auto ga = g.grad_accumulator(a.id());
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gy[i] * bv[i];
        }
        if (wants_grad(g, b)) {
            auto gb = g.grad_accumulator(b.id());
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += gy[i] * av[i];
        }
    });
}

Var scale(Var x, double c) {
    return unary(x, [c](double v) { return c * v; }, [c](double, double) { return c; });
}

Var add_scalar(Var x, double c) {
    return unary(x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

Var sigmoid(Var x) {
    return unary(x, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Var silu(Var x) {
    return unary(
        x, [](double v) { return v * stable_sigmoid(v); },
        [](double v, double) {
            const double s = stable_sigmoid(v);
            return s * (1.0 + v * (1.0 - s));
        });
}

Var relu(Var x) {
    return unary(x, [](double v) { return v > 0 ? v : 0.0; }, [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Var exp(Var x) {
    return unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var log(Var x) {
    return unary(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Var softplus(Var x) {
    return unary(
        x, [](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); },
        [](double v, double) { return stable_sigmoid(v); });
}

Var abs_pow(Var x, double power) {
    if (power <= 0) throw ConfigError("abs_pow: power must be positive");
    if (power == 2.0) {
        return unary(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
    }
    return unary(
        x, [power](double v) { return std::pow(std::abs(v), power); },
        [power](double v, double) {
            if (v == 0.0) return 0.0;
            const double mag = power * std::pow(std::abs(v), power - 1.0);
            return v > 0 ? mag : -mag;
        });
}

Var activate(Var x, Activation act) { return act == Activation::silu ? silu(x) : relu(x); }

std::string to_string(Activation act) { return act == Activation::silu ? "silu" : "relu"; }

Activation activation_from_string(const std::string& s) {
    if (s == "silu") return Activation::silu;
    if (s == "relu") return Activation::relu;
    throw ConfigError("unknown activation '" + s + "' (expected silu or relu)");
}

Var add_bias(Var x, Var bias) {
    require_same_graph(x, bias);
    const auto n = x.last_dim();
    if (bias.size() != n) {
        throw DimensionError("add_bias: bias of size " + std::to_string(bias.size()) + " for rows of " +
                             std::to_string(n));
    }
    auto xv = x.values(), bv = bias.values();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] + bv[i % n];
    return x.graph().emit(x.shape(), std::move(out), {x, bias}, [x, bias, n](Graph& g, std::uint32_t self) {
        auto gy = g.grad_span(self);
        if (wants_grad(g, x)) {
            auto gx = g.grad_accumulator(x.id());
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i];
        }
        if (wants_grad(g, bias)) {
            auto gb = g.grad_accumulator(bias.id());
            for (std::size_t i = 0; i < gy.size(); ++i) gb[i % n] += gy[i];
        }
    });
}

Var mul_scalar(Var x, Var s) {
    require_same_graph(x, s);
    if (s.size() != 1) throw DimensionError("mul_scalar: multiplier must hold one value");
    const double c = s.item();
    auto xv = x.values();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * c;
    return x.graph().emit(x.shape(), std::move(out), {x, s}, [x, s](Graph& g, std::uint32_t self) {
        auto gy = g.grad_span(self);
        auto xv = x.values();
        const double c = s.item();
        if (wants_grad(g, x)) {
            auto gx = g.grad_accumulator(x.id());
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * c;
        }
        if (wants_grad(g, s)) {
            double acc = 0.0;
            for (std::size_t i = 0; i < gy.size(); ++i) acc += gy[i] * xv[i];
            g.grad_accumulator(s.id())[0] += acc;
        }
    });
}

Var broadcast_batch(Var x, std::size_t batch) {
    if (batch == 0) throw DimensionError("broadcast_batch: batch must be positive");
    auto xv = x.values();
    const auto n = xv.size();
    std::vector<double> out;
    out.reserve(n * batch);
    for (std::size_t b = 0; b < batch; ++b) out.insert(out.end(), xv.begin(), xv.end());
    Shape shape{batch};
    shape.insert(shape.end(), x.shape().begin(), x.shape().end());
    return x.graph().emit(std::move(shape), std::move(out), {x}, [x, n, batch](Graph& g, std::uint32_t self) {
        auto gy = g.grad_span(self);
        auto gx = g.grad_accumulator(x.id());
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t i = 0; i < n; ++i) gx[i] += gy[b * n + i];
    });
}

Var reshape(Var x, Shape shape) {
    if (shape_size(shape) != x.size()) {
        throw DimensionError("reshape: " + shape_to_string(x.shape()) + " -> " + shape_to_string(shape));
    }
    auto xv = x.values();
    return x.graph().emit(std::move(shape), std::vector<double>(xv.begin(), xv.end()), {x},
                          [x](Graph& g, std::uint32_t self) {
                              auto gy = g.grad_span(self);
                              auto gx = g.grad_accumulator(x.id());
                              for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i];
                          });
}

Var concat_last(std::span<const Var> parts) {
    if (parts.empty()) throw DimensionError("concat_last: no inputs");
    const auto rows = parts[0].size() / parts[0].last_dim();
    const Shape lead = drop_last(parts[0].shape());
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (const auto& p : parts) {
        require_same_graph(parts[0], p);
        if (p.size() / p.last_dim() != rows || (p.shape().size() > 1 && drop_last(p.shape()) != lead) ||
            p.shape().size() != parts[0].shape().size()) {
            throw DimensionError("concat_last: leading dimensions differ (" + shape_to_string(parts[0].shape()) +
                                 " vs " + shape_to_string(p.shape()) + ")");
        }
        widths.push_back(p.last_dim());
        total += p.last_dim();
    }
    std::vector<double> out(rows * total);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        auto pv = parts[k].values();
        for (std::size_t r = 0; r < rows; ++r)
            std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(r * widths[k]), widths[k],
                        out.begin() + static_cast<std::ptrdiff_t>(r * total + offset));
        offset += widths[k];
    }
    Shape shape = parts[0].shape();
    shape.back() = total;
    std::vector<Var> inputs(parts.begin(), parts.end());
    return parts[0].graph().emit(
        std::move(shape), std::move(out), inputs,
        [inputs, widths, rows, total](Graph& g, std::uint32_t self) {
            auto gy = g.grad_span(self);
            std::size_t offset = 0;
            for (std::size_t k = 0; k < inputs.size(); ++k) {
                if (wants_grad(g, inputs[k])) {
                    auto gx = g.grad_accumulator(inputs[k].id());
                    for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t c = 0; c < widths[k]; ++c) gx[r * widths[k] + c] += gy[r * total + offset + c];
                }
                offset += widths[k];
            }
        });
}

Var gather_rows(Var table, std::span<const std::size_t> rows) {
    if (table.shape().size() != 2) throw DimensionError("gather_rows: table must be 2-D");
    if (rows.empty()) throw DimensionError("gather_rows: no indices");
    const auto n_rows = table.shape()[0];
    const auto d = table.shape()[1];
    auto tv = table.values();
    std::vector<double> out(rows.size() * d);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= n_rows) {
            throw DimensionError("gather_rows: index " + std::to_string(rows[i]) + " outside table of " +
                                 std::to_string(n_rows) + " rows");
        }
        std::copy_n(tv.begin() + static_cast<std::ptrdiff_t>(rows[i] * d), d,
                    out.begin() + static_cast<std::ptrdiff_t>(i * d));
    }
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    return table.graph().emit({rows.size(), d}, std::move(out), {table}, [table, idx, d](Graph& g, std::uint32_t self) {
        auto gy = g.grad_span(self);
        auto gt = g.grad_accumulator(table.id());
        for (std::size_t i = 0; i < idx.size(); ++i)
            for (std::size_t c = 0; c < d; ++c) gt[idx[i] * d + c] += gy[i * d + c];
    });
}

Var select(Var x, std::span<const std::size_t> indices) {
    return reshape(gather_rows(reshape(x, {x.size(), 1}), indices), {indices.size()});
}

Var stop_gradient(Var x) {
    auto xv = x.values();
    return x.graph().constant(Tensor(x.shape(), std::vector<double>(xv.begin(), xv.end())));
}

Var matmul(Var a, Var b) {
    require_same_graph(a, b);
    if (b.shape().size() != 2) throw DimensionError("matmul: right operand must be 2-D, got " + shape_to_string(b.shape()));
    if (a.shape().size() < 2) throw DimensionError("matmul: left operand must be at least 2-D");
    const auto n = b.shape()[0], p = b.shape()[1];
    if (a.last_dim() != n) {
        throw DimensionError("matmul: inner dimensions " + shape_to_string(a.shape()) + " x " +
                             shape_to_string(b.shape()));
    }
    const auto m = a.size() / n;
    std::vector<double> out(m * p);
    MutMap(out.data(), m, p).noalias() = ConstMap(a.values().data(), m, n) * ConstMap(b.values().data(), n, p);
    Shape shape = a.shape();
    shape.back() = p;
    return a.graph().emit(std::move(shape), std::move(out), {a, b}, [a, b, m, n, p](Graph& g, std::uint32_t self) {
        ConstMap gy(g.grad_span(self).data(), m, p);
        if (wants_grad(g, a)) {
            MutMap(g.grad_accumulator(a.id()).data(), m, n).noalias() += gy * ConstMap(b.values().data(), n, p).transpose();
        }
        if (wants_grad(g, b)) {
            MutMap(g.grad_accumulator(b.id()).data(), n, p).noalias() += ConstMap(a.values().data(), m, n).transpose() * gy;
        }
    });
}

Var bmm(Var a, Var b, bool transpose_b) {
    require_same_graph(a, b);
    if (a.shape().size() != 3 || b.shape().size() != 3) {
        throw DimensionError("bmm: operands must be 3-D, got " + shape_to_string(a.shape()) + " and " +
                             shape_to_string(b.shape()));
    }
    const auto batch = a.shape()[0], m = a.shape()[1], n = a.shape()[2];
    const auto bn = transpose_b ? b.shape()[2] : b.shape()[1];
    const auto p = transpose_b ? b.shape()[1] : b.shape()[2];
    if (b.shape()[0] != batch || bn != n) {
        throw DimensionError("bmm: incompatible " + shape_to_string(a.shape()) + " x " + shape_to_string(b.shape()) +
                             (transpose_b ? "^T" : ""));
    }
    auto av = a.values(), bv = b.values();
    std::vector<double> out(batch * m * p);
    for (std::size_t i = 0; i < batch; ++i) {
        ConstMap ai(av.data() + i * m * n, m, n);
        MutMap oi(out.data() + i * m * p, m, p);
        if (transpose_b)
            oi.noalias() = ai * ConstMap(bv.data() + i * p * n, p, n).transpose();
        else
            oi.noalias() = ai * ConstMap(bv.data() + i * n * p, n, p);
    }
    return a.graph().emit({batch, m, p}, std::move(out), {a, b},
                          [a, b, batch, m, n, p, transpose_b](Graph& g, std::uint32_t self) {
                              auto gy = g.grad_span(self);
                              auto av = a.values(), bv = b.values();
                              const bool ga_on = wants_grad(g, a), gb_on = wants_grad(g, b);
                              std::span<double> ga, gb;
                              if (ga_on) ga = g.grad_accumulator(a.id());
                              if (gb_on) gb = g.grad_accumulator(b.id());
                              for (std::size_t i = 0; i < batch; ++i) {
                                  ConstMap gyi(gy.data() + i * m * p, m, p);
                                  ConstMap ai(av.data() + i * m * n, m, n);
                                  if (transpose_b) {
                                      ConstMap bi(bv.data() + i * p * n, p, n);
                                      if (ga_on) MutMap(ga.data() + i * m * n, m, n).noalias() += gyi * bi;
                                      if (gb_on) MutMap(gb.data() + i * p * n, p, n).noalias() += gyi.transpose() * ai;
                                  } else {
                                      ConstMap bi(bv.data() + i * n * p, n, p);
                                      if (ga_on) MutMap(ga.data() + i * m * n, m, n).noalias() += gyi * bi.transpose();
                                      if (gb_on) MutMap(gb.data() + i * n * p, n, p).noalias() += ai.transpose() * gyi;
                                  }
                              }
                          });
}

Var sum(Var x) {
    double acc = 0.0;
    for (double v : x.values()) acc += v;
    return x.graph().emit({1}, {acc}, {x}, [x](Graph& g, std::uint32_t self) {
        const double gy = g.grad_span(self)[0];
        for (auto& gx : g.grad_accumulator(x.id())) gx += gy;
    });
}

Var sum_last(Var x) {
    const auto n = x.last_dim();
    const auto rows = x.size() / n;
    auto xv = x.values();
    std::vector<double> out(rows, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < n; ++c) out[r] += xv[r * n + c];
    return x.graph().emit(drop_last(x.shape()), std::move(out), {x}, [x, n, rows](Graph& g, std::uint32_t self) {
        auto gy = g.grad_span(self);
        auto gx = g.grad_accumulator(x.id());
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < n; ++c) gx[r * n + c] += gy[r];
    });
}

MaxResult reduce_max_last(Var x) {
    const auto n = x.last_dim();
    const auto rows = x.size() / n;
    auto xv = x.values();
    std::vector<double> out(rows);
    std::vector<std::size_t> arg(rows, 0);
    for (std::size_t r = 0; r < rows; ++r) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < n; ++c)
            if (xv[r * n + c] > xv[r * n + best]) best = c;
        arg[r] = best;
        out[r] = xv[r * n + best];
    }
    Var value = x.graph().emit(drop_last(x.shape()), std::move(out), {x}, [x, n, arg](Graph& g, std::uint32_t self) {
        auto gy = g.grad_span(self);
        auto gx = g.grad_accumulator(x.id());
        for (std::size_t r = 0; r < arg.size(); ++r) gx[r * n + arg[r]] += gy[r];
    });
    return {value, std::move(arg)};
}

Var row_softmax(Var x) {
    const auto n = x.last_dim();
    const auto rows = x.size() / n;
    auto xv = x.values();
    std::vector<double> out(xv.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = xv.data() + r * n;
        double* o = out.data() + r * n;
        const double mx = *std::max_element(in, in + n);
        double z = 0.0;
        for (std::size_t c = 0; c < n; ++c) z += (o[c] = std::exp(in[c] - mx));
        for (std::size_t c = 0; c < n; ++c) o[c] /= z;
    }
    return x.graph().emit(x.shape(), std::move(out), {x}, [x, n, rows](Graph& g, std::uint32_t self) {
        auto y = g.value(self);
        auto gy = g.grad_span(self);
        auto gx = g.grad_accumulator(x.id());
        for (std::size_t r = 0; r < rows; ++r) {
            double dot = 0.0;
            for (std::size_t c = 0; c < n; ++c) dot += gy[r * n + c] * y[r * n + c];
            for (std::size_t c = 0; c < n; ++c) gx[r * n + c] += y[r * n + c] * (gy[r * n + c] - dot);
        }
    });
}

Var log_softmax(Var x) {
    const auto n = x.last_dim();
    const auto rows = x.size() / n;
    auto xv = x.values();
    std::vector<double> out(xv.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = xv.data() + r * n;
        const double mx = *std::max_element(in, in + n);
        double z = 0.0;
        for (std::size_t c = 0; c < n; ++c) z += std::exp(in[c] - mx);
        const double lse = mx + std::log(z);
        for (std::size_t c = 0; c < n; ++c) out[r * n + c] = in[c] - lse;
    }
    return x.graph().emit(x.shape(), std::move(out), {x}, [x, n, rows](Graph& g, std::uint32_t self) {
        auto y = g.value(self);
        auto gy = g.grad_span(self);
        auto gx = g.grad_accumulator(x.id());
        for (std::size_t r = 0; r < rows; ++r) {
            double total = 0.0;
            for (std::size_t c = 0; c < n; ++c) total += gy[r * n + c];
            for (std::size_t c = 0; c < n; ++c) gx[r * n + c] += gy[r * n + c] - std::exp(y[r * n + c]) * total;
        }
    });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
    require_same_graph(x, gain);
    require_same_graph(x, bias);
    const auto n = x.last_dim();
    if (gain.size() != n || bias.size() != n) {
        throw DimensionError("layer_norm: gain/bias must match row width " + std::to_string(n));
    }
    const auto rows = x.size() / n;
    auto xv = x.values(), gv = gain.values(), bv = bias.values();
    std::vector<double> out(xv.size()), xhat(xv.size()), inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = xv.data() + r * n;
        double mean = 0.0;
        for (std::size_t c = 0; c < n; ++c) mean += in[c];
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t c = 0; c < n; ++c) var += (in[c] - mean) * (in[c] - mean);
        var /= static_cast<double>(n);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t c = 0; c < n; ++c) {
            xhat[r * n + c] = (in[c] - mean) * inv_std[r];
            out[r * n + c] = xhat[r * n + c] * gv[c] + bv[c];
        }
    }
    return x.graph().emit(
        x.shape(), std::move(out), {x, gain, bias},
        [x, gain, bias, n, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](Graph& g, std::uint32_t self) {
            auto gy = g.grad_span(self);
            auto gv = gain.values();
            if (wants_grad(g, gain)) {
                auto gg = g.grad_accumulator(gain.id());
                for (std::size_t i = 0; i < gy.size(); ++i) gg[i % n] += gy[i] * xhat[i];
            }
            if (wants_grad(g, bias)) {
                auto gb = g.grad_accumulator(bias.id());
                for (std::size_t i = 0; i < gy.size(); ++i) gb[i % n] += gy[i];
            }
            if (wants_grad(g, x)) {
                auto gx = g.grad_accumulator(x.id());
                std::vector<double> dxhat(n);
                for (std::size_t r = 0; r < rows; ++r) {
                    double mean_d = 0.0, mean_dx = 0.0;
                    for (std::size_t c = 0; c < n; ++c) {
                        dxhat[c] = gy[r * n + c] * gv[c];
                        mean_d += dxhat[c];
                        mean_dx += dxhat[c] * xhat[r * n + c];
                    }
                    mean_d /= static_cast<double>(n);
                    mean_dx /= static_cast<double>(n);
                    for (std::size_t c = 0; c < n; ++c)
                        gx[r * n + c] += inv_std[r] * (dxhat[c] - mean_d - xhat[r * n + c] * mean_dx);
                }
            }
        });
}

Var l2_normalize_last(Var x, double eps) {
    const auto n = x.last_dim();
    const auto rows = x.size() / n;
    auto xv = x.values();
    std::vector<double> out(xv.size()), norms(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        double sq = 0.0;
        for (std::size_t c = 0; c < n; ++c) sq += xv[r * n + c] * xv[r * n + c];
        norms[r] = std::sqrt(sq);
        const double denom = std::max(norms[r], eps);
        for (std::size_t c = 0; c < n; ++c) out[r * n + c] = xv[r * n + c] / denom;
    }
    return x.graph().emit(x.shape(), std::move(out), {x}, [x, n, rows, eps, norms = std::move(norms)](Graph& g, std::uint32_t self) {
        auto y = g.value(self);
        auto gy = g.grad_span(self);
        auto gx = g.grad_accumulator(x.id());
        for (std::size_t r = 0; r < rows; ++r) {
            if (norms[r] > eps) {
                double dot = 0.0;
                for (std::size_t c = 0; c < n; ++c) dot += gy[r * n + c] * y[r * n + c];
                for (std::size_t c = 0; c < n; ++c) gx[r * n + c] += (gy[r * n + c] - y[r * n + c] * dot) / norms[r];
            } else {
                for (std::size_t c = 0; c < n; ++c) gx[r * n + c] += gy[r * n + c] / eps;
            }
        }
    });
}

Var outer_sub(Var a, Var b) {
    require_same_graph(a, b);
    const auto m = a.size(), n = b.size();
    auto av = a.values(), bv = b.values();
    std::vector<double> out(m * n);
    for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) out[r * n + c] = av[r] - bv[c];
    return a.graph().emit({m, n}, std::move(out), {a, b}, [a, b, m, n](Graph& g, std::uint32_t self) {
        auto gy = g.grad_span(self);
        if (wants_grad(g, a)) {
            auto ga = g.grad_accumulator(a.id());
            for (std::size_t r = 0; r < m; ++r)
                for (std::size_t c = 0; c < n; ++c) ga[r] += gy[r * n + c];
        }
        if (wants_grad(g, b)) {
            auto gb = g.grad_accumulator(b.id());
            for (std::size_t r = 0; r < m; ++r)
                for (std::size_t c = 0; c < n; ++c) gb[c] -= gy[r * n + c];
        }
    });
}

Var cosine_similarity(Var a, Var b, double eps) {
    require_same_shape(a, b, "cosine_similarity");
    return sum_last(mul(l2_normalize_last(a, eps), l2_normalize_last(b, eps)));
}

Var cosine_matrix(Var a, Var b, double eps) {
    if (a.shape().size() != 3 || b.shape().size() != 3 || a.shape()[0] != b.shape()[0] || a.shape()[2] != b.shape()[2]) {
        throw DimensionError("cosine_matrix: expected (B,m,k) and (B,n,k), got " + shape_to_string(a.shape()) + " and " +
                             shape_to_string(b.shape()));
    }
    return bmm(l2_normalize_last(a, eps), l2_normalize_last(b, eps), true);
}

} // namespace ranktower::diff
