#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>

#include "doctest.h"
#include "ranktower/diff/gradcheck.hpp"
#include "ranktower/errors.hpp"
#include "ranktower/losses.hpp"
#include "test_util.hpp"

using namespace ranktower;
using namespace ranktower::losses;
using diff::Graph;
using diff::Tensor;
using diff::Var;

namespace {

std::vector<double> random_values(std::mt19937_64& rng, std::size_t n, double lo = -2.0, double hi = 2.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> v(n);
    for (auto& x : v) x = dist(rng);
    return v;
}

std::vector<double> random_labels(std::mt19937_64& rng, std::size_t n, int max_label) {
    std::uniform_int_distribution<int> dist(0, max_label);
    std::vector<double> y(n);
    for (auto& x : y) x = dist(rng);
    return y;
}

double eval(const std::vector<double>& z, const std::function<Var(Var)>& f) {
    Graph g(false);
    return f(g.constant(Tensor::vector(z))).item();
}

double gradcheck(const std::vector<double>& z, const std::function<Var(Var)>& f) {
    return diff::finite_difference_check([&](Graph&, std::span<const Var> v) { return f(v[0]); },
                                         {Tensor::vector(z)})
        .max_rel_error;
}

} // namespace

TEST_CASE("softsort pinned row and degenerate limits") {
    std::vector<double> s{2, 1, 3};
    auto p = softsort(s, 1.0, 2.0);
    CHECK(p.at(0, 0) == doctest::Approx(0.26538792877224193).epsilon(1e-12));
    CHECK(p.at(0, 1) == doctest::Approx(0.013212886953789414).epsilon(1e-12));
    CHECK(p.at(0, 2) == doctest::Approx(0.7213991842739687).epsilon(1e-12));

    std::vector<double> desc{3, 2, 1};
    auto id = softsort(desc, 1e-3, 2.0);
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t c = 0; c < 3; ++c) CHECK(std::abs(id.at(r, c) - (r == c ? 1.0 : 0.0)) < 1e-12);

    std::vector<double> swap{1, 3};
    auto sw = softsort(swap, 1e-3, 2.0);
    CHECK(sw.at(0, 1) == doctest::Approx(1.0));
    CHECK(sw.at(1, 0) == doctest::Approx(1.0));

    CHECK_THROWS_AS(softsort(s, 0.0, 2.0), ConfigError);
    CHECK_THROWS_AS(softsort(s, -1.0, 2.0), ConfigError);
}

TEST_CASE("softsort rows are stochastic, shift invariant and unimodal") {
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 100; ++trial) {
        const auto n = testutil::random_dim(rng, 1, 8);
        auto s = random_values(rng, n);
        auto p = softsort(s, 0.5, 2.0);
        const double c = std::uniform_real_distribution<double>(-5, 5)(rng);
        auto shifted = s;
        for (auto& x : shifted) x += c;
        auto q = softsort(shifted, 0.5, 2.0);
        auto order = descending_order(s);
        for (std::size_t r = 0; r < n; ++r) {
            double sum = 0;
            for (std::size_t col = 0; col < n; ++col) {
                sum += p.at(r, col);
                CHECK(p.at(r, col) >= 0.0);
                CHECK(std::abs(p.at(r, col) - q.at(r, col)) < 1e-12);
            }
            CHECK(std::abs(sum - 1.0) < 1e-9);
            // Along the sorted order the row rises to the rank-r element and falls after it.
            for (std::size_t t = 0; t + 1 < n; ++t) {
                const double a = p.at(r, order[t]);
                const double b = p.at(r, order[t + 1]);
                if (t + 1 <= r) CHECK(a <= b);
                else CHECK(a >= b);
            }
        }
    }
}

TEST_CASE("softsort converges to the hard descending permutation") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 100; ++trial) {
        const auto n = testutil::random_dim(rng, 2, 8);
        auto s = random_values(rng, n);
        auto p = softsort(s, 1e-3, 2.0);
        auto order = descending_order(s);
        for (std::size_t r = 0; r < n; ++r) {
            std::size_t best = 0;
            for (std::size_t c = 1; c < n; ++c)
                if (p.at(r, c) > p.at(r, best)) best = c;
            CHECK(best == order[r]);
        }
    }
}

TEST_CASE("descending order is stable on ties") {
    std::vector<double> s{1, 2, 1, 2};
    CHECK(descending_order(s) == std::vector<std::size_t>{1, 3, 0, 2});
}

TEST_CASE("sorting loss pins and Gibbs inequality") {
    std::vector<double> y{2, 1, 0};
    auto loss = [&](std::vector<double> z) {
        return eval(z, [&](Var v) { return sorting_loss(v, y, 1.0, 2.0); });
    };
    CHECK(loss({0, 1, 2}) == doctest::Approx(7.9304224434373953).epsilon(1e-12));
    const double self = loss(y);
    CHECK(self == doctest::Approx(2.2649320648759614).epsilon(1e-12));
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        auto z = y;
        for (auto& x : z) x += std::normal_distribution<double>(0, 0.5)(rng);
        CHECK(loss(z) >= self - 1e-12);
    }
    std::vector<double> one{1};
    CHECK(eval({0.4}, [&](Var v) { return sorting_loss(v, one, 1.0, 2.0); }) == 0.0);
}

TEST_CASE("sorting loss is permutation equivariant") {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 50; ++trial) {
        const auto n = testutil::random_dim(rng, 2, 8);
        auto z = random_values(rng, n);
        auto y = random_labels(rng, n, 4);
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        std::vector<double> zp(n), yp(n);
        for (std::size_t i = 0; i < n; ++i) {
            zp[i] = z[perm[i]];
            yp[i] = y[perm[i]];
        }
        // Distinct labels keep the stable tie order from depending on the permutation.
        for (std::size_t i = 0; i < n; ++i) {
            y[i] += 1e-3 * static_cast<double>(i);
            yp[i] += 1e-3 * static_cast<double>(perm[i]);
        }
        const double a = eval(z, [&](Var v) { return sorting_loss(v, y, 1.0, 2.0); });
        const double b = eval(zp, [&](Var v) { return sorting_loss(v, yp, 1.0, 2.0); });
        CHECK(std::abs(a - b) < 1e-9);
    }
}

TEST_CASE("distillation loss examples") {
    std::vector<double> p{0.75, 0.25};
    CHECK(std::abs(eval({0, 0}, [&](Var v) { return distillation_loss(v, p); }) - std::log(2.0)) < 1e-9);
    std::vector<double> raw{0.3, 0.1};
    CHECK(std::abs(eval({0, 0}, [&](Var v) { return distillation_loss(v, raw); }) - std::log(2.0)) < 1e-9);
    for (std::size_t n = 2; n <= 6; ++n) {
        std::vector<double> u(n, 0.4);
        std::vector<double> z(n, 1.7);
        CHECK(std::abs(eval(z, [&](Var v) { return distillation_loss(v, u); }) - std::log(double(n))) < 1e-12);
    }
    std::vector<double> onehot{0, 1, 0};
    std::vector<double> z{0.2, -0.5, 1.0};
    const double lse = std::log(std::exp(0.2) + std::exp(-0.5) + std::exp(1.0));
    CHECK(eval(z, [&](Var v) { return distillation_loss(v, onehot); }) == doctest::Approx(lse + 0.5));
    std::vector<double> none{0, 0};
    CHECK(eval({1, 2}, [&](Var v) { return distillation_loss(v, none); }) == 0.0);
}

TEST_CASE("rankmax examples") {
    std::vector<double> y{1, 0};
    CHECK(std::abs(eval({0, 0}, [&](Var v) { return rankmax_loss(v, y); }) - std::log(2.0)) < 1e-9);
    CHECK(eval({3, 0}, [&](Var v) { return rankmax_loss(v, y); }) == 0.0);
    std::vector<double> single{1};
    CHECK(eval({0.7}, [&](Var v) { return rankmax_loss(v, single); }) == 0.0);
    std::vector<double> y3{1, 0, 1};
    CHECK(eval({0.3, 0.1, -0.2}, [&](Var v) { return rankmax_loss(v, y3); }) ==
          doctest::Approx(2.167910189667444).epsilon(1e-12));
    std::vector<double> negatives{0, 0};
    CHECK(eval({0.1, 0.2}, [&](Var v) { return rankmax_loss(v, negatives); }) == 0.0);
}

TEST_CASE("adaptive margin examples") {
    MarginParams m;
    CHECK(adaptive_margin(0, 2, m) == 4.0);
    CHECK(adaptive_margin(1, 2, m) == 1.0);
    MarginParams sq{2.0, MarginMetric::scaled_power, 0.5, 2.0};
    CHECK(adaptive_margin(0, 2, sq) == 4.0);
}

TEST_CASE("AM-Rankmax examples") {
    MarginParams m;
    std::vector<double> y{3, 1, 0, 0};
    CHECK(eval({0.5, 0.2, 0.4, -1}, [&](Var v) { return am_rankmax_loss(v, y, m); }) ==
          doctest::Approx(4.1713056033582294).epsilon(1e-12));

    MarginParams unit{1.0};
    std::vector<double> y3{2, 1, 0};
    CHECK(eval({5, 3, 0}, [&](Var v) { return am_rankmax_loss(v, y3, unit); }) == 0.0);

    MarginParams no_alpha{0.0};
    std::vector<double> yb{1, 0};
    CHECK(std::abs(eval({0, 0}, [&](Var v) { return am_rankmax_loss(v, yb, no_alpha); }) - std::log(2.0)) < 1e-9);

    std::vector<double> none{0, 0, 0};
    CHECK(eval({1, 2, 3}, [&](Var v) { return am_rankmax_loss(v, none, m); }) == 0.0);
}

TEST_CASE("AM-Rankmax is translation invariant and nonincreasing in top-label logits") {
    std::mt19937_64 rng(99);
    MarginParams m;
    for (int trial = 0; trial < 100; ++trial) {
        const auto n = testutil::random_dim(rng, 2, 8);
        auto z = random_values(rng, n);
        auto y = random_labels(rng, n, 3);
        auto f = [&](Var v) { return am_rankmax_loss(v, y, m); };
        const double base = eval(z, f);
        CHECK(base >= 0.0);
        auto shifted = z;
        const double c = std::uniform_real_distribution<double>(-10, 10)(rng);
        for (auto& x : shifted) x += c;
        CHECK(std::abs(eval(shifted, f) - base) < 1e-9);
        // A positive below the top label also acts as a negative for higher labels, so only top-label
        // items are monotone in general.
        const double top = *std::max_element(y.begin(), y.end());
        for (std::size_t j = 0; j < n; ++j) {
            if (y[j] <= 0 || y[j] < top) continue;
            auto up = z;
            up[j] += std::uniform_real_distribution<double>(0.0, 2.0)(rng);
            CHECK(eval(up, f) <= base + 1e-12);
        }
    }
}

TEST_CASE("hybrid loss reductions and validation") {
    std::vector<double> z{0.3, -0.1, 0.8, 0.2, -0.6, 0.0};
    ListScores group;
    group.y = {3, 1, 0, 1, 0, 0};
    group.teacher = {0.7, 0.4, 0.1, std::nullopt, std::nullopt, std::nullopt};
    group.stage = {Stage::impression, Stage::impression, Stage::impression, Stage::candidate, Stage::candidate,
                   Stage::random};
    auto run = [&](const std::vector<double>& zv, HybridWeights w) {
        Graph g(false);
        group.z = g.constant(Tensor::vector(zv));
        return hybrid_loss(group, w).item();
    };
    HybridWeights only_distill{2.0, 0.0, 0.0};
    std::vector<double> p{0.7, 0.4, 0.1};
    const double d = eval({z[0], z[1], z[2]}, [&](Var v) { return distillation_loss(v, p); });
    CHECK(run(z, only_distill) == doctest::Approx(2.0 * d).epsilon(1e-14));

    HybridWeights only_sort{0.0, 1.0, 0.0};
    std::vector<double> ys{3, 1, 0, 1, 0};
    const double s = eval({z[0], z[1], z[2], z[3], z[4]}, [&](Var v) { return sorting_loss(v, ys, 1.0, 2.0); });
    CHECK(run(z, only_sort) == doctest::Approx(s).epsilon(1e-14));

    HybridWeights only_am{0.0, 0.0, 1.0};
    const double a = eval(z, [&](Var v) { return am_rankmax_loss(v, group.y, MarginParams{}); });
    CHECK(run(z, only_am) == doctest::Approx(a).epsilon(1e-14));
    CHECK(run(z, HybridWeights{}) == doctest::Approx(d + s + a).epsilon(1e-14));

    ListScores single;
    single.y = {1};
    single.teacher = {0.5};
    single.stage = {Stage::impression};
    Graph g(false);
    single.z = g.constant(Tensor::vector({0.9}));
    CHECK(hybrid_loss(single, HybridWeights{}).item() == 0.0);

    CHECK_THROWS_AS((HybridWeights{0.0, 0.0, 0.0}.validate()), ConfigError);
    CHECK_THROWS_AS((HybridWeights{-1.0, 1.0, 1.0}.validate()), ConfigError);
    ListScores missing = group;
    missing.teacher[1] = std::nullopt;
    Graph g2(false);
    missing.z = g2.constant(Tensor::vector(z));
    CHECK_THROWS_AS(hybrid_loss(missing, HybridWeights{}), ConfigError);
}

TEST_CASE("losses pass finite-difference checks") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(seed);
        const auto n = testutil::random_dim(rng, 2, 8);
        auto z = random_values(rng, n);
        auto y = random_labels(rng, n, 3);
        y[0] = std::max(y[0], 1.0);
        auto p = random_values(rng, n, 0.0, 1.0);
        std::vector<double> binary(n);
        for (std::size_t i = 0; i < n; ++i) binary[i] = y[i] > 0 ? 1.0 : 0.0;
        MarginParams sq{2.0, MarginMetric::scaled_power, 0.5, 2.0};
        CAPTURE(seed);
        CHECK(gradcheck(z, [&](Var v) { return distillation_loss(v, p); }) < 1e-4);
        CHECK(gradcheck(z, [&](Var v) { return sorting_loss(v, y, 0.7, 2.0); }) < 1e-4);
        CHECK(gradcheck(z, [&](Var v) { return rankmax_loss(v, binary); }) < 1e-4);
        CHECK(gradcheck(z, [&](Var v) { return am_rankmax_loss(v, y, MarginParams{}); }) < 1e-4);
        CHECK(gradcheck(z, [&](Var v) { return am_rankmax_loss(v, y, sq); }) < 1e-4);
        CHECK(gradcheck(z, [&](Var v) { return listwise_softmax_loss(v, y); }) < 1e-4);
        CHECK(gradcheck(z, [&](Var v) { return pairwise_logistic_loss(v, y); }) < 1e-4);
        CHECK(gradcheck(z, [&](Var v) { return weighted_logloss(v, p, p); }) < 1e-4);
    }
}

TEST_CASE("hybrid loss passes a finite-difference check on six-item groups") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(seed + 100);
        ListScores group;
        group.y = random_labels(rng, 6, 3);
        group.y[0] = 2;
        group.stage = {Stage::impression, Stage::impression, Stage::candidate, Stage::candidate, Stage::random,
                       Stage::random};
        auto p = random_values(rng, 2, 0.05, 1.0);
        group.teacher = {p[0], p[1], std::nullopt, std::nullopt, std::nullopt, std::nullopt};
        auto z = random_values(rng, 6);
        CAPTURE(seed);
        CHECK(gradcheck(z, [&](Var v) {
                  group.z = v;
                  return hybrid_loss(group, HybridWeights{});
              }) < 1e-4);
    }
}

TEST_CASE("ablation loss examples") {
    std::vector<double> onehot{0, 2, 0};
    std::vector<double> z{0.2, -0.5, 1.0};
    const double lse = std::log(std::exp(0.2) + std::exp(-0.5) + std::exp(1.0));
    CHECK(eval(z, [&](Var v) { return listwise_softmax_loss(v, onehot); }) == doctest::Approx(lse + 0.5));
    std::vector<double> none{0, 0, 0};
    CHECK(eval(z, [&](Var v) { return listwise_softmax_loss(v, none); }) == 0.0);

    std::vector<double> pair{1, 0};
    CHECK(eval({30, 0}, [&](Var v) { return pairwise_logistic_loss(v, pair); }) < 1e-12);
    CHECK(eval({0, 0}, [&](Var v) { return pairwise_logistic_loss(v, pair); }) == doctest::Approx(std::log(2.0)));
    std::vector<double> y3{2, 1, 0};
    const double mean3 = (std::log1p(std::exp(-1.0)) * 2 + std::log1p(std::exp(-2.0))) / 3;
    CHECK(eval({2, 1, 0}, [&](Var v) { return pairwise_logistic_loss(v, y3); }) == doctest::Approx(mean3));
    CHECK(eval({1, 2}, [&](Var v) { return pairwise_logistic_loss(v, std::vector<double>{1, 1}); }) == 0.0);

    std::vector<double> p{0.2, 0.9, 0.5};
    std::vector<double> w{1, 2, 0.5};
    std::vector<double> logits(3);
    double entropy = 0, wsum = 0;
    for (std::size_t i = 0; i < 3; ++i) {
        logits[i] = std::log(p[i] / (1 - p[i]));
        entropy -= w[i] * (p[i] * std::log(p[i]) + (1 - p[i]) * std::log(1 - p[i]));
        wsum += w[i];
    }
    auto ll = [&](std::vector<double> x) { return eval(x, [&](Var v) { return weighted_logloss(v, p, w); }); };
    CHECK(ll(logits) == doctest::Approx(entropy / wsum).epsilon(1e-12));
    for (std::size_t i = 0; i < 3; ++i) {
        auto moved = logits;
        moved[i] += 0.3;
        CHECK(ll(moved) > ll(logits));
    }
}
