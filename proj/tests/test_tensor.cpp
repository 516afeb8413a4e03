#include <doctest.h>

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "mlcil/rng.hpp"
#include "mlcil/tensor.hpp"

using namespace mlcil;

namespace {

// central finite differences against reverse-mode, over every leaf coordinate
double fd_max_rel(const std::function<Tensor()>& fn, std::vector<Tensor> leaves,
                  double eps = 1e-5) {
    for (auto& l : leaves) {
        l.set_requires_grad(true);
        l.zero_grad();
    }
    backward(fn());
    double worst = 0.0;
    for (auto& l : leaves) {
        for (std::size_t i = 0; i < l.size(); ++i) {
            const double orig = l.at(i);
            l.at(i) = orig + eps;
            const double up = fn().item();
            l.at(i) = orig - eps;
            const double down = fn().item();
            l.at(i) = orig;
            const double numeric = (up - down) / (2.0 * eps);
            const double analytic = l.grad()[i];
            const double rel = std::abs(analytic - numeric) /
                               std::max({std::abs(analytic), std::abs(numeric), 1e-8});
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

// fixed per-element weights turn a tensor output into a scalar with distinct
// adjoints; a pure function of the index so repeated evaluations of the same
// closure see identical weights
Tensor weigh(const Tensor& t) {
    std::vector<double> w(t.size());
    for (std::size_t i = 0; i < w.size(); ++i)
        w[i] = 1.0 + 0.5 * std::sin(1.7 * static_cast<double>(i) + 0.3);
    return sum(mul(t, Tensor::from_data(t.shape(), std::move(w))));
}

constexpr double kFdTol = 1e-7;

}  // namespace

TEST_SUITE("tensor") {

TEST_CASE("shape helpers") {
    CHECK(shape_numel({3, 4, 5}) == 60);
    CHECK(shape_numel({}) == 1);
    CHECK(shape_str({2, 7}) == "[2,7]");
}

TEST_CASE("factories and accessors") {
    auto z = Tensor::zeros({2, 3});
    CHECK(z.size() == 6);
    CHECK(z.at(1, 2) == 0.0);
    auto f = Tensor::full({4}, 2.5);
    CHECK(f.at(3) == 2.5);
    auto s = Tensor::scalar(-1.5);
    CHECK(s.item() == -1.5);
    CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1.0, 2.0, 3.0}), std::invalid_argument);
    CHECK_THROWS_AS(f.item(), std::invalid_argument);
}

TEST_CASE("matmul 2d value") {
    auto a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    auto b = Tensor::from_data({2, 2}, {5, 6, 7, 8});
    auto c = matmul(a, b);
    CHECK(c.at(0, 0) == doctest::Approx(19).epsilon(1e-12));
    CHECK(c.at(0, 1) == doctest::Approx(22).epsilon(1e-12));
    CHECK(c.at(1, 0) == doctest::Approx(43).epsilon(1e-12));
    CHECK(c.at(1, 1) == doctest::Approx(50).epsilon(1e-12));
}

TEST_CASE("matmul shape validation") {
    auto a = Tensor::zeros({2, 3});
    auto b = Tensor::zeros({4, 2});
    CHECK_THROWS_AS(matmul(a, b), std::invalid_argument);
    CHECK_THROWS_AS(matmul(Tensor::zeros({2, 2, 3}), Tensor::zeros({3, 3, 4})),
                    std::invalid_argument);
}

TEST_CASE("matmul gradients, all rank combinations") {
    Rng rng(11);
    auto a2 = Tensor::randn({3, 4}, rng);
    auto b2 = Tensor::randn({4, 5}, rng);
    CHECK(fd_max_rel([&] { return weigh(matmul(a2, b2)); }, {a2, b2}) < kFdTol);

    auto a3 = Tensor::randn({2, 3, 4}, rng);
    CHECK(fd_max_rel([&] { return weigh(matmul(a3, b2)); }, {a3, b2}) < kFdTol);

    auto b3 = Tensor::randn({2, 4, 5}, rng);
    CHECK(fd_max_rel([&] { return weigh(matmul(a3, b3)); }, {a3, b3}) < kFdTol);
}

TEST_CASE("transpose") {
    auto a = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    auto t = transpose(a);
    CHECK(t.shape() == Shape{3, 2});
    CHECK(t.at(2, 1) == 6);
    Rng rng(5);
    auto x = Tensor::randn({3, 4}, rng);
    CHECK(fd_max_rel([&] { return weigh(transpose(x)); }, {x}) < kFdTol);
    auto y = Tensor::randn({2, 3, 4}, rng);
    auto yt = transpose_last2(y);
    CHECK(yt.shape() == Shape{2, 4, 3});
    CHECK(yt.at(1, 3, 2) == y.at(1, 2, 3));
    CHECK(fd_max_rel([&] { return weigh(transpose_last2(y)); }, {y}) < kFdTol);
}

TEST_CASE("elementwise ops") {
    Rng rng(7);
    auto a = Tensor::randn({3, 4}, rng);
    auto b = Tensor::randn({3, 4}, rng);
    auto s = add(a, b);
    CHECK(s.at(1, 2) == doctest::Approx(a.at(1, 2) + b.at(1, 2)).epsilon(1e-15));
    CHECK_THROWS_AS(add(a, Tensor::zeros({4, 3})), std::invalid_argument);

    CHECK(fd_max_rel([&] { return weigh(add(a, b)); }, {a, b}) < kFdTol);
    CHECK(fd_max_rel([&] { return weigh(sub(a, b)); }, {a, b}) < kFdTol);
    CHECK(fd_max_rel([&] { return weigh(mul(a, b)); }, {a, b}) < kFdTol);
    CHECK(fd_max_rel([&] { return weigh(scale(a, -2.5)); }, {a}) < kFdTol);
    CHECK(fd_max_rel([&] { return weigh(add_scalar(a, 0.7)); }, {a}) < kFdTol);
}

TEST_CASE("add_bias_rows") {
    Rng rng(13);
    auto a = Tensor::randn({2, 3, 4}, rng);
    auto b = Tensor::randn({4}, rng);
    auto out = add_bias_rows(a, b);
    CHECK(out.at(1, 2, 3) == doctest::Approx(a.at(1, 2, 3) + b.at(3)).epsilon(1e-15));
    CHECK(fd_max_rel([&] { return weigh(add_bias_rows(a, b)); }, {a, b}) < kFdTol);
    auto m = Tensor::randn({5, 4}, rng);
    CHECK(fd_max_rel([&] { return weigh(add_bias_rows(m, b)); }, {m, b}) < kFdTol);
}

TEST_CASE("broadcast_add_batch") {
    Rng rng(17);
    auto x = Tensor::randn({3, 4}, rng);
    auto y = Tensor::randn({2, 3, 4}, rng);
    auto out = broadcast_add_batch(x, y);
    CHECK(out.at(1, 2, 3) == doctest::Approx(x.at(2, 3) + y.at(1, 2, 3)).epsilon(1e-15));
    CHECK_THROWS_AS(broadcast_add_batch(x, Tensor::zeros({2, 4, 3})), std::invalid_argument);
    CHECK(fd_max_rel([&] { return weigh(broadcast_add_batch(x, y)); }, {x, y}) < kFdTol);
}

TEST_CASE("softmax rows are stochastic") {
    Rng rng(19);
    auto a = Tensor::randn({4, 7}, rng, 3.0);
    // large shifts must not overflow
    for (std::size_t j = 0; j < 7; ++j) a.at(2, j) += 1000.0;
    auto s = softmax_last(a);
    for (std::size_t i = 0; i < 4; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < 7; ++j) {
            CHECK(s.at(i, j) >= 0.0);
            row += s.at(i, j);
        }
        CHECK(std::abs(row - 1.0) < 1e-12);
    }
    auto u = softmax_last(Tensor::full({2, 5}, 3.0));
    CHECK(u.at(1, 4) == doctest::Approx(0.2).epsilon(1e-14));
}

TEST_CASE("softmax gradient") {
    Rng rng(23);
    auto a = Tensor::randn({3, 5}, rng);
    CHECK(fd_max_rel([&] { return weigh(softmax_last(a)); }, {a}) < kFdTol);
    auto a3 = Tensor::randn({2, 2, 4}, rng);
    CHECK(fd_max_rel([&] { return weigh(softmax_last(a3)); }, {a3}) < kFdTol);
}

TEST_CASE("layer norm statistics") {
    Rng rng(29);
    auto a = Tensor::randn({4, 8}, rng, 2.0);
    auto g = Tensor::full({8}, 1.0);
    auto b = Tensor::zeros({8});
    auto out = layer_norm_last(a, g, b);
    for (std::size_t i = 0; i < 4; ++i) {
        double mu = 0.0, var = 0.0;
        for (std::size_t j = 0; j < 8; ++j) mu += out.at(i, j);
        mu /= 8.0;
        for (std::size_t j = 0; j < 8; ++j) var += (out.at(i, j) - mu) * (out.at(i, j) - mu);
        var /= 8.0;
        CHECK(std::abs(mu) < 1e-12);
        CHECK(var == doctest::Approx(1.0).epsilon(1e-10));
    }
}

TEST_CASE("layer norm constant row hits the variance floor") {
    auto a = Tensor::full({1, 4}, 5.0);
    auto g = Tensor::full({4}, 2.0);
    auto b = Tensor::from_data({4}, {1, 2, 3, 4});
    auto out = layer_norm_last(a, g, b);
    for (std::size_t j = 0; j < 4; ++j) CHECK(out.at(0, j) == b.at(j));
}

TEST_CASE("layer norm gradient") {
    Rng rng(31);
    auto a = Tensor::randn({3, 6}, rng);
    auto g = Tensor::randn({6}, rng);
    auto b = Tensor::randn({6}, rng);
    CHECK(fd_max_rel([&] { return weigh(layer_norm_last(a, g, b)); }, {a, g, b}) < kFdTol);
    auto a3 = Tensor::randn({2, 3, 5}, rng);
    auto g5 = Tensor::randn({5}, rng);
    auto b5 = Tensor::randn({5}, rng);
    CHECK(fd_max_rel([&] { return weigh(layer_norm_last(a3, g5, b5)); }, {a3, g5, b5}) <
          kFdTol);
}

TEST_CASE("pointwise nonlinearities") {
    auto x = Tensor::from_data({3}, {0.0, 1.0, -1.0});
    auto y = gelu(x);
    CHECK(y.at(0) == 0.0);
    CHECK(y.at(1) == doctest::Approx(0.8413447460685429).epsilon(1e-12));
    CHECK(y.at(2) == doctest::Approx(-0.15865525393145707).epsilon(1e-12));

    auto s = sigmoid(Tensor::from_data({3}, {0.0, 50.0, -50.0}));
    CHECK(s.at(0) == 0.5);
    CHECK(s.at(1) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(s.at(2) == doctest::Approx(0.0).epsilon(1e-12));

    Rng rng(37);
    auto a = Tensor::randn({4, 4}, rng);
    CHECK(fd_max_rel([&] { return weigh(gelu(a)); }, {a}) < kFdTol);
    CHECK(fd_max_rel([&] { return weigh(sigmoid(a)); }, {a}) < kFdTol);
}

TEST_CASE("log, clamp, pow") {
    Rng rng(41);
    std::vector<double> pos(12);
    for (auto& v : pos) v = 0.2 + rng.uniform();
    auto p = Tensor::from_data({3, 4}, pos);
    CHECK(fd_max_rel([&] { return weigh(log_elem(p)); }, {p}) < kFdTol);
    CHECK(fd_max_rel([&] { return weigh(pow_const(p, 2.0)); }, {p}) < kFdTol);
    CHECK(fd_max_rel([&] { return weigh(pow_const(p, 0.5)); }, {p}) < kFdTol);

    auto c = clamp(Tensor::from_data({4}, {-2.0, 0.3, 0.9, 5.0}), 0.0, 1.0);
    CHECK(c.at(0) == 0.0);
    CHECK(c.at(1) == 0.3);
    CHECK(c.at(3) == 1.0);
    // interior points only; the kink is not differentiable
    auto mid = Tensor::from_data({3}, {0.2, 0.5, 0.8});
    CHECK(fd_max_rel([&] { return weigh(clamp(mid, 0.0, 1.0)); }, {mid}) < kFdTol);

    auto ones = pow_const(p, 0.0);
    CHECK(ones.at(0) == 1.0);
    CHECK_FALSE(ones.requires_grad());
}

TEST_CASE("reductions") {
    auto a = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(sum(a).item() == 21.0);
    CHECK(mean(a).item() == 3.5);
    Rng rng(43);
    auto x = Tensor::randn({3, 5}, rng);
    CHECK(fd_max_rel([&] { return sum(x); }, {x}) < kFdTol);
    CHECK(fd_max_rel([&] { return mean(x); }, {x}) < kFdTol);

    auto t = Tensor::randn({2, 3, 4}, rng);
    auto m = mean_axis1(t);
    CHECK(m.shape() == Shape{2, 4});
    double acc = 0.0;
    for (std::size_t l = 0; l < 3; ++l) acc += t.at(1, l, 2);
    CHECK(m.at(1, 2) == doctest::Approx(acc / 3.0).epsilon(1e-14));
    CHECK(fd_max_rel([&] { return weigh(mean_axis1(t)); }, {t}) < kFdTol);
}

TEST_CASE("slicing and concatenation") {
    Rng rng(47);
    auto a = Tensor::randn({2, 5, 3}, rng);
    auto s = slice_axis1(a, 1, 4);
    CHECK(s.shape() == Shape{2, 3, 3});
    CHECK(s.at(1, 0, 2) == a.at(1, 1, 2));
    CHECK(fd_max_rel([&] { return weigh(slice_axis1(a, 1, 4)); }, {a}) < kFdTol);

    auto sl = slice_last(a, 1, 3);
    CHECK(sl.shape() == Shape{2, 5, 2});
    CHECK(sl.at(0, 4, 1) == a.at(0, 4, 2));
    CHECK(fd_max_rel([&] { return weigh(slice_last(a, 0, 2)); }, {a}) < kFdTol);

    auto p1 = Tensor::randn({2, 3}, rng);
    auto p2 = Tensor::randn({4, 3}, rng);
    auto cat = concat0({p1, p2});
    CHECK(cat.shape() == Shape{6, 3});
    CHECK(cat.at(0, 1) == p1.at(0, 1));
    CHECK(cat.at(2, 1) == p2.at(0, 1));
    CHECK(fd_max_rel([&] { return weigh(concat0({p1, p2})); }, {p1, p2}) < kFdTol);
    CHECK_THROWS_AS(concat0({p1, Tensor::zeros({2, 4})}), std::invalid_argument);

    auto q1 = Tensor::randn({2, 3, 2}, rng);
    auto q2 = Tensor::randn({2, 3, 4}, rng);
    auto catl = concat_last({q1, q2});
    CHECK(catl.shape() == Shape{2, 3, 6});
    CHECK(catl.at(1, 2, 1) == q1.at(1, 2, 1));
    CHECK(catl.at(1, 2, 3) == q2.at(1, 2, 1));
    CHECK(fd_max_rel([&] { return weigh(concat_last({q1, q2})); }, {q1, q2}) < kFdTol);

    auto r = reshape(a, {5, 6});
    CHECK(r.shape() == Shape{5, 6});
    CHECK_THROWS_AS(reshape(a, {4, 4}), std::invalid_argument);
    CHECK(fd_max_rel([&] { return weigh(reshape(a, {30})); }, {a}) < kFdTol);
}

TEST_CASE("rowwise_dot") {
    Rng rng(53);
    auto e = Tensor::randn({2, 3, 4}, rng);
    auto w = Tensor::randn({3, 4}, rng);
    auto out = rowwise_dot(e, w);
    CHECK(out.shape() == Shape{2, 3});
    double acc = 0.0;
    for (std::size_t d = 0; d < 4; ++d) acc += e.at(1, 2, d) * w.at(2, d);
    CHECK(out.at(1, 2) == doctest::Approx(acc).epsilon(1e-14));
    CHECK(fd_max_rel([&] { return weigh(rowwise_dot(e, w)); }, {e, w}) < kFdTol);
}

TEST_CASE("l2_normalize_rows") {
    Rng rng(59);
    auto a = Tensor::randn({4, 5}, rng);
    auto n = l2_normalize_rows(a);
    for (std::size_t i = 0; i < 4; ++i) {
        double n2 = 0.0;
        for (std::size_t j = 0; j < 5; ++j) n2 += n.at(i, j) * n.at(i, j);
        CHECK(n2 == doctest::Approx(1.0).epsilon(1e-12));
    }
    auto z = l2_normalize_rows(Tensor::zeros({2, 3}));
    for (std::size_t j = 0; j < 3; ++j) CHECK(z.at(0, j) == 0.0);
    CHECK(fd_max_rel([&] { return weigh(l2_normalize_rows(a)); }, {a}) < kFdTol);
}

TEST_CASE("gather_rows") {
    Rng rng(61);
    auto a = Tensor::randn({3, 4, 5}, rng);
    std::vector<std::pair<std::size_t, std::size_t>> idx{{0, 1}, {2, 3}, {0, 1}};
    auto g = gather_rows(a, idx);
    CHECK(g.shape() == Shape{3, 5});
    CHECK(g.at(0, 2) == a.at(0, 1, 2));
    CHECK(g.at(1, 4) == a.at(2, 3, 4));
    CHECK(g.at(2, 0) == g.at(0, 0));  // duplicates allowed
    CHECK_THROWS_AS(gather_rows(a, {{3, 0}}), std::invalid_argument);
    CHECK(fd_max_rel([&] { return weigh(gather_rows(a, idx)); }, {a}) < kFdTol);
}

TEST_CASE("backward requires a scalar") {
    auto v = Tensor::zeros({3}, true);
    CHECK_THROWS_AS(backward(add(v, v)), std::invalid_argument);
}

TEST_CASE("backward visits shared nodes once") {
    auto x = Tensor::from_data({1}, {3.0}, true);
    auto y = mul(x, x);       // x^2, reused twice
    auto z = add(y, y);       // 2 x^2, dz/dx = 4x = 12
    backward(z);
    CHECK(x.grad()[0] == doctest::Approx(12.0).epsilon(1e-14));
}

TEST_CASE("constants prune the graph") {
    auto x = Tensor::from_data({2}, {1.0, 2.0});  // no grad
    auto y = gelu(mul(x, x));
    CHECK_FALSE(y.requires_grad());
    CHECK(y.node()->parents.empty());

    auto p = Tensor::from_data({2}, {1.0, 2.0}, true);
    auto frozen_view = p.detach();
    auto loss = sum(mul(frozen_view, frozen_view));
    CHECK_FALSE(loss.requires_grad());
    backward(loss);  // no-op
    CHECK_FALSE(p.has_grad());
}

TEST_CASE("grad accumulates across backward calls") {
    auto x = Tensor::from_data({1}, {2.0}, true);
    auto make = [&] { return mul(x, x); };
    backward(make());
    backward(make());
    CHECK(x.grad()[0] == doctest::Approx(8.0).epsilon(1e-14));  // 2 * (2x)
    x.zero_grad();
    backward(make());
    CHECK(x.grad()[0] == doctest::Approx(4.0).epsilon(1e-14));
}

TEST_CASE("randn is deterministic per seed") {
    Rng a(123), b(123), c(124);
    auto ta = Tensor::randn({4, 4}, a);
    auto tb = Tensor::randn({4, 4}, b);
    auto tc = Tensor::randn({4, 4}, c);
    CHECK(ta.data() == tb.data());
    CHECK(ta.data() != tc.data());
}

}  // TEST_SUITE
