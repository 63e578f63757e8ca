#include <cmath>
#include <memory>

#include "doctest.h"
#include "demf/error.hpp"
#include "demf/nn.hpp"
#include "demf/rng.hpp"

using namespace demf;
using namespace demf::nn;

namespace {

Tensor random_tensor(int n, int c, int h, int w, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(n, c, h, w);
    for (float& v : t.values()) v = static_cast<float>(rng.uniform(lo, hi));
    return t;
}

// L = sum(r * f(x)); dL/dy = r.
double probe_loss(const Sequential& net, const Tensor& x, const Tensor& r) {
    const Tensor y = net.forward(x);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += static_cast<double>(y.data()[i]) * r.data()[i];
    return s;
}

// Central-difference check of input and parameter gradients.
void check_gradients(Sequential net, Tensor x, std::uint64_t seed, double tol = 3e-2) {
    Rng rng(seed);
    const Tensor y = net.forward(x);
    Tensor r = random_tensor(y.n(), y.c(), y.h(), y.w(), rng);

    net.zero_grad();
    net.forward_train(x);
    const Tensor dx = net.backward(r);

    const float eps = 2e-3f;
    auto compare = [&](double analytic, double numeric) {
        const double scale = std::max({1.0, std::abs(analytic), std::abs(numeric)});
        CHECK(std::abs(analytic - numeric) / scale < tol);
    };

    for (std::size_t i = 0; i < x.size(); i += std::max<std::size_t>(1, x.size() / 40)) {
        const float orig = x.data()[i];
        x.data()[i] = orig + eps;
        const double lp = probe_loss(net, x, r);
        x.data()[i] = orig - eps;
        const double lm = probe_loss(net, x, r);
        x.data()[i] = orig;
        compare(dx.data()[i], (lp - lm) / (2.0 * eps));
    }
    for (Parameter* p : net.parameters()) {
        for (std::size_t i = 0; i < p->value.size(); i += std::max<std::size_t>(1, p->value.size() / 25)) {
            const float orig = p->value[i];
            p->value[i] = orig + eps;
            const double lp = probe_loss(net, x, r);
            p->value[i] = orig - eps;
            const double lm = probe_loss(net, x, r);
            p->value[i] = orig;
            compare(p->grad[i], (lp - lm) / (2.0 * eps));
        }
    }
}

} // namespace

TEST_CASE("conv2d matches a direct convolution") {
    Rng rng(3);
    Conv2d conv(2, 3, 3);
    Sequential net;
    net.add(std::make_unique<Conv2d>(conv));
    net.initialize(11);
    auto* c = dynamic_cast<Conv2d*>(&net.layer(0));
    for (float& b : c->bias().value) b = static_cast<float>(rng.uniform(-0.5, 0.5));
    const Tensor x = random_tensor(2, 2, 5, 6, rng);
    const Tensor y = net.forward(x);
    for (int n = 0; n < 2; ++n)
        for (int co = 0; co < 3; ++co)
            for (int yy = 0; yy < 5; ++yy)
                for (int xx = 0; xx < 6; ++xx) {
                    double s = c->bias().value[co];
                    for (int ci = 0; ci < 2; ++ci)
                        for (int ky = 0; ky < 3; ++ky)
                            for (int kx = 0; kx < 3; ++kx) {
                                const int sy = yy + ky - 1, sx = xx + kx - 1;
                                if (sy < 0 || sy >= 5 || sx < 0 || sx >= 6) continue;
                                s += c->weight().value[((co * 2 + ci) * 3 + ky) * 3 + kx] * x.at(n, ci, sy, sx);
                            }
                    CHECK(y.at(n, co, yy, xx) == doctest::Approx(s).epsilon(1e-5));
                }
}

TEST_CASE("layer gradients agree with finite differences") {
    Rng rng(5);
    SUBCASE("conv + relu + pool + dense") {
        Sequential net;
        net.add(std::make_unique<Conv2d>(2, 4, 3))
            .add(std::make_unique<Relu>())
            .add(std::make_unique<MaxPool2d>())
            .add(std::make_unique<Conv2d>(4, 3, 5))
            .add(std::make_unique<GlobalAvgPool>())
            .add(std::make_unique<Dense>(3, 2));
        net.initialize(21);
        check_gradients(net, random_tensor(2, 2, 8, 8, rng), 1);
    }
    SUBCASE("upsample + rectified tanh") {
        Sequential net;
        net.add(std::make_unique<Conv2d>(1, 2, 3))
            .add(std::make_unique<Upsample2d>())
            .add(std::make_unique<Conv2d>(2, 1, 3))
            .add(std::make_unique<RectifiedTanh>());
        net.initialize(22);
        auto* last = dynamic_cast<Conv2d*>(&net.layer(2));
        last->bias().value[0] = 0.3f;
        check_gradients(net, random_tensor(1, 1, 4, 4, rng, 0.0, 1.0), 2);
    }
    SUBCASE("conv + global max pool + dense") {
        Sequential net;
        net.add(std::make_unique<Conv2d>(1, 3, 3))
            .add(std::make_unique<Relu>())
            .add(std::make_unique<GlobalMaxPool>())
            .add(std::make_unique<Dense>(3, 1));
        net.initialize(24);
        check_gradients(net, random_tensor(2, 1, 6, 6, rng), 4);
    }
    SUBCASE("sigmoid and summary features") {
        Sequential net;
        net.add(std::make_unique<SummaryFeatures>()).add(std::make_unique<Dense>(2, 1)).add(std::make_unique<Sigmoid>());
        net.initialize(23);
        check_gradients(net, random_tensor(3, 1, 4, 4, rng), 3);
    }
}

TEST_CASE("global max pool routes the gradient to the first maximum") {
    Tensor x(1, 2, 2, 2);
    const float vals[] = {1, 5, 5, 2, -3, -1, -2, -4};
    std::copy(std::begin(vals), std::end(vals), x.data());
    GlobalMaxPool pool;
    const Tensor y = pool.forward_train(x);
    CHECK(y.at(0, 0, 0, 0) == 5.0f);
    CHECK(y.at(0, 1, 0, 0) == -1.0f);
    Tensor g(1, 2, 1, 1);
    g.at(0, 0, 0, 0) = 2.0f;
    g.at(0, 1, 0, 0) = -1.0f;
    const Tensor dx = pool.backward(g);
    const float expected[] = {0, 2, 0, 0, 0, -1, 0, 0};
    for (int i = 0; i < 8; ++i) CHECK(dx.data()[i] == expected[i]);
}

TEST_CASE("losses and their gradients") {
    Tensor logits(3, 1, 1, 1);
    logits.data()[0] = 0.0f;
    logits.data()[1] = 2.0f;
    logits.data()[2] = -40.0f;
    const float targets[] = {1.0f, 0.0f, 0.0f};
    const auto r = bce_with_logits(logits, targets);
    const double expected = (std::log(2.0) + (2.0 + std::log1p(std::exp(-2.0))) + std::log1p(std::exp(-40.0))) / 3.0;
    CHECK(r.loss == doctest::Approx(expected).epsilon(1e-12));
    CHECK(r.grad.data()[0] == doctest::Approx((0.5 - 1.0) / 3.0));
    CHECK(std::isfinite(r.loss));

    Tensor a(1, 1, 1, 2), b(1, 1, 1, 2);
    a.data()[0] = 1.0f;
    b.data()[1] = 2.0f;
    CHECK(mse(a, b).loss == doctest::Approx(2.5));
    CHECK_THROWS_AS(mse(a, Tensor(1, 1, 2, 1)), DataError);
}

TEST_CASE("adam first step moves each weight by the learning rate") {
    Parameter p{"w", {2}, {1.0f, -1.0f}, {0.5f, -3.0f}};
    Adam opt({&p}, AdamOptions{.learning_rate = 0.1, .decay = 0.0});
    opt.step();
    // Bias-corrected first step is lr * g / (|g| + eps').
    CHECK(p.value[0] == doctest::Approx(0.9).epsilon(1e-5));
    CHECK(p.value[1] == doctest::Approx(-0.9).epsilon(1e-5));
    CHECK_THROWS_AS(Adam({&p}, AdamOptions{.learning_rate = 0.0}), ConfigError);
}

TEST_CASE("sequential copies are deep and initialization is seeded") {
    Sequential a;
    a.add(std::make_unique<Conv2d>(1, 2, 3)).add(std::make_unique<Dense>(2 * 4 * 4, 1));
    a.initialize(9);
    Sequential b = a;
    b.parameters()[0]->value[0] += 1.0f;
    CHECK(a.parameters()[0]->value[0] != b.parameters()[0]->value[0]);

    Sequential c = a;
    c.initialize(9);
    CHECK(c.parameters()[0]->value == a.parameters()[0]->value);
    c.initialize(10);
    CHECK(c.parameters()[0]->value != a.parameters()[0]->value);
}
