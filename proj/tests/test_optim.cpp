#include <doctest.h>

#include <cmath>
#include <cstring>

#include "sftik/optim.hpp"
#include "sftik/tensor.hpp"

using namespace sftik;

static LrSchedule default_schedule(int64_t total) {
    LrSchedule s;
    s.base_lr = 2e-4;
    s.final_lr = 0.0;
    s.warmup_steps = 50;
    s.warmup_start_ratio = 0.2;
    s.total_steps = total;
    return s;
}

TEST_CASE("learning rate schedule hits its pinned anchor points") {
    LrSchedule s = default_schedule(1000);
    CHECK(s.lr_at(0) == doctest::Approx(4e-5).epsilon(1e-12));
    CHECK(s.lr_at(50) == doctest::Approx(2e-4).epsilon(1e-12));
    CHECK(s.lr_at(1000) == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(std::abs(s.lr_at(1000)) < 1e-18);

    LrSchedule nz = default_schedule(1000);
    nz.final_lr = 1e-5;
    CHECK(nz.lr_at(1000) == doctest::Approx(1e-5).epsilon(1e-12));
    // halfway through annealing sits at the midpoint of base and final
    CHECK(nz.lr_at(525) == doctest::Approx((2e-4 + 1e-5) / 2.0).epsilon(1e-12));
}

TEST_CASE("learning rate curve is continuous and piecewise monotone over 1000 steps") {
    LrSchedule s = default_schedule(1000);
    double prev = s.lr_at(0);
    double max_jump = 0.0;
    for (int64_t step = 1; step <= 1000; ++step) {
        double cur = s.lr_at(step);
        max_jump = std::max(max_jump, std::abs(cur - prev));
        if (step <= 50) {
            CHECK(cur >= prev);
        } else {
            CHECK(cur <= prev);
        }
        CHECK(cur >= 0.0);
        CHECK(cur <= s.base_lr + 1e-15);
        prev = cur;
    }
    // both phases are cosine halves, so adjacent steps never jump
    CHECK(max_jump < 1e-5);
}

TEST_CASE("learning rate schedule rejects out-of-range steps") {
    LrSchedule s = default_schedule(100);
    CHECK_THROWS_AS(s.lr_at(-1), ConfigError);
    CHECK_THROWS_AS(s.lr_at(101), ConfigError);
}

TEST_CASE("a run shorter than the warmup never leaves the ramp") {
    LrSchedule s = default_schedule(30);
    CHECK(s.lr_at(0) == doctest::Approx(4e-5).epsilon(1e-12));
    for (int64_t step = 0; step < 30; ++step) CHECK(s.lr_at(step) <= s.lr_at(step + 1) + 1e-18);
    CHECK(s.lr_at(30) < s.base_lr);

    // warmup equal to the whole run: the boundary value is held at base
    LrSchedule eq = default_schedule(50);
    CHECK(eq.lr_at(50) == doctest::Approx(2e-4).epsilon(1e-12));
}

TEST_CASE("adam converges on a quadratic bowl") {
    Tensor<double> x = Tensor<double>::from_vector({1}, {-4.0});
    std::vector<Tensor<double>> params = {x};
    AdamState<double> state;
    for (int step = 0; step < 400; ++step) {
        auto g = x.ensure_grad();
        g[0] = 2.0 * (x.data()[0] - 3.0);
        adam_step(params, state, 0.1);
        x.zero_grad();
    }
    CHECK(std::abs(x.data()[0] - 3.0) < 1e-2);
    CHECK(state.step == 400);
}

TEST_CASE("adam first step moves by roughly lr in the gradient direction") {
    // with bias correction the first update is lr * g / (|g| + eps)
    Tensor<double> x = Tensor<double>::from_vector({2}, {1.0, -1.0});
    std::vector<Tensor<double>> params = {x};
    AdamState<double> state;
    auto g = x.ensure_grad();
    g[0] = 0.5;
    g[1] = -2.0;
    adam_step(params, state, 0.01);
    CHECK(x.data()[0] == doctest::Approx(1.0 - 0.01).epsilon(1e-6));
    CHECK(x.data()[1] == doctest::Approx(-1.0 + 0.01).epsilon(1e-6));
}

TEST_CASE("parameters without gradients are left untouched") {
    Tensor<float> active = Tensor<float>::from_vector({2}, {1.0f, 2.0f});
    Tensor<float> frozen = Tensor<float>::from_vector({2}, {5.0f, 6.0f});
    Tensor<float> zeroed = Tensor<float>::from_vector({2}, {7.0f, 8.0f});
    std::vector<Tensor<float>> params = {active, frozen, zeroed};
    AdamState<float> state;

    auto ga = active.ensure_grad();
    ga[0] = 1.0f;
    ga[1] = -1.0f;
    zeroed.ensure_grad();  // allocated but identically zero

    std::vector<float> frozen_before(frozen.data().begin(), frozen.data().end());
    std::vector<float> zeroed_before(zeroed.data().begin(), zeroed.data().end());
    adam_step(params, state, 0.05);

    CHECK(active.data()[0] != 1.0f);
    CHECK(std::memcmp(frozen.data().data(), frozen_before.data(), sizeof(float) * 2) == 0);
    CHECK(std::memcmp(zeroed.data().data(), zeroed_before.data(), sizeof(float) * 2) == 0);
    for (float m : state.m[1]) CHECK(m == 0.0f);
    for (float m : state.m[2]) CHECK(m == 0.0f);
    for (float v : state.v[2]) CHECK(v == 0.0f);

    // a later all-zero gradient freezes the parameter again, moments included
    active.zero_grad();
    std::vector<float> active_mid(active.data().begin(), active.data().end());
    std::vector<float> m_mid = state.m[0];
    adam_step(params, state, 0.05);
    CHECK(std::memcmp(active.data().data(), active_mid.data(), sizeof(float) * 2) == 0);
    CHECK(state.m[0] == m_mid);
}

TEST_CASE("a step with no gradients anywhere is the bitwise identity") {
    Tensor<float> a = Tensor<float>::from_vector({3}, {0.25f, -1.5f, 3.75f});
    std::vector<Tensor<float>> params = {a};
    AdamState<float> state;
    auto g = a.ensure_grad();
    g[0] = 1.0f;
    adam_step(params, state, 0.1);  // build up nonzero moments
    a.zero_grad();

    std::vector<float> before(a.data().begin(), a.data().end());
    for (int i = 0; i < 5; ++i) adam_step(params, state, 0.1);
    CHECK(std::memcmp(a.data().data(), before.data(), sizeof(float) * before.size()) == 0);
}

TEST_CASE("adam rejects a state sized for a different parameter list") {
    Tensor<float> a = Tensor<float>::from_vector({2}, {1.0f, 2.0f});
    Tensor<float> b = Tensor<float>::from_vector({2}, {3.0f, 4.0f});
    std::vector<Tensor<float>> params = {a, b};
    AdamState<float> state;
    a.ensure_grad()[0] = 1.0f;
    adam_step(params, state, 0.1);

    std::vector<Tensor<float>> grown = {a, b, Tensor<float>::from_vector({1}, {0.0f})};
    CHECK_THROWS_AS(adam_step(grown, state, 0.1), ShapeError);
}
