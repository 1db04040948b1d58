#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "grape/optim.hpp"
#include "grape/tape.hpp"

using namespace grape;

TEST_CASE("adam fixed point: zero gradients and no decay leave parameters unchanged") {
    Tensor p(2, 2, true);
    p.values() = {1.0, -2.0, 3.5, 0.25};
    p.mark_fresh_grad();
    Adam adam({p}, AdamConfig{0.01, 0.9, 0.999, 1e-8, 0.0});
    adam.step();
    CHECK(p.values() == std::vector<double>{1.0, -2.0, 3.5, 0.25});
}

TEST_CASE("adam with zero gradients and l2 > 0 shrinks parameters toward zero") {
    Tensor p(1, 3, true);
    p.values() = {2.0, -1.5, 0.5};
    p.mark_fresh_grad();
    Adam adam({p}, AdamConfig{0.01, 0.9, 0.999, 1e-8, 0.1});
    adam.step();
    CHECK(std::fabs(p.values()[0]) < 2.0);
    CHECK(std::fabs(p.values()[1]) < 1.5);
    CHECK(std::fabs(p.values()[2]) < 0.5);
    CHECK(p.values()[0] > 0.0);
    CHECK(p.values()[1] < 0.0);
}

TEST_CASE("adam first step on a scalar moves by about the learning rate") {
    // m_hat = 1, v_hat = 1 after bias correction, so the update is
    // lr / (1 + eps) which is 0.1 to 8 digits.
    Tensor p(1, 1, true);
    p.values() = {1.0};
    p.grad() = {1.0};
    p.mark_fresh_grad();
    Adam adam({p}, AdamConfig{0.1, 0.9, 0.999, 1e-8, 0.0});
    adam.step();
    CHECK(p.values()[0] == Catch::Approx(0.9).margin(1e-8));
    CHECK(adam.steps() == 1);
    CHECK(p.grad() == std::vector<double>{0.0});  // cleared afterward
}

TEST_CASE("adam refuses a step without a fresh gradient") {
    Tensor p(1, 1, true);
    Adam adam({p}, AdamConfig{});
    REQUIRE_THROWS_AS(adam.step(), TrainError);
}

TEST_CASE("adam over a taped loss is deterministic across runs") {
    auto run = [](int steps) {
        Tensor p(1, 2, true);
        p.values() = {0.7, -0.4};
        Adam adam({p}, AdamConfig{0.05, 0.9, 0.999, 1e-8, 0.01});
        for (int s = 0; s < steps; ++s) {
            Tape tape;
            const Value loss = tape.sum(tape.sigmoid(tape.track(p)));
            tape.backward(loss);
            adam.step();
        }
        return p.values();
    };
    CHECK(run(25) == run(25));
}
