#include <doctest.h>

#include <cstring>
#include <fstream>
#include <sstream>

#include "serpentflow/adam.hpp"
#include "serpentflow/autograd.hpp"
#include "serpentflow/rng.hpp"
#include "serpentflow/tensor.hpp"

#include "gradcheck_cases.hpp"
#include "test_support.hpp"

using namespace serpentflow::numerics;
using serpentflow::NumericError;
using serpentflow::ValidationError;

TEST_CASE("rng is deterministic and reasonably normal") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    Rng c(7);
    double s = 0.0, s2 = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const double v = c.normal();
        s += v;
        s2 += v * v;
    }
    CHECK(std::abs(s / n) < 0.05);
    CHECK(std::abs(s2 / n - 1.0) < 0.05);
    CHECK(derive_seed(1, "a") != derive_seed(1, "b"));
    CHECK(derive_seed(1, "a") == derive_seed(1, "a"));
}

TEST_CASE("forward op examples") {
    Tensor a({2}, {1.0, 2.0});
    CHECK(mse(a, a).item() == 0.0);

    Tensor x({2}, {-3.0, 3.0});
    const Tensor r = relu(x);
    CHECK(r[0] == 0.0);
    CHECK(r[1] == 3.0);

    // 4x4 input, 3x3 kernel with a centered one, unit stride, same padding.
    Rng rng(3);
    Tensor img = sftest::random_tensor({1, 1, 4, 4}, rng);
    Tensor kernel({1, 1, 3, 3}, 0.0);
    kernel.mutable_data()[4] = 1.0;
    Tensor bias({1}, 0.0);
    const Tensor out = conv2d(img, kernel, bias, 1, 1);
    CHECK(out.shape == Shape{1, 1, 4, 4});
    CHECK(sftest::max_abs_diff(out.data(), img.data()) == 0.0);
}

TEST_CASE("shape mismatches carry the op name and both shapes") {
    Tensor a({2, 3});
    Tensor b({3, 2});
    try {
        add(a, b);
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("add") != std::string::npos);
        CHECK(msg.find("(2,3)") != std::string::npos);
        CHECK(msg.find("(3,2)") != std::string::npos);
    }
    CHECK_THROWS_AS(matmul(Tensor({2, 3}), Tensor({2, 3})), ValidationError);
    CHECK_THROWS_AS(conv1d(Tensor({1, 2, 8}), Tensor({4, 3, 3}), Tensor({4}), 1, 1),
                    ValidationError);
}

TEST_CASE("backward examples") {
    SUBCASE("d/dx x^2 at x=3 is 6") {
        Tape tape;
        Tensor x = tape.leaf(Tensor::scalar(3.0));
        Tensor loss = mul(x, x);
        tape.backward(loss);
        CHECK(tape.grad(x)[0] == doctest::Approx(6.0).epsilon(1e-12));
    }
    SUBCASE("grad of mse(w*x, y) wrt w at w=1, x=2, y=0 is 8") {
        Tape tape;
        Tensor w = tape.leaf(Tensor::scalar(1.0));
        Tensor x = Tensor::scalar(2.0);
        Tensor y = Tensor::scalar(0.0);
        Tensor loss = mse(mul(w, x), y);
        tape.backward(loss);
        CHECK(tape.grad(w)[0] == doctest::Approx(8.0).epsilon(1e-12));
    }
    SUBCASE("gradient of a constant wrt an unused leaf is zero") {
        Tape tape;
        Tensor used = tape.leaf(Tensor({3}, 1.0));
        Tensor unused = tape.leaf(Tensor({4}, 2.0));
        tape.backward(sum(used));
        for (const double g : tape.grad(unused)) CHECK(g == 0.0);
    }
    SUBCASE("non-scalar loss is rejected") {
        Tape tape;
        Tensor x = tape.leaf(Tensor({3}, 1.0));
        Tensor y = add(x, x);
        CHECK_THROWS_AS(tape.backward(y), ValidationError);
    }
}

TEST_CASE("finite difference oracle") {
    Rng rng(11);
    SUBCASE("sum of squares") {
        Tensor theta = sftest::random_tensor({10}, rng);
        const double err = finite_difference_check(
            [](Tape&, const Tensor& th) { return sum(mul(th, th)); }, theta, 1e-5);
        CHECK(err < 1e-6);
    }
    SUBCASE("constant function has zero error") {
        Tensor theta = sftest::random_tensor({4}, rng);
        const double err = finite_difference_check(
            [](Tape&, const Tensor&) { return Tensor::scalar(3.5); }, theta, 1e-5);
        CHECK(err == 0.0);
    }
    SUBCASE("two-layer network loss") {
        Tensor x = sftest::random_tensor({4, 6}, rng);
        Tensor target({4, 2}, 0.25);
        Tensor w2 = sftest::random_tensor({5, 2}, rng, 0.5);
        Tensor b2 = sftest::random_tensor({2}, rng, 0.1);
        Tensor b1 = sftest::random_tensor({5}, rng, 0.1);
        // theta is the first-layer weight; the rest are constants.
        Tensor theta = sftest::random_tensor({6, 5}, rng, 0.5);
        const double err = finite_difference_check(
            [=](Tape&, const Tensor& th) {
                return mse(linear(relu(linear(x, th, b1)), w2, b2), target);
            },
            theta, 1e-5);
        CHECK(err < 1e-4);
    }
}

TEST_CASE("every primitive passes the finite-difference check") {
    for (auto& c : sftest::primitive_grad_cases(20240817)) {
        CAPTURE(c.name);
        const double err = finite_difference_check(c.fn, c.theta, 1e-5);
        CHECK_MESSAGE(err < 1e-4, c.name, " rel err ", err);
    }
}

TEST_CASE("forward evaluation is bit-identical with and without recording") {
    Rng rng(5);
    Tensor x = sftest::random_tensor({2, 3, 8}, rng);
    Tensor w = sftest::random_tensor({4, 3, 3}, rng);
    Tensor b = sftest::random_tensor({4}, rng);
    auto run = [&](bool tracked) {
        Tape tape;
        Tensor xx = tracked ? tape.leaf(x) : x;
        Tensor ww = tracked ? tape.leaf(w) : w;
        Tensor h = relu(conv1d(xx, ww, b, 1, 1));
        Tensor pooled = avg_pool1d(h, 2);
        return mse(pooled, Tensor({2, 4, 4}, 0.0)).item();
    };
    const double with_grad = run(true);
    const double without = run(false);
    CHECK(std::memcmp(&with_grad, &without, sizeof(double)) == 0);
}

TEST_CASE("adam") {
    SUBCASE("zero gradients leave parameters unchanged for any number of steps") {
        ParamStore params;
        params.add("w", Tensor({3}, {0.5, -0.25, 2.0}));
        const std::vector<double> before = params.get("w").data();
        AdamState opt(AdamConfig{1e-2, 0.9, 0.999, 1e-8});
        for (int i = 0; i < 17; ++i) opt.step(params, {{"w", {0.0, 0.0, 0.0}}});
        CHECK(params.get("w").data() == before);
        CHECK(opt.step_count() == 17);
    }
    SUBCASE("first step with unit gradient moves by about the learning rate") {
        ParamStore params;
        params.add("w", Tensor({1}, {0.5}));
        AdamState opt; // defaults: lr 1e-4, beta 0.9/0.999, eps 1e-8
        opt.step(params, {{"w", {1.0}}});
        const double delta = params.get("w")[0] - 0.5;
        CHECK(delta == doctest::Approx(-1e-4).epsilon(1e-7));
    }
    SUBCASE("two identical gradients follow the closed-form recursion") {
        ParamStore params;
        params.add("w", Tensor({1}, {1.0}));
        AdamState opt;
        opt.step(params, {{"w", {1.0}}});
        opt.step(params, {{"w", {1.0}}});
        // For a constant gradient both bias-corrected moments equal 1 at
        // every step, so each update is lr / (1 + eps).
        const double expected = 1.0 - 2.0 * (1e-4 / (1.0 + 1e-8));
        CHECK(params.get("w")[0] == doctest::Approx(expected).epsilon(1e-14));
    }
    SUBCASE("non-finite gradient rejects the step and names the parameter") {
        ParamStore params;
        params.add("w", Tensor({2}, {1.0, 2.0}));
        params.add("b", Tensor({1}, {0.0}));
        AdamState opt;
        try {
            opt.step(params, {{"w", {0.0, 0.0}}, {"b", {std::nan("")}}});
            FAIL("expected NumericError");
        } catch (const NumericError& e) {
            CHECK(std::string(e.what()).find("'b'") != std::string::npos);
        }
        CHECK(params.get("w")[0] == 1.0); // whole step rejected
        CHECK(opt.step_count() == 0);
    }
}

TEST_CASE("sftensor roundtrip is exact") {
    Rng rng(9);
    Tensor t = sftest::random_tensor({3, 5, 2}, rng, 100.0);
    std::stringstream buf;
    write_sftensor(buf, t.shape, t.data());
    Shape shape;
    std::vector<double> data;
    read_sftensor(buf, shape, data);
    CHECK(shape == t.shape);
    CHECK(data == t.data());

    std::stringstream bad("NOTMAGIC garbage");
    CHECK_THROWS_AS(read_sftensor(bad, shape, data), ValidationError);
}
