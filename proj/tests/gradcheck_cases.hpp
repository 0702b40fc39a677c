#pragma once

#include <string>
#include <vector>

#include "serpentflow/autograd.hpp"
#include "serpentflow/rng.hpp"

#include "test_support.hpp"

namespace sftest {

using serpentflow::numerics::Rng;
using serpentflow::numerics::Tape;
using serpentflow::numerics::TapedScalarFn;
using serpentflow::numerics::Tensor;

struct GradCase {
    std::string name;
    Tensor theta;
    TapedScalarFn fn;
};

// One finite-difference case per forward primitive. theta always enters the
// expression under test; fixed co-inputs are captured by value.
inline std::vector<GradCase> primitive_grad_cases(std::uint64_t seed) {
    namespace ag = serpentflow::numerics;
    Rng rng(seed);
    std::vector<GradCase> cases;

    auto away_from_zero = [](Tensor t) {
        for (auto& v : t.mutable_data()) v += (v >= 0.0 ? 0.25 : -0.25);
        return t;
    };

    {
        Tensor b = random_tensor({3, 5}, rng);
        cases.push_back({"add", random_tensor({3, 5}, rng),
                         [b](Tape&, const Tensor& th) { return ag::mean(ag::add(th, b)); }});
    }
    {
        Tensor b = random_tensor({3, 5}, rng);
        cases.push_back({"sub", random_tensor({3, 5}, rng), [b](Tape&, const Tensor& th) {
                             return ag::mse(ag::sub(th, b), Tensor({3, 5}, 0.0));
                         }});
    }
    {
        Tensor b = random_tensor({4, 4}, rng);
        cases.push_back({"mul", random_tensor({4, 4}, rng),
                         [b](Tape&, const Tensor& th) { return ag::sum(ag::mul(th, b)); }});
    }
    cases.push_back({"scalar_mul", random_tensor({6}, rng), [](Tape&, const Tensor& th) {
                         return ag::mean(ag::scalar_mul(th, -1.7));
                     }});
    cases.push_back({"relu", away_from_zero(random_tensor({4, 7}, rng)),
                     [](Tape&, const Tensor& th) { return ag::sum(ag::relu(th)); }});
    {
        Tensor b = random_tensor({5, 3}, rng);
        cases.push_back({"matmul_lhs", random_tensor({2, 5}, rng),
                         [b](Tape&, const Tensor& th) { return ag::mean(ag::matmul(th, b)); }});
        Tensor a = random_tensor({2, 5}, rng);
        cases.push_back({"matmul_rhs", random_tensor({5, 3}, rng), [a](Tape&, const Tensor& th) {
                             return ag::mse(ag::matmul(a, th), Tensor({2, 3}, 0.1));
                         }});
    }
    {
        Tensor w = random_tensor({4, 3}, rng);
        Tensor b = random_tensor({3}, rng);
        cases.push_back({"linear_x", random_tensor({2, 4}, rng), [w, b](Tape&, const Tensor& th) {
                             return ag::mean(ag::linear(th, w, b));
                         }});
        Tensor x = random_tensor({2, 4}, rng);
        cases.push_back({"linear_w", random_tensor({4, 3}, rng), [x, b](Tape&, const Tensor& th) {
                             return ag::mean(ag::linear(x, th, b));
                         }});
        cases.push_back({"linear_bias", random_tensor({3}, rng), [x, w](Tape&, const Tensor& th) {
                             return ag::mse(ag::linear(x, w, th), Tensor({2, 3}, 0.0));
                         }});
    }
    {
        Tensor w = random_tensor({3, 2, 3}, rng, 0.5);
        Tensor b = random_tensor({3}, rng, 0.5);
        Tensor x = random_tensor({2, 2, 8}, rng);
        cases.push_back({"conv1d_x", x, [w, b](Tape&, const Tensor& th) {
                             return ag::mean(ag::conv1d(th, w, b, 1, 1));
                         }});
        cases.push_back({"conv1d_w", w, [x, b](Tape&, const Tensor& th) {
                             return ag::mse(ag::conv1d(x, th, b, 1, 1), Tensor({2, 3, 8}, 0.0));
                         }});
        cases.push_back({"conv1d_bias", b, [x, w](Tape&, const Tensor& th) {
                             return ag::mean(ag::conv1d(x, w, th, 1, 1));
                         }});
        cases.push_back({"conv1d_strided", x, [w, b](Tape&, const Tensor& th) {
                             return ag::mean(ag::conv1d(th, w, b, 2, 0));
                         }});
    }
    {
        Tensor w = random_tensor({2, 3, 3, 3}, rng, 0.5);
        Tensor b = random_tensor({2}, rng, 0.5);
        Tensor x = random_tensor({2, 3, 6, 6}, rng);
        cases.push_back({"conv2d_x", x, [w, b](Tape&, const Tensor& th) {
                             return ag::mean(ag::conv2d(th, w, b, 1, 1));
                         }});
        cases.push_back({"conv2d_w", w, [x, b](Tape&, const Tensor& th) {
                             return ag::mse(ag::conv2d(x, th, b, 1, 1), Tensor({2, 2, 6, 6}, 0.0));
                         }});
        cases.push_back({"conv2d_strided", x, [w, b](Tape&, const Tensor& th) {
                             return ag::mean(ag::conv2d(th, w, b, 2, 1));
                         }});
    }
    cases.push_back({"avg_pool1d", random_tensor({2, 3, 8}, rng), [](Tape&, const Tensor& th) {
                         return ag::mse(ag::avg_pool1d(th, 2), Tensor({2, 3, 4}, 0.0));
                     }});
    cases.push_back({"avg_pool2d", random_tensor({1, 2, 6, 6}, rng), [](Tape&, const Tensor& th) {
                         return ag::mean(ag::avg_pool2d(th, 2));
                     }});
    cases.push_back({"upsample1d", random_tensor({2, 2, 5}, rng), [](Tape&, const Tensor& th) {
                         return ag::mse(ag::upsample1d(th, 2), Tensor({2, 2, 10}, 0.3));
                     }});
    cases.push_back({"upsample2d", random_tensor({1, 2, 3, 3}, rng), [](Tape&, const Tensor& th) {
                         return ag::mean(ag::upsample2d(th, 2));
                     }});
    {
        Tensor b = random_tensor({2, 3, 5}, rng);
        cases.push_back({"concat_channels", random_tensor({2, 2, 5}, rng),
                         [b](Tape&, const Tensor& th) {
                             return ag::mse(ag::concat_channels(th, b), Tensor({2, 5, 5}, 0.0));
                         }});
    }
    {
        Tensor gamma = random_tensor({2, 3}, rng, 0.3);
        Tensor beta = random_tensor({2, 3}, rng, 0.3);
        Tensor x = random_tensor({2, 3, 4}, rng);
        cases.push_back({"film_x", x, [gamma, beta](Tape&, const Tensor& th) {
                             return ag::mean(ag::film(th, gamma, beta));
                         }});
        cases.push_back({"film_gamma", gamma, [x, beta](Tape&, const Tensor& th) {
                             return ag::mse(ag::film(x, th, beta), Tensor({2, 3, 4}, 0.0));
                         }});
        cases.push_back({"film_beta", beta, [x, gamma](Tape&, const Tensor& th) {
                             return ag::mean(ag::film(x, gamma, th));
                         }});
    }
    cases.push_back({"global_avg_pool", random_tensor({3, 2, 7}, rng),
                     [](Tape&, const Tensor& th) {
                         return ag::mse(ag::global_avg_pool(th), Tensor({3, 2}, 0.0));
                     }});
    cases.push_back({"sum", random_tensor({9}, rng),
                     [](Tape&, const Tensor& th) { return ag::sum(th); }});
    cases.push_back({"mean", random_tensor({3, 3}, rng),
                     [](Tape&, const Tensor& th) { return ag::mean(th); }});
    {
        Tensor b = random_tensor({5}, rng);
        cases.push_back({"mse_lhs", random_tensor({5}, rng),
                         [b](Tape&, const Tensor& th) { return ag::mse(th, b); }});
        Tensor a = random_tensor({5}, rng);
        cases.push_back({"mse_rhs", random_tensor({5}, rng),
                         [a](Tape&, const Tensor& th) { return ag::mse(a, th); }});
    }
    {
        Tensor labels({6}, {1.0, 0.0, 1.0, 1.0, 0.0, 0.0});
        cases.push_back({"bce_with_logits", random_tensor({6}, rng, 2.0),
                         [labels](Tape&, const Tensor& th) {
                             return ag::bce_with_logits(th, labels);
                         }});
    }
    return cases;
}

} // namespace sftest
