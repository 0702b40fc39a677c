#pragma once

#include <string>
#include <vector>

#include "serpentflow/tensor.hpp"

namespace serpentflow::numerics {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

using NamedGrads = std::vector<std::pair<std::string, std::vector<double>>>;

// Bias-corrected Adam. Moment buffers are created on first use per parameter
// and always match the parameter shape; the step counter increases once per
// call. A non-finite gradient rejects the whole step.
class AdamState {
public:
    explicit AdamState(AdamConfig cfg = {}) : cfg_(cfg) {}

    void step(ParamStore& params, const NamedGrads& grads);

    std::int64_t step_count() const { return t_; }
    const AdamConfig& config() const { return cfg_; }

private:
    struct Moments {
        std::vector<double> m, v;
    };
    AdamConfig cfg_;
    std::int64_t t_ = 0;
    std::vector<std::pair<std::string, Moments>> moments_;

    Moments& moments_for(const std::string& name, std::size_t size);
};

} // namespace serpentflow::numerics
