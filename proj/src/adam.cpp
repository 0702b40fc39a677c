#include "serpentflow/adam.hpp"

#include <cmath>

namespace serpentflow::numerics {

AdamState::Moments& AdamState::moments_for(const std::string& name, std::size_t size) {
    for (auto& [n, m] : moments_)
        if (n == name) {
            if (m.m.size() != size)
                throw ValidationError("adam: moment shape changed for parameter '" + name + "'");
            return m;
        }
    moments_.emplace_back(name, Moments{std::vector<double>(size, 0.0),
                                        std::vector<double>(size, 0.0)});
    return moments_.back().second;
}

void AdamState::step(ParamStore& params, const NamedGrads& grads) {
    // Validate every gradient before mutating anything: a bad gradient must
    // reject the whole step.
    for (const auto& [name, g] : grads) {
        const Tensor& p = params.get(name);
        if (g.size() != p.size())
            throw ValidationError("adam: gradient size " + std::to_string(g.size()) +
                                  " does not match parameter '" + name + "' " +
                                  shape_str(p.shape));
        if (!all_finite(g))
            throw NumericError("adam: non-finite gradient for parameter '" + name + "'");
    }

    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));

    for (const auto& [name, g] : grads) {
        Tensor& p = params.get(name);
        Moments& mom = moments_for(name, p.size());
        auto& values = p.mutable_data();
        for (std::size_t i = 0; i < values.size(); ++i) {
            mom.m[i] = cfg_.beta1 * mom.m[i] + (1.0 - cfg_.beta1) * g[i];
            mom.v[i] = cfg_.beta2 * mom.v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
            const double mhat = mom.m[i] / bc1;
            const double vhat = mom.v[i] / bc2;
            values[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.epsilon);
        }
    }
}

} // namespace serpentflow::numerics
