#pragma once

#include <map>
#include <string>
#include <vector>

#include "serpentflow/adam.hpp"
#include "serpentflow/autograd.hpp"
#include "serpentflow/tensor.hpp"

namespace serpentflow::models {

using numerics::NamedGrads;
using numerics::ParamStore;
using numerics::Shape;
using numerics::Tape;
using numerics::Tensor;

// Tape-node handles of the parameters bound during one recorded forward
// pass; gather() pulls the matching gradients after backward().
struct ParamBinding {
    std::vector<std::pair<std::string, std::int64_t>> nodes;
    NamedGrads gather(const Tape& tape) const;
};

struct UNetConfig {
    std::size_t spatial_dims = 1; // 1 or 2
    Shape grid;                   // {L} or {H, W}; extents divisible by 2
    std::size_t base_width = 16;
    std::size_t time_embed_dim = 16;
    std::uint64_t init_seed = 1;
};

// Shallow encoder-decoder velocity field f(x, t): two resolution levels,
// skip concatenation, per-level FiLM conditioning on a sinusoidal embedding
// of t, zero-initialized output layer (the untrained flow is the identity
// transport).
class VelocityModel {
public:
    explicit VelocityModel(UNetConfig cfg);

    // x: (B, 1, spatial...), t: (B) with every entry in [0, 1].
    Tensor forward(const Tensor& x, const Tensor& t) const;
    Tensor forward(Tape& tape, const Tensor& x, const Tensor& t, ParamBinding& binding) const;

    const UNetConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

    void save(const std::string& path,
              const std::vector<std::pair<std::string, std::string>>& extra = {}) const;
    static VelocityModel load(const std::string& path,
                              std::vector<std::pair<std::string, std::string>>* extra = nullptr);

private:
    UNetConfig cfg_;
    ParamStore params_;

    Tensor forward_impl(Tape* tape, const Tensor& x, const Tensor& t,
                        ParamBinding* binding) const;
};

struct ClassifierConfig {
    std::size_t spatial_dims = 1;
    Shape grid; // extents divisible by 8 (three stride-2 pools)
    std::size_t base_width = 8;
    std::uint64_t init_seed = 1;
};

// Domain discriminator: three conv blocks with stride-2 average pooling,
// global average pooling, linear head emitting one logit per sample.
class ClassifierModel {
public:
    explicit ClassifierModel(ClassifierConfig cfg);

    // x: (B, 1, spatial...) -> logits (B, 1)
    Tensor logits(const Tensor& x) const;
    Tensor logits(Tape& tape, const Tensor& x, ParamBinding& binding) const;

    const ClassifierConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

    void save(const std::string& path,
              const std::vector<std::pair<std::string, std::string>>& extra = {}) const;
    static ClassifierModel load(const std::string& path,
                                std::vector<std::pair<std::string, std::string>>* extra = nullptr);

private:
    ClassifierConfig cfg_;
    ParamStore params_;

    Tensor logits_impl(Tape* tape, const Tensor& x, ParamBinding* binding) const;
};

// Stable binary cross-entropy on logits; labels are 0/1.
Tensor classifier_loss(const Tensor& logits, const Tensor& labels);

// Fraction of logits whose sign matches the label.
double classifier_accuracy(const Tensor& logits, const Tensor& labels);

// Checkpoint file: one UTF-8 manifest line "sfck1 k=v k=v ...", then an
// ordered list of [u32 name length][name][SFTENSOR payload] records.
struct Checkpoint {
    std::vector<std::pair<std::string, std::string>> meta;
    std::vector<std::pair<std::string, Tensor>> tensors;

    std::string meta_value(const std::string& key) const;
    bool has_meta(const std::string& key) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

} // namespace serpentflow::models
