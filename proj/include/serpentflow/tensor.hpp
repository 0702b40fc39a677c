#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "serpentflow/errors.hpp"

namespace serpentflow::numerics {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);
bool all_finite(const std::vector<double>& v);

class Tape;

// Dense row-major tensor of 64-bit floats. The buffer is shared so that a
// gradient tape can retain forward values without copying; mutation goes
// through mutable_data(), which unshares first.
struct Tensor {
    Shape shape;
    std::shared_ptr<std::vector<double>> buf;
    Tape* tape = nullptr;
    std::int64_t node = -1; // index on the tape, -1 when untracked

    Tensor() : buf(std::make_shared<std::vector<double>>()) {}
    Tensor(Shape s, double fill = 0.0)
        : shape(std::move(s)), buf(std::make_shared<std::vector<double>>(numel(shape), fill)) {}
    Tensor(Shape s, std::vector<double> values);

    static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

    const std::vector<double>& data() const { return *buf; }
    std::vector<double>& mutable_data();

    std::size_t size() const { return buf->size(); }
    bool requires_grad() const { return node >= 0; }
    double item() const;

    double operator[](std::size_t i) const { return (*buf)[i]; }
};

// Ordered collection of named parameter tensors. Iteration order is
// registration order; serialization and Adam state follow it.
class ParamStore {
public:
    Tensor& add(const std::string& name, Tensor value);
    Tensor& get(const std::string& name);
    const Tensor& get(const std::string& name) const;
    bool has(const std::string& name) const;

    std::size_t size() const { return entries_.size(); }
    std::size_t total_elements() const;

    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

private:
    std::vector<std::pair<std::string, Tensor>> entries_;
};

// SFTENSOR binary format: 8-byte magic "SFTENSOR", u32 rank, u64 dims,
// then row-major little-endian f64 payload.
void write_sftensor(std::ostream& out, const Shape& shape, const std::vector<double>& data);
void read_sftensor(std::istream& in, Shape& shape, std::vector<double>& data);
void save_sftensor(const std::string& path, const Shape& shape, const std::vector<double>& data);
void load_sftensor(const std::string& path, Shape& shape, std::vector<double>& data);

} // namespace serpentflow::numerics
