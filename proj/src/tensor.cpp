#include "serpentflow/tensor.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace serpentflow::numerics {

std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (const std::size_t d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << ")";
    return os.str();
}

bool all_finite(const std::vector<double>& v) {
    for (const double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

Tensor::Tensor(Shape s, std::vector<double> values)
    : shape(std::move(s)), buf(std::make_shared<std::vector<double>>(std::move(values))) {
    if (buf->size() != numel(shape))
        throw ValidationError("tensor: " + std::to_string(buf->size()) +
                              " values do not fill shape " + shape_str(shape));
}

std::vector<double>& Tensor::mutable_data() {
    if (buf.use_count() > 1) buf = std::make_shared<std::vector<double>>(*buf);
    return *buf;
}

double Tensor::item() const {
    if (size() != 1)
        throw ValidationError("tensor: item() on non-scalar shape " + shape_str(shape));
    return (*buf)[0];
}

Tensor& ParamStore::add(const std::string& name, Tensor value) {
    if (has(name)) throw ValidationError("params: duplicate name '" + name + "'");
    entries_.emplace_back(name, std::move(value));
    return entries_.back().second;
}

Tensor& ParamStore::get(const std::string& name) {
    for (auto& [n, t] : entries_)
        if (n == name) return t;
    throw ValidationError("params: unknown name '" + name + "'");
}

const Tensor& ParamStore::get(const std::string& name) const {
    for (const auto& [n, t] : entries_)
        if (n == name) return t;
    throw ValidationError("params: unknown name '" + name + "'");
}

bool ParamStore::has(const std::string& name) const {
    for (const auto& [n, t] : entries_)
        if (n == name) return true;
    return false;
}

std::size_t ParamStore::total_elements() const {
    std::size_t n = 0;
    for (const auto& [name, t] : entries_) n += t.size();
    return n;
}

namespace {

constexpr char kMagic[8] = {'S', 'F', 'T', 'E', 'N', 'S', 'O', 'R'};

template <typename T>
void write_le(std::ostream& out, T value) {
    // Host is little-endian on every supported target; memcpy keeps the
    // representation exact for doubles.
    char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    out.write(bytes, sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
    char bytes[sizeof(T)];
    in.read(bytes, sizeof(T));
    T value;
    std::memcpy(&value, bytes, sizeof(T));
    return value;
}

} // namespace

void write_sftensor(std::ostream& out, const Shape& shape, const std::vector<double>& data) {
    if (data.size() != numel(shape))
        throw ValidationError("sftensor: payload does not match shape " + shape_str(shape));
    out.write(kMagic, 8);
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(shape.size()));
    for (const std::size_t d : shape) write_le<std::uint64_t>(out, d);
    for (const double x : data) write_le<double>(out, x);
    if (!out) throw NumericError("sftensor: write failed");
}

void read_sftensor(std::istream& in, Shape& shape, std::vector<double>& data) {
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0)
        throw ValidationError("sftensor: bad magic");
    const std::uint32_t rank = read_le<std::uint32_t>(in);
    if (rank > 8) throw ValidationError("sftensor: implausible rank " + std::to_string(rank));
    shape.assign(rank, 0);
    for (std::uint32_t i = 0; i < rank; ++i)
        shape[i] = static_cast<std::size_t>(read_le<std::uint64_t>(in));
    const std::size_t n = numel(shape);
    data.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) data[i] = read_le<double>(in);
    if (!in) throw ValidationError("sftensor: truncated payload");
}

void save_sftensor(const std::string& path, const Shape& shape, const std::vector<double>& data) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("sftensor: cannot open '" + path + "' for writing");
    write_sftensor(out, shape, data);
}

void load_sftensor(const std::string& path, Shape& shape, std::vector<double>& data) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("sftensor: cannot open '" + path + "'");
    read_sftensor(in, shape, data);
}

} // namespace serpentflow::numerics
