#include "serpentflow/models.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "serpentflow/rng.hpp"

namespace serpentflow::models {

namespace {

constexpr double kPi = 3.14159265358979323846;

Tensor he_init(Shape shape, std::size_t fan_in, numerics::Rng& rng) {
    Tensor t(std::move(shape));
    const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (auto& v : t.mutable_data()) v = std * rng.normal();
    return t;
}

void check_batch_input(const Tensor& x, std::size_t spatial_dims, const Shape& grid,
                       const char* who) {
    const std::size_t rank = 2 + spatial_dims;
    if (x.shape.size() != rank || x.shape[1] != 1)
        throw ValidationError(std::string(who) + ": expected (B, 1, grid) input, got " +
                              numerics::shape_str(x.shape));
    for (std::size_t i = 0; i < spatial_dims; ++i)
        if (x.shape[2 + i] != grid[i])
            throw ValidationError(std::string(who) + ": input grid " +
                                  numerics::shape_str(x.shape) + " does not match model grid " +
                                  numerics::shape_str(grid));
}

// (B) -> (B, dim) with interleaved sin/cos at geometric frequencies; t is a
// plain conditioning input, no gradient flows through it.
Tensor time_embedding(const Tensor& t, std::size_t dim) {
    const std::size_t b = t.size();
    Tensor emb(Shape{b, dim});
    auto& data = emb.mutable_data();
    for (std::size_t bi = 0; bi < b; ++bi) {
        for (std::size_t i = 0; i < dim / 2; ++i) {
            const double freq = kPi * std::pow(2.0, static_cast<double>(i));
            data[bi * dim + 2 * i] = std::sin(freq * t[bi]);
            data[bi * dim + 2 * i + 1] = std::cos(freq * t[bi]);
        }
    }
    return emb;
}

std::string grid_string(const Shape& grid) {
    std::string s;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(grid[i]);
    }
    return s;
}

Shape parse_grid(const std::string& s) {
    Shape grid;
    std::size_t pos = 0;
    while (pos < s.size()) {
        const std::size_t next = s.find('x', pos);
        const std::string part = s.substr(pos, next == std::string::npos ? next : next - pos);
        grid.push_back(static_cast<std::size_t>(std::stoull(part)));
        if (next == std::string::npos) break;
        pos = next + 1;
    }
    return grid;
}

} // namespace

NamedGrads ParamBinding::gather(const Tape& tape) const {
    NamedGrads grads;
    grads.reserve(nodes.size());
    for (const auto& [name, node] : nodes) grads.emplace_back(name, tape.grad(node));
    return grads;
}

VelocityModel::VelocityModel(UNetConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.spatial_dims != 1 && cfg_.spatial_dims != 2)
        throw ValidationError("velocity model: spatial_dims must be 1 or 2");
    if (cfg_.grid.size() != cfg_.spatial_dims)
        throw ValidationError("velocity model: grid rank does not match spatial_dims");
    for (const std::size_t d : cfg_.grid)
        if (d < 4 || d % 2 != 0)
            throw ValidationError("velocity model: grid extents must be even and >= 4");
    if (cfg_.time_embed_dim % 2 != 0 || cfg_.time_embed_dim == 0)
        throw ValidationError("velocity model: time_embed_dim must be even");

    numerics::Rng rng(cfg_.init_seed);
    const std::size_t c0 = cfg_.base_width;
    const std::size_t c1 = 2 * cfg_.base_width;
    const std::size_t e = cfg_.time_embed_dim;
    const std::size_t h = 2 * e;
    const std::size_t kd = cfg_.spatial_dims == 2 ? 9 : 3;

    auto conv_param = [&](const std::string& name, std::size_t cout, std::size_t cin) {
        Shape ws = cfg_.spatial_dims == 2 ? Shape{cout, cin, 3, 3} : Shape{cout, cin, 3};
        params_.add(name + ".w", he_init(std::move(ws), cin * kd, rng));
        params_.add(name + ".b", Tensor(Shape{cout}, 0.0));
    };
    auto film_param = [&](const std::string& name, std::size_t channels) {
        params_.add(name + ".gw", Tensor(Shape{h, channels}, 0.0));
        params_.add(name + ".gb", Tensor(Shape{channels}, 0.0));
        params_.add(name + ".bw", Tensor(Shape{h, channels}, 0.0));
        params_.add(name + ".bb", Tensor(Shape{channels}, 0.0));
    };

    params_.add("time.w", he_init(Shape{e, h}, e, rng));
    params_.add("time.b", Tensor(Shape{h}, 0.0));
    conv_param("enc0a", c0, 1);
    film_param("film0", c0);
    conv_param("enc0b", c0, c0);
    conv_param("enc1a", c1, c0);
    film_param("film1", c1);
    conv_param("enc1b", c1, c1);
    conv_param("dec0a", c0, c1 + c0);
    film_param("film2", c0);
    conv_param("dec0b", c0, c0);
    // Zero-initialized output projection: the untrained flow is the identity.
    params_.add("out.w",
                Tensor(cfg_.spatial_dims == 2 ? Shape{1, c0, 3, 3} : Shape{1, c0, 3}, 0.0));
    params_.add("out.b", Tensor(Shape{1}, 0.0));
}

Tensor VelocityModel::forward(const Tensor& x, const Tensor& t) const {
    return forward_impl(nullptr, x, t, nullptr);
}

Tensor VelocityModel::forward(Tape& tape, const Tensor& x, const Tensor& t,
                              ParamBinding& binding) const {
    return forward_impl(&tape, x, t, &binding);
}

Tensor VelocityModel::forward_impl(Tape* tape, const Tensor& x, const Tensor& t,
                                   ParamBinding* binding) const {
    check_batch_input(x, cfg_.spatial_dims, cfg_.grid, "velocity model");
    if (t.shape != Shape{x.shape[0]})
        throw ValidationError("velocity model: t must have shape (B)");
    for (std::size_t i = 0; i < t.size(); ++i)
        if (!(t[i] >= 0.0 && t[i] <= 1.0))
            throw ValidationError("velocity model: t outside [0, 1]");

    auto P = [&](const std::string& name) -> Tensor {
        const Tensor& p = params_.get(name);
        if (!tape) return p;
        Tensor tracked = tape->leaf(p);
        if (binding) binding->nodes.emplace_back(name, tracked.node);
        return tracked;
    };
    const bool two_d = cfg_.spatial_dims == 2;
    auto conv = [&](const Tensor& in, const std::string& name) {
        return two_d ? numerics::conv2d(in, P(name + ".w"), P(name + ".b"), 1, 1)
                     : numerics::conv1d(in, P(name + ".w"), P(name + ".b"), 1, 1);
    };
    auto pool = [&](const Tensor& in) {
        return two_d ? numerics::avg_pool2d(in, 2) : numerics::avg_pool1d(in, 2);
    };
    auto up = [&](const Tensor& in) {
        return two_d ? numerics::upsample2d(in, 2) : numerics::upsample1d(in, 2);
    };
    auto film_site = [&](const Tensor& in, const Tensor& h, const std::string& name) {
        Tensor gamma = numerics::linear(h, P(name + ".gw"), P(name + ".gb"));
        Tensor beta = numerics::linear(h, P(name + ".bw"), P(name + ".bb"));
        return numerics::film(in, gamma, beta);
    };

    Tensor emb = time_embedding(t, cfg_.time_embed_dim);
    Tensor h = numerics::relu(numerics::linear(emb, P("time.w"), P("time.b")));

    Tensor a = numerics::relu(conv(x, "enc0a"));
    a = film_site(a, h, "film0");
    a = numerics::relu(conv(a, "enc0b"));

    Tensor e = numerics::relu(conv(pool(a), "enc1a"));
    e = film_site(e, h, "film1");
    e = numerics::relu(conv(e, "enc1b"));

    Tensor d = numerics::concat_channels(up(e), a);
    d = numerics::relu(conv(d, "dec0a"));
    d = film_site(d, h, "film2");
    d = numerics::relu(conv(d, "dec0b"));

    return conv(d, "out");
}

ClassifierModel::ClassifierModel(ClassifierConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.spatial_dims != 1 && cfg_.spatial_dims != 2)
        throw ValidationError("classifier: spatial_dims must be 1 or 2");
    if (cfg_.grid.size() != cfg_.spatial_dims)
        throw ValidationError("classifier: grid rank does not match spatial_dims");
    for (const std::size_t d : cfg_.grid)
        if (d < 8 || d % 8 != 0)
            throw ValidationError("classifier: grid extents must be multiples of 8");

    numerics::Rng rng(cfg_.init_seed);
    const std::size_t w = cfg_.base_width;
    const std::size_t kd = cfg_.spatial_dims == 2 ? 9 : 3;
    auto conv_param = [&](const std::string& name, std::size_t cout, std::size_t cin) {
        Shape ws = cfg_.spatial_dims == 2 ? Shape{cout, cin, 3, 3} : Shape{cout, cin, 3};
        params_.add(name + ".w", he_init(std::move(ws), cin * kd, rng));
        params_.add(name + ".b", Tensor(Shape{cout}, 0.0));
    };
    conv_param("c1", w, 1);
    conv_param("c2", 2 * w, w);
    conv_param("c3", 4 * w, 2 * w);
    params_.add("head.w", he_init(Shape{4 * w, 1}, 4 * w, rng));
    params_.add("head.b", Tensor(Shape{1}, 0.0));
}

Tensor ClassifierModel::logits(const Tensor& x) const { return logits_impl(nullptr, x, nullptr); }

Tensor ClassifierModel::logits(Tape& tape, const Tensor& x, ParamBinding& binding) const {
    return logits_impl(&tape, x, &binding);
}

Tensor ClassifierModel::logits_impl(Tape* tape, const Tensor& x, ParamBinding* binding) const {
    check_batch_input(x, cfg_.spatial_dims, cfg_.grid, "classifier");
    auto P = [&](const std::string& name) -> Tensor {
        const Tensor& p = params_.get(name);
        if (!tape) return p;
        Tensor tracked = tape->leaf(p);
        if (binding) binding->nodes.emplace_back(name, tracked.node);
        return tracked;
    };
    const bool two_d = cfg_.spatial_dims == 2;
    auto block = [&](const Tensor& in, const std::string& name) {
        Tensor h = two_d ? numerics::conv2d(in, P(name + ".w"), P(name + ".b"), 1, 1)
                         : numerics::conv1d(in, P(name + ".w"), P(name + ".b"), 1, 1);
        h = numerics::relu(h);
        return two_d ? numerics::avg_pool2d(h, 2) : numerics::avg_pool1d(h, 2);
    };
    Tensor h = block(x, "c1");
    h = block(h, "c2");
    h = block(h, "c3");
    Tensor pooled = numerics::global_avg_pool(h);
    return numerics::linear(pooled, P("head.w"), P("head.b"));
}

Tensor classifier_loss(const Tensor& logits, const Tensor& labels) {
    return numerics::bce_with_logits(logits, labels);
}

double classifier_accuracy(const Tensor& logits, const Tensor& labels) {
    if (logits.size() != labels.size() || logits.size() == 0)
        throw ValidationError("classifier_accuracy: size mismatch or empty batch");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const double pred = logits[i] > 0.0 ? 1.0 : 0.0;
        if (pred == labels[i]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(logits.size());
}

// ---- checkpoints -----------------------------------------------------------

std::string Checkpoint::meta_value(const std::string& key) const {
    for (const auto& [k, v] : meta)
        if (k == key) return v;
    throw ValidationError("checkpoint: missing manifest key '" + key + "'");
}

bool Checkpoint::has_meta(const std::string& key) const {
    for (const auto& [k, v] : meta)
        if (k == key) return true;
    return false;
}

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("checkpoint: cannot open '" + path + "' for writing");
    out << "sfck1";
    for (const auto& [k, v] : ck.meta) {
        if (k.find_first_of(" =\n") != std::string::npos ||
            v.find_first_of(" \n") != std::string::npos)
            throw ValidationError("checkpoint: manifest entries must not contain spaces");
        out << " " << k << "=" << v;
    }
    out << "\n";
    for (const auto& [name, tensor] : ck.tensors) {
        const std::uint32_t len = static_cast<std::uint32_t>(name.size());
        out.write(reinterpret_cast<const char*>(&len), sizeof(len));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        numerics::write_sftensor(out, tensor.shape, tensor.data());
    }
    if (!out) throw NumericError("checkpoint: write failed");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("checkpoint: cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line) || line.rfind("sfck1", 0) != 0)
        throw ValidationError("checkpoint: bad manifest line in '" + path + "'");
    Checkpoint ck;
    std::istringstream header(line);
    std::string token;
    header >> token; // magic
    while (header >> token) {
        const std::size_t eq = token.find('=');
        if (eq == std::string::npos)
            throw ValidationError("checkpoint: malformed manifest token '" + token + "'");
        ck.meta.emplace_back(token.substr(0, eq), token.substr(eq + 1));
    }
    while (in.peek() != EOF) {
        std::uint32_t len = 0;
        in.read(reinterpret_cast<char*>(&len), sizeof(len));
        if (!in) break;
        if (len > 256) throw ValidationError("checkpoint: implausible tensor name length");
        std::string name(len, '\0');
        in.read(name.data(), len);
        Shape shape;
        std::vector<double> data;
        numerics::read_sftensor(in, shape, data);
        ck.tensors.emplace_back(name, Tensor(std::move(shape), std::move(data)));
    }
    return ck;
}

namespace {

void fill_params_from_checkpoint(ParamStore& params, const Checkpoint& ck, const char* who) {
    if (ck.tensors.size() != params.size())
        throw ValidationError(std::string(who) + ": checkpoint holds " +
                              std::to_string(ck.tensors.size()) + " tensors, model expects " +
                              std::to_string(params.size()));
    for (const auto& [name, tensor] : ck.tensors) {
        Tensor& p = params.get(name);
        if (p.shape != tensor.shape)
            throw ValidationError(std::string(who) + ": shape of '" + name + "' is " +
                                  numerics::shape_str(tensor.shape) + ", expected " +
                                  numerics::shape_str(p.shape));
        p.mutable_data() = tensor.data();
    }
}

} // namespace

void VelocityModel::save(const std::string& path,
                         const std::vector<std::pair<std::string, std::string>>& extra) const {
    Checkpoint ck;
    ck.meta = {{"kind", "velocity"},
               {"dims", std::to_string(cfg_.spatial_dims)},
               {"grid", grid_string(cfg_.grid)},
               {"width", std::to_string(cfg_.base_width)},
               {"tembed", std::to_string(cfg_.time_embed_dim)},
               {"seed", std::to_string(cfg_.init_seed)}};
    for (const auto& kv : extra) ck.meta.push_back(kv);
    for (const auto& [name, tensor] : params_) ck.tensors.emplace_back(name, tensor);
    save_checkpoint(path, ck);
}

VelocityModel VelocityModel::load(const std::string& path,
                                  std::vector<std::pair<std::string, std::string>>* extra) {
    const Checkpoint ck = load_checkpoint(path);
    if (ck.meta_value("kind") != "velocity")
        throw ValidationError("checkpoint: '" + path + "' is not a velocity model");
    UNetConfig cfg;
    cfg.spatial_dims = std::stoul(ck.meta_value("dims"));
    cfg.grid = parse_grid(ck.meta_value("grid"));
    cfg.base_width = std::stoul(ck.meta_value("width"));
    cfg.time_embed_dim = std::stoul(ck.meta_value("tembed"));
    cfg.init_seed = std::stoull(ck.meta_value("seed"));
    VelocityModel model(cfg);
    fill_params_from_checkpoint(model.params_, ck, "velocity checkpoint");
    if (extra) *extra = ck.meta;
    return model;
}

void ClassifierModel::save(const std::string& path,
                           const std::vector<std::pair<std::string, std::string>>& extra) const {
    Checkpoint ck;
    ck.meta = {{"kind", "classifier"},
               {"dims", std::to_string(cfg_.spatial_dims)},
               {"grid", grid_string(cfg_.grid)},
               {"width", std::to_string(cfg_.base_width)},
               {"seed", std::to_string(cfg_.init_seed)}};
    for (const auto& kv : extra) ck.meta.push_back(kv);
    for (const auto& [name, tensor] : params_) ck.tensors.emplace_back(name, tensor);
    save_checkpoint(path, ck);
}

ClassifierModel ClassifierModel::load(
    const std::string& path, std::vector<std::pair<std::string, std::string>>* extra) {
    const Checkpoint ck = load_checkpoint(path);
    if (ck.meta_value("kind") != "classifier")
        throw ValidationError("checkpoint: '" + path + "' is not a classifier");
    ClassifierConfig cfg;
    cfg.spatial_dims = std::stoul(ck.meta_value("dims"));
    cfg.grid = parse_grid(ck.meta_value("grid"));
    cfg.base_width = std::stoul(ck.meta_value("width"));
    cfg.init_seed = std::stoull(ck.meta_value("seed"));
    ClassifierModel model(cfg);
    fill_params_from_checkpoint(model.params_, ck, "classifier checkpoint");
    if (extra) *extra = ck.meta;
    return model;
}

} // namespace serpentflow::models
