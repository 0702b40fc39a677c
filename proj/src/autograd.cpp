#include "serpentflow/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

namespace serpentflow::numerics {

namespace {

const char* op_name(Op op) {
    switch (op) {
        case Op::Leaf: return "leaf";
        case Op::Add: return "add";
        case Op::Sub: return "sub";
        case Op::Mul: return "mul";
        case Op::ScalarMul: return "scalar_mul";
        case Op::Relu: return "relu";
        case Op::MatMul: return "matmul";
        case Op::Linear: return "linear";
        case Op::Conv1d: return "conv1d";
        case Op::Conv2d: return "conv2d";
        case Op::AvgPool1d: return "avg_pool1d";
        case Op::AvgPool2d: return "avg_pool2d";
        case Op::Upsample1d: return "upsample1d";
        case Op::Upsample2d: return "upsample2d";
        case Op::ConcatChannels: return "concat_channels";
        case Op::Film: return "film";
        case Op::GlobalAvgPool: return "global_avg_pool";
        case Op::Sum: return "sum";
        case Op::Mean: return "mean";
        case Op::Mse: return "mse";
        case Op::BceLogits: return "bce_with_logits";
    }
    return "?";
}

[[noreturn]] void shape_error(Op op, const Shape& a, const Shape& b) {
    throw ValidationError(std::string(op_name(op)) + ": shape mismatch " + shape_str(a) +
                          " vs " + shape_str(b));
}

void require_rank(Op op, const Tensor& t, std::size_t rank) {
    if (t.shape.size() != rank)
        throw ValidationError(std::string(op_name(op)) + ": expected rank " +
                              std::to_string(rank) + " input, got shape " + shape_str(t.shape));
}

Tape* common_tape(const Tensor& a) { return a.requires_grad() ? a.tape : nullptr; }

Tape* common_tape(const Tensor& a, const Tensor& b) {
    Tape* ta = common_tape(a);
    Tape* tb = common_tape(b);
    if (ta && tb && ta != tb)
        throw ValidationError("autograd: operands recorded on different tapes");
    return ta ? ta : tb;
}

Tape* common_tape(const Tensor& a, const Tensor& b, const Tensor& c) {
    Tape* t = common_tape(a, b);
    Tape* tc = common_tape(c);
    if (t && tc && t != tc)
        throw ValidationError("autograd: operands recorded on different tapes");
    return t ? t : tc;
}

Tensor make_result(Tape* tape, Op op, Shape shape, std::vector<double> values,
                   std::initializer_list<const Tensor*> inputs, std::int64_t i0 = 0,
                   std::int64_t i1 = 0, double a0 = 0.0) {
    Tensor out(std::move(shape), std::move(values));
    if (!tape) return out;
    Tape::Node node;
    node.op = op;
    node.shape = out.shape;
    node.i0 = i0;
    node.i1 = i1;
    node.a0 = a0;
    std::size_t slot = 0;
    for (const Tensor* t : inputs) {
        node.in[slot] = (t->tape == tape) ? t->node : -1;
        node.vals[slot] = t->buf;
        node.in_shapes[slot] = t->shape;
        ++slot;
    }
    out.tape = tape;
    out.node = tape->record(std::move(node));
    return out;
}

// ---- dense kernels ------------------------------------------------------

void matmul_forward(const double* a, const double* b, double* out, std::size_t m, std::size_t k,
                    std::size_t n) {
    std::fill(out, out + m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* orow = out + i * n;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = arow[kk];
            const double* brow = b + kk * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
}

struct ConvDims {
    std::size_t batch, cin, cout;
    std::size_t h, w;   // input spatial (h=1 for 1d)
    std::size_t kh, kw; // kernel (kh=1 for 1d)
    std::size_t oh, ow;
    std::int64_t stride, pad;
};

std::size_t conv_out_extent(std::size_t in, std::size_t k, std::int64_t stride, std::int64_t pad) {
    const std::int64_t span = static_cast<std::int64_t>(in) + 2 * pad - static_cast<std::int64_t>(k);
    if (span < 0) return 0;
    return static_cast<std::size_t>(span / stride) + 1;
}

inline void conv_ox_range(std::size_t w, std::size_t kx, std::int64_t stride, std::int64_t pad,
                          std::size_t ow, std::int64_t& lo, std::int64_t& hi) {
    lo = 0;
    const std::int64_t t = pad - static_cast<std::int64_t>(kx);
    if (t > 0) lo = (t + stride - 1) / stride;
    hi = (static_cast<std::int64_t>(w) - 1 - static_cast<std::int64_t>(kx) + pad) / stride + 1;
    if (hi > static_cast<std::int64_t>(ow)) hi = static_cast<std::int64_t>(ow);
}

// Loops are ordered so that one output row stays hot across all
// (ci, ky, kx) contributions; the inner loop is a contiguous FMA sweep.
void conv2d_forward(const double* x, const double* w, const double* bias, double* out,
                    const ConvDims& d) {
    for (std::size_t b = 0; b < d.batch; ++b) {
        for (std::size_t co = 0; co < d.cout; ++co) {
            double* ob = out + (b * d.cout + co) * d.oh * d.ow;
            for (std::size_t oy = 0; oy < d.oh; ++oy) {
                double* orow = ob + oy * d.ow;
                std::fill(orow, orow + d.ow, bias ? bias[co] : 0.0);
                for (std::size_t ci = 0; ci < d.cin; ++ci) {
                    const double* xb = x + (b * d.cin + ci) * d.h * d.w;
                    const double* wb = w + (co * d.cin + ci) * d.kh * d.kw;
                    for (std::size_t ky = 0; ky < d.kh; ++ky) {
                        const std::int64_t iy = static_cast<std::int64_t>(oy) * d.stride +
                                                static_cast<std::int64_t>(ky) - d.pad;
                        if (iy < 0 || iy >= static_cast<std::int64_t>(d.h)) continue;
                        const double* xrow = xb + iy * d.w;
                        for (std::size_t kx = 0; kx < d.kw; ++kx) {
                            const double wv = wb[ky * d.kw + kx];
                            std::int64_t lo, hi;
                            conv_ox_range(d.w, kx, d.stride, d.pad, d.ow, lo, hi);
                            if (hi <= lo) continue;
                            const std::int64_t off = static_cast<std::int64_t>(kx) - d.pad;
                            if (d.stride == 1) {
                                const double* xs = xrow + off;
                                for (std::int64_t ox = lo; ox < hi; ++ox)
                                    orow[ox] += wv * xs[ox];
                            } else {
                                for (std::int64_t ox = lo; ox < hi; ++ox)
                                    orow[ox] += wv * xrow[ox * d.stride + off];
                            }
                        }
                    }
                }
            }
        }
    }
}

void conv2d_backward_input(const double* g, const double* w, double* gx, const ConvDims& d) {
    for (std::size_t b = 0; b < d.batch; ++b) {
        for (std::size_t ci = 0; ci < d.cin; ++ci) {
            double* xb = gx + (b * d.cin + ci) * d.h * d.w;
            if (d.stride == 1) {
                // One grad-input row stays hot across all (co, ky, kx).
                for (std::size_t iy = 0; iy < d.h; ++iy) {
                    double* xrow = xb + iy * d.w;
                    for (std::size_t co = 0; co < d.cout; ++co) {
                        const double* gb = g + (b * d.cout + co) * d.oh * d.ow;
                        const double* wb = w + (co * d.cin + ci) * d.kh * d.kw;
                        for (std::size_t ky = 0; ky < d.kh; ++ky) {
                            const std::int64_t oy = static_cast<std::int64_t>(iy) -
                                                    static_cast<std::int64_t>(ky) + d.pad;
                            if (oy < 0 || oy >= static_cast<std::int64_t>(d.oh)) continue;
                            const double* grow = gb + oy * d.ow;
                            for (std::size_t kx = 0; kx < d.kw; ++kx) {
                                const double wv = wb[ky * d.kw + kx];
                                // ix = ox + kx - pad, with ox in [0, ow)
                                const std::int64_t off = static_cast<std::int64_t>(kx) - d.pad;
                                const std::int64_t ix_lo = std::max<std::int64_t>(0, off);
                                const std::int64_t ix_hi = std::min<std::int64_t>(
                                    static_cast<std::int64_t>(d.w),
                                    static_cast<std::int64_t>(d.ow) + off);
                                const double* gs = grow - off;
                                for (std::int64_t ix = ix_lo; ix < ix_hi; ++ix)
                                    xrow[ix] += wv * gs[ix];
                            }
                        }
                    }
                }
            } else {
                for (std::size_t co = 0; co < d.cout; ++co) {
                    const double* gb = g + (b * d.cout + co) * d.oh * d.ow;
                    const double* wb = w + (co * d.cin + ci) * d.kh * d.kw;
                    for (std::size_t ky = 0; ky < d.kh; ++ky) {
                        for (std::size_t kx = 0; kx < d.kw; ++kx) {
                            const double wv = wb[ky * d.kw + kx];
                            std::int64_t lo, hi;
                            conv_ox_range(d.w, kx, d.stride, d.pad, d.ow, lo, hi);
                            if (hi <= lo) continue;
                            const std::int64_t off = static_cast<std::int64_t>(kx) - d.pad;
                            for (std::size_t oy = 0; oy < d.oh; ++oy) {
                                const std::int64_t iy = static_cast<std::int64_t>(oy) * d.stride +
                                                        static_cast<std::int64_t>(ky) - d.pad;
                                if (iy < 0 || iy >= static_cast<std::int64_t>(d.h)) continue;
                                double* xrow = xb + iy * d.w;
                                const double* grow = gb + oy * d.ow;
                                for (std::int64_t ox = lo; ox < hi; ++ox)
                                    xrow[ox * d.stride + off] += wv * grow[ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

void conv2d_backward_weight(const double* g, const double* x, double* gw, double* gbias,
                            const ConvDims& d) {
    if (gbias) {
        for (std::size_t co = 0; co < d.cout; ++co) {
            double acc = 0.0;
            for (std::size_t b = 0; b < d.batch; ++b) {
                const double* gb = g + (b * d.cout + co) * d.oh * d.ow;
                for (std::size_t i = 0; i < d.oh * d.ow; ++i) acc += gb[i];
            }
            gbias[co] += acc;
        }
    }
    // The whole weight-gradient tile is small enough to stay in L1, so the
    // sweep is ordered to stream g and x exactly once.
    for (std::size_t b = 0; b < d.batch; ++b) {
        for (std::size_t oy = 0; oy < d.oh; ++oy) {
            for (std::size_t co = 0; co < d.cout; ++co) {
                const double* grow = g + ((b * d.cout + co) * d.oh + oy) * d.ow;
                for (std::size_t ci = 0; ci < d.cin; ++ci) {
                    const double* xb = x + (b * d.cin + ci) * d.h * d.w;
                    double* gwb = gw + (co * d.cin + ci) * d.kh * d.kw;
                    for (std::size_t ky = 0; ky < d.kh; ++ky) {
                        const std::int64_t iy = static_cast<std::int64_t>(oy) * d.stride +
                                                static_cast<std::int64_t>(ky) - d.pad;
                        if (iy < 0 || iy >= static_cast<std::int64_t>(d.h)) continue;
                        const double* xrow = xb + iy * d.w;
                        for (std::size_t kx = 0; kx < d.kw; ++kx) {
                            std::int64_t lo, hi;
                            conv_ox_range(d.w, kx, d.stride, d.pad, d.ow, lo, hi);
                            if (hi <= lo) continue;
                            const std::int64_t off = static_cast<std::int64_t>(kx) - d.pad;
                            double acc = 0.0;
                            if (d.stride == 1) {
                                const double* xs = xrow + off;
                                for (std::int64_t ox = lo; ox < hi; ++ox)
                                    acc += grow[ox] * xs[ox];
                            } else {
                                for (std::int64_t ox = lo; ox < hi; ++ox)
                                    acc += grow[ox] * xrow[ox * d.stride + off];
                            }
                            gwb[ky * d.kw + kx] += acc;
                        }
                    }
                }
            }
        }
    }
}

// Stride-1 2D convolutions run through a per-output-row im2col tile (a few
// KB, L1-resident) with register-blocked accumulation: one load and one FMA
// per MAC, no output re-loads. The host streams main memory almost an order
// of magnitude slower than it computes from L1, so keeping the working set
// tiny matters more than avoiding the tile-build copies.
constexpr std::size_t kAccBlock = 16;

// tile[r][ox], r = (ci*kh + ky)*kw + kx, holding x[ci, oy+ky-pad, ox+kx-pad]
// with zeros outside the grid.
void rowtile_build(const double* xb, double* tile, const ConvDims& d, std::size_t oy) {
    for (std::size_t ci = 0; ci < d.cin; ++ci) {
        for (std::size_t ky = 0; ky < d.kh; ++ky) {
            const std::int64_t iy =
                static_cast<std::int64_t>(oy) + static_cast<std::int64_t>(ky) - d.pad;
            for (std::size_t kx = 0; kx < d.kw; ++kx) {
                double* dst = tile + ((ci * d.kh + ky) * d.kw + kx) * d.ow;
                if (iy < 0 || iy >= static_cast<std::int64_t>(d.h)) {
                    std::fill(dst, dst + d.ow, 0.0);
                    continue;
                }
                std::int64_t lo, hi;
                conv_ox_range(d.w, kx, 1, d.pad, d.ow, lo, hi);
                const std::int64_t off = static_cast<std::int64_t>(kx) - d.pad;
                const double* xrow = xb + (ci * d.h + static_cast<std::size_t>(iy)) * d.w;
                std::fill(dst, dst + lo, 0.0);
                std::memcpy(dst + lo, xrow + lo + off,
                            static_cast<std::size_t>(hi - lo) * sizeof(double));
                std::fill(dst + hi, dst + d.ow, 0.0);
            }
        }
    }
}

void conv2d_rowtile(const double* x, const double* w, const double* bias, double* out,
                    const ConvDims& d, bool accumulate) {
    const std::size_t rows = d.cin * d.kh * d.kw;
    std::vector<double> tile(rows * d.ow);
    for (std::size_t b = 0; b < d.batch; ++b) {
        const double* xb = x + b * d.cin * d.h * d.w;
        for (std::size_t oy = 0; oy < d.oh; ++oy) {
            rowtile_build(xb, tile.data(), d, oy);
            for (std::size_t co = 0; co < d.cout; ++co) {
                const double* wrow = w + co * rows;
                double* orow = out + ((b * d.cout + co) * d.oh + oy) * d.ow;
                const double bv = bias ? bias[co] : 0.0;
                for (std::size_t ox0 = 0; ox0 < d.ow; ox0 += kAccBlock) {
                    const std::size_t bl = std::min(kAccBlock, d.ow - ox0);
                    double acc[kAccBlock] = {};
                    for (std::size_t r = 0; r < rows; ++r) {
                        const double wv = wrow[r];
                        const double* ts = tile.data() + r * d.ow + ox0;
                        for (std::size_t i = 0; i < bl; ++i) acc[i] += wv * ts[i];
                    }
                    if (accumulate)
                        for (std::size_t i = 0; i < bl; ++i) orow[ox0 + i] += acc[i] + bv;
                    else
                        for (std::size_t i = 0; i < bl; ++i) orow[ox0 + i] = acc[i] + bv;
                }
            }
        }
    }
}

// Gradient w.r.t. the input is the correlation of g with the flipped kernel
// and channel roles swapped; it reuses the row-tile engine in accumulate
// mode.
void conv2d_backward_input_rowtile(const double* g, const double* w, double* gx,
                                   const ConvDims& d) {
    std::vector<double> wflip(d.cin * d.cout * d.kh * d.kw);
    for (std::size_t co = 0; co < d.cout; ++co)
        for (std::size_t ci = 0; ci < d.cin; ++ci)
            for (std::size_t ky = 0; ky < d.kh; ++ky)
                for (std::size_t kx = 0; kx < d.kw; ++kx)
                    wflip[((ci * d.cout + co) * d.kh + (d.kh - 1 - ky)) * d.kw +
                          (d.kw - 1 - kx)] = w[((co * d.cin + ci) * d.kh + ky) * d.kw + kx];
    ConvDims t{};
    t.batch = d.batch;
    t.cin = d.cout;
    t.cout = d.cin;
    t.h = d.oh;
    t.w = d.ow;
    t.kh = d.kh;
    t.kw = d.kw;
    t.stride = 1;
    t.pad = static_cast<std::int64_t>(d.kh) - 1 - d.pad;
    t.oh = d.h;
    t.ow = d.w;
    conv2d_rowtile(g, wflip.data(), nullptr, gx, t, true);
}

void conv2d_backward_weight_rowtile(const double* g, const double* x, double* gw, double* gbias,
                                    const ConvDims& d) {
    const std::size_t rows = d.cin * d.kh * d.kw;
    std::vector<double> tile(rows * d.ow);
    for (std::size_t b = 0; b < d.batch; ++b) {
        const double* xb = x + b * d.cin * d.h * d.w;
        const double* gb = g + b * d.cout * d.oh * d.ow;
        if (gbias) {
            for (std::size_t co = 0; co < d.cout; ++co) {
                double acc = 0.0;
                const double* grow = gb + co * d.oh * d.ow;
                for (std::size_t j = 0; j < d.oh * d.ow; ++j) acc += grow[j];
                gbias[co] += acc;
            }
        }
        if (!gw) continue;
        for (std::size_t oy = 0; oy < d.oh; ++oy) {
            rowtile_build(xb, tile.data(), d, oy);
            for (std::size_t co = 0; co < d.cout; ++co) {
                const double* grow = gb + (co * d.oh + oy) * d.ow;
                double* gwrow = gw + co * rows;
                for (std::size_t r = 0; r < rows; ++r) {
                    const double* ts = tile.data() + r * d.ow;
                    double acc = 0.0;
                    for (std::size_t j = 0; j < d.ow; ++j) acc += grow[j] * ts[j];
                    gwrow[r] += acc;
                }
            }
        }
    }
}

ConvDims conv_dims_from_node(const Tape::Node& n, bool two_d) {
    ConvDims d{};
    const Shape& xs = n.in_shapes[0];
    const Shape& ws = n.in_shapes[1];
    d.batch = xs[0];
    d.cin = xs[1];
    d.h = two_d ? xs[2] : 1;
    d.w = two_d ? xs[3] : xs[2];
    d.cout = ws[0];
    d.kh = two_d ? ws[2] : 1;
    d.kw = two_d ? ws[3] : ws[2];
    d.stride = n.i0;
    d.pad = n.i1;
    d.oh = two_d ? n.shape[2] : 1;
    d.ow = two_d ? n.shape[3] : n.shape[2];
    return d;
}

double stable_softplus(double x) {
    return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

} // namespace

// ---- tape ----------------------------------------------------------------

Tensor Tape::leaf(const Tensor& value) {
    Node node;
    node.op = Op::Leaf;
    node.shape = value.shape;
    node.vals[0] = value.buf;
    node.in_shapes[0] = value.shape;
    Tensor out;
    out.shape = value.shape;
    out.buf = value.buf;
    out.tape = this;
    out.node = record(std::move(node));
    return out;
}

std::int64_t Tape::record(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<std::int64_t>(nodes_.size() - 1);
}

void Tape::clear() {
    nodes_.clear();
    grads_.clear();
    has_grads_ = false;
}

const std::vector<double>& Tape::grad(const Tensor& t) const {
    if (t.tape != this || t.node < 0)
        throw ValidationError("autograd: tensor is not tracked on this tape");
    return grad(t.node);
}

const std::vector<double>& Tape::grad(std::int64_t node) const {
    if (!has_grads_) throw ValidationError("autograd: backward() has not run");
    return grads_[static_cast<std::size_t>(node)];
}

void Tape::backward(const Tensor& loss) {
    if (loss.tape != this || loss.node < 0)
        throw ValidationError("autograd: loss is not tracked on this tape");
    if (loss.size() != 1)
        throw ValidationError("autograd: backward requires a scalar loss, got shape " +
                              shape_str(loss.shape));
    grads_.assign(nodes_.size(), {});
    grads_[static_cast<std::size_t>(loss.node)] = {1.0};

    auto acc = [&](std::int64_t id, const Shape& shape) -> std::vector<double>& {
        auto& g = grads_[static_cast<std::size_t>(id)];
        if (g.empty()) g.assign(numel(shape), 0.0);
        return g;
    };

    for (std::int64_t id = loss.node; id >= 0; --id) {
        const Node& n = nodes_[static_cast<std::size_t>(id)];
        const auto& g = grads_[static_cast<std::size_t>(id)];
        if (g.empty() || n.op == Op::Leaf) continue;
        const std::size_t n_out = numel(n.shape);

        auto in_val = [&](std::size_t slot) -> const std::vector<double>& { return *n.vals[slot]; };
        auto want = [&](std::size_t slot) { return n.in[slot] >= 0; };

        switch (n.op) {
            case Op::Leaf:
                break;
            case Op::Add: {
                for (std::size_t slot = 0; slot < 2; ++slot) {
                    if (!want(slot)) continue;
                    auto& gi = acc(n.in[slot], n.in_shapes[slot]);
                    for (std::size_t i = 0; i < n_out; ++i) gi[i] += g[i];
                }
                break;
            }
            case Op::Sub: {
                if (want(0)) {
                    auto& gi = acc(n.in[0], n.in_shapes[0]);
                    for (std::size_t i = 0; i < n_out; ++i) gi[i] += g[i];
                }
                if (want(1)) {
                    auto& gi = acc(n.in[1], n.in_shapes[1]);
                    for (std::size_t i = 0; i < n_out; ++i) gi[i] -= g[i];
                }
                break;
            }
            case Op::Mul: {
                if (want(0)) {
                    auto& gi = acc(n.in[0], n.in_shapes[0]);
                    const auto& b = in_val(1);
                    for (std::size_t i = 0; i < n_out; ++i) gi[i] += g[i] * b[i];
                }
                if (want(1)) {
                    auto& gi = acc(n.in[1], n.in_shapes[1]);
                    const auto& a = in_val(0);
                    for (std::size_t i = 0; i < n_out; ++i) gi[i] += g[i] * a[i];
                }
                break;
            }
            case Op::ScalarMul: {
                if (want(0)) {
                    auto& gi = acc(n.in[0], n.in_shapes[0]);
                    for (std::size_t i = 0; i < n_out; ++i) gi[i] += g[i] * n.a0;
                }
                break;
            }
            case Op::Relu: {
                if (want(0)) {
                    auto& gi = acc(n.in[0], n.in_shapes[0]);
                    const auto& x = in_val(0);
                    for (std::size_t i = 0; i < n_out; ++i)
                        if (x[i] > 0.0) gi[i] += g[i];
                }
                break;
            }
            case Op::MatMul: {
                const std::size_t m = n.in_shapes[0][0];
                const std::size_t k = n.in_shapes[0][1];
                const std::size_t nn = n.in_shapes[1][1];
                if (want(0)) {
                    auto& ga = acc(n.in[0], n.in_shapes[0]);
                    const auto& b = in_val(1);
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t kk = 0; kk < k; ++kk) {
                            double s = 0.0;
                            const double* grow = g.data() + i * nn;
                            const double* brow = b.data() + kk * nn;
                            for (std::size_t j = 0; j < nn; ++j) s += grow[j] * brow[j];
                            ga[i * k + kk] += s;
                        }
                }
                if (want(1)) {
                    auto& gb = acc(n.in[1], n.in_shapes[1]);
                    const auto& a = in_val(0);
                    for (std::size_t kk = 0; kk < k; ++kk)
                        for (std::size_t i = 0; i < m; ++i) {
                            const double av = a[i * k + kk];
                            const double* grow = g.data() + i * nn;
                            double* grow_b = gb.data() + kk * nn;
                            for (std::size_t j = 0; j < nn; ++j) grow_b[j] += av * grow[j];
                        }
                }
                break;
            }
            case Op::Linear: {
                const std::size_t bsz = n.in_shapes[0][0];
                const std::size_t in_f = n.in_shapes[0][1];
                const std::size_t out_f = n.in_shapes[1][1];
                if (want(0)) {
                    auto& gx = acc(n.in[0], n.in_shapes[0]);
                    const auto& w = in_val(1);
                    for (std::size_t i = 0; i < bsz; ++i)
                        for (std::size_t kk = 0; kk < in_f; ++kk) {
                            double s = 0.0;
                            const double* grow = g.data() + i * out_f;
                            const double* wrow = w.data() + kk * out_f;
                            for (std::size_t j = 0; j < out_f; ++j) s += grow[j] * wrow[j];
                            gx[i * in_f + kk] += s;
                        }
                }
                if (want(1)) {
                    auto& gw = acc(n.in[1], n.in_shapes[1]);
                    const auto& x = in_val(0);
                    for (std::size_t kk = 0; kk < in_f; ++kk)
                        for (std::size_t i = 0; i < bsz; ++i) {
                            const double xv = x[i * in_f + kk];
                            const double* grow = g.data() + i * out_f;
                            double* grow_w = gw.data() + kk * out_f;
                            for (std::size_t j = 0; j < out_f; ++j) grow_w[j] += xv * grow[j];
                        }
                }
                if (want(2)) {
                    auto& gb = acc(n.in[2], n.in_shapes[2]);
                    for (std::size_t i = 0; i < bsz; ++i)
                        for (std::size_t j = 0; j < out_f; ++j) gb[j] += g[i * out_f + j];
                }
                break;
            }
            case Op::Conv1d:
            case Op::Conv2d: {
                const bool two_d = (n.op == Op::Conv2d);
                const ConvDims d = conv_dims_from_node(n, two_d);
                if (two_d && d.stride == 1) {
                    double* gx = want(0) ? acc(n.in[0], n.in_shapes[0]).data() : nullptr;
                    double* gw = want(1) ? acc(n.in[1], n.in_shapes[1]).data() : nullptr;
                    double* gb = want(2) ? acc(n.in[2], n.in_shapes[2]).data() : nullptr;
                    if (gx) conv2d_backward_input_rowtile(g.data(), in_val(1).data(), gx, d);
                    if (gw || gb)
                        conv2d_backward_weight_rowtile(g.data(), in_val(0).data(), gw, gb, d);
                    break;
                }
                if (want(0)) {
                    auto& gx = acc(n.in[0], n.in_shapes[0]);
                    conv2d_backward_input(g.data(), in_val(1).data(), gx.data(), d);
                }
                if (want(1) || want(2)) {
                    std::vector<double> scratch_w;
                    double* gw = nullptr;
                    double* gb = nullptr;
                    if (want(1)) gw = acc(n.in[1], n.in_shapes[1]).data();
                    else {
                        scratch_w.assign(numel(n.in_shapes[1]), 0.0);
                        gw = scratch_w.data();
                    }
                    if (want(2)) gb = acc(n.in[2], n.in_shapes[2]).data();
                    conv2d_backward_weight(g.data(), in_val(0).data(), gw, gb, d);
                }
                break;
            }
            case Op::AvgPool1d:
            case Op::AvgPool2d: {
                if (!want(0)) break;
                auto& gx = acc(n.in[0], n.in_shapes[0]);
                const std::size_t win = static_cast<std::size_t>(n.i0);
                const bool two_d = (n.op == Op::AvgPool2d);
                const Shape& xs = n.in_shapes[0];
                const std::size_t bc = xs[0] * xs[1];
                if (two_d) {
                    const std::size_t h = xs[2], w = xs[3];
                    const std::size_t oh = n.shape[2], ow = n.shape[3];
                    const double inv = 1.0 / static_cast<double>(win * win);
                    for (std::size_t c = 0; c < bc; ++c)
                        for (std::size_t oy = 0; oy < oh; ++oy)
                            for (std::size_t ox = 0; ox < ow; ++ox) {
                                const double gv = g[(c * oh + oy) * ow + ox] * inv;
                                for (std::size_t dy = 0; dy < win; ++dy)
                                    for (std::size_t dx = 0; dx < win; ++dx)
                                        gx[(c * h + oy * win + dy) * w + ox * win + dx] += gv;
                            }
                } else {
                    const std::size_t l = xs[2];
                    const std::size_t ol = n.shape[2];
                    const double inv = 1.0 / static_cast<double>(win);
                    for (std::size_t c = 0; c < bc; ++c)
                        for (std::size_t o = 0; o < ol; ++o) {
                            const double gv = g[c * ol + o] * inv;
                            for (std::size_t dxi = 0; dxi < win; ++dxi)
                                gx[c * l + o * win + dxi] += gv;
                        }
                }
                break;
            }
            case Op::Upsample1d:
            case Op::Upsample2d: {
                if (!want(0)) break;
                auto& gx = acc(n.in[0], n.in_shapes[0]);
                const std::size_t f = static_cast<std::size_t>(n.i0);
                const bool two_d = (n.op == Op::Upsample2d);
                const Shape& xs = n.in_shapes[0];
                const std::size_t bc = xs[0] * xs[1];
                if (two_d) {
                    const std::size_t h = xs[2], w = xs[3];
                    const std::size_t oh = n.shape[2], ow = n.shape[3];
                    for (std::size_t c = 0; c < bc; ++c)
                        for (std::size_t y = 0; y < h; ++y)
                            for (std::size_t x = 0; x < w; ++x) {
                                double s = 0.0;
                                for (std::size_t dy = 0; dy < f; ++dy)
                                    for (std::size_t dx = 0; dx < f; ++dx)
                                        s += g[(c * oh + y * f + dy) * ow + x * f + dx];
                                gx[(c * h + y) * w + x] += s;
                            }
                } else {
                    const std::size_t l = xs[2];
                    const std::size_t ol = n.shape[2];
                    for (std::size_t c = 0; c < bc; ++c)
                        for (std::size_t x = 0; x < l; ++x) {
                            double s = 0.0;
                            for (std::size_t dxi = 0; dxi < f; ++dxi) s += g[c * ol + x * f + dxi];
                            gx[c * l + x] += s;
                        }
                }
                break;
            }
            case Op::ConcatChannels: {
                const std::size_t b = n.shape[0];
                std::size_t tail = 1;
                for (std::size_t i = 2; i < n.shape.size(); ++i) tail *= n.shape[i];
                const std::size_t c1 = n.in_shapes[0][1];
                const std::size_t c2 = n.in_shapes[1][1];
                const std::size_t c = c1 + c2;
                if (want(0)) {
                    auto& ga = acc(n.in[0], n.in_shapes[0]);
                    for (std::size_t bi = 0; bi < b; ++bi)
                        std::memcpy(ga.data() + bi * c1 * tail, g.data() + bi * c * tail,
                                    c1 * tail * sizeof(double));
                }
                if (want(1)) {
                    auto& gb = acc(n.in[1], n.in_shapes[1]);
                    for (std::size_t bi = 0; bi < b; ++bi)
                        std::memcpy(gb.data() + bi * c2 * tail, g.data() + (bi * c + c1) * tail,
                                    c2 * tail * sizeof(double));
                }
                break;
            }
            case Op::Film: {
                const std::size_t b = n.shape[0];
                const std::size_t c = n.shape[1];
                std::size_t tail = 1;
                for (std::size_t i = 2; i < n.shape.size(); ++i) tail *= n.shape[i];
                const auto& x = in_val(0);
                const auto& gamma = in_val(1);
                if (want(0)) {
                    auto& gx = acc(n.in[0], n.in_shapes[0]);
                    for (std::size_t bi = 0; bi < b; ++bi)
                        for (std::size_t ci = 0; ci < c; ++ci) {
                            const double scale = 1.0 + gamma[bi * c + ci];
                            const std::size_t base = (bi * c + ci) * tail;
                            for (std::size_t s = 0; s < tail; ++s)
                                gx[base + s] += g[base + s] * scale;
                        }
                }
                if (want(1)) {
                    auto& gg = acc(n.in[1], n.in_shapes[1]);
                    for (std::size_t bi = 0; bi < b; ++bi)
                        for (std::size_t ci = 0; ci < c; ++ci) {
                            const std::size_t base = (bi * c + ci) * tail;
                            double s = 0.0;
                            for (std::size_t si = 0; si < tail; ++si)
                                s += g[base + si] * x[base + si];
                            gg[bi * c + ci] += s;
                        }
                }
                if (want(2)) {
                    auto& gb = acc(n.in[2], n.in_shapes[2]);
                    for (std::size_t bi = 0; bi < b; ++bi)
                        for (std::size_t ci = 0; ci < c; ++ci) {
                            const std::size_t base = (bi * c + ci) * tail;
                            double s = 0.0;
                            for (std::size_t si = 0; si < tail; ++si) s += g[base + si];
                            gb[bi * c + ci] += s;
                        }
                }
                break;
            }
            case Op::GlobalAvgPool: {
                if (!want(0)) break;
                auto& gx = acc(n.in[0], n.in_shapes[0]);
                const std::size_t bc = n.shape[0] * n.shape[1];
                const std::size_t tail = numel(n.in_shapes[0]) / bc;
                const double inv = 1.0 / static_cast<double>(tail);
                for (std::size_t c = 0; c < bc; ++c) {
                    const double gv = g[c] * inv;
                    for (std::size_t s = 0; s < tail; ++s) gx[c * tail + s] += gv;
                }
                break;
            }
            case Op::Sum: {
                if (!want(0)) break;
                auto& gx = acc(n.in[0], n.in_shapes[0]);
                for (double& v : gx) v += g[0];
                break;
            }
            case Op::Mean: {
                if (!want(0)) break;
                auto& gx = acc(n.in[0], n.in_shapes[0]);
                const double gv = g[0] / static_cast<double>(gx.size());
                for (double& v : gx) v += gv;
                break;
            }
            case Op::Mse: {
                const auto& a = in_val(0);
                const auto& b = in_val(1);
                const double scale = 2.0 * g[0] / static_cast<double>(a.size());
                if (want(0)) {
                    auto& ga = acc(n.in[0], n.in_shapes[0]);
                    for (std::size_t i = 0; i < a.size(); ++i)
                        ga[i] += scale * (a[i] - b[i]);
                }
                if (want(1)) {
                    auto& gb = acc(n.in[1], n.in_shapes[1]);
                    for (std::size_t i = 0; i < a.size(); ++i)
                        gb[i] -= scale * (a[i] - b[i]);
                }
                break;
            }
            case Op::BceLogits: {
                const auto& logits = in_val(0);
                const auto& labels = in_val(1);
                const double scale = g[0] / static_cast<double>(logits.size());
                if (want(0)) {
                    auto& gl = acc(n.in[0], n.in_shapes[0]);
                    for (std::size_t i = 0; i < logits.size(); ++i)
                        gl[i] += scale * (sigmoid(logits[i]) - labels[i]);
                }
                if (want(1)) {
                    auto& gy = acc(n.in[1], n.in_shapes[1]);
                    for (std::size_t i = 0; i < logits.size(); ++i)
                        gy[i] -= scale * logits[i];
                }
                break;
            }
        }
    }

    // Untouched leaves have zero gradient by definition.
    for (std::size_t i = 0; i < nodes_.size(); ++i)
        if (nodes_[i].op == Op::Leaf && grads_[i].empty())
            grads_[i].assign(numel(nodes_[i].shape), 0.0);
    has_grads_ = true;
}

// ---- forward ops ----------------------------------------------------------

namespace {
void require_same_shape(Op op, const Tensor& a, const Tensor& b) {
    if (a.shape != b.shape) shape_error(op, a.shape, b.shape);
}
} // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(Op::Add, a, b);
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    return make_result(common_tape(a, b), Op::Add, a.shape, std::move(out), {&a, &b});
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(Op::Sub, a, b);
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
    return make_result(common_tape(a, b), Op::Sub, a.shape, std::move(out), {&a, &b});
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(Op::Mul, a, b);
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
    return make_result(common_tape(a, b), Op::Mul, a.shape, std::move(out), {&a, &b});
}

Tensor scalar_mul(const Tensor& a, double s) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * s;
    return make_result(common_tape(a), Op::ScalarMul, a.shape, std::move(out), {&a}, 0, 0, s);
}

Tensor relu(const Tensor& a) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] > 0.0 ? a[i] : 0.0;
    return make_result(common_tape(a), Op::Relu, a.shape, std::move(out), {&a});
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank(Op::MatMul, a, 2);
    require_rank(Op::MatMul, b, 2);
    if (a.shape[1] != b.shape[0]) shape_error(Op::MatMul, a.shape, b.shape);
    std::vector<double> out(a.shape[0] * b.shape[1]);
    matmul_forward(a.data().data(), b.data().data(), out.data(), a.shape[0], a.shape[1],
                   b.shape[1]);
    return make_result(common_tape(a, b), Op::MatMul, Shape{a.shape[0], b.shape[1]},
                       std::move(out), {&a, &b});
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
    require_rank(Op::Linear, x, 2);
    require_rank(Op::Linear, w, 2);
    require_rank(Op::Linear, bias, 1);
    if (x.shape[1] != w.shape[0]) shape_error(Op::Linear, x.shape, w.shape);
    if (bias.shape[0] != w.shape[1]) shape_error(Op::Linear, w.shape, bias.shape);
    const std::size_t b = x.shape[0], in_f = x.shape[1], out_f = w.shape[1];
    std::vector<double> out(b * out_f);
    for (std::size_t i = 0; i < b; ++i)
        std::memcpy(out.data() + i * out_f, bias.data().data(), out_f * sizeof(double));
    for (std::size_t i = 0; i < b; ++i) {
        const double* xrow = x.data().data() + i * in_f;
        double* orow = out.data() + i * out_f;
        for (std::size_t kk = 0; kk < in_f; ++kk) {
            const double xv = xrow[kk];
            const double* wrow = w.data().data() + kk * out_f;
            for (std::size_t j = 0; j < out_f; ++j) orow[j] += xv * wrow[j];
        }
    }
    return make_result(common_tape(x, w, bias), Op::Linear, Shape{b, out_f}, std::move(out),
                       {&x, &w, &bias});
}

namespace {
Tensor conv_impl(Op op, const Tensor& x, const Tensor& w, const Tensor& bias, std::int64_t stride,
                 std::int64_t pad) {
    const bool two_d = (op == Op::Conv2d);
    require_rank(op, x, two_d ? 4 : 3);
    require_rank(op, w, two_d ? 4 : 3);
    require_rank(op, bias, 1);
    if (stride < 1) throw ValidationError(std::string(op_name(op)) + ": stride must be >= 1");
    if (pad < 0) throw ValidationError(std::string(op_name(op)) + ": negative padding");
    if (x.shape[1] != w.shape[1]) shape_error(op, x.shape, w.shape);
    if (bias.shape[0] != w.shape[0]) shape_error(op, w.shape, bias.shape);

    ConvDims d{};
    d.batch = x.shape[0];
    d.cin = x.shape[1];
    d.h = two_d ? x.shape[2] : 1;
    d.w = two_d ? x.shape[3] : x.shape[2];
    d.cout = w.shape[0];
    d.kh = two_d ? w.shape[2] : 1;
    d.kw = two_d ? w.shape[3] : w.shape[2];
    d.stride = stride;
    d.pad = pad;
    d.oh = two_d ? conv_out_extent(d.h, d.kh, stride, pad) : 1;
    d.ow = conv_out_extent(d.w, d.kw, stride, pad);
    if (d.ow == 0 || d.oh == 0) shape_error(op, x.shape, w.shape);

    std::vector<double> out(d.batch * d.cout * d.oh * d.ow);
    if (two_d && stride == 1)
        conv2d_rowtile(x.data().data(), w.data().data(), bias.data().data(), out.data(), d,
                       false);
    else
        conv2d_forward(x.data().data(), w.data().data(), bias.data().data(), out.data(), d);
    Shape os = two_d ? Shape{d.batch, d.cout, d.oh, d.ow} : Shape{d.batch, d.cout, d.ow};
    return make_result(common_tape(x, w, bias), op, std::move(os), std::move(out), {&x, &w, &bias},
                       stride, pad);
}
} // namespace

Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& bias, std::int64_t stride,
              std::int64_t pad) {
    return conv_impl(Op::Conv1d, x, w, bias, stride, pad);
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::int64_t stride,
              std::int64_t pad) {
    return conv_impl(Op::Conv2d, x, w, bias, stride, pad);
}

Tensor avg_pool1d(const Tensor& x, std::int64_t window) {
    require_rank(Op::AvgPool1d, x, 3);
    if (window < 1 || x.shape[2] % static_cast<std::size_t>(window) != 0)
        throw ValidationError("avg_pool1d: window " + std::to_string(window) +
                              " does not divide length " + std::to_string(x.shape[2]));
    const std::size_t win = static_cast<std::size_t>(window);
    const std::size_t bc = x.shape[0] * x.shape[1];
    const std::size_t ol = x.shape[2] / win;
    std::vector<double> out(bc * ol);
    const double inv = 1.0 / static_cast<double>(win);
    for (std::size_t c = 0; c < bc; ++c)
        for (std::size_t o = 0; o < ol; ++o) {
            double s = 0.0;
            for (std::size_t k = 0; k < win; ++k) s += x[c * x.shape[2] + o * win + k];
            out[c * ol + o] = s * inv;
        }
    return make_result(common_tape(x), Op::AvgPool1d, Shape{x.shape[0], x.shape[1], ol},
                       std::move(out), {&x}, window);
}

Tensor avg_pool2d(const Tensor& x, std::int64_t window) {
    require_rank(Op::AvgPool2d, x, 4);
    const std::size_t win = static_cast<std::size_t>(window);
    if (window < 1 || x.shape[2] % win != 0 || x.shape[3] % win != 0)
        throw ValidationError("avg_pool2d: window " + std::to_string(window) +
                              " does not divide grid " + shape_str(x.shape));
    const std::size_t bc = x.shape[0] * x.shape[1];
    const std::size_t h = x.shape[2], w = x.shape[3];
    const std::size_t oh = h / win, ow = w / win;
    std::vector<double> out(bc * oh * ow);
    const double inv = 1.0 / static_cast<double>(win * win);
    for (std::size_t c = 0; c < bc; ++c)
        for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox) {
                double s = 0.0;
                for (std::size_t dy = 0; dy < win; ++dy)
                    for (std::size_t dx = 0; dx < win; ++dx)
                        s += x[(c * h + oy * win + dy) * w + ox * win + dx];
                out[(c * oh + oy) * ow + ox] = s * inv;
            }
    return make_result(common_tape(x), Op::AvgPool2d, Shape{x.shape[0], x.shape[1], oh, ow},
                       std::move(out), {&x}, window);
}

Tensor upsample1d(const Tensor& x, std::int64_t factor) {
    require_rank(Op::Upsample1d, x, 3);
    if (factor < 1) throw ValidationError("upsample1d: factor must be >= 1");
    const std::size_t f = static_cast<std::size_t>(factor);
    const std::size_t bc = x.shape[0] * x.shape[1];
    const std::size_t l = x.shape[2], ol = l * f;
    std::vector<double> out(bc * ol);
    for (std::size_t c = 0; c < bc; ++c)
        for (std::size_t i = 0; i < l; ++i) {
            const double v = x[c * l + i];
            for (std::size_t k = 0; k < f; ++k) out[c * ol + i * f + k] = v;
        }
    return make_result(common_tape(x), Op::Upsample1d, Shape{x.shape[0], x.shape[1], ol},
                       std::move(out), {&x}, factor);
}

Tensor upsample2d(const Tensor& x, std::int64_t factor) {
    require_rank(Op::Upsample2d, x, 4);
    if (factor < 1) throw ValidationError("upsample2d: factor must be >= 1");
    const std::size_t f = static_cast<std::size_t>(factor);
    const std::size_t bc = x.shape[0] * x.shape[1];
    const std::size_t h = x.shape[2], w = x.shape[3];
    const std::size_t oh = h * f, ow = w * f;
    std::vector<double> out(bc * oh * ow);
    for (std::size_t c = 0; c < bc; ++c)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x2 = 0; x2 < w; ++x2) {
                const double v = x[(c * h + y) * w + x2];
                for (std::size_t dy = 0; dy < f; ++dy)
                    for (std::size_t dx = 0; dx < f; ++dx)
                        out[(c * oh + y * f + dy) * ow + x2 * f + dx] = v;
            }
    return make_result(common_tape(x), Op::Upsample2d, Shape{x.shape[0], x.shape[1], oh, ow},
                       std::move(out), {&x}, factor);
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    if (a.shape.size() < 3 || a.shape.size() != b.shape.size())
        shape_error(Op::ConcatChannels, a.shape, b.shape);
    for (std::size_t i = 0; i < a.shape.size(); ++i)
        if (i != 1 && a.shape[i] != b.shape[i]) shape_error(Op::ConcatChannels, a.shape, b.shape);
    const std::size_t bsz = a.shape[0];
    std::size_t tail = 1;
    for (std::size_t i = 2; i < a.shape.size(); ++i) tail *= a.shape[i];
    const std::size_t c1 = a.shape[1], c2 = b.shape[1];
    Shape os = a.shape;
    os[1] = c1 + c2;
    std::vector<double> out(numel(os));
    for (std::size_t bi = 0; bi < bsz; ++bi) {
        std::memcpy(out.data() + bi * (c1 + c2) * tail, a.data().data() + bi * c1 * tail,
                    c1 * tail * sizeof(double));
        std::memcpy(out.data() + (bi * (c1 + c2) + c1) * tail, b.data().data() + bi * c2 * tail,
                    c2 * tail * sizeof(double));
    }
    return make_result(common_tape(a, b), Op::ConcatChannels, std::move(os), std::move(out),
                       {&a, &b});
}

Tensor film(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
    if (x.shape.size() < 3) require_rank(Op::Film, x, 3);
    require_rank(Op::Film, gamma, 2);
    require_rank(Op::Film, beta, 2);
    if (gamma.shape[0] != x.shape[0] || gamma.shape[1] != x.shape[1])
        shape_error(Op::Film, x.shape, gamma.shape);
    if (beta.shape != gamma.shape) shape_error(Op::Film, gamma.shape, beta.shape);
    const std::size_t b = x.shape[0], c = x.shape[1];
    std::size_t tail = 1;
    for (std::size_t i = 2; i < x.shape.size(); ++i) tail *= x.shape[i];
    std::vector<double> out(x.size());
    for (std::size_t bi = 0; bi < b; ++bi)
        for (std::size_t ci = 0; ci < c; ++ci) {
            const double scale = 1.0 + gamma[bi * c + ci];
            const double shift = beta[bi * c + ci];
            const std::size_t base = (bi * c + ci) * tail;
            for (std::size_t s = 0; s < tail; ++s) out[base + s] = x[base + s] * scale + shift;
        }
    return make_result(common_tape(x, gamma, beta), Op::Film, x.shape, std::move(out),
                       {&x, &gamma, &beta});
}

Tensor global_avg_pool(const Tensor& x) {
    if (x.shape.size() < 3) require_rank(Op::GlobalAvgPool, x, 3);
    const std::size_t b = x.shape[0], c = x.shape[1];
    std::size_t tail = 1;
    for (std::size_t i = 2; i < x.shape.size(); ++i) tail *= x.shape[i];
    std::vector<double> out(b * c);
    const double inv = 1.0 / static_cast<double>(tail);
    for (std::size_t i = 0; i < b * c; ++i) {
        double s = 0.0;
        for (std::size_t k = 0; k < tail; ++k) s += x[i * tail + k];
        out[i] = s * inv;
    }
    return make_result(common_tape(x), Op::GlobalAvgPool, Shape{b, c}, std::move(out), {&x});
}

Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i];
    return make_result(common_tape(x), Op::Sum, Shape{}, {s}, {&x});
}

Tensor mean(const Tensor& x) {
    if (x.size() == 0) throw ValidationError("mean: empty tensor");
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i];
    return make_result(common_tape(x), Op::Mean, Shape{}, {s / static_cast<double>(x.size())},
                       {&x});
}

Tensor mse(const Tensor& a, const Tensor& b) {
    require_same_shape(Op::Mse, a, b);
    if (a.size() == 0) throw ValidationError("mse: empty tensors");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return make_result(common_tape(a, b), Op::Mse, Shape{}, {s / static_cast<double>(a.size())},
                       {&a, &b});
}

Tensor bce_with_logits(const Tensor& logits, const Tensor& labels) {
    require_same_shape(Op::BceLogits, logits, labels);
    if (logits.size() == 0) throw ValidationError("bce_with_logits: empty tensors");
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] != 0.0 && labels[i] != 1.0)
            throw ValidationError("bce_with_logits: labels must be 0 or 1");
    double s = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i)
        s += stable_softplus(logits[i]) - labels[i] * logits[i];
    return make_result(common_tape(logits, labels), Op::BceLogits, Shape{},
                       {s / static_cast<double>(logits.size())}, {&logits, &labels});
}

double finite_difference_check(const TapedScalarFn& f, const Tensor& theta, double h) {
    Tape tape;
    Tensor tracked = tape.leaf(theta);
    Tensor loss = f(tape, tracked);
    if (loss.size() != 1) throw ValidationError("finite_difference_check: f must return a scalar");
    if (!std::isfinite(loss.item())) return std::numeric_limits<double>::infinity();
    std::vector<double> analytic(theta.size(), 0.0);
    if (loss.tape == &tape && loss.node >= 0) {
        tape.backward(loss);
        analytic = tape.grad(tracked);
    }

    double worst = 0.0;
    Tensor probe = theta;
    auto& values = probe.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double saved = values[i];
        values[i] = saved + h;
        Tape tp;
        const double up = f(tp, tp.leaf(probe)).item();
        values[i] = saved - h;
        Tape tm;
        const double down = f(tm, tm.leaf(probe)).item();
        values[i] = saved;
        if (!std::isfinite(up) || !std::isfinite(down))
            return std::numeric_limits<double>::infinity();
        const double central = (up - down) / (2.0 * h);
        const double err = std::abs(analytic[i] - central) / (std::abs(analytic[i]) + 1e-8);
        worst = std::max(worst, err);
    }
    return worst;
}

} // namespace serpentflow::numerics
