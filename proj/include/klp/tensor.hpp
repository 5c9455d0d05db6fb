#pragma once

// Dense n-dimensional double tensors with reverse-mode automatic
// differentiation. Graphs are built dynamically: every op returns a new
// Tensor whose node stores a closure that routes gradients to its parents.
// A graph is confined to one thread; parameter tensors may be shared
// read-only for inference once training is done.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "klp/common.hpp"

namespace klp {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << ")";
    return os.str();
}

struct TensorNode {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad;  // sized lazily on first accumulation
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backward;  // empty for leaves

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
    void accumulate(const std::vector<double>& g) {
        ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
    }
};

class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, bool requires_grad = false)
        : node_(std::make_shared<TensorNode>()) {
        node_->shape = std::move(shape);
        node_->data.assign(shape_numel(node_->shape), 0.0);
        node_->requires_grad = requires_grad;
    }

    Tensor(Shape shape, std::vector<double> data, bool requires_grad = false)
        : node_(std::make_shared<TensorNode>()) {
        if (shape_numel(shape) != data.size()) {
            throw std::invalid_argument("Tensor: shape " + shape_str(shape) + " needs " +
                                        std::to_string(shape_numel(shape)) + " values, got " +
                                        std::to_string(data.size()));
        }
        node_->shape = std::move(shape);
        node_->data = std::move(data);
        node_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return Tensor(std::move(shape), requires_grad);
    }

    static Tensor full(Shape shape, double value, bool requires_grad = false) {
        Tensor t(std::move(shape), requires_grad);
        std::fill(t.data().begin(), t.data().end(), value);
        return t;
    }

    static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0, bool requires_grad = false) {
        Tensor t(std::move(shape), requires_grad);
        for (double& v : t.data()) v = rng.normal(0.0, stddev);
        return t;
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t size() const { return node_->data.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }

    std::vector<double>& data() { return node_->data; }
    const std::vector<double>& data() const { return node_->data; }

    bool requires_grad() const { return node_->requires_grad; }

    std::vector<double>& grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    const std::vector<double>& grad() const {
        node_->ensure_grad();
        return node_->grad;
    }

    void zero_grad() {
        node_->ensure_grad();
        std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
    }

    double value() const {
        if (size() != 1) {
            throw std::logic_error("Tensor::value: tensor of shape " + shape_str(shape()) +
                                   " is not a scalar");
        }
        return node_->data[0];
    }

    // Reverse pass from a scalar root. Gradients accumulate into every
    // requires_grad tensor reachable through the graph.
    void backward() {
        if (size() != 1) {
            throw std::logic_error("Tensor::backward: root must be a scalar, got " +
                                   shape_str(shape()));
        }
        std::vector<TensorNode*> order;
        std::unordered_set<TensorNode*> seen;
        std::vector<std::pair<TensorNode*, std::size_t>> stack;
        stack.emplace_back(node_.get(), 0);
        seen.insert(node_.get());
        while (!stack.empty()) {
            auto& [node, next_parent] = stack.back();
            if (next_parent < node->parents.size()) {
                TensorNode* parent = node->parents[next_parent++].get();
                if (seen.insert(parent).second) stack.emplace_back(parent, 0);
            } else {
                order.push_back(node);
                stack.pop_back();
            }
        }
        node_->ensure_grad();
        node_->grad[0] += 1.0;
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            if ((*it)->backward) (*it)->backward(**it);
        }
    }

    std::shared_ptr<TensorNode> node() const { return node_; }

private:
    std::shared_ptr<TensorNode> node_;
};

namespace detail {

inline Tensor make_op_result(Shape shape, std::vector<double> data,
                             std::vector<Tensor> parents,
                             std::function<void(TensorNode&)> backward) {
    bool needs_grad = false;
    for (const auto& p : parents) needs_grad = needs_grad || p.requires_grad();
    Tensor out(std::move(shape), std::move(data), needs_grad);
    if (needs_grad) {
        auto node = out.node();
        node->parents.reserve(parents.size());
        for (const auto& p : parents) node->parents.push_back(p.node());
        node->backward = std::move(backward);
    }
    return out;
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and reduction ops
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "add");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    return detail::make_op_result(a.shape(), std::move(out), {a, b}, [a, b](TensorNode& self) {
        if (a.requires_grad()) a.node()->accumulate(self.grad);
        if (b.requires_grad()) b.node()->accumulate(self.grad);
    });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "sub");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
    return detail::make_op_result(a.shape(), std::move(out), {a, b}, [a, b](TensorNode& self) {
        if (a.requires_grad()) a.node()->accumulate(self.grad);
        if (b.requires_grad()) {
            auto* nb = b.node().get();
            nb->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) nb->grad[i] -= self.grad[i];
        }
    });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "mul");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    return detail::make_op_result(a.shape(), std::move(out), {a, b}, [a, b](TensorNode& self) {
        if (a.requires_grad()) {
            auto* na = a.node().get();
            na->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                na->grad[i] += self.grad[i] * b.data()[i];
        }
        if (b.requires_grad()) {
            auto* nb = b.node().get();
            nb->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                nb->grad[i] += self.grad[i] * a.data()[i];
        }
    });
}

inline Tensor scale(const Tensor& a, double c) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * c;
    return detail::make_op_result(a.shape(), std::move(out), {a}, [a, c](TensorNode& self) {
        auto* na = a.node().get();
        na->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) na->grad[i] += self.grad[i] * c;
    });
}

inline Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    return detail::make_op_result({1}, {s}, {a}, [a](TensorNode& self) {
        auto* na = a.node().get();
        na->ensure_grad();
        for (double& g : na->grad) g += self.grad[0];
    });
}

inline Tensor mean(const Tensor& a) {
    if (a.size() == 0) throw std::invalid_argument("mean: empty tensor");
    const double inv = 1.0 / static_cast<double>(a.size());
    return scale(sum(a), inv);
}

inline Tensor relu(const Tensor& a) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] > 0.0 ? a.data()[i] : 0.0;
    return detail::make_op_result(a.shape(), std::move(out), {a}, [a](TensorNode& self) {
        auto* na = a.node().get();
        na->ensure_grad();
        // subgradient 0 at x == 0
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            if (a.data()[i] > 0.0) na->grad[i] += self.grad[i];
    });
}

inline Tensor sigmoid(const Tensor& a) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double x = a.data()[i];
        out[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    }
    auto values = out;
    return detail::make_op_result(a.shape(), std::move(out), {a},
                                  [a, values = std::move(values)](TensorNode& self) {
                                      auto* na = a.node().get();
                                      na->ensure_grad();
                                      for (std::size_t i = 0; i < self.grad.size(); ++i)
                                          na->grad[i] += self.grad[i] * values[i] * (1.0 - values[i]);
                                  });
}

inline Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.size()) {
        throw std::invalid_argument("reshape: cannot view " + shape_str(a.shape()) + " as " +
                                    shape_str(shape));
    }
    return detail::make_op_result(std::move(shape), a.data(), {a}, [a](TensorNode& self) {
        a.node()->accumulate(self.grad);
    });
}

// ---------------------------------------------------------------------------
// Linear layer: y = x W^T + b,  x: (N,F), W: (O,F), b: (O)
// ---------------------------------------------------------------------------

inline Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    if (x.shape().size() != 2 || weight.shape().size() != 2 || bias.shape().size() != 1) {
        throw std::invalid_argument("linear: expected x (N,F), weight (O,F), bias (O); got x " +
                                    shape_str(x.shape()) + ", weight " + shape_str(weight.shape()) +
                                    ", bias " + shape_str(bias.shape()));
    }
    const std::size_t n = x.dim(0), f = x.dim(1), o = weight.dim(0);
    if (weight.dim(1) != f || bias.dim(0) != o) {
        throw std::invalid_argument("linear: dimension mismatch, x " + shape_str(x.shape()) +
                                    " vs weight " + shape_str(weight.shape()) + " and bias " +
                                    shape_str(bias.shape()));
    }
    std::vector<double> out(n * o);
    for (std::size_t i = 0; i < n; ++i) {
        const double* xr = x.data().data() + i * f;
        for (std::size_t j = 0; j < o; ++j) {
            const double* wr = weight.data().data() + j * f;
            double acc = bias.data()[j];
            for (std::size_t k = 0; k < f; ++k) acc += xr[k] * wr[k];
            out[i * o + j] = acc;
        }
    }
    return detail::make_op_result(
        {n, o}, std::move(out), {x, weight, bias}, [x, weight, bias, n, f, o](TensorNode& self) {
            if (x.requires_grad()) {
                auto* nx = x.node().get();
                nx->ensure_grad();
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < o; ++j) {
                        const double g = self.grad[i * o + j];
                        const double* wr = weight.data().data() + j * f;
                        double* gx = nx->grad.data() + i * f;
                        for (std::size_t k = 0; k < f; ++k) gx[k] += g * wr[k];
                    }
            }
            if (weight.requires_grad()) {
                auto* nw = weight.node().get();
                nw->ensure_grad();
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < o; ++j) {
                        const double g = self.grad[i * o + j];
                        const double* xr = x.data().data() + i * f;
                        double* gw = nw->grad.data() + j * f;
                        for (std::size_t k = 0; k < f; ++k) gw[k] += g * xr[k];
                    }
            }
            if (bias.requires_grad()) {
                auto* nb = bias.node().get();
                nb->ensure_grad();
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < o; ++j) nb->grad[j] += self.grad[i * o + j];
            }
        });
}

// ---------------------------------------------------------------------------
// 2-D convolution (cross-correlation, NCHW)
// ---------------------------------------------------------------------------

struct ConvParams {
    Tensor weight;  // (out_channels, in_channels, kh, kw)
    Tensor bias;    // (out_channels)
    int stride = 1;
    int padding = 0;
};

inline ConvParams make_conv(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                            Rng& rng, int stride = 1, int padding = 0) {
    const double stddev = std::sqrt(2.0 / static_cast<double>(in_channels * kernel * kernel));
    ConvParams p;
    p.weight = Tensor::randn({out_channels, in_channels, kernel, kernel}, rng, stddev, true);
    p.bias = Tensor::zeros({out_channels}, true);
    p.stride = stride;
    p.padding = padding;
    return p;
}

inline Tensor conv2d(const Tensor& input, const ConvParams& params) {
    const Tensor& w = params.weight;
    const Tensor& b = params.bias;
    if (input.shape().size() != 4 || w.shape().size() != 4) {
        throw std::invalid_argument("conv2d: expected input (N,C,H,W) and weight (O,C,KH,KW); got input " +
                                    shape_str(input.shape()) + ", weight " + shape_str(w.shape()));
    }
    const std::size_t n = input.dim(0), cin = input.dim(1), h = input.dim(2), wd = input.dim(3);
    const std::size_t cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    if (w.dim(1) != cin) {
        throw std::invalid_argument("conv2d: input " + shape_str(input.shape()) +
                                    " has " + std::to_string(cin) + " channels but weight " +
                                    shape_str(w.shape()) + " expects " + std::to_string(w.dim(1)));
    }
    if (b.shape() != Shape{cout}) {
        throw std::invalid_argument("conv2d: bias " + shape_str(b.shape()) + " does not match " +
                                    std::to_string(cout) + " output channels");
    }
    const int stride = params.stride, pad = params.padding;
    if (stride < 1 || pad < 0) throw std::invalid_argument("conv2d: stride must be >=1, padding >=0");
    const long ho_l = (static_cast<long>(h) + 2 * pad - static_cast<long>(kh)) / stride + 1;
    const long wo_l = (static_cast<long>(wd) + 2 * pad - static_cast<long>(kw)) / stride + 1;
    if (ho_l <= 0 || wo_l <= 0) {
        throw std::invalid_argument("conv2d: kernel " + shape_str(w.shape()) +
                                    " does not fit input " + shape_str(input.shape()));
    }
    const std::size_t ho = static_cast<std::size_t>(ho_l), wo = static_cast<std::size_t>(wo_l);

    std::vector<double> out(n * cout * ho * wo);
    const double* xd = input.data().data();
    const double* wdt = w.data().data();
    for (std::size_t in = 0; in < n; ++in) {
        for (std::size_t oc = 0; oc < cout; ++oc) {
            double* oc_base = out.data() + (in * cout + oc) * ho * wo;
            std::fill(oc_base, oc_base + ho * wo, b.data()[oc]);
            for (std::size_t ic = 0; ic < cin; ++ic) {
                const double* x_base = xd + (in * cin + ic) * h * wd;
                const double* w_base = wdt + ((oc * cin + ic) * kh) * kw;
                for (std::size_t fy = 0; fy < kh; ++fy) {
                    for (std::size_t fx = 0; fx < kw; ++fx) {
                        const double wv = w_base[fy * kw + fx];
                        if (wv == 0.0) continue;
                        for (std::size_t oy = 0; oy < ho; ++oy) {
                            const long iy = static_cast<long>(oy) * stride - pad + static_cast<long>(fy);
                            if (iy < 0 || iy >= static_cast<long>(h)) continue;
                            double* orow = oc_base + oy * wo;
                            const double* xrow = x_base + static_cast<std::size_t>(iy) * wd;
                            if (stride == 1) {
                                // valid ox range: 0 <= ox - pad + fx < wd
                                const long lo = std::max<long>(0, pad - static_cast<long>(fx));
                                const long hi = std::min<long>(static_cast<long>(wo),
                                                               static_cast<long>(wd) + pad - static_cast<long>(fx));
                                const double* xp = xrow + lo - pad + static_cast<long>(fx);
                                for (long ox = lo; ox < hi; ++ox) orow[ox] += wv * xp[ox - lo];
                            } else {
                                for (std::size_t ox = 0; ox < wo; ++ox) {
                                    const long ix = static_cast<long>(ox) * stride - pad + static_cast<long>(fx);
                                    if (ix < 0 || ix >= static_cast<long>(wd)) continue;
                                    orow[ox] += wv * xrow[ix];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    return detail::make_op_result(
        {n, cout, ho, wo}, std::move(out), {input, w, b},
        [input, w, b, n, cin, h, wd, cout, kh, kw, ho, wo, stride, pad](TensorNode& self) {
            const double* gd = self.grad.data();
            if (input.requires_grad()) {
                auto* nx = input.node().get();
                nx->ensure_grad();
                for (std::size_t in = 0; in < n; ++in)
                    for (std::size_t oc = 0; oc < cout; ++oc) {
                        const double* g_base = gd + (in * cout + oc) * ho * wo;
                        for (std::size_t ic = 0; ic < cin; ++ic) {
                            double* gx_base = nx->grad.data() + (in * cin + ic) * h * wd;
                            const double* w_base = w.data().data() + ((oc * cin + ic) * kh) * kw;
                            for (std::size_t fy = 0; fy < kh; ++fy)
                                for (std::size_t fx = 0; fx < kw; ++fx) {
                                    const double wv = w_base[fy * kw + fx];
                                    if (wv == 0.0) continue;
                                    for (std::size_t oy = 0; oy < ho; ++oy) {
                                        const long iy = static_cast<long>(oy) * stride - pad + static_cast<long>(fy);
                                        if (iy < 0 || iy >= static_cast<long>(h)) continue;
                                        const double* grow = g_base + oy * wo;
                                        double* gxrow = gx_base + static_cast<std::size_t>(iy) * wd;
                                        if (stride == 1) {
                                            const long lo = std::max<long>(0, pad - static_cast<long>(fx));
                                            const long hi = std::min<long>(static_cast<long>(wo),
                                                                           static_cast<long>(wd) + pad - static_cast<long>(fx));
                                            double* gxp = gxrow + lo - pad + static_cast<long>(fx);
                                            for (long ox = lo; ox < hi; ++ox) gxp[ox - lo] += wv * grow[ox];
                                        } else {
                                            for (std::size_t ox = 0; ox < wo; ++ox) {
                                                const long ix = static_cast<long>(ox) * stride - pad + static_cast<long>(fx);
                                                if (ix < 0 || ix >= static_cast<long>(wd)) continue;
                                                gxrow[ix] += wv * grow[ox];
                                            }
                                        }
                                    }
                                }
                        }
                    }
            }
            if (w.requires_grad()) {
                auto* nw = w.node().get();
                nw->ensure_grad();
                for (std::size_t in = 0; in < n; ++in)
                    for (std::size_t oc = 0; oc < cout; ++oc) {
                        const double* g_base = gd + (in * cout + oc) * ho * wo;
                        for (std::size_t ic = 0; ic < cin; ++ic) {
                            const double* x_base = input.data().data() + (in * cin + ic) * h * wd;
                            double* gw_base = nw->grad.data() + ((oc * cin + ic) * kh) * kw;
                            for (std::size_t fy = 0; fy < kh; ++fy)
                                for (std::size_t fx = 0; fx < kw; ++fx) {
                                    double acc = 0.0;
                                    for (std::size_t oy = 0; oy < ho; ++oy) {
                                        const long iy = static_cast<long>(oy) * stride - pad + static_cast<long>(fy);
                                        if (iy < 0 || iy >= static_cast<long>(h)) continue;
                                        const double* grow = g_base + oy * wo;
                                        const double* xrow = x_base + static_cast<std::size_t>(iy) * wd;
                                        if (stride == 1) {
                                            const long lo = std::max<long>(0, pad - static_cast<long>(fx));
                                            const long hi = std::min<long>(static_cast<long>(wo),
                                                                           static_cast<long>(wd) + pad - static_cast<long>(fx));
                                            const double* xp = xrow + lo - pad + static_cast<long>(fx);
                                            for (long ox = lo; ox < hi; ++ox) acc += grow[ox] * xp[ox - lo];
                                        } else {
                                            for (std::size_t ox = 0; ox < wo; ++ox) {
                                                const long ix = static_cast<long>(ox) * stride - pad + static_cast<long>(fx);
                                                if (ix < 0 || ix >= static_cast<long>(wd)) continue;
                                                acc += grow[ox] * xrow[ix];
                                            }
                                        }
                                    }
                                    gw_base[fy * kw + fx] += acc;
                                }
                        }
                    }
            }
            if (b.requires_grad()) {
                auto* nb = b.node().get();
                nb->ensure_grad();
                for (std::size_t in = 0; in < n; ++in)
                    for (std::size_t oc = 0; oc < cout; ++oc) {
                        const double* g_base = gd + (in * cout + oc) * ho * wo;
                        double acc = 0.0;
                        for (std::size_t i = 0; i < ho * wo; ++i) acc += g_base[i];
                        nb->grad[oc] += acc;
                    }
            }
        });
}

// ---------------------------------------------------------------------------
// Max pooling. Gradient routes to the first (row-major) maximum per window.
// ---------------------------------------------------------------------------

inline Tensor maxpool2d(const Tensor& input, std::size_t window, std::size_t stride) {
    if (input.shape().size() != 4) {
        throw std::invalid_argument("maxpool2d: expected (N,C,H,W), got " + shape_str(input.shape()));
    }
    if (window == 0 || stride == 0) throw std::invalid_argument("maxpool2d: window and stride must be positive");
    const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), wd = input.dim(3);
    if (window > h || window > wd) {
        throw std::invalid_argument("maxpool2d: window " + std::to_string(window) +
                                    " exceeds spatial size " + shape_str(input.shape()));
    }
    const std::size_t ho = (h - window) / stride + 1;
    const std::size_t wo = (wd - window) / stride + 1;

    std::vector<double> out(n * c * ho * wo);
    std::vector<std::size_t> argmax(out.size());
    const double* xd = input.data().data();
    for (std::size_t plane = 0; plane < n * c; ++plane) {
        const double* x_base = xd + plane * h * wd;
        double* o_base = out.data() + plane * ho * wo;
        std::size_t* a_base = argmax.data() + plane * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy)
            for (std::size_t ox = 0; ox < wo; ++ox) {
                double best = -std::numeric_limits<double>::infinity();
                std::size_t best_idx = 0;
                for (std::size_t fy = 0; fy < window; ++fy)
                    for (std::size_t fx = 0; fx < window; ++fx) {
                        const std::size_t idx = (oy * stride + fy) * wd + ox * stride + fx;
                        if (x_base[idx] > best) {
                            best = x_base[idx];
                            best_idx = idx;
                        }
                    }
                o_base[oy * wo + ox] = best;
                a_base[oy * wo + ox] = plane * h * wd + best_idx;
            }
    }

    return detail::make_op_result({n, c, ho, wo}, std::move(out), {input},
                                  [input, argmax = std::move(argmax)](TensorNode& self) {
                                      auto* nx = input.node().get();
                                      nx->ensure_grad();
                                      for (std::size_t i = 0; i < self.grad.size(); ++i)
                                          nx->grad[argmax[i]] += self.grad[i];
                                  });
}

// ---------------------------------------------------------------------------
// Batch normalization over (N,H,W) per channel
// ---------------------------------------------------------------------------

enum class BatchNormMode { train, eval };

struct BatchNormState {
    Tensor gamma;  // (C), trainable
    Tensor beta;   // (C), trainable
    std::vector<double> running_mean;
    std::vector<double> running_var;
    double momentum = 0.1;
    double epsilon = 1e-5;
    BatchNormMode mode = BatchNormMode::train;

    explicit BatchNormState(std::size_t channels)
        : gamma(Tensor::full({channels}, 1.0, true)),
          beta(Tensor::zeros({channels}, true)),
          running_mean(channels, 0.0),
          running_var(channels, 1.0) {}
};

inline Tensor batchnorm2d(const Tensor& input, BatchNormState& state) {
    if (input.shape().size() != 4) {
        throw std::invalid_argument("batchnorm2d: expected (N,C,H,W), got " + shape_str(input.shape()));
    }
    const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), wd = input.dim(3);
    if (state.gamma.dim(0) != c) {
        throw std::invalid_argument("batchnorm2d: input " + shape_str(input.shape()) + " vs state with " +
                                    std::to_string(state.gamma.dim(0)) + " channels");
    }
    const bool training = state.mode == BatchNormMode::train;
    if (training && n < 2) {
        throw std::invalid_argument("batchnorm2d: train mode requires batch size >= 2, got " +
                                    std::to_string(n));
    }

    const std::size_t plane = h * wd;
    const double m = static_cast<double>(n * plane);
    std::vector<double> mean(c, 0.0), var(c, 0.0);
    if (training) {
        for (std::size_t in = 0; in < n; ++in)
            for (std::size_t ic = 0; ic < c; ++ic) {
                const double* x = input.data().data() + (in * c + ic) * plane;
                double acc = 0.0;
                for (std::size_t i = 0; i < plane; ++i) acc += x[i];
                mean[ic] += acc;
            }
        for (std::size_t ic = 0; ic < c; ++ic) mean[ic] /= m;
        for (std::size_t in = 0; in < n; ++in)
            for (std::size_t ic = 0; ic < c; ++ic) {
                const double* x = input.data().data() + (in * c + ic) * plane;
                double acc = 0.0;
                for (std::size_t i = 0; i < plane; ++i) {
                    const double d = x[i] - mean[ic];
                    acc += d * d;
                }
                var[ic] += acc;
            }
        for (std::size_t ic = 0; ic < c; ++ic) var[ic] /= m;
        for (std::size_t ic = 0; ic < c; ++ic) {
            state.running_mean[ic] =
                (1.0 - state.momentum) * state.running_mean[ic] + state.momentum * mean[ic];
            state.running_var[ic] =
                (1.0 - state.momentum) * state.running_var[ic] + state.momentum * var[ic];
        }
    } else {
        mean = state.running_mean;
        var = state.running_var;
    }

    std::vector<double> invstd(c);
    for (std::size_t ic = 0; ic < c; ++ic) invstd[ic] = 1.0 / std::sqrt(var[ic] + state.epsilon);

    std::vector<double> out(input.size());
    std::vector<double> xhat(input.size());
    for (std::size_t in = 0; in < n; ++in)
        for (std::size_t ic = 0; ic < c; ++ic) {
            const double* x = input.data().data() + (in * c + ic) * plane;
            double* o = out.data() + (in * c + ic) * plane;
            double* xh = xhat.data() + (in * c + ic) * plane;
            const double mu = mean[ic], is = invstd[ic];
            const double g = state.gamma.data()[ic], be = state.beta.data()[ic];
            for (std::size_t i = 0; i < plane; ++i) {
                xh[i] = (x[i] - mu) * is;
                o[i] = xh[i] * g + be;
            }
        }

    Tensor gamma = state.gamma, beta = state.beta;
    return detail::make_op_result(
        input.shape(), std::move(out), {input, gamma, beta},
        [input, gamma, beta, xhat = std::move(xhat), invstd = std::move(invstd), n, c, plane, m,
         training](TensorNode& self) {
            std::vector<double> sum_dy(c, 0.0), sum_dy_xhat(c, 0.0);
            for (std::size_t in = 0; in < n; ++in)
                for (std::size_t ic = 0; ic < c; ++ic) {
                    const double* g = self.grad.data() + (in * c + ic) * plane;
                    const double* xh = xhat.data() + (in * c + ic) * plane;
                    double s1 = 0.0, s2 = 0.0;
                    for (std::size_t i = 0; i < plane; ++i) {
                        s1 += g[i];
                        s2 += g[i] * xh[i];
                    }
                    sum_dy[ic] += s1;
                    sum_dy_xhat[ic] += s2;
                }
            if (beta.requires_grad()) beta.node()->accumulate(sum_dy);
            if (gamma.requires_grad()) gamma.node()->accumulate(sum_dy_xhat);
            if (input.requires_grad()) {
                auto* nx = input.node().get();
                nx->ensure_grad();
                for (std::size_t in = 0; in < n; ++in)
                    for (std::size_t ic = 0; ic < c; ++ic) {
                        const double* g = self.grad.data() + (in * c + ic) * plane;
                        const double* xh = xhat.data() + (in * c + ic) * plane;
                        double* gx = nx->grad.data() + (in * c + ic) * plane;
                        const double gm = gamma.data()[ic], is = invstd[ic];
                        if (training) {
                            const double sdy = sum_dy[ic], sdyx = sum_dy_xhat[ic];
                            for (std::size_t i = 0; i < plane; ++i)
                                gx[i] += gm * is / m * (m * g[i] - sdy - xh[i] * sdyx);
                        } else {
                            for (std::size_t i = 0; i < plane; ++i) gx[i] += gm * is * g[i];
                        }
                    }
            }
        });
}

// ---------------------------------------------------------------------------
// Channel concat / slice (NCHW)
// ---------------------------------------------------------------------------

inline Tensor channel_concat(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 4 || b.shape().size() != 4) {
        throw std::invalid_argument("channel_concat: expected (N,C,H,W) inputs, got " +
                                    shape_str(a.shape()) + " and " + shape_str(b.shape()));
    }
    if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
        throw std::invalid_argument("channel_concat: batch/spatial mismatch " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
    }
    const std::size_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1), plane = a.dim(2) * a.dim(3);
    std::vector<double> out(n * (ca + cb) * plane);
    for (std::size_t in = 0; in < n; ++in) {
        std::copy(a.data().begin() + in * ca * plane, a.data().begin() + (in + 1) * ca * plane,
                  out.begin() + in * (ca + cb) * plane);
        std::copy(b.data().begin() + in * cb * plane, b.data().begin() + (in + 1) * cb * plane,
                  out.begin() + in * (ca + cb) * plane + ca * plane);
    }
    return detail::make_op_result(
        {n, ca + cb, a.dim(2), a.dim(3)}, std::move(out), {a, b},
        [a, b, n, ca, cb, plane](TensorNode& self) {
            if (a.requires_grad()) {
                auto* na = a.node().get();
                na->ensure_grad();
                for (std::size_t in = 0; in < n; ++in)
                    for (std::size_t i = 0; i < ca * plane; ++i)
                        na->grad[in * ca * plane + i] += self.grad[in * (ca + cb) * plane + i];
            }
            if (b.requires_grad()) {
                auto* nb = b.node().get();
                nb->ensure_grad();
                for (std::size_t in = 0; in < n; ++in)
                    for (std::size_t i = 0; i < cb * plane; ++i)
                        nb->grad[in * cb * plane + i] +=
                            self.grad[in * (ca + cb) * plane + ca * plane + i];
            }
        });
}

inline Tensor channel_slice(const Tensor& x, std::size_t from, std::size_t to) {
    if (x.shape().size() != 4) {
        throw std::invalid_argument("channel_slice: expected (N,C,H,W), got " + shape_str(x.shape()));
    }
    const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
    if (from >= to || to > c) {
        throw std::invalid_argument("channel_slice: range [" + std::to_string(from) + "," +
                                    std::to_string(to) + ") invalid for " + std::to_string(c) +
                                    " channels");
    }
    const std::size_t cs = to - from;
    std::vector<double> out(n * cs * plane);
    for (std::size_t in = 0; in < n; ++in)
        std::copy(x.data().begin() + (in * c + from) * plane,
                  x.data().begin() + (in * c + to) * plane, out.begin() + in * cs * plane);
    return detail::make_op_result({n, cs, x.dim(2), x.dim(3)}, std::move(out), {x},
                                  [x, n, c, cs, from, plane](TensorNode& self) {
                                      auto* nx = x.node().get();
                                      nx->ensure_grad();
                                      for (std::size_t in = 0; in < n; ++in)
                                          for (std::size_t i = 0; i < cs * plane; ++i)
                                              nx->grad[(in * c + from) * plane + i] +=
                                                  self.grad[in * cs * plane + i];
                                  });
}

inline Tensor global_avg_pool(const Tensor& x) {
    if (x.shape().size() != 4) {
        throw std::invalid_argument("global_avg_pool: expected (N,C,H,W), got " + shape_str(x.shape()));
    }
    const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
    if (plane == 0) throw std::invalid_argument("global_avg_pool: empty spatial extent");
    std::vector<double> out(n * c);
    const double inv = 1.0 / static_cast<double>(plane);
    for (std::size_t i = 0; i < n * c; ++i) {
        const double* p = x.data().data() + i * plane;
        double acc = 0.0;
        for (std::size_t j = 0; j < plane; ++j) acc += p[j];
        out[i] = acc * inv;
    }
    return detail::make_op_result({n, c}, std::move(out), {x}, [x, plane, inv](TensorNode& self) {
        auto* nx = x.node().get();
        nx->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const double g = self.grad[i] * inv;
            double* gx = nx->grad.data() + i * plane;
            for (std::size_t j = 0; j < plane; ++j) gx[j] += g;
        }
    });
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

// Row-wise softmax of an (N,K) logit matrix; plain forward utility.
inline std::vector<double> softmax_rows(const Tensor& logits) {
    if (logits.shape().size() != 2) {
        throw std::invalid_argument("softmax_rows: expected (N,K), got " + shape_str(logits.shape()));
    }
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    std::vector<double> probs(n * k);
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = logits.data().data() + i * k;
        double mx = row[0];
        for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            probs[i * k + j] = std::exp(row[j] - mx);
            z += probs[i * k + j];
        }
        for (std::size_t j = 0; j < k; ++j) probs[i * k + j] /= z;
    }
    return probs;
}

// Mean over the batch of -log softmax(logits)[label].
inline Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    if (logits.shape().size() != 2) {
        throw std::invalid_argument("softmax_cross_entropy: expected (N,K) logits, got " +
                                    shape_str(logits.shape()));
    }
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    if (labels.size() != n) {
        throw std::invalid_argument("softmax_cross_entropy: " + std::to_string(n) + " rows but " +
                                    std::to_string(labels.size()) + " labels");
    }
    for (int label : labels) {
        if (label < 0 || static_cast<std::size_t>(label) >= k) {
            throw std::invalid_argument("softmax_cross_entropy: label " + std::to_string(label) +
                                        " outside [0," + std::to_string(k) + ")");
        }
    }
    auto probs = softmax_rows(logits);
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = logits.data().data() + i * k;
        double mx = row[0];
        for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
        loss -= row[static_cast<std::size_t>(labels[i])] - mx - std::log(z);
    }
    loss /= static_cast<double>(n);
    return detail::make_op_result({1}, {loss}, {logits},
                                  [logits, labels, probs = std::move(probs), n, k](TensorNode& self) {
                                      auto* nx = logits.node().get();
                                      nx->ensure_grad();
                                      const double g = self.grad[0] / static_cast<double>(n);
                                      for (std::size_t i = 0; i < n; ++i)
                                          for (std::size_t j = 0; j < k; ++j) {
                                              double p = probs[i * k + j];
                                              if (j == static_cast<std::size_t>(labels[i])) p -= 1.0;
                                              nx->grad[i * k + j] += g * p;
                                          }
                                  });
}

// sum(weights * bce(logits, targets)) / batch_rows, numerically stabilized.
// targets and weights are plain data tensors of the same shape as logits.
inline Tensor weighted_bce_with_logits(const Tensor& logits, const Tensor& targets,
                                       const Tensor& weights) {
    detail::require_same_shape(logits, targets, "weighted_bce_with_logits");
    detail::require_same_shape(logits, weights, "weighted_bce_with_logits");
    if (logits.shape().empty()) throw std::invalid_argument("weighted_bce_with_logits: scalar input");
    const double batch = static_cast<double>(logits.dim(0));
    double loss = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const double x = logits.data()[i], t = targets.data()[i];
        loss += weights.data()[i] * (std::max(x, 0.0) - x * t + std::log1p(std::exp(-std::abs(x))));
    }
    loss /= batch;
    return detail::make_op_result(
        {1}, {loss}, {logits, targets, weights}, [logits, targets, weights, batch](TensorNode& self) {
            auto* nx = logits.node().get();
            nx->ensure_grad();
            const double g = self.grad[0] / batch;
            for (std::size_t i = 0; i < logits.size(); ++i) {
                const double x = logits.data()[i];
                const double s = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
                nx->grad[i] += g * weights.data()[i] * (s - targets.data()[i]);
            }
        });
}

}  // namespace klp
