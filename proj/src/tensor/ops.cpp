#include "ddipnet/ops.hpp"

#include <cmath>
#include <string>

namespace ddipnet {

namespace {

template <class T>
using NodeT = Node<T>;

void require(bool cond, const std::string& what) {
    if (!cond) throw DimensionError(what);
}

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
    if (a != b)
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
                             shape_str(b));
}

// Range of output positions o in [0, out_extent) with o * stride + offset in
// [0, in_extent).
struct Span1 {
    std::size_t lo, hi;
};

Span1 valid_range(long offset, std::size_t stride, std::size_t in_extent, std::size_t out_extent) {
    const long s = static_cast<long>(stride);
    long lo = offset >= 0 ? 0 : (-offset + s - 1) / s;
    long last = static_cast<long>(in_extent) - 1 - offset;
    long hi = last < 0 ? 0 : last / s + 1;
    hi = std::min<long>(hi, static_cast<long>(out_extent));
    if (hi < lo) hi = lo;
    return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

}  // namespace

// ---------------------------------------------------------------------------
// matmul

template <class T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<T> out(m * n, T(0));
    auto A = a.data();
    auto B = b.data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const T av = A[i * k + p];
            if (av == T(0)) continue;
            const T* brow = &B[p * n];
            T* orow = &out[i * n];
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    return BasicTensor<T>::make_result(
        {m, n}, std::move(out), {a.node_ptr(), b.node_ptr()}, [m, k, n](NodeT<T>& self) {
            auto& na = *self.inputs[0];
            auto& nb = *self.inputs[1];
            const auto& G = self.grad;
            if (na.requires_grad) {
                na.ensure_grad();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        T acc = 0;
                        for (std::size_t j = 0; j < n; ++j) acc += G[i * n + j] * nb.data[p * n + j];
                        na.grad[i * k + p] += acc;
                    }
            }
            if (nb.requires_grad) {
                nb.ensure_grad();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        const T av = na.data[i * k + p];
                        for (std::size_t j = 0; j < n; ++j) nb.grad[p * n + j] += av * G[i * n + j];
                    }
            }
        });
}

// ---------------------------------------------------------------------------
// conv2d

namespace {

template <class T>
BasicTensor<T> conv2d_impl(const BasicTensor<T>& input, const BasicTensor<T>& kernels,
                           const BasicTensor<T>* bias, std::size_t stride, std::size_t pad) {
    require(input.rank() == 3, "conv2d: input must be C x H x W, got " + shape_str(input.shape()));
    require(kernels.rank() == 4 && kernels.dim(2) == kernels.dim(3),
            "conv2d: kernels must be C_out x C_in x k x k, got " + shape_str(kernels.shape()));
    require(kernels.dim(1) == input.dim(0), "conv2d: channel mismatch between input " +
                                                shape_str(input.shape()) + " and kernels " +
                                                shape_str(kernels.shape()));
    require(stride >= 1, "conv2d: stride must be >= 1");
    const std::size_t cin = input.dim(0), h = input.dim(1), w = input.dim(2);
    const std::size_t cout = kernels.dim(0), ks = kernels.dim(2);
    if (ks > h + 2 * pad || ks > w + 2 * pad)
        throw DimensionError("conv2d: non-positive output extent for input " +
                             shape_str(input.shape()) + ", kernel " + std::to_string(ks) +
                             ", pad " + std::to_string(pad));
    if (bias)
        require(bias->rank() == 1 && bias->dim(0) == cout,
                "conv2d: bias must have shape [" + std::to_string(cout) + "], got " +
                    shape_str(bias->shape()));
    const std::size_t ho = (h + 2 * pad - ks) / stride + 1;
    const std::size_t wo = (w + 2 * pad - ks) / stride + 1;

    std::vector<T> out(cout * ho * wo, T(0));
    auto X = input.data();
    auto K = kernels.data();
    for (std::size_t oc = 0; oc < cout; ++oc) {
        T* oplane = &out[oc * ho * wo];
        if (bias) std::fill(oplane, oplane + ho * wo, bias->data()[oc]);
        for (std::size_t ic = 0; ic < cin; ++ic) {
            const T* iplane = &X[ic * h * w];
            for (std::size_t ky = 0; ky < ks; ++ky) {
                const auto ry = valid_range(long(ky) - long(pad), stride, h, ho);
                for (std::size_t kx = 0; kx < ks; ++kx) {
                    const T kv = K[((oc * cin + ic) * ks + ky) * ks + kx];
                    const long off = long(kx) - long(pad);
                    const auto rx = valid_range(off, stride, w, wo);
                    for (std::size_t oy = ry.lo; oy < ry.hi; ++oy) {
                        const T* irow = iplane + (oy * stride + ky - pad) * w;
                        T* orow = oplane + oy * wo;
                        for (std::size_t ox = rx.lo; ox < rx.hi; ++ox)
                            orow[ox] += kv * irow[long(ox * stride) + off];
                    }
                }
            }
        }
    }

    std::vector<typename BasicTensor<T>::NodePtr> inputs{input.node_ptr(), kernels.node_ptr()};
    if (bias) inputs.push_back(bias->node_ptr());
    const bool has_bias = bias != nullptr;
    return BasicTensor<T>::make_result(
        {cout, ho, wo}, std::move(out), std::move(inputs),
        [=](NodeT<T>& self) {
            auto& nx = *self.inputs[0];
            auto& nk = *self.inputs[1];
            const auto& G = self.grad;
            if (nx.requires_grad) nx.ensure_grad();
            if (nk.requires_grad) nk.ensure_grad();
            for (std::size_t oc = 0; oc < cout; ++oc) {
                const T* gplane = &G[oc * ho * wo];
                for (std::size_t ic = 0; ic < cin; ++ic) {
                    const std::size_t ibase = ic * h * w;
                    for (std::size_t ky = 0; ky < ks; ++ky) {
                        const auto ry = valid_range(long(ky) - long(pad), stride, h, ho);
                        for (std::size_t kx = 0; kx < ks; ++kx) {
                            const std::size_t kidx = ((oc * cin + ic) * ks + ky) * ks + kx;
                            const T kv = nk.data[kidx];
                            const long off = long(kx) - long(pad);
                            const auto rx = valid_range(off, stride, w, wo);
                            T kacc = 0;
                            for (std::size_t oy = ry.lo; oy < ry.hi; ++oy) {
                                const std::size_t irow = ibase + (oy * stride + ky - pad) * w;
                                const T* grow = gplane + oy * wo;
                                for (std::size_t ox = rx.lo; ox < rx.hi; ++ox) {
                                    const std::size_t ii = irow + long(ox * stride) + off;
                                    if (nx.requires_grad) nx.grad[ii] += kv * grow[ox];
                                    kacc += nx.data[ii] * grow[ox];
                                }
                            }
                            if (nk.requires_grad) nk.grad[kidx] += kacc;
                        }
                    }
                }
            }
            if (has_bias && self.inputs[2]->requires_grad) {
                auto& nb = *self.inputs[2];
                nb.ensure_grad();
                for (std::size_t oc = 0; oc < cout; ++oc) {
                    T acc = 0;
                    for (std::size_t i = 0; i < ho * wo; ++i) acc += G[oc * ho * wo + i];
                    nb.grad[oc] += acc;
                }
            }
        });
}

template <class T>
BasicTensor<T> conv2d_transpose_impl(const BasicTensor<T>& input, const BasicTensor<T>& kernels,
                                     const BasicTensor<T>* bias, std::size_t stride,
                                     std::size_t pad) {
    require(input.rank() == 3,
            "conv2d_transpose: input must be C x H x W, got " + shape_str(input.shape()));
    require(kernels.rank() == 4 && kernels.dim(2) == kernels.dim(3),
            "conv2d_transpose: kernels must be C_in x C_out x k x k, got " +
                shape_str(kernels.shape()));
    require(kernels.dim(0) == input.dim(0),
            "conv2d_transpose: channel mismatch between input " + shape_str(input.shape()) +
                " and kernels " + shape_str(kernels.shape()));
    require(stride >= 1, "conv2d_transpose: stride must be >= 1");
    const std::size_t cin = input.dim(0), h = input.dim(1), w = input.dim(2);
    const std::size_t cout = kernels.dim(1), ks = kernels.dim(2);
    const long ho_l = long(h - 1) * long(stride) - 2 * long(pad) + long(ks);
    const long wo_l = long(w - 1) * long(stride) - 2 * long(pad) + long(ks);
    if (ho_l <= 0 || wo_l <= 0)
        throw DimensionError("conv2d_transpose: non-positive output extent for input " +
                             shape_str(input.shape()) + ", kernel " + std::to_string(ks) +
                             ", stride " + std::to_string(stride) + ", pad " + std::to_string(pad));
    if (bias)
        require(bias->rank() == 1 && bias->dim(0) == cout,
                "conv2d_transpose: bias must have shape [" + std::to_string(cout) + "]");
    const std::size_t ho = std::size_t(ho_l), wo = std::size_t(wo_l);

    std::vector<T> out(cout * ho * wo, T(0));
    if (bias)
        for (std::size_t oc = 0; oc < cout; ++oc)
            std::fill(&out[oc * ho * wo], &out[oc * ho * wo] + ho * wo, bias->data()[oc]);
    auto X = input.data();
    auto K = kernels.data();
    for (std::size_t ic = 0; ic < cin; ++ic) {
        const T* iplane = &X[ic * h * w];
        for (std::size_t oc = 0; oc < cout; ++oc) {
            T* oplane = &out[oc * ho * wo];
            for (std::size_t ky = 0; ky < ks; ++ky) {
                const auto ry = valid_range(long(ky) - long(pad), stride, ho, h);
                for (std::size_t kx = 0; kx < ks; ++kx) {
                    const T kv = K[((ic * cout + oc) * ks + ky) * ks + kx];
                    const long off = long(kx) - long(pad);
                    const auto rx = valid_range(off, stride, wo, w);
                    for (std::size_t iy = ry.lo; iy < ry.hi; ++iy) {
                        const T* irow = iplane + iy * w;
                        T* orow = oplane + (iy * stride + ky - pad) * wo;
                        for (std::size_t ix = rx.lo; ix < rx.hi; ++ix)
                            orow[long(ix * stride) + off] += kv * irow[ix];
                    }
                }
            }
        }
    }

    std::vector<typename BasicTensor<T>::NodePtr> inputs{input.node_ptr(), kernels.node_ptr()};
    if (bias) inputs.push_back(bias->node_ptr());
    const bool has_bias = bias != nullptr;
    return BasicTensor<T>::make_result(
        {cout, ho, wo}, std::move(out), std::move(inputs),
        [=](NodeT<T>& self) {
            auto& nx = *self.inputs[0];
            auto& nk = *self.inputs[1];
            const auto& G = self.grad;
            if (nx.requires_grad) nx.ensure_grad();
            if (nk.requires_grad) nk.ensure_grad();
            for (std::size_t ic = 0; ic < cin; ++ic) {
                const std::size_t ibase = ic * h * w;
                for (std::size_t oc = 0; oc < cout; ++oc) {
                    const T* gplane = &G[oc * ho * wo];
                    for (std::size_t ky = 0; ky < ks; ++ky) {
                        const auto ry = valid_range(long(ky) - long(pad), stride, ho, h);
                        for (std::size_t kx = 0; kx < ks; ++kx) {
                            const std::size_t kidx = ((ic * cout + oc) * ks + ky) * ks + kx;
                            const T kv = nk.data[kidx];
                            const long off = long(kx) - long(pad);
                            const auto rx = valid_range(off, stride, wo, w);
                            T kacc = 0;
                            for (std::size_t iy = ry.lo; iy < ry.hi; ++iy) {
                                const T* grow = gplane + (iy * stride + ky - pad) * wo;
                                const std::size_t irow = ibase + iy * w;
                                for (std::size_t ix = rx.lo; ix < rx.hi; ++ix) {
                                    const T g = grow[long(ix * stride) + off];
                                    if (nx.requires_grad) nx.grad[irow + ix] += kv * g;
                                    kacc += nx.data[irow + ix] * g;
                                }
                            }
                            if (nk.requires_grad) nk.grad[kidx] += kacc;
                        }
                    }
                }
            }
            if (has_bias && self.inputs[2]->requires_grad) {
                auto& nb = *self.inputs[2];
                nb.ensure_grad();
                for (std::size_t oc = 0; oc < cout; ++oc) {
                    T acc = 0;
                    for (std::size_t i = 0; i < ho * wo; ++i) acc += G[oc * ho * wo + i];
                    nb.grad[oc] += acc;
                }
            }
        });
}

}  // namespace

template <class T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& kernels,
                      std::size_t stride, std::size_t pad) {
    return conv2d_impl<T>(input, kernels, nullptr, stride, pad);
}

template <class T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& kernels,
                      const BasicTensor<T>& bias, std::size_t stride, std::size_t pad) {
    return conv2d_impl<T>(input, kernels, &bias, stride, pad);
}

template <class T>
BasicTensor<T> conv2d_transpose(const BasicTensor<T>& input, const BasicTensor<T>& kernels,
                                std::size_t stride, std::size_t pad) {
    return conv2d_transpose_impl<T>(input, kernels, nullptr, stride, pad);
}

template <class T>
BasicTensor<T> conv2d_transpose(const BasicTensor<T>& input, const BasicTensor<T>& kernels,
                                const BasicTensor<T>& bias, std::size_t stride, std::size_t pad) {
    return conv2d_transpose_impl<T>(input, kernels, &bias, stride, pad);
}

// ---------------------------------------------------------------------------
// maxpool2d

template <class T>
BasicTensor<T> maxpool2d(const BasicTensor<T>& input, std::size_t size, std::size_t stride) {
    require(input.rank() == 3, "maxpool2d: input must be C x H x W, got " + shape_str(input.shape()));
    require(size >= 1 && stride >= 1, "maxpool2d: size and stride must be >= 1");
    const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
    if (size > h || size > w)
        throw DimensionError("maxpool2d: window " + std::to_string(size) + " exceeds input " +
                             shape_str(input.shape()));
    const std::size_t ho = (h - size) / stride + 1, wo = (w - size) / stride + 1;
    std::vector<T> out(c * ho * wo);
    std::vector<std::size_t> argmax(c * ho * wo);
    auto X = input.data();
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t oy = 0; oy < ho; ++oy)
            for (std::size_t ox = 0; ox < wo; ++ox) {
                std::size_t best = ch * h * w + oy * stride * w + ox * stride;
                for (std::size_t dy = 0; dy < size; ++dy)
                    for (std::size_t dx = 0; dx < size; ++dx) {
                        const std::size_t idx = ch * h * w + (oy * stride + dy) * w + ox * stride + dx;
                        if (X[idx] > X[best]) best = idx;
                    }
                const std::size_t o = (ch * ho + oy) * wo + ox;
                out[o] = X[best];
                argmax[o] = best;
            }
    return BasicTensor<T>::make_result(
        {c, ho, wo}, std::move(out), {input.node_ptr()},
        [argmax = std::move(argmax)](NodeT<T>& self) {
            auto& nx = *self.inputs[0];
            nx.ensure_grad();
            for (std::size_t o = 0; o < argmax.size(); ++o) nx.grad[argmax[o]] += self.grad[o];
        });
}

// ---------------------------------------------------------------------------
// pointwise

namespace {

template <class T, class F, class D>
BasicTensor<T> unary(const BasicTensor<T>& x, F f, D dfdx) {
    auto X = x.data();
    std::vector<T> out(X.size());
    for (std::size_t i = 0; i < X.size(); ++i) out[i] = f(X[i]);
    return BasicTensor<T>::make_result(x.shape(), std::move(out), {x.node_ptr()},
                                       [dfdx](NodeT<T>& self) {
                                           auto& nx = *self.inputs[0];
                                           nx.ensure_grad();
                                           for (std::size_t i = 0; i < nx.data.size(); ++i)
                                               nx.grad[i] += self.grad[i] *
                                                             dfdx(nx.data[i], self.data[i]);
                                       });
}

}  // namespace

template <class T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
    return unary(
        x, [](T v) { return v > T(0) ? v : T(0); },
        [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <class T>
BasicTensor<T> leaky_relu(const BasicTensor<T>& x, T slope) {
    return unary(
        x, [slope](T v) { return v > T(0) ? v : slope * v; },
        [slope](T v, T) { return v > T(0) ? T(1) : slope; });
}

template <class T>
BasicTensor<T> tanh(const BasicTensor<T>& x) {
    return unary(
        x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <class T>
BasicTensor<T> scale(const BasicTensor<T>& x, T k) {
    return unary(
        x, [k](T v) { return k * v; }, [k](T, T) { return k; });
}

template <class T>
BasicTensor<T> add_scalar(const BasicTensor<T>& x, T k) {
    return unary(
        x, [k](T v) { return v + k; }, [](T, T) { return T(1); });
}

template <class T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    require_same_shape(a.shape(), b.shape(), "add");
    auto A = a.data();
    auto B = b.data();
    std::vector<T> out(A.size());
    for (std::size_t i = 0; i < A.size(); ++i) out[i] = A[i] + B[i];
    return BasicTensor<T>::make_result(a.shape(), std::move(out), {a.node_ptr(), b.node_ptr()},
                                       [](NodeT<T>& self) {
                                           for (int k = 0; k < 2; ++k) {
                                               auto& n = *self.inputs[k];
                                               if (!n.requires_grad) continue;
                                               n.ensure_grad();
                                               for (std::size_t i = 0; i < n.grad.size(); ++i)
                                                   n.grad[i] += self.grad[i];
                                           }
                                       });
}

template <class T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    require_same_shape(a.shape(), b.shape(), "sub");
    auto A = a.data();
    auto B = b.data();
    std::vector<T> out(A.size());
    for (std::size_t i = 0; i < A.size(); ++i) out[i] = A[i] - B[i];
    return BasicTensor<T>::make_result(a.shape(), std::move(out), {a.node_ptr(), b.node_ptr()},
                                       [](NodeT<T>& self) {
                                           auto& na = *self.inputs[0];
                                           auto& nb = *self.inputs[1];
                                           if (na.requires_grad) {
                                               na.ensure_grad();
                                               for (std::size_t i = 0; i < na.grad.size(); ++i)
                                                   na.grad[i] += self.grad[i];
                                           }
                                           if (nb.requires_grad) {
                                               nb.ensure_grad();
                                               for (std::size_t i = 0; i < nb.grad.size(); ++i)
                                                   nb.grad[i] -= self.grad[i];
                                           }
                                       });
}

template <class T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    require_same_shape(a.shape(), b.shape(), "mul");
    auto A = a.data();
    auto B = b.data();
    std::vector<T> out(A.size());
    for (std::size_t i = 0; i < A.size(); ++i) out[i] = A[i] * B[i];
    return BasicTensor<T>::make_result(a.shape(), std::move(out), {a.node_ptr(), b.node_ptr()},
                                       [](NodeT<T>& self) {
                                           auto& na = *self.inputs[0];
                                           auto& nb = *self.inputs[1];
                                           if (na.requires_grad) {
                                               na.ensure_grad();
                                               for (std::size_t i = 0; i < na.grad.size(); ++i)
                                                   na.grad[i] += self.grad[i] * nb.data[i];
                                           }
                                           if (nb.requires_grad) {
                                               nb.ensure_grad();
                                               for (std::size_t i = 0; i < nb.grad.size(); ++i)
                                                   nb.grad[i] += self.grad[i] * na.data[i];
                                           }
                                       });
}

template <class T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
    T acc = 0;
    for (T v : x.data()) acc += v;
    return BasicTensor<T>::make_result({1}, {acc}, {x.node_ptr()}, [](NodeT<T>& self) {
        auto& nx = *self.inputs[0];
        nx.ensure_grad();
        for (auto& g : nx.grad) g += self.grad[0];
    });
}

template <class T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape) {
    if (numel(shape) != x.numel())
        throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                             shape_str(shape));
    std::vector<T> out(x.data().begin(), x.data().end());
    return BasicTensor<T>::make_result(std::move(shape), std::move(out), {x.node_ptr()},
                                       [](NodeT<T>& self) {
                                           auto& nx = *self.inputs[0];
                                           nx.ensure_grad();
                                           for (std::size_t i = 0; i < nx.grad.size(); ++i)
                                               nx.grad[i] += self.grad[i];
                                       });
}

template <class T>
BasicTensor<T> transpose(const BasicTensor<T>& x) {
    require(x.rank() == 2, "transpose: expected a matrix, got " + shape_str(x.shape()));
    const std::size_t r = x.dim(0), c = x.dim(1);
    auto X = x.data();
    std::vector<T> out(r * c);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = X[i * c + j];
    return BasicTensor<T>::make_result({c, r}, std::move(out), {x.node_ptr()},
                                       [r, c](NodeT<T>& self) {
                                           auto& nx = *self.inputs[0];
                                           nx.ensure_grad();
                                           for (std::size_t i = 0; i < r; ++i)
                                               for (std::size_t j = 0; j < c; ++j)
                                                   nx.grad[i * c + j] += self.grad[j * r + i];
                                       });
}

// ---------------------------------------------------------------------------
// norms

template <class T>
BasicTensor<T> l2_norm(const BasicTensor<T>& v) {
    T sq = 0;
    for (T x : v.data()) sq += x * x;
    const T norm = std::sqrt(sq);
    return BasicTensor<T>::make_result({1}, {norm}, {v.node_ptr()}, [](NodeT<T>& self) {
        auto& nv = *self.inputs[0];
        nv.ensure_grad();
        const T n = self.data[0];
        if (n == T(0)) return;
        const T g = self.grad[0] / n;
        for (std::size_t i = 0; i < nv.grad.size(); ++i) nv.grad[i] += g * nv.data[i];
    });
}

template <class T>
BasicTensor<T> squash(const BasicTensor<T>& v) {
    auto V = v.data();
    T sq = 0;
    for (T x : V) sq += x * x;
    const T n = std::sqrt(sq);
    std::vector<T> out(V.size(), T(0));
    if (n > T(0)) {
        const T factor = sq / (T(1) + sq);
        for (std::size_t i = 0; i < V.size(); ++i) out[i] = factor * (V[i] / n);
    }
    return BasicTensor<T>::make_result(v.shape(), std::move(out), {v.node_ptr()},
                                       [](NodeT<T>& self) {
                                           auto& nv = *self.inputs[0];
                                           nv.ensure_grad();
                                           T sq = 0;
                                           for (T x : nv.data) sq += x * x;
                                           if (sq == T(0)) return;
                                           const T n = std::sqrt(sq);
                                           // Q(v) = phi(n) v with phi(n) = n / (1 + n^2).
                                           const T denom = T(1) + sq;
                                           const T phi = n / denom;
                                           const T dphi = (T(1) - sq) / (denom * denom);
                                           T vg = 0;
                                           for (std::size_t i = 0; i < nv.data.size(); ++i)
                                               vg += nv.data[i] * self.grad[i];
                                           const T radial = dphi / (n + T(1e-9)) * vg;
                                           for (std::size_t i = 0; i < nv.data.size(); ++i)
                                               nv.grad[i] += phi * self.grad[i] + radial * nv.data[i];
                                       });
}

// ---------------------------------------------------------------------------
// batchnorm2d

template <class T>
BasicTensor<T> batchnorm2d(const BasicTensor<T>& input, const BasicTensor<T>& gamma,
                           const BasicTensor<T>& beta, BasicTensor<T> running_mean,
                           BasicTensor<T> running_var, T eps, T momentum, Mode mode) {
    if (!(eps > T(0))) throw ConfigError("batchnorm2d: eps must be positive");
    require(input.rank() == 3 || input.rank() == 4,
            "batchnorm2d: input must be C x H x W or N x C x H x W, got " + shape_str(input.shape()));
    const bool batched = input.rank() == 4;
    const std::size_t n = batched ? input.dim(0) : 1;
    const std::size_t c = batched ? input.dim(1) : input.dim(0);
    const std::size_t plane = batched ? input.dim(2) * input.dim(3) : input.dim(1) * input.dim(2);
    require(gamma.rank() == 1 && gamma.dim(0) == c && beta.rank() == 1 && beta.dim(0) == c,
            "batchnorm2d: gamma/beta " + shape_str(gamma.shape()) + "/" + shape_str(beta.shape()) +
                " do not match " + std::to_string(c) + " channels");
    const bool have_running = running_mean.defined() && running_var.defined();
    if (have_running)
        require(running_mean.numel() == c && running_var.numel() == c,
                "batchnorm2d: running statistics do not match " + std::to_string(c) + " channels");
    if (mode == Mode::eval && !have_running)
        throw ContractError("batchnorm2d: eval mode requires running statistics");

    const std::size_t count = n * plane;
    auto X = input.data();
    std::vector<T> mean(c), inv_std(c);
    for (std::size_t ch = 0; ch < c; ++ch) {
        if (mode == Mode::train) {
            T m = 0;
            for (std::size_t b = 0; b < n; ++b)
                for (std::size_t i = 0; i < plane; ++i) m += X[(b * c + ch) * plane + i];
            m /= T(count);
            T var = 0;
            for (std::size_t b = 0; b < n; ++b)
                for (std::size_t i = 0; i < plane; ++i) {
                    const T d = X[(b * c + ch) * plane + i] - m;
                    var += d * d;
                }
            var /= T(count);
            mean[ch] = m;
            inv_std[ch] = T(1) / std::sqrt(var + eps);
            if (have_running) {
                auto rm = running_mean.mutable_data();
                auto rv = running_var.mutable_data();
                rm[ch] = (T(1) - momentum) * rm[ch] + momentum * m;
                rv[ch] = (T(1) - momentum) * rv[ch] + momentum * var;
            }
        } else {
            mean[ch] = running_mean.data()[ch];
            inv_std[ch] = T(1) / std::sqrt(running_var.data()[ch] + eps);
        }
    }

    std::vector<T> xhat(X.size()), out(X.size());
    auto Gm = gamma.data();
    auto Bt = beta.data();
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t i = 0; i < plane; ++i) {
                const std::size_t idx = (b * c + ch) * plane + i;
                xhat[idx] = (X[idx] - mean[ch]) * inv_std[ch];
                out[idx] = Gm[ch] * xhat[idx] + Bt[ch];
            }

    return BasicTensor<T>::make_result(
        input.shape(), std::move(out), {input.node_ptr(), gamma.node_ptr(), beta.node_ptr()},
        [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](NodeT<T>& self) {
            auto& nx = *self.inputs[0];
            auto& ng = *self.inputs[1];
            auto& nb = *self.inputs[2];
            const auto& G = self.grad;
            if (nx.requires_grad) nx.ensure_grad();
            if (ng.requires_grad) ng.ensure_grad();
            if (nb.requires_grad) nb.ensure_grad();
            for (std::size_t ch = 0; ch < c; ++ch) {
                T sum_g = 0, sum_gx = 0;
                for (std::size_t b = 0; b < n; ++b)
                    for (std::size_t i = 0; i < plane; ++i) {
                        const std::size_t idx = (b * c + ch) * plane + i;
                        sum_g += G[idx];
                        sum_gx += G[idx] * xhat[idx];
                    }
                if (ng.requires_grad) ng.grad[ch] += sum_gx;
                if (nb.requires_grad) nb.grad[ch] += sum_g;
                if (!nx.requires_grad) continue;
                const T gm = ng.data[ch];
                for (std::size_t b = 0; b < n; ++b)
                    for (std::size_t i = 0; i < plane; ++i) {
                        const std::size_t idx = (b * c + ch) * plane + i;
                        if (mode == Mode::train) {
                            nx.grad[idx] += gm * inv_std[ch] *
                                            (G[idx] - sum_g / T(count) - xhat[idx] * sum_gx / T(count));
                        } else {
                            nx.grad[idx] += gm * inv_std[ch] * G[idx];
                        }
                    }
            }
        });
}

// ---------------------------------------------------------------------------

#define DDIPNET_INSTANTIATE_OPS(T)                                                                \
    template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);                  \
    template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&, std::size_t,      \
                                   std::size_t);                                                   \
    template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&,                   \
                                   const BasicTensor<T>&, std::size_t, std::size_t);               \
    template BasicTensor<T> conv2d_transpose(const BasicTensor<T>&, const BasicTensor<T>&,         \
                                             std::size_t, std::size_t);                            \
    template BasicTensor<T> conv2d_transpose(const BasicTensor<T>&, const BasicTensor<T>&,         \
                                             const BasicTensor<T>&, std::size_t, std::size_t);     \
    template BasicTensor<T> maxpool2d(const BasicTensor<T>&, std::size_t, std::size_t);            \
    template BasicTensor<T> relu(const BasicTensor<T>&);                                           \
    template BasicTensor<T> leaky_relu(const BasicTensor<T>&, T);                                  \
    template BasicTensor<T> tanh(const BasicTensor<T>&);                                           \
    template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                     \
    template BasicTensor<T> sub(const BasicTensor<T>&, const BasicTensor<T>&);                     \
    template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                     \
    template BasicTensor<T> scale(const BasicTensor<T>&, T);                                       \
    template BasicTensor<T> add_scalar(const BasicTensor<T>&, T);                                  \
    template BasicTensor<T> sum(const BasicTensor<T>&);                                            \
    template BasicTensor<T> reshape(const BasicTensor<T>&, Shape);                                 \
    template BasicTensor<T> transpose(const BasicTensor<T>&);                                      \
    template BasicTensor<T> l2_norm(const BasicTensor<T>&);                                        \
    template BasicTensor<T> squash(const BasicTensor<T>&);                                         \
    template BasicTensor<T> batchnorm2d(const BasicTensor<T>&, const BasicTensor<T>&,              \
                                        const BasicTensor<T>&, BasicTensor<T>, BasicTensor<T>, T,  \
                                        T, Mode);

DDIPNET_INSTANTIATE_OPS(float)
DDIPNET_INSTANTIATE_OPS(double)

#undef DDIPNET_INSTANTIATE_OPS

}  // namespace ddipnet
