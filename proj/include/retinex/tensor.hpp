#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "retinex/errors.hpp"

namespace retinex {

/// Thread-local switch: when false, ops compute values but record no graph.
inline bool& grad_recording_enabled() {
    static thread_local bool enabled = true;
    return enabled;
}

/// RAII scope that disables graph recording (inference, oracles).
struct NoGradGuard {
    NoGradGuard() : previous_(grad_recording_enabled()) { grad_recording_enabled() = false; }
    ~NoGradGuard() { grad_recording_enabled() = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

template <typename T>
class Tensor;

template <typename T>
using TensorPtr = std::shared_ptr<Tensor<T>>;

/// Dense N-d value array participating in a reverse-mode differentiable graph.
/// Activations are 4-D [batch, channels, height, width]; scalars have shape {1};
/// conv kernels are [out_ch, in_ch, k, k] and biases [out_ch].
template <typename T>
class Tensor : public std::enable_shared_from_this<Tensor<T>> {
public:
    std::vector<int> shape;
    std::vector<T> values;
    bool requires_grad = false;
    std::vector<T> grad;  // empty until backprop reaches this tensor

    // Graph edges: inputs of the op that produced this tensor, plus the
    // closure that pushes this->grad into their grads.
    std::vector<TensorPtr<T>> parents;
    std::function<void(Tensor<T>&)> backward;

    static TensorPtr<T> create(std::vector<int> shape, bool requires_grad = false) {
        auto t = std::make_shared<Tensor<T>>();
        t->shape = std::move(shape);
        t->values.assign(static_cast<std::size_t>(count(t->shape)), T(0));
        t->requires_grad = requires_grad;
        return t;
    }

    static TensorPtr<T> from_values(std::vector<int> shape, std::vector<T> values,
                                    bool requires_grad = false) {
        if (count(shape) != static_cast<std::int64_t>(values.size())) {
            throw ShapeError("tensor: value count " + std::to_string(values.size()) +
                             " does not match shape product " + std::to_string(count(shape)));
        }
        auto t = std::make_shared<Tensor<T>>();
        t->shape = std::move(shape);
        t->values = std::move(values);
        t->requires_grad = requires_grad;
        return t;
    }

    static TensorPtr<T> full(std::vector<int> shape, T value, bool requires_grad = false) {
        auto t = create(std::move(shape), requires_grad);
        std::fill(t->values.begin(), t->values.end(), value);
        return t;
    }

    static TensorPtr<T> zeros(std::vector<int> shape, bool requires_grad = false) {
        return create(std::move(shape), requires_grad);
    }

    static TensorPtr<T> scalar(T value) { return from_values({1}, {value}); }

    static std::int64_t count(const std::vector<int>& shape) {
        std::int64_t n = 1;
        for (int d : shape) n *= d;
        return shape.empty() ? 0 : n;
    }

    std::int64_t size() const { return static_cast<std::int64_t>(values.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
    bool is_scalar() const { return size() == 1; }
    bool is_leaf() const { return parents.empty(); }

    // 4-D accessors.
    int batch() const { return dim(0); }
    int channels() const { return dim(1); }
    int height() const { return dim(2); }
    int width() const { return dim(3); }

    T& at(int b, int c, int y, int x) {
        return values[static_cast<std::size_t>(((static_cast<std::int64_t>(b) * dim(1) + c) * dim(2) + y) * dim(3) + x)];
    }
    const T& at(int b, int c, int y, int x) const {
        return const_cast<Tensor<T>*>(this)->at(b, c, y, x);
    }

    void ensure_grad() {
        if (grad.size() != values.size()) grad.assign(values.size(), T(0));
    }

    void zero_grad() {
        if (!grad.empty()) std::fill(grad.begin(), grad.end(), T(0));
    }
};

using TensorF = Tensor<float>;
using TensorFPtr = TensorPtr<float>;

namespace detail {

template <typename T>
void require_same_shape(const TensorPtr<T>& a, const TensorPtr<T>& b, const char* op) {
    if (a->shape == b->shape) return;
    for (int i = 0; i < std::max(a->rank(), b->rank()); ++i) {
        int da = i < a->rank() ? a->dim(i) : -1;
        int db = i < b->rank() ? b->dim(i) : -1;
        if (da != db) {
            throw ShapeError(std::string(op) + ": dimension " + std::to_string(i) + " mismatch (" +
                             std::to_string(da) + " vs " + std::to_string(db) + ")");
        }
    }
    throw ShapeError(std::string(op) + ": rank mismatch");
}

template <typename T>
void require_4d(const TensorPtr<T>& t, const char* op) {
    if (t->rank() != 4) {
        throw ShapeError(std::string(op) + ": expected a 4-D tensor, got rank " +
                         std::to_string(t->rank()));
    }
}

// Wires `out` into the graph if recording is on and any parent needs gradients.
template <typename T>
void attach(const TensorPtr<T>& out, std::vector<TensorPtr<T>> parents,
            std::function<void(Tensor<T>&)> backward) {
    if (!grad_recording_enabled()) return;
    bool needed = false;
    for (const auto& p : parents) needed = needed || p->requires_grad;
    if (!needed) return;
    out->requires_grad = true;
    out->parents = std::move(parents);
    out->backward = std::move(backward);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

template <typename T>
TensorPtr<T> add(const TensorPtr<T>& a, const TensorPtr<T>& b) {
    detail::require_same_shape(a, b, "add");
    auto out = Tensor<T>::create(a->shape);
    for (std::int64_t i = 0; i < a->size(); ++i) out->values[i] = a->values[i] + b->values[i];
    detail::attach<T>(out, {a, b}, [a, b](Tensor<T>& self) {
        if (a->requires_grad) {
            a->ensure_grad();
            for (std::int64_t i = 0; i < self.size(); ++i) a->grad[i] += self.grad[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (std::int64_t i = 0; i < self.size(); ++i) b->grad[i] += self.grad[i];
        }
    });
    return out;
}

template <typename T>
TensorPtr<T> sub(const TensorPtr<T>& a, const TensorPtr<T>& b) {
    detail::require_same_shape(a, b, "sub");
    auto out = Tensor<T>::create(a->shape);
    for (std::int64_t i = 0; i < a->size(); ++i) out->values[i] = a->values[i] - b->values[i];
    detail::attach<T>(out, {a, b}, [a, b](Tensor<T>& self) {
        if (a->requires_grad) {
            a->ensure_grad();
            for (std::int64_t i = 0; i < self.size(); ++i) a->grad[i] += self.grad[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (std::int64_t i = 0; i < self.size(); ++i) b->grad[i] -= self.grad[i];
        }
    });
    return out;
}

/// Elementwise product. Accepts equal shapes, or 4-D operands that differ only
/// in the channel dimension with one side single-channel; the 1-channel map is
/// broadcast across the other's channels and its gradient sums over them.
template <typename T>
TensorPtr<T> mul(const TensorPtr<T>& a, const TensorPtr<T>& b) {
    if (a->shape == b->shape) {
        auto out = Tensor<T>::create(a->shape);
        for (std::int64_t i = 0; i < a->size(); ++i) out->values[i] = a->values[i] * b->values[i];
        detail::attach<T>(out, {a, b}, [a, b](Tensor<T>& self) {
            if (a->requires_grad) {
                a->ensure_grad();
                for (std::int64_t i = 0; i < self.size(); ++i) a->grad[i] += self.grad[i] * b->values[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (std::int64_t i = 0; i < self.size(); ++i) b->grad[i] += self.grad[i] * a->values[i];
            }
        });
        return out;
    }

    // Broadcast path: [B,C,H,W] * [B,1,H,W] in either order.
    detail::require_4d(a, "mul");
    detail::require_4d(b, "mul");
    const bool a_wide = a->channels() > 1;
    const TensorPtr<T>& wide = a_wide ? a : b;
    const TensorPtr<T>& narrow = a_wide ? b : a;
    if (narrow->channels() != 1 || wide->batch() != narrow->batch() ||
        wide->height() != narrow->height() || wide->width() != narrow->width()) {
        detail::require_same_shape(a, b, "mul");  // throws naming the bad dimension
    }
    const int B = wide->batch(), C = wide->channels(), H = wide->height(), W = wide->width();
    const std::int64_t plane = static_cast<std::int64_t>(H) * W;
    auto out = Tensor<T>::create(wide->shape);
    for (int bi = 0; bi < B; ++bi) {
        const T* nv = narrow->values.data() + bi * plane;
        for (int c = 0; c < C; ++c) {
            const T* wv = wide->values.data() + (bi * C + c) * plane;
            T* ov = out->values.data() + (bi * C + c) * plane;
            for (std::int64_t i = 0; i < plane; ++i) ov[i] = wv[i] * nv[i];
        }
    }
    detail::attach<T>(out, {a, b}, [wide, narrow, B, C, plane](Tensor<T>& self) {
        if (wide->requires_grad) {
            wide->ensure_grad();
            for (int bi = 0; bi < B; ++bi) {
                const T* nv = narrow->values.data() + bi * plane;
                for (int c = 0; c < C; ++c) {
                    const std::int64_t off = (bi * C + c) * plane;
                    for (std::int64_t i = 0; i < plane; ++i)
                        wide->grad[off + i] += self.grad[off + i] * nv[i];
                }
            }
        }
        if (narrow->requires_grad) {
            narrow->ensure_grad();
            for (int bi = 0; bi < B; ++bi) {
                T* ng = narrow->grad.data() + bi * plane;
                for (int c = 0; c < C; ++c) {
                    const std::int64_t off = (bi * C + c) * plane;
                    for (std::int64_t i = 0; i < plane; ++i)
                        ng[i] += self.grad[off + i] * wide->values[off + i];
                }
            }
        }
    });
    return out;
}

template <typename T>
TensorPtr<T> scale(const TensorPtr<T>& x, T factor) {
    auto out = Tensor<T>::create(x->shape);
    for (std::int64_t i = 0; i < x->size(); ++i) out->values[i] = x->values[i] * factor;
    detail::attach<T>(out, {x}, [x, factor](Tensor<T>& self) {
        x->ensure_grad();
        for (std::int64_t i = 0; i < self.size(); ++i) x->grad[i] += self.grad[i] * factor;
    });
    return out;
}

template <typename T>
TensorPtr<T> abs(const TensorPtr<T>& x) {
    auto out = Tensor<T>::create(x->shape);
    for (std::int64_t i = 0; i < x->size(); ++i) out->values[i] = std::abs(x->values[i]);
    // subgradient at 0 is 0
    detail::attach<T>(out, {x}, [x](Tensor<T>& self) {
        x->ensure_grad();
        for (std::int64_t i = 0; i < self.size(); ++i) {
            const T v = x->values[i];
            if (v > T(0)) x->grad[i] += self.grad[i];
            else if (v < T(0)) x->grad[i] -= self.grad[i];
        }
    });
    return out;
}

template <typename T>
TensorPtr<T> exp(const TensorPtr<T>& x) {
    auto out = Tensor<T>::create(x->shape);
    for (std::int64_t i = 0; i < x->size(); ++i) out->values[i] = std::exp(x->values[i]);
    detail::attach<T>(out, {x}, [x](Tensor<T>& self) {
        x->ensure_grad();
        for (std::int64_t i = 0; i < self.size(); ++i) x->grad[i] += self.grad[i] * self.values[i];
    });
    return out;
}

template <typename T>
TensorPtr<T> relu(const TensorPtr<T>& x) {
    auto out = Tensor<T>::create(x->shape);
    for (std::int64_t i = 0; i < x->size(); ++i) out->values[i] = x->values[i] > T(0) ? x->values[i] : T(0);
    detail::attach<T>(out, {x}, [x](Tensor<T>& self) {
        x->ensure_grad();
        for (std::int64_t i = 0; i < self.size(); ++i)
            if (x->values[i] > T(0)) x->grad[i] += self.grad[i];
    });
    return out;
}

template <typename T>
TensorPtr<T> sigmoid(const TensorPtr<T>& x) {
    // Output is kept strictly inside (0,1): saturated values are nudged to the
    // nearest representable interior value.
    const T lo = std::numeric_limits<T>::min();
    const T hi = T(1) - std::numeric_limits<T>::epsilon() / T(2);
    auto out = Tensor<T>::create(x->shape);
    for (std::int64_t i = 0; i < x->size(); ++i) {
        const T v = x->values[i];
        T y;
        if (v >= T(0)) {
            y = T(1) / (T(1) + std::exp(-v));
        } else {
            const T e = std::exp(v);
            y = e / (T(1) + e);
        }
        out->values[i] = std::clamp(y, lo, hi);
    }
    detail::attach<T>(out, {x}, [x](Tensor<T>& self) {
        x->ensure_grad();
        for (std::int64_t i = 0; i < self.size(); ++i) {
            const T y = self.values[i];
            x->grad[i] += self.grad[i] * y * (T(1) - y);
        }
    });
    return out;
}

/// Copies values into a fresh leaf with no graph history.
template <typename T>
TensorPtr<T> detach(const TensorPtr<T>& x) {
    return Tensor<T>::from_values(x->shape, x->values);
}

// ---------------------------------------------------------------------------
// Spatial gradient (forward differences, zero in the last row/column)
// ---------------------------------------------------------------------------

enum class GradientAxis { horizontal, vertical };

template <typename T>
TensorPtr<T> spatial_gradient(const TensorPtr<T>& x, GradientAxis axis) {
    detail::require_4d(x, "spatial_gradient");
    const int B = x->batch(), C = x->channels(), H = x->height(), W = x->width();
    if (axis == GradientAxis::horizontal && W < 2)
        throw ShapeError("spatial_gradient: width " + std::to_string(W) + " is degenerate");
    if (axis == GradientAxis::vertical && H < 2)
        throw ShapeError("spatial_gradient: height " + std::to_string(H) + " is degenerate");

    auto out = Tensor<T>::create(x->shape);
    const bool horiz = axis == GradientAxis::horizontal;
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < H; ++y)
                for (int xx = 0; xx < W; ++xx) {
                    T v = T(0);
                    if (horiz && xx + 1 < W) v = x->at(b, c, y, xx + 1) - x->at(b, c, y, xx);
                    if (!horiz && y + 1 < H) v = x->at(b, c, y + 1, xx) - x->at(b, c, y, xx);
                    out->at(b, c, y, xx) = v;
                }
    detail::attach<T>(out, {x}, [x, B, C, H, W, horiz](Tensor<T>& self) {
        x->ensure_grad();
        auto xg = [&](int b, int c, int y, int xx) -> T& {
            return x->grad[static_cast<std::size_t>(((static_cast<std::int64_t>(b) * C + c) * H + y) * W + xx)];
        };
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c)
                for (int y = 0; y < H; ++y)
                    for (int xx = 0; xx < W; ++xx) {
                        const T g = self.grad[static_cast<std::size_t>(((static_cast<std::int64_t>(b) * C + c) * H + y) * W + xx)];
                        if (g == T(0)) continue;
                        if (horiz && xx + 1 < W) {
                            xg(b, c, y, xx + 1) += g;
                            xg(b, c, y, xx) -= g;
                        } else if (!horiz && y + 1 < H) {
                            xg(b, c, y + 1, xx) += g;
                            xg(b, c, y, xx) -= g;
                        }
                    }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename T>
TensorPtr<T> reduce_mean(const TensorPtr<T>& x) {
    if (x->size() == 0) throw ShapeError("reduce_mean: empty tensor");
    long double acc = 0;
    for (std::int64_t i = 0; i < x->size(); ++i) acc += x->values[i];
    const T n = static_cast<T>(x->size());
    auto out = Tensor<T>::from_values({1}, {static_cast<T>(acc / static_cast<long double>(x->size()))});
    detail::attach<T>(out, {x}, [x, n](Tensor<T>& self) {
        x->ensure_grad();
        const T g = self.grad[0] / n;
        for (std::int64_t i = 0; i < x->size(); ++i) x->grad[i] += g;
    });
    return out;
}

template <typename T>
TensorPtr<T> reduce_mean_abs(const TensorPtr<T>& x) {
    if (x->size() == 0) throw ShapeError("reduce_mean_abs: empty tensor");
    long double acc = 0;
    for (std::int64_t i = 0; i < x->size(); ++i) acc += std::abs(x->values[i]);
    const T n = static_cast<T>(x->size());
    auto out = Tensor<T>::from_values({1}, {static_cast<T>(acc / static_cast<long double>(x->size()))});
    detail::attach<T>(out, {x}, [x, n](Tensor<T>& self) {
        x->ensure_grad();
        const T g = self.grad[0] / n;
        for (std::int64_t i = 0; i < x->size(); ++i) {
            const T v = x->values[i];
            if (v > T(0)) x->grad[i] += g;
            else if (v < T(0)) x->grad[i] -= g;
        }
    });
    return out;
}

/// Mean over the channel dimension: [B,C,H,W] -> [B,1,H,W].
template <typename T>
TensorPtr<T> mean_channels(const TensorPtr<T>& x) {
    detail::require_4d(x, "mean_channels");
    const int B = x->batch(), C = x->channels(), H = x->height(), W = x->width();
    const std::int64_t plane = static_cast<std::int64_t>(H) * W;
    auto out = Tensor<T>::create({B, 1, H, W});
    for (int b = 0; b < B; ++b)
        for (std::int64_t i = 0; i < plane; ++i) {
            T acc = T(0);
            for (int c = 0; c < C; ++c) acc += x->values[(b * C + c) * plane + i];
            out->values[b * plane + i] = acc / static_cast<T>(C);
        }
    detail::attach<T>(out, {x}, [x, B, C, plane](Tensor<T>& self) {
        x->ensure_grad();
        for (int b = 0; b < B; ++b)
            for (std::int64_t i = 0; i < plane; ++i) {
                const T g = self.grad[b * plane + i] / static_cast<T>(C);
                for (int c = 0; c < C; ++c) x->grad[(b * C + c) * plane + i] += g;
            }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Channel plumbing
// ---------------------------------------------------------------------------

/// Copies channels [first, first+count) into a new [B,count,H,W] tensor.
template <typename T>
TensorPtr<T> slice_channels(const TensorPtr<T>& x, int first, int count) {
    detail::require_4d(x, "slice_channels");
    if (first < 0 || count < 1 || first + count > x->channels()) {
        throw ShapeError("slice_channels: range [" + std::to_string(first) + ", " +
                         std::to_string(first + count) + ") outside channel dimension of extent " +
                         std::to_string(x->channels()));
    }
    const int B = x->batch(), C = x->channels(), H = x->height(), W = x->width();
    const std::int64_t plane = static_cast<std::int64_t>(H) * W;
    auto out = Tensor<T>::create({B, count, H, W});
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < count; ++c)
            std::copy_n(x->values.data() + (b * C + first + c) * plane, plane,
                        out->values.data() + (b * count + c) * plane);
    detail::attach<T>(out, {x}, [x, first, count, B, C, plane](Tensor<T>& self) {
        x->ensure_grad();
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < count; ++c) {
                const T* g = self.grad.data() + (b * count + c) * plane;
                T* xg = x->grad.data() + (b * C + first + c) * plane;
                for (std::int64_t i = 0; i < plane; ++i) xg[i] += g[i];
            }
    });
    return out;
}

/// Concatenates same-sized tensors along the channel dimension.
template <typename T>
TensorPtr<T> concat_channels(const std::vector<TensorPtr<T>>& parts) {
    if (parts.empty()) throw ShapeError("concat_channels: no inputs");
    detail::require_4d(parts[0], "concat_channels");
    const int B = parts[0]->batch(), H = parts[0]->height(), W = parts[0]->width();
    int total_c = 0;
    for (const auto& p : parts) {
        detail::require_4d(p, "concat_channels");
        if (p->batch() != B || p->height() != H || p->width() != W) {
            throw ShapeError("concat_channels: spatial/batch dimensions differ between inputs");
        }
        total_c += p->channels();
    }
    const std::int64_t plane = static_cast<std::int64_t>(H) * W;
    auto out = Tensor<T>::create({B, total_c, H, W});
    for (int b = 0; b < B; ++b) {
        int at_c = 0;
        for (const auto& p : parts) {
            const int pc = p->channels();
            std::copy_n(p->values.data() + static_cast<std::int64_t>(b) * pc * plane, pc * plane,
                        out->values.data() + (static_cast<std::int64_t>(b) * total_c + at_c) * plane);
            at_c += pc;
        }
    }
    detail::attach<T>(out, parts, [parts, B, total_c, plane](Tensor<T>& self) {
        for (int b = 0; b < B; ++b) {
            int at_c = 0;
            for (const auto& p : parts) {
                const int pc = p->channels();
                if (p->requires_grad) {
                    p->ensure_grad();
                    const T* g = self.grad.data() + (static_cast<std::int64_t>(b) * total_c + at_c) * plane;
                    T* pg = p->grad.data() + static_cast<std::int64_t>(b) * pc * plane;
                    for (std::int64_t i = 0; i < pc * plane; ++i) pg[i] += g[i];
                }
                at_c += pc;
            }
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Nearest-neighbor resize
// ---------------------------------------------------------------------------

/// Nearest-neighbor resize with the floor convention
/// (source index = floor(out_index * in_extent / out_extent)).
/// The gradient accumulates into the copied source cell.
template <typename T>
TensorPtr<T> resize_nearest(const TensorPtr<T>& x, int target_h, int target_w) {
    detail::require_4d(x, "resize_nearest");
    if (target_h < 1) throw ShapeError("resize_nearest: target height must be >= 1");
    if (target_w < 1) throw ShapeError("resize_nearest: target width must be >= 1");
    const int B = x->batch(), C = x->channels(), H = x->height(), W = x->width();
    if (target_h == H && target_w == W) {
        auto out = Tensor<T>::from_values(x->shape, x->values);
        detail::attach<T>(out, {x}, [x](Tensor<T>& self) {
            x->ensure_grad();
            for (std::int64_t i = 0; i < self.size(); ++i) x->grad[i] += self.grad[i];
        });
        return out;
    }
    auto out = Tensor<T>::create({B, C, target_h, target_w});
    std::vector<int> src_y(static_cast<std::size_t>(target_h)), src_x(static_cast<std::size_t>(target_w));
    for (int y = 0; y < target_h; ++y) src_y[y] = static_cast<int>(static_cast<std::int64_t>(y) * H / target_h);
    for (int xx = 0; xx < target_w; ++xx) src_x[xx] = static_cast<int>(static_cast<std::int64_t>(xx) * W / target_w);
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const T* src = x->values.data() + (static_cast<std::int64_t>(b) * C + c) * H * W;
            T* dst = out->values.data() + (static_cast<std::int64_t>(b) * C + c) * target_h * target_w;
            for (int y = 0; y < target_h; ++y)
                for (int xx = 0; xx < target_w; ++xx)
                    dst[y * target_w + xx] = src[src_y[y] * W + src_x[xx]];
        }
    detail::attach<T>(out, {x}, [x, B, C, H, W, target_h, target_w, src_y, src_x](Tensor<T>& self) {
        x->ensure_grad();
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c) {
                T* xg = x->grad.data() + (static_cast<std::int64_t>(b) * C + c) * H * W;
                const T* g = self.grad.data() + (static_cast<std::int64_t>(b) * C + c) * target_h * target_w;
                for (int y = 0; y < target_h; ++y)
                    for (int xx = 0; xx < target_w; ++xx)
                        xg[src_y[y] * W + src_x[xx]] += g[y * target_w + xx];
            }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

/// 3x3 or 1x1 cross-correlation, stride 1 or 2, zero "same" padding
/// (output spatial extent = ceil(input extent / stride)).
struct ConvSpec {
    int in_channels = 0;
    int out_channels = 0;
    int kernel = 3;
    int stride = 1;
    int padding = 1;
};

inline ConvSpec conv_spec(int in_channels, int out_channels, int kernel, int stride) {
    if (kernel != 1 && kernel != 3)
        throw ShapeError("conv_spec: kernel must be 1 or 3, got " + std::to_string(kernel));
    if (stride != 1 && stride != 2)
        throw ShapeError("conv_spec: stride must be 1 or 2, got " + std::to_string(stride));
    if (in_channels < 1 || out_channels < 1)
        throw ShapeError("conv_spec: channel counts must be positive");
    return ConvSpec{in_channels, out_channels, kernel, stride, (kernel - 1) / 2};
}

namespace detail {

// col is [Ci*k*k, Ho*Wo] row-major.
template <typename T>
void im2col(const T* img, int Ci, int H, int W, int k, int stride, int pad, int Ho, int Wo, T* col) {
    const std::int64_t P = static_cast<std::int64_t>(Ho) * Wo;
    for (int ci = 0; ci < Ci; ++ci)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                T* dst = col + ((static_cast<std::int64_t>(ci) * k + ky) * k + kx) * P;
                for (int oy = 0; oy < Ho; ++oy) {
                    const int iy = oy * stride + ky - pad;
                    T* row = dst + static_cast<std::int64_t>(oy) * Wo;
                    if (iy < 0 || iy >= H) {
                        std::fill_n(row, Wo, T(0));
                        continue;
                    }
                    const T* src = img + (static_cast<std::int64_t>(ci) * H + iy) * W;
                    for (int ox = 0; ox < Wo; ++ox) {
                        const int ix = ox * stride + kx - pad;
                        row[ox] = (ix >= 0 && ix < W) ? src[ix] : T(0);
                    }
                }
            }
}

// Scatter-add of a column-matrix gradient back onto the input image gradient.
template <typename T>
void col2im_add(const T* col, int Ci, int H, int W, int k, int stride, int pad, int Ho, int Wo, T* img_grad) {
    const std::int64_t P = static_cast<std::int64_t>(Ho) * Wo;
    for (int ci = 0; ci < Ci; ++ci)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                const T* src = col + ((static_cast<std::int64_t>(ci) * k + ky) * k + kx) * P;
                for (int oy = 0; oy < Ho; ++oy) {
                    const int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= H) continue;
                    T* dst = img_grad + (static_cast<std::int64_t>(ci) * H + iy) * W;
                    const T* row = src + static_cast<std::int64_t>(oy) * Wo;
                    for (int ox = 0; ox < Wo; ++ox) {
                        const int ix = ox * stride + kx - pad;
                        if (ix >= 0 && ix < W) dst[ix] += row[ox];
                    }
                }
            }
}

template <typename T>
using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ConstMatMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

}  // namespace detail

template <typename T>
TensorPtr<T> conv2d(const TensorPtr<T>& input, const TensorPtr<T>& weights,
                    const TensorPtr<T>& bias, const ConvSpec& spec) {
    detail::require_4d(input, "conv2d");
    detail::require_4d(weights, "conv2d weights");
    if (input->channels() != spec.in_channels)
        throw ShapeError("conv2d: input channel dimension " + std::to_string(input->channels()) +
                         " does not match spec in_channels " + std::to_string(spec.in_channels));
    if (weights->dim(0) != spec.out_channels || weights->dim(1) != spec.in_channels ||
        weights->dim(2) != spec.kernel || weights->dim(3) != spec.kernel)
        throw ShapeError("conv2d: weight shape [" + std::to_string(weights->dim(0)) + "," +
                         std::to_string(weights->dim(1)) + "," + std::to_string(weights->dim(2)) + "," +
                         std::to_string(weights->dim(3)) + "] does not match spec");
    if (bias->rank() != 1 || bias->dim(0) != spec.out_channels)
        throw ShapeError("conv2d: bias extent " + std::to_string(bias->size()) +
                         " does not match out_channels " + std::to_string(spec.out_channels));
    if (spec.kernel != 1 && spec.kernel != 3)
        throw ShapeError("conv2d: kernel must be 1 or 3");
    if (spec.stride != 1 && spec.stride != 2)
        throw ShapeError("conv2d: stride must be 1 or 2");

    const int B = input->batch(), Ci = spec.in_channels, Co = spec.out_channels;
    const int H = input->height(), W = input->width();
    const int k = spec.kernel, s = spec.stride, pad = spec.padding;
    const int Ho = (H + 2 * pad - k) / s + 1;
    const int Wo = (W + 2 * pad - k) / s + 1;
    const std::int64_t K = static_cast<std::int64_t>(Ci) * k * k;
    const std::int64_t P = static_cast<std::int64_t>(Ho) * Wo;

    auto out = Tensor<T>::create({B, Co, Ho, Wo});
    {
        std::vector<T> col(static_cast<std::size_t>(K * P));
        detail::ConstMatMap<T> w_mat(weights->values.data(), Co, K);
        Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> b_vec(bias->values.data(), Co);
        for (int b = 0; b < B; ++b) {
            detail::im2col(input->values.data() + static_cast<std::int64_t>(b) * Ci * H * W,
                           Ci, H, W, k, s, pad, Ho, Wo, col.data());
            detail::ConstMatMap<T> col_mat(col.data(), K, P);
            detail::MatMap<T> out_mat(out->values.data() + static_cast<std::int64_t>(b) * Co * P, Co, P);
            out_mat.noalias() = w_mat * col_mat;
            out_mat.colwise() += b_vec;
        }
    }

    detail::attach<T>(out, {input, weights, bias},
                      [input, weights, bias, B, Ci, Co, H, W, k, s, pad, Ho, Wo, K, P](Tensor<T>& self) {
        std::vector<T> col(static_cast<std::size_t>(K * P));
        std::vector<T> col_grad;
        if (input->requires_grad) {
            input->ensure_grad();
            col_grad.resize(static_cast<std::size_t>(K * P));
        }
        if (weights->requires_grad) weights->ensure_grad();
        if (bias->requires_grad) bias->ensure_grad();
        detail::ConstMatMap<T> w_mat(weights->values.data(), Co, K);
        for (int b = 0; b < B; ++b) {
            detail::ConstMatMap<T> g_mat(self.grad.data() + static_cast<std::int64_t>(b) * Co * P, Co, P);
            if (weights->requires_grad || input->requires_grad) {
                detail::im2col(input->values.data() + static_cast<std::int64_t>(b) * Ci * H * W,
                               Ci, H, W, k, s, pad, Ho, Wo, col.data());
            }
            if (weights->requires_grad) {
                detail::ConstMatMap<T> col_mat(col.data(), K, P);
                detail::MatMap<T> wg_mat(weights->grad.data(), Co, K);
                wg_mat.noalias() += g_mat * col_mat.transpose();
            }
            if (bias->requires_grad) {
                // Fixed-order scalar reduction: a vectorized sum's split depends
                // on buffer alignment, which varies between allocations.
                const T* g_rows = self.grad.data() + static_cast<std::int64_t>(b) * Co * P;
                for (int co = 0; co < Co; ++co) {
                    T acc = T(0);
                    const T* row = g_rows + static_cast<std::int64_t>(co) * P;
                    for (int p = 0; p < P; ++p) acc += row[p];
                    bias->grad[static_cast<std::size_t>(co)] += acc;
                }
            }
            if (input->requires_grad) {
                detail::MatMap<T> cg_mat(col_grad.data(), K, P);
                cg_mat.noalias() = w_mat.transpose() * g_mat;
                detail::col2im_add(col_grad.data(), Ci, H, W, k, s, pad, Ho, Wo,
                                   input->grad.data() + static_cast<std::int64_t>(b) * Ci * H * W);
            }
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Backpropagation
// ---------------------------------------------------------------------------

/// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate across
/// calls (the caller resets them); interior gradients hold the current call's
/// contribution.
template <typename T>
void backprop(const TensorPtr<T>& loss) {
    if (!loss) throw ShapeError("backprop: null loss");
    if (!loss->is_scalar())
        throw ShapeError("backprop: loss must be scalar, got " + std::to_string(loss->size()) +
                         " elements");

    // Iterative post-order DFS.
    std::vector<Tensor<T>*> order;
    std::unordered_set<Tensor<T>*> seen;
    std::vector<std::pair<Tensor<T>*, std::size_t>> stack;
    stack.emplace_back(loss.get(), 0);
    seen.insert(loss.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Tensor<T>* p = node->parents[next++].get();
            if (seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (Tensor<T>* t : order) {
        if (!t->requires_grad) continue;
        t->ensure_grad();
        if (!t->is_leaf()) t->zero_grad();
    }
    if (loss->requires_grad) {
        loss->grad[0] += T(1);
    } else {
        // Graph-free scalar: nothing reachable requires gradients.
        return;
    }
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Tensor<T>* t = *it;
        if (t->backward) t->backward(*t);
    }
}

template <typename T>
T scalar_value(const TensorPtr<T>& t) {
    if (!t->is_scalar()) throw ShapeError("scalar_value: tensor is not scalar");
    return t->values[0];
}

// ---------------------------------------------------------------------------
// Finite-difference oracle
// ---------------------------------------------------------------------------

/// Central-difference gradient of a scalar-valued tensor function; the
/// independent check used against backprop throughout the test suites.
template <typename T>
std::vector<T> finite_difference_gradient(const std::function<T(const TensorPtr<T>&)>& f,
                                          const TensorPtr<T>& x, T eps) {
    if (!(eps > T(0))) throw NumericError("finite_difference_gradient: eps must be positive");
    auto probe = Tensor<T>::from_values(x->shape, x->values);
    std::vector<T> g(static_cast<std::size_t>(x->size()));
    NoGradGuard no_grad;
    for (std::int64_t i = 0; i < x->size(); ++i) {
        const T keep = probe->values[i];
        probe->values[i] = keep + eps;
        const T up = f(probe);
        probe->values[i] = keep - eps;
        const T down = f(probe);
        probe->values[i] = keep;
        g[i] = (up - down) / (T(2) * eps);
    }
    return g;
}

}  // namespace retinex
