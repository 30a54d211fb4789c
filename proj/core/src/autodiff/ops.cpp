#include "cts/autodiff/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "cts/error.hpp"

namespace cts::ad {

namespace {

using Inputs = std::span<const std::shared_ptr<TensorImpl>>;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

std::size_t normalize_axis(std::ptrdiff_t axis, std::size_t ndim) {
    const auto n = static_cast<std::ptrdiff_t>(ndim);
    if (axis < 0) axis += n;
    if (axis < 0 || axis >= n) throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(ndim));
    return static_cast<std::size_t>(axis);
}

// ----------------------------------------------------------------------------
// Broadcasting

struct BroadcastPlan {
    enum class Kind { Same, ScalarB, ScalarA, SuffixB, General };
    Kind kind = Kind::General;
    Shape out;
    std::vector<std::size_t> stride_a;
    std::vector<std::size_t> stride_b;
    std::size_t suffix = 1;
};

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b) {
    BroadcastPlan p;
    const std::size_t nd = std::max(a.size(), b.size());
    p.out.resize(nd);
    for (std::size_t i = 0; i < nd; ++i) {
        const std::size_t da = i + a.size() >= nd ? a[i + a.size() - nd] : 1;
        const std::size_t db = i + b.size() >= nd ? b[i + b.size() - nd] : 1;
        if (da != db && da != 1 && db != 1) {
            throw ShapeError("cannot broadcast shapes " + shape_str(a) + " and " + shape_str(b));
        }
        p.out[i] = std::max(da, db);
        if (da == 0 || db == 0) p.out[i] = 0;
    }
    if (a == b) {
        p.kind = BroadcastPlan::Kind::Same;
        return p;
    }
    if (numel_of(b) == 1 && a == p.out) {
        p.kind = BroadcastPlan::Kind::ScalarB;
        return p;
    }
    if (numel_of(a) == 1 && b == p.out) {
        p.kind = BroadcastPlan::Kind::ScalarA;
        return p;
    }
    if (a == p.out && b.size() <= a.size() && std::equal(b.begin(), b.end(), a.end() - static_cast<std::ptrdiff_t>(b.size()))) {
        p.kind = BroadcastPlan::Kind::SuffixB;
        p.suffix = numel_of(b);
        return p;
    }
    auto strides_for = [&](const Shape& s) {
        std::vector<std::size_t> st(nd, 0);
        std::size_t acc = 1;
        for (std::size_t k = s.size(); k-- > 0;) {
            const std::size_t i = k + nd - s.size();
            st[i] = s[k] == 1 ? 0 : acc;
            acc *= s[k];
        }
        return st;
    };
    p.stride_a = strides_for(a);
    p.stride_b = strides_for(b);
    return p;
}

template <typename F>
void for_each_broadcast(const BroadcastPlan& p, F&& f) {
    const std::size_t n = numel_of(p.out);
    switch (p.kind) {
        case BroadcastPlan::Kind::Same:
            for (std::size_t i = 0; i < n; ++i) f(i, i, i);
            return;
        case BroadcastPlan::Kind::ScalarB:
            for (std::size_t i = 0; i < n; ++i) f(i, i, std::size_t{0});
            return;
        case BroadcastPlan::Kind::ScalarA:
            for (std::size_t i = 0; i < n; ++i) f(i, std::size_t{0}, i);
            return;
        case BroadcastPlan::Kind::SuffixB:
            for (std::size_t i = 0; i < n; ++i) f(i, i, i % p.suffix);
            return;
        case BroadcastPlan::Kind::General:
            break;
    }
    if (n == 0) return;
    const std::size_t nd = p.out.size();
    std::vector<std::size_t> idx(nd, 0);
    std::size_t ia = 0, ib = 0;
    for (std::size_t i = 0; i < n; ++i) {
        f(i, ia, ib);
        for (std::size_t k = nd; k-- > 0;) {
            ++idx[k];
            ia += p.stride_a[k];
            ib += p.stride_b[k];
            if (idx[k] < p.out[k]) break;
            ia -= p.stride_a[k] * idx[k];
            ib -= p.stride_b[k] * idx[k];
            idx[k] = 0;
        }
    }
}

template <typename Fwd, typename Da, typename Db>
Tensor binary(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, Da da, Db db) {
    auto plan = std::make_shared<BroadcastPlan>(plan_broadcast(a.shape(), b.shape()));
    std::vector<double> out(numel_of(plan->out));
    const auto ad = a.data();
    const auto bd = b.data();
    for_each_broadcast(*plan, [&](std::size_t i, std::size_t ia, std::size_t ib) { out[i] = fwd(ad[ia], bd[ib]); });
    return detail::make_result(plan->out, std::move(out), {a, b}, name, [plan, da, db](TensorImpl& o, Inputs in) {
        const auto& g = o.grad;
        const auto& av = in[0]->data;
        const auto& bv = in[1]->data;
        if (in[0]->requires_grad) {
            auto ga = in[0]->ensure_grad();
            for_each_broadcast(*plan, [&](std::size_t i, std::size_t ia, std::size_t ib) { ga[ia] += g[i] * da(av[ia], bv[ib]); });
        }
        if (in[1]->requires_grad) {
            auto gb = in[1]->ensure_grad();
            for_each_broadcast(*plan, [&](std::size_t i, std::size_t ia, std::size_t ib) { gb[ib] += g[i] * db(av[ia], bv[ib]); });
        }
    });
}

// Unary op whose derivative is expressed through input x and output y.
template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& x, const char* name, Fwd fwd, Deriv deriv) {
    const auto xd = x.data();
    std::vector<double> out(xd.size());
    for (std::size_t i = 0; i < xd.size(); ++i) out[i] = fwd(xd[i]);
    return detail::make_result(x.shape(), std::move(out), {x}, name, [deriv](TensorImpl& o, Inputs in) {
        if (!in[0]->requires_grad) return;
        auto gx = in[0]->ensure_grad();
        const auto& xv = in[0]->data;
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += o.grad[i] * deriv(xv[i], o.data[i]);
    });
}

void accumulate(TensorImpl& t, std::span<const double> g) {
    if (!t.requires_grad) return;
    auto dst = t.ensure_grad();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
}

}  // namespace

// ----------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
    return binary(
        a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
        [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary(
        a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
        [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary(
        a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
        [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
    return binary(
        a, b, "div", [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
        [](double x, double y) { return -x / (y * y); });
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor scale(const Tensor& x, double factor) {
    return unary(
        x, "scale", [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double value) {
    return unary(
        x, "add_scalar", [value](double v) { return v + value; }, [](double, double) { return 1.0; });
}

Tensor square(const Tensor& x) {
    return unary(
        x, "square", [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor exp(const Tensor& x) {
    return unary(
        x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
    for (double v : x.data()) {
        if (!(v > 0.0)) throw DomainError("log of non-positive value " + std::to_string(v));
    }
    return unary(
        x, "log", [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor tanh(const Tensor& x) {
    return unary(
        x, "tanh", [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor relu(const Tensor& x) {
    return unary(
        x, "relu", [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    return unary(
        x, "gelu", [=](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
        [=](double v, double) { return 0.5 * (1.0 + std::erf(v * inv_sqrt2)) + v * inv_sqrt_2pi * std::exp(-0.5 * v * v); });
}

Tensor clamp_min(const Tensor& x, double floor) {
    return unary(
        x, "clamp_min", [floor](double v) { return v > floor ? v : floor; },
        [floor](double v, double) { return v > floor ? 1.0 : 0.0; });
}

Tensor elementwise(ElementwiseOp op, const Tensor& a, const std::optional<Tensor>& b) {
    auto need_b = [&]() -> const Tensor& {
        if (!b) throw ValidationError("binary elementwise op requires a second operand");
        return *b;
    };
    switch (op) {
        case ElementwiseOp::Add: return add(a, need_b());
        case ElementwiseOp::Sub: return sub(a, need_b());
        case ElementwiseOp::Mul: return mul(a, need_b());
        case ElementwiseOp::Div: return div(a, need_b());
        case ElementwiseOp::Exp: return exp(a);
        case ElementwiseOp::Log: return log(a);
        case ElementwiseOp::Tanh: return tanh(a);
        case ElementwiseOp::Relu: return relu(a);
        case ElementwiseOp::Gelu: return gelu(a);
    }
    throw ValidationError("unknown elementwise op");
}

// ----------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) s += v;
    return detail::make_result({}, {s}, {x}, "sum", [](TensorImpl& o, Inputs in) {
        if (!in[0]->requires_grad) return;
        auto g = in[0]->ensure_grad();
        const double go = o.grad[0];
        for (double& v : g) v += go;
    });
}

Tensor mean(const Tensor& x) {
    if (x.numel() == 0) throw ShapeError("mean of empty tensor");
    return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor sum(const Tensor& x, std::ptrdiff_t axis_in, bool keepdim) {
    const std::size_t axis = normalize_axis(axis_in, x.dim());
    const auto& s = x.shape();
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    const std::size_t n = s[axis];
    Shape out_shape;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i != axis) out_shape.push_back(s[i]);
        else if (keepdim) out_shape.push_back(1);
    }
    std::vector<double> out(outer * inner, 0.0);
    const auto xd = x.data();
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t k = 0; k < n; ++k)
            for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += xd[(o * n + k) * inner + i];
    return detail::make_result(std::move(out_shape), std::move(out), {x}, "sum_axis",
                               [outer, inner, n](TensorImpl& o, Inputs in) {
                                   if (!in[0]->requires_grad) return;
                                   auto g = in[0]->ensure_grad();
                                   for (std::size_t a = 0; a < outer; ++a)
                                       for (std::size_t k = 0; k < n; ++k)
                                           for (std::size_t i = 0; i < inner; ++i)
                                               g[(a * n + k) * inner + i] += o.grad[a * inner + i];
                               });
}

// ----------------------------------------------------------------------------
// Matrix product

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b) {
    if (a.dim() < 1 || b.dim() < 2) {
        throw ShapeError("matmul: operands of shape " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    }
    const auto& as = a.shape();
    const auto& bs = b.shape();
    if (b.dim() == 2) {
        const std::size_t k = as.back();
        const std::size_t bk = transpose_b ? bs[1] : bs[0];
        const std::size_t n = transpose_b ? bs[0] : bs[1];
        if (k != bk) {
            throw ShapeError("matmul: inner dimensions disagree for " + shape_str(as) + " and " + shape_str(bs) +
                             (transpose_b ? " (transposed)" : ""));
        }
        const std::size_t rows = k == 0 ? 0 : a.numel() / k;
        Shape out_shape = as;
        out_shape.back() = n;
        std::vector<double> out(rows * n);
        {
            ConstMap A(a.data().data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(k));
            ConstMap B(b.data().data(), static_cast<Eigen::Index>(bs[0]), static_cast<Eigen::Index>(bs[1]));
            MutMap C(out.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(n));
            if (transpose_b) C.noalias() = A * B.transpose();
            else C.noalias() = A * B;
        }
        return detail::make_result(std::move(out_shape), std::move(out), {a, b}, "matmul",
                                   [rows, k, n, transpose_b](TensorImpl& o, Inputs in) {
                                       const auto& ai = *in[0];
                                       const auto& bi = *in[1];
                                       ConstMap G(o.grad.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(n));
                                       ConstMap B(bi.data.data(), static_cast<Eigen::Index>(bi.shape[0]),
                                                  static_cast<Eigen::Index>(bi.shape[1]));
                                       if (ai.requires_grad) {
                                           auto ga = in[0]->ensure_grad();
                                           MutMap GA(ga.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(k));
                                           if (transpose_b) GA.noalias() += G * B;
                                           else GA.noalias() += G * B.transpose();
                                       }
                                       if (bi.requires_grad) {
                                           ConstMap A(ai.data.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(k));
                                           auto gb = in[1]->ensure_grad();
                                           MutMap GB(gb.data(), static_cast<Eigen::Index>(bi.shape[0]),
                                                     static_cast<Eigen::Index>(bi.shape[1]));
                                           if (transpose_b) GB.noalias() += G.transpose() * A;
                                           else GB.noalias() += A.transpose() * G;
                                       }
                                   });
    }

    if (a.dim() != b.dim() || a.dim() < 3 || !std::equal(as.begin(), as.end() - 2, bs.begin())) {
        throw ShapeError("matmul: batch dimensions disagree for " + shape_str(as) + " and " + shape_str(bs));
    }
    const std::size_t m = as[as.size() - 2];
    const std::size_t k = as.back();
    const std::size_t bk = transpose_b ? bs.back() : bs[bs.size() - 2];
    const std::size_t n = transpose_b ? bs[bs.size() - 2] : bs.back();
    if (k != bk) {
        throw ShapeError("matmul: inner dimensions disagree for " + shape_str(as) + " and " + shape_str(bs) +
                         (transpose_b ? " (transposed)" : ""));
    }
    std::size_t batch = 1;
    for (std::size_t i = 0; i + 2 < as.size(); ++i) batch *= as[i];
    const std::size_t br = bs[bs.size() - 2];
    const std::size_t bc = bs.back();
    Shape out_shape = as;
    out_shape.back() = n;
    std::vector<double> out(batch * m * n);
    {
        const double* ap = a.data().data();
        const double* bp = b.data().data();
        for (std::size_t t = 0; t < batch; ++t) {
            ConstMap A(ap + t * m * k, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k));
            ConstMap B(bp + t * br * bc, static_cast<Eigen::Index>(br), static_cast<Eigen::Index>(bc));
            MutMap C(out.data() + t * m * n, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
            if (transpose_b) C.noalias() = A * B.transpose();
            else C.noalias() = A * B;
        }
    }
    return detail::make_result(
        std::move(out_shape), std::move(out), {a, b}, "bmm", [batch, m, k, n, br, bc, transpose_b](TensorImpl& o, Inputs in) {
            const auto& ai = *in[0];
            const auto& bi = *in[1];
            double* ga = ai.requires_grad ? in[0]->ensure_grad().data() : nullptr;
            double* gb = bi.requires_grad ? in[1]->ensure_grad().data() : nullptr;
            for (std::size_t t = 0; t < batch; ++t) {
                ConstMap G(o.grad.data() + t * m * n, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
                ConstMap A(ai.data.data() + t * m * k, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k));
                ConstMap B(bi.data.data() + t * br * bc, static_cast<Eigen::Index>(br), static_cast<Eigen::Index>(bc));
                if (ga) {
                    MutMap GA(ga + t * m * k, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k));
                    if (transpose_b) GA.noalias() += G * B;
                    else GA.noalias() += G * B.transpose();
                }
                if (gb) {
                    MutMap GB(gb + t * br * bc, static_cast<Eigen::Index>(br), static_cast<Eigen::Index>(bc));
                    if (transpose_b) GB.noalias() += G.transpose() * A;
                    else GB.noalias() += A.transpose() * G;
                }
            }
        });
}

// ----------------------------------------------------------------------------
// Softmax family

namespace {

struct AxisLayout {
    std::size_t outer = 1, n = 1, inner = 1;
};

AxisLayout layout_for(const Shape& s, std::size_t axis) {
    AxisLayout l;
    for (std::size_t i = 0; i < axis; ++i) l.outer *= s[i];
    l.n = s[axis];
    for (std::size_t i = axis + 1; i < s.size(); ++i) l.inner *= s[i];
    return l;
}

}  // namespace

Tensor softmax(const Tensor& x, std::ptrdiff_t axis_in) {
    const std::size_t axis = normalize_axis(axis_in, x.dim());
    const AxisLayout l = layout_for(x.shape(), axis);
    const auto xd = x.data();
    std::vector<double> out(xd.size());
    for (std::size_t o = 0; o < l.outer; ++o) {
        for (std::size_t i = 0; i < l.inner; ++i) {
            const std::size_t base = o * l.n * l.inner + i;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < l.n; ++k) mx = std::max(mx, xd[base + k * l.inner]);
            double z = 0.0;
            for (std::size_t k = 0; k < l.n; ++k) {
                const double e = std::exp(xd[base + k * l.inner] - mx);
                out[base + k * l.inner] = e;
                z += e;
            }
            for (std::size_t k = 0; k < l.n; ++k) out[base + k * l.inner] /= z;
        }
    }
    return detail::make_result(x.shape(), std::move(out), {x}, "softmax", [l](TensorImpl& o, Inputs in) {
        if (!in[0]->requires_grad) return;
        auto gx = in[0]->ensure_grad();
        for (std::size_t a = 0; a < l.outer; ++a) {
            for (std::size_t i = 0; i < l.inner; ++i) {
                const std::size_t base = a * l.n * l.inner + i;
                double dot = 0.0;
                for (std::size_t k = 0; k < l.n; ++k) dot += o.grad[base + k * l.inner] * o.data[base + k * l.inner];
                for (std::size_t k = 0; k < l.n; ++k) {
                    const std::size_t j = base + k * l.inner;
                    gx[j] += o.data[j] * (o.grad[j] - dot);
                }
            }
        }
    });
}

Tensor log_softmax(const Tensor& x, std::ptrdiff_t axis_in) {
    const std::size_t axis = normalize_axis(axis_in, x.dim());
    const AxisLayout l = layout_for(x.shape(), axis);
    const auto xd = x.data();
    std::vector<double> out(xd.size());
    for (std::size_t o = 0; o < l.outer; ++o) {
        for (std::size_t i = 0; i < l.inner; ++i) {
            const std::size_t base = o * l.n * l.inner + i;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < l.n; ++k) mx = std::max(mx, xd[base + k * l.inner]);
            double z = 0.0;
            for (std::size_t k = 0; k < l.n; ++k) z += std::exp(xd[base + k * l.inner] - mx);
            const double lz = mx + std::log(z);
            for (std::size_t k = 0; k < l.n; ++k) out[base + k * l.inner] = xd[base + k * l.inner] - lz;
        }
    }
    return detail::make_result(x.shape(), std::move(out), {x}, "log_softmax", [l](TensorImpl& o, Inputs in) {
        if (!in[0]->requires_grad) return;
        auto gx = in[0]->ensure_grad();
        for (std::size_t a = 0; a < l.outer; ++a) {
            for (std::size_t i = 0; i < l.inner; ++i) {
                const std::size_t base = a * l.n * l.inner + i;
                double gsum = 0.0;
                for (std::size_t k = 0; k < l.n; ++k) gsum += o.grad[base + k * l.inner];
                for (std::size_t k = 0; k < l.n; ++k) {
                    const std::size_t j = base + k * l.inner;
                    gx[j] += o.grad[j] - std::exp(o.data[j]) * gsum;
                }
            }
        }
    });
}

Tensor masked_softmax(const Tensor& scores, const AttentionMask& mask) {
    const auto& s = scores.shape();
    if (s.size() != 4 || s[0] != mask.batch || s[2] != mask.rows || s[3] != mask.cols ||
        mask.allowed.size() != mask.batch * mask.rows * mask.cols) {
        throw ShapeError("masked_softmax: scores " + shape_str(s) + " vs mask [" + std::to_string(mask.batch) + "," +
                         std::to_string(mask.rows) + "," + std::to_string(mask.cols) + "]");
    }
    const std::size_t B = s[0], H = s[1], R = s[2], C = s[3];
    const auto xd = scores.data();
    std::vector<double> out(xd.size(), 0.0);
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t r = 0; r < R; ++r) {
            const std::uint8_t* allow = mask.allowed.data() + (b * R + r) * C;
            bool any = false;
            for (std::size_t c = 0; c < C; ++c) any = any || allow[c];
            if (!any) {
                throw DomainError("masked_softmax: row " + std::to_string(r) + " of batch item " + std::to_string(b) +
                                  " has every key masked");
            }
            for (std::size_t h = 0; h < H; ++h) {
                const std::size_t base = ((b * H + h) * R + r) * C;
                double mx = -std::numeric_limits<double>::infinity();
                for (std::size_t c = 0; c < C; ++c)
                    if (allow[c]) mx = std::max(mx, xd[base + c]);
                double z = 0.0;
                for (std::size_t c = 0; c < C; ++c) {
                    if (!allow[c]) continue;
                    const double e = std::exp(xd[base + c] - mx);
                    out[base + c] = e;
                    z += e;
                }
                const double inv = 1.0 / z;
                for (std::size_t c = 0; c < C; ++c) out[base + c] *= inv;
            }
        }
    }
    const std::size_t rows = B * H * R;
    return detail::make_result(s, std::move(out), {scores}, "masked_softmax", [rows, C](TensorImpl& o, Inputs in) {
        if (!in[0]->requires_grad) return;
        auto gx = in[0]->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
            const double* y = o.data.data() + r * C;
            const double* g = o.grad.data() + r * C;
            double dot = 0.0;
            for (std::size_t c = 0; c < C; ++c) dot += g[c] * y[c];
            double* dst = gx.data() + r * C;
            for (std::size_t c = 0; c < C; ++c) dst[c] += y[c] * (g[c] - dot);
        }
    });
}

// ----------------------------------------------------------------------------
// Shape manipulation

Tensor reshape(const Tensor& x, Shape shape) {
    if (numel_of(shape) != x.numel()) {
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    }
    std::vector<double> out(x.data().begin(), x.data().end());
    return detail::make_result(std::move(shape), std::move(out), {x}, "reshape",
                               [](TensorImpl& o, Inputs in) { accumulate(*in[0], o.grad); });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& order) {
    const auto& s = x.shape();
    const std::size_t nd = s.size();
    if (order.size() != nd) throw ShapeError("permute: order rank mismatch for " + shape_str(s));
    std::vector<bool> used(nd, false);
    for (auto o : order) {
        if (o >= nd || used[o]) throw ShapeError("permute: invalid axis order");
        used[o] = true;
    }
    std::vector<std::size_t> in_strides(nd, 1);
    for (std::size_t k = nd; k-- > 1;) in_strides[k - 1] = in_strides[k] * s[k];
    Shape out_shape(nd);
    std::vector<std::size_t> stride(nd);
    for (std::size_t i = 0; i < nd; ++i) {
        out_shape[i] = s[order[i]];
        stride[i] = in_strides[order[i]];
    }
    // src[i] = input offset of output element i
    const std::size_t n = x.numel();
    auto src = std::make_shared<std::vector<std::size_t>>(n);
    {
        std::vector<std::size_t> idx(nd, 0);
        std::size_t off = 0;
        for (std::size_t i = 0; i < n; ++i) {
            (*src)[i] = off;
            for (std::size_t k = nd; k-- > 0;) {
                ++idx[k];
                off += stride[k];
                if (idx[k] < out_shape[k]) break;
                off -= stride[k] * idx[k];
                idx[k] = 0;
            }
        }
    }
    const auto xd = x.data();
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = xd[(*src)[i]];
    return detail::make_result(std::move(out_shape), std::move(out), {x}, "permute", [src](TensorImpl& o, Inputs in) {
        if (!in[0]->requires_grad) return;
        auto g = in[0]->ensure_grad();
        for (std::size_t i = 0; i < src->size(); ++i) g[(*src)[i]] += o.grad[i];
    });
}

Tensor concat(const std::vector<Tensor>& parts, std::ptrdiff_t axis_in) {
    if (parts.empty()) throw ShapeError("concat: no tensors");
    const Shape& s0 = parts[0].shape();
    const std::size_t axis = normalize_axis(axis_in, s0.size());
    Shape out_shape = s0;
    out_shape[axis] = 0;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        bool ok = s.size() == s0.size();
        for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == s0[i];
        if (!ok) throw ShapeError("concat: shape " + shape_str(s) + " incompatible with " + shape_str(s0));
        out_shape[axis] += s[axis];
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s0[i];
    for (std::size_t i = axis + 1; i < s0.size(); ++i) inner *= s0[i];
    auto widths = std::make_shared<std::vector<std::size_t>>();
    for (const auto& p : parts) widths->push_back(p.shape()[axis] * inner);
    const std::size_t out_row = out_shape[axis] * inner;
    std::vector<double> out(outer * out_row);
    std::size_t col = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
        const auto d = parts[p].data();
        const std::size_t w = (*widths)[p];
        for (std::size_t o = 0; o < outer; ++o) std::copy_n(d.data() + o * w, w, out.data() + o * out_row + col);
        col += w;
    }
    return detail::make_result(std::move(out_shape), std::move(out), parts, "concat",
                               [widths, outer, out_row](TensorImpl& o, Inputs in) {
                                   std::size_t c = 0;
                                   for (std::size_t p = 0; p < in.size(); ++p) {
                                       const std::size_t w = (*widths)[p];
                                       if (in[p]->requires_grad) {
                                           auto g = in[p]->ensure_grad();
                                           for (std::size_t r = 0; r < outer; ++r)
                                               for (std::size_t j = 0; j < w; ++j) g[r * w + j] += o.grad[r * out_row + c + j];
                                       }
                                       c += w;
                                   }
                               });
}

Tensor narrow(const Tensor& x, std::ptrdiff_t axis_in, std::size_t start, std::size_t length) {
    const Shape& s = x.shape();
    const std::size_t axis = normalize_axis(axis_in, s.size());
    if (start + length > s[axis]) throw ShapeError("narrow: range exceeds axis of " + shape_str(s));
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    const std::size_t in_row = s[axis] * inner;
    const std::size_t w = length * inner;
    const std::size_t off = start * inner;
    Shape out_shape = s;
    out_shape[axis] = length;
    std::vector<double> out(outer * w);
    const auto d = x.data();
    for (std::size_t o = 0; o < outer; ++o) std::copy_n(d.data() + o * in_row + off, w, out.data() + o * w);
    return detail::make_result(std::move(out_shape), std::move(out), {x}, "narrow", [=](TensorImpl& o, Inputs in) {
        if (!in[0]->requires_grad) return;
        auto g = in[0]->ensure_grad();
        for (std::size_t r = 0; r < outer; ++r)
            for (std::size_t j = 0; j < w; ++j) g[r * in_row + off + j] += o.grad[r * w + j];
    });
}

Tensor index_rows(const Tensor& x, std::span<const std::size_t> rows) {
    const Shape& s = x.shape();
    if (s.empty()) throw ShapeError("index_rows on a scalar");
    const std::size_t row = s[0] == 0 ? 0 : x.numel() / s[0];
    for (auto r : rows) {
        if (r >= s[0]) throw ValidationError("index_rows: row " + std::to_string(r) + " out of range for " + shape_str(s));
    }
    Shape out_shape = s;
    out_shape[0] = rows.size();
    std::vector<double> out(rows.size() * row);
    const auto d = x.data();
    for (std::size_t i = 0; i < rows.size(); ++i) std::copy_n(d.data() + rows[i] * row, row, out.data() + i * row);
    auto idx = std::make_shared<std::vector<std::size_t>>(rows.begin(), rows.end());
    return detail::make_result(std::move(out_shape), std::move(out), {x}, "index_rows", [idx, row](TensorImpl& o, Inputs in) {
        if (!in[0]->requires_grad) return;
        auto g = in[0]->ensure_grad();
        for (std::size_t i = 0; i < idx->size(); ++i) {
            double* dst = g.data() + (*idx)[i] * row;
            const double* src = o.grad.data() + i * row;
            for (std::size_t j = 0; j < row; ++j) dst[j] += src[j];
        }
    });
}

// ----------------------------------------------------------------------------
// Normalization, dropout, fused loss

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    const Shape& s = x.shape();
    if (s.empty()) throw ShapeError("layer_norm on a scalar");
    const std::size_t d = s.back();
    if (gamma.numel() != d || beta.numel() != d) {
        throw ShapeError("layer_norm: affine shapes " + shape_str(gamma.shape()) + "/" + shape_str(beta.shape()) +
                         " do not match feature size of " + shape_str(s));
    }
    const std::size_t rows = d == 0 ? 0 : x.numel() / d;
    auto xhat = std::make_shared<std::vector<double>>(x.numel());
    auto inv_std = std::make_shared<std::vector<double>>(rows);
    std::vector<double> out(x.numel());
    const auto xd = x.data();
    const auto gd = gamma.data();
    const auto bd = beta.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = xd.data() + r * d;
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += xr[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + eps);
        (*inv_std)[r] = inv;
        for (std::size_t j = 0; j < d; ++j) {
            const double h = (xr[j] - mu) * inv;
            (*xhat)[r * d + j] = h;
            out[r * d + j] = h * gd[j] + bd[j];
        }
    }
    return detail::make_result(s, std::move(out), {x, gamma, beta}, "layer_norm", [=](TensorImpl& o, Inputs in) {
        const auto& gv = in[1]->data;
        double* gx = in[0]->requires_grad ? in[0]->ensure_grad().data() : nullptr;
        double* gg = in[1]->requires_grad ? in[1]->ensure_grad().data() : nullptr;
        double* gb = in[2]->requires_grad ? in[2]->ensure_grad().data() : nullptr;
        const double dd = static_cast<double>(d);
        for (std::size_t r = 0; r < rows; ++r) {
            const double* dy = o.grad.data() + r * d;
            const double* h = xhat->data() + r * d;
            if (gg || gb) {
                for (std::size_t j = 0; j < d; ++j) {
                    if (gg) gg[j] += dy[j] * h[j];
                    if (gb) gb[j] += dy[j];
                }
            }
            if (gx) {
                double s1 = 0.0, s2 = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    const double dh = dy[j] * gv[j];
                    s1 += dh;
                    s2 += dh * h[j];
                }
                const double inv = (*inv_std)[r];
                for (std::size_t j = 0; j < d; ++j) {
                    const double dh = dy[j] * gv[j];
                    gx[r * d + j] += inv / dd * (dd * dh - s1 - h[j] * s2);
                }
            }
        }
    });
}

Tensor dropout(const Tensor& x, double p, std::mt19937_64& rng, bool training) {
    if (p < 0.0 || p >= 1.0) throw ValidationError("dropout probability must lie in [0, 1)");
    if (!training || p == 0.0) return x;
    const double keep_scale = 1.0 / (1.0 - p);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    auto m = std::make_shared<std::vector<double>>(x.numel());
    std::vector<double> out(x.numel());
    const auto xd = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        (*m)[i] = unif(rng) < p ? 0.0 : keep_scale;
        out[i] = xd[i] * (*m)[i];
    }
    return detail::make_result(x.shape(), std::move(out), {x}, "dropout", [m](TensorImpl& o, Inputs in) {
        if (!in[0]->requires_grad) return;
        auto g = in[0]->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * (*m)[i];
    });
}

Tensor cross_entropy_sum(const Tensor& logits, std::span<const int> targets, int ignore_index) {
    const Shape& s = logits.shape();
    if (s.size() != 2 || s[0] != targets.size()) {
        throw ShapeError("cross_entropy_sum: logits " + shape_str(s) + " vs " + std::to_string(targets.size()) + " targets");
    }
    const std::size_t rows = s[0], V = s[1];
    auto probs = std::make_shared<std::vector<double>>(rows * V, 0.0);
    auto tg = std::make_shared<std::vector<int>>(targets.begin(), targets.end());
    const auto xd = logits.data();
    double total = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        const int t = targets[r];
        if (t == ignore_index) continue;
        if (t < 0 || static_cast<std::size_t>(t) >= V) {
            throw ValidationError("cross_entropy_sum: target id " + std::to_string(t) + " outside vocabulary of " + std::to_string(V));
        }
        const double* x = xd.data() + r * V;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < V; ++j) mx = std::max(mx, x[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < V; ++j) {
            const double e = std::exp(x[j] - mx);
            (*probs)[r * V + j] = e;
            z += e;
        }
        for (std::size_t j = 0; j < V; ++j) (*probs)[r * V + j] /= z;
        total += (mx + std::log(z)) - x[t];
    }
    return detail::make_result({}, {total}, {logits}, "cross_entropy_sum", [probs, tg, V, ignore_index](TensorImpl& o, Inputs in) {
        if (!in[0]->requires_grad) return;
        auto g = in[0]->ensure_grad();
        const double go = o.grad[0];
        for (std::size_t r = 0; r < tg->size(); ++r) {
            const int t = (*tg)[r];
            if (t == ignore_index) continue;
            double* dst = g.data() + r * V;
            const double* p = probs->data() + r * V;
            for (std::size_t j = 0; j < V; ++j) dst[j] += go * p[j];
            dst[t] -= go;
        }
    });
}

}  // namespace cts::ad
