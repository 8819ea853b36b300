#include "tabledet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace tabledet {

bool& GradMode::enabled() {
    thread_local bool on = true;
    return on;
}

std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
}

static int64_t shape_numel(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw std::invalid_argument("tensor dims must be positive, got " + shape_str(shape));
        n *= d;
    }
    return n;
}

static NodePtr make_node(std::vector<int> shape, std::vector<double> data) {
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    return n;
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    int64_t n = shape_numel(shape);
    auto node = make_node(std::move(shape), std::vector<double>(static_cast<size_t>(n), 0.0));
    node->requires_grad = requires_grad;
    return Tensor(node);
}

Tensor Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
    int64_t n = shape_numel(shape);
    auto node = make_node(std::move(shape), std::vector<double>(static_cast<size_t>(n), value));
    node->requires_grad = requires_grad;
    return Tensor(node);
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<double> data, bool requires_grad) {
    int64_t n = shape_numel(shape);
    if (n != static_cast<int64_t>(data.size()))
        throw std::invalid_argument("data length " + std::to_string(data.size()) +
                                    " does not match shape " + shape_str(shape));
    auto node = make_node(std::move(shape), std::move(data));
    node->requires_grad = requires_grad;
    return Tensor(node);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from_data({1}, {value}, requires_grad);
}

const std::vector<int>& Tensor::shape() const { return node->shape; }
int64_t Tensor::numel() const { return node->numel(); }
const std::vector<double>& Tensor::data() const { return node->data; }
std::vector<double>& Tensor::mutable_data() { return node->data; }

double Tensor::item() const {
    if (numel() != 1) throw std::invalid_argument("item() on non-scalar tensor " + shape_str(shape()));
    return node->data[0];
}

bool Tensor::requires_grad() const { return node->requires_grad; }
void Tensor::set_requires_grad(bool v) { node->requires_grad = v; }
bool Tensor::has_grad() const { return node->grad.size() == node->data.size(); }

const std::vector<double>& Tensor::grad() const {
    if (!has_grad()) throw std::runtime_error("tensor has no grad buffer");
    return node->grad;
}

void Tensor::zero_grad() {
    node->grad.assign(node->data.size(), 0.0);
}

void Tensor::ensure_grad() const { node->ensure_grad(); }

// ---------------------------------------------------------------------------
// broadcasting helpers (trailing-dimension alignment only)
// ---------------------------------------------------------------------------

namespace {

struct BroadcastPlan {
    std::vector<int> out_shape;
    // per-output-dim element strides into each input; 0 where that input
    // broadcasts along the dim
    std::vector<int64_t> stride_a, stride_b;
};

std::vector<int64_t> contiguous_strides(const std::vector<int>& shape) {
    std::vector<int64_t> s(shape.size(), 1);
    for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i)
        s[static_cast<size_t>(i)] = s[static_cast<size_t>(i) + 1] * shape[static_cast<size_t>(i) + 1];
    return s;
}

BroadcastPlan make_broadcast(const std::vector<int>& a, const std::vector<int>& b) {
    size_t ra = a.size(), rb = b.size();
    size_t r = std::max(ra, rb);
    BroadcastPlan plan;
    plan.out_shape.resize(r);
    for (size_t i = 0; i < r; ++i) {
        int da = i < r - ra ? 1 : a[i - (r - ra)];
        int db = i < r - rb ? 1 : b[i - (r - rb)];
        if (da != db && da != 1 && db != 1)
            throw std::invalid_argument("shapes not broadcast-compatible: " + shape_str(a) +
                                        " vs " + shape_str(b));
        plan.out_shape[i] = std::max(da, db);
    }
    auto sa = contiguous_strides(a), sb = contiguous_strides(b);
    plan.stride_a.assign(r, 0);
    plan.stride_b.assign(r, 0);
    for (size_t i = 0; i < r; ++i) {
        if (i >= r - ra && a[i - (r - ra)] != 1) plan.stride_a[i] = sa[i - (r - ra)];
        if (i >= r - rb && b[i - (r - rb)] != 1) plan.stride_b[i] = sb[i - (r - rb)];
    }
    return plan;
}

// Sums grad over broadcast dims so it matches the original input shape.
std::vector<double> reduce_to_shape(const std::vector<double>& grad,
                                    const std::vector<int>& out_shape,
                                    const std::vector<int>& in_shape) {
    std::vector<double> out(static_cast<size_t>(shape_numel(in_shape)), 0.0);
    size_t r = out_shape.size(), ri = in_shape.size();
    auto in_strides = contiguous_strides(in_shape);
    std::vector<int> idx(r, 0);
    for (size_t flat = 0; flat < grad.size(); ++flat) {
        int64_t pos = 0;
        for (size_t d = 0; d < ri; ++d) {
            int od = idx[r - ri + d];
            int id = in_shape[d] == 1 ? 0 : od;
            pos += id * in_strides[d];
        }
        out[static_cast<size_t>(pos)] += grad[flat];
        for (int d = static_cast<int>(r) - 1; d >= 0; --d) {
            if (++idx[static_cast<size_t>(d)] < out_shape[static_cast<size_t>(d)]) break;
            idx[static_cast<size_t>(d)] = 0;
        }
    }
    return out;
}

bool same_shape(const std::vector<int>& a, const std::vector<int>& b) { return a == b; }

Tensor finish_unary(const Tensor& a, std::vector<int> shape, std::vector<double> data,
                    std::function<void(TensorNode&)> bw) {
    auto node = make_node(std::move(shape), std::move(data));
    if (GradMode::enabled() && a.requires_grad()) {
        node->requires_grad = true;
        node->parents = {a.node};
        node->backward = std::move(bw);
    }
    return Tensor(node);
}

Tensor finish_binary(const Tensor& a, const Tensor& b, std::vector<int> shape,
                     std::vector<double> data, std::function<void(TensorNode&)> bw) {
    auto node = make_node(std::move(shape), std::move(data));
    if (GradMode::enabled() && (a.requires_grad() || b.requires_grad())) {
        node->requires_grad = true;
        node->parents = {a.node, b.node};
        node->backward = std::move(bw);
    }
    return Tensor(node);
}

void accumulate(TensorNode& t, const std::vector<double>& g) {
    t.ensure_grad();
    for (size_t i = 0; i < g.size(); ++i) t.grad[i] += g[i];
}

enum class BinKind { Add, Mul };

Tensor binary_elementwise(const Tensor& a, const Tensor& b, BinKind kind) {
    // fast path: identical shapes
    if (same_shape(a.shape(), b.shape())) {
        const auto& da = a.data();
        const auto& db = b.data();
        std::vector<double> out(da.size());
        if (kind == BinKind::Add)
            for (size_t i = 0; i < da.size(); ++i) out[i] = da[i] + db[i];
        else
            for (size_t i = 0; i < da.size(); ++i) out[i] = da[i] * db[i];
        auto an = a.node, bn = b.node;
        return finish_binary(a, b, a.shape(), std::move(out), [an, bn, kind](TensorNode& self) {
            if (an->requires_grad) {
                an->ensure_grad();
                if (kind == BinKind::Add)
                    for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
                else
                    for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * bn->data[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                if (kind == BinKind::Add)
                    for (size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] += self.grad[i];
                else
                    for (size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] += self.grad[i] * an->data[i];
            }
        });
    }

    BroadcastPlan plan = make_broadcast(a.shape(), b.shape());
    int64_t n = shape_numel(plan.out_shape);
    std::vector<double> out(static_cast<size_t>(n));
    size_t r = plan.out_shape.size();
    std::vector<int> idx(r, 0);
    const auto& da = a.data();
    const auto& db = b.data();
    int64_t pa = 0, pb = 0;
    for (int64_t flat = 0; flat < n; ++flat) {
        double va = da[static_cast<size_t>(pa)], vb = db[static_cast<size_t>(pb)];
        out[static_cast<size_t>(flat)] = kind == BinKind::Add ? va + vb : va * vb;
        for (int d = static_cast<int>(r) - 1; d >= 0; --d) {
            size_t ud = static_cast<size_t>(d);
            ++idx[ud];
            pa += plan.stride_a[ud];
            pb += plan.stride_b[ud];
            if (idx[ud] < plan.out_shape[ud]) break;
            pa -= plan.stride_a[ud] * plan.out_shape[ud];
            pb -= plan.stride_b[ud] * plan.out_shape[ud];
            idx[ud] = 0;
        }
    }
    auto an = a.node, bn = b.node;
    auto out_shape = plan.out_shape;
    return finish_binary(a, b, plan.out_shape, std::move(out),
                         [an, bn, kind, out_shape](TensorNode& self) {
        // recompute the other operand's broadcast view for the product rule
        if (kind == BinKind::Add) {
            if (an->requires_grad) accumulate(*an, reduce_to_shape(self.grad, out_shape, an->shape));
            if (bn->requires_grad) accumulate(*bn, reduce_to_shape(self.grad, out_shape, bn->shape));
            return;
        }
        BroadcastPlan plan = make_broadcast(an->shape, bn->shape);
        size_t r = plan.out_shape.size();
        std::vector<double> ga(self.grad.size()), gb(self.grad.size());
        std::vector<int> idx(r, 0);
        int64_t pa = 0, pb = 0;
        for (size_t flat = 0; flat < self.grad.size(); ++flat) {
            ga[flat] = self.grad[flat] * bn->data[static_cast<size_t>(pb)];
            gb[flat] = self.grad[flat] * an->data[static_cast<size_t>(pa)];
            for (int d = static_cast<int>(r) - 1; d >= 0; --d) {
                size_t ud = static_cast<size_t>(d);
                ++idx[ud];
                pa += plan.stride_a[ud];
                pb += plan.stride_b[ud];
                if (idx[ud] < plan.out_shape[ud]) break;
                pa -= plan.stride_a[ud] * plan.out_shape[ud];
                pb -= plan.stride_b[ud] * plan.out_shape[ud];
                idx[ud] = 0;
            }
        }
        if (an->requires_grad) accumulate(*an, reduce_to_shape(ga, out_shape, an->shape));
        if (bn->requires_grad) accumulate(*bn, reduce_to_shape(gb, out_shape, bn->shape));
    });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_elementwise(a, b, BinKind::Add); }

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }

Tensor mul(const Tensor& a, const Tensor& b) { return binary_elementwise(a, b, BinKind::Mul); }

Tensor scale(const Tensor& a, double factor) {
    std::vector<double> out(a.data().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * factor;
    auto an = a.node;
    return finish_unary(a, a.shape(), std::move(out), [an, factor](TensorNode& self) {
        an->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * factor;
    });
}

Tensor relu(const Tensor& a) {
    std::vector<double> out(a.data().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] > 0.0 ? a.data()[i] : 0.0;
    auto an = a.node;
    return finish_unary(a, a.shape(), std::move(out), [an](TensorNode& self) {
        an->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i)
            if (an->data[i] > 0.0) an->grad[i] += self.grad[i];
    });
}

Tensor sigmoid(const Tensor& a) {
    std::vector<double> out(a.data().size());
    for (size_t i = 0; i < out.size(); ++i) {
        double x = a.data()[i];
        // stable in both tails
        out[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    }
    auto an = a.node;
    auto saved = out;
    return finish_unary(a, a.shape(), std::move(out), [an, saved](TensorNode& self) {
        an->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i)
            an->grad[i] += self.grad[i] * saved[i] * (1.0 - saved[i]);
    });
}

Tensor reshape(const Tensor& a, std::vector<int> shape) {
    if (shape_numel(shape) != a.numel())
        throw std::invalid_argument("reshape " + shape_str(a.shape()) + " -> " + shape_str(shape) +
                                    " changes element count");
    auto an = a.node;
    return finish_unary(a, std::move(shape), a.data(), [an](TensorNode& self) {
        accumulate(*an, self.grad);
    });
}

Tensor gather_flat(const Tensor& a, std::vector<int64_t> indices, std::vector<int> out_shape) {
    if (shape_numel(out_shape) != static_cast<int64_t>(indices.size()))
        throw std::invalid_argument("gather_flat: out_shape does not match index count");
    const auto& src = a.data();
    std::vector<double> out(indices.size());
    for (size_t i = 0; i < indices.size(); ++i) {
        int64_t j = indices[i];
        if (j < 0 || j >= static_cast<int64_t>(src.size()))
            throw std::out_of_range("gather_flat: index " + std::to_string(j) + " out of range");
        out[i] = src[static_cast<size_t>(j)];
    }
    auto an = a.node;
    auto idx = std::make_shared<std::vector<int64_t>>(std::move(indices));
    return finish_unary(a, std::move(out_shape), std::move(out), [an, idx](TensorNode& self) {
        an->ensure_grad();
        for (size_t i = 0; i < idx->size(); ++i)
            an->grad[static_cast<size_t>((*idx)[i])] += self.grad[i];
    });
}

Tensor upsample_nearest(const Tensor& a, int out_h, int out_w) {
    if (a.rank() != 3) throw std::invalid_argument("upsample_nearest expects [C,H,W]");
    int c = a.dim(0), h = a.dim(1), w = a.dim(2);
    if (out_h <= 0 || out_w <= 0) throw std::invalid_argument("upsample_nearest: bad target size");
    std::vector<double> out(static_cast<size_t>(c) * out_h * out_w);
    const auto& src = a.data();
    for (int ch = 0; ch < c; ++ch) {
        const double* sp = src.data() + static_cast<size_t>(ch) * h * w;
        double* op = out.data() + static_cast<size_t>(ch) * out_h * out_w;
        for (int y = 0; y < out_h; ++y) {
            int sy = static_cast<int>(static_cast<int64_t>(y) * h / out_h);
            for (int x = 0; x < out_w; ++x) {
                int sx = static_cast<int>(static_cast<int64_t>(x) * w / out_w);
                op[y * out_w + x] = sp[sy * w + sx];
            }
        }
    }
    auto an = a.node;
    return finish_unary(a, {c, out_h, out_w}, std::move(out), [an, c, h, w, out_h, out_w](TensorNode& self) {
        an->ensure_grad();
        for (int ch = 0; ch < c; ++ch) {
            double* gp = an->grad.data() + static_cast<size_t>(ch) * h * w;
            const double* sg = self.grad.data() + static_cast<size_t>(ch) * out_h * out_w;
            for (int y = 0; y < out_h; ++y) {
                int sy = static_cast<int>(static_cast<int64_t>(y) * h / out_h);
                for (int x = 0; x < out_w; ++x) {
                    int sx = static_cast<int>(static_cast<int64_t>(x) * w / out_w);
                    gp[sy * w + sx] += sg[y * out_w + x];
                }
            }
        }
    });
}

Tensor concat0(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat0 of nothing");
    std::vector<int> shape = parts[0].shape();
    int64_t rows = 0;
    for (const auto& p : parts) {
        if (p.rank() != static_cast<int>(shape.size()))
            throw std::invalid_argument("concat0 rank mismatch");
        for (size_t d = 1; d < shape.size(); ++d)
            if (p.shape()[d] != shape[d])
                throw std::invalid_argument("concat0 trailing dim mismatch: " +
                                            shape_str(p.shape()) + " vs " + shape_str(shape));
        rows += p.dim(0);
    }
    shape[0] = static_cast<int>(rows);
    std::vector<double> out;
    out.reserve(static_cast<size_t>(shape_numel(shape)));
    for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());

    auto node = make_node(std::move(shape), std::move(out));
    bool any = false;
    for (const auto& p : parts) any = any || p.requires_grad();
    if (GradMode::enabled() && any) {
        node->requires_grad = true;
        std::vector<NodePtr> srcs;
        for (const auto& p : parts) srcs.push_back(p.node);
        node->parents = srcs;
        node->backward = [srcs](TensorNode& self) {
            size_t off = 0;
            for (auto& s : srcs) {
                size_t n = s->data.size();
                if (s->requires_grad) {
                    s->ensure_grad();
                    for (size_t i = 0; i < n; ++i) s->grad[i] += self.grad[off + i];
                }
                off += n;
            }
        };
    }
    return Tensor(node);
}

Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    auto an = a.node;
    return finish_unary(a, {1}, {s}, [an](TensorNode& self) {
        an->ensure_grad();
        for (size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += self.grad[0];
    });
}

Tensor mean(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    double inv = 1.0 / static_cast<double>(a.numel());
    auto an = a.node;
    return finish_unary(a, {1}, {s * inv}, [an, inv](TensorNode& self) {
        an->ensure_grad();
        for (size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += self.grad[0] * inv;
    });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw std::invalid_argument("matmul expects rank-2 tensors, got " + shape_str(a.shape()) +
                                    " and " + shape_str(b.shape()));
    int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
    if (k != k2)
        throw std::invalid_argument("matmul inner dims differ: " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    for (int i = 0; i < m; ++i) {
        for (int l = 0; l < k; ++l) {
            double av = pa[i * k + l];
            if (av == 0.0) continue;
            const double* brow = pb + static_cast<size_t>(l) * n;
            double* orow = out.data() + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    auto an = a.node, bn = b.node;
    return finish_binary(a, b, {m, n}, std::move(out), [an, bn, m, k, n](TensorNode& self) {
        const double* g = self.grad.data();
        if (an->requires_grad) {
            an->ensure_grad();
            // dA = G * B^T
            for (int i = 0; i < m; ++i)
                for (int l = 0; l < k; ++l) {
                    double acc = 0.0;
                    const double* grow = g + static_cast<size_t>(i) * n;
                    const double* brow = bn->data.data() + static_cast<size_t>(l) * n;
                    for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
                    an->grad[static_cast<size_t>(i) * k + l] += acc;
                }
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            // dB = A^T * G
            for (int l = 0; l < k; ++l)
                for (int i = 0; i < m; ++i) {
                    double av = an->data[static_cast<size_t>(i) * k + l];
                    if (av == 0.0) continue;
                    const double* grow = g + static_cast<size_t>(i) * n;
                    double* brow = bn->grad.data() + static_cast<size_t>(l) * n;
                    for (int j = 0; j < n; ++j) brow[j] += av * grow[j];
                }
        }
    });
}

Tensor group_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, int groups,
                  double eps) {
    if (x.rank() != 3) throw std::invalid_argument("group_norm expects [C,H,W]");
    int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (groups <= 0 || c % groups != 0)
        throw std::invalid_argument("group count must divide channels");
    if (gamma.numel() != c || beta.numel() != c)
        throw std::invalid_argument("group_norm affine params must be [C]");
    int cg = c / groups;
    int64_t group_sz = static_cast<int64_t>(cg) * h * w;
    int64_t plane = static_cast<int64_t>(h) * w;

    const auto& xd = x.data();
    std::vector<double> mean(static_cast<size_t>(groups)), inv_std(static_cast<size_t>(groups));
    std::vector<double> xhat(xd.size());
    std::vector<double> out(xd.size());
    for (int g = 0; g < groups; ++g) {
        const double* gp = xd.data() + static_cast<size_t>(g) * group_sz;
        double m = 0.0;
        for (int64_t i = 0; i < group_sz; ++i) m += gp[i];
        m /= static_cast<double>(group_sz);
        double var = 0.0;
        for (int64_t i = 0; i < group_sz; ++i) var += (gp[i] - m) * (gp[i] - m);
        var /= static_cast<double>(group_sz);
        double is = 1.0 / std::sqrt(var + eps);
        mean[static_cast<size_t>(g)] = m;
        inv_std[static_cast<size_t>(g)] = is;
        for (int64_t i = 0; i < group_sz; ++i) {
            int64_t idx = static_cast<int64_t>(g) * group_sz + i;
            int ch = static_cast<int>(idx / plane);
            double xh = (xd[static_cast<size_t>(idx)] - m) * is;
            xhat[static_cast<size_t>(idx)] = xh;
            out[static_cast<size_t>(idx)] =
                xh * gamma.data()[static_cast<size_t>(ch)] + beta.data()[static_cast<size_t>(ch)];
        }
    }

    auto node = make_node(x.shape(), std::move(out));
    if (GradMode::enabled() && (x.requires_grad() || gamma.requires_grad() || beta.requires_grad())) {
        node->requires_grad = true;
        node->parents = {x.node, gamma.node, beta.node};
        auto xn = x.node, gn = gamma.node, bn = beta.node;
        auto xhat_s = std::make_shared<std::vector<double>>(std::move(xhat));
        auto istd_s = std::make_shared<std::vector<double>>(std::move(inv_std));
        node->backward = [=](TensorNode& self) {
            const auto& g_out = self.grad;
            const auto& xh = *xhat_s;
            if (gn->requires_grad) {
                gn->ensure_grad();
                for (int ch = 0; ch < c; ++ch) {
                    double acc = 0.0;
                    for (int64_t i = 0; i < plane; ++i)
                        acc += g_out[static_cast<size_t>(ch * plane + i)] *
                               xh[static_cast<size_t>(ch * plane + i)];
                    gn->grad[static_cast<size_t>(ch)] += acc;
                }
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (int ch = 0; ch < c; ++ch) {
                    double acc = 0.0;
                    for (int64_t i = 0; i < plane; ++i)
                        acc += g_out[static_cast<size_t>(ch * plane + i)];
                    bn->grad[static_cast<size_t>(ch)] += acc;
                }
            }
            if (xn->requires_grad) {
                xn->ensure_grad();
                for (int g = 0; g < groups; ++g) {
                    double sum_d = 0.0, sum_dx = 0.0;
                    for (int64_t i = 0; i < group_sz; ++i) {
                        int64_t idx = static_cast<int64_t>(g) * group_sz + i;
                        int ch = static_cast<int>(idx / plane);
                        double dxh = g_out[static_cast<size_t>(idx)] *
                                     gn->data[static_cast<size_t>(ch)];
                        sum_d += dxh;
                        sum_dx += dxh * xh[static_cast<size_t>(idx)];
                    }
                    double inv_m = 1.0 / static_cast<double>(group_sz);
                    double is = (*istd_s)[static_cast<size_t>(g)];
                    for (int64_t i = 0; i < group_sz; ++i) {
                        int64_t idx = static_cast<int64_t>(g) * group_sz + i;
                        int ch = static_cast<int>(idx / plane);
                        double dxh = g_out[static_cast<size_t>(idx)] *
                                     gn->data[static_cast<size_t>(ch)];
                        xn->grad[static_cast<size_t>(idx)] +=
                            is * (dxh - inv_m * sum_d -
                                  xh[static_cast<size_t>(idx)] * inv_m * sum_dx);
                    }
                }
            }
        };
    }
    return Tensor(node);
}

Tensor softmax_rows(const Tensor& logits) {
    if (logits.rank() != 2) throw std::invalid_argument("softmax_rows expects [n,c]");
    int n = logits.dim(0), c = logits.dim(1);
    std::vector<double> out(static_cast<size_t>(n) * c);
    const auto& in = logits.data();
    for (int i = 0; i < n; ++i) {
        const double* row = in.data() + static_cast<size_t>(i) * c;
        double mx = row[0];
        for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (int j = 0; j < c; ++j) z += std::exp(row[j] - mx);
        for (int j = 0; j < c; ++j) out[static_cast<size_t>(i) * c + j] = std::exp(row[j] - mx) / z;
    }
    auto an = logits.node;
    auto saved = out;
    return finish_unary(logits, logits.shape(), std::move(out), [an, saved, n, c](TensorNode& self) {
        an->ensure_grad();
        for (int i = 0; i < n; ++i) {
            const double* s = saved.data() + static_cast<size_t>(i) * c;
            const double* g = self.grad.data() + static_cast<size_t>(i) * c;
            double dot = 0.0;
            for (int j = 0; j < c; ++j) dot += g[j] * s[j];
            for (int j = 0; j < c; ++j)
                an->grad[static_cast<size_t>(i) * c + j] += s[j] * (g[j] - dot);
        }
    });
}

Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    if (logits.rank() != 2) throw std::invalid_argument("softmax_cross_entropy expects [n,c]");
    int n = logits.dim(0), c = logits.dim(1);
    if (static_cast<int>(labels.size()) != n)
        throw std::invalid_argument("label count " + std::to_string(labels.size()) +
                                    " does not match rows " + std::to_string(n));
    for (int y : labels)
        if (y < 0 || y >= c)
            throw std::out_of_range("label " + std::to_string(y) + " outside [0," +
                                    std::to_string(c) + ")");
    const auto& in = logits.data();
    // row-max subtraction keeps exp() in range
    std::vector<double> probs(static_cast<size_t>(n) * c);
    double loss = 0.0;
    for (int i = 0; i < n; ++i) {
        const double* row = in.data() + static_cast<size_t>(i) * c;
        double mx = row[0];
        for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (int j = 0; j < c; ++j) z += std::exp(row[j] - mx);
        for (int j = 0; j < c; ++j) probs[static_cast<size_t>(i) * c + j] = std::exp(row[j] - mx) / z;
        loss += std::log(z) - (row[labels[static_cast<size_t>(i)]] - mx);
    }
    loss /= n;
    auto an = logits.node;
    auto labels_copy = labels;
    return finish_unary(logits, {1}, {loss}, [an, probs, labels_copy, n, c](TensorNode& self) {
        an->ensure_grad();
        double g = self.grad[0] / n;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < c; ++j) {
                double p = probs[static_cast<size_t>(i) * c + j];
                double t = labels_copy[static_cast<size_t>(i)] == j ? 1.0 : 0.0;
                an->grad[static_cast<size_t>(i) * c + j] += g * (p - t);
            }
    });
}

Tensor sigmoid_bce_with_logits(const Tensor& logits, const std::vector<double>& targets) {
    int64_t n = logits.numel();
    if (static_cast<int64_t>(targets.size()) != n)
        throw std::invalid_argument("target count does not match logits");
    const auto& in = logits.data();
    double loss = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        double x = in[static_cast<size_t>(i)], y = targets[static_cast<size_t>(i)];
        loss += std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::fabs(x)));
    }
    loss /= static_cast<double>(n);
    auto an = logits.node;
    auto tgt = targets;
    return finish_unary(logits, {1}, {loss}, [an, tgt, n](TensorNode& self) {
        an->ensure_grad();
        double g = self.grad[0] / static_cast<double>(n);
        for (int64_t i = 0; i < n; ++i) {
            double x = an->data[static_cast<size_t>(i)];
            double s = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
            an->grad[static_cast<size_t>(i)] += g * (s - tgt[static_cast<size_t>(i)]);
        }
    });
}

Tensor smooth_l1(const Tensor& pred, const Tensor& target, double beta) {
    if (pred.shape() != target.shape())
        throw std::invalid_argument("smooth_l1 shape mismatch: " + shape_str(pred.shape()) +
                                    " vs " + shape_str(target.shape()));
    if (beta <= 0.0) throw std::invalid_argument("smooth_l1 beta must be positive");
    int64_t n = pred.numel();
    double loss = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        double d = pred.data()[static_cast<size_t>(i)] - target.data()[static_cast<size_t>(i)];
        double ad = std::fabs(d);
        loss += ad < beta ? 0.5 * d * d / beta : ad - 0.5 * beta;
    }
    loss /= static_cast<double>(n);
    auto pn = pred.node, tn = target.node;
    return finish_binary(pred, target, {1}, {loss}, [pn, tn, beta, n](TensorNode& self) {
        double g = self.grad[0] / static_cast<double>(n);
        for (int64_t i = 0; i < n; ++i) {
            double d = pn->data[static_cast<size_t>(i)] - tn->data[static_cast<size_t>(i)];
            double dd = std::fabs(d) < beta ? d / beta : (d > 0.0 ? 1.0 : -1.0);
            if (pn->requires_grad) {
                pn->ensure_grad();
                pn->grad[static_cast<size_t>(i)] += g * dd;
            }
            if (tn->requires_grad) {
                tn->ensure_grad();
                tn->grad[static_cast<size_t>(i)] -= g * dd;
            }
        }
    });
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

void backward(const Tensor& loss) {
    if (loss.numel() != 1) throw std::invalid_argument("backward requires a scalar loss");
    if (!loss.requires_grad()) return;  // constant: nothing reachable

    // iterative post-order DFS -> topological order
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> visited;
    std::vector<std::pair<TensorNode*, size_t>> stack;
    stack.emplace_back(loss.node.get(), 0);
    visited.insert(loss.node.get());
    while (!stack.empty()) {
        auto& [node, child] = stack.back();
        if (child < node->parents.size()) {
            TensorNode* p = node->parents[child++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    // Each call computes this pass's gradients in fresh buffers, then adds
    // them onto whatever was already accumulated.
    std::vector<std::vector<double>> stash(order.size());
    for (size_t i = 0; i < order.size(); ++i) stash[i] = std::move(order[i]->grad);
    for (TensorNode* node : order) node->grad.clear();

    loss.node->ensure_grad();
    loss.node->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode* node = *it;
        if (node->backward && node->grad.size() == node->data.size()) node->backward(*node);
    }
    for (size_t i = 0; i < order.size(); ++i) {
        if (stash[i].empty()) continue;
        order[i]->ensure_grad();
        for (size_t j = 0; j < stash[i].size(); ++j) order[i]->grad[j] += stash[i][j];
    }
}

// ---------------------------------------------------------------------------
// optimizer
// ---------------------------------------------------------------------------

SgdOptimizer::SgdOptimizer(std::vector<Tensor> params, double momentum, double clip_norm)
    : params_(std::move(params)), momentum_(momentum), clip_norm_(clip_norm) {
    velocity_.resize(params_.size());
    for (size_t i = 0; i < params_.size(); ++i)
        velocity_[i].assign(params_[i].data().size(), 0.0);
}

void SgdOptimizer::step(double lr) {
    for (size_t i = 0; i < params_.size(); ++i)
        if (!params_[i].has_grad())
            throw std::runtime_error("sgd step: parameter " + std::to_string(i) + " has no grad");
    if (clip_norm_ > 0.0) {
        double sq = 0.0;
        for (auto& p : params_)
            for (double g : p.node->grad) sq += g * g;
        double norm = std::sqrt(sq);
        if (norm > clip_norm_) {
            double s = clip_norm_ / norm;
            for (auto& p : params_)
                for (double& g : p.node->grad) g *= s;
        }
    }
    for (size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = params_[i];
        auto& v = velocity_[i];
        auto& g = p.node->grad;
        auto& d = p.node->data;
        for (size_t j = 0; j < d.size(); ++j) {
            v[j] = momentum_ * v[j] + g[j];
            d[j] -= lr * v[j];
        }
        p.zero_grad();
    }
}

void SgdOptimizer::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

}  // namespace tabledet
