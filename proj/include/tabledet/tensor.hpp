#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

namespace tabledet {

struct TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

// One recorded value in the autodiff graph: a dense row-major buffer of
// 64-bit floats plus the links needed for the reverse sweep.
struct TensorNode {
    std::vector<int> shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad;  // allocated lazily, same length as data
    std::vector<NodePtr> parents;
    std::function<void(TensorNode&)> backward;

    int64_t numel() const {
        int64_t n = 1;
        for (int d : shape) n *= d;
        return n;
    }
    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};

// Thread-local switch: with grad recording off, ops still compute forward
// values but never attach parents or backward closures.
struct GradMode {
    static bool& enabled();
};

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(GradMode::enabled()) { GradMode::enabled() = false; }
    ~NoGradGuard() { GradMode::enabled() = prev; }
};

// Value-semantics handle over a graph node. Copies share the node.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(NodePtr n) : node(std::move(n)) {}

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor full(std::vector<int> shape, double value, bool requires_grad = false);
    static Tensor from_data(std::vector<int> shape, std::vector<double> data,
                            bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return node != nullptr; }
    const std::vector<int>& shape() const;
    int dim(int i) const { return shape()[static_cast<size_t>(i)]; }
    int rank() const { return static_cast<int>(shape().size()); }
    int64_t numel() const;

    const std::vector<double>& data() const;
    std::vector<double>& mutable_data();
    double item() const;  // scalar tensors only

    bool requires_grad() const;
    void set_requires_grad(bool v);
    bool has_grad() const;
    const std::vector<double>& grad() const;  // throws if absent
    void zero_grad();
    void ensure_grad() const;

    NodePtr node;
};

// ---- elementwise ops (trailing-dimension broadcasting on binary ops) ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor scale(const Tensor& a, double factor);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

// ---- shape / gather ----
Tensor reshape(const Tensor& a, std::vector<int> shape);
// Picks arbitrary elements by flat index; out_shape must match indices size.
Tensor gather_flat(const Tensor& a, std::vector<int64_t> indices, std::vector<int> out_shape);
// Nearest-neighbour resize of a [C,H,W] map to [C,out_h,out_w].
Tensor upsample_nearest(const Tensor& a, int out_h, int out_w);
// Concatenation along axis 0; trailing dims must agree.
Tensor concat0(const std::vector<Tensor>& parts);

// ---- reductions / linear algebra ----
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor matmul(const Tensor& a, const Tensor& b);  // [m,k] x [k,n]

// Group normalisation over a [C,H,W] map: per-group standardisation plus a
// per-channel affine. Works at batch size 1.
Tensor group_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, int groups,
                  double eps = 1e-5);

// ---- classification / regression losses ----
Tensor softmax_rows(const Tensor& logits);  // [n,c] -> [n,c]
Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels);
Tensor sigmoid_bce_with_logits(const Tensor& logits, const std::vector<double>& targets);
Tensor smooth_l1(const Tensor& pred, const Tensor& target, double beta);

// Reverse topological sweep from a scalar loss. Grads accumulate across
// repeated calls; zeroing is the optimizer's job.
void backward(const Tensor& loss);

// SGD with classical momentum: v <- momentum*v + g; p <- p - lr*v.
// Grads are zeroed after each step. An optional global-norm clip rescales
// all gradients before the velocity update.
class SgdOptimizer {
public:
    SgdOptimizer(std::vector<Tensor> params, double momentum, double clip_norm = 0.0);
    void step(double lr);
    void zero_grad();  // allocates + zeroes grad buffers on every param
    const std::vector<Tensor>& params() const { return params_; }

private:
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> velocity_;
    double momentum_;
    double clip_norm_;
};

std::string shape_str(const std::vector<int>& shape);

}  // namespace tabledet
