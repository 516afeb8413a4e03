#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "mlcil/rng.hpp"

namespace mlcil {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// One node of the per-batch compute graph. Leaves are parameters or data;
// interior nodes record the op, operand references, and the adjoint rule.
// Parent links keep the graph topologically ordered by construction.
struct TensorNode {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // allocated on demand during backward
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backprop;  // accumulates self.grad into parents

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

using NodePtr = std::shared_ptr<TensorNode>;

// Value-semantic handle over a graph node. All math is 64-bit and
// deterministic; ops execute eagerly (define-by-run) and record the
// backward rule when any operand requires gradients.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double v, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double v, bool requires_grad = false);
    static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0, bool requires_grad = false);
    static Tensor from_node(NodePtr n) { return Tensor(std::move(n)); }

    bool defined() const { return static_cast<bool>(n_); }
    const Shape& shape() const { return n_->shape; }
    std::size_t rank() const { return n_->shape.size(); }
    std::size_t size() const { return n_->value.size(); }
    std::size_t dim(std::size_t i) const { return n_->shape[i]; }

    double item() const;

    std::vector<double>& data() { return n_->value; }
    const std::vector<double>& data() const { return n_->value; }

    bool has_grad() const { return n_->grad.size() == n_->value.size(); }
    std::vector<double>& grad() { return n_->grad; }
    const std::vector<double>& grad() const { return n_->grad; }
    void zero_grad() { n_->grad.assign(n_->value.size(), 0.0); }

    bool requires_grad() const { return n_->requires_grad; }
    void set_requires_grad(bool rg) { n_->requires_grad = rg; }

    double& at(std::size_t i) { return n_->value[i]; }
    double at(std::size_t i) const { return n_->value[i]; }
    double& at(std::size_t i, std::size_t j) { return n_->value[i * n_->shape[1] + j]; }
    double at(std::size_t i, std::size_t j) const { return n_->value[i * n_->shape[1] + j]; }
    double& at(std::size_t i, std::size_t j, std::size_t k) {
        return n_->value[(i * n_->shape[1] + j) * n_->shape[2] + k];
    }
    double at(std::size_t i, std::size_t j, std::size_t k) const {
        return n_->value[(i * n_->shape[1] + j) * n_->shape[2] + k];
    }

    // value copy detached from the graph
    Tensor detach(bool requires_grad = false) const;

    NodePtr node() const { return n_; }

private:
    explicit Tensor(NodePtr n) : n_(std::move(n)) {}
    NodePtr n_;
};

// ---- primitive ops ---------------------------------------------------------

// matmul supports (R,K)x(K,C), (N,R,K)x(K,C) and (N,R,K)x(N,K,C)
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);        // 2-d
Tensor transpose_last2(const Tensor& a);  // 3-d

Tensor add(const Tensor& a, const Tensor& b);  // same shape
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor add_bias_rows(const Tensor& a, const Tensor& bias);         // [..., D] + [D]
Tensor broadcast_add_batch(const Tensor& x, const Tensor& batch);  // [C,D] + [N,C,D]

Tensor softmax_last(const Tensor& a);
// Pre-norm layer norm over the last axis. Rows with variance below
// var_floor normalize to zero instead of dividing by ~0.
Tensor layer_norm_last(const Tensor& a, const Tensor& gain, const Tensor& bias,
                       double var_floor = 1e-12);
Tensor gelu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor log_elem(const Tensor& a);
Tensor clamp(const Tensor& a, double lo, double hi);
Tensor pow_const(const Tensor& a, double e);

Tensor sum(const Tensor& a);   // -> scalar
Tensor mean(const Tensor& a);  // -> scalar
Tensor mean_axis1(const Tensor& a);  // [N,L,D] -> [N,D]

Tensor slice_axis1(const Tensor& a, std::size_t begin, std::size_t end);  // [N,C,D] rows
Tensor slice_last(const Tensor& a, std::size_t begin, std::size_t end);   // 2-d or 3-d
Tensor concat0(const std::vector<Tensor>& parts);                         // 1-d or 2-d
Tensor concat_last(const std::vector<Tensor>& parts);                     // 2-d or 3-d
Tensor reshape(const Tensor& a, Shape shape);

// logits[n,c] = sum_d e[n,c,d] * w[c,d]
Tensor rowwise_dot(const Tensor& e, const Tensor& w);
// rows scaled to unit L2 norm; zero rows stay zero
Tensor l2_normalize_rows(const Tensor& a);
// picks rows (sample, class) out of [N,C,D] into [K,D]
Tensor gather_rows(const Tensor& a, const std::vector<std::pair<std::size_t, std::size_t>>& idx);

// Reverse-mode sweep from a scalar loss. Visits each reachable node exactly
// once in reverse topological order and accumulates adjoints into every
// node with requires_grad (frozen parameters included).
void backward(const Tensor& loss);

}  // namespace mlcil
