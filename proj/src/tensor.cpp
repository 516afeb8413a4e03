#include "mlcil/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "mlcil/errors.hpp"

namespace mlcil {

std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

namespace {

NodePtr make_node(const Shape& shape, const char* op) {
    auto n = std::make_shared<TensorNode>();
    n->shape = shape;
    n->value.assign(shape_numel(shape), 0.0);
    n->op = op;
    return n;
}

// Registers parents and the adjoint rule only when some operand needs
// gradients; otherwise the result is a plain constant and the graph stays
// pruned (snapshot forwards build no tape).
Tensor finish(NodePtr n, std::vector<NodePtr> parents, std::function<void(TensorNode&)> bp) {
    bool rg = false;
    for (const auto& p : parents) rg = rg || p->requires_grad;
    if (rg) {
        n->requires_grad = true;
        n->parents = std::move(parents);
        n->backprop = std::move(bp);
    }
    return Tensor::from_node(std::move(n));
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                        " vs " + shape_str(b.shape()));
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    auto n = make_node(shape, "leaf");
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
    auto n = make_node(shape, "leaf");
    std::fill(n->value.begin(), n->value.end(), v);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
    require(shape_numel(shape) == data.size(),
            "from_data: " + shape_str(shape) + " does not hold " + std::to_string(data.size()) +
                " values");
    auto n = make_node(shape, "leaf");
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::scalar(double v, bool requires_grad) {
    return from_data({1}, {v}, requires_grad);
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev, bool requires_grad) {
    auto n = make_node(shape, "leaf");
    for (auto& v : n->value) v = rng.normal(stddev);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

double Tensor::item() const {
    require(n_ && n_->value.size() == 1, "item: tensor is not a scalar");
    return n_->value[0];
}

Tensor Tensor::detach(bool requires_grad) const {
    auto n = make_node(n_->shape, "leaf");
    n->value = n_->value;
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

// ---- matmul ----------------------------------------------------------------

namespace {

// C[r,c] += A[r,k] B[k,c]
void mm_acc(const double* A, const double* B, double* C, std::size_t R, std::size_t K,
            std::size_t N) {
    for (std::size_t i = 0; i < R; ++i) {
        const double* a = A + i * K;
        double* c = C + i * N;
        for (std::size_t k = 0; k < K; ++k) {
            const double av = a[k];
            const double* b = B + k * N;
            for (std::size_t j = 0; j < N; ++j) c[j] += av * b[j];
        }
    }
}

// dA[r,k] += G[r,c] B[k,c]
void mm_grad_a(const double* G, const double* B, double* dA, std::size_t R, std::size_t K,
               std::size_t N) {
    for (std::size_t i = 0; i < R; ++i) {
        const double* g = G + i * N;
        double* da = dA + i * K;
        for (std::size_t k = 0; k < K; ++k) {
            const double* b = B + k * N;
            double acc = 0.0;
            for (std::size_t j = 0; j < N; ++j) acc += g[j] * b[j];
            da[k] += acc;
        }
    }
}

// dB[k,c] += A[r,k] G[r,c]
void mm_grad_b(const double* A, const double* G, double* dB, std::size_t R, std::size_t K,
               std::size_t N) {
    for (std::size_t i = 0; i < R; ++i) {
        const double* a = A + i * K;
        const double* g = G + i * N;
        for (std::size_t k = 0; k < K; ++k) {
            const double av = a[k];
            double* db = dB + k * N;
            for (std::size_t j = 0; j < N; ++j) db[j] += av * g[j];
        }
    }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    const auto ar = a.rank();
    const auto br = b.rank();
    require((ar == 2 && br == 2) || (ar == 3 && br == 2) || (ar == 3 && br == 3),
            "matmul: unsupported ranks " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const std::size_t K = a.shape().back();
    require(br == 2 ? b.dim(0) == K : b.dim(1) == K,
            "matmul: inner dimensions disagree " + shape_str(a.shape()) + " x " +
                shape_str(b.shape()));
    if (ar == 3 && br == 3)
        require(a.dim(0) == b.dim(0), "matmul: batch dimensions disagree " +
                                          shape_str(a.shape()) + " x " + shape_str(b.shape()));

    const std::size_t N = b.shape().back();
    Shape out_shape = ar == 2 ? Shape{a.dim(0), N} : Shape{a.dim(0), a.dim(1), N};
    auto out = make_node(out_shape, "matmul");

    if (br == 2) {
        // 3-d lhs with shared rhs is the flattened 2-d product
        const std::size_t R = a.size() / K;
        mm_acc(a.data().data(), b.data().data(), out->value.data(), R, K, N);
        return finish(out, {a.node(), b.node()}, [R, K, N](TensorNode& self) {
            auto& A = *self.parents[0];
            auto& B = *self.parents[1];
            if (A.requires_grad) mm_grad_a(self.grad.data(), B.value.data(), A.grad.data(), R, K, N);
            if (B.requires_grad) mm_grad_b(A.value.data(), self.grad.data(), B.grad.data(), R, K, N);
        });
    }

    const std::size_t batch = a.dim(0);
    const std::size_t R = a.dim(1);
    for (std::size_t n = 0; n < batch; ++n)
        mm_acc(a.data().data() + n * R * K, b.data().data() + n * K * N,
               out->value.data() + n * R * N, R, K, N);
    return finish(out, {a.node(), b.node()}, [batch, R, K, N](TensorNode& self) {
        auto& A = *self.parents[0];
        auto& B = *self.parents[1];
        for (std::size_t n = 0; n < batch; ++n) {
            const double* g = self.grad.data() + n * R * N;
            if (A.requires_grad)
                mm_grad_a(g, B.value.data() + n * K * N, A.grad.data() + n * R * K, R, K, N);
            if (B.requires_grad)
                mm_grad_b(A.value.data() + n * R * K, g, B.grad.data() + n * K * N, R, K, N);
        }
    });
}

Tensor transpose(const Tensor& a) {
    require(a.rank() == 2, "transpose: expected 2-d tensor, got " + shape_str(a.shape()));
    const std::size_t R = a.dim(0), C = a.dim(1);
    auto out = make_node({C, R}, "transpose");
    for (std::size_t i = 0; i < R; ++i)
        for (std::size_t j = 0; j < C; ++j) out->value[j * R + i] = a.data()[i * C + j];
    return finish(out, {a.node()}, [R, C](TensorNode& self) {
        auto& A = *self.parents[0];
        if (!A.requires_grad) return;
        for (std::size_t i = 0; i < R; ++i)
            for (std::size_t j = 0; j < C; ++j) A.grad[i * C + j] += self.grad[j * R + i];
    });
}

Tensor transpose_last2(const Tensor& a) {
    require(a.rank() == 3, "transpose_last2: expected 3-d tensor, got " + shape_str(a.shape()));
    const std::size_t B = a.dim(0), R = a.dim(1), C = a.dim(2);
    auto out = make_node({B, C, R}, "transpose_last2");
    for (std::size_t n = 0; n < B; ++n)
        for (std::size_t i = 0; i < R; ++i)
            for (std::size_t j = 0; j < C; ++j)
                out->value[(n * C + j) * R + i] = a.data()[(n * R + i) * C + j];
    return finish(out, {a.node()}, [B, R, C](TensorNode& self) {
        auto& A = *self.parents[0];
        if (!A.requires_grad) return;
        for (std::size_t n = 0; n < B; ++n)
            for (std::size_t i = 0; i < R; ++i)
                for (std::size_t j = 0; j < C; ++j)
                    A.grad[(n * R + i) * C + j] += self.grad[(n * C + j) * R + i];
    });
}

// ---- elementwise -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape("add", a, b);
    auto out = make_node(a.shape(), "add");
    for (std::size_t i = 0; i < out->value.size(); ++i) out->value[i] = a.data()[i] + b.data()[i];
    return finish(out, {a.node(), b.node()}, [](TensorNode& self) {
        for (int p = 0; p < 2; ++p) {
            auto& P = *self.parents[p];
            if (!P.requires_grad) continue;
            for (std::size_t i = 0; i < self.grad.size(); ++i) P.grad[i] += self.grad[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape("sub", a, b);
    auto out = make_node(a.shape(), "sub");
    for (std::size_t i = 0; i < out->value.size(); ++i) out->value[i] = a.data()[i] - b.data()[i];
    return finish(out, {a.node(), b.node()}, [](TensorNode& self) {
        auto& A = *self.parents[0];
        auto& B = *self.parents[1];
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            if (A.requires_grad) A.grad[i] += self.grad[i];
            if (B.requires_grad) B.grad[i] -= self.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape("mul", a, b);
    auto out = make_node(a.shape(), "mul");
    for (std::size_t i = 0; i < out->value.size(); ++i) out->value[i] = a.data()[i] * b.data()[i];
    return finish(out, {a.node(), b.node()}, [](TensorNode& self) {
        auto& A = *self.parents[0];
        auto& B = *self.parents[1];
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            if (A.requires_grad) A.grad[i] += self.grad[i] * B.value[i];
            if (B.requires_grad) B.grad[i] += self.grad[i] * A.value[i];
        }
    });
}

Tensor scale(const Tensor& a, double c) {
    auto out = make_node(a.shape(), "scale");
    for (std::size_t i = 0; i < out->value.size(); ++i) out->value[i] = a.data()[i] * c;
    return finish(out, {a.node()}, [c](TensorNode& self) {
        auto& A = *self.parents[0];
        if (!A.requires_grad) return;
        for (std::size_t i = 0; i < self.grad.size(); ++i) A.grad[i] += self.grad[i] * c;
    });
}

Tensor add_scalar(const Tensor& a, double c) {
    auto out = make_node(a.shape(), "add_scalar");
    for (std::size_t i = 0; i < out->value.size(); ++i) out->value[i] = a.data()[i] + c;
    return finish(out, {a.node()}, [](TensorNode& self) {
        auto& A = *self.parents[0];
        if (!A.requires_grad) return;
        for (std::size_t i = 0; i < self.grad.size(); ++i) A.grad[i] += self.grad[i];
    });
}

Tensor add_bias_rows(const Tensor& a, const Tensor& bias) {
    require(bias.rank() == 1, "add_bias_rows: bias must be 1-d, got " + shape_str(bias.shape()));
    const std::size_t D = bias.dim(0);
    require(a.shape().back() == D, "add_bias_rows: last dim " + shape_str(a.shape()) +
                                       " does not match bias " + shape_str(bias.shape()));
    const std::size_t rows = a.size() / D;
    auto out = make_node(a.shape(), "add_bias_rows");
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t d = 0; d < D; ++d)
            out->value[r * D + d] = a.data()[r * D + d] + bias.data()[d];
    return finish(out, {a.node(), bias.node()}, [rows, D](TensorNode& self) {
        auto& A = *self.parents[0];
        auto& B = *self.parents[1];
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t d = 0; d < D; ++d) {
                const double g = self.grad[r * D + d];
                if (A.requires_grad) A.grad[r * D + d] += g;
                if (B.requires_grad) B.grad[d] += g;
            }
    });
}

Tensor broadcast_add_batch(const Tensor& x, const Tensor& batch) {
    require(x.rank() == 2 && batch.rank() == 3 && batch.dim(1) == x.dim(0) &&
                batch.dim(2) == x.dim(1),
            "broadcast_add_batch: incompatible " + shape_str(x.shape()) + " + " +
                shape_str(batch.shape()));
    const std::size_t N = batch.dim(0), CD = x.size();
    auto out = make_node(batch.shape(), "broadcast_add_batch");
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t i = 0; i < CD; ++i)
            out->value[n * CD + i] = x.data()[i] + batch.data()[n * CD + i];
    return finish(out, {x.node(), batch.node()}, [N, CD](TensorNode& self) {
        auto& X = *self.parents[0];
        auto& B = *self.parents[1];
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t i = 0; i < CD; ++i) {
                const double g = self.grad[n * CD + i];
                if (X.requires_grad) X.grad[i] += g;
                if (B.requires_grad) B.grad[n * CD + i] += g;
            }
    });
}

// ---- row-structured nonlinearities -----------------------------------------

Tensor softmax_last(const Tensor& a) {
    require(a.rank() >= 1, "softmax_last: undefined input");
    const std::size_t D = a.shape().back();
    const std::size_t rows = a.size() / D;
    auto out = make_node(a.shape(), "softmax_last");
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = a.data().data() + r * D;
        double* y = out->value.data() + r * D;
        double m = x[0];
        for (std::size_t d = 1; d < D; ++d) m = std::max(m, x[d]);
        double s = 0.0;
        for (std::size_t d = 0; d < D; ++d) {
            y[d] = std::exp(x[d] - m);
            s += y[d];
        }
        for (std::size_t d = 0; d < D; ++d) y[d] /= s;
    }
    return finish(out, {a.node()}, [rows, D](TensorNode& self) {
        auto& A = *self.parents[0];
        if (!A.requires_grad) return;
        for (std::size_t r = 0; r < rows; ++r) {
            const double* y = self.value.data() + r * D;
            const double* g = self.grad.data() + r * D;
            double dot = 0.0;
            for (std::size_t d = 0; d < D; ++d) dot += g[d] * y[d];
            double* da = A.grad.data() + r * D;
            for (std::size_t d = 0; d < D; ++d) da[d] += y[d] * (g[d] - dot);
        }
    });
}

Tensor layer_norm_last(const Tensor& a, const Tensor& gain, const Tensor& bias, double var_floor) {
    const std::size_t D = a.shape().back();
    require(gain.rank() == 1 && gain.dim(0) == D && bias.rank() == 1 && bias.dim(0) == D,
            "layer_norm_last: affine parameters must be [" + std::to_string(D) + "]");
    const std::size_t rows = a.size() / D;
    auto out = make_node(a.shape(), "layer_norm_last");
    // normalized rows and per-row sigma are kept for the adjoint
    auto xhat = std::make_shared<std::vector<double>>(a.size());
    auto sigma = std::make_shared<std::vector<double>>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = a.data().data() + r * D;
        double mu = 0.0;
        for (std::size_t d = 0; d < D; ++d) mu += x[d];
        mu /= static_cast<double>(D);
        double var = 0.0;
        for (std::size_t d = 0; d < D; ++d) var += (x[d] - mu) * (x[d] - mu);
        var /= static_cast<double>(D);
        double* xh = xhat->data() + r * D;
        if (var < var_floor) {
            // constant row: normalized output pinned to zero
            (*sigma)[r] = 0.0;
            for (std::size_t d = 0; d < D; ++d) xh[d] = 0.0;
        } else {
            const double sd = std::sqrt(var);
            (*sigma)[r] = sd;
            for (std::size_t d = 0; d < D; ++d) xh[d] = (x[d] - mu) / sd;
        }
        double* y = out->value.data() + r * D;
        for (std::size_t d = 0; d < D; ++d) y[d] = gain.data()[d] * xh[d] + bias.data()[d];
    }
    return finish(out, {a.node(), gain.node(), bias.node()},
                  [rows, D, xhat, sigma](TensorNode& self) {
                      auto& A = *self.parents[0];
                      auto& G = *self.parents[1];
                      auto& B = *self.parents[2];
                      for (std::size_t r = 0; r < rows; ++r) {
                          const double* g = self.grad.data() + r * D;
                          const double* xh = xhat->data() + r * D;
                          for (std::size_t d = 0; d < D; ++d) {
                              if (G.requires_grad) G.grad[d] += g[d] * xh[d];
                              if (B.requires_grad) B.grad[d] += g[d];
                          }
                          if (!A.requires_grad || (*sigma)[r] == 0.0) continue;
                          const double inv_sd = 1.0 / (*sigma)[r];
                          double mean_gy = 0.0, mean_gy_xh = 0.0;
                          for (std::size_t d = 0; d < D; ++d) {
                              const double gy = g[d] * G.value[d];
                              mean_gy += gy;
                              mean_gy_xh += gy * xh[d];
                          }
                          mean_gy /= static_cast<double>(D);
                          mean_gy_xh /= static_cast<double>(D);
                          double* da = A.grad.data() + r * D;
                          for (std::size_t d = 0; d < D; ++d) {
                              const double gy = g[d] * G.value[d];
                              da[d] += (gy - mean_gy - xh[d] * mean_gy_xh) * inv_sd;
                          }
                      }
                  });
}

Tensor gelu(const Tensor& a) {
    auto out = make_node(a.shape(), "gelu");
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    for (std::size_t i = 0; i < out->value.size(); ++i) {
        const double x = a.data()[i];
        out->value[i] = 0.5 * x * (1.0 + std::erf(x * inv_sqrt2));
    }
    return finish(out, {a.node()}, [](TensorNode& self) {
        auto& A = *self.parents[0];
        if (!A.requires_grad) return;
        constexpr double inv_sqrt2 = 0.70710678118654752440;
        constexpr double inv_sqrt2pi = 0.39894228040143267794;
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const double x = A.value[i];
            const double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
            const double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
            A.grad[i] += self.grad[i] * (cdf + x * pdf);
        }
    });
}

Tensor sigmoid(const Tensor& a) {
    auto out = make_node(a.shape(), "sigmoid");
    for (std::size_t i = 0; i < out->value.size(); ++i) {
        const double x = a.data()[i];
        out->value[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    }
    return finish(out, {a.node()}, [](TensorNode& self) {
        auto& A = *self.parents[0];
        if (!A.requires_grad) return;
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const double y = self.value[i];
            A.grad[i] += self.grad[i] * y * (1.0 - y);
        }
    });
}

Tensor log_elem(const Tensor& a) {
    auto out = make_node(a.shape(), "log");
    for (std::size_t i = 0; i < out->value.size(); ++i) out->value[i] = std::log(a.data()[i]);
    return finish(out, {a.node()}, [](TensorNode& self) {
        auto& A = *self.parents[0];
        if (!A.requires_grad) return;
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            A.grad[i] += self.grad[i] / A.value[i];
    });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
    require(lo <= hi, "clamp: empty window");
    auto out = make_node(a.shape(), "clamp");
    for (std::size_t i = 0; i < out->value.size(); ++i)
        out->value[i] = std::min(std::max(a.data()[i], lo), hi);
    return finish(out, {a.node()}, [lo, hi](TensorNode& self) {
        auto& A = *self.parents[0];
        if (!A.requires_grad) return;
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const double x = A.value[i];
            if (x > lo && x < hi) A.grad[i] += self.grad[i];
        }
    });
}

Tensor pow_const(const Tensor& a, double e) {
    auto out = make_node(a.shape(), "pow_const");
    if (e == 0.0) {
        std::fill(out->value.begin(), out->value.end(), 1.0);
        return Tensor::from_node(std::move(out));  // constant, no gradient path
    }
    for (std::size_t i = 0; i < out->value.size(); ++i) out->value[i] = std::pow(a.data()[i], e);
    return finish(out, {a.node()}, [e](TensorNode& self) {
        auto& A = *self.parents[0];
        if (!A.requires_grad) return;
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            A.grad[i] += self.grad[i] * e * std::pow(A.value[i], e - 1.0);
    });
}

// ---- reductions ------------------------------------------------------------

Tensor sum(const Tensor& a) {
    auto out = make_node({1}, "sum");
    double s = 0.0;
    for (double v : a.data()) s += v;
    out->value[0] = s;
    return finish(out, {a.node()}, [](TensorNode& self) {
        auto& A = *self.parents[0];
        if (!A.requires_grad) return;
        const double g = self.grad[0];
        for (auto& d : A.grad) d += g;
    });
}

Tensor mean(const Tensor& a) {
    const double inv_n = 1.0 / static_cast<double>(a.size());
    auto out = make_node({1}, "mean");
    double s = 0.0;
    for (double v : a.data()) s += v;
    out->value[0] = s * inv_n;
    return finish(out, {a.node()}, [inv_n](TensorNode& self) {
        auto& A = *self.parents[0];
        if (!A.requires_grad) return;
        const double g = self.grad[0] * inv_n;
        for (auto& d : A.grad) d += g;
    });
}

Tensor mean_axis1(const Tensor& a) {
    require(a.rank() == 3, "mean_axis1: expected 3-d tensor, got " + shape_str(a.shape()));
    const std::size_t N = a.dim(0), L = a.dim(1), D = a.dim(2);
    const double inv_l = 1.0 / static_cast<double>(L);
    auto out = make_node({N, D}, "mean_axis1");
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t l = 0; l < L; ++l)
            for (std::size_t d = 0; d < D; ++d)
                out->value[n * D + d] += a.data()[(n * L + l) * D + d] * inv_l;
    return finish(out, {a.node()}, [N, L, D, inv_l](TensorNode& self) {
        auto& A = *self.parents[0];
        if (!A.requires_grad) return;
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t l = 0; l < L; ++l)
                for (std::size_t d = 0; d < D; ++d)
                    A.grad[(n * L + l) * D + d] += self.grad[n * D + d] * inv_l;
    });
}

// ---- shape surgery ---------------------------------------------------------

Tensor slice_axis1(const Tensor& a, std::size_t begin, std::size_t end) {
    require(a.rank() == 3 && begin <= end && end <= a.dim(1),
            "slice_axis1: bad range on " + shape_str(a.shape()));
    const std::size_t N = a.dim(0), C = a.dim(1), D = a.dim(2), W = end - begin;
    auto out = make_node({N, W, D}, "slice_axis1");
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < W; ++c)
            for (std::size_t d = 0; d < D; ++d)
                out->value[(n * W + c) * D + d] = a.data()[(n * C + begin + c) * D + d];
    return finish(out, {a.node()}, [N, C, D, W, begin](TensorNode& self) {
        auto& A = *self.parents[0];
        if (!A.requires_grad) return;
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t c = 0; c < W; ++c)
                for (std::size_t d = 0; d < D; ++d)
                    A.grad[(n * C + begin + c) * D + d] += self.grad[(n * W + c) * D + d];
    });
}

Tensor slice_last(const Tensor& a, std::size_t begin, std::size_t end) {
    const std::size_t D = a.shape().back();
    require(begin <= end && end <= D, "slice_last: bad range on " + shape_str(a.shape()));
    const std::size_t rows = a.size() / D, W = end - begin;
    Shape out_shape = a.shape();
    out_shape.back() = W;
    auto out = make_node(out_shape, "slice_last");
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t d = 0; d < W; ++d)
            out->value[r * W + d] = a.data()[r * D + begin + d];
    return finish(out, {a.node()}, [rows, D, W, begin](TensorNode& self) {
        auto& A = *self.parents[0];
        if (!A.requires_grad) return;
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t d = 0; d < W; ++d)
                A.grad[r * D + begin + d] += self.grad[r * W + d];
    });
}

Tensor concat0(const std::vector<Tensor>& parts) {
    require(!parts.empty(), "concat0: no parts");
    const auto rank = parts[0].rank();
    require(rank == 1 || rank == 2, "concat0: expected 1-d or 2-d parts");
    std::size_t rows = 0;
    const std::size_t cols = rank == 2 ? parts[0].dim(1) : 1;
    for (const auto& p : parts) {
        require(p.rank() == rank && (rank == 1 || p.dim(1) == cols),
                "concat0: part shape mismatch " + shape_str(p.shape()));
        rows += p.dim(0);
    }
    Shape out_shape = rank == 2 ? Shape{rows, cols} : Shape{rows};
    auto out = make_node(out_shape, "concat0");
    std::vector<NodePtr> nodes;
    std::size_t off = 0;
    for (const auto& p : parts) {
        std::copy(p.data().begin(), p.data().end(), out->value.begin() + off);
        off += p.size();
        nodes.push_back(p.node());
    }
    return finish(out, std::move(nodes), [](TensorNode& self) {
        std::size_t off = 0;
        for (auto& pn : self.parents) {
            auto& P = *pn;
            if (P.requires_grad)
                for (std::size_t i = 0; i < P.value.size(); ++i) P.grad[i] += self.grad[off + i];
            off += P.value.size();
        }
    });
}

Tensor concat_last(const std::vector<Tensor>& parts) {
    require(!parts.empty(), "concat_last: no parts");
    const Shape lead(parts[0].shape().begin(), parts[0].shape().end() - 1);
    std::size_t D = 0;
    std::vector<std::size_t> widths;
    for (const auto& p : parts) {
        require(Shape(p.shape().begin(), p.shape().end() - 1) == lead,
                "concat_last: leading dims mismatch " + shape_str(p.shape()));
        widths.push_back(p.shape().back());
        D += widths.back();
    }
    const std::size_t rows = shape_numel(lead);
    Shape out_shape = lead;
    out_shape.push_back(D);
    auto out = make_node(out_shape, "concat_last");
    std::vector<NodePtr> nodes;
    std::size_t off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const std::size_t w = widths[k];
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t d = 0; d < w; ++d)
                out->value[r * D + off + d] = parts[k].data()[r * w + d];
        off += w;
        nodes.push_back(parts[k].node());
    }
    return finish(out, std::move(nodes), [rows, D, widths](TensorNode& self) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < self.parents.size(); ++k) {
            auto& P = *self.parents[k];
            const std::size_t w = widths[k];
            if (P.requires_grad)
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t d = 0; d < w; ++d)
                        P.grad[r * w + d] += self.grad[r * D + off + d];
            off += w;
        }
    });
}

Tensor reshape(const Tensor& a, Shape shape) {
    require(shape_numel(shape) == a.size(), "reshape: " + shape_str(a.shape()) + " -> " +
                                                shape_str(shape) + " changes element count");
    auto out = make_node(shape, "reshape");
    out->value = a.data();
    return finish(out, {a.node()}, [](TensorNode& self) {
        auto& A = *self.parents[0];
        if (!A.requires_grad) return;
        for (std::size_t i = 0; i < self.grad.size(); ++i) A.grad[i] += self.grad[i];
    });
}

// ---- model-shaped primitives ------------------------------------------------

Tensor rowwise_dot(const Tensor& e, const Tensor& w) {
    require(e.rank() == 3 && w.rank() == 2 && e.dim(1) == w.dim(0) && e.dim(2) == w.dim(1),
            "rowwise_dot: incompatible " + shape_str(e.shape()) + " . " + shape_str(w.shape()));
    const std::size_t N = e.dim(0), C = e.dim(1), D = e.dim(2);
    auto out = make_node({N, C}, "rowwise_dot");
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
            double acc = 0.0;
            const double* ev = e.data().data() + (n * C + c) * D;
            const double* wv = w.data().data() + c * D;
            for (std::size_t d = 0; d < D; ++d) acc += ev[d] * wv[d];
            out->value[n * C + c] = acc;
        }
    return finish(out, {e.node(), w.node()}, [N, C, D](TensorNode& self) {
        auto& E = *self.parents[0];
        auto& W = *self.parents[1];
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t c = 0; c < C; ++c) {
                const double g = self.grad[n * C + c];
                const std::size_t base = (n * C + c) * D;
                for (std::size_t d = 0; d < D; ++d) {
                    if (E.requires_grad) E.grad[base + d] += g * W.value[c * D + d];
                    if (W.requires_grad) W.grad[c * D + d] += g * E.value[base + d];
                }
            }
    });
}

Tensor l2_normalize_rows(const Tensor& a) {
    require(a.rank() == 2, "l2_normalize_rows: expected 2-d tensor, got " + shape_str(a.shape()));
    const std::size_t R = a.dim(0), D = a.dim(1);
    auto out = make_node(a.shape(), "l2_normalize_rows");
    auto norms = std::make_shared<std::vector<double>>(R);
    for (std::size_t r = 0; r < R; ++r) {
        const double* x = a.data().data() + r * D;
        double n2 = 0.0;
        for (std::size_t d = 0; d < D; ++d) n2 += x[d] * x[d];
        const double n = std::sqrt(n2);
        (*norms)[r] = n;
        double* y = out->value.data() + r * D;
        if (n == 0.0) {
            for (std::size_t d = 0; d < D; ++d) y[d] = 0.0;  // zero rows stay zero
        } else {
            for (std::size_t d = 0; d < D; ++d) y[d] = x[d] / n;
        }
    }
    return finish(out, {a.node()}, [R, D, norms](TensorNode& self) {
        auto& A = *self.parents[0];
        if (!A.requires_grad) return;
        for (std::size_t r = 0; r < R; ++r) {
            const double n = (*norms)[r];
            if (n == 0.0) continue;
            const double* y = self.value.data() + r * D;
            const double* g = self.grad.data() + r * D;
            double dot = 0.0;
            for (std::size_t d = 0; d < D; ++d) dot += y[d] * g[d];
            double* da = A.grad.data() + r * D;
            for (std::size_t d = 0; d < D; ++d) da[d] += (g[d] - y[d] * dot) / n;
        }
    });
}

Tensor gather_rows(const Tensor& a,
                   const std::vector<std::pair<std::size_t, std::size_t>>& idx) {
    require(a.rank() == 3, "gather_rows: expected 3-d tensor, got " + shape_str(a.shape()));
    const std::size_t N = a.dim(0), C = a.dim(1), D = a.dim(2), K = idx.size();
    for (const auto& [n, c] : idx)
        require(n < N && c < C, "gather_rows: index out of range");
    auto out = make_node({K, D}, "gather_rows");
    for (std::size_t k = 0; k < K; ++k) {
        const auto [n, c] = idx[k];
        std::copy_n(a.data().data() + (n * C + c) * D, D, out->value.data() + k * D);
    }
    return finish(out, {a.node()}, [C, D, idx](TensorNode& self) {
        auto& A = *self.parents[0];
        if (!A.requires_grad) return;
        for (std::size_t k = 0; k < idx.size(); ++k) {
            const auto [n, c] = idx[k];
            for (std::size_t d = 0; d < D; ++d)
                A.grad[(n * C + c) * D + d] += self.grad[k * D + d];
        }
    });
}

// ---- backward sweep ---------------------------------------------------------

void backward(const Tensor& loss) {
    require(loss.defined() && loss.size() == 1, "backward: loss must be a scalar tensor");
    TensorNode* root = loss.node().get();
    if (!root->requires_grad) return;

    // iterative post-order DFS; emits a topological order
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> seen;
    struct Frame {
        TensorNode* n;
        std::size_t next;
    };
    std::vector<Frame> stack{{root, 0}};
    seen.insert(root);
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next < f.n->parents.size()) {
            TensorNode* p = f.n->parents[f.next++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(f.n);
            stack.pop_back();
        }
    }

    root->ensure_grad();
    root->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode* n = *it;
        if (!n->backprop) continue;
        for (auto& p : n->parents)
            if (p->requires_grad) p->ensure_grad();
        n->backprop(*n);
    }
}

}  // namespace mlcil
