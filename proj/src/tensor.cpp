#include "moeisr/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "moeisr/errors.hpp"

namespace moeisr::ad {

namespace {

std::atomic<std::uint64_t> next_node_id{1};

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <typename T>
std::shared_ptr<Node<T>> new_node(Shape shape, std::vector<T> value) {
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    node->id = next_node_id.fetch_add(1, std::memory_order_relaxed);
    return node;
}

// Records `inputs` and `rule` only when some input is differentiable.
template <typename T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> value,
                      std::vector<std::shared_ptr<Node<T>>> inputs,
                      std::function<void(Node<T>&)> rule) {
    auto node = new_node<T>(std::move(shape), std::move(value));
    node->op = op;
    const bool needs = std::any_of(inputs.begin(), inputs.end(),
                                   [](const auto& in) { return in->requires_grad; });
    if (needs) {
        node->requires_grad = true;
        node->inputs = std::move(inputs);
        node->backward = std::move(rule);
    }
    return Tensor<T>::wrap(std::move(node));
}

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
    if (a != b) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
                             shape_str(b));
    }
}

void require_rank(const Shape& s, std::size_t rank, const char* op) {
    if (s.size() != rank) {
        throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                             ", got " + shape_str(s));
    }
}

bool is_scalar(const Shape& s) { return s.empty(); }

// Shared elementwise machinery. `da`/`db` return the local partial
// derivatives given (a, b).
template <typename T, typename F, typename DA, typename DB>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, const char* name, F f, DA da, DB db) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa != sb && !is_scalar(sa) && !is_scalar(sb)) {
        require_same_shape(sa, sb, name);
    }
    const Shape out_shape = is_scalar(sa) ? sb : sa;
    const std::size_t n = shape_numel(out_shape);
    const std::size_t stride_a = is_scalar(sa) && n != 1 ? 0 : 1;
    const std::size_t stride_b = is_scalar(sb) && n != 1 ? 0 : 1;
    std::vector<T> out(n);
    const auto av = a.data();
    const auto bv = b.data();
    for (std::size_t i = 0; i < n; ++i) out[i] = f(av[i * stride_a], bv[i * stride_b]);
    return make_result<T>(name, out_shape, std::move(out), {a.node(), b.node()},
                          [n, stride_a, stride_b, da, db](Node<T>& self) {
                              auto& na = *self.inputs[0];
                              auto& nb = *self.inputs[1];
                              for (std::size_t i = 0; i < n; ++i) {
                                  const T x = na.value[i * stride_a];
                                  const T y = nb.value[i * stride_b];
                                  const T g = self.grad[i];
                                  if (na.requires_grad) na.grad[i * stride_a] += g * da(x, y);
                                  if (nb.requires_grad) nb.grad[i * stride_b] += g * db(x, y);
                              }
                          });
}

template <typename T, typename F, typename DF>
Tensor<T> unary(const Tensor<T>& x, const char* name, F f, DF df) {
    const auto xv = x.data();
    std::vector<T> out(xv.size());
    std::transform(xv.begin(), xv.end(), out.begin(), f);
    return make_result<T>(name, x.shape(), std::move(out), {x.node()}, [df](Node<T>& self) {
        auto& in = *self.inputs[0];
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            in.grad[i] += self.grad[i] * df(in.value[i], self.value[i]);
        }
    });
}

struct ConvGeometry {
    std::size_t c_in, h, w, c_out, kh, kw, pad, h_out, w_out;
    std::size_t col_rows() const { return c_in * kh * kw; }
    std::size_t col_cols() const { return h_out * w_out; }
};

ConvGeometry conv_geometry(const Shape& in, const Shape& k, std::size_t pad) {
    require_rank(in, 3, "conv2d input");
    require_rank(k, 4, "conv2d kernel");
    if (k[1] != in[0]) {
        throw DimensionError("conv2d: kernel " + shape_str(k) + " does not match input " +
                             shape_str(in));
    }
    if (k[2] % 2 == 0 || k[3] % 2 == 0) {
        throw DimensionError("conv2d: kernel extents must be odd, got " + shape_str(k));
    }
    if (k[2] > in[1] + 2 * pad || k[3] > in[2] + 2 * pad) {
        throw DimensionError("conv2d: kernel " + shape_str(k) + " larger than padded input " +
                             shape_str(in) + " with padding " + std::to_string(pad));
    }
    ConvGeometry g{in[0], in[1], in[2], k[0], k[2], k[3], pad, 0, 0};
    g.h_out = g.h + 2 * pad - g.kh + 1;
    g.w_out = g.w + 2 * pad - g.kw + 1;
    return g;
}

template <typename T>
void im2col(const ConvGeometry& g, const T* in, T* col) {
    const std::size_t plane = g.h_out * g.w_out;
    for (std::size_t c = 0; c < g.c_in; ++c) {
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
                T* dst = col + ((c * g.kh + ky) * g.kw + kx) * plane;
                for (std::size_t y = 0; y < g.h_out; ++y) {
                    const std::ptrdiff_t sy = std::ptrdiff_t(y + ky) - std::ptrdiff_t(g.pad);
                    T* row = dst + y * g.w_out;
                    if (sy < 0 || sy >= std::ptrdiff_t(g.h)) {
                        std::fill(row, row + g.w_out, T(0));
                        continue;
                    }
                    const T* src = in + (c * g.h + std::size_t(sy)) * g.w;
                    for (std::size_t x = 0; x < g.w_out; ++x) {
                        const std::ptrdiff_t sx = std::ptrdiff_t(x + kx) - std::ptrdiff_t(g.pad);
                        row[x] = (sx < 0 || sx >= std::ptrdiff_t(g.w)) ? T(0) : src[sx];
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_add(const ConvGeometry& g, const T* col, T* in) {
    const std::size_t plane = g.h_out * g.w_out;
    for (std::size_t c = 0; c < g.c_in; ++c) {
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
                const T* src = col + ((c * g.kh + ky) * g.kw + kx) * plane;
                for (std::size_t y = 0; y < g.h_out; ++y) {
                    const std::ptrdiff_t sy = std::ptrdiff_t(y + ky) - std::ptrdiff_t(g.pad);
                    if (sy < 0 || sy >= std::ptrdiff_t(g.h)) continue;
                    T* dst = in + (c * g.h + std::size_t(sy)) * g.w;
                    const T* row = src + y * g.w_out;
                    for (std::size_t x = 0; x < g.w_out; ++x) {
                        const std::ptrdiff_t sx = std::ptrdiff_t(x + kx) - std::ptrdiff_t(g.pad);
                        if (sx >= 0 && sx < std::ptrdiff_t(g.w)) dst[sx] += row[x];
                    }
                }
            }
        }
    }
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

// --- Tensor -----------------------------------------------------------------

template <typename T>
Tensor<T> Tensor<T>::wrap(std::shared_ptr<Node<T>> node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
    const std::size_t n = shape_numel(shape);
    return from_data(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::from_data(Shape shape, std::vector<T> data, bool requires_grad) {
    for (std::size_t e : shape) {
        if (e == 0) throw DimensionError("tensor extents must be positive: " + shape_str(shape));
    }
    if (shape_numel(shape) != data.size()) {
        throw DimensionError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
    }
    auto node = new_node<T>(std::move(shape), std::move(data));
    node->requires_grad = requires_grad;
    return wrap(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
    return from_data({}, {value}, requires_grad);
}

template <typename T>
std::span<T> Tensor<T>::mutable_data() {
    if (!is_leaf()) throw UsageError("mutable_data: only leaf tensors may be written");
    return node_->value;
}

template <typename T>
T Tensor<T>::item() const {
    if (numel() != 1) throw UsageError("item: tensor " + shape_str(shape()) + " is not a scalar");
    return node_->value[0];
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
    return from_data(node_->shape, node_->value, false);
}

template <typename T>
Tensor<T> Tensor<T>::clone(bool requires_grad) const {
    return from_data(node_->shape, node_->value, requires_grad);
}

template <typename T>
Tensor<T> Gradients<T>::of(const Tensor<T>& leaf) const {
    auto it = map_.find(leaf.id());
    if (it == map_.end()) return Tensor<T>::zeros(leaf.shape());
    return it->second;
}

template <typename T>
Gradients<T> backward(const Tensor<T>& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw UsageError("backward: loss must be a scalar tensor");
    }
    Gradients<T> result;
    if (!loss.requires_grad()) return result;

    // Iterative post-order DFS gives a topological order (inputs first).
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack{{loss.node().get(), 0}};
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node<T>* child = node->inputs[next++].get();
            if (child->requires_grad && seen.insert(child).second) stack.push_back({child, 0});
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (Node<T>* n : order) n->grad.assign(n->value.size(), T(0));
    order.back()->grad[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backward) (*it)->backward(**it);
    }
    for (Node<T>* n : order) {
        if (!n->backward) {
            result.set(n->id, Tensor<T>::from_data(n->shape, std::move(n->grad)));
        }
        n->grad.clear();
        n->grad.shrink_to_fit();
    }
    return result;
}

// --- linear algebra ---------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    }
    const auto m = Eigen::Index(a.dim(0)), k = Eigen::Index(a.dim(1)), n = Eigen::Index(b.dim(1));
    std::vector<T> out(std::size_t(m * n));
    MatMap<T>(out.data(), m, n).noalias() =
        ConstMatMap<T>(a.data().data(), m, k) * ConstMatMap<T>(b.data().data(), k, n);
    return make_result<T>("matmul", {std::size_t(m), std::size_t(n)}, std::move(out), {a.node(), b.node()},
                          [m, k, n](Node<T>& self) {
                              auto& na = *self.inputs[0];
                              auto& nb = *self.inputs[1];
                              ConstMatMap<T> g(self.grad.data(), m, n);
                              if (na.requires_grad) {
                                  MatMap<T>(na.grad.data(), m, k).noalias() +=
                                      g * ConstMatMap<T>(nb.value.data(), k, n).transpose();
                              }
                              if (nb.requires_grad) {
                                  MatMap<T>(nb.grad.data(), k, n).noalias() +=
                                      ConstMatMap<T>(na.value.data(), m, k).transpose() * g;
                              }
                          });
}

template <typename T>
Tensor<T> add_row_bias(const Tensor<T>& x, const Tensor<T>& bias) {
    require_rank(x.shape(), 2, "add_row_bias");
    if (bias.numel() != x.dim(1) || bias.rank() != 1) {
        throw DimensionError("add_row_bias: bias " + shape_str(bias.shape()) +
                             " does not match rows of " + shape_str(x.shape()));
    }
    const std::size_t m = x.dim(0), n = x.dim(1);
    std::vector<T> out(x.data().begin(), x.data().end());
    const auto bv = bias.data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bv[j];
    return make_result<T>("add_row_bias", x.shape(), std::move(out), {x.node(), bias.node()},
                          [m, n](Node<T>& self) {
                              auto& nx = *self.inputs[0];
                              auto& nb = *self.inputs[1];
                              if (nx.requires_grad) {
                                  for (std::size_t i = 0; i < m * n; ++i) nx.grad[i] += self.grad[i];
                              }
                              if (nb.requires_grad) {
                                  for (std::size_t i = 0; i < m; ++i)
                                      for (std::size_t j = 0; j < n; ++j)
                                          nb.grad[j] += self.grad[i * n + j];
                              }
                          });
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, std::size_t padding) {
    const ConvGeometry g = conv_geometry(input.shape(), kernel.shape(), padding);
    const auto rows = Eigen::Index(g.col_rows()), cols = Eigen::Index(g.col_cols());
    const auto co = Eigen::Index(g.c_out);
    std::vector<T> col(std::size_t(rows * cols));
    im2col(g, input.data().data(), col.data());
    std::vector<T> out(std::size_t(co * cols));
    MatMap<T>(out.data(), co, cols).noalias() =
        ConstMatMap<T>(kernel.data().data(), co, rows) * ConstMatMap<T>(col.data(), rows, cols);
    return make_result<T>("conv2d", 
        {g.c_out, g.h_out, g.w_out}, std::move(out), {input.node(), kernel.node()},
        [g, rows, cols, co](Node<T>& self) {
            auto& ni = *self.inputs[0];
            auto& nk = *self.inputs[1];
            ConstMatMap<T> gout(self.grad.data(), co, cols);
            if (nk.requires_grad) {
                std::vector<T> col(std::size_t(rows * cols));
                im2col(g, ni.value.data(), col.data());
                MatMap<T>(nk.grad.data(), co, rows).noalias() +=
                    gout * ConstMatMap<T>(col.data(), rows, cols).transpose();
            }
            if (ni.requires_grad) {
                std::vector<T> gcol(std::size_t(rows * cols));
                MatMap<T>(gcol.data(), rows, cols).noalias() =
                    ConstMatMap<T>(nk.value.data(), co, rows).transpose() * gout;
                col2im_add(g, gcol.data(), ni.grad.data());
            }
        });
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                 std::size_t padding) {
    Tensor<T> y = conv2d(input, kernel, padding);
    if (bias.rank() != 1 || bias.numel() != y.dim(0)) {
        throw DimensionError("conv2d: bias " + shape_str(bias.shape()) + " does not match " +
                             std::to_string(y.dim(0)) + " output channels");
    }
    const std::size_t c = y.dim(0), plane = y.dim(1) * y.dim(2);
    std::vector<T> out(y.data().begin(), y.data().end());
    const auto bv = bias.data();
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < plane; ++i) out[ch * plane + i] += bv[ch];
    return make_result<T>("conv2d", y.shape(), std::move(out), {y.node(), bias.node()},
                          [c, plane](Node<T>& self) {
                              auto& ny = *self.inputs[0];
                              auto& nb = *self.inputs[1];
                              if (ny.requires_grad) {
                                  for (std::size_t i = 0; i < c * plane; ++i)
                                      ny.grad[i] += self.grad[i];
                              }
                              if (nb.requires_grad) {
                                  for (std::size_t ch = 0; ch < c; ++ch) {
                                      T acc = 0;
                                      for (std::size_t i = 0; i < plane; ++i)
                                          acc += self.grad[ch * plane + i];
                                      nb.grad[ch] += acc;
                                  }
                              }
                          });
}

// --- elementwise ------------------------------------------------------------

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    return unary(
        x, "relu", [](T v) { return v > T(0) ? v : T(0); },
        [](T in, T) { return in > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
    return unary(
        x, "abs", [](T v) { return std::abs(v); },
        [](T in, T) { return in > T(0) ? T(1) : (in < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return binary(
        a, b, "add", [](T x, T y) { return x + y; }, [](T, T) { return T(1); },
        [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return binary(
        a, b, "sub", [](T x, T y) { return x - y; }, [](T, T) { return T(1); },
        [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return binary(
        a, b, "mul", [](T x, T y) { return x * y; }, [](T, T y) { return y; },
        [](T x, T) { return x; });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
    return unary(
        x, "scale", [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T offset) {
    return unary(
        x, "add_scalar", [offset](T v) { return v + offset; }, [](T, T) { return T(1); });
}

// --- reductions -------------------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    const auto xv = x.data();
    const T total = std::accumulate(xv.begin(), xv.end(), T(0));
    return make_result<T>("sum", {}, {total}, {x.node()}, [](Node<T>& self) {
        auto& in = *self.inputs[0];
        const T g = self.grad[0];
        for (T& v : in.grad) v += g;
    });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
    return scale(sum(x), T(1) / T(x.numel()));
}

template <typename T>
Tensor<T> sum_rows(const Tensor<T>& x) {
    require_rank(x.shape(), 2, "sum_rows");
    const std::size_t m = x.dim(0), n = x.dim(1);
    std::vector<T> out(n, T(0));
    const auto xv = x.data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j] += xv[i * n + j];
    return make_result<T>("sum_rows", {n}, std::move(out), {x.node()}, [m, n](Node<T>& self) {
        auto& in = *self.inputs[0];
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) in.grad[i * n + j] += self.grad[j];
    });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
    if (logits.rank() == 0) throw DimensionError("softmax: needs at least one axis");
    const std::size_t width = logits.shape().back();
    const std::size_t rows = logits.numel() / width;
    const auto xv = logits.data();
    std::vector<T> out(xv.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* x = xv.data() + r * width;
        T* y = out.data() + r * width;
        const T peak = *std::max_element(x, x + width);
        T total = 0;
        for (std::size_t j = 0; j < width; ++j) total += (y[j] = std::exp(x[j] - peak));
        for (std::size_t j = 0; j < width; ++j) y[j] /= total;
    }
    return make_result<T>("softmax", logits.shape(), std::move(out), {logits.node()},
                          [rows, width](Node<T>& self) {
                              auto& in = *self.inputs[0];
                              for (std::size_t r = 0; r < rows; ++r) {
                                  const T* y = self.value.data() + r * width;
                                  const T* g = self.grad.data() + r * width;
                                  T dot = 0;
                                  for (std::size_t j = 0; j < width; ++j) dot += g[j] * y[j];
                                  for (std::size_t j = 0; j < width; ++j)
                                      in.grad[r * width + j] += y[j] * (g[j] - dot);
                              }
                          });
}

// --- layout -----------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                             shape_str(shape));
    }
    std::vector<T> out(x.data().begin(), x.data().end());
    return make_result<T>("reshape", std::move(shape), std::move(out), {x.node()}, [](Node<T>& self) {
        auto& in = *self.inputs[0];
        for (std::size_t i = 0; i < in.grad.size(); ++i) in.grad[i] += self.grad[i];
    });
}

template <typename T>
Tensor<T> channels_last(const Tensor<T>& x) {
    require_rank(x.shape(), 3, "channels_last");
    const std::size_t c = x.dim(0), plane = x.dim(1) * x.dim(2);
    std::vector<T> out(x.numel());
    const auto xv = x.data();
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < plane; ++i) out[i * c + ch] = xv[ch * plane + i];
    return make_result<T>("channels_last", {plane, c}, std::move(out), {x.node()}, [c, plane](Node<T>& self) {
        auto& in = *self.inputs[0];
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t i = 0; i < plane; ++i) in.grad[ch * plane + i] += self.grad[i * c + ch];
    });
}

template <typename T>
Tensor<T> unfold3x3(const Tensor<T>& x) {
    require_rank(x.shape(), 3, "unfold3x3");
    const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const std::size_t width = 9 * c;
    // Flat source offset per (site, neighbour), or -1 when outside the grid.
    std::vector<std::ptrdiff_t> src(h * w * 9);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t xx = 0; xx < w; ++xx) {
            for (int n = 0; n < 9; ++n) {
                const std::ptrdiff_t sy = std::ptrdiff_t(y) + n / 3 - 1;
                const std::ptrdiff_t sx = std::ptrdiff_t(xx) + n % 3 - 1;
                const bool inside = sy >= 0 && sy < std::ptrdiff_t(h) && sx >= 0 &&
                                    sx < std::ptrdiff_t(w);
                src[(y * w + xx) * 9 + std::size_t(n)] = inside ? sy * std::ptrdiff_t(w) + sx : -1;
            }
        }
    }
    const std::size_t plane = h * w;
    std::vector<T> out(plane * width, T(0));
    const auto xv = x.data();
    for (std::size_t s = 0; s < plane; ++s) {
        for (std::size_t n = 0; n < 9; ++n) {
            const std::ptrdiff_t off = src[s * 9 + n];
            if (off < 0) continue;
            T* dst = out.data() + s * width + n * c;
            for (std::size_t ch = 0; ch < c; ++ch) dst[ch] = xv[ch * plane + std::size_t(off)];
        }
    }
    return make_result<T>("unfold3x3", {plane, width}, std::move(out), {x.node()},
                          [c, plane, width, src = std::move(src)](Node<T>& self) {
                              auto& in = *self.inputs[0];
                              for (std::size_t s = 0; s < plane; ++s) {
                                  for (std::size_t n = 0; n < 9; ++n) {
                                      const std::ptrdiff_t off = src[s * 9 + n];
                                      if (off < 0) continue;
                                      const T* g = self.grad.data() + s * width + n * c;
                                      for (std::size_t ch = 0; ch < c; ++ch)
                                          in.grad[ch * plane + std::size_t(off)] += g[ch];
                                  }
                              }
                          });
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::size_t> index) {
    require_rank(x.shape(), 2, "gather_rows");
    const std::size_t m = x.dim(0), n = x.dim(1), q = index.size();
    if (q == 0) throw DimensionError("gather_rows: empty index");
    std::vector<std::size_t> idx(index.begin(), index.end());
    std::vector<T> out(q * n);
    const auto xv = x.data();
    for (std::size_t i = 0; i < q; ++i) {
        if (idx[i] >= m) {
            throw DimensionError("gather_rows: row " + std::to_string(idx[i]) + " out of range for " +
                                 shape_str(x.shape()));
        }
        std::copy_n(xv.data() + idx[i] * n, n, out.data() + i * n);
    }
    return make_result<T>("gather_rows", {q, n}, std::move(out), {x.node()},
                          [n, idx = std::move(idx)](Node<T>& self) {
                              auto& in = *self.inputs[0];
                              for (std::size_t i = 0; i < idx.size(); ++i) {
                                  T* dst = in.grad.data() + idx[i] * n;
                                  const T* g = self.grad.data() + i * n;
                                  for (std::size_t j = 0; j < n; ++j) dst[j] += g[j];
                              }
                          });
}

template <typename T>
Tensor<T> concat_cols(const Tensor<T>& a, const Tensor<T>& b) {
    require_rank(a.shape(), 2, "concat_cols");
    require_rank(b.shape(), 2, "concat_cols");
    if (a.dim(0) != b.dim(0)) {
        throw DimensionError("concat_cols: row counts differ " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
    const std::size_t m = a.dim(0), na = a.dim(1), nb = b.dim(1), n = na + nb;
    std::vector<T> out(m * n);
    const auto av = a.data();
    const auto bv = b.data();
    for (std::size_t i = 0; i < m; ++i) {
        std::copy_n(av.data() + i * na, na, out.data() + i * n);
        std::copy_n(bv.data() + i * nb, nb, out.data() + i * n + na);
    }
    return make_result<T>("concat_cols", {m, n}, std::move(out), {a.node(), b.node()},
                          [m, na, nb, n](Node<T>& self) {
                              auto& ia = *self.inputs[0];
                              auto& ib = *self.inputs[1];
                              for (std::size_t i = 0; i < m; ++i) {
                                  const T* g = self.grad.data() + i * n;
                                  if (ia.requires_grad)
                                      for (std::size_t j = 0; j < na; ++j) ia.grad[i * na + j] += g[j];
                                  if (ib.requires_grad)
                                      for (std::size_t j = 0; j < nb; ++j)
                                          ib.grad[i * nb + j] += g[na + j];
                              }
                          });
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw DimensionError("concat_rows: no inputs");
    const std::size_t n = parts.front().dim(1);
    std::size_t m = 0;
    std::vector<std::shared_ptr<Node<T>>> inputs;
    for (const auto& p : parts) {
        require_rank(p.shape(), 2, "concat_rows");
        if (p.dim(1) != n) {
            throw DimensionError("concat_rows: column counts differ " +
                                 shape_str(parts.front().shape()) + " vs " + shape_str(p.shape()));
        }
        m += p.dim(0);
        inputs.push_back(p.node());
    }
    std::vector<T> out;
    out.reserve(m * n);
    for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
    return make_result<T>("concat_rows", {m, n}, std::move(out), std::move(inputs), [](Node<T>& self) {
        std::size_t offset = 0;
        for (auto& in : self.inputs) {
            if (in->requires_grad) {
                for (std::size_t i = 0; i < in->grad.size(); ++i) in->grad[i] += self.grad[offset + i];
            }
            offset += in->value.size();
        }
    });
}

template <typename T>
Tensor<T> mix(const Tensor<T>& weights, const std::vector<Tensor<T>>& values) {
    require_rank(weights.shape(), 2, "mix weights");
    const std::size_t q = weights.dim(0), j_count = weights.dim(1);
    if (values.size() != j_count) {
        throw DimensionError("mix: " + std::to_string(values.size()) + " value sets for " +
                             std::to_string(j_count) + " weight columns");
    }
    const std::size_t c = values.front().rank() == 2 ? values.front().dim(1) : 0;
    std::vector<std::shared_ptr<Node<T>>> inputs{weights.node()};
    for (const auto& v : values) {
        if (v.rank() != 2 || v.dim(0) != q || v.dim(1) != c) {
            throw DimensionError("mix: value " + shape_str(v.shape()) + " does not match weights " +
                                 shape_str(weights.shape()));
        }
        inputs.push_back(v.node());
    }
    std::vector<T> out(q * c, T(0));
    const auto wv = weights.data();
    for (std::size_t j = 0; j < j_count; ++j) {
        const auto vv = values[j].data();
        for (std::size_t i = 0; i < q; ++i) {
            const T wij = wv[i * j_count + j];
            for (std::size_t ch = 0; ch < c; ++ch) out[i * c + ch] += wij * vv[i * c + ch];
        }
    }
    return make_result<T>("mix", {q, c}, std::move(out), std::move(inputs),
                          [q, j_count, c](Node<T>& self) {
                              auto& nw = *self.inputs[0];
                              for (std::size_t j = 0; j < j_count; ++j) {
                                  auto& nv = *self.inputs[j + 1];
                                  for (std::size_t i = 0; i < q; ++i) {
                                      const T* g = self.grad.data() + i * c;
                                      const T* v = nv.value.data() + i * c;
                                      if (nw.requires_grad) {
                                          T dot = 0;
                                          for (std::size_t ch = 0; ch < c; ++ch) dot += g[ch] * v[ch];
                                          nw.grad[i * j_count + j] += dot;
                                      }
                                      if (nv.requires_grad) {
                                          const T wij = nw.value[i * j_count + j];
                                          for (std::size_t ch = 0; ch < c; ++ch)
                                              nv.grad[i * c + ch] += wij * g[ch];
                                      }
                                  }
                              }
                          });
}

// --- explicit instantiations -------------------------------------------------

#define MOEISR_INSTANTIATE(T)                                                                    \
    template class Tensor<T>;                                                                    \
    template class Gradients<T>;                                                                 \
    template Gradients<T> backward(const Tensor<T>&);                                            \
    template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                               \
    template Tensor<T> add_row_bias(const Tensor<T>&, const Tensor<T>&);                         \
    template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, std::size_t);                  \
    template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t); \
    template Tensor<T> relu(const Tensor<T>&);                                                   \
    template Tensor<T> abs(const Tensor<T>&);                                                    \
    template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                  \
    template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                  \
    template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                  \
    template Tensor<T> scale(const Tensor<T>&, T);                                               \
    template Tensor<T> add_scalar(const Tensor<T>&, T);                                          \
    template Tensor<T> sum(const Tensor<T>&);                                                    \
    template Tensor<T> mean(const Tensor<T>&);                                                   \
    template Tensor<T> sum_rows(const Tensor<T>&);                                               \
    template Tensor<T> softmax(const Tensor<T>&);                                                \
    template Tensor<T> reshape(const Tensor<T>&, Shape);                                         \
    template Tensor<T> channels_last(const Tensor<T>&);                                          \
    template Tensor<T> unfold3x3(const Tensor<T>&);                                              \
    template Tensor<T> gather_rows(const Tensor<T>&, std::span<const std::size_t>);              \
    template Tensor<T> concat_cols(const Tensor<T>&, const Tensor<T>&);                          \
    template Tensor<T> concat_rows(const std::vector<Tensor<T>>&);                               \
    template Tensor<T> mix(const Tensor<T>&, const std::vector<Tensor<T>>&);

MOEISR_INSTANTIATE(float)
MOEISR_INSTANTIATE(double)

#undef MOEISR_INSTANTIATE

}  // namespace moeisr::ad
