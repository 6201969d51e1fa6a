#pragma once

// Dense row-major tensors with tape-free reverse-mode differentiation.
//
// Every op result keeps shared ownership of the inputs it needs for its
// backward rule, so the recorded graph is exactly the set of nodes reachable
// from the loss. Nodes are immutable once created; only leaves may have their
// values rewritten (by the optimizer, between steps).
//
// Scalar type is a template parameter: float for training and inference,
// double for gradient checking. Both are explicitly instantiated in
// tensor.cpp.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace moeisr::ad {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;
    bool requires_grad = false;
    std::uint64_t id = 0;
    // Op that produced the node ("leaf" for inputs and parameters).
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> inputs;
    // Reads this node's grad and accumulates into inputs' grads.
    std::function<void(Node&)> backward;
};

template <typename T>
class Tensor {
   public:
    using value_type = T;

    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, T value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false);
    static Tensor scalar(T value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t numel() const { return node_->value.size(); }
    bool requires_grad() const { return node_->requires_grad; }
    bool is_leaf() const { return !node_->backward; }
    std::uint64_t id() const { return node_->id; }

    std::span<const T> data() const { return node_->value; }
    // Leaves only; used by optimizers and initializers.
    std::span<T> mutable_data();
    T item() const;
    T at(std::size_t flat) const { return node_->value.at(flat); }

    // Same values, no graph history.
    Tensor detach() const;
    Tensor clone(bool requires_grad) const;

    template <typename U>
    Tensor<U> cast(bool requires_grad) const {
        std::vector<U> out(node_->value.begin(), node_->value.end());
        return Tensor<U>::from_data(node_->shape, std::move(out), requires_grad);
    }

    const std::shared_ptr<Node<T>>& node() const { return node_; }
    static Tensor wrap(std::shared_ptr<Node<T>> node);

   private:
    std::shared_ptr<Node<T>> node_;
};

/// Gradients of a scalar loss, keyed by leaf id.
template <typename T>
class Gradients {
   public:
    /// Zero tensor of the leaf's shape when the loss does not depend on it.
    Tensor<T> of(const Tensor<T>& leaf) const;
    bool contains(const Tensor<T>& leaf) const { return map_.count(leaf.id()) != 0; }
    std::size_t size() const { return map_.size(); }

    void set(std::uint64_t id, Tensor<T> grad) { map_[id] = std::move(grad); }

   private:
    std::unordered_map<std::uint64_t, Tensor<T>> map_;
};

/// Reverse pass from a scalar loss. Gradients are accumulated into fresh
/// buffers on every call, so repeated calls on one graph agree exactly.
template <typename T>
Gradients<T> backward(const Tensor<T>& loss);

// --- linear algebra ---------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// x[m×n] + bias[n] added to every row.
template <typename T>
Tensor<T> add_row_bias(const Tensor<T>& x, const Tensor<T>& bias);

/// Cross-correlation, stride 1, zero padding. input C_in×H×W,
/// kernel C_out×C_in×kh×kw with odd kh, kw.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, std::size_t padding);

/// conv2d followed by a per-output-channel bias.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                 std::size_t padding);

// --- elementwise ------------------------------------------------------------

template <typename T>
Tensor<T> relu(const Tensor<T>& x);
template <typename T>
Tensor<T> abs(const Tensor<T>& x);
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);
template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T offset);

// --- reductions and normalization -------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);
/// Column sums of a matrix: [m×n] -> [n].
template <typename T>
Tensor<T> sum_rows(const Tensor<T>& x);
/// Softmax over the last axis, max-subtracted.
template <typename T>
Tensor<T> softmax(const Tensor<T>& logits);

// --- layout -----------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);
/// C×H×W -> (H·W)×C, one row per spatial site.
template <typename T>
Tensor<T> channels_last(const Tensor<T>& x);
/// C×H×W -> (H·W)×(9·C). Row r holds the 3×3 neighbourhood of site r,
/// neighbour-major in row-major neighbour order, zero outside the grid.
template <typename T>
Tensor<T> unfold3x3(const Tensor<T>& x);
/// out[i] = x[index[i]] for rows of a matrix.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::size_t> index);
template <typename T>
Tensor<T> concat_cols(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts);
/// out[q] = Σ_j weights[q, j] · values[j][q] for weights Q×J and J value
/// matrices of shape Q×C.
template <typename T>
Tensor<T> mix(const Tensor<T>& weights, const std::vector<Tensor<T>>& values);

}  // namespace moeisr::ad
