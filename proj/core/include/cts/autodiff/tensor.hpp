#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace cts::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl;

using BackwardFn = std::function<void(TensorImpl& out, std::span<const std::shared_ptr<TensorImpl>> inputs)>;

// One recorded operation. `seq` grows monotonically with creation, so every
// node's inputs carry a smaller seq than the node itself.
struct Node {
    std::uint64_t seq = 0;
    const char* op = "";
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    BackwardFn backward;
};

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until a gradient reaches this tensor
    bool requires_grad = false;
    std::shared_ptr<Node> node;

    std::span<double> ensure_grad();
};

// Disables graph recording on this thread while alive.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

bool grad_mode_enabled();

/// Handle to a dense float64 array that may participate in a reverse-mode
/// differentiation graph. Copies alias the same storage.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    std::size_t dim() const { return shape().size(); }
    std::size_t size(std::ptrdiff_t axis) const;
    std::size_t numel() const;

    std::span<const double> data() const;
    std::span<double> mutable_data();
    std::vector<double> to_vector() const;
    double item() const;

    bool requires_grad() const;
    void set_requires_grad(bool value);
    bool has_grad() const;
    std::span<const double> grad() const;
    void zero_grad();

    /// Same values, no graph history, no gradient tracking.
    Tensor detach() const;

    /// Seeds d(this)/d(this) = 1 and propagates through the recorded graph.
    /// Leaf gradients accumulate across calls; interior gradients are rebuilt.
    void backward() const;

    bool is_leaf() const;
    const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

private:
    std::shared_ptr<TensorImpl> impl_;
};

namespace detail {

// Builds an op result. Records a node when grad mode is on and any input
// requires grad; otherwise the result is a plain constant.
Tensor make_result(Shape shape, std::vector<double> data, std::initializer_list<Tensor> inputs,
                   const char* op, BackwardFn backward);
Tensor make_result(Shape shape, std::vector<double> data, const std::vector<Tensor>& inputs,
                   const char* op, BackwardFn backward);

}  // namespace detail

}  // namespace cts::ad
