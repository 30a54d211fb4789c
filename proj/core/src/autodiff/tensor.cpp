#include "cts/autodiff/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <unordered_set>

#include "cts/error.hpp"

namespace cts::ad {

namespace {

thread_local int no_grad_depth = 0;
std::atomic<std::uint64_t> next_seq{1};

}  // namespace

std::size_t numel_of(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::span<double> TensorImpl::ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    return grad;
}

NoGradGuard::NoGradGuard() { ++no_grad_depth; }
NoGradGuard::~NoGradGuard() { --no_grad_depth; }

bool grad_mode_enabled() { return no_grad_depth == 0; }

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    auto impl = std::make_shared<TensorImpl>();
    impl->data.assign(numel_of(shape), value);
    impl->shape = std::move(shape);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    if (numel_of(shape) != values.size()) {
        throw ShapeError("Tensor::from: shape " + shape_str(shape) + " needs " +
                         std::to_string(numel_of(shape)) + " values, got " + std::to_string(values.size()));
    }
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(values);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return impl_->shape; }

std::size_t Tensor::size(std::ptrdiff_t axis) const {
    const auto n = static_cast<std::ptrdiff_t>(dim());
    if (axis < 0) axis += n;
    if (axis < 0 || axis >= n) throw ShapeError("axis out of range for shape " + shape_str(shape()));
    return shape()[static_cast<std::size_t>(axis)];
}

std::size_t Tensor::numel() const { return impl_->data.size(); }

std::span<const double> Tensor::data() const { return impl_->data; }
std::span<double> Tensor::mutable_data() { return impl_->data; }
std::vector<double> Tensor::to_vector() const { return impl_->data; }

double Tensor::item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }
void Tensor::set_requires_grad(bool value) { impl_->requires_grad = value; }
bool Tensor::has_grad() const { return !impl_->grad.empty(); }
std::span<const double> Tensor::grad() const { return impl_->grad; }
void Tensor::zero_grad() { impl_->grad.clear(); }
bool Tensor::is_leaf() const { return impl_->node == nullptr; }

Tensor Tensor::detach() const {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = impl_->shape;
    impl->data = impl_->data;
    return Tensor(std::move(impl));
}

void Tensor::backward() const {
    if (numel() != 1) {
        throw ShapeError("backward() requires a scalar loss, got shape " + shape_str(shape()));
    }
    if (!impl_->requires_grad) return;

    // Collect every reachable interior tensor.
    std::vector<TensorImpl*> order;
    std::unordered_set<TensorImpl*> seen;
    std::vector<TensorImpl*> stack{impl_.get()};
    seen.insert(impl_.get());
    while (!stack.empty()) {
        TensorImpl* t = stack.back();
        stack.pop_back();
        if (!t->node) continue;
        order.push_back(t);
        for (const auto& in : t->node->inputs) {
            if (in->requires_grad && seen.insert(in.get()).second) stack.push_back(in.get());
        }
    }
    // Reverse creation order is a valid reverse topological order.
    std::sort(order.begin(), order.end(),
              [](const TensorImpl* a, const TensorImpl* b) { return a->node->seq > b->node->seq; });

    for (TensorImpl* t : order) t->grad.assign(t->data.size(), 0.0);
    impl_->grad[0] = 1.0;

    for (TensorImpl* t : order) {
        t->node->backward(*t, t->node->inputs);
    }
}

namespace detail {

namespace {

template <typename Range>
Tensor make_result_impl(Shape shape, std::vector<double> data, const Range& inputs, const char* op,
                        BackwardFn backward) {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    if (grad_mode_enabled()) {
        bool any = false;
        for (const Tensor& t : inputs) any = any || (t.defined() && t.requires_grad());
        if (any) {
            auto node = std::make_shared<Node>();
            node->seq = next_seq.fetch_add(1, std::memory_order_relaxed);
            node->op = op;
            node->inputs.reserve(inputs.size());
            for (const Tensor& t : inputs) node->inputs.push_back(t.impl());
            node->backward = std::move(backward);
            impl->node = std::move(node);
            impl->requires_grad = true;
        }
    }
    return Tensor(std::move(impl));
}

}  // namespace

Tensor make_result(Shape shape, std::vector<double> data, std::initializer_list<Tensor> inputs, const char* op,
                   BackwardFn backward) {
    return make_result_impl(std::move(shape), std::move(data), inputs, op, std::move(backward));
}

Tensor make_result(Shape shape, std::vector<double> data, const std::vector<Tensor>& inputs, const char* op,
                   BackwardFn backward) {
    return make_result_impl(std::move(shape), std::move(data), inputs, op, std::move(backward));
}

}  // namespace detail

}  // namespace cts::ad
