// Copyright (c) 2026 the echodiff authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "echodiff/errors.hpp"
#include "echodiff/rng.hpp"

namespace echodiff {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (auto e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

template <typename T>
class OpGraph;

template <typename T>
using GraphPtr = std::shared_ptr<OpGraph<T>>;

/// Value storage shared between tensor handles and the adjoint tape.
/// Immutable after creation except for `grad`.
template <typename T>
struct TensorImpl {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;      // empty until a backward pass touches it
    bool needs_grad = false;  // leaves: user flag; interiors: derived

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }

    /// Lazily allocates the gradient buffer and adds `g` into it.
    void accumulate(std::span<const T> g) {
        if (grad.empty()) grad.assign(data.size(), T(0));
        for (std::size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
    }

    std::vector<T>& grad_buffer() {
        if (grad.empty()) grad.assign(data.size(), T(0));
        return grad;
    }
};

/// Ordered record of executed primitive operations. Replaying adjoints visits
/// them in exact reverse execution order. Confined to one worker.
template <typename T>
class OpGraph {
public:
    /// When set, every recorded op validates its output for finiteness and
    /// throws NumericError naming the op. Used by the gradient checker.
    bool check_finite = false;

    void record(const char* op_name, std::function<void()> adjoint) {
        records_.push_back(Record{op_name, std::move(adjoint)});
    }

    std::size_t size() const { return records_.size(); }
    bool consumed() const { return consumed_; }

    /// Drops every recorded adjoint together with the value references the
    /// closures hold.
    void clear() {
        records_.clear();
        records_.shrink_to_fit();
        consumed_ = false;
    }

    void run_backward_from(TensorImpl<T>& loss_impl) {
        if (consumed_) {
            throw UsageError("backward: graph already consumed; re-run the forward pass first");
        }
        consumed_ = true;
        loss_impl.grad.assign(1, T(1));
        for (auto it = records_.rbegin(); it != records_.rend(); ++it) it->adjoint();
    }

private:
    struct Record {
        const char* op;
        std::function<void()> adjoint;
    };
    std::vector<Record> records_;
    bool consumed_ = false;
};

template <typename T>
GraphPtr<T> make_graph() {
    return std::make_shared<OpGraph<T>>();
}

/// N-dimensional array handle. Copying a Tensor aliases the same storage;
/// the value is immutable after creation except for its grad field.
template <typename T>
class Tensor {
public:
    Tensor() = default;

    Tensor(Shape shape, std::vector<T> data) {
        for (auto e : shape) {
            if (e <= 0) throw UsageError("tensor: non-positive extent in shape " + shape_str(shape));
        }
        if (shape_numel(shape) != static_cast<std::int64_t>(data.size())) {
            throw UsageError("tensor: shape " + shape_str(shape) + " does not match data length " +
                             std::to_string(data.size()));
        }
        impl_ = std::make_shared<TensorImpl<T>>();
        impl_->shape = std::move(shape);
        impl_->data = std::move(data);
    }

    static Tensor zeros(Shape shape) {
        auto n = shape_numel(shape);
        return Tensor(std::move(shape), std::vector<T>(static_cast<std::size_t>(n), T(0)));
    }

    static Tensor full(Shape shape, T value) {
        auto n = shape_numel(shape);
        return Tensor(std::move(shape), std::vector<T>(static_cast<std::size_t>(n), value));
    }

    static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0) {
        auto n = shape_numel(shape);
        std::vector<T> d(static_cast<std::size_t>(n));
        for (auto& v : d) v = static_cast<T>(rng.normal() * stddev);
        return Tensor(std::move(shape), std::move(d));
    }

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    std::int64_t numel() const { return impl_->numel(); }

    std::span<const T> data() const { return impl_->data; }
    std::span<T> mutable_data() { return impl_->data; }

    bool requires_grad() const { return impl_ && impl_->needs_grad; }
    Tensor& set_requires_grad(bool v) {
        impl_->needs_grad = v;
        return *this;
    }

    bool has_grad() const { return impl_ && !impl_->grad.empty(); }
    std::span<const T> grad() const { return impl_->grad; }
    void zero_grad() {
        if (impl_) impl_->grad.clear();
    }

    T item() const {
        if (numel() != 1) throw UsageError("item: tensor of shape " + shape_str(shape()) + " is not scalar");
        return impl_->data[0];
    }

    /// Same storage, attached to a recording graph. Ops executed on the
    /// result (or anything derived from it) register adjoints on `g`.
    Tensor attached(GraphPtr<T> g) const {
        Tensor t = *this;
        t.graph_ = std::move(g);
        return t;
    }

    /// Value copy that participates in no graph and requires no gradient.
    Tensor detached() const {
        Tensor t(impl_->shape, impl_->data);
        return t;
    }

    const GraphPtr<T>& graph() const { return graph_; }

    std::shared_ptr<TensorImpl<T>> impl() const { return impl_; }

    /// Internal: wraps an op result computed by the primitive kernels.
    static Tensor make_result(Shape shape, std::vector<T> data, GraphPtr<T> graph, bool needs_grad) {
        Tensor t(std::move(shape), std::move(data));
        t.graph_ = std::move(graph);
        t.impl_->needs_grad = needs_grad;
        return t;
    }

private:
    std::shared_ptr<TensorImpl<T>> impl_;
    GraphPtr<T> graph_;
};

/// Propagates d(loss)/d(leaf) into the grad field of every tensor with
/// needs_grad that participated in producing the scalar `loss`.
template <typename T>
void backward(const Tensor<T>& loss) {
    if (loss.numel() != 1) {
        throw UsageError("backward: loss of shape " + shape_str(loss.shape()) + " is not scalar");
    }
    if (!loss.graph()) {
        throw UsageError("backward: loss was not produced through recorded operations");
    }
    loss.graph()->run_backward_from(*loss.impl());
}

}  // namespace echodiff
