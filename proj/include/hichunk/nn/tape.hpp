#pragma once

#include "hichunk/tensor.hpp"

#include <cassert>
#include <deque>
#include <functional>
#include <initializer_list>
#include <stdexcept>
#include <string>

namespace hichunk::nn {

template <typename T>
struct Parameter {
    std::string name;
    Mat<T> value;
    Mat<T> grad;

    void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

struct Var {
    int id = -1;
};

// Reverse-mode tape. Every op appends a node holding its value and, when recording and
// some input needs a gradient, a closure that pushes the node's gradient to its inputs.
// Node storage is a deque so references returned by value() survive later appends.
template <typename T>
class Tape {
public:
    using Backward = std::function<void(Tape&, Var self)>;

    explicit Tape(bool record = true) : record_(record) {}

    bool recording() const { return record_; }

    Var constant(Mat<T> v) { return append(std::move(v), false, nullptr, {}); }

    Var param(Parameter<T>& p) {
        Var v = append(p.value, record_, nullptr, {});
        nodes_.back().param = &p;
        return v;
    }

    const Mat<T>& value(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).value; }

    bool needs_grad(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).needs_grad; }

    Mat<T>& grad(Var v) {
        auto& n = nodes_.at(static_cast<std::size_t>(v.id));
        if (n.grad.size() == 0) n.grad.setZero(n.value.rows(), n.value.cols());
        return n.grad;
    }

    bool has_grad(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).grad.size() != 0; }

    // Adds an op result. `backward` is kept only if a parent needs a gradient.
    Var emit(Mat<T> value, std::initializer_list<Var> parents, Backward backward) {
        bool needs = false;
        if (record_) {
            for (Var p : parents) needs = needs || this->needs_grad(p);
        }
        return append(std::move(value), needs, needs ? std::move(backward) : nullptr, parents);
    }

    // Seeds d(root)/d(root) = 1 and accumulates parameter gradients into Parameter::grad.
    void backward(Var root) {
        if (!record_) throw std::logic_error("backward on a non-recording tape");
        auto& r = nodes_.at(static_cast<std::size_t>(root.id));
        if (r.value.size() != 1) throw std::invalid_argument("backward root must be a scalar");
        grad(root).setOnes();
        for (int i = root.id; i >= 0; --i) {
            auto& n = nodes_[static_cast<std::size_t>(i)];
            if (!n.needs_grad || n.grad.size() == 0) continue;
            if (n.backward) n.backward(*this, Var{i});
            if (n.param != nullptr) {
                if (n.param->grad.size() == 0) n.param->zero_grad();
                n.param->grad += n.grad;
            }
        }
    }

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Mat<T> value;
        Mat<T> grad;
        Backward backward;
        Parameter<T>* param = nullptr;
        bool needs_grad = false;
    };

    Var append(Mat<T> value, bool needs, Backward backward, std::initializer_list<Var>) {
        Node n;
        n.value = std::move(value);
        n.needs_grad = needs;
        n.backward = std::move(backward);
        nodes_.push_back(std::move(n));
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    std::deque<Node> nodes_;
    bool record_;
};

}  // namespace hichunk::nn
