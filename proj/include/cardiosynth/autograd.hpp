#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <vector>

#include "cardiosynth/tensor.hpp"

// Reverse-mode differentiation over a Wengert list. Every op appends a node
// holding its value and a closure that pushes the node's gradient to its
// inputs. Nodes that do not depend on a gradient-requiring leaf carry no
// closure, so constant subgraphs cost nothing on the backward pass.
namespace cardiosynth::ag {

class Tape;

struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    bool requires_grad() const;
};

class Tape {
public:
    using Backward = std::function<void(Tape&, std::size_t self)>;

    Var leaf(Tensor value, bool requires_grad);
    Var constant(Tensor value) { return leaf(std::move(value), false); }

    /// Appends an op result. `backward` is dropped when no input needs a gradient.
    Var push(Tensor value, std::initializer_list<Var> inputs, Backward backward);

    const Tensor& value(std::size_t id) const { return nodes_[id].value; }
    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

    /// Gradient of the last backward() root wrt node `id`; empty when unreached.
    const Tensor& grad(std::size_t id) const { return nodes_[id].grad; }
    const Tensor& grad(Var v) const { return grad(v.id); }

    /// Gradient accumulator for an input, allocated on first use.
    Tensor& grad_accumulator(std::size_t id);

    /// Seeds d(root)/d(root) = 1 for a single-element root and propagates.
    void backward(Var root);

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        Backward backward;
    };
    std::deque<Node> nodes_;  // stable references: values stay valid as the tape grows
};

// Elementwise arithmetic. Shapes must match exactly except where noted.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var neg(Var a);
Var square(Var a);
Var exp(Var a);
Var tanh(Var a);
Var relu(Var a);
Var leaky_relu(Var a, double slope);

Var reshape(Var a, Shape shape);

// Reductions to a one-element tensor.
Var sum(Var a);
Var mean(Var a);
/// mean(|a - b|)
Var mean_abs_diff(Var a, Var b);

/// x: [N,Cin,H,W], w: [Cout,Cin,k,k], b: [Cout].
Var conv2d(Var x, Var w, Var b, int stride, int pad);
Var conv2d_nobias(Var x, Var w, int stride, int pad);

/// x: [N,in], w: [out,in], b: [out].
Var linear(Var x, Var w, Var b);

struct NormStats {
    std::vector<double> mean;
    std::vector<double> var;
};

/// Per-channel normalisation with statistics over (N,H,W), population variance.
Var batch_norm(Var x, double eps, NormStats* stats = nullptr);
/// Per-channel normalisation with fixed statistics.
Var fixed_norm(Var x, const std::vector<double>& mean, const std::vector<double>& var, double eps);
/// Per-sample, per-channel normalisation over (H,W).
Var instance_norm(Var x, double eps);

Var upsample_nearest2x(Var x);
/// 2x2 average pool, stride 2; odd trailing rows/columns are dropped.
Var avg_pool2x(Var x);
Var concat_channels(Var a, Var b);

/// mu + exp(0.5 * logvar) * noise, with noise held constant.
Var reparameterize(Var mu, Var logvar, const Tensor& noise);

}  // namespace cardiosynth::ag
