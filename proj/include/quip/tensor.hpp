// Copyright (c) the quip authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Dense row-major float64 tensors with a single-use reverse-mode tape.
//
// A Tape owns every intermediate value of one forward pass. Vars are cheap
// handles into it. Calling Tape::backward() on a scalar Var accumulates
// d(loss)/d(value) into every Parameter that was bound with Tape::parameter()
// and consumes the tape.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace quip::tensor {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  /// Value of a one-element tensor.
  double item() const;

  Tensor reshaped(Shape shape) const;
  void fill(double value);
  bool all_finite() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// A learnable tensor with its accumulated gradient.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string name, Tensor value);

  void zero_grad();
  std::size_t size() const { return value.size(); }
};

struct AdamState {
  Tensor first_moment;
  Tensor second_moment;
  std::uint64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  AdamState() = default;
  explicit AdamState(const Shape& shape) : first_moment(shape), second_moment(shape) {}
};

/// One bias-corrected ADAM update of `param` from its current gradient.
/// The gradient is left untouched. Throws NumericError on a non-finite
/// gradient entry.
void adam_step(Parameter& param, AdamState& state, double lr);

/// ADAM over a fixed list of parameters.
class Adam {
 public:
  explicit Adam(std::vector<Parameter*> params, double beta1 = 0.9, double beta2 = 0.999,
                double epsilon = 1e-8);

  void step(double lr);
  void zero_grad();
  const std::vector<Parameter*>& params() const { return params_; }
  const std::vector<AdamState>& states() const { return states_; }

 private:
  std::vector<Parameter*> params_;
  std::vector<AdamState> states_;
};

enum class OpKind {
  leaf,
  add,
  sub,
  mul,
  scale,
  matmul,
  transpose,
  relu,
  abs,
  square,
  mean,
  sum,
  sum_axis,
  concat,
  slice,
  reshape,
  conv2d,
  scatter_mean,
};

std::string_view op_name(OpKind kind);

enum class Padding { zero, replicate };

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  Tape* tape() const { return tape_; }
  std::uint32_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

/// Destination map for scatter_mean: element e of the flattened input lands
/// in output slot `index[e]`; each output slot is divided by its number of
/// contributions (slots with no contribution stay 0).
struct ScatterPlan {
  std::vector<std::uint32_t> index;
  std::vector<double> inverse_count;
  std::size_t output_size = 0;

  static ScatterPlan build(std::vector<std::uint32_t> index, std::size_t output_size);
};

class Tape {
 public:
  /// Receives the gradient of the loss w.r.t. the node's value and adds the
  /// corresponding contributions into the inputs' grad() buffers.
  using Backprop = std::function<void(Tape&, std::span<const double>)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Binds a parameter: backward() accumulates into `param.grad`.
  Var parameter(Parameter& param);

  /// Records an op result. `backprop` is only kept when some input requires
  /// a gradient. Used by the op implementations.
  Var record(OpKind kind, std::span<const Var> inputs, Tensor value, Backprop backprop);

  /// Reverse pass from a scalar loss. The tape cannot be used afterwards.
  void backward(Var loss);

  bool consumed() const { return consumed_; }
  std::size_t node_count() const { return nodes_.size(); }
  const Tensor& value(std::uint32_t id) const { return nodes_.at(id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id()).requires_grad; }

  /// Gradient buffer of a node, allocated (zeroed) on first access.
  std::span<double> grad(std::uint32_t id);

 private:
  struct Node {
    OpKind kind = OpKind::leaf;
    Tensor value;
    std::vector<double> grad;
    bool requires_grad = false;
    Parameter* param = nullptr;
    Backprop backprop;
  };

  Var push(Node node);

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

// Element-wise binary ops. `b` must have the shape of `a` or a proper
// suffix of it, in which case it is repeated over the leading axes.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
/// x times a one-element tensor.
Var scale(Var x, Var s);
/// [m,k]x[k,p] -> [m,p]; [m,k]x[k] -> [m].
Var matmul(Var a, Var b);
Var transpose(Var a);
Var relu(Var x);
Var abs(Var x);
Var square(Var x);
Var mean(Var x);
Var sum(Var x);
/// Sum over one axis, which is removed from the shape.
Var sum_axis(Var x, std::size_t axis);
Var concat(std::span<const Var> parts, std::size_t axis);
Var slice(Var x, std::size_t axis, std::size_t begin, std::size_t end);
Var reshape(Var x, Shape shape);
/// 'Same'-size 2D convolution (cross-correlation).
/// x: [N,Cin,H,W], kernel: [Cout,Cin,kh,kw] with odd kh,kw, bias: [Cout] or
/// an invalid Var for no bias.
Var conv2d(Var x, Var kernel, Var bias, Padding padding = Padding::zero);
/// Output is 1-D of size plan.output_size.
Var scatter_mean(Var x, std::shared_ptr<const ScatterPlan> plan);

}  // namespace quip::tensor
