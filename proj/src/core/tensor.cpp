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

#include "quip/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "quip/error.hpp"

namespace quip::tensor {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMatrix = Eigen::Map<RowMatrix>;
using ConstMapMatrix = Eigen::Map<const RowMatrix>;

[[noreturn]] void shape_error(OpKind kind, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op_name(kind)) + ": incompatible shapes " + to_string(a) + " and " +
                   to_string(b));
}

[[noreturn]] void shape_error(OpKind kind, const Shape& a, const std::string& why) {
  throw ShapeError(std::string(op_name(kind)) + ": " + why + " (shape " + to_string(a) + ")");
}

Tape& tape_of(OpKind kind, Var a) {
  if (!a.valid()) throw ArgumentError(std::string(op_name(kind)) + ": invalid operand");
  return *a.tape();
}

Tape& tape_of(OpKind kind, Var a, Var b) {
  Tape& t = tape_of(kind, a);
  if (b.tape() != &t) throw ArgumentError(std::string(op_name(kind)) + ": operands on different tapes");
  return t;
}

// Size of the block `b` is repeated over when broadcast against `a`;
// throws unless b's shape equals a's or is a proper suffix of it.
std::size_t broadcast_block(OpKind kind, const Shape& a, const Shape& b) {
  if (b.size() > a.size() || !std::equal(b.rbegin(), b.rend(), a.rbegin())) shape_error(kind, a, b);
  return numel(b);
}

}  // namespace

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::leaf: return "leaf";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::scale: return "scale";
    case OpKind::matmul: return "matmul";
    case OpKind::transpose: return "transpose";
    case OpKind::relu: return "relu";
    case OpKind::abs: return "abs";
    case OpKind::square: return "square";
    case OpKind::mean: return "mean";
    case OpKind::sum: return "sum";
    case OpKind::sum_axis: return "sum_axis";
    case OpKind::concat: return "concat";
    case OpKind::slice: return "slice";
    case OpKind::reshape: return "reshape";
    case OpKind::conv2d: return "conv2d";
    case OpKind::scatter_mean: return "scatter_mean";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(numel(shape_), fill) {
  for (auto e : shape_)
    if (e == 0) throw ShapeError("tensor extents must be positive, got " + to_string(shape_));
}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), data_(std::move(values)) {
  for (auto e : shape_)
    if (e == 0) throw ShapeError("tensor extents must be positive, got " + to_string(shape_));
  if (numel(shape_) != data_.size())
    throw ShapeError("tensor of shape " + to_string(shape_) + " cannot hold " + std::to_string(data_.size()) +
                     " values");
}

Tensor Tensor::scalar(double value) { return Tensor({1}, std::vector<double>{value}); }

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape_));
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (numel(shape) != data_.size())
    throw ShapeError("reshape " + to_string(shape_) + " -> " + to_string(shape));
  return Tensor(std::move(shape), data_);
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

// ---------------------------------------------------------------------------
// Parameter / ADAM

Parameter::Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

void Parameter::zero_grad() {
  if (grad.shape() != value.shape())
    grad = Tensor(value.shape());
  else
    grad.fill(0.0);
}

void adam_step(Parameter& param, AdamState& state, double lr) {
  if (param.grad.shape() != param.value.shape())
    throw ShapeError("adam: gradient of '" + param.name + "' has shape " + to_string(param.grad.shape()) +
                     ", value has " + to_string(param.value.shape()));
  if (state.first_moment.shape() != param.value.shape()) {
    state.first_moment = Tensor(param.value.shape());
    state.second_moment = Tensor(param.value.shape());
  }
  if (!param.grad.all_finite()) throw NumericError("adam: non-finite gradient in parameter '" + param.name + "'");

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  auto g = param.grad.data();
  auto m = state.first_moment.data();
  auto v = state.second_moment.data();
  auto x = param.value.data();
  for (std::size_t i = 0; i < x.size(); ++i) {
    m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
    v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
    const double mhat = m[i] / c1;
    const double vhat = v[i] / c2;
    x[i] -= lr * mhat / (std::sqrt(vhat) + state.epsilon);
  }
}

Adam::Adam(std::vector<Parameter*> params, double beta1, double beta2, double epsilon)
    : params_(std::move(params)) {
  states_.reserve(params_.size());
  for (auto* p : params_) {
    AdamState s(p->value.shape());
    s.beta1 = beta1;
    s.beta2 = beta2;
    s.epsilon = epsilon;
    states_.push_back(std::move(s));
  }
}

void Adam::step(double lr) {
  for (std::size_t i = 0; i < params_.size(); ++i) adam_step(*params_[i], states_[i], lr);
}

void Adam::zero_grad() {
  for (auto* p : params_) p->zero_grad();
}

// ---------------------------------------------------------------------------
// Tape

const Tensor& Var::value() const {
  if (!tape_) throw ArgumentError("value() of an invalid Var");
  return tape_->value(id_);
}

ScatterPlan ScatterPlan::build(std::vector<std::uint32_t> index, std::size_t output_size) {
  ScatterPlan plan;
  plan.output_size = output_size;
  std::vector<std::uint32_t> counts(output_size, 0);
  for (auto i : index) {
    if (i >= output_size) throw ArgumentError("scatter plan index out of range");
    ++counts[i];
  }
  plan.inverse_count.resize(output_size);
  for (std::size_t i = 0; i < output_size; ++i) plan.inverse_count[i] = counts[i] ? 1.0 / counts[i] : 0.0;
  plan.index = std::move(index);
  return plan;
}

Var Tape::push(Node node) {
  if (consumed_) throw ArgumentError("tape already consumed by backward()");
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::parameter(Parameter& param) {
  Node n;
  n.value = param.value;
  n.requires_grad = true;
  n.param = &param;
  return push(std::move(n));
}

Var Tape::record(OpKind kind, std::span<const Var> inputs, Tensor value, Backprop backprop) {
  Node n;
  n.kind = kind;
  n.value = std::move(value);
  for (const Var& in : inputs) {
    if (in.valid() && in.tape() != this)
      throw ArgumentError(std::string(op_name(kind)) + ": operand recorded on another tape");
    if (in.valid() && nodes_.at(in.id()).requires_grad) n.requires_grad = true;
  }
  if (n.requires_grad) n.backprop = std::move(backprop);
  return push(std::move(n));
}

std::span<double> Tape::grad(std::uint32_t id) {
  Node& n = nodes_.at(id);
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape() != this) throw ArgumentError("backward: loss is not recorded on this tape");
  if (consumed_) throw ArgumentError("backward: tape already consumed");
  if (nodes_.at(loss.id()).value.size() != 1)
    throw ShapeError("backward: loss must be a scalar, got shape " + to_string(nodes_[loss.id()].value.shape()));
  consumed_ = true;
  grad(loss.id())[0] = 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.backprop) {
      // Moved out so the closure's captures die with this step.
      auto fn = std::move(n.backprop);
      fn(*this, nodes_[i].grad);
    }
    if (n.param) {
      Parameter& p = *n.param;
      if (p.grad.shape() != p.value.shape()) p.grad = Tensor(p.value.shape());
      auto dst = p.grad.data();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += n.grad[k];
    }
    std::vector<double>().swap(n.grad);
  }
}

// ---------------------------------------------------------------------------
// Ops

namespace {

enum class Binary { add, sub, mul };

Var binary(OpKind kind, Binary op, Var a, Var b) {
  Tape& t = tape_of(kind, a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const std::size_t block = broadcast_block(kind, av.shape(), bv.shape());
  Tensor out(av.shape());
  auto o = out.data();
  auto x = av.data();
  auto y = bv.data();
  for (std::size_t i = 0, j = 0; i < o.size(); ++i, j = (j + 1 == block ? 0 : j + 1)) {
    switch (op) {
      case Binary::add: o[i] = x[i] + y[j]; break;
      case Binary::sub: o[i] = x[i] - y[j]; break;
      case Binary::mul: o[i] = x[i] * y[j]; break;
    }
  }
  const auto ia = a.id(), ib = b.id();
  const bool ga = t.requires_grad(a), gb = t.requires_grad(b);
  Var inputs[] = {a, b};
  return t.record(kind, inputs, std::move(out), [=](Tape& tp, std::span<const double> g) {
    if (ga) {
      auto da = tp.grad(ia);
      if (op == Binary::mul) {
        auto y = tp.value(ib).data();
        for (std::size_t i = 0, j = 0; i < g.size(); ++i, j = (j + 1 == block ? 0 : j + 1)) da[i] += g[i] * y[j];
      } else {
        for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
      }
    }
    if (gb) {
      auto db = tp.grad(ib);
      if (op == Binary::mul) {
        auto x = tp.value(ia).data();
        for (std::size_t i = 0, j = 0; i < g.size(); ++i, j = (j + 1 == block ? 0 : j + 1)) db[j] += g[i] * x[i];
      } else {
        const double sign = op == Binary::sub ? -1.0 : 1.0;
        for (std::size_t i = 0, j = 0; i < g.size(); ++i, j = (j + 1 == block ? 0 : j + 1)) db[j] += sign * g[i];
      }
    }
  });
}

enum class Unary { relu, abs, square };

Var unary(OpKind kind, Unary op, Var x) {
  Tape& t = tape_of(kind, x);
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  auto o = out.data();
  auto v = xv.data();
  for (std::size_t i = 0; i < o.size(); ++i) {
    switch (op) {
      case Unary::relu: o[i] = v[i] > 0.0 ? v[i] : 0.0; break;
      case Unary::abs: o[i] = std::abs(v[i]); break;
      case Unary::square: o[i] = v[i] * v[i]; break;
    }
  }
  const auto ix = x.id();
  Var inputs[] = {x};
  return t.record(kind, inputs, std::move(out), [=](Tape& tp, std::span<const double> g) {
    auto v = tp.value(ix).data();
    auto dx = tp.grad(ix);
    for (std::size_t i = 0; i < g.size(); ++i) {
      switch (op) {
        case Unary::relu: dx[i] += v[i] > 0.0 ? g[i] : 0.0; break;
        case Unary::abs: dx[i] += v[i] > 0.0 ? g[i] : (v[i] < 0.0 ? -g[i] : 0.0); break;
        case Unary::square: dx[i] += 2.0 * v[i] * g[i]; break;
      }
    }
  });
}

}  // namespace

Var add(Var a, Var b) { return binary(OpKind::add, Binary::add, a, b); }
Var sub(Var a, Var b) { return binary(OpKind::sub, Binary::sub, a, b); }
Var mul(Var a, Var b) { return binary(OpKind::mul, Binary::mul, a, b); }
Var relu(Var x) { return unary(OpKind::relu, Unary::relu, x); }
Var abs(Var x) { return unary(OpKind::abs, Unary::abs, x); }
Var square(Var x) { return unary(OpKind::square, Unary::square, x); }

Var scale(Var x, Var s) {
  Tape& t = tape_of(OpKind::scale, x, s);
  if (s.value().size() != 1) shape_error(OpKind::scale, x.shape(), s.shape());
  const double factor = s.value()[0];
  Tensor out(x.value().shape());
  auto o = out.data();
  auto v = x.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = v[i] * factor;
  const auto ix = x.id(), is = s.id();
  const bool gx = t.requires_grad(x), gs = t.requires_grad(s);
  Var inputs[] = {x, s};
  return t.record(OpKind::scale, inputs, std::move(out), [=](Tape& tp, std::span<const double> g) {
    if (gx) {
      auto dx = tp.grad(ix);
      for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * factor;
    }
    if (gs) {
      auto v = tp.value(ix).data();
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * v[i];
      tp.grad(is)[0] += acc;
    }
  });
}

Var matmul(Var a, Var b) {
  Tape& t = tape_of(OpKind::matmul, a, b);
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 2 || (sb.size() != 1 && sb.size() != 2) || sa[1] != sb[0]) shape_error(OpKind::matmul, sa, sb);
  const std::size_t m = sa[0], k = sa[1], p = sb.size() == 2 ? sb[1] : 1;
  Tensor out(sb.size() == 2 ? Shape{m, p} : Shape{m});
  {
    ConstMapMatrix A(a.value().data().data(), m, k);
    ConstMapMatrix B(b.value().data().data(), k, p);
    MapMatrix C(out.data().data(), m, p);
    C.noalias() = A * B;
  }
  const auto ia = a.id(), ib = b.id();
  const bool ga = t.requires_grad(a), gb = t.requires_grad(b);
  Var inputs[] = {a, b};
  return t.record(OpKind::matmul, inputs, std::move(out), [=](Tape& tp, std::span<const double> g) {
    ConstMapMatrix G(g.data(), m, p);
    if (ga) {
      ConstMapMatrix B(tp.value(ib).data().data(), k, p);
      MapMatrix dA(tp.grad(ia).data(), m, k);
      dA.noalias() += G * B.transpose();
    }
    if (gb) {
      ConstMapMatrix A(tp.value(ia).data().data(), m, k);
      MapMatrix dB(tp.grad(ib).data(), k, p);
      dB.noalias() += A.transpose() * G;
    }
  });
}

Var transpose(Var a) {
  Tape& t = tape_of(OpKind::transpose, a);
  const Shape& sa = a.shape();
  if (sa.size() != 2) shape_error(OpKind::transpose, sa, "expected a matrix");
  const std::size_t r = sa[0], c = sa[1];
  Tensor out({c, r});
  MapMatrix(out.data().data(), c, r) = ConstMapMatrix(a.value().data().data(), r, c).transpose();
  const auto ia = a.id();
  Var inputs[] = {a};
  return t.record(OpKind::transpose, inputs, std::move(out), [=](Tape& tp, std::span<const double> g) {
    MapMatrix(tp.grad(ia).data(), r, c) += ConstMapMatrix(g.data(), c, r).transpose();
  });
}

Var sum(Var x) {
  Tape& t = tape_of(OpKind::sum, x);
  double acc = 0.0;
  for (double v : x.value().data()) acc += v;
  const auto ix = x.id();
  Var inputs[] = {x};
  return t.record(OpKind::sum, inputs, Tensor::scalar(acc), [=](Tape& tp, std::span<const double> g) {
    for (double& d : tp.grad(ix)) d += g[0];
  });
}

Var mean(Var x) {
  Tape& t = tape_of(OpKind::mean, x);
  const double count = static_cast<double>(x.value().size());
  double acc = 0.0;
  for (double v : x.value().data()) acc += v;
  const auto ix = x.id();
  Var inputs[] = {x};
  return t.record(OpKind::mean, inputs, Tensor::scalar(acc / count), [=](Tape& tp, std::span<const double> g) {
    const double share = g[0] / count;
    for (double& d : tp.grad(ix)) d += share;
  });
}

Var sum_axis(Var x, std::size_t axis) {
  Tape& t = tape_of(OpKind::sum_axis, x);
  const Shape& s = x.shape();
  if (axis >= s.size()) shape_error(OpKind::sum_axis, s, "axis out of range");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  Shape os;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (i != axis) os.push_back(s[i]);
  if (os.empty()) os.push_back(1);
  Tensor out(os);
  auto o = out.data();
  auto v = x.value().data();
  for (std::size_t a = 0; a < outer; ++a)
    for (std::size_t l = 0; l < len; ++l) {
      const double* src = v.data() + (a * len + l) * inner;
      double* dst = o.data() + a * inner;
      for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  const auto ix = x.id();
  Var inputs[] = {x};
  return t.record(OpKind::sum_axis, inputs, std::move(out), [=](Tape& tp, std::span<const double> g) {
    auto dx = tp.grad(ix);
    for (std::size_t a = 0; a < outer; ++a)
      for (std::size_t l = 0; l < len; ++l) {
        double* dst = dx.data() + (a * len + l) * inner;
        const double* src = g.data() + a * inner;
        for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
      }
  });
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw ArgumentError("concat: no operands");
  Tape& t = tape_of(OpKind::concat, parts[0]);
  const Shape base = parts[0].shape();
  if (axis >= base.size()) shape_error(OpKind::concat, base, "axis out of range");
  Shape os = base;
  os[axis] = 0;
  std::vector<std::size_t> lens;
  for (const Var& p : parts) {
    if (p.tape() != &t) throw ArgumentError("concat: operands on different tapes");
    const Shape& s = p.shape();
    bool ok = s.size() == base.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == base[i];
    if (!ok) shape_error(OpKind::concat, base, s);
    lens.push_back(s[axis]);
    os[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= base[i];
  for (std::size_t i = axis + 1; i < base.size(); ++i) inner *= base[i];
  Tensor out(os);
  auto o = out.data();
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto v = parts[k].value().data();
    const std::size_t chunk = lens[k] * inner;
    for (std::size_t a = 0; a < outer; ++a)
      std::copy_n(v.data() + a * chunk, chunk, o.data() + a * os[axis] * inner + offset * inner);
    offset += lens[k];
  }
  std::vector<std::uint32_t> ids;
  for (const Var& p : parts) ids.push_back(p.id());
  const std::size_t total = os[axis];
  return t.record(OpKind::concat, parts, std::move(out), [=](Tape& tp, std::span<const double> g) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const std::size_t chunk = lens[k] * inner;
      auto d = tp.grad(ids[k]);
      for (std::size_t a = 0; a < outer; ++a) {
        const double* src = g.data() + a * total * inner + offset * inner;
        for (std::size_t i = 0; i < chunk; ++i) d[a * chunk + i] += src[i];
      }
      offset += lens[k];
    }
  });
}

Var slice(Var x, std::size_t axis, std::size_t begin, std::size_t end) {
  Tape& t = tape_of(OpKind::slice, x);
  const Shape& s = x.shape();
  if (axis >= s.size() || begin >= end || end > s[axis]) shape_error(OpKind::slice, s, "slice range out of bounds");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis], keep = end - begin;
  Shape os = s;
  os[axis] = keep;
  Tensor out(os);
  auto o = out.data();
  auto v = x.value().data();
  for (std::size_t a = 0; a < outer; ++a)
    std::copy_n(v.data() + (a * len + begin) * inner, keep * inner, o.data() + a * keep * inner);
  const auto ix = x.id();
  Var inputs[] = {x};
  return t.record(OpKind::slice, inputs, std::move(out), [=](Tape& tp, std::span<const double> g) {
    auto d = tp.grad(ix);
    for (std::size_t a = 0; a < outer; ++a)
      for (std::size_t i = 0; i < keep * inner; ++i) d[(a * len + begin) * inner + i] += g[a * keep * inner + i];
  });
}

Var reshape(Var x, Shape shape) {
  Tape& t = tape_of(OpKind::reshape, x);
  if (numel(shape) != x.value().size()) shape_error(OpKind::reshape, x.shape(), shape);
  const auto ix = x.id();
  Var inputs[] = {x};
  return t.record(OpKind::reshape, inputs, x.value().reshaped(std::move(shape)),
                  [=](Tape& tp, std::span<const double> g) {
                    auto d = tp.grad(ix);
                    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
                  });
}

namespace {

// Source index along one axis for a tap at `pos` (may be out of range), or
// -1 when the tap reads zero padding.
inline std::ptrdiff_t pad_index(std::ptrdiff_t pos, std::ptrdiff_t len, Padding padding) {
  if (pos >= 0 && pos < len) return pos;
  if (padding == Padding::zero) return -1;
  return pos < 0 ? 0 : len - 1;
}

}  // namespace

Var conv2d(Var x, Var kernel, Var bias, Padding padding) {
  Tape& t = tape_of(OpKind::conv2d, x, kernel);
  const Shape& sx = x.shape();
  const Shape& sk = kernel.shape();
  if (sx.size() != 4 || sk.size() != 4 || sk[1] != sx[1]) shape_error(OpKind::conv2d, sx, sk);
  if (sk[2] % 2 == 0 || sk[3] % 2 == 0) shape_error(OpKind::conv2d, sk, "kernel extents must be odd");
  const bool has_bias = bias.valid();
  if (has_bias) {
    if (bias.tape() != &t) throw ArgumentError("conv2d: bias on a different tape");
    if (bias.shape() != Shape{sk[0]}) shape_error(OpKind::conv2d, sk, bias.shape());
  }
  const std::ptrdiff_t N = sx[0], Ci = sx[1], H = sx[2], W = sx[3];
  const std::ptrdiff_t Co = sk[0], KH = sk[2], KW = sk[3];
  const std::ptrdiff_t rh = KH / 2, rw = KW / 2;

  // Gather table: for every output pixel and tap, the source pixel offset
  // inside one channel plane (-1 for zero padding). Shared by all n, ci.
  auto table = std::make_shared<std::vector<std::ptrdiff_t>>(H * W * KH * KW);
  for (std::ptrdiff_t r = 0; r < H; ++r)
    for (std::ptrdiff_t c = 0; c < W; ++c)
      for (std::ptrdiff_t i = 0; i < KH; ++i)
        for (std::ptrdiff_t j = 0; j < KW; ++j) {
          const auto sr = pad_index(r + i - rh, H, padding);
          const auto sc = pad_index(c + j - rw, W, padding);
          (*table)[((r * W + c) * KH + i) * KW + j] = (sr < 0 || sc < 0) ? -1 : sr * W + sc;
        }

  const std::ptrdiff_t plane = H * W, taps = KH * KW, rows = Ci * taps;
  // Samples per im2col block: bounds the column buffer.
  const std::ptrdiff_t block = std::max<std::ptrdiff_t>(1, std::min<std::ptrdiff_t>(N, (1 << 21) / (rows * plane)));
  // Column matrix [Ci*taps, nb*plane] of samples [n0, n0+nb).
  auto im2col = [=](const double* in, std::ptrdiff_t n0, std::ptrdiff_t nb, Eigen::MatrixXd& col) {
    col.resize(rows, nb * plane);
    for (std::ptrdiff_t s = 0; s < nb; ++s)
      for (std::ptrdiff_t p = 0; p < plane; ++p) {
        double* dst = col.data() + (s * plane + p) * rows;
        const std::ptrdiff_t* tab = table->data() + p * taps;
        for (std::ptrdiff_t ci = 0; ci < Ci; ++ci) {
          const double* src = in + ((n0 + s) * Ci + ci) * plane;
          for (std::ptrdiff_t q = 0; q < taps; ++q) dst[ci * taps + q] = tab[q] >= 0 ? src[tab[q]] : 0.0;
        }
      }
  };
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  Tensor out({sx[0], sk[0], sx[2], sx[3]});
  {
    auto o = out.data();
    const double* in = x.value().data().data();
    const Eigen::Map<const RowMajor> k(kernel.value().data().data(), Co, rows);
    const double* b = has_bias ? bias.value().data().data() : nullptr;
    Eigen::MatrixXd col;
    Eigen::MatrixXd res;
    for (std::ptrdiff_t n0 = 0; n0 < N; n0 += block) {
      const std::ptrdiff_t nb = std::min(block, N - n0);
      im2col(in, n0, nb, col);
      res.noalias() = k * col;  // [Co, nb*plane]
      for (std::ptrdiff_t s = 0; s < nb; ++s)
        for (std::ptrdiff_t co = 0; co < Co; ++co) {
          double* dst = o.data() + ((n0 + s) * Co + co) * plane;
          const double bc = b ? b[co] : 0.0;
          for (std::ptrdiff_t p = 0; p < plane; ++p) dst[p] = res(co, s * plane + p) + bc;
        }
    }
  }

  const auto ix = x.id(), ik = kernel.id(), ib = has_bias ? bias.id() : 0u;
  const bool gx = t.requires_grad(x), gk = t.requires_grad(kernel), gb = has_bias && t.requires_grad(bias);
  std::vector<Var> inputs{x, kernel};
  if (has_bias) inputs.push_back(bias);
  return t.record(OpKind::conv2d, inputs, std::move(out), [=](Tape& tp, std::span<const double> g) {
    if (gb) {
      auto db = tp.grad(ib);
      for (std::ptrdiff_t n = 0; n < N; ++n)
        for (std::ptrdiff_t co = 0; co < Co; ++co) {
          const double* gg = g.data() + (n * Co + co) * plane;
          double acc = 0.0;
          for (std::ptrdiff_t p = 0; p < plane; ++p) acc += gg[p];
          db[co] += acc;
        }
    }
    if (!gx && !gk) return;
    const double* in = tp.value(ix).data().data();
    const Eigen::Map<const RowMajor> k(tp.value(ik).data().data(), Co, rows);
    Eigen::MatrixXd gmat(Co, 0), col, dcol;
    RowMajor dk_acc = RowMajor::Zero(Co, rows);
    for (std::ptrdiff_t n0 = 0; n0 < N; n0 += block) {
      const std::ptrdiff_t nb = std::min(block, N - n0);
      gmat.resize(Co, nb * plane);
      for (std::ptrdiff_t s = 0; s < nb; ++s)
        for (std::ptrdiff_t co = 0; co < Co; ++co) {
          const double* gg = g.data() + ((n0 + s) * Co + co) * plane;
          for (std::ptrdiff_t p = 0; p < plane; ++p) gmat(co, s * plane + p) = gg[p];
        }
      if (gk) {
        im2col(in, n0, nb, col);
        dk_acc.noalias() += gmat * col.transpose();
      }
      if (gx) {
        dcol.noalias() = k.transpose() * gmat;  // [rows, nb*plane]
        auto dx = tp.grad(ix);
        for (std::ptrdiff_t s = 0; s < nb; ++s)
          for (std::ptrdiff_t p = 0; p < plane; ++p) {
            const double* src = dcol.data() + (s * plane + p) * rows;
            const std::ptrdiff_t* tab = table->data() + p * taps;
            for (std::ptrdiff_t ci = 0; ci < Ci; ++ci) {
              double* dst = dx.data() + ((n0 + s) * Ci + ci) * plane;
              for (std::ptrdiff_t q = 0; q < taps; ++q)
                if (tab[q] >= 0) dst[tab[q]] += src[ci * taps + q];
            }
          }
      }
    }
    if (gk) {
      auto dk = tp.grad(ik);
      for (std::ptrdiff_t i = 0; i < Co * rows; ++i) dk[i] += dk_acc.data()[i];
    }
  });
}

Var scatter_mean(Var x, std::shared_ptr<const ScatterPlan> plan) {
  Tape& t = tape_of(OpKind::scatter_mean, x);
  if (!plan || plan->index.size() != x.value().size())
    shape_error(OpKind::scatter_mean, x.shape(), "scatter plan does not match the input size");
  Tensor out({plan->output_size});
  auto o = out.data();
  auto v = x.value().data();
  for (std::size_t e = 0; e < v.size(); ++e) o[plan->index[e]] += v[e];
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= plan->inverse_count[i];
  const auto ix = x.id();
  Var inputs[] = {x};
  return t.record(OpKind::scatter_mean, inputs, std::move(out), [=](Tape& tp, std::span<const double> g) {
    auto d = tp.grad(ix);
    for (std::size_t e = 0; e < d.size(); ++e) {
      const auto slot = plan->index[e];
      d[e] += g[slot] * plan->inverse_count[slot];
    }
  });
}

}  // namespace quip::tensor
