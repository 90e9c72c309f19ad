#include "amh/tape.hpp"

#include <stdexcept>

namespace amh {

const Tensor& Var::value() const {
  if (!tape_) throw std::logic_error("var: not bound to a tape");
  return tape_->value(id_);
}

std::size_t Tape::check(Var v) const {
  if (v.tape() != this || v.id() >= nodes_.size()) throw std::logic_error("tape: variable belongs to another tape");
  return v.id();
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{"const", scope_, std::move(value), {}, {}, {}, false});
  return Var(this, nodes_.size() - 1);
}

Var Tape::leaf(Tensor value) {
  nodes_.push_back(Node{"leaf", scope_, std::move(value), {}, {}, {}, true});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(std::string op, Tensor value, std::vector<std::size_t> inputs, BackwardFn backward) {
  bool needs = false;
  for (auto i : inputs) {
    if (i >= nodes_.size()) throw std::logic_error("tape: input recorded after its consumer");
    needs = needs || nodes_[i].needs_grad;
  }
  nodes_.push_back(Node{std::move(op), scope_, std::move(value), {}, std::move(inputs),
                        needs ? std::move(backward) : BackwardFn{}, needs});
  return Var(this, nodes_.size() - 1);
}

void Tape::accumulate(std::size_t id, const Tensor& g) {
  Node& n = nodes_.at(id);
  if (!n.needs_grad) return;
  check_same_shape(n.value.shape(), g.shape(), "tape gradient");
  n.grad.values() += g.values();
}

void Tape::backward(Var output, const Tensor& seed) {
  if (nodes_.empty()) throw std::logic_error("tape: backward called before any forward op");
  const std::size_t out = check(output);
  check_same_shape(nodes_[out].value.shape(), seed.shape(), "backward seed");
  for (auto& n : nodes_) n.grad = Tensor(n.value.shape());
  nodes_[out].grad = seed;
  for (std::size_t i = out + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.backward && n.needs_grad) n.backward(*this, i);
  }
  backward_done_ = true;
}

void Tape::backward(Var output) {
  const Shape s = value(check(output)).shape();
  if (s.size() != 1) throw std::logic_error("tape: implicit seed requires a single-element output");
  backward(output, Tensor::constant(s, 1.0));
}

const Tensor& Tape::grad(Var v) const {
  if (!backward_done_) throw std::logic_error("tape: gradients requested before backward");
  return nodes_[check(v)].grad;
}

std::vector<std::string> Tape::trace() const {
  std::vector<std::string> lines;
  lines.reserve(nodes_.size());
  for (const auto& n : nodes_) lines.push_back(n.scope + " " + n.op + " " + to_string(n.value.shape()));
  return lines;
}

Tape::Scope::Scope(Tape& t, const std::string& name) : tape_(t), previous_(t.scope_.size()) {
  tape_.scope_ += (tape_.scope_.empty() ? "" : "/") + name;
}

Tape::Scope::~Scope() { tape_.scope_.resize(previous_); }

namespace ad {

namespace {
Tape& tape_of(Var v) {
  if (!v.valid()) throw std::logic_error("ad: unbound variable");
  return *v.tape();
}
void same_tape(Var a, Var b) {
  if (a.tape() != b.tape()) throw std::logic_error("ad: variables from different tapes");
}
}  // namespace

Var conv2d(Var x, Var weights, const ConvSpec& spec) {
  same_tape(x, weights);
  Tape& t = tape_of(x);
  detail::check_kernel(spec, weights.value().size());
  Tensor out = amh::conv2d(x.value(), spec, weights.value().data());
  const auto xi = x.id(), wi = weights.id();
  return t.record("conv2d", std::move(out), {xi, wi}, [xi, wi, spec](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_of(self);
    const Tensor& w = tp.value(wi);
    if (tp.needs_grad(xi)) tp.accumulate(xi, conv2d_input_grad(g, spec, w.data(), tp.value(xi).shape()));
    if (tp.needs_grad(wi)) tp.accumulate(wi, Tensor(w.shape(), conv2d_kernel_grad(tp.value(xi), g, spec)));
  });
}

Var deconv2d(Var x, Var weights, const ConvSpec& spec) {
  same_tape(x, weights);
  Tape& t = tape_of(x);
  detail::check_kernel(spec, weights.value().size());
  Tensor out = amh::deconv2d(x.value(), spec, weights.value().data());
  const auto xi = x.id(), wi = weights.id();
  return t.record("deconv2d", std::move(out), {xi, wi}, [xi, wi, spec](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_of(self);
    const Tensor& w = tp.value(wi);
    const Tensor& xv = tp.value(xi);
    // deconv is conv^T: dx = conv(g), dW = kernel grad with the roles of input and output swapped.
    if (tp.needs_grad(xi)) {
      Tensor dx = amh::conv2d(g, spec, w.data());
      if (!(dx.shape() == xv.shape())) throw ShapeError("deconv2d backward: inconsistent geometry");
      tp.accumulate(xi, dx);
    }
    if (tp.needs_grad(wi)) tp.accumulate(wi, Tensor(w.shape(), conv2d_kernel_grad(g, xv, spec)));
  });
}

Var maxpool(Var x, Index window, Index stride) {
  Tape& t = tape_of(x);
  auto pooled = maxpool_with_argmax(x.value(), window, stride);
  const auto xi = x.id();
  auto argmax = std::move(pooled.argmax);
  return t.record("maxpool", std::move(pooled.output), {xi},
                  [xi, argmax = std::move(argmax)](Tape& tp, std::size_t self) {
                    const Tensor& g = tp.grad_of(self);
                    Tensor dx(tp.value(xi).shape());
                    for (std::size_t o = 0; o < argmax.size(); ++o) dx.values()[argmax[o]] += g.values()[o];
                    tp.accumulate(xi, dx);
                  });
}

Var sigmoid(Var x) {
  Tape& t = tape_of(x);
  const auto xi = x.id();
  return t.record("sigmoid", amh::sigmoid(x.value()), {xi}, [xi](Tape& tp, std::size_t self) {
    const Tensor& y = tp.value(self);
    tp.accumulate(xi, Tensor(y.shape(), tp.grad_of(self).values() * y.values() * (1.0 - y.values())));
  });
}

Var relu(Var x) {
  Tape& t = tape_of(x);
  const auto xi = x.id();
  return t.record("relu", amh::relu(x.value()), {xi}, [xi](Tape& tp, std::size_t self) {
    const Tensor& xv = tp.value(xi);
    tp.accumulate(xi, Tensor(xv.shape(), (xv.values() > 0.0).select(tp.grad_of(self).values(), 0.0)));
  });
}

Var add(Var x, Var y) {
  same_tape(x, y);
  Tape& t = tape_of(x);
  const auto xi = x.id(), yi = y.id();
  return t.record("add", amh::add(x.value(), y.value()), {xi, yi}, [xi, yi](Tape& tp, std::size_t self) {
    tp.accumulate(xi, tp.grad_of(self));
    tp.accumulate(yi, tp.grad_of(self));
  });
}

Var sub(Var x, Var y) {
  same_tape(x, y);
  Tape& t = tape_of(x);
  const auto xi = x.id(), yi = y.id();
  return t.record("sub", amh::sub(x.value(), y.value()), {xi, yi}, [xi, yi](Tape& tp, std::size_t self) {
    tp.accumulate(xi, tp.grad_of(self));
    tp.accumulate(yi, amh::scale(tp.grad_of(self), -1.0));
  });
}

Var mul(Var x, Var y) {
  same_tape(x, y);
  Tape& t = tape_of(x);
  const auto xi = x.id(), yi = y.id();
  return t.record("mul", amh::mul(x.value(), y.value()), {xi, yi}, [xi, yi](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_of(self);
    if (tp.needs_grad(xi)) tp.accumulate(xi, amh::mul(g, tp.value(yi)));
    if (tp.needs_grad(yi)) tp.accumulate(yi, amh::mul(g, tp.value(xi)));
  });
}

Var scale(Var x, double s) {
  Tape& t = tape_of(x);
  const auto xi = x.id();
  return t.record("scale", amh::scale(x.value(), s), {xi},
                  [xi, s](Tape& tp, std::size_t self) { tp.accumulate(xi, amh::scale(tp.grad_of(self), s)); });
}

Var mul_broadcast(Var gate, Var x) {
  same_tape(gate, x);
  if (gate.shape().channels == x.shape().channels) return mul(gate, x);
  Tape& t = tape_of(x);
  const auto gi = gate.id(), xi = x.id();
  return t.record("mul_broadcast", amh::mul_broadcast(gate.value(), x.value()), {gi, xi},
                  [gi, xi](Tape& tp, std::size_t self) {
                    const Tensor& g = tp.grad_of(self);
                    if (tp.needs_grad(xi)) tp.accumulate(xi, amh::mul_broadcast(tp.value(gi), g));
                    if (tp.needs_grad(gi)) tp.accumulate(gi, channel_sum(amh::mul(g, tp.value(xi))));
                  });
}

Var add_bias(Var x, Var bias) {
  same_tape(x, bias);
  Tape& t = tape_of(x);
  const Shape bs = bias.shape();
  if (bs.channels != x.shape().channels || bs.height != 1 || bs.width != 1) {
    throw ShapeError("add_bias: bias " + to_string(bs) + " for input " + to_string(x.shape()));
  }
  Tensor out = x.value();
  for (Index c = 0; c < out.channels(); ++c) out.plane(c).array() += bias.value().values()[c];
  const auto xi = x.id(), bi = bias.id();
  return t.record("add_bias", std::move(out), {xi, bi}, [xi, bi](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_of(self);
    tp.accumulate(xi, g);
    if (tp.needs_grad(bi)) {
      Tensor db(tp.value(bi).shape());
      for (Index c = 0; c < g.channels(); ++c) db.values()[c] = g.plane(c).sum();
      tp.accumulate(bi, db);
    }
  });
}

Var concat(const std::vector<Var>& xs) {
  if (xs.empty()) throw ShapeError("concat: no inputs");
  std::vector<Tensor> values;
  std::vector<std::size_t> ids;
  for (const auto& x : xs) {
    same_tape(xs[0], x);
    values.push_back(x.value());
    ids.push_back(x.id());
  }
  Tape& t = tape_of(xs[0]);
  return t.record("concat", concat_channels(values), ids, [ids](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_of(self);
    Index offset = 0;
    for (auto id : ids) {
      const Shape s = tp.value(id).shape();
      tp.accumulate(id, Tensor(s, g.values().segment(offset, s.size())));
      offset += s.size();
    }
  });
}

Var sum(Var x) {
  Tape& t = tape_of(x);
  const auto xi = x.id();
  return t.record("sum", Tensor::constant({1, 1, 1}, x.value().values().sum()), {xi},
                  [xi](Tape& tp, std::size_t self) {
                    tp.accumulate(xi, Tensor::constant(tp.value(xi).shape(), tp.grad_of(self).values()[0]));
                  });
}

Var mean(const std::vector<Var>& xs) {
  if (xs.empty()) throw ShapeError("mean: no inputs");
  Tensor acc(xs[0].shape());
  std::vector<std::size_t> ids;
  for (const auto& x : xs) {
    same_tape(xs[0], x);
    check_same_shape(acc.shape(), x.shape(), "mean");
    acc.values() += x.value().values();
    ids.push_back(x.id());
  }
  const double n = static_cast<double>(xs.size());
  acc.values() /= n;
  const double w = 1.0 / n;
  return tape_of(xs[0]).record("mean", std::move(acc), ids, [ids, w](Tape& tp, std::size_t self) {
    const Tensor g = amh::scale(tp.grad_of(self), w);
    for (auto id : ids) tp.accumulate(id, g);
  });
}

}  // namespace ad
}  // namespace amh
