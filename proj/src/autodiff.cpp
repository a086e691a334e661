#include "idn/autodiff.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <numeric>

namespace idn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

ConstMap as_matrix(const Tensor& t) {
  const auto r = static_cast<Eigen::Index>(t.rank() == 2 ? t.shape()[0] : t.size());
  const auto c = static_cast<Eigen::Index>(t.rank() == 2 ? t.shape()[1] : 1);
  return {t.data().data(), r, c};
}

MutMap as_matrix(Tensor& t) {
  const auto r = static_cast<Eigen::Index>(t.rank() == 2 ? t.shape()[0] : t.size());
  const auto c = static_cast<Eigen::Index>(t.rank() == 2 ? t.shape()[1] : 1);
  return {t.data().data(), r, c};
}

Tape& common_tape(Var a, Var b) {
  if (&a.tape() != &b.tape()) throw std::invalid_argument("operands recorded on different tapes");
  return a.tape();
}

void require_same(const char* op, Var a, Var b) {
  if (a.shape() != b.shape()) throw ShapeError(op, a.shape(), b.shape());
}

void require_one(const char* op, Var s) {
  if (s.value().size() != 1) throw ShapeError(std::string(op) + ": expected a one-element tensor, got " +
                                              to_string(s.shape()));
}

// Leading extent and last-axis extent for features ops.
std::pair<std::size_t, std::size_t> outer_inner(const Shape& s) {
  if (s.empty()) return {1, 0};
  std::size_t outer = 1;
  for (std::size_t i = 0; i + 1 < s.size(); ++i) outer *= s[i];
  return {outer, s.back()};
}

}  // namespace

Parameter::Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

const Tensor& Var::value() const { return tape_->value(id_); }

std::size_t Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return nodes_.size() - 1;
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  return {this, push(std::move(n))};
}

Var Tape::variable(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  return {this, push(std::move(n))};
}

Var Tape::parameter(Parameter& p) {
  if (!grad_enabled_) return constant(p.value);
  Node n;
  n.value = p.value;
  n.requires_grad = true;
  n.param = &p;
  return {this, push(std::move(n))};
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, VjpRule rule) {
  return record(std::move(value), std::vector<Var>(inputs), std::move(rule));
}

Var Tape::record(Tensor value, const std::vector<Var>& inputs, VjpRule rule) {
  Node n;
  n.value = std::move(value);
  n.inputs.reserve(inputs.size());
  for (const Var& v : inputs) {
    if (&v.tape() != this) throw std::invalid_argument("input recorded on a different tape");
    n.inputs.push_back(v.id());
    n.requires_grad = n.requires_grad || nodes_[v.id()].requires_grad;
  }
  if (n.requires_grad) n.rule = std::move(rule);
  return {this, push(std::move(n))};
}

Tensor* Tape::accumulate(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return nullptr;
  if (!n.has_grad) {
    if (n.grad.shape() != n.value.shape()) {
      n.grad = Tensor(n.value.shape());
    } else {
      n.grad.fill(0.0);
    }
    n.has_grad = true;
  }
  return &n.grad;
}

void Tape::sweep(std::size_t output, const Tensor& cotangent) {
  if (cotangent.shape() != nodes_[output].value.shape()) {
    throw ShapeError("vjp cotangent", cotangent.shape(), nodes_[output].value.shape());
  }
  for (Node& n : nodes_) n.has_grad = false;
  if (Tensor* g = accumulate(output)) *g += cotangent;
  for (std::size_t i = output + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad || !n.rule) continue;
    n.rule(*this, i);
  }
}

void Tape::backward(Var loss) {
  if (loss.value().size() != 1) {
    throw ShapeError("backward requires a scalar loss, got shape " + to_string(loss.shape()));
  }
  sweep(loss.id(), Tensor(loss.shape(), 1.0));
  for (Node& n : nodes_) {
    if (n.param && n.has_grad) n.param->grad += n.grad;
  }
}

void Tape::propagate(Var output, const Tensor& cotangent) { sweep(output.id(), cotangent); }

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_[v.id()];
  if (!n.has_grad) return Tensor(n.value.shape());
  return n.grad;
}

Tensor Tape::vjp(Var output, Var input, const Tensor& cotangent) {
  if (!nodes_[input.id()].requires_grad) {
    throw std::invalid_argument("vjp input does not require a gradient");
  }
  sweep(output.id(), cotangent);
  return grad(input);
}

void Tape::clear() { nodes_.clear(); }

Tensor vjp(const std::function<Var(Var)>& f, const Tensor& x, const Tensor& v) {
  Tape tape;
  Var xv = tape.variable(x);
  Var y = f(xv);
  if (y.shape() != v.shape()) throw ShapeError("vjp", y.shape(), v.shape());
  return tape.vjp(y, xv, v);
}

// ---------------------------------------------------------------------------
// Primitives

Var matmul(Var a, Var b) {
  Tape& t = common_tape(a, b);
  Tensor out = matmul(a.value(), b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), {a, b}, [ia, ib](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_in(self);
    const Tensor& av = tp.value(ia);
    const Tensor& bv = tp.value(ib);
    if (Tensor* ga = tp.accumulate(ia)) as_matrix(*ga).noalias() += as_matrix(g) * as_matrix(bv).transpose();
    if (Tensor* gb = tp.accumulate(ib)) as_matrix(*gb).noalias() += as_matrix(av).transpose() * as_matrix(g);
  });
}

Var transpose(Var a) {
  const std::size_t ia = a.id();
  return a.tape().record(transpose(a.value()), {a}, [ia](Tape& tp, std::size_t self) {
    if (Tensor* ga = tp.accumulate(ia)) *ga += transpose(tp.grad_in(self));
  });
}

Var add(Var a, Var b) {
  require_same("add", a, b);
  Tape& t = common_tape(a, b);
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(a.value() + b.value(), {a, b}, [ia, ib](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_in(self);
    if (Tensor* ga = tp.accumulate(ia)) *ga += g;
    if (Tensor* gb = tp.accumulate(ib)) *gb += g;
  });
}

Var sub(Var a, Var b) {
  require_same("sub", a, b);
  Tape& t = common_tape(a, b);
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(a.value() - b.value(), {a, b}, [ia, ib](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_in(self);
    if (Tensor* ga = tp.accumulate(ia)) *ga += g;
    if (Tensor* gb = tp.accumulate(ib)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
    }
  });
}

Var negate(Var a) { return scalar_mul(a, -1.0); }

Var scalar_mul(Var a, double s) {
  const std::size_t ia = a.id();
  return a.tape().record(a.value() * s, {a}, [ia, s](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_in(self);
    if (Tensor* ga = tp.accumulate(ia)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += s * g[i];
    }
  });
}

Var elementwise_mul(Var a, Var b) {
  require_same("elementwise_mul", a, b);
  Tape& t = common_tape(a, b);
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), {a, b}, [ia, ib](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_in(self);
    if (Tensor* ga = tp.accumulate(ia)) {
      const Tensor& bv2 = tp.value(ib);
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * bv2[i];
    }
    if (Tensor* gb = tp.accumulate(ib)) {
      const Tensor& av2 = tp.value(ia);
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * av2[i];
    }
  });
}

Var scale(Var a, Var s) {
  require_one("scale", s);
  Tape& t = common_tape(a, s);
  const double sv = s.value()[0];
  const std::size_t ia = a.id(), is = s.id();
  return t.record(a.value() * sv, {a, s}, [ia, is](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_in(self);
    if (Tensor* ga = tp.accumulate(ia)) {
      const double k = tp.value(is)[0];
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += k * g[i];
    }
    if (Tensor* gs = tp.accumulate(is)) (*gs)[0] += dot(g.data(), tp.value(ia).data());
  });
}

Var shift(Var a, Var s) {
  require_one("shift", s);
  Tape& t = common_tape(a, s);
  Tensor out = a.value();
  const double sv = s.value()[0];
  for (double& v : out.data()) v += sv;
  const std::size_t ia = a.id(), is = s.id();
  return t.record(std::move(out), {a, s}, [ia, is](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_in(self);
    if (Tensor* ga = tp.accumulate(ia)) *ga += g;
    if (Tensor* gs = tp.accumulate(is)) {
      for (double v : g.data()) (*gs)[0] += v;
    }
  });
}

Var add_row(Var a, Var b) {
  const auto [outer, inner] = outer_inner(a.shape());
  if (b.value().size() != inner) throw ShapeError("add_row", a.shape(), b.shape());
  Tape& t = common_tape(a, b);
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t r = 0; r < outer; ++r)
    for (std::size_t c = 0; c < inner; ++c) out[r * inner + c] += bv[c];
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), {a, b}, [ia, ib, outer, inner](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_in(self);
    if (Tensor* ga = tp.accumulate(ia)) *ga += g;
    if (Tensor* gb = tp.accumulate(ib)) {
      for (std::size_t r = 0; r < outer; ++r)
        for (std::size_t c = 0; c < inner; ++c) (*gb)[c] += g[r * inner + c];
    }
  });
}

Var linear(Var x, Var w, Var b) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs.size() != 2 || ws.size() != 2 || xs[1] != ws[1]) throw ShapeError("linear", xs, ws);
  if (b.valid() && b.value().size() != ws[0]) throw ShapeError("linear bias", ws, b.shape());
  Tape& t = common_tape(x, w);
  Tensor out = Tensor::uninitialized({xs[0], ws[0]});
  MutMap om = as_matrix(out);
  om.noalias() = as_matrix(x.value()) * as_matrix(w.value()).transpose();
  if (b.valid()) {
    const Tensor& bv = b.value();
    for (std::size_t r = 0; r < xs[0]; ++r)
      for (std::size_t c = 0; c < ws[0]; ++c) out[r * ws[0] + c] += bv[c];
  }
  const std::size_t ix = x.id(), iw = w.id();
  const bool has_b = b.valid();
  const std::size_t ib = has_b ? b.id() : 0;
  std::vector<Var> inputs{x, w};
  if (has_b) inputs.push_back(b);
  return t.record(std::move(out), inputs, [ix, iw, ib, has_b](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_in(self);
    if (Tensor* gx = tp.accumulate(ix)) as_matrix(*gx).noalias() += as_matrix(g) * as_matrix(tp.value(iw));
    if (Tensor* gw = tp.accumulate(iw)) as_matrix(*gw).noalias() += as_matrix(g).transpose() * as_matrix(tp.value(ix));
    if (has_b) {
      if (Tensor* gb = tp.accumulate(ib)) {
        const std::size_t n = gb->size();
        for (std::size_t r = 0; r < g.size() / n; ++r)
          for (std::size_t c = 0; c < n; ++c) (*gb)[c] += g[r * n + c];
      }
    }
  });
}

Var concat_scaled(Var a, Var sa, Var b, Var sb) {
  require_one("concat_scaled", sa);
  require_one("concat_scaled", sb);
  const auto [outer, wa] = outer_inner(a.shape());
  const auto [outer_b, wb] = outer_inner(b.shape());
  if (outer != outer_b || a.shape().size() != b.shape().size()) throw ShapeError("concat_scaled", a.shape(), b.shape());
  Tape& t = common_tape(a, b);
  Shape shape = a.shape();
  shape.back() = wa + wb;
  Tensor out = Tensor::uninitialized(shape);
  const double ka = sa.value()[0], kb = sb.value()[0];
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const std::size_t w = wa + wb;
  for (std::size_t r = 0; r < outer; ++r) {
    for (std::size_t c = 0; c < wa; ++c) out[r * w + c] = ka * av[r * wa + c];
    for (std::size_t c = 0; c < wb; ++c) out[r * w + wa + c] = kb * bv[r * wb + c];
  }
  const std::size_t ia = a.id(), isa = sa.id(), ib = b.id(), isb = sb.id();
  return t.record(std::move(out), {a, sa, b, sb}, [=](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_in(self);
    auto side = [&](std::size_t id, std::size_t sid, std::size_t off, std::size_t width) {
      const double k = tp.value(sid)[0];
      if (Tensor* gv = tp.accumulate(id)) {
        for (std::size_t r = 0; r < outer; ++r)
          for (std::size_t c = 0; c < width; ++c) (*gv)[r * width + c] += k * g[r * w + off + c];
      }
      if (Tensor* gs = tp.accumulate(sid)) {
        const Tensor& v = tp.value(id);
        double acc = 0.0;
        for (std::size_t r = 0; r < outer; ++r)
          for (std::size_t c = 0; c < width; ++c) acc += v[r * width + c] * g[r * w + off + c];
        (*gs)[0] += acc;
      }
    };
    side(ia, isa, 0, wa);
    side(ib, isb, wa, wb);
  });
}

Var mul_tiled(Var d, Var t) {
  const auto [outer, wd] = outer_inner(d.shape());
  const auto [outer_t, wt] = outer_inner(t.shape());
  if (outer != outer_t || wt == 0 || wd % wt != 0) throw ShapeError("mul_tiled", d.shape(), t.shape());
  Tape& tape = common_tape(d, t);
  Tensor out = Tensor::uninitialized(d.shape());
  const Tensor& dv = d.value();
  const Tensor& tv = t.value();
  const std::size_t reps = wd / wt;
  for (std::size_t r = 0; r < outer; ++r)
    for (std::size_t k = 0; k < reps; ++k)
      for (std::size_t c = 0; c < wt; ++c) out[r * wd + k * wt + c] = dv[r * wd + k * wt + c] * tv[r * wt + c];
  const std::size_t id = d.id(), it = t.id();
  return tape.record(std::move(out), {d, t}, [=](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_in(self);
    if (Tensor* gd = tp.accumulate(id)) {
      const Tensor& tv2 = tp.value(it);
      for (std::size_t r = 0; r < outer; ++r)
        for (std::size_t k = 0; k < reps; ++k)
          for (std::size_t c = 0; c < wt; ++c) (*gd)[r * wd + k * wt + c] += g[r * wd + k * wt + c] * tv2[r * wt + c];
    }
    if (Tensor* gt = tp.accumulate(it)) {
      const Tensor& dv2 = tp.value(id);
      for (std::size_t r = 0; r < outer; ++r)
        for (std::size_t k = 0; k < reps; ++k)
          for (std::size_t c = 0; c < wt; ++c) (*gt)[r * wt + c] += g[r * wd + k * wt + c] * dv2[r * wd + k * wt + c];
    }
  });
}

Var concat_features(Var a, Var b) { return concat_features(std::vector<Var>{a, b}); }

Var concat_features(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_features of nothing");
  Tape& t = parts.front().tape();
  const Shape& first = parts.front().shape();
  const auto [outer, inner0] = outer_inner(first);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Var& p : parts) {
    const auto [o, w] = outer_inner(p.shape());
    if (o != outer || p.shape().size() != first.size()) throw ShapeError("concat_features", first, p.shape());
    widths.push_back(w);
    total += w;
  }
  Shape out_shape = first;
  out_shape.back() = total;
  Tensor out = Tensor::uninitialized(out_shape);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& pv = parts[k].value();
    for (std::size_t r = 0; r < outer; ++r)
      for (std::size_t c = 0; c < widths[k]; ++c) out[r * total + offset + c] = pv[r * widths[k] + c];
    offset += widths[k];
  }
  std::vector<std::size_t> ids;
  for (const Var& p : parts) ids.push_back(p.id());
  return t.record(std::move(out), parts, [ids, widths, outer, total](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_in(self);
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (Tensor* gk = tp.accumulate(ids[k])) {
        for (std::size_t r = 0; r < outer; ++r)
          for (std::size_t c = 0; c < widths[k]; ++c) (*gk)[r * widths[k] + c] += g[r * total + off + c];
      }
      off += widths[k];
    }
  });
}

std::vector<Var> split_features(Var a, const std::vector<std::size_t>& sizes) {
  const auto [outer, inner] = outer_inner(a.shape());
  const std::size_t total = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
  if (total != inner) {
    throw ShapeError("split_features: sizes sum to " + std::to_string(total) + " but input shape is " +
                     to_string(a.shape()));
  }
  std::vector<Var> out;
  std::size_t off = 0;
  const std::size_t ia = a.id();
  for (std::size_t w : sizes) {
    Shape s = a.shape();
    s.back() = w;
    Tensor piece(s);
    const Tensor& av = a.value();
    for (std::size_t r = 0; r < outer; ++r)
      for (std::size_t c = 0; c < w; ++c) piece[r * w + c] = av[r * inner + off + c];
    out.push_back(a.tape().record(std::move(piece), {a}, [ia, off, w, outer, inner](Tape& tp, std::size_t self) {
      const Tensor& g = tp.grad_in(self);
      if (Tensor* ga = tp.accumulate(ia)) {
        for (std::size_t r = 0; r < outer; ++r)
          for (std::size_t c = 0; c < w; ++c) (*ga)[r * inner + off + c] += g[r * w + c];
      }
    }));
    off += w;
  }
  return out;
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  const std::size_t ia = a.id();
  return a.tape().record(Tensor::scalar(s), {a}, [ia](Tape& tp, std::size_t self) {
    const double g = tp.grad_in(self)[0];
    if (Tensor* ga = tp.accumulate(ia)) {
      for (double& v : ga->data()) v += g;
    }
  });
}

Var sum_features(Var a) {
  const auto [outer, inner] = outer_inner(a.shape());
  Tensor out({outer, 1});
  const Tensor& av = a.value();
  for (std::size_t r = 0; r < outer; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < inner; ++c) s += av[r * inner + c];
    out[r] = s;
  }
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia, outer, inner](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_in(self);
    if (Tensor* ga = tp.accumulate(ia)) {
      for (std::size_t r = 0; r < outer; ++r)
        for (std::size_t c = 0; c < inner; ++c) (*ga)[r * inner + c] += g[r];
    }
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw ShapeError("mean of an empty tensor");
  return scalar_mul(sum(a), 1.0 / static_cast<double>(n));
}

Var log(Var a) {
  Tensor out = a.value();
  for (double& v : out.data()) v = std::log(v);
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_in(self);
    if (Tensor* ga = tp.accumulate(ia)) {
      const Tensor& av = tp.value(ia);
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] / av[i];
    }
  });
}

Var exp(Var a) {
  Tensor out = a.value();
  for (double& v : out.data()) v = std::exp(v);
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_in(self);
    if (Tensor* ga = tp.accumulate(ia)) {
      const Tensor& out_v = tp.value(self);
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * out_v[i];
    }
  });
}

Var operator+(Var a, Var b) { return add(a, b); }
Var operator-(Var a, Var b) { return sub(a, b); }
Var operator-(Var a) { return negate(a); }
Var operator*(Var a, double s) { return scalar_mul(a, s); }

}  // namespace idn
