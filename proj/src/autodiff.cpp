#include "bidlab/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <stdexcept>

namespace bidlab::ad {

namespace {

double secant(std::span<const double> x, std::span<const double> y,
              std::size_t i) {
  return (y[i + 1] - y[i]) / (x[i + 1] - x[i]);
}

// Shape-preserving knot tangent: the weighted harmonic mean of the adjacent
// secants, zero where they disagree in sign so the curve never overshoots
// its data. End knots take the lone adjacent secant.
double tangent(std::span<const double> x, std::span<const double> y,
               std::size_t i) {
  if (i == 0) return secant(x, y, 0);
  if (i + 1 == x.size()) return secant(x, y, x.size() - 2);
  const double s0 = secant(x, y, i - 1);
  const double s1 = secant(x, y, i);
  if (s0 * s1 <= 0.0) return 0.0;
  const double h0 = x[i] - x[i - 1];
  const double h1 = x[i + 1] - x[i];
  const double w0 = 2.0 * h1 + h0;
  const double w1 = h1 + 2.0 * h0;
  return (w0 + w1) / (w0 / s0 + w1 / s1);
}

struct HermiteSegment {
  double x0, h, y0, y1, m0, m1;
};

// Valid only for v in [x.front(), x.back()); callers clamp outside.
HermiteSegment segment_at(std::span<const double> x,
                          std::span<const double> y, double v) {
  auto it = std::upper_bound(x.begin(), x.end(), v);
  std::size_t i = static_cast<std::size_t>(it - x.begin());
  i = i == 0 ? 0 : i - 1;
  return {x[i],          x[i + 1] - x[i], y[i], y[i + 1],
          tangent(x, y, i), tangent(x, y, i + 1)};
}

}  // namespace

double MonotoneCurve::eval(double v) const {
  if (v <= x.front()) return y.front();
  if (v >= x.back()) return y.back();
  const HermiteSegment s = segment_at(x, y, v);
  const double t = (v - s.x0) / s.h;
  const double t2 = t * t;
  const double t3 = t2 * t;
  return s.y0 * (2.0 * t3 - 3.0 * t2 + 1.0) + s.h * s.m0 * (t3 - 2.0 * t2 + t) +
         s.y1 * (3.0 * t2 - 2.0 * t3) + s.h * s.m1 * (t3 - t2);
}

double MonotoneCurve::slope_at(double v) const {
  if (v < x.front() || v >= x.back()) return 0.0;
  const HermiteSegment s = segment_at(x, y, v);
  const double t = (v - s.x0) / s.h;
  const double t2 = t * t;
  return (s.y0 * (6.0 * t2 - 6.0 * t) + s.y1 * (6.0 * t - 6.0 * t2)) / s.h +
         s.m0 * (3.0 * t2 - 4.0 * t + 1.0) + s.m1 * (3.0 * t2 - 2.0 * t);
}

NodeId Tape::push(Op op, int len, NodeId a, NodeId b) {
  Node n;
  n.op = op;
  n.a = a;
  n.b = b;
  n.len = len;
  n.off = static_cast<std::int32_t>(val_.size());
  val_.resize(val_.size() + len, 0.0);
  adj_.resize(val_.size(), 0.0);
  nodes_.push_back(n);
  return static_cast<NodeId>(nodes_.size()) - 1;
}

NodeId Tape::param(std::span<const double> v) {
  NodeId id = push(Op::leaf, static_cast<int>(v.size()), -1, -1);
  std::copy(v.begin(), v.end(), val(nodes_[id]));
  return id;
}

NodeId Tape::constant(std::span<const double> v) { return param(v); }

NodeId Tape::constant(double v) {
  return constant(std::span<const double>(&v, 1));
}

NodeId Tape::add(NodeId a, NodeId b) {
  int la = nodes_[a].len, lb = nodes_[b].len;
  if (la != lb && la != 1 && lb != 1)
    throw std::logic_error("add: incompatible lengths");
  NodeId id = push(Op::add, std::max(la, lb), a, b);
  compute(nodes_[id]);
  return id;
}

NodeId Tape::sub(NodeId a, NodeId b) {
  int la = nodes_[a].len, lb = nodes_[b].len;
  if (la != lb && la != 1 && lb != 1)
    throw std::logic_error("sub: incompatible lengths");
  NodeId id = push(Op::sub, std::max(la, lb), a, b);
  compute(nodes_[id]);
  return id;
}

NodeId Tape::mul(NodeId a, NodeId b) {
  int la = nodes_[a].len, lb = nodes_[b].len;
  if (la != lb && la != 1 && lb != 1)
    throw std::logic_error("mul: incompatible lengths");
  NodeId id = push(Op::mul, std::max(la, lb), a, b);
  compute(nodes_[id]);
  return id;
}

NodeId Tape::matvec(NodeId w, NodeId x) {
  int lw = nodes_[w].len, lx = nodes_[x].len;
  if (lx == 0 || lw % lx != 0)
    throw std::logic_error("matvec: matrix length not divisible by vector");
  NodeId id = push(Op::matvec, lw / lx, w, x);
  compute(nodes_[id]);
  return id;
}

NodeId Tape::sigmoid(NodeId a) {
  NodeId id = push(Op::sigmoid, nodes_[a].len, a, -1);
  compute(nodes_[id]);
  return id;
}

NodeId Tape::tanh(NodeId a) {
  NodeId id = push(Op::tanh_fn, nodes_[a].len, a, -1);
  compute(nodes_[id]);
  return id;
}

NodeId Tape::affine(NodeId a, std::span<const double> scale,
                    std::span<const double> shift) {
  int len = nodes_[a].len;
  if (static_cast<int>(scale.size()) != len ||
      static_cast<int>(shift.size()) != len)
    throw std::logic_error("affine: scale/shift length mismatch");
  NodeId id = push(Op::affine, len, a, -1);
  nodes_[id].aux = static_cast<std::int32_t>(aux_.size());
  aux_.insert(aux_.end(), scale.begin(), scale.end());
  aux_.insert(aux_.end(), shift.begin(), shift.end());
  compute(nodes_[id]);
  return id;
}

NodeId Tape::max_const(NodeId a, double c) {
  NodeId id = push(Op::max_const, nodes_[a].len, a, -1);
  nodes_[id].c = c;
  compute(nodes_[id]);
  return id;
}

NodeId Tape::min_const(NodeId a, double c) {
  NodeId id = push(Op::min_const, nodes_[a].len, a, -1);
  nodes_[id].c = c;
  compute(nodes_[id]);
  return id;
}

NodeId Tape::sum(NodeId a) {
  NodeId id = push(Op::sum, 1, a, -1);
  compute(nodes_[id]);
  return id;
}

NodeId Tape::index(NodeId a, int i) {
  if (i < 0 || i >= nodes_[a].len)
    throw std::logic_error("index out of range");
  NodeId id = push(Op::index, 1, a, -1);
  nodes_[id].aux = i;
  compute(nodes_[id]);
  return id;
}

NodeId Tape::pack(std::span<const NodeId> parts) {
  int len = 0;
  for (NodeId p : parts) len += nodes_[p].len;
  NodeId id = push(Op::pack, len, -1, -1);
  nodes_[id].aux = static_cast<std::int32_t>(pack_in_.size());
  nodes_[id].b = static_cast<NodeId>(parts.size());
  pack_in_.insert(pack_in_.end(), parts.begin(), parts.end());
  compute(nodes_[id]);
  return id;
}

NodeId Tape::curve(NodeId a, const MonotoneCurve* c) {
  if (nodes_[a].len != 1) throw std::logic_error("curve expects a scalar");
  NodeId id = push(Op::curve, 1, a, -1);
  nodes_[id].curve = c;
  compute(nodes_[id]);
  return id;
}

int Tape::size(NodeId n) const { return nodes_[n].len; }

std::span<const double> Tape::value(NodeId n) const {
  return {val(nodes_[n]), static_cast<std::size_t>(nodes_[n].len)};
}

double Tape::scalar(NodeId n) const {
  if (nodes_[n].len != 1) throw std::logic_error("scalar on non-scalar node");
  return *val(nodes_[n]);
}

std::span<const double> Tape::adjoint(NodeId n) const {
  return {adj_.data() + nodes_[n].off, static_cast<std::size_t>(nodes_[n].len)};
}

void Tape::set_leaf(NodeId n, std::span<const double> v) {
  if (nodes_[n].op != Op::leaf) throw std::logic_error("set_leaf on non-leaf");
  if (static_cast<int>(v.size()) != nodes_[n].len)
    throw std::logic_error("set_leaf length mismatch");
  std::copy(v.begin(), v.end(), val(nodes_[n]));
}

void Tape::compute(const Node& n) {
  double* out = val(n);
  switch (n.op) {
    case Op::leaf:
      break;
    case Op::add:
    case Op::sub:
    case Op::mul: {
      const Node& na = nodes_[n.a];
      const Node& nb = nodes_[n.b];
      const double* a = val(na);
      const double* b = val(nb);
      int sa = na.len == 1 ? 0 : 1;
      int sb = nb.len == 1 ? 0 : 1;
      for (int i = 0; i < n.len; ++i) {
        double x = a[i * sa], y = b[i * sb];
        out[i] = n.op == Op::add ? x + y : n.op == Op::sub ? x - y : x * y;
      }
      break;
    }
    case Op::matvec: {
      const Node& nw = nodes_[n.a];
      const Node& nx = nodes_[n.b];
      const double* w = val(nw);
      const double* x = val(nx);
      int cols = nx.len;
      for (int i = 0; i < n.len; ++i) {
        double acc = 0.0;
        for (int j = 0; j < cols; ++j) acc += w[i * cols + j] * x[j];
        out[i] = acc;
      }
      break;
    }
    case Op::sigmoid: {
      const double* a = val(nodes_[n.a]);
      for (int i = 0; i < n.len; ++i) out[i] = 1.0 / (1.0 + std::exp(-a[i]));
      break;
    }
    case Op::tanh_fn: {
      const double* a = val(nodes_[n.a]);
      for (int i = 0; i < n.len; ++i) out[i] = std::tanh(a[i]);
      break;
    }
    case Op::affine: {
      const double* a = val(nodes_[n.a]);
      const double* scale = aux_.data() + n.aux;
      const double* shift = scale + n.len;
      for (int i = 0; i < n.len; ++i) out[i] = scale[i] * a[i] + shift[i];
      break;
    }
    case Op::max_const: {
      const double* a = val(nodes_[n.a]);
      for (int i = 0; i < n.len; ++i) out[i] = std::max(a[i], n.c);
      break;
    }
    case Op::min_const: {
      const double* a = val(nodes_[n.a]);
      for (int i = 0; i < n.len; ++i) out[i] = std::min(a[i], n.c);
      break;
    }
    case Op::sum: {
      const double* a = val(nodes_[n.a]);
      double acc = 0.0;
      for (int i = 0; i < nodes_[n.a].len; ++i) acc += a[i];
      out[0] = acc;
      break;
    }
    case Op::index:
      out[0] = val(nodes_[n.a])[n.aux];
      break;
    case Op::pack: {
      int pos = 0;
      for (int p = 0; p < n.b; ++p) {
        const Node& np = nodes_[pack_in_[n.aux + p]];
        const double* a = val(np);
        for (int i = 0; i < np.len; ++i) out[pos++] = a[i];
      }
      break;
    }
    case Op::curve:
      out[0] = n.curve->eval(*val(nodes_[n.a]));
      break;
  }
}

void Tape::forward() {
  for (const Node& n : nodes_) compute(n);
}

void Tape::backward(NodeId out) {
  if (nodes_[out].len != 1)
    throw std::logic_error("backward expects a scalar output");
  std::fill(adj_.begin(), adj_.end(), 0.0);
  *adj(nodes_[out]) = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    const Node& n = *it;
    const double* g = adj_.data() + n.off;
    switch (n.op) {
      case Op::leaf:
        break;
      case Op::add:
      case Op::sub: {
        Node& na = nodes_[n.a];
        Node& nb = nodes_[n.b];
        double* ga = adj(na);
        double* gb = adj(nb);
        int sa = na.len == 1 ? 0 : 1;
        int sb = nb.len == 1 ? 0 : 1;
        double sgn = n.op == Op::sub ? -1.0 : 1.0;
        for (int i = 0; i < n.len; ++i) {
          ga[i * sa] += g[i];
          gb[i * sb] += sgn * g[i];
        }
        break;
      }
      case Op::mul: {
        Node& na = nodes_[n.a];
        Node& nb = nodes_[n.b];
        double* ga = adj(na);
        double* gb = adj(nb);
        const double* a = val(na);
        const double* b = val(nb);
        int sa = na.len == 1 ? 0 : 1;
        int sb = nb.len == 1 ? 0 : 1;
        for (int i = 0; i < n.len; ++i) {
          ga[i * sa] += g[i] * b[i * sb];
          gb[i * sb] += g[i] * a[i * sa];
        }
        break;
      }
      case Op::matvec: {
        Node& nw = nodes_[n.a];
        Node& nx = nodes_[n.b];
        double* gw = adj(nw);
        double* gx = adj(nx);
        const double* w = val(nw);
        const double* x = val(nx);
        int cols = nx.len;
        for (int i = 0; i < n.len; ++i) {
          for (int j = 0; j < cols; ++j) {
            gw[i * cols + j] += g[i] * x[j];
            gx[j] += g[i] * w[i * cols + j];
          }
        }
        break;
      }
      case Op::sigmoid: {
        double* ga = adj(nodes_[n.a]);
        const double* y = val(n);
        for (int i = 0; i < n.len; ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
        break;
      }
      case Op::tanh_fn: {
        double* ga = adj(nodes_[n.a]);
        const double* y = val(n);
        for (int i = 0; i < n.len; ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
        break;
      }
      case Op::affine: {
        double* ga = adj(nodes_[n.a]);
        const double* scale = aux_.data() + n.aux;
        for (int i = 0; i < n.len; ++i) ga[i] += g[i] * scale[i];
        break;
      }
      case Op::max_const: {
        double* ga = adj(nodes_[n.a]);
        const double* a = val(nodes_[n.a]);
        for (int i = 0; i < n.len; ++i)
          if (a[i] > n.c) ga[i] += g[i];
        break;
      }
      case Op::min_const: {
        double* ga = adj(nodes_[n.a]);
        const double* a = val(nodes_[n.a]);
        for (int i = 0; i < n.len; ++i)
          if (a[i] < n.c) ga[i] += g[i];
        break;
      }
      case Op::sum: {
        double* ga = adj(nodes_[n.a]);
        for (int i = 0; i < nodes_[n.a].len; ++i) ga[i] += g[0];
        break;
      }
      case Op::index:
        adj(nodes_[n.a])[n.aux] += g[0];
        break;
      case Op::pack: {
        int pos = 0;
        for (int p = 0; p < n.b; ++p) {
          Node& np = nodes_[pack_in_[n.aux + p]];
          double* ga = adj(np);
          for (int i = 0; i < np.len; ++i) ga[i] += g[pos++];
        }
        break;
      }
      case Op::curve:
        *adj(nodes_[n.a]) += g[0] * n.curve->slope_at(*val(nodes_[n.a]));
        break;
    }
  }
  for (double a : adj_)
    if (!std::isfinite(a))
      throw std::runtime_error("non-finite adjoint in backward pass");
}

void Tape::clear() {
  nodes_.clear();
  val_.clear();
  adj_.clear();
  aux_.clear();
  pack_in_.clear();
}

void Tape::dump(std::ostream& os) const {
  static const char* names[] = {"leaf", "add",  "sub",   "mul", "matvec",
                                "sigmoid", "tanh", "affine", "max", "min",
                                "sum",  "index", "pack",  "curve"};
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    os << i << ": " << names[static_cast<int>(n.op)] << " len=" << n.len;
    if (n.a >= 0) os << " a=" << n.a;
    if (n.b >= 0 && n.op != Op::pack) os << " b=" << n.b;
    os << " val[0]=" << val(n)[0] << "\n";
  }
}

GradCheckResult grad_check(
    const std::function<std::pair<double, double>(std::span<const double>)>&
        f,
    std::span<const double> params, std::span<const double> analytic,
    double eps, double denom_floor) {
  std::vector<double> p(params.begin(), params.end());
  GradCheckResult r;
  for (std::size_t i = 0; i < p.size(); ++i) {
    double orig = p[i];
    p[i] = orig + eps;
    auto [fp, mp] = f(p);
    p[i] = orig - eps;
    auto [fm, mm] = f(p);
    p[i] = orig;
    bool kink = false;
    if (!std::isnan(mp) && !std::isnan(mm))
      kink = mp * mm <= 0.0 || std::abs(mp) < 1e-12 || std::abs(mm) < 1e-12;
    if (kink) {
      ++r.n_skipped;
      continue;
    }
    double fd = (fp - fm) / (2.0 * eps);
    double denom = std::max({std::abs(fd), std::abs(analytic[i]), denom_floor});
    double rel = std::abs(fd - analytic[i]) / denom;
    ++r.n_checked;
    if (rel > r.max_rel_error) {
      r.max_rel_error = rel;
      r.worst_index = static_cast<int>(i);
    }
  }
  return r;
}

}  // namespace bidlab::ad
