#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

namespace bidlab::ad {

using NodeId = std::int32_t;

// Shape-preserving cubic interpolant over ascending knots. Reproduces knot
// values exactly, has a continuous first derivative, and never overshoots
// the data range, so monotone knots give a monotone curve. Outside the knot
// range it clamps to the end values with zero slope.
struct MonotoneCurve {
  std::span<const double> x;
  std::span<const double> y;

  double eval(double v) const;
  double slope_at(double v) const;
};

// Reverse-mode tape with arena storage. Nodes are appended in evaluation
// order; values are computed eagerly at construction, so value() is valid
// immediately. backward() accumulates adjoints in one reverse sweep.
//
// Vector semantics: add/sub/mul are elementwise and broadcast a length-1
// operand; matvec treats the first operand as a row-major matrix whose
// column count is the second operand's length.
class Tape {
 public:
  NodeId param(std::span<const double> v);
  NodeId constant(std::span<const double> v);
  NodeId constant(double v);

  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId matvec(NodeId w, NodeId x);
  NodeId sigmoid(NodeId a);
  NodeId tanh(NodeId a);
  // scale[i] * v[i] + shift[i]; scale/shift are captured by value.
  NodeId affine(NodeId a, std::span<const double> scale,
                std::span<const double> shift);
  NodeId max_const(NodeId a, double c);
  NodeId min_const(NodeId a, double c);
  NodeId sum(NodeId a);
  NodeId index(NodeId a, int i);
  NodeId pack(std::span<const NodeId> parts);
  // Length-1 input through a knot curve. The curve must outlive the tape
  // sweep; outside the knot range the derivative is zero.
  NodeId curve(NodeId a, const MonotoneCurve* curve);

  int size(NodeId n) const;
  std::span<const double> value(NodeId n) const;
  double scalar(NodeId n) const;
  std::span<const double> adjoint(NodeId n) const;

  // Overwrites a leaf's value. Recompute with forward() afterwards.
  void set_leaf(NodeId n, std::span<const double> v);
  void forward();

  // Seeds d(out)/d(out) = 1 (out must have length 1) and sweeps backwards.
  // Throws if any adjoint comes out non-finite.
  void backward(NodeId out);

  void clear();
  std::size_t n_nodes() const { return nodes_.size(); }
  void dump(std::ostream& os) const;

 private:
  enum class Op : std::uint8_t {
    leaf,
    add,
    sub,
    mul,
    matvec,
    sigmoid,
    tanh_fn,
    affine,
    max_const,
    min_const,
    sum,
    index,
    pack,
    curve,
  };

  struct Node {
    Op op;
    NodeId a = -1;
    NodeId b = -1;
    std::int32_t off = 0;   // offset into val_/adj_
    std::int32_t len = 0;
    std::int32_t aux = 0;   // index arg, aux_ offset, or pack_in_ offset
    double c = 0.0;         // clamp threshold
    const MonotoneCurve* curve = nullptr;
  };

  NodeId push(Op op, int len, NodeId a, NodeId b);
  void compute(const Node& n);
  double* val(const Node& n) { return val_.data() + n.off; }
  const double* val(const Node& n) const { return val_.data() + n.off; }
  double* adj(const Node& n) { return adj_.data() + n.off; }

  std::vector<Node> nodes_;
  std::vector<double> val_;
  std::vector<double> adj_;
  std::vector<double> aux_;
  std::vector<NodeId> pack_in_;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  int worst_index = -1;
  int n_checked = 0;
  int n_skipped = 0;
};

// Central-difference check of an analytic gradient. f returns the value and
// a kink margin; a coordinate is skipped when the margin changes sign (or
// sits at zero) across the +/- epsilon probes, i.e. when the stencil
// straddles a non-smooth point. A NaN margin disables the guard. Relative
// error uses max(|fd|, |analytic|, denom_floor) in the denominator.
GradCheckResult grad_check(
    const std::function<std::pair<double, double>(std::span<const double>)>&
        f,
    std::span<const double> params, std::span<const double> analytic,
    double eps, double denom_floor = 1e-8);

}  // namespace bidlab::ad
