#pragma once

#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "tsconv/dual.hpp"
#include "tsconv/feature_grid.hpp"

// Reverse-mode differentiation over FeatureGrid values. Every differentiable
// operation appends a node to a Tape; Tape::backward replays the nodes in
// reverse creation order, which is a valid topological order by construction.
namespace tsconv::ad {

class Tape;

class Var {
 public:
  Var() = default;

  const FeatureGrid& value() const;
  const Shape& shape() const { return value().shape(); }
  // Gradient after Tape::backward; all zeros when nothing flowed into it.
  std::vector<double> grad() const;
  bool requires_grad() const;
  bool valid() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  // Convenience for (1,1,1) values.
  double scalar() const;

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::span<const double> out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(FeatureGrid value, bool requires_grad = true);
  Var constant(FeatureGrid value) { return leaf(std::move(value), false); }
  Var scalar(double v) { return constant(FeatureGrid({1, 1, 1}, v)); }

  // Appends an op result. `backward` is dropped when no parent needs a
  // gradient, which also makes every downstream node gradient-free.
  Var record(FeatureGrid value, std::span<const Var> parents, BackwardFn backward);
  Var record(FeatureGrid value, std::initializer_list<Var> parents, BackwardFn backward) {
    return record(std::move(value), std::span<const Var>(parents.begin(), parents.size()),
                  std::move(backward));
  }

  // Throws ContractError unless `loss` holds exactly one value.
  void backward(const Var& loss);

  const FeatureGrid& value(const Var& v) const { return node(v).value; }
  bool requires_grad(const Var& v) const { return node(v).requires_grad; }
  // Lazily allocated accumulation buffer; only valid for requires_grad nodes.
  std::vector<double>& grad_buffer(const Var& v);
  std::vector<double> grad(const Var& v) const;
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    FeatureGrid value;
    std::vector<double> grad;
    bool requires_grad = false;
    BackwardFn backward;
  };
  Node& node(const Var& v);
  const Node& node(const Var& v) const;

  std::deque<Node> nodes_;
};

// ---- elementwise ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var exp(const Var& a);
Var log(const Var& a);
Var sigmoid(const Var& a);
Var relu(const Var& a);
Var leaky_relu(const Var& a, double slope = 0.1);
Var square(const Var& a);
// Softmax across the channel axis of every cell.
Var softmax_channels(const Var& a);
Var detach(const Var& a);

// ---- reductions ----
Var sum(const Var& a);
Var mean(const Var& a);
Var mse(const Var& a, const Var& b);
// sum_i a_i * w_i with constant weights.
Var weighted_sum(const Var& a, const FeatureGrid& weights);

// ---- layout ----
Var concat_channels(std::span<const Var> parts);
Var slice_channels(const Var& a, int begin, int count);
Var global_avg_pool(const Var& a);
Var upsample_nearest(const Var& a, int factor);

// ---- convolution and sampling ----
// weight shape (k*k, Cin, Cout), bias shape (1,1,Cout) or invalid Var.
// Zero padding k/2; output size ceil(W/stride) x ceil(H/stride).
Var conv2d(const Var& input, const Var& weight, const Var& bias, int kernel, int stride);

// Modulated deformable 3x3: output(x,y,co) = sum_j m_j(x,y) * sum_ci
// bilinear(input, coords_j(x,y))[ci] * weight[j, ci, co]. coords has 18
// channels (x_j, y_j in grid units), modulation 9. Taps are row-major.
Var deform_conv3x3(const Var& input, const Var& weight, const Var& coords,
                   const Var& modulation);

// Samples every F-vector of `grid` at coords (N,1,2) -> (N,1,F).
Var bilinear_sample(const Var& grid, const Var& coords);

// Fixed tap offsets (dx, dy) for plain square and circular 3x3 sampling,
// row-major from the top-left tap.
std::array<std::array<double, 2>, 9> square_offsets();
std::array<std::array<double, 2>, 9> circular_offsets();
// Coordinates (W,H,18) placing every cell's taps at the given offsets.
FeatureGrid offset_coords(int w, int h, const std::array<std::array<double, 2>, 9>& offsets);

// Value-level bilinear interpolation with zero padding.
void bilinear_at(const FeatureGrid& grid, double x, double y, std::span<double> out);

// Applies `fn` independently to every cell, with the local Jacobian obtained
// by forward-mode duals. The inputs are concatenated channel-wise and must
// total NIn channels; aux (optional) supplies constant per-cell data. fn has
// signature void(int x, int y, const Dual<NIn>* in, const double* aux,
// Dual<NIn>* out) and may leave `out` untouched (zeros).
template <int NIn, int NOut, class Fn>
Var map_cells(std::span<const Var> inputs, const FeatureGrid* aux, Fn fn);

}  // namespace tsconv::ad

#include "tsconv/autodiff_impl.hpp"
