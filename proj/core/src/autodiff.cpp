#include "tsconv/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace tsconv::ad {

// ---- Var / Tape ----

const FeatureGrid& Var::value() const {
  if (!tape_) throw ContractError("Var: use of an empty variable");
  return tape_->value(*this);
}

std::vector<double> Var::grad() const { return tape_->grad(*this); }

bool Var::requires_grad() const { return tape_ && tape_->requires_grad(*this); }

double Var::scalar() const {
  const auto& v = value();
  if (v.size() != 1) throw ContractError("Var::scalar on shape " + v.shape().str());
  return v[0];
}

Tape::Node& Tape::node(const Var& v) {
  if (v.tape_ != this || v.id_ < 0 || static_cast<std::size_t>(v.id_) >= nodes_.size()) {
    throw ContractError("Tape: variable belongs to another tape");
  }
  return nodes_[static_cast<std::size_t>(v.id_)];
}

const Tape::Node& Tape::node(const Var& v) const {
  return const_cast<Tape*>(this)->node(v);
}

Var Tape::leaf(FeatureGrid value, bool requires_grad) {
  nodes_.push_back(Node{std::move(value), {}, requires_grad, {}});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::record(FeatureGrid value, std::span<const Var> parents, BackwardFn backward) {
  bool needs = false;
  for (const auto& p : parents) {
    if (p.valid() && node(p).requires_grad) needs = true;
  }
  nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(backward) : BackwardFn{}});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

std::vector<double>& Tape::grad_buffer(const Var& v) {
  Node& n = node(v);
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

std::vector<double> Tape::grad(const Var& v) const {
  const Node& n = node(v);
  if (n.grad.empty()) return std::vector<double>(n.value.size(), 0.0);
  return n.grad;
}

void Tape::backward(const Var& loss) {
  Node& root = node(loss);
  if (root.value.size() != 1) {
    throw ContractError("backward: loss must be a scalar, got shape " + root.value.shape().str());
  }
  for (auto& n : nodes_) n.grad.clear();
  if (!root.requires_grad) return;
  root.grad.assign(1, 1.0);
  for (int i = loss.id(); i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.backward && !n.grad.empty()) n.backward(*this, n.grad);
  }
}

namespace {

void require_same(const Var& a, const Var& b, const char* op) {
  if (a.tape() != b.tape()) throw ContractError(std::string(op) + ": operands on different tapes");
  if (!(a.shape() == b.shape())) {
    throw ShapeError(std::string(op) + ": " + a.shape().str() + " vs " + b.shape().str());
  }
}

// Unary elementwise op with derivative expressed via input x and output y.
template <class F, class D>
Var unary(const Var& a, F f, D dfdx) {
  const FeatureGrid& av = a.value();
  FeatureGrid out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  Tape* t = a.tape();
  Var res;
  res = t->record(std::move(out), {a}, [a, dfdx](Tape& tp, std::span<const double> g) {
    const FeatureGrid& x = a.value();
    auto& ga = tp.grad_buffer(a);
    for (std::size_t i = 0; i < x.size(); ++i) ga[i] += g[i] * dfdx(x[i]);
  });
  return res;
}

}  // namespace

// ---- elementwise ----

Var add(const Var& a, const Var& b) {
  require_same(a, b, "add");
  FeatureGrid out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, std::span<const double> g) {
    for (const Var* v : {&a, &b}) {
      if (!t.requires_grad(*v)) continue;
      auto& gv = t.grad_buffer(*v);
      for (std::size_t i = 0; i < g.size(); ++i) gv[i] += g[i];
    }
  });
}

Var sub(const Var& a, const Var& b) { return add(a, scale(b, -1.0)); }

Var mul(const Var& a, const Var& b) {
  require_same(a, b, "mul");
  FeatureGrid out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, std::span<const double> g) {
    if (t.requires_grad(a)) {
      auto& ga = t.grad_buffer(a);
      const auto& bv = b.value();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.requires_grad(b)) {
      auto& gb = t.grad_buffer(b);
      const auto& av = a.value();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var scale(const Var& a, double s) {
  return unary(a, [s](double x) { return s * x; }, [s](double) { return s; });
}

Var add_scalar(const Var& a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double) { return 1.0; });
}

Var exp(const Var& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double x) { return std::exp(x); });
}

Var log(const Var& a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x) { return 1.0 / x; });
}

namespace {
double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}
}  // namespace

Var sigmoid(const Var& a) {
  return unary(a, logistic, [](double x) {
    const double s = logistic(x);
    return s * (1.0 - s);
  });
}

Var relu(const Var& a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Var leaky_relu(const Var& a, double slope) {
  return unary(a, [slope](double x) { return x > 0.0 ? x : slope * x; },
               [slope](double x) { return x > 0.0 ? 1.0 : slope; });
}

Var square(const Var& a) {
  return unary(a, [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

Var softmax_channels(const Var& a) {
  const FeatureGrid& av = a.value();
  const int f = av.channels();
  FeatureGrid out(av.shape());
  for (std::size_t c = 0; c < av.shape().cells(); ++c) {
    const double* in = av.data().data() + c * f;
    double* o = out.data().data() + c * f;
    const double mx = *std::max_element(in, in + f);
    double z = 0.0;
    for (int k = 0; k < f; ++k) z += (o[k] = std::exp(in[k] - mx));
    for (int k = 0; k < f; ++k) o[k] /= z;
  }
  FeatureGrid saved = out;
  return a.tape()->record(std::move(out), {a},
                          [a, saved = std::move(saved), f](Tape& t, std::span<const double> g) {
                            auto& ga = t.grad_buffer(a);
                            for (std::size_t c = 0; c < saved.shape().cells(); ++c) {
                              const double* y = saved.data().data() + c * f;
                              const double* gy = g.data() + c * f;
                              double dotp = 0.0;
                              for (int k = 0; k < f; ++k) dotp += y[k] * gy[k];
                              for (int k = 0; k < f; ++k) ga[c * f + k] += y[k] * (gy[k] - dotp);
                            }
                          });
}

Var detach(const Var& a) { return a.tape()->constant(a.value()); }

// ---- reductions ----

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return a.tape()->record(FeatureGrid({1, 1, 1}, s), {a}, [a](Tape& t, std::span<const double> g) {
    auto& ga = t.grad_buffer(a);
    for (auto& x : ga) x += g[0];
  });
}

Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var mse(const Var& a, const Var& b) { return mean(square(sub(a, b))); }

Var weighted_sum(const Var& a, const FeatureGrid& weights) {
  if (!(weights.shape() == a.shape())) {
    throw ShapeError("weighted_sum: " + a.shape().str() + " vs " + weights.shape().str());
  }
  double s = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) s += a.value()[i] * weights[i];
  return a.tape()->record(FeatureGrid({1, 1, 1}, s), {a},
                          [a, weights](Tape& t, std::span<const double> g) {
                            auto& ga = t.grad_buffer(a);
                            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0] * weights[i];
                          });
}

// ---- layout ----

Var concat_channels(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_channels: no inputs");
  const Shape base = parts.front().shape();
  int total = 0;
  for (const auto& p : parts) {
    if (p.shape().w != base.w || p.shape().h != base.h) {
      throw ShapeError("concat_channels: " + p.shape().str() + " vs " + base.str());
    }
    total += p.shape().f;
  }
  FeatureGrid out({base.w, base.h, total});
  const std::size_t cells = base.cells();
  int off = 0;
  for (const auto& p : parts) {
    const int f = p.shape().f;
    const auto& pv = p.value().data();
    for (std::size_t c = 0; c < cells; ++c) {
      std::copy_n(pv.data() + c * f, f, out.data().data() + c * total + off);
    }
    off += f;
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return parts.front().tape()->record(
      std::move(out), std::span<const Var>(ps), [ps, total, cells](Tape& t, std::span<const double> g) {
        int o = 0;
        for (const auto& p : ps) {
          const int f = p.shape().f;
          if (t.requires_grad(p)) {
            auto& gp = t.grad_buffer(p);
            for (std::size_t c = 0; c < cells; ++c) {
              for (int k = 0; k < f; ++k) gp[c * f + k] += g[c * total + o + k];
            }
          }
          o += f;
        }
      });
}

Var slice_channels(const Var& a, int begin, int count) {
  const Shape s = a.shape();
  if (begin < 0 || count <= 0 || begin + count > s.f) {
    throw ShapeError("slice_channels: [" + std::to_string(begin) + "," +
                     std::to_string(begin + count) + ") out of " + s.str());
  }
  FeatureGrid out({s.w, s.h, count});
  for (std::size_t c = 0; c < s.cells(); ++c) {
    std::copy_n(a.value().data().data() + c * s.f + begin, count, out.data().data() + c * count);
  }
  return a.tape()->record(std::move(out), {a}, [a, begin, count, s](Tape& t, std::span<const double> g) {
    auto& ga = t.grad_buffer(a);
    for (std::size_t c = 0; c < s.cells(); ++c) {
      for (int k = 0; k < count; ++k) ga[c * s.f + begin + k] += g[c * count + k];
    }
  });
}

Var global_avg_pool(const Var& a) {
  const Shape s = a.shape();
  FeatureGrid out({1, 1, s.f});
  const double inv = 1.0 / static_cast<double>(s.cells());
  for (std::size_t c = 0; c < s.cells(); ++c) {
    for (int k = 0; k < s.f; ++k) out[k] += a.value()[c * s.f + k] * inv;
  }
  return a.tape()->record(std::move(out), {a}, [a, s, inv](Tape& t, std::span<const double> g) {
    auto& ga = t.grad_buffer(a);
    for (std::size_t c = 0; c < s.cells(); ++c) {
      for (int k = 0; k < s.f; ++k) ga[c * s.f + k] += g[k] * inv;
    }
  });
}

Var upsample_nearest(const Var& a, int factor) {
  const Shape s = a.shape();
  const Shape o{s.w * factor, s.h * factor, s.f};
  FeatureGrid out(o);
  for (int y = 0; y < o.h; ++y) {
    for (int x = 0; x < o.w; ++x) {
      std::copy_n(a.value().cell(x / factor, y / factor), s.f, out.cell(x, y));
    }
  }
  return a.tape()->record(std::move(out), {a}, [a, s, o, factor](Tape& t, std::span<const double> g) {
    auto& ga = t.grad_buffer(a);
    for (int y = 0; y < o.h; ++y) {
      for (int x = 0; x < o.w; ++x) {
        const std::size_t src = (static_cast<std::size_t>(y / factor) * s.w + x / factor) * s.f;
        const std::size_t dst = (static_cast<std::size_t>(y) * o.w + x) * s.f;
        for (int k = 0; k < s.f; ++k) ga[src + k] += g[dst + k];
      }
    }
  });
}

// ---- convolution ----

Var conv2d(const Var& input, const Var& weight, const Var& bias, int kernel, int stride) {
  const Shape is = input.shape();
  const Shape ws = weight.shape();
  if (kernel != 1 && kernel != 3) throw ShapeError("conv2d: kernel must be 1 or 3");
  if (ws.w != kernel * kernel || ws.h != is.f) {
    throw ShapeError("conv2d: weight " + ws.str() + " incompatible with input " + is.str());
  }
  const int cout = ws.f;
  if (bias.valid() && bias.shape() != Shape{1, 1, cout}) {
    throw ShapeError("conv2d: bias shape " + bias.shape().str());
  }
  const int pad = kernel / 2;
  const int ow = (is.w + stride - 1) / stride;
  const int oh = (is.h + stride - 1) / stride;
  const int taps = kernel * kernel;
  const int cin = is.f;
  FeatureGrid out({ow, oh, cout});
  const double* in = input.value().data().data();
  const double* w = weight.value().data().data();
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      double* o = out.cell(ox, oy);
      if (bias.valid()) std::copy_n(bias.value().data().data(), cout, o);
      for (int ky = 0; ky < kernel; ++ky) {
        const int iy = oy * stride + ky - pad;
        if (iy < 0 || iy >= is.h) continue;
        for (int kx = 0; kx < kernel; ++kx) {
          const int ix = ox * stride + kx - pad;
          if (ix < 0 || ix >= is.w) continue;
          const int tap = ky * kernel + kx;
          const double* src = in + (static_cast<std::size_t>(iy) * is.w + ix) * cin;
          for (int ci = 0; ci < cin; ++ci) {
            const double v = src[ci];
            if (v == 0.0) continue;
            const double* wr = w + (static_cast<std::size_t>(ci) * taps + tap) * cout;
            for (int co = 0; co < cout; ++co) o[co] += v * wr[co];
          }
        }
      }
    }
  }
  std::vector<Var> parents{input, weight};
  if (bias.valid()) parents.push_back(bias);
  return input.tape()->record(
      std::move(out), std::span<const Var>(parents),
      [input, weight, bias, kernel, stride, pad, ow, oh, taps, cin, cout, is](
          Tape& t, std::span<const double> g) {
        const double* inv = input.value().data().data();
        const double* wv = weight.value().data().data();
        double* gi = t.requires_grad(input) ? t.grad_buffer(input).data() : nullptr;
        double* gw = t.requires_grad(weight) ? t.grad_buffer(weight).data() : nullptr;
        double* gb = bias.valid() && t.requires_grad(bias) ? t.grad_buffer(bias).data() : nullptr;
        for (int oy = 0; oy < oh; ++oy) {
          for (int ox = 0; ox < ow; ++ox) {
            const double* go = g.data() + (static_cast<std::size_t>(oy) * ow + ox) * cout;
            if (gb) {
              for (int co = 0; co < cout; ++co) gb[co] += go[co];
            }
            for (int ky = 0; ky < kernel; ++ky) {
              const int iy = oy * stride + ky - pad;
              if (iy < 0 || iy >= is.h) continue;
              for (int kx = 0; kx < kernel; ++kx) {
                const int ix = ox * stride + kx - pad;
                if (ix < 0 || ix >= is.w) continue;
                const int tap = ky * kernel + kx;
                const std::size_t base = (static_cast<std::size_t>(iy) * is.w + ix) * cin;
                for (int ci = 0; ci < cin; ++ci) {
                  const std::size_t wr = (static_cast<std::size_t>(ci) * taps + tap) * cout;
                  if (gi) {
                    double acc = 0.0;
                    for (int co = 0; co < cout; ++co) acc += wv[wr + co] * go[co];
                    gi[base + ci] += acc;
                  }
                  if (gw) {
                    const double v = inv[base + ci];
                    if (v != 0.0) {
                      for (int co = 0; co < cout; ++co) gw[wr + co] += v * go[co];
                    }
                  }
                }
              }
            }
          }
        }
      });
}

namespace {

struct BilinearTap {
  int x0, y0;
  double fx, fy;
  // corner order: (x0,y0), (x0+1,y0), (x0,y0+1), (x0+1,y0+1)
  std::array<double, 4> w;
  std::array<double, 4> dwdx;
  std::array<double, 4> dwdy;
  std::array<bool, 4> inside;
  std::array<std::size_t, 4> cell;
};

BilinearTap make_tap(double x, double y, int w, int h) {
  BilinearTap b;
  const double fx0 = std::floor(x), fy0 = std::floor(y);
  b.x0 = static_cast<int>(fx0);
  b.y0 = static_cast<int>(fy0);
  b.fx = x - fx0;
  b.fy = y - fy0;
  b.w = {(1 - b.fx) * (1 - b.fy), b.fx * (1 - b.fy), (1 - b.fx) * b.fy, b.fx * b.fy};
  b.dwdx = {-(1 - b.fy), (1 - b.fy), -b.fy, b.fy};
  b.dwdy = {-(1 - b.fx), -b.fx, (1 - b.fx), b.fx};
  const int cx[4] = {b.x0, b.x0 + 1, b.x0, b.x0 + 1};
  const int cy[4] = {b.y0, b.y0, b.y0 + 1, b.y0 + 1};
  for (int k = 0; k < 4; ++k) {
    b.inside[k] = cx[k] >= 0 && cx[k] < w && cy[k] >= 0 && cy[k] < h;
    b.cell[k] = b.inside[k] ? static_cast<std::size_t>(cy[k]) * w + cx[k] : 0;
  }
  return b;
}

void sample_tap(const BilinearTap& b, const double* grid, int f, double* out) {
  std::fill_n(out, f, 0.0);
  for (int k = 0; k < 4; ++k) {
    if (!b.inside[k] || b.w[k] == 0.0) continue;
    const double* src = grid + b.cell[k] * f;
    for (int c = 0; c < f; ++c) out[c] += b.w[k] * src[c];
  }
}

}  // namespace

void bilinear_at(const FeatureGrid& grid, double x, double y, std::span<double> out) {
  const auto tap = make_tap(x, y, grid.width(), grid.height());
  sample_tap(tap, grid.data().data(), grid.channels(), out.data());
}

std::array<std::array<double, 2>, 9> square_offsets() {
  std::array<std::array<double, 2>, 9> o;
  for (int j = 0; j < 9; ++j) o[j] = {static_cast<double>(j % 3 - 1), static_cast<double>(j / 3 - 1)};
  return o;
}

std::array<std::array<double, 2>, 9> circular_offsets() {
  const double r = std::numbers::sqrt2 / 2.0;
  auto o = square_offsets();
  for (int j : {0, 2, 6, 8}) o[j] = {o[j][0] * r, o[j][1] * r};
  return o;
}

FeatureGrid offset_coords(int w, int h, const std::array<std::array<double, 2>, 9>& offsets) {
  FeatureGrid c({w, h, 18});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double* p = c.cell(x, y);
      for (int j = 0; j < 9; ++j) {
        p[2 * j] = x + offsets[j][0];
        p[2 * j + 1] = y + offsets[j][1];
      }
    }
  }
  return c;
}

Var deform_conv3x3(const Var& input, const Var& weight, const Var& coords, const Var& modulation) {
  const Shape is = input.shape();
  const Shape ws = weight.shape();
  if (ws.w != 9 || ws.h != is.f) {
    throw ShapeError("deform_conv3x3: weight " + ws.str() + " incompatible with input " + is.str());
  }
  if (coords.shape() != Shape{is.w, is.h, 18}) {
    throw ShapeError("deform_conv3x3: coords shape " + coords.shape().str());
  }
  if (modulation.shape() != Shape{is.w, is.h, 9}) {
    throw ShapeError("deform_conv3x3: modulation shape " + modulation.shape().str());
  }
  const int cin = is.f, cout = ws.f;
  FeatureGrid out({is.w, is.h, cout});
  const double* in = input.value().data().data();
  const double* w = weight.value().data().data();
  std::vector<double> s(cin);
  for (int y = 0; y < is.h; ++y) {
    for (int x = 0; x < is.w; ++x) {
      const double* c = coords.value().cell(x, y);
      const double* m = modulation.value().cell(x, y);
      double* o = out.cell(x, y);
      for (int j = 0; j < 9; ++j) {
        if (m[j] == 0.0) continue;
        const auto tap = make_tap(c[2 * j], c[2 * j + 1], is.w, is.h);
        sample_tap(tap, in, cin, s.data());
        for (int ci = 0; ci < cin; ++ci) {
          const double v = m[j] * s[ci];
          if (v == 0.0) continue;
          const double* wr = w + (static_cast<std::size_t>(ci) * 9 + j) * cout;
          for (int co = 0; co < cout; ++co) o[co] += v * wr[co];
        }
      }
    }
  }
  return input.tape()->record(
      std::move(out), {input, weight, coords, modulation},
      [input, weight, coords, modulation, is, cin, cout](Tape& t, std::span<const double> g) {
        const double* inv = input.value().data().data();
        const double* wv = weight.value().data().data();
        double* gi = t.requires_grad(input) ? t.grad_buffer(input).data() : nullptr;
        double* gw = t.requires_grad(weight) ? t.grad_buffer(weight).data() : nullptr;
        double* gc = t.requires_grad(coords) ? t.grad_buffer(coords).data() : nullptr;
        double* gm = t.requires_grad(modulation) ? t.grad_buffer(modulation).data() : nullptr;
        std::vector<double> s(cin), tv(cin);
        for (int y = 0; y < is.h; ++y) {
          for (int x = 0; x < is.w; ++x) {
            const std::size_t cell = static_cast<std::size_t>(y) * is.w + x;
            const double* go = g.data() + cell * cout;
            const double* c = coords.value().cell(x, y);
            const double* m = modulation.value().cell(x, y);
            for (int j = 0; j < 9; ++j) {
              const auto tap = make_tap(c[2 * j], c[2 * j + 1], is.w, is.h);
              sample_tap(tap, inv, cin, s.data());
              for (int ci = 0; ci < cin; ++ci) {
                const double* wr = wv + (static_cast<std::size_t>(ci) * 9 + j) * cout;
                double acc = 0.0;
                for (int co = 0; co < cout; ++co) acc += wr[co] * go[co];
                tv[ci] = acc;
              }
              if (gm) {
                double acc = 0.0;
                for (int ci = 0; ci < cin; ++ci) acc += s[ci] * tv[ci];
                gm[cell * 9 + j] += acc;
              }
              if (gw && m[j] != 0.0) {
                for (int ci = 0; ci < cin; ++ci) {
                  const double v = m[j] * s[ci];
                  if (v == 0.0) continue;
                  double* gwr = gw + (static_cast<std::size_t>(ci) * 9 + j) * cout;
                  for (int co = 0; co < cout; ++co) gwr[co] += v * go[co];
                }
              }
              if (m[j] == 0.0) continue;
              if (gi) {
                for (int k = 0; k < 4; ++k) {
                  if (!tap.inside[k] || tap.w[k] == 0.0) continue;
                  double* dst = gi + tap.cell[k] * cin;
                  const double wk = m[j] * tap.w[k];
                  for (int ci = 0; ci < cin; ++ci) dst[ci] += wk * tv[ci];
                }
              }
              if (gc) {
                double dx = 0.0, dy = 0.0;
                for (int k = 0; k < 4; ++k) {
                  if (!tap.inside[k]) continue;
                  const double* src = inv + tap.cell[k] * cin;
                  double acc = 0.0;
                  for (int ci = 0; ci < cin; ++ci) acc += src[ci] * tv[ci];
                  dx += tap.dwdx[k] * acc;
                  dy += tap.dwdy[k] * acc;
                }
                gc[cell * 18 + 2 * j] += m[j] * dx;
                gc[cell * 18 + 2 * j + 1] += m[j] * dy;
              }
            }
          }
        }
      });
}

Var bilinear_sample(const Var& grid, const Var& coords) {
  const Shape gs = grid.shape();
  const Shape cs = coords.shape();
  if (cs.f != 2 || cs.h != 1) throw ShapeError("bilinear_sample: coords must be (N,1,2)");
  const int n = cs.w, f = gs.f;
  FeatureGrid out({n, 1, f});
  for (int i = 0; i < n; ++i) {
    const auto tap = make_tap(coords.value()[2 * i], coords.value()[2 * i + 1], gs.w, gs.h);
    sample_tap(tap, grid.value().data().data(), f, out.cell(i, 0));
  }
  return grid.tape()->record(std::move(out), {grid, coords},
                             [grid, coords, gs, n, f](Tape& t, std::span<const double> g) {
                               double* gg = t.requires_grad(grid) ? t.grad_buffer(grid).data() : nullptr;
                               double* gc = t.requires_grad(coords) ? t.grad_buffer(coords).data() : nullptr;
                               const double* gv = grid.value().data().data();
                               for (int i = 0; i < n; ++i) {
                                 const auto tap = make_tap(coords.value()[2 * i],
                                                           coords.value()[2 * i + 1], gs.w, gs.h);
                                 const double* go = g.data() + static_cast<std::size_t>(i) * f;
                                 for (int k = 0; k < 4; ++k) {
                                   if (!tap.inside[k]) continue;
                                   const double* src = gv + tap.cell[k] * f;
                                   double acc = 0.0;
                                   for (int c = 0; c < f; ++c) {
                                     acc += src[c] * go[c];
                                     if (gg) gg[tap.cell[k] * f + c] += tap.w[k] * go[c];
                                   }
                                   if (gc) {
                                     gc[2 * i] += tap.dwdx[k] * acc;
                                     gc[2 * i + 1] += tap.dwdy[k] * acc;
                                   }
                                 }
                               }
                             });
}

}  // namespace tsconv::ad
