#include "tsconv/cs_conv.hpp"

#include <cmath>
#include <numbers>

namespace tsconv::cs {

std::array<double, 4> corner_weights() {
  const double r2 = std::numbers::sqrt2;
  return {0.5, (r2 - 1.0) / 2.0, (r2 - 1.0) / 2.0, (3.0 - 2.0 * r2) / 2.0};
}

Kernel3x3 circularize(const Kernel3x3& square) {
  const auto w = corner_weights();
  Kernel3x3 out = square;
  for (const auto& st : kCornerStencils) {
    out.k[st.corner] = w[0] * square.k[st.corner] + w[1] * square.k[st.edge_a] +
                       w[2] * square.k[st.edge_b] + w[3] * square.k[4];
  }
  out.circular = true;
  return out;
}

namespace {

int wrap8(int k) { return ((k % 8) + 8) % 8; }

// Position that tap t moves to under a clockwise rotation by k steps.
int rotated_index(int t, int k) {
  if (t == 4) return 4;
  for (int p = 0; p < 8; ++p) {
    if (kOuterRing[p] == t) return kOuterRing[(p + k) % 8];
  }
  return t;
}

}  // namespace

Kernel3x3 rotate_kernel(const Kernel3x3& kernel, int k) {
  k = wrap8(k);
  if (k % 2 == 1 && !kernel.circular) {
    throw ContractError("rotate_kernel: odd rotation of a square kernel");
  }
  Kernel3x3 out;
  out.circular = kernel.circular;
  for (int t = 0; t < 9; ++t) out.k[rotated_index(t, k)] = kernel.k[t];
  return out;
}

Kernel3x3 fuse_kernels(const Kernel3x3& square_rot, const Kernel3x3& circular_rot,
                       const std::array<double, 4>& lambda, int k) {
  k = wrap8(k);
  if (k % 2 == 1) return circular_rot;
  const double lam = lambda[k / 2];
  Kernel3x3 out;
  for (int t = 0; t < 9; ++t) out.k[t] = lam * circular_rot.k[t] + (1.0 - lam) * square_rot.k[t];
  return out;
}

DckBank DckBank::build(const Kernel3x3& square, const std::array<double, 4>& lambda,
                       const std::array<double, 8>& beta) {
  DckBank bank;
  bank.square = square;
  bank.square.circular = false;
  bank.circular = circularize(square);
  bank.lambda = lambda;
  double total = 0.0;
  for (double b : beta) {
    if (b < 0.0) throw ContractError("DckBank: negative orientation weight");
    total += b;
  }
  if (!(total > 0.0)) throw ContractError("DckBank: orientation weights sum to zero");
  for (int k = 0; k < 8; ++k) bank.beta[k] = beta[k] / total;
  for (int k = 0; k < 8; ++k) {
    const Kernel3x3 circ = rotate_kernel(bank.circular, k);
    const Kernel3x3 sq = k % 2 == 0 ? rotate_kernel(bank.square, k) : circ;
    bank.fused[k] = fuse_kernels(sq, circ, lambda, k);
  }
  return bank;
}

Kernel3x3 DckBank::effective() const {
  Kernel3x3 out;
  for (int k = 0; k < 8; ++k) {
    for (int t = 0; t < 9; ++t) out.k[t] += beta[k] * fused[k].k[t];
  }
  return out;
}

ClsSamplePlan cls_sample_points(const MERect& merect, const std::array<double, 18>& omega) {
  ClsSamplePlan plan;
  plan.omega = omega;
  for (int i = 0; i < 9; ++i) plan.points[i] = cls_point<double>(merect, omega[2 * i], omega[2 * i + 1]);
  return plan;
}

ad::Var dck_effective_kernel(const ad::Var& kernel, const ad::Var& lambda, const ad::Var& beta) {
  const Shape ks = kernel.shape();
  if (ks.w != 9) throw ShapeError("dck_effective_kernel: kernel must have 9 taps, got " + ks.str());
  if (lambda.value().size() != 4) throw ShapeError("dck_effective_kernel: lambda needs 4 values");
  if (beta.value().size() != 8) throw ShapeError("dck_effective_kernel: beta needs 8 values");
  const int pairs = ks.h * ks.f;  // (ci, co) combinations, stride ks.f between taps
  const int cout = ks.f;
  const auto cw = corner_weights();
  auto circ = [&cw](const double* kv, double* out) {
    for (int t = 0; t < 9; ++t) out[t] = kv[t];
    for (const auto& st : kCornerStencils) {
      out[st.corner] = cw[0] * kv[st.corner] + cw[1] * kv[st.edge_a] + cw[2] * kv[st.edge_b] +
                       cw[3] * kv[4];
    }
  };
  std::array<std::array<int, 9>, 8> rot{};
  for (int k = 0; k < 8; ++k) {
    for (int t = 0; t < 9; ++t) rot[k][t] = rotated_index(t, k);
  }

  FeatureGrid out(ks);
  const auto& K = kernel.value();
  const auto& lam = lambda.value();
  const auto& bet = beta.value();
  for (int p = 0; p < pairs; ++p) {
    const int ci = p / cout, co = p % cout;
    double kv[9], cv[9];
    for (int t = 0; t < 9; ++t) kv[t] = K[(static_cast<std::size_t>(ci) * 9 + t) * cout + co];
    circ(kv, cv);
    double acc[9] = {};
    for (int k = 0; k < 8; ++k) {
      for (int t = 0; t < 9; ++t) {
        const double base = k % 2 == 0 ? lam[k / 2] * cv[t] + (1.0 - lam[k / 2]) * kv[t] : cv[t];
        acc[rot[k][t]] += bet[k] * base;
      }
    }
    for (int t = 0; t < 9; ++t) out[(static_cast<std::size_t>(ci) * 9 + t) * cout + co] = acc[t];
  }

  return kernel.tape()->record(
      std::move(out), {kernel, lambda, beta},
      [kernel, lambda, beta, pairs, cout, cw, rot](ad::Tape& t, std::span<const double> g) {
        const auto& K = kernel.value();
        const auto& lam = lambda.value();
        const auto& bet = beta.value();
        double* gk = t.requires_grad(kernel) ? t.grad_buffer(kernel).data() : nullptr;
        double* gl = t.requires_grad(lambda) ? t.grad_buffer(lambda).data() : nullptr;
        double* gbeta = t.requires_grad(beta) ? t.grad_buffer(beta).data() : nullptr;
        for (int p = 0; p < pairs; ++p) {
          const int ci = p / cout, co = p % cout;
          double kv[9], cv[9], gout[9];
          for (int tp = 0; tp < 9; ++tp) {
            const std::size_t idx = (static_cast<std::size_t>(ci) * 9 + tp) * cout + co;
            kv[tp] = K[idx];
            gout[tp] = g[idx];
          }
          for (int tp = 0; tp < 9; ++tp) cv[tp] = kv[tp];
          for (const auto& st : kCornerStencils) {
            cv[st.corner] = cw[0] * kv[st.corner] + cw[1] * kv[st.edge_a] +
                            cw[2] * kv[st.edge_b] + cw[3] * kv[4];
          }
          double gkv[9] = {}, gcv[9] = {};
          for (int k = 0; k < 8; ++k) {
            const bool even = k % 2 == 0;
            const double l = even ? lam[k / 2] : 1.0;
            for (int tp = 0; tp < 9; ++tp) {
              const double gb = gout[rot[k][tp]];
              const double base = even ? l * cv[tp] + (1.0 - l) * kv[tp] : cv[tp];
              if (gbeta) gbeta[k] += gb * base;
              const double gbase = bet[k] * gb;
              if (even) {
                if (gl) gl[k / 2] += gbase * (cv[tp] - kv[tp]);
                gkv[tp] += (1.0 - l) * gbase;
                gcv[tp] += l * gbase;
              } else {
                gcv[tp] += gbase;
              }
            }
          }
          if (!gk) continue;
          // transpose of the circularization map
          for (int tp = 0; tp < 9; ++tp) gkv[tp] += gcv[tp];
          for (const auto& st : kCornerStencils) {
            const double gc = gcv[st.corner];
            gkv[st.corner] += (cw[0] - 1.0) * gc;
            gkv[st.edge_a] += cw[1] * gc;
            gkv[st.edge_b] += cw[2] * gc;
            gkv[4] += cw[3] * gc;
          }
          for (int tp = 0; tp < 9; ++tp) gk[(static_cast<std::size_t>(ci) * 9 + tp) * cout + co] += gkv[tp];
        }
      });
}

ad::Var cls_plan_coords(const ad::Var& omega, const FeatureGrid& merects,
                        const PositionSet& positives, double stride) {
  const Shape s = omega.shape();
  if (positives.width() != s.w || positives.height() != s.h) {
    throw ShapeError("cls_plan_coords: positive set does not match grid " + s.str());
  }
  if (merects.channels() != 5) throw ShapeError("cls_plan_coords: MERect aux needs 5 channels");
  const auto offsets = ad::circular_offsets();
  const ad::Var inputs[] = {omega};
  using D = Dual<18>;
  return ad::map_cells<18, 18>(inputs, &merects, [&](int x, int y, const D* in, const double* aux, D* out) {
    if (!positives.contains(x, y)) {
      for (int j = 0; j < 9; ++j) {
        out[2 * j] = D(x + offsets[j][0]);
        out[2 * j + 1] = D(y + offsets[j][1]);
      }
      return;
    }
    MERect r;
    r.center = {aux[0], aux[1]};
    r.long_side = aux[2];
    r.short_side = aux[3];
    r.angle = aux[4];
    for (int j = 0; j < 9; ++j) {
      const auto p = cls_point<D>(r, in[2 * j], in[2 * j + 1]);
      out[2 * j] = p.x / stride - 0.5;
      out[2 * j + 1] = p.y / stride - 0.5;
    }
  });
}

FeatureGrid assemble_cls_coords(const std::vector<CellClsPlan>& plans, const PositionSet& positives,
                                double stride) {
  const int w = positives.width(), h = positives.height();
  FeatureGrid coords = ad::offset_coords(w, h, ad::circular_offsets());
  PositionSet seen(w, h);
  for (const auto& cp : plans) {
    if (cp.cell.x < 0 || cp.cell.y < 0 || cp.cell.x >= w || cp.cell.y >= h ||
        !positives.contains(cp.cell.x, cp.cell.y)) {
      throw ContractError("cs_conv: sample plan at non-positive cell");
    }
    seen.insert(cp.cell.x, cp.cell.y);
    double* c = coords.cell(cp.cell.x, cp.cell.y);
    for (int j = 0; j < 9; ++j) {
      c[2 * j] = to_grid(cp.plan.points[j].x, stride);
      c[2 * j + 1] = to_grid(cp.plan.points[j].y, stride);
    }
  }
  if (seen.count() != positives.count()) {
    throw ContractError("cs_conv: positive cell without a sample plan");
  }
  return coords;
}

ad::Var cs_conv_forward(const ad::Var& grid, const ad::Var& kernel, const ad::Var& lambda,
                        const ad::Var& beta, const ad::Var& coords, const ad::Var& modulation) {
  return ad::deform_conv3x3(grid, dck_effective_kernel(kernel, lambda, beta), coords, modulation);
}

}  // namespace tsconv::cs
