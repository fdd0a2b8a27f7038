#pragma once

// Template definitions for autodiff.hpp.

#include <memory>

namespace tsconv::ad {

template <int NIn, int NOut, class Fn>
Var map_cells(std::span<const Var> inputs, const FeatureGrid* aux, Fn fn) {
  if (inputs.empty()) throw ContractError("map_cells: no inputs");
  Tape* tape = inputs.front().tape();
  const Shape base = inputs.front().shape();
  int total = 0;
  for (const auto& v : inputs) {
    if (v.shape().w != base.w || v.shape().h != base.h) {
      throw ShapeError("map_cells: spatial mismatch " + v.shape().str() + " vs " + base.str());
    }
    total += v.shape().f;
  }
  if (total != NIn) {
    throw ShapeError("map_cells: expected " + std::to_string(NIn) + " input channels, got " +
                     std::to_string(total));
  }
  if (aux && (aux->width() != base.w || aux->height() != base.h)) {
    throw ShapeError("map_cells: aux spatial mismatch");
  }

  const std::size_t cells = base.cells();
  FeatureGrid out({base.w, base.h, NOut});
  auto jac = std::make_shared<std::vector<double>>(cells * NOut * NIn, 0.0);
  std::array<Dual<NIn>, NIn> in;
  std::array<Dual<NIn>, NOut> res;
  for (int y = 0; y < base.h; ++y) {
    for (int x = 0; x < base.w; ++x) {
      int k = 0;
      for (const auto& v : inputs) {
        const double* c = v.value().cell(x, y);
        for (int i = 0; i < v.shape().f; ++i, ++k) in[k] = Dual<NIn>::variable(c[i], k);
      }
      res.fill(Dual<NIn>());
      fn(x, y, in.data(), aux ? aux->cell(x, y) : nullptr, res.data());
      const std::size_t cell = static_cast<std::size_t>(y) * base.w + x;
      double* o = out.cell(x, y);
      double* j = jac->data() + cell * NOut * NIn;
      for (int r = 0; r < NOut; ++r) {
        o[r] = res[r].v;
        for (int c = 0; c < NIn; ++c) j[r * NIn + c] = res[r].d[c];
      }
    }
  }

  std::vector<Var> parents(inputs.begin(), inputs.end());
  return tape->record(
      std::move(out), std::span<const Var>(parents),
      [parents, jac, cells](Tape& t, std::span<const double> g) {
        std::vector<double*> bufs;
        std::vector<int> widths;
        for (const auto& p : parents) {
          bufs.push_back(t.requires_grad(p) ? t.grad_buffer(p).data() : nullptr);
          widths.push_back(p.shape().f);
        }
        std::array<double, NIn> gin;
        for (std::size_t cell = 0; cell < cells; ++cell) {
          gin.fill(0.0);
          const double* j = jac->data() + cell * NOut * NIn;
          const double* go = g.data() + cell * NOut;
          bool any = false;
          for (int r = 0; r < NOut; ++r) {
            if (go[r] == 0.0) continue;
            any = true;
            for (int c = 0; c < NIn; ++c) gin[c] += go[r] * j[r * NIn + c];
          }
          if (!any) continue;
          int k = 0;
          for (std::size_t p = 0; p < bufs.size(); ++p) {
            if (bufs[p]) {
              double* b = bufs[p] + cell * widths[p];
              for (int i = 0; i < widths[p]; ++i) b[i] += gin[k + i];
            }
            k += widths[p];
          }
        }
      });
}

}  // namespace tsconv::ad
