#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "entrack/params.hpp"
#include "entrack/tensor.hpp"

namespace entrack {

// Gated recurrent unit, three gates with input and recurrent weights plus
// biases:
//   z = sigmoid(Wz x + Uz h + bz)
//   r = sigmoid(Wr x + Ur h + br)
//   c = tanh(Wc x + Uc (r * h) + bc)
//   h' = (1 - z) * h + z * c
struct GruRefs {
  Tensor Wz, Uz, bz;
  Tensor Wr, Ur, br;
  Tensor Wc, Uc, bc;
};

inline void add_gru_params(ParamStore& store, const std::string& prefix,
                           int hidden, int input, Rng& rng) {
  double rw = 1.0 / std::sqrt(static_cast<double>(input));
  double ru = 1.0 / std::sqrt(static_cast<double>(hidden));
  for (const char* gate : {"z", "r", "c"}) {
    store.add_uniform(prefix + ".W" + gate, {hidden, input}, rng, rw);
    store.add_uniform(prefix + ".U" + gate, {hidden, hidden}, rng, ru);
    store.add(prefix + ".b" + gate, {hidden});
  }
}

inline GruRefs bind_gru(const ParamStore& store, const BoundParams& bound,
                        const std::string& prefix) {
  auto get = [&](const std::string& suffix) {
    return bound.leaves[store.index_of(prefix + suffix)];
  };
  return GruRefs{get(".Wz"), get(".Uz"), get(".bz"), get(".Wr"), get(".Ur"),
                 get(".br"), get(".Wc"), get(".Uc"), get(".bc")};
}

inline Tensor gru_step(Tape& t, const GruRefs& g, Tensor x, Tensor h_prev) {
  Tensor z = t.sigmoid(t.add(t.add(t.matmul(g.Wz, x), t.matmul(g.Uz, h_prev)), g.bz));
  Tensor r = t.sigmoid(t.add(t.add(t.matmul(g.Wr, x), t.matmul(g.Ur, h_prev)), g.br));
  Tensor c = t.tanh(t.add(t.add(t.matmul(g.Wc, x), t.matmul(g.Uc, t.mul(r, h_prev))), g.bc));
  Tensor keep = t.affine(z, -1.0, 1.0);  // 1 - z
  return t.add(t.mul(keep, h_prev), t.mul(z, c));
}

// States for every position. out[i] is the state after consuming xs[i]
// (from the left when reverse is false, from the right otherwise). The
// initial state is zero.
inline std::vector<Tensor> gru_run(Tape& t, const GruRefs& g,
                                   std::span<const Tensor> xs, int hidden,
                                   bool reverse = false) {
  std::vector<Tensor> out(xs.size());
  Tensor h = t.constant({hidden}, 0.0);
  if (!reverse) {
    for (size_t i = 0; i < xs.size(); ++i) {
      h = gru_step(t, g, xs[i], h);
      out[i] = h;
    }
  } else {
    for (size_t i = xs.size(); i > 0; --i) {
      h = gru_step(t, g, xs[i - 1], h);
      out[i - 1] = h;
    }
  }
  return out;
}

}  // namespace entrack
