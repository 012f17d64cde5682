#pragma once

#include "dpn/diffcore/ops.hpp"

namespace dpn {

/// Weights of a gated recurrent cell with input size `in` and hidden size `h`.
/// Rows of `w_x`, `w_h` and `bias` are stacked as [reset; update; candidate].
struct GruWeights {
  Value w_x;   // [3h, in]
  Value w_h;   // [3h, h]
  Value bias;  // [3h]
};

/// GRU update:
///   r = sigmoid(Wx_r x + Wh_r h + b_r)
///   u = sigmoid(Wx_u x + Wh_u h + b_u)
///   n = tanh(Wx_n x + b_n + r * (Wh_n h))
///   h' = n + u * (h - n)
/// The output is a convex combination of h and n, so it stays in (-1, 1)
/// whenever h does.
inline Value recurrent_cell(const Value& input, const Value& hidden, const GruWeights& w) {
  const std::size_t h = hidden.size();
  if (w.w_h.shape().size() != 2 || w.w_h.shape()[0] != 3 * h || w.w_h.shape()[1] != h ||
      w.w_x.shape().size() != 2 || w.w_x.shape()[0] != 3 * h || w.w_x.shape()[1] != input.size() ||
      w.bias.size() != 3 * h) {
    throw ContractViolation("recurrent_cell: dimension mismatch (input " + shape_string(input.shape()) +
                            ", hidden " + shape_string(hidden.shape()) + ", w_x " +
                            shape_string(w.w_x.shape()) + ")");
  }
  const Value gx = affine(w.w_x, input, w.bias);
  const Value gh = matvec(w.w_h, hidden);
  const Value r = sigmoid(add(slice(gx, 0, h), slice(gh, 0, h)));
  const Value u = sigmoid(add(slice(gx, h, h), slice(gh, h, h)));
  const Value n = tanh(add(slice(gx, 2 * h, h), mul(r, slice(gh, 2 * h, h))));
  return add(n, mul(u, sub(hidden, n)));
}

}  // namespace dpn
