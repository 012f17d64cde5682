#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <limits>
#include <vector>

#include "dpn/diffcore/value.hpp"

namespace dpn {

namespace detail {

inline void require_same_size(const Value& a, const Value& b, const char* op) {
  if (a.size() != b.size()) {
    throw ContractViolation(std::string(op) + ": size mismatch " + shape_string(a.shape()) +
                            " vs " + shape_string(b.shape()));
  }
}

inline void require_vector(const Value& a, const char* op) {
  if (a.shape().size() != 1) {
    throw ContractViolation(std::string(op) + ": expected a vector, got " + shape_string(a.shape()));
  }
}

}  // namespace detail

inline Value add(const Value& a, const Value& b) {
  detail::require_same_size(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return Value::make(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (auto* g = detail::grad_of(self, k)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
      }
    }
  });
}

inline Value sub(const Value& a, const Value& b) {
  detail::require_same_size(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return Value::make(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    if (auto* g = detail::grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
    }
    if (auto* g = detail::grad_of(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] -= self.grad[i];
    }
  });
}

/// Elementwise product.
inline Value mul(const Value& a, const Value& b) {
  detail::require_same_size(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return Value::make(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    const auto& da = self.parents[0]->data;
    const auto& db = self.parents[1]->data;
    if (auto* g = detail::grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i] * db[i];
    }
    if (auto* g = detail::grad_of(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i] * da[i];
    }
  });
}

inline Value scale(const Value& a, double s) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * s;
  return Value::make(a.shape(), std::move(out), {a}, [s](detail::Node& self) {
    if (auto* g = detail::grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i] * s;
    }
  });
}

/// Multiplies a tensor by a scalar-valued Value.
inline Value scale(const Value& a, const Value& s) {
  if (s.size() != 1) throw ContractViolation("scale: factor must be scalar");
  const double f = s[0];
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * f;
  return Value::make(a.shape(), std::move(out), {a, s}, [](detail::Node& self) {
    const auto& da = self.parents[0]->data;
    const double f = self.parents[1]->data[0];
    if (auto* g = detail::grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i] * f;
    }
    if (auto* g = detail::grad_of(self, 1)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * da[i];
      (*g)[0] += acc;
    }
  });
}

inline Value tanh(const Value& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a[i]);
  return Value::make(a.shape(), std::move(out), {a}, [](detail::Node& self) {
    if (auto* g = detail::grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        const double y = self.data[i];
        (*g)[i] += self.grad[i] * (1.0 - y * y);
      }
    }
  });
}

inline Value sigmoid(const Value& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = a[i];
    out[i] = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  }
  return Value::make(a.shape(), std::move(out), {a}, [](detail::Node& self) {
    if (auto* g = detail::grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        const double y = self.data[i];
        (*g)[i] += self.grad[i] * y * (1.0 - y);
      }
    }
  });
}

inline Value sum(const Value& a) {
  double s = 0.0;
  for (double x : a.data()) s += x;
  return Value::make(Shape{1}, {s}, {a}, [](detail::Node& self) {
    if (auto* g = detail::grad_of(self, 0)) {
      for (double& x : *g) x += self.grad[0];
    }
  });
}

inline Value mean(const Value& a) {
  if (a.size() == 0) throw ContractViolation("mean of empty value");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

inline Value dot(const Value& a, const Value& b) {
  detail::require_same_size(a, b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return Value::make(Shape{1}, {s}, {a, b}, [](detail::Node& self) {
    const auto& da = self.parents[0]->data;
    const auto& db = self.parents[1]->data;
    const double g0 = self.grad[0];
    if (auto* g = detail::grad_of(self, 0)) {
      for (std::size_t i = 0; i < db.size(); ++i) (*g)[i] += g0 * db[i];
    }
    if (auto* g = detail::grad_of(self, 1)) {
      for (std::size_t i = 0; i < da.size(); ++i) (*g)[i] += g0 * da[i];
    }
  });
}

/// Sum of scalar values.
inline Value add_n(const std::vector<Value>& terms) {
  if (terms.empty()) return Value::scalar(0.0);
  double s = 0.0;
  for (const auto& t : terms) {
    if (t.size() != 1) throw ContractViolation("add_n: terms must be scalars");
    s += t[0];
  }
  return Value::make(Shape{1}, {s}, terms, [](detail::Node& self) {
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      if (auto* g = detail::grad_of(self, k)) (*g)[0] += self.grad[0];
    }
  });
}

/// y = W x (+ b). W has shape [rows, cols].
inline Value affine(const Value& w, const Value& x, const Value* b = nullptr) {
  if (w.shape().size() != 2 || w.shape()[1] != x.size()) {
    throw ContractViolation("affine: weight " + shape_string(w.shape()) + " vs input " +
                            shape_string(x.shape()));
  }
  const std::size_t rows = w.shape()[0];
  const std::size_t cols = w.shape()[1];
  if (b && b->size() != rows) throw ContractViolation("affine: bias size mismatch");
  std::vector<double> out(rows);
  const double* wd = w.data().data();
  const double* xd = x.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    double s = b ? (*b)[r] : 0.0;
    const double* row = wd + r * cols;
    for (std::size_t c = 0; c < cols; ++c) s += row[c] * xd[c];
    out[r] = s;
  }
  std::vector<Value> parents{w, x};
  if (b) parents.push_back(*b);
  return Value::make(Shape{rows}, std::move(out), std::move(parents), [rows, cols](detail::Node& self) {
    const auto& wd = self.parents[0]->data;
    const auto& xd = self.parents[1]->data;
    const auto& go = self.grad;
    if (auto* g = detail::grad_of(self, 0)) {
      for (std::size_t r = 0; r < rows; ++r) {
        const double gr = go[r];
        if (gr == 0.0) continue;
        double* row = g->data() + r * cols;
        for (std::size_t c = 0; c < cols; ++c) row[c] += gr * xd[c];
      }
    }
    if (auto* g = detail::grad_of(self, 1)) {
      for (std::size_t r = 0; r < rows; ++r) {
        const double gr = go[r];
        if (gr == 0.0) continue;
        const double* row = wd.data() + r * cols;
        for (std::size_t c = 0; c < cols; ++c) (*g)[c] += gr * row[c];
      }
    }
    if (self.parents.size() > 2) {
      if (auto* g = detail::grad_of(self, 2)) {
        for (std::size_t r = 0; r < rows; ++r) (*g)[r] += go[r];
      }
    }
  });
}

inline Value matvec(const Value& w, const Value& x) { return affine(w, x); }

inline Value affine(const Value& w, const Value& x, const Value& b) { return affine(w, x, &b); }

/// Concatenates 1-D values.
inline Value concat(const std::vector<Value>& parts) {
  std::vector<double> out;
  std::size_t total = 0;
  for (const auto& p : parts) total += p.size();
  out.reserve(total);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return Value::make(Shape{total}, std::move(out), parts, [](detail::Node& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      const std::size_t n = self.parents[k]->data.size();
      if (auto* g = detail::grad_of(self, k)) {
        for (std::size_t i = 0; i < n; ++i) (*g)[i] += self.grad[off + i];
      }
      off += n;
    }
  });
}

inline Value slice(const Value& a, std::size_t offset, std::size_t length) {
  if (offset + length > a.size()) throw ContractViolation("slice out of range");
  std::vector<double> out(a.data().begin() + static_cast<std::ptrdiff_t>(offset),
                          a.data().begin() + static_cast<std::ptrdiff_t>(offset + length));
  return Value::make(Shape{length}, std::move(out), {a}, [offset](detail::Node& self) {
    if (auto* g = detail::grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[offset + i] += self.grad[i];
    }
  });
}

inline Value pick(const Value& a, std::size_t index) { return slice(a, index, 1); }

inline Value reshape(const Value& a, Shape shape) {
  if (shape_size(shape) != a.size()) throw ContractViolation("reshape: size mismatch");
  std::vector<double> out(a.data().begin(), a.data().end());
  return Value::make(std::move(shape), std::move(out), {a}, [](detail::Node& self) {
    if (auto* g = detail::grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
    }
  });
}

inline std::vector<double> softmax_values(std::span<const double> x) {
  double m = -std::numeric_limits<double>::infinity();
  for (double v : x) m = std::max(m, v);
  std::vector<double> p(x.size());
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += (p[i] = std::exp(x[i] - m));
  for (double& v : p) v /= s;
  return p;
}

inline std::vector<double> log_softmax_values(std::span<const double> x) {
  double m = -std::numeric_limits<double>::infinity();
  for (double v : x) m = std::max(m, v);
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  const double lse = m + std::log(s);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - lse;
  return out;
}

inline Value softmax(const Value& a) {
  detail::require_vector(a, "softmax");
  return Value::make(a.shape(), softmax_values(a.data()), {a}, [](detail::Node& self) {
    if (auto* g = detail::grad_of(self, 0)) {
      double inner = 0.0;
      for (std::size_t i = 0; i < self.data.size(); ++i) inner += self.grad[i] * self.data[i];
      for (std::size_t i = 0; i < self.data.size(); ++i) {
        (*g)[i] += self.data[i] * (self.grad[i] - inner);
      }
    }
  });
}

inline Value log_softmax(const Value& a) {
  detail::require_vector(a, "log_softmax");
  return Value::make(a.shape(), log_softmax_values(a.data()), {a}, [](detail::Node& self) {
    if (auto* g = detail::grad_of(self, 0)) {
      double gs = 0.0;
      for (double v : self.grad) gs += v;
      for (std::size_t i = 0; i < self.data.size(); ++i) {
        (*g)[i] += self.grad[i] - std::exp(self.data[i]) * gs;
      }
    }
  });
}

/// Categorical entropy of softmax(logits).
inline Value entropy_from_logits(const Value& logits) {
  const Value lp = log_softmax(logits);
  const Value p = softmax(logits);
  return scale(dot(p, lp), -1.0);
}

/// Huber loss averaged over components.
inline Value huber(const Value& pred, const Value& target, double delta = 1.0) {
  detail::require_same_size(pred, target, "huber");
  if (!(delta > 0)) throw ContractViolation("huber: delta must be positive");
  const std::size_t n = pred.size();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = pred[i] - target[i];
    const double ad = std::abs(d);
    s += ad <= delta ? 0.5 * d * d : delta * (ad - 0.5 * delta);
  }
  s /= static_cast<double>(n);
  return Value::make(Shape{1}, {s}, {pred, target}, [delta, n](detail::Node& self) {
    const auto& p = self.parents[0]->data;
    const auto& t = self.parents[1]->data;
    const double g0 = self.grad[0] / static_cast<double>(n);
    auto* gp = detail::grad_of(self, 0);
    auto* gt = detail::grad_of(self, 1);
    for (std::size_t i = 0; i < n; ++i) {
      const double d = std::clamp(p[i] - t[i], -delta, delta) * g0;
      if (gp) (*gp)[i] += d;
      if (gt) (*gt)[i] -= d;
    }
  });
}

/// Same-padded, stride-1 2-D convolution.
/// input [C, H, W], kernel [O, C, K, K] with K odd, bias [O] -> [O, H, W].
inline Value conv2d(const Value& input, const Value& kernel, const Value& bias) {
  const Shape& is = input.shape();
  const Shape& ks = kernel.shape();
  if (is.size() != 3 || ks.size() != 4 || ks[1] != is[0] || ks[2] != ks[3] || ks[2] % 2 == 0 ||
      bias.size() != ks[0]) {
    throw ContractViolation("conv2d: incompatible shapes input " + shape_string(is) + " kernel " +
                            shape_string(ks) + " bias " + shape_string(bias.shape()));
  }
  const std::size_t C = is[0], H = is[1], W = is[2], O = ks[0], K = ks[2];
  const long pad = static_cast<long>(K / 2);
  std::vector<double> out(O * H * W);
  const double* in = input.data().data();
  const double* kd = kernel.data().data();
  for (std::size_t o = 0; o < O; ++o) {
    double* op = out.data() + o * H * W;
    std::fill(op, op + H * W, bias[o]);
    for (std::size_t c = 0; c < C; ++c) {
      const double* ip = in + c * H * W;
      for (std::size_t ky = 0; ky < K; ++ky) {
        for (std::size_t kx = 0; kx < K; ++kx) {
          const double w = kd[((o * C + c) * K + ky) * K + kx];
          if (w == 0.0) continue;
          const long dy = static_cast<long>(ky) - pad;
          const long dx = static_cast<long>(kx) - pad;
          const std::size_t x0 = static_cast<std::size_t>(std::max(0L, -dx));
          const std::size_t x1 = static_cast<std::size_t>(std::min(static_cast<long>(W), static_cast<long>(W) - dx));
          for (std::size_t y = 0; y < H; ++y) {
            const long iy = static_cast<long>(y) + dy;
            if (iy < 0 || iy >= static_cast<long>(H)) continue;
            const double* irow = ip + static_cast<std::size_t>(iy) * W;
            double* orow = op + y * W;
            for (std::size_t x = x0; x < x1; ++x) orow[x] += w * irow[static_cast<long>(x) + dx];
          }
        }
      }
    }
  }
  return Value::make(Shape{O, H, W}, std::move(out), {input, kernel, bias},
                     [C, H, W, O, K, pad](detail::Node& self) {
    const auto& in = self.parents[0]->data;
    const auto& kd = self.parents[1]->data;
    auto* gi = detail::grad_of(self, 0);
    auto* gk = detail::grad_of(self, 1);
    auto* gb = detail::grad_of(self, 2);
    for (std::size_t o = 0; o < O; ++o) {
      const double* go = self.grad.data() + o * H * W;
      if (gb) {
        double s = 0.0;
        for (std::size_t i = 0; i < H * W; ++i) s += go[i];
        (*gb)[o] += s;
      }
      for (std::size_t c = 0; c < C; ++c) {
        const double* ip = in.data() + c * H * W;
        for (std::size_t ky = 0; ky < K; ++ky) {
          for (std::size_t kx = 0; kx < K; ++kx) {
            const std::size_t kidx = ((o * C + c) * K + ky) * K + kx;
            const double w = kd[kidx];
            const long dy = static_cast<long>(ky) - pad;
            const long dx = static_cast<long>(kx) - pad;
            const std::size_t x0 = static_cast<std::size_t>(std::max(0L, -dx));
            const std::size_t x1 = static_cast<std::size_t>(std::min(static_cast<long>(W), static_cast<long>(W) - dx));
            double kacc = 0.0;
            for (std::size_t y = 0; y < H; ++y) {
              const long iy = static_cast<long>(y) + dy;
              if (iy < 0 || iy >= static_cast<long>(H)) continue;
              const std::size_t irow = c * H * W + static_cast<std::size_t>(iy) * W;
              const double* grow = go + y * W;
              for (std::size_t x = x0; x < x1; ++x) {
                const std::size_t ii = irow + static_cast<std::size_t>(static_cast<long>(x) + dx);
                kacc += grow[x] * ip[ii - c * H * W];
                if (gi) (*gi)[ii] += w * grow[x];
              }
            }
            if (gk) (*gk)[kidx] += kacc;
          }
        }
      }
    }
  });
}

/// Weighted combination sum_i w[i] * vectors[i]. When w is exactly one-hot
/// the forward result is a bit-exact copy of the selected vector.
inline Value mix(const Value& w, const std::vector<Value>& vectors) {
  if (w.size() != vectors.size() || vectors.empty()) throw ContractViolation("mix: weight/vector count mismatch");
  const std::size_t n = vectors[0].size();
  for (const auto& v : vectors) {
    if (v.size() != n) throw ContractViolation("mix: vectors differ in size");
  }
  std::vector<double> out(n, 0.0);
  std::size_t ones = 0, zeros = 0, hot = 0;
  for (std::size_t k = 0; k < w.size(); ++k) {
    if (w[k] == 1.0) {
      ++ones;
      hot = k;
    } else if (w[k] == 0.0) {
      ++zeros;
    }
  }
  if (ones == 1 && zeros + 1 == w.size()) {
    out.assign(vectors[hot].data().begin(), vectors[hot].data().end());
  } else {
    for (std::size_t k = 0; k < w.size(); ++k) {
      for (std::size_t i = 0; i < n; ++i) out[i] += w[k] * vectors[k][i];
    }
  }
  std::vector<Value> parents{w};
  parents.insert(parents.end(), vectors.begin(), vectors.end());
  return Value::make(vectors[0].shape(), std::move(out), std::move(parents), [n](detail::Node& self) {
    const auto& wd = self.parents[0]->data;
    auto* gw = detail::grad_of(self, 0);
    for (std::size_t k = 0; k < wd.size(); ++k) {
      const auto& vd = self.parents[k + 1]->data;
      if (gw) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += self.grad[i] * vd[i];
        (*gw)[k] += s;
      }
      if (auto* gv = detail::grad_of(self, k + 1)) {
        if (wd[k] == 0.0) continue;
        for (std::size_t i = 0; i < n; ++i) (*gv)[i] += wd[k] * self.grad[i];
      }
    }
  });
}

/// sum_i a[i] * (W[i] x) for a stack of square matrices W [A, n, n].
inline Value action_matvec(const Value& a, const Value& w, const Value& x) {
  const Shape& ws = w.shape();
  if (ws.size() != 3 || ws[0] != a.size() || ws[1] != ws[2] || ws[2] != x.size()) {
    throw ContractViolation("action_matvec: incompatible shapes");
  }
  const std::size_t A = ws[0], n = ws[1];
  std::vector<double> out(n, 0.0);
  const double* wd = w.data().data();
  for (std::size_t k = 0; k < A; ++k) {
    const double ak = a[k];
    if (ak == 0.0) continue;
    for (std::size_t r = 0; r < n; ++r) {
      const double* row = wd + (k * n + r) * n;
      double s = 0.0;
      for (std::size_t c = 0; c < n; ++c) s += row[c] * x[c];
      out[r] += ak * s;
    }
  }
  return Value::make(Shape{n}, std::move(out), {a, w, x}, [A, n](detail::Node& self) {
    const auto& ad = self.parents[0]->data;
    const auto& wd = self.parents[1]->data;
    const auto& xd = self.parents[2]->data;
    const auto& go = self.grad;
    auto* ga = detail::grad_of(self, 0);
    auto* gw = detail::grad_of(self, 1);
    auto* gx = detail::grad_of(self, 2);
    for (std::size_t k = 0; k < A; ++k) {
      const double ak = ad[k];
      for (std::size_t r = 0; r < n; ++r) {
        const double* row = wd.data() + (k * n + r) * n;
        if (ga) {
          double s = 0.0;
          for (std::size_t c = 0; c < n; ++c) s += row[c] * xd[c];
          (*ga)[k] += go[r] * s;
        }
        if (ak == 0.0) continue;
        const double gr = go[r] * ak;
        if (gw) {
          double* grow = gw->data() + (k * n + r) * n;
          for (std::size_t c = 0; c < n; ++c) grow[c] += gr * xd[c];
        }
        if (gx) {
          for (std::size_t c = 0; c < n; ++c) (*gx)[c] += gr * row[c];
        }
      }
    }
  });
}

}  // namespace dpn
