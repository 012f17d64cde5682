#pragma once

#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dpn/diffcore/barrier.hpp"
#include "dpn/diffcore/gumbel.hpp"
#include "dpn/diffcore/ops.hpp"
#include "dpn/diffcore/params.hpp"
#include "dpn/diffcore/recurrent.hpp"
#include "dpn/envs/grid.hpp"
#include "dpn/rng.hpp"

namespace dpn::model {

enum class Metric { l1, l2, cosine, kl };

inline std::string_view metric_name(Metric m) {
  switch (m) {
    case Metric::l1: return "l1";
    case Metric::l2: return "l2";
    case Metric::cosine: return "cosine";
    case Metric::kl: return "kl";
  }
  return "l1";
}

inline Metric parse_metric(std::string_view s) {
  if (s == "l1" || s == "L1") return Metric::l1;
  if (s == "l2" || s == "L2") return Metric::l2;
  if (s == "cosine") return Metric::cosine;
  if (s == "kl" || s == "KL") return Metric::kl;
  throw InvalidInput("unknown distance metric '" + std::string(s) + "'");
}

/// Which state the residual terms of the transition model wrap around.
/// `selected` uses the expanded state throughout; `current` keeps the
/// residuals around the plan's current state.
enum class Residual { selected, current };

struct ModelConfig {
  std::size_t channels = envs::kChannelCount;
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t conv_channels = 32;
  std::size_t conv_layers = 2;
  std::size_t z_dim = 128;
  std::size_t outer_hidden = 128;
  std::size_t inner_hidden = 128;
  std::size_t actions = envs::kActionCount;
  bool planning = true;  // false builds the model-free baseline
  double temperature = 1.0;
  bool hard = true;  // one-hot Gumbel samples with straight-through gradients
  Residual residual = Residual::selected;

  std::size_t context_size() const { return 3 * z_dim + 1 + outer_hidden; }
};

/// Embedded states are plain Values of length z_dim.
using Embedded = Value;

struct Triplet {
  Embedded previous;
  Embedded current;
  Embedded root;
};

inline std::atomic<std::uint64_t>& transition_call_counter() {
  static std::atomic<std::uint64_t> calls{0};
  return calls;
}

/// Parameters and cached handles of one DPN (or baseline) instance.
class Model {
 public:
  Model(ModelConfig config, ParamSet params) : config_(std::move(config)), params_(std::move(params)) { bind(); }

  /// Fresh parameters: uniform with std gain/sqrt(fan_in), tanh gain for
  /// hidden layers and small policy/value heads so the initial policy is
  /// close to uniform.
  static constexpr double kTanhGain = 5.0 / 3.0;

  static Model init(const ModelConfig& c, std::uint64_t seed) {
    Rng rng(seed, 0x1417);
    ParamSet ps;
    // Uniform with variance gain^2 / fan_in.
    auto uniform = [&](Shape shape, double fan_in, double gain = kTanhGain) {
      std::vector<double> d(shape_size(shape));
      const double bound = gain * std::sqrt(3.0 / fan_in);
      for (double& x : d) x = rng.uniform(-bound, bound);
      return d;
    };
    std::size_t in_ch = c.channels;
    for (std::size_t l = 0; l < c.conv_layers; ++l) {
      const double fan = static_cast<double>(in_ch * 9);
      const std::string p = "encoder.conv" + std::to_string(l);
      ps.add(p + ".weight", Owner::encoder, {c.conv_channels, in_ch, 3, 3},
             uniform({c.conv_channels, in_ch, 3, 3}, fan));
      ps.add(p + ".bias", Owner::encoder, {c.conv_channels});
      in_ch = c.conv_channels;
    }
    const std::size_t flat = in_ch * c.height * c.width;
    ps.add("encoder.fc.weight", Owner::encoder, {c.z_dim, flat}, uniform({c.z_dim, flat}, static_cast<double>(flat)));
    ps.add("encoder.fc.bias", Owner::encoder, {c.z_dim});

    const auto z = static_cast<double>(c.z_dim);
    const auto ho = static_cast<double>(c.outer_hidden);
    ps.add("outer.w_zh", Owner::outer_agent, {c.outer_hidden, c.z_dim}, uniform({c.outer_hidden, c.z_dim}, z));
    ps.add("outer.w_ah", Owner::outer_agent, {c.actions, c.outer_hidden},
           uniform({c.actions, c.outer_hidden}, ho, 0.01));
    ps.add("outer.w_v", Owner::outer_agent, {c.outer_hidden}, uniform({c.outer_hidden}, ho, 0.01));
    if (c.planning) {
      const auto hi = static_cast<double>(c.inner_hidden);
      ps.add("outer.w_hh", Owner::outer_agent, {c.outer_hidden, c.inner_hidden},
             uniform({c.outer_hidden, c.inner_hidden}, hi));
      const std::size_t ctx = c.context_size();
      ps.add("inner.cell.w_x", Owner::inner_agent, {3 * c.inner_hidden, ctx},
             uniform({3 * c.inner_hidden, ctx}, static_cast<double>(ctx)));
      ps.add("inner.cell.w_h", Owner::inner_agent, {3 * c.inner_hidden, c.inner_hidden},
             uniform({3 * c.inner_hidden, c.inner_hidden}, hi));
      ps.add("inner.cell.bias", Owner::inner_agent, {3 * c.inner_hidden});
      ps.add("inner.w_h3", Owner::inner_agent, {3, c.inner_hidden}, uniform({3, c.inner_hidden}, hi, 0.1));
      ps.add("inner.w_azh", Owner::inner_agent, {c.actions, c.z_dim + c.inner_hidden},
             uniform({c.actions, c.z_dim + c.inner_hidden}, z + hi, 0.1));
      ps.add("transition.w_zz", Owner::transition_model, {c.z_dim, c.z_dim}, uniform({c.z_dim, c.z_dim}, z, 0.5));
      ps.add("transition.w_azz", Owner::transition_model, {c.actions, c.z_dim, c.z_dim},
             uniform({c.actions, c.z_dim, c.z_dim}, z, 0.5));
    }
    return Model(c, std::move(ps));
  }

  /// Shapes this configuration requires, in parameter order.
  static std::vector<std::pair<std::string, Shape>> expected_shapes(const ModelConfig& c) {
    const Model m = init(c, 0);
    std::vector<std::pair<std::string, Shape>> out;
    for (const auto& p : m.params().entries()) out.emplace_back(p.name, p.value.shape());
    return out;
  }

  const ModelConfig& config() const { return config_; }
  const ParamSet& params() const { return params_; }
  ParamSet& params() { return params_; }

  /// Convolution stack (tanh) followed by a tanh fully-connected layer.
  Embedded encode(const envs::Observation& obs) const {
    if (obs.channels != config_.channels || obs.height != config_.height || obs.width != config_.width) {
      throw ContractViolation("encode: observation " + shape_string(obs.shape()) + " does not match model " +
                              shape_string({config_.channels, config_.height, config_.width}));
    }
    Value x = Value::constant(obs.data, obs.shape());
    for (const auto& [w, b] : convs_) x = dpn::tanh(conv2d(x, w, b));
    x = reshape(x, {x.size()});
    return dpn::tanh(affine(fc_w_, x, fc_b_));
  }

  /// Outer hidden state h = W_zh z (no bias, no nonlinearity).
  Value outer_hidden(const Embedded& z) const { return matvec(w_zh_, z); }

  Value value_from_hidden(const Value& h_outer) const { return dot(w_v_, h_outer); }

  /// V(z) = w_v . (W_zh z).
  Value value(const Embedded& z) const { return value_from_hidden(outer_hidden(z)); }

  /// One recurrent step of the inner agent over the context
  /// [z_p, z_c, z_r, step_fraction, h_outer(z_c)]. Context entries enter
  /// through scope barriers so inner-agent losses stop at the IA boundary.
  Value ia_update(const Value& hidden, const Triplet& t, double step_fraction, const Value& h_current) const {
    require_planning();
    if (step_fraction < 0.0 || step_fraction > 1.0) throw ContractViolation("ia_update: step fraction outside [0, 1]");
    const Value ctx = concat({barrier(t.previous), barrier(t.current), barrier(t.root),
                              Value::scalar(step_fraction), barrier(h_current)});
    return recurrent_cell(ctx, hidden, cell_);
  }

  Value state_logits(const Value& hidden) const { return matvec(w_h3_, hidden); }

  Value action_logits(const Embedded& z_star, const Value& hidden) const {
    return matvec(w_azh_, concat({barrier(z_star), hidden}));
  }

  struct StateSelection {
    Embedded z_star;
    GumbelSample weight;
    Value logits;
  };

  /// Samples which anchor (previous, current, root) to expand.
  StateSelection select_state(const Value& hidden, const Triplet& t, std::span<const double> noise) const {
    Value logits = state_logits(hidden);
    GumbelSample w = gumbel_softmax(logits, noise, config_.temperature, config_.hard);
    Embedded z_star = mix(w.weights, {t.previous, t.current, t.root});
    return {std::move(z_star), std::move(w), std::move(logits)};
  }

  struct ActionSelection {
    GumbelSample action;
    Value logits;
  };

  ActionSelection select_action(const Embedded& z_star, const Value& hidden, std::span<const double> noise) const {
    Value logits = action_logits(z_star, hidden);
    GumbelSample a = gumbel_softmax(logits, noise, config_.temperature, config_.hard);
    return {std::move(a), std::move(logits)};
  }

  /// Residual action-conditional transition:
  ///   z'  = base + tanh(W_zz z_sel)
  ///   z'' = z' + tanh((a . W_azz) z')
  ///   z_next = base + z''
  /// with base = z_sel unless the `current` residual reading is configured
  /// and a separate base is supplied.
  Embedded transition(const Embedded& z_sel, const Value& action, const Embedded* base = nullptr) const {
    require_planning();
    if (action.size() != config_.actions || z_sel.size() != config_.z_dim) {
      throw ContractViolation("transition: dimension mismatch");
    }
    transition_call_counter().fetch_add(1, std::memory_order_relaxed);
    const Embedded& b = (base && config_.residual == Residual::current) ? *base : z_sel;
    const Value z1 = add(b, dpn::tanh(matvec(w_zz_, z_sel)));
    const Value z2 = add(z1, dpn::tanh(action_matvec(action, w_azz_, z1)));
    return add(b, z2);
  }

  /// Acting logits: W_ah tanh(W_hh h_inner + h_outer0). The baseline omits
  /// the planning term.
  Value act_logits(const Value* h_inner_final, const Value& h_outer_initial) const {
    if (config_.planning) {
      if (!h_inner_final) throw ContractViolation("act_logits: planning model needs the final inner hidden state");
      return matvec(w_ah_, dpn::tanh(add(matvec(w_hh_, *h_inner_final), h_outer_initial)));
    }
    return matvec(w_ah_, dpn::tanh(h_outer_initial));
  }

  Value one_hot(std::size_t action) const {
    std::vector<double> d(config_.actions, 0.0);
    d.at(action) = 1.0;
    return Value::constant(std::move(d));
  }

 private:
  void require_planning() const {
    if (!config_.planning) throw ContractViolation("planning component used on a model-free configuration");
  }

  void bind() {
    convs_.clear();
    for (std::size_t l = 0; l < config_.conv_layers; ++l) {
      const std::string p = "encoder.conv" + std::to_string(l);
      convs_.emplace_back(params_.value(p + ".weight"), params_.value(p + ".bias"));
    }
    fc_w_ = params_.value("encoder.fc.weight");
    fc_b_ = params_.value("encoder.fc.bias");
    w_zh_ = params_.value("outer.w_zh");
    w_ah_ = params_.value("outer.w_ah");
    w_v_ = params_.value("outer.w_v");
    if (config_.planning) {
      w_hh_ = params_.value("outer.w_hh");
      cell_ = {params_.value("inner.cell.w_x"), params_.value("inner.cell.w_h"), params_.value("inner.cell.bias")};
      w_h3_ = params_.value("inner.w_h3");
      w_azh_ = params_.value("inner.w_azh");
      w_zz_ = params_.value("transition.w_zz");
      w_azz_ = params_.value("transition.w_azz");
    }
  }

  ModelConfig config_;
  ParamSet params_;
  std::vector<std::pair<Value, Value>> convs_;
  Value fc_w_, fc_b_, w_zh_, w_ah_, w_v_, w_hh_, w_h3_, w_azh_, w_zz_, w_azz_;
  GruWeights cell_;
};

/// Distance between outer hidden states used by the planning utility.
/// KL is D(softmax(a) || softmax(b)); cosine is 1 - cos with the norms
/// floored at 1e-8.
inline double distance(std::span<const double> a, std::span<const double> b, Metric metric) {
  if (a.size() != b.size()) throw ContractViolation("distance: size mismatch");
  switch (metric) {
    case Metric::l1: {
      double s = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
      return s;
    }
    case Metric::l2: {
      double s = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
      return std::sqrt(s);
    }
    case Metric::cosine: {
      double ab = 0.0, aa = 0.0, bb = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
      }
      constexpr double eps = 1e-8;
      return 1.0 - ab / (std::max(std::sqrt(aa), eps) * std::max(std::sqrt(bb), eps));
    }
    case Metric::kl: {
      const auto lp = log_softmax_values(a);
      const auto lq = log_softmax_values(b);
      double s = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) s += std::exp(lp[i]) * (lp[i] - lq[i]);
      return s;
    }
  }
  return 0.0;
}

struct Utility {
  double total = 0.0;
  double value_term = 0.0;
  double distance_term = 0.0;
};

/// Planning utility U = V(z_next) + D[h_next, h_cur], on plain numbers (the
/// utility is a reward signal and never carries gradient).
inline Utility utility(std::span<const double> h_next, std::span<const double> h_cur, double value_next,
                       Metric metric) {
  const double d = distance(h_next, h_cur, metric);
  return {value_next + d, value_next, d};
}

}  // namespace dpn::model
