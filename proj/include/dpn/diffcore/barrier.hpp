#pragma once

#include <cstddef>
#include <vector>

#include "dpn/diffcore/value.hpp"

namespace dpn {

/// Records (capture) or substitutes (replay) the values flowing through scope
/// barriers on the current thread. Replay turns each barrier into a constant,
/// which is the finite-difference counterpart of a barrier-stopped backward.
class BarrierTape {
 public:
  enum class Mode { capture, replay };

  explicit BarrierTape(Mode mode, std::vector<std::vector<double>> values = {})
      : mode_(mode), values_(std::move(values)), previous_(active_) {
    active_ = this;
  }
  ~BarrierTape() { active_ = previous_; }
  BarrierTape(const BarrierTape&) = delete;
  BarrierTape& operator=(const BarrierTape&) = delete;

  Mode mode() const { return mode_; }
  const std::vector<std::vector<double>>& values() const { return values_; }
  std::vector<std::vector<double>> take() { return std::move(values_); }

  static BarrierTape* active() { return active_; }

  Value pass(const Value& x) {
    if (mode_ == Mode::capture) {
      values_.emplace_back(x.data().begin(), x.data().end());
      return x;
    }
    if (cursor_ >= values_.size() || values_[cursor_].size() != x.size()) {
      throw ContractViolation("barrier replay out of sync with capture");
    }
    return Value::constant(values_[cursor_++], x.shape());
  }

 private:
  Mode mode_;
  std::vector<std::vector<double>> values_;
  std::size_t cursor_ = 0;
  BarrierTape* previous_;
  static inline thread_local BarrierTape* active_ = nullptr;
};

/// Identity whose backward is suppressed by `BackwardOptions::stop_at_barriers`.
inline Value barrier(const Value& x) {
  if (auto* tape = BarrierTape::active()) {
    Value y = tape->pass(x);
    if (tape->mode() == BarrierTape::Mode::replay) return y;
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  Value y = Value::make(x.shape(), std::move(out), {x}, [](detail::Node& self) {
    if (auto* g = detail::grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
    }
  });
  const_cast<detail::Node*>(y.id())->barrier = true;
  return y;
}

}  // namespace dpn
