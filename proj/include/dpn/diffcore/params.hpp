#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "dpn/diffcore/value.hpp"

namespace dpn {

/// Which sub-network owns a parameter; decides which losses may update it.
enum class Owner : std::uint8_t { encoder = 0, outer_agent = 1, inner_agent = 2, transition_model = 3 };

inline std::string_view owner_name(Owner o) {
  switch (o) {
    case Owner::encoder: return "encoder";
    case Owner::outer_agent: return "outer_agent";
    case Owner::inner_agent: return "inner_agent";
    case Owner::transition_model: return "transition_model";
  }
  return "unknown";
}

inline Owner parse_owner(std::string_view s) {
  if (s == "encoder") return Owner::encoder;
  if (s == "outer_agent") return Owner::outer_agent;
  if (s == "inner_agent") return Owner::inner_agent;
  if (s == "transition_model") return Owner::transition_model;
  throw InvalidInput("unknown parameter owner '" + std::string(s) + "'");
}

struct Param {
  std::string name;
  Owner owner;
  Value value;
};

using Gradients = std::map<std::string, std::vector<double>>;

/// Named, ownership-tagged parameter leaves in insertion order. Copies share
/// storage; use `clone` for an independent set.
class ParamSet {
 public:
  Value& add(std::string name, Owner owner, Shape shape, std::vector<double> data) {
    if (contains(name)) throw ContractViolation("duplicate parameter '" + name + "'");
    index_.emplace(name, params_.size());
    params_.push_back({std::move(name), owner, Value::variable(std::move(data), std::move(shape))});
    return params_.back().value;
  }

  Value& add(std::string name, Owner owner, Shape shape) {
    const std::size_t n = shape_size(shape);
    return add(std::move(name), owner, std::move(shape), std::vector<double>(n, 0.0));
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const Param& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractViolation("unknown parameter '" + name + "'");
    return params_[it->second];
  }

  Param& at(const std::string& name) {
    return const_cast<Param&>(static_cast<const ParamSet&>(*this).at(name));
  }

  const Value& value(const std::string& name) const { return at(name).value; }

  const std::vector<Param>& entries() const { return params_; }
  std::vector<Param>& entries() { return params_; }
  std::size_t size() const { return params_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  ParamSet clone() const {
    ParamSet out;
    for (const auto& p : params_) {
      out.add(p.name, p.owner, p.value.shape(), {p.value.data().begin(), p.value.data().end()});
    }
    return out;
  }

  Gradients zero_gradients() const {
    Gradients g;
    for (const auto& p : params_) g.emplace(p.name, std::vector<double>(p.value.size(), 0.0));
    return g;
  }

 private:
  std::vector<Param> params_;
  std::map<std::string, std::size_t> index_;
};

/// Backward pass that reports a gradient for every parameter in `params`;
/// parameters the root does not reach get exact zeros.
inline Gradients backward(const Value& root, const ParamSet& params, BackwardOptions options = {}) {
  for (const auto& p : params.entries()) const_cast<Value&>(p.value).clear_grad();
  backward(root, options);
  Gradients g;
  for (const auto& p : params.entries()) g.emplace(p.name, p.value.grad());
  for (const auto& p : params.entries()) const_cast<Value&>(p.value).clear_grad();
  return g;
}

inline void accumulate(Gradients& into, const Gradients& from) {
  for (const auto& [name, buf] : from) {
    auto& dst = into[name];
    if (dst.empty()) dst.assign(buf.size(), 0.0);
    for (std::size_t i = 0; i < buf.size(); ++i) dst[i] += buf[i];
  }
}

}  // namespace dpn
