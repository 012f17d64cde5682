#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dpn/diffcore/params.hpp"
#include "dpn/model/dpn_model.hpp"
#include "dpn/train/config.hpp"
#include "dpn/train/optimizer.hpp"

namespace dpn::train {

/// Binary container, all integers and floats little-endian:
///
///   "DPNCKPT\0"  u32 version
///   u32 manifest_len, manifest bytes (config as `key = value` lines)
///   u64 env_steps, u64 iterations, u64 episodes
///   u32 param_count, then per parameter:
///     u16 name_len, name, u8 owner, u8 ndim, u32 dims[ndim], f32 data[prod(dims)]
///   u32 optimizer_count, then per entry: u16 name_len, name, u32 n, f32 square_avg[n]
///   u64 optimizer_updates, u64 optimizer_skipped
struct Checkpoint {
  std::string manifest;
  std::uint64_t env_steps = 0;
  std::uint64_t iterations = 0;
  std::uint64_t episodes = 0;
  ParamSet params;
  RmsPropState optimizer;
};

inline constexpr char kCheckpointMagic[8] = {'D', 'P', 'N', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

class Writer {
 public:
  template <typename T>
  void put(T v) {
    static_assert(std::is_integral_v<T>);
    for (std::size_t i = 0; i < sizeof(T); ++i) bytes_.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
  }
  void put_f32(double v) { put(std::bit_cast<std::uint32_t>(static_cast<float>(v))); }
  void put_bytes(const std::string& s) { bytes_ += s; }
  void put_name(const std::string& s) {
    put(static_cast<std::uint16_t>(s.size()));
    put_bytes(s);
  }
  const std::string& bytes() const { return bytes_; }

 private:
  std::string bytes_;
};

class Reader {
 public:
  explicit Reader(std::string bytes) : bytes_(std::move(bytes)) {}
  template <typename T>
  T get() {
    need(sizeof(T));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }
  double get_f32() { return static_cast<double>(std::bit_cast<float>(get<std::uint32_t>())); }
  std::string get_bytes(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string get_name() { return get_bytes(get<std::uint16_t>()); }
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw InvalidInput("checkpoint truncated");
  }
  std::string bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize(const Checkpoint& ck) {
  detail::Writer w;
  w.put_bytes(std::string(kCheckpointMagic, sizeof(kCheckpointMagic)));
  w.put(kCheckpointVersion);
  w.put(static_cast<std::uint32_t>(ck.manifest.size()));
  w.put_bytes(ck.manifest);
  w.put(ck.env_steps);
  w.put(ck.iterations);
  w.put(ck.episodes);
  w.put(static_cast<std::uint32_t>(ck.params.size()));
  for (const auto& p : ck.params.entries()) {
    w.put_name(p.name);
    w.put(static_cast<std::uint8_t>(p.owner));
    w.put(static_cast<std::uint8_t>(p.value.shape().size()));
    for (auto d : p.value.shape()) w.put(static_cast<std::uint32_t>(d));
    for (double x : p.value.data()) w.put_f32(x);
  }
  w.put(static_cast<std::uint32_t>(ck.optimizer.square_avg.size()));
  for (const auto& [name, buf] : ck.optimizer.square_avg) {
    w.put_name(name);
    w.put(static_cast<std::uint32_t>(buf.size()));
    for (double x : buf) w.put_f32(x);
  }
  w.put(ck.optimizer.updates);
  w.put(ck.optimizer.skipped);
  return w.bytes();
}

inline Checkpoint deserialize(std::string bytes) {
  detail::Reader r(std::move(bytes));
  if (r.get_bytes(sizeof(kCheckpointMagic)) != std::string(kCheckpointMagic, sizeof(kCheckpointMagic))) {
    throw InvalidInput("not a checkpoint file (bad magic)");
  }
  if (const auto v = r.get<std::uint32_t>(); v != kCheckpointVersion) {
    throw InvalidInput("unsupported checkpoint version " + std::to_string(v));
  }
  Checkpoint ck;
  ck.manifest = r.get_bytes(r.get<std::uint32_t>());
  ck.env_steps = r.get<std::uint64_t>();
  ck.iterations = r.get<std::uint64_t>();
  ck.episodes = r.get<std::uint64_t>();
  const auto n = r.get<std::uint32_t>();
  for (std::uint32_t k = 0; k < n; ++k) {
    std::string name = r.get_name();
    const auto owner = r.get<std::uint8_t>();
    if (owner > 3) throw InvalidInput("checkpoint: bad owner tag for '" + name + "'");
    const auto ndim = r.get<std::uint8_t>();
    Shape shape;
    for (std::uint8_t d = 0; d < ndim; ++d) shape.push_back(r.get<std::uint32_t>());
    std::vector<double> data(shape_size(shape));
    for (double& x : data) x = r.get_f32();
    ck.params.add(std::move(name), static_cast<Owner>(owner), std::move(shape), std::move(data));
  }
  const auto m = r.get<std::uint32_t>();
  for (std::uint32_t k = 0; k < m; ++k) {
    std::string name = r.get_name();
    std::vector<double> buf(r.get<std::uint32_t>());
    for (double& x : buf) x = r.get_f32();
    ck.optimizer.square_avg.emplace(std::move(name), std::move(buf));
  }
  ck.optimizer.updates = r.get<std::uint64_t>();
  ck.optimizer.skipped = r.get<std::uint64_t>();
  if (!r.at_end()) throw InvalidInput("checkpoint has trailing bytes");
  return ck;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InvalidInput("cannot write checkpoint '" + path + "'");
    const std::string bytes = serialize(ck);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw InvalidInput("failed writing checkpoint '" + path + "'");
  }
  std::rename(tmp.c_str(), path.c_str());
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot read checkpoint '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize(ss.str());
}

inline TrainConfig checkpoint_config(const Checkpoint& ck) {
  std::istringstream in(ck.manifest);
  return from_key_values(parse_key_values(in, "checkpoint manifest"));
}

/// Lists every difference between the parameters a config needs and the
/// ones a checkpoint holds. Empty when they agree.
inline std::vector<std::string> shape_diff(const model::ModelConfig& config, const ParamSet& params) {
  std::vector<std::string> diff;
  const auto expected = model::Model::expected_shapes(config);
  for (const auto& [name, shape] : expected) {
    if (!params.contains(name)) {
      diff.push_back("missing " + name + " " + shape_string(shape));
    } else if (params.value(name).shape() != shape) {
      diff.push_back(name + ": expected " + shape_string(shape) + ", checkpoint has " +
                     shape_string(params.value(name).shape()));
    }
  }
  for (const auto& p : params.entries()) {
    bool known = false;
    for (const auto& e : expected) known = known || e.first == p.name;
    if (!known) diff.push_back("unexpected " + p.name + " " + shape_string(p.value.shape()));
  }
  return diff;
}

/// Rebuilds a model from a checkpoint, validating shapes against `config`.
inline model::Model model_from_checkpoint(const Checkpoint& ck, const model::ModelConfig& config) {
  const auto diff = shape_diff(config, ck.params);
  if (!diff.empty()) {
    std::string msg = "checkpoint does not match configuration:";
    for (const auto& d : diff) msg += "\n  " + d;
    throw InvalidInput(msg);
  }
  return model::Model(config, ck.params.clone());
}

}  // namespace dpn::train
