#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "tcgan/downstream.hpp"
#include "tcgan/gan.hpp"
#include "tcgan/tensor.hpp"

namespace tcgan {

// Checkpoint container, format version 1. Little-endian throughout:
//   magic "TCKP" | u32 version
//   u32 meta byte length | meta ("key=value\n" lines)
//   u32 entry count, then per entry:
//     u16 name length | name bytes
//     u8 dtype (1 = f32, 2 = f64) | u8 rank | u32 dims[rank]
//     u64 byte length | raw IEEE-754 values
// Raw values round-trip bit-exactly.

enum class CheckpointDtype : std::uint8_t { kFloat32 = 1, kFloat64 = 2 };

template <class Scalar>
constexpr CheckpointDtype checkpoint_dtype();
template <>
constexpr CheckpointDtype checkpoint_dtype<float>() {
  return CheckpointDtype::kFloat32;
}
template <>
constexpr CheckpointDtype checkpoint_dtype<double>() {
  return CheckpointDtype::kFloat64;
}

struct CheckpointEntry {
  std::string name;
  CheckpointDtype dtype;
  Shape shape;
  std::vector<std::uint8_t> raw;
};

namespace detail {

inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}
inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class ByteReader {
 public:
  ByteReader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

  std::uint8_t u8() { return take(1)[0]; }
  std::uint16_t u16() {
    const std::uint8_t* p = take(2);
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
  }
  std::uint32_t u32() {
    const std::uint8_t* p = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    const std::uint8_t* p = take(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
  }
  const std::uint8_t* take(std::size_t n) {
    if (pos_ + n > size_) throw std::runtime_error("checkpoint: truncated file");
    const std::uint8_t* p = data_ + pos_;
    pos_ += n;
    return p;
  }

 private:
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

template <class Scalar>
std::vector<std::uint8_t> scalars_to_le_bytes(const ArrayX<Scalar>& values) {
  static_assert(sizeof(Scalar) == 4 || sizeof(Scalar) == 8);
  std::vector<std::uint8_t> out(static_cast<std::size_t>(values.size()) * sizeof(Scalar));
  for (Index i = 0; i < values.size(); ++i) {
    std::uint64_t bits = 0;
    std::memcpy(&bits, &values[i], sizeof(Scalar));
    for (std::size_t b = 0; b < sizeof(Scalar); ++b)
      out[static_cast<std::size_t>(i) * sizeof(Scalar) + b] =
          static_cast<std::uint8_t>((bits >> (8 * b)) & 0xff);
  }
  return out;
}

template <class Scalar>
ArrayX<Scalar> le_bytes_to_scalars(const std::vector<std::uint8_t>& raw) {
  if (raw.size() % sizeof(Scalar) != 0)
    throw std::runtime_error("checkpoint: raw byte length not a multiple of scalar size");
  ArrayX<Scalar> out(static_cast<Index>(raw.size() / sizeof(Scalar)));
  for (Index i = 0; i < out.size(); ++i) {
    std::uint64_t bits = 0;
    for (std::size_t b = 0; b < sizeof(Scalar); ++b)
      bits |= static_cast<std::uint64_t>(raw[static_cast<std::size_t>(i) * sizeof(Scalar) + b])
              << (8 * b);
    std::memcpy(&out[i], &bits, sizeof(Scalar));
  }
  return out;
}

}  // namespace detail

class Checkpoint {
 public:
  static constexpr std::uint32_t kFormatVersion = 1;
  static constexpr char kMagic[5] = "TCKP";

  void set_meta(const std::string& key, const std::string& value) {
    for (auto& [k, v] : meta_)
      if (k == key) {
        v = value;
        return;
      }
    meta_.emplace_back(key, value);
  }

  const std::string& meta(const std::string& key) const {
    for (const auto& [k, v] : meta_)
      if (k == key) return v;
    throw std::out_of_range("checkpoint: no meta key " + key);
  }

  bool has_meta(const std::string& key) const {
    for (const auto& [k, v] : meta_)
      if (k == key) return true;
    return false;
  }

  template <class Scalar>
  void add(const std::string& name, const Shape& shape, const ArrayX<Scalar>& values) {
    if (numel(shape) != values.size())
      throw std::invalid_argument("checkpoint: shape/value mismatch for " + name);
    entries_.push_back(CheckpointEntry{name, checkpoint_dtype<Scalar>(), shape,
                                       detail::scalars_to_le_bytes(values)});
  }

  template <class Scalar>
  void add(const std::string& name, const Tensor<Scalar>& tensor) {
    add(name, tensor.shape(), tensor.values());
  }

  const CheckpointEntry& entry(const std::string& name) const {
    for (const auto& e : entries_)
      if (e.name == name) return e;
    throw std::out_of_range("checkpoint: no tensor named " + name);
  }

  template <class Scalar>
  ArrayX<Scalar> values(const std::string& name) const {
    const CheckpointEntry& e = entry(name);
    if (e.dtype != checkpoint_dtype<Scalar>())
      throw std::runtime_error("checkpoint: dtype mismatch for " + name);
    return detail::le_bytes_to_scalars<Scalar>(e.raw);
  }

  template <class Scalar>
  Tensor<Scalar> tensor(const std::string& name, bool trainable) const {
    const CheckpointEntry& e = entry(name);
    Tensor<Scalar> t = Tensor<Scalar>::from_array(e.shape, values<Scalar>(name));
    t.set_requires_grad(trainable);
    return t;
  }

  const std::vector<CheckpointEntry>& entries() const { return entries_; }
  const std::vector<std::pair<std::string, std::string>>& meta_entries() const { return meta_; }

  void save(const std::string& path) const {
    std::string buf;
    buf.append(kMagic, 4);
    detail::put_u32(buf, kFormatVersion);
    std::string meta_block;
    for (const auto& [k, v] : meta_) meta_block += k + "=" + v + "\n";
    detail::put_u32(buf, static_cast<std::uint32_t>(meta_block.size()));
    buf += meta_block;
    detail::put_u32(buf, static_cast<std::uint32_t>(entries_.size()));
    for (const auto& e : entries_) {
      detail::put_u16(buf, static_cast<std::uint16_t>(e.name.size()));
      buf += e.name;
      buf.push_back(static_cast<char>(e.dtype));
      buf.push_back(static_cast<char>(e.shape.size()));
      for (Index d : e.shape) detail::put_u32(buf, static_cast<std::uint32_t>(d));
      detail::put_u64(buf, e.raw.size());
      buf.append(reinterpret_cast<const char*>(e.raw.data()),
                 static_cast<std::ptrdiff_t>(e.raw.size()));
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
  }

  static Checkpoint load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    detail::ByteReader r(bytes.data(), bytes.size());
    const std::uint8_t* magic = r.take(4);
    if (std::memcmp(magic, kMagic, 4) != 0)
      throw std::runtime_error("checkpoint: bad magic in " + path);
    const std::uint32_t version = r.u32();
    if (version != kFormatVersion)
      throw std::runtime_error("checkpoint: unsupported format version " +
                               std::to_string(version));
    Checkpoint ckpt;
    const std::uint32_t meta_len = r.u32();
    const std::uint8_t* meta_bytes = r.take(meta_len);
    std::istringstream meta_stream(std::string(meta_bytes, meta_bytes + meta_len));
    std::string line;
    while (std::getline(meta_stream, line)) {
      const auto eq = line.find('=');
      if (eq != std::string::npos) ckpt.set_meta(line.substr(0, eq), line.substr(eq + 1));
    }
    const std::uint32_t count = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
      CheckpointEntry e;
      const std::uint16_t name_len = r.u16();
      const std::uint8_t* name_bytes = r.take(name_len);
      e.name.assign(name_bytes, name_bytes + name_len);
      e.dtype = static_cast<CheckpointDtype>(r.u8());
      const std::uint8_t rank = r.u8();
      for (std::uint8_t d = 0; d < rank; ++d) e.shape.push_back(static_cast<Index>(r.u32()));
      const std::uint64_t raw_len = r.u64();
      const std::uint8_t* raw = r.take(raw_len);
      e.raw.assign(raw, raw + raw_len);
      ckpt.entries_.push_back(std::move(e));
    }
    return ckpt;
  }

 private:
  std::vector<std::pair<std::string, std::string>> meta_;  // insertion-ordered
  std::vector<CheckpointEntry> entries_;
};

// ---------------------------------------------------------------------------
// GanConfig <-> key=value meta

inline void write_gan_config_meta(Checkpoint& ckpt, const GanConfig& config) {
  const auto put = [&](const std::string& k, const std::string& v) {
    ckpt.set_meta("cfg." + k, v);
  };
  char buf[64];
  const auto fmt = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  put("n", std::to_string(config.n));
  put("d", std::to_string(config.d));
  put("n_z", std::to_string(config.n_z));
  put("m", std::to_string(config.m));
  put("n_epoch", std::to_string(config.n_epoch));
  put("delta", fmt(config.delta));
  put("alpha", fmt(config.alpha));
  put("beta1", fmt(config.beta1));
  put("beta2", fmt(config.beta2));
  put("channels", std::to_string(config.channel_widths[0]) + ":" +
                      std::to_string(config.channel_widths[1]) + ":" +
                      std::to_string(config.channel_widths[2]) + ":" +
                      std::to_string(config.channel_widths[3]));
  put("kernel_w", std::to_string(config.kernel_w));
  put("stride", std::to_string(config.stride));
  put("init_std", fmt(config.init_std));
  put("seed", std::to_string(config.seed));
}

inline GanConfig read_gan_config_meta(const Checkpoint& ckpt) {
  GanConfig config;
  const auto get = [&](const std::string& k) { return ckpt.meta("cfg." + k); };
  config.n = std::stoll(get("n"));
  config.d = std::stoll(get("d"));
  config.n_z = std::stoll(get("n_z"));
  config.m = std::stoll(get("m"));
  config.n_epoch = std::stoll(get("n_epoch"));
  config.delta = std::stod(get("delta"));
  config.alpha = std::stod(get("alpha"));
  config.beta1 = std::stod(get("beta1"));
  config.beta2 = std::stod(get("beta2"));
  const std::string channels = get("channels");
  std::istringstream cs(channels);
  std::string tok;
  for (int i = 0; i < 4 && std::getline(cs, tok, ':'); ++i)
    config.channel_widths[static_cast<std::size_t>(i)] = std::stoll(tok);
  config.kernel_w = std::stoll(get("kernel_w"));
  config.stride = std::stoll(get("stride"));
  config.init_std = std::stod(get("init_std"));
  config.seed = std::stoull(get("seed"));
  return config;
}

// ---------------------------------------------------------------------------
// GAN save / load

namespace detail {

template <class Scalar>
void add_conv(Checkpoint& ckpt, const std::string& prefix, const Conv1DParams<Scalar>& p) {
  ckpt.add(prefix + ".w", p.weights);
  ckpt.add(prefix + ".b", p.bias);
}

template <class Scalar>
void load_conv(const Checkpoint& ckpt, const std::string& prefix, Conv1DParams<Scalar>& p) {
  p.weights = ckpt.tensor<Scalar>(prefix + ".w", true);
  p.bias = ckpt.tensor<Scalar>(prefix + ".b", true);
}

template <class Scalar>
void add_batchnorm(Checkpoint& ckpt, const std::string& prefix,
                   const BatchNorm1DParams<Scalar>& p) {
  ckpt.add(prefix + ".gamma", p.gamma);
  ckpt.add(prefix + ".beta", p.beta);
  ckpt.add(prefix + ".running_mean", Shape{p.running_mean.size()}, p.running_mean);
  ckpt.add(prefix + ".running_var", Shape{p.running_var.size()}, p.running_var);
}

template <class Scalar>
void load_batchnorm(const Checkpoint& ckpt, const std::string& prefix,
                    BatchNorm1DParams<Scalar>& p) {
  p.gamma = ckpt.tensor<Scalar>(prefix + ".gamma", true);
  p.beta = ckpt.tensor<Scalar>(prefix + ".beta", true);
  p.running_mean = ckpt.values<Scalar>(prefix + ".running_mean");
  p.running_var = ckpt.values<Scalar>(prefix + ".running_var");
}

template <class Scalar>
void add_dense(Checkpoint& ckpt, const std::string& prefix, const DenseParams<Scalar>& p) {
  ckpt.add(prefix + ".w", p.weights);
  ckpt.add(prefix + ".b", p.bias);
}

template <class Scalar>
void load_dense(const Checkpoint& ckpt, const std::string& prefix, DenseParams<Scalar>& p) {
  p.weights = ckpt.tensor<Scalar>(prefix + ".w", true);
  p.bias = ckpt.tensor<Scalar>(prefix + ".b", true);
}

}  // namespace detail

template <class Scalar>
Checkpoint make_gan_checkpoint(const Generator<Scalar>& generator,
                               const Discriminator<Scalar>& discriminator,
                               const GanConfig& config) {
  Checkpoint ckpt;
  ckpt.set_meta("kind", "gan");
  write_gan_config_meta(ckpt, config);
  detail::add_dense(ckpt, "g.proj", generator.projection());
  for (int i = 0; i < 4; ++i)
    detail::add_conv(ckpt, "g.deconv" + std::to_string(i + 1), generator.deconvs()[i]);
  for (int i = 0; i < 3; ++i)
    detail::add_batchnorm(ckpt, "g.bn" + std::to_string(i + 1), generator.norms()[i]);
  for (int i = 0; i < 4; ++i)
    detail::add_conv(ckpt, "d.conv" + std::to_string(i + 1), discriminator.convs()[i]);
  for (int i = 0; i < 3; ++i)
    detail::add_batchnorm(ckpt, "d.bn" + std::to_string(i + 2), discriminator.norms()[i]);
  detail::add_dense(ckpt, "d.head", discriminator.head());
  return ckpt;
}

template <class Scalar>
void save_gan(const std::string& path, const Generator<Scalar>& generator,
              const Discriminator<Scalar>& discriminator, const GanConfig& config,
              double seconds_per_epoch = 0.0) {
  Checkpoint ckpt = make_gan_checkpoint(generator, discriminator, config);
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", seconds_per_epoch);
  ckpt.set_meta("train_seconds_per_epoch", buf);
  ckpt.save(path);
}

template <class Scalar>
struct LoadedGan {
  Generator<Scalar> generator;
  Discriminator<Scalar> discriminator;
  GanConfig config;
  double seconds_per_epoch = 0.0;
};

template <class Scalar>
LoadedGan<Scalar> load_gan(const std::string& path) {
  Checkpoint ckpt = Checkpoint::load(path);
  if (!ckpt.has_meta("kind") || ckpt.meta("kind") != "gan")
    throw std::runtime_error("checkpoint: " + path + " is not a gan checkpoint");
  LoadedGan<Scalar> out;
  out.config = read_gan_config_meta(ckpt);
  Rng rng(out.config.seed, 1);
  out.generator = Generator<Scalar>(out.config, rng);
  out.discriminator = Discriminator<Scalar>(out.config, rng);
  detail::load_dense(ckpt, "g.proj", out.generator.projection());
  for (int i = 0; i < 4; ++i)
    detail::load_conv(ckpt, "g.deconv" + std::to_string(i + 1), out.generator.deconvs()[i]);
  for (int i = 0; i < 3; ++i)
    detail::load_batchnorm(ckpt, "g.bn" + std::to_string(i + 1), out.generator.norms()[i]);
  for (int i = 0; i < 4; ++i)
    detail::load_conv(ckpt, "d.conv" + std::to_string(i + 1), out.discriminator.convs()[i]);
  for (int i = 0; i < 3; ++i)
    detail::load_batchnorm(ckpt, "d.bn" + std::to_string(i + 2), out.discriminator.norms()[i]);
  detail::load_dense(ckpt, "d.head", out.discriminator.head());
  if (ckpt.has_meta("train_seconds_per_epoch"))
    out.seconds_per_epoch = std::stod(ckpt.meta("train_seconds_per_epoch"));
  return out;
}

// ---------------------------------------------------------------------------
// Linear classifier save / load (same container)

inline void save_classifier(const std::string& path, const LinearClassifier& clf,
                            const std::vector<int>& label_map) {
  Checkpoint ckpt;
  ckpt.set_meta("kind", "linear_classifier");
  ckpt.set_meta("loss",
                clf.loss == ClassifierLoss::kSoftmaxCrossEntropy ? "softmax-ce" : "hinge-ovr");
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", clf.l2);
  ckpt.set_meta("l2", buf);
  std::string map_str;
  for (std::size_t i = 0; i < label_map.size(); ++i) {
    if (i) map_str += ":";
    map_str += std::to_string(label_map[i]);
  }
  ckpt.set_meta("label_map", map_str);
  ArrayX<double> w(clf.weights.size());
  for (Index r = 0; r < clf.weights.rows(); ++r)
    for (Index c = 0; c < clf.weights.cols(); ++c) w[r * clf.weights.cols() + c] = clf.weights(r, c);
  ckpt.add("clf.w", Shape{clf.weights.rows(), clf.weights.cols()}, w);
  ArrayX<double> b(clf.bias.size());
  for (Index c = 0; c < clf.bias.size(); ++c) b[c] = clf.bias[c];
  ckpt.add("clf.b", Shape{clf.bias.size()}, b);
  ckpt.save(path);
}

inline std::pair<LinearClassifier, std::vector<int>> load_classifier(const std::string& path) {
  Checkpoint ckpt = Checkpoint::load(path);
  if (!ckpt.has_meta("kind") || ckpt.meta("kind") != "linear_classifier")
    throw std::runtime_error("checkpoint: " + path + " is not a classifier checkpoint");
  LinearClassifier clf;
  clf.loss = ckpt.meta("loss") == "hinge-ovr" ? ClassifierLoss::kHingeOneVsRest
                                              : ClassifierLoss::kSoftmaxCrossEntropy;
  clf.l2 = std::stod(ckpt.meta("l2"));
  const CheckpointEntry& we = ckpt.entry("clf.w");
  const ArrayX<double> w = ckpt.values<double>("clf.w");
  clf.weights.resize(we.shape[0], we.shape[1]);
  for (Index r = 0; r < we.shape[0]; ++r)
    for (Index c = 0; c < we.shape[1]; ++c) clf.weights(r, c) = w[r * we.shape[1] + c];
  const ArrayX<double> b = ckpt.values<double>("clf.b");
  clf.bias.resize(b.size());
  for (Index c = 0; c < b.size(); ++c) clf.bias[c] = b[c];
  std::vector<int> label_map;
  std::istringstream ms(ckpt.meta("label_map"));
  std::string tok;
  while (std::getline(ms, tok, ':'))
    if (!tok.empty()) label_map.push_back(std::stoi(tok));
  return {std::move(clf), std::move(label_map)};
}

}  // namespace tcgan
