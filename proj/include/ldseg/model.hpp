#pragma once

#include <array>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "ldseg/adam.hpp"
#include "ldseg/nn_ops.hpp"

// VGG16 encoder with a mirrored decoder: five 2x max-pool stages down, five
// bilinear 2x stages up, each decoder stage summing the shape-matched
// pre-pool encoder activation, and a tanh head over the four class planes.
namespace ldseg::net {

struct ArchitectureSpec {
  int in_channels = 4;
  int num_classes = 4;
  double width_multiplier = 1.0;
  int input_size = 224;

  void validate() const {
    if (in_channels < 1 || num_classes < 1) throw ValueError("architecture: channel counts must be positive");
    if (!(width_multiplier > 0.0 && width_multiplier <= 1.0))
      throw ValueError("architecture: width multiplier must be in (0,1]");
    if (input_size <= 0 || input_size % 32 != 0)
      throw ValueError("architecture: input size must be a positive multiple of 32");
  }

  /// Nearest-integer channel scaling, minimum 1.
  int scaled(int base_channels) const {
    return std::max<int>(1, static_cast<int>(std::llround(base_channels * width_multiplier)));
  }
};

inline constexpr std::array<int, 5> kStageChannels{64, 128, 256, 512, 512};
inline constexpr std::array<int, 5> kStageConvs{2, 2, 3, 3, 3};

namespace detail {

template <typename T>
void add_into(Tensor<T>& dst, const Tensor<T>& src) {
  for (std::int64_t i = 0; i < dst.numel(); ++i) dst[i] += src[i];
}

// conv 3x3 -> batch norm -> ReLU, with the caches backward needs.
template <typename T>
struct ConvBlock {
  nn::Parameter<T> weight, bias, gamma, beta;
  Tensor<T> running_mean, running_var;

  Tensor<T> x_in, relu_out;
  nn::BnCache<T> bn_cache;

  void init(std::int64_t cin, std::int64_t cout, const std::string& name, Rng& rng) {
    weight = nn::Parameter<T>(Tensor<T>({cout, cin, 3, 3}), name + ".weight");
    bias = nn::Parameter<T>(Tensor<T>({cout}), name + ".bias");
    gamma = nn::Parameter<T>(Tensor<T>::full({cout}, T{1}), name + ".bn_gamma");
    beta = nn::Parameter<T>(Tensor<T>({cout}), name + ".bn_beta");
    running_mean = Tensor<T>({cout});
    running_var = Tensor<T>::full({cout}, T{1});
    const double bound = std::sqrt(6.0 / static_cast<double>(cin * 9));
    for (std::int64_t i = 0; i < weight.value.numel(); ++i)
      weight.value[i] = static_cast<T>(rng.uniform(-bound, bound));
  }

  Tensor<T> forward(const Tensor<T>& x, nn::BnMode mode, bool cache) {
    Tensor<T> y = nn::conv2d_forward(x, weight.value, bias.value);
    y = nn::batchnorm2d_forward(y, gamma.value, beta.value, running_mean, running_var, mode,
                                cache ? &bn_cache : nullptr);
    y = nn::relu_forward(y);
    if (cache) {
      x_in = x;
      relu_out = y;
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& grad_out) {
    Tensor<T> g = nn::relu_backward(relu_out, grad_out);
    auto bn = nn::batchnorm2d_backward(bn_cache, gamma.value, g);
    add_into(gamma.grad, bn.ggamma);
    add_into(beta.grad, bn.gbeta);
    auto cv = nn::conv2d_backward(x_in, weight.value, bn.gx);
    add_into(weight.grad, cv.gweight);
    add_into(bias.grad, cv.gbias);
    return std::move(cv.gx);
  }

  void drop_caches() {
    x_in = {};
    relu_out = {};
    bn_cache = {};
  }
};

}  // namespace detail

template <typename T>
class SegmentationModel {
 public:
  SegmentationModel() = default;

  const ArchitectureSpec& spec() const { return spec_; }
  nn::BnMode mode() const { return mode_; }
  void set_mode(nn::BnMode m) { mode_ = m; }

  /// Builds the network with seeded fan-in-scaled uniform conv weights,
  /// zero biases, and identity batch-norm (gamma 1, beta 0, stats 0/1).
  static SegmentationModel build(const ArchitectureSpec& spec, std::uint64_t seed) {
    spec.validate();
    SegmentationModel m;
    m.spec_ = spec;
    Rng rng(seed);

    std::int64_t cin = spec.in_channels;
    for (int s = 0; s < 5; ++s) {
      const std::int64_t cout = spec.scaled(kStageChannels[static_cast<std::size_t>(s)]);
      for (int k = 0; k < kStageConvs[static_cast<std::size_t>(s)]; ++k) {
        detail::ConvBlock<T> block;
        block.init(cin, cout, "enc" + std::to_string(s + 1) + "_" + std::to_string(k + 1), rng);
        m.encoder_.push_back(std::move(block));
        cin = cout;
      }
    }
    // decoder stage s consumes the previous depth and lands on the channel
    // count of the skip it sums with (stages 5..1 of the encoder)
    for (int s = 0; s < 5; ++s) {
      const std::int64_t cout = spec.scaled(kStageChannels[static_cast<std::size_t>(4 - s)]);
      const std::string base = "dec" + std::to_string(s + 1);
      detail::ConvBlock<T> b1, b2;
      b1.init(cin, cout, base + "_1", rng);
      b2.init(cout, cout, base + "_2", rng);
      m.decoder_.push_back(std::move(b1));
      m.decoder_.push_back(std::move(b2));
      cin = cout;
    }
    m.head_weight_ = nn::Parameter<T>(Tensor<T>({spec.num_classes, cin, 3, 3}), "head.weight");
    m.head_bias_ = nn::Parameter<T>(Tensor<T>({spec.num_classes}), "head.bias");
    const double bound = std::sqrt(6.0 / static_cast<double>(cin * 9));
    for (std::int64_t i = 0; i < m.head_weight_.value.numel(); ++i)
      m.head_weight_.value[i] = static_cast<T>(rng.uniform(-bound, bound));
    return m;
  }

  /// Forward pass. Caches for backward are recorded only in train mode.
  Tensor<T> forward(const Tensor<T>& x) {
    if (x.ndim() != 4 || x.dim(1) != spec_.in_channels)
      throw ShapeError("model: input must be [B," + std::to_string(spec_.in_channels) + ",S,S]");
    if (x.dim(2) != spec_.input_size || x.dim(3) != spec_.input_size)
      throw ShapeError("model: input spatial size must be " + std::to_string(spec_.input_size));
    const bool cache = mode_ == nn::BnMode::train;

    Tensor<T> cur = x;
    std::array<Tensor<T>, 5> skips;
    std::size_t bi = 0;
    for (int s = 0; s < 5; ++s) {
      for (int k = 0; k < kStageConvs[static_cast<std::size_t>(s)]; ++k)
        cur = encoder_[bi++].forward(cur, mode_, cache);
      skips[static_cast<std::size_t>(s)] = cur;
      auto pooled = nn::maxpool2_forward(cur);
      cur = std::move(pooled.y);
      if (cache) pool_argmax_[static_cast<std::size_t>(s)] = std::move(pooled.argmax);
    }
    for (int s = 0; s < 5; ++s) {
      cur = nn::upsample_bilinear2x_forward(cur);
      cur = decoder_[static_cast<std::size_t>(2 * s)].forward(cur, mode_, cache);
      cur = nn::add(cur, skips[static_cast<std::size_t>(4 - s)]);
      cur = decoder_[static_cast<std::size_t>(2 * s + 1)].forward(cur, mode_, cache);
    }
    if (cache) head_x_in_ = cur;
    cur = nn::conv2d_forward(cur, head_weight_.value, head_bias_.value);
    cur = nn::tanh_forward(cur);
    if (cache) head_tanh_out_ = cur;
    return cur;
  }

  /// Backward from a gradient w.r.t. the tanh output. Accumulates parameter
  /// gradients; requires a preceding train-mode forward.
  Tensor<T> backward(const Tensor<T>& grad_out) {
    if (head_tanh_out_.numel() == 0)
      throw ValueError("model: backward requires a train-mode forward first");
    Tensor<T> g = nn::tanh_backward(head_tanh_out_, grad_out);
    auto hv = nn::conv2d_backward(head_x_in_, head_weight_.value, g);
    detail::add_into(head_weight_.grad, hv.gweight);
    detail::add_into(head_bias_.grad, hv.gbias);
    g = std::move(hv.gx);

    std::array<Tensor<T>, 5> skip_grads;
    for (int s = 4; s >= 0; --s) {
      g = decoder_[static_cast<std::size_t>(2 * s + 1)].backward(g);
      skip_grads[static_cast<std::size_t>(4 - s)] = g;  // the add junction
      g = decoder_[static_cast<std::size_t>(2 * s)].backward(g);
      g = nn::upsample_bilinear2x_backward(g, g.dim(2) / 2, g.dim(3) / 2);
    }
    std::size_t bi = encoder_.size();
    for (int s = 4; s >= 0; --s) {
      const auto& am = pool_argmax_[static_cast<std::size_t>(s)];
      g = nn::maxpool2_backward(am, {am.dim(0), am.dim(1), am.dim(2) * 2, am.dim(3) * 2}, g);
      detail::add_into(g, skip_grads[static_cast<std::size_t>(s)]);
      for (int k = 0; k < kStageConvs[static_cast<std::size_t>(s)]; ++k)
        g = encoder_[--bi].backward(g);
    }
    return g;
  }

  void zero_grads() {
    for (auto* p : parameters()) p->zero_grad();
  }

  void drop_caches() {
    for (auto& b : encoder_) b.drop_caches();
    for (auto& b : decoder_) b.drop_caches();
    for (auto& a : pool_argmax_) a = {};
    head_x_in_ = {};
    head_tanh_out_ = {};
  }

  std::vector<nn::Parameter<T>*> parameters() {
    std::vector<nn::Parameter<T>*> out;
    for (auto& b : encoder_) {
      out.push_back(&b.weight);
      out.push_back(&b.bias);
      out.push_back(&b.gamma);
      out.push_back(&b.beta);
    }
    for (auto& b : decoder_) {
      out.push_back(&b.weight);
      out.push_back(&b.bias);
      out.push_back(&b.gamma);
      out.push_back(&b.beta);
    }
    out.push_back(&head_weight_);
    out.push_back(&head_bias_);
    return out;
  }

  /// Non-learnable state (batch-norm running statistics), name -> tensor.
  std::vector<std::pair<std::string, Tensor<T>*>> buffers() {
    std::vector<std::pair<std::string, Tensor<T>*>> out;
    auto push = [&](detail::ConvBlock<T>& b) {
      const std::string base = b.weight.name.substr(0, b.weight.name.find('.'));
      out.emplace_back(base + ".bn_mean", &b.running_mean);
      out.emplace_back(base + ".bn_var", &b.running_var);
    };
    for (auto& b : encoder_) push(b);
    for (auto& b : decoder_) push(b);
    return out;
  }

  std::int64_t parameter_count() {
    std::int64_t n = 0;
    for (auto* p : parameters()) n += p->value.numel();
    return n;
  }

 private:
  ArchitectureSpec spec_;
  std::vector<detail::ConvBlock<T>> encoder_, decoder_;
  nn::Parameter<T> head_weight_, head_bias_;
  std::array<Tensor<std::int64_t>, 5> pool_argmax_;
  Tensor<T> head_x_in_, head_tanh_out_;
  nn::BnMode mode_ = nn::BnMode::eval;
};

/// Per-pixel argmax over the class axis; ties resolve to the lowest class.
template <typename T>
Tensor<std::uint8_t> predict_labels(const Tensor<T>& pred) {
  if (pred.ndim() != 4) throw ShapeError("predict_labels: input must be [B,C,S,S]");
  const std::int64_t B = pred.dim(0), C = pred.dim(1), HW = pred.dim(2) * pred.dim(3);
  Tensor<std::uint8_t> labels({B, pred.dim(2), pred.dim(3)});
  for (std::int64_t b = 0; b < B; ++b) {
    const T* p = pred.data() + b * C * HW;
    std::uint8_t* pl = labels.data() + b * HW;
    for (std::int64_t i = 0; i < HW; ++i) {
      std::uint8_t best = 0;
      T bv = p[i];
      for (std::int64_t c = 1; c < C; ++c) {
        if (p[c * HW + i] > bv) {
          bv = p[c * HW + i];
          best = static_cast<std::uint8_t>(c);
        }
      }
      pl[i] = best;
    }
  }
  return labels;
}

// ---------------------------------------------------------------------------
// Checkpoint container: magic "LDCK", version, JSON architecture descriptor,
// named tensor table, optional trailing named tensor table (optimizer state).

enum class CheckpointCode {
  bad_magic,
  bad_version,
  corrupt,
  truncated,
  shape_mismatch,
  dtype_mismatch,
  unknown_entry,
  missing_entry,
};

struct CheckpointError : IoError {
  CheckpointCode code;
  CheckpointError(CheckpointCode c, const std::string& msg) : IoError(msg), code(c) {}
};

namespace detail {

inline constexpr char kMagic[4] = {'L', 'D', 'C', 'K'};
inline constexpr std::uint32_t kVersion = 1;

template <typename V>
void write_pod(std::ostream& os, V v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V read_pod(std::istream& is) {
  V v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!is) throw CheckpointError(CheckpointCode::truncated, "checkpoint: truncated payload");
  return v;
}

template <typename T>
constexpr std::uint8_t dtype_tag() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? 0 : 1;
}

template <typename T>
void write_entry(std::ostream& os, const std::string& name, const Tensor<T>& t) {
  write_pod<std::uint16_t>(os, static_cast<std::uint16_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_pod<std::uint8_t>(os, static_cast<std::uint8_t>(t.ndim()));
  for (std::int64_t d = 0; d < t.ndim(); ++d) write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(t.dim(d)));
  write_pod<std::uint8_t>(os, dtype_tag<T>());
  os.write(reinterpret_cast<const char*>(t.data()),
           static_cast<std::streamsize>(sizeof(T) * static_cast<std::size_t>(t.numel())));
}

template <typename T>
std::pair<std::string, Tensor<T>> read_entry(std::istream& is) {
  const auto name_len = read_pod<std::uint16_t>(is);
  std::string name(name_len, '\0');
  is.read(name.data(), name_len);
  if (!is) throw CheckpointError(CheckpointCode::truncated, "checkpoint: truncated payload");
  const auto ndim = read_pod<std::uint8_t>(is);
  std::vector<std::int64_t> dims;
  for (int d = 0; d < ndim; ++d) dims.push_back(read_pod<std::uint32_t>(is));
  const auto tag = read_pod<std::uint8_t>(is);
  if (tag != dtype_tag<T>())
    throw CheckpointError(CheckpointCode::dtype_mismatch, "checkpoint: dtype mismatch in " + name);
  Tensor<T> t(dims);
  is.read(reinterpret_cast<char*>(t.data()),
          static_cast<std::streamsize>(sizeof(T) * static_cast<std::size_t>(t.numel())));
  if (!is) throw CheckpointError(CheckpointCode::truncated, "checkpoint: truncated payload in " + name);
  return {std::move(name), std::move(t)};
}

inline nlohmann::json spec_to_json(const ArchitectureSpec& s) {
  return {{"in_channels", s.in_channels},
          {"num_classes", s.num_classes},
          {"width_multiplier", s.width_multiplier},
          {"input_size", s.input_size}};
}

inline ArchitectureSpec spec_from_json(const nlohmann::json& j) {
  ArchitectureSpec s;
  s.in_channels = j.at("in_channels").get<int>();
  s.num_classes = j.at("num_classes").get<int>();
  s.width_multiplier = j.at("width_multiplier").get<double>();
  s.input_size = j.at("input_size").get<int>();
  return s;
}

}  // namespace detail

template <typename T>
void save_checkpoint(SegmentationModel<T>& model, const std::string& path,
                     const std::map<std::string, Tensor<T>>* optimizer_state = nullptr) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("checkpoint: cannot open for writing: " + path);
  os.write(detail::kMagic, 4);
  detail::write_pod<std::uint32_t>(os, detail::kVersion);
  const std::string desc = detail::spec_to_json(model.spec()).dump();
  detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(desc.size()));
  os.write(desc.data(), static_cast<std::streamsize>(desc.size()));

  const auto params = model.parameters();
  const auto bufs = model.buffers();
  detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(params.size() + bufs.size()));
  for (auto* p : params) detail::write_entry(os, p->name, p->value);
  for (auto& [name, t] : bufs) detail::write_entry(os, name, *t);

  if (optimizer_state) {
    detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(optimizer_state->size()));
    for (const auto& [name, t] : *optimizer_state) detail::write_entry(os, name, t);
  }
  if (!os) throw IoError("checkpoint: write failed: " + path);
}

template <typename T>
struct LoadedCheckpoint {
  SegmentationModel<T> model;
  std::map<std::string, Tensor<T>> optimizer_state;  // empty if absent
};

/// Reads a checkpoint. If `expected` is given, entry shapes must match a model
/// built from it; otherwise the embedded descriptor defines the architecture.
template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::string& path,
                                    const std::optional<ArchitectureSpec>& expected = std::nullopt) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("checkpoint: cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, detail::kMagic, 4) != 0)
    throw CheckpointError(CheckpointCode::bad_magic, "not a checkpoint: " + path);
  const auto version = detail::read_pod<std::uint32_t>(is);
  if (version != detail::kVersion)
    throw CheckpointError(CheckpointCode::bad_version,
                          "checkpoint: unsupported version " + std::to_string(version));
  const auto desc_len = detail::read_pod<std::uint32_t>(is);
  std::string desc(desc_len, '\0');
  is.read(desc.data(), desc_len);
  if (!is) throw CheckpointError(CheckpointCode::truncated, "checkpoint: truncated descriptor");
  ArchitectureSpec stored;
  try {
    stored = detail::spec_from_json(nlohmann::json::parse(desc));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(CheckpointCode::corrupt,
                          std::string("checkpoint: bad descriptor: ") + e.what());
  }

  LoadedCheckpoint<T> out;
  out.model = SegmentationModel<T>::build(expected.value_or(stored), /*seed=*/0);

  std::map<std::string, Tensor<T>*> slots;
  std::map<std::string, bool> seen;
  for (auto* p : out.model.parameters()) slots[p->name] = &p->value;
  for (auto& [name, t] : out.model.buffers()) slots[name] = t;

  const auto count = detail::read_pod<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < count; ++i) {
    auto [name, tensor] = detail::read_entry<T>(is);
    auto it = slots.find(name);
    if (it == slots.end())
      throw CheckpointError(CheckpointCode::unknown_entry, "checkpoint: unknown entry " + name);
    if (it->second->shape() != tensor.shape())
      throw CheckpointError(CheckpointCode::shape_mismatch,
                            "checkpoint: shape mismatch in " + name + ": file has " +
                                shape_str(tensor.shape()) + ", model expects " +
                                shape_str(it->second->shape()));
    *it->second = std::move(tensor);
    seen[name] = true;
  }
  for (const auto& [name, slot] : slots) {
    (void)slot;
    if (!seen.count(name))
      throw CheckpointError(CheckpointCode::missing_entry, "checkpoint: missing entry " + name);
  }

  // optional trailing optimizer-state table
  if (is.peek() != std::char_traits<char>::eof()) {
    const auto extra = detail::read_pod<std::uint32_t>(is);
    for (std::uint32_t i = 0; i < extra; ++i) {
      auto [name, tensor] = detail::read_entry<T>(is);
      out.optimizer_state.emplace(std::move(name), std::move(tensor));
    }
  }
  return out;
}

}  // namespace ldseg::net
