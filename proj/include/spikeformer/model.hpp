// Full-network assembly: variant parsing, the tokenizer stem + transformer
// stack + sequence pooling + classifier, parameter registry/counting, and
// checkpoint apply/extract.
//
// Named variants (layers, heads, mlp ratio, dim):
//   Spikeformer-2  -> (2, 2, 1, 128)
//   Spikeformer-4  -> (4, 2, 1, 128)
//   Spikeformer-7  -> (7, 4, 2, 256)
//   Spikeformer-7L -> (7, 8, 3, 512)
// and the stem layout rides behind a slash: "Spikeformer-7/3x2x3" is kernel
// 3, 2 modules per stage, 3 stages ('x' or the multiplication sign both
// parse).  Stage channels run dim/2^(s-1), ..., dim/2, dim.
#pragma once

#include <algorithm>
#include <cctype>
#include <string>
#include <vector>

#include "spikeformer/attention.hpp"
#include "spikeformer/serialize.hpp"
#include "spikeformer/tokenizer.hpp"

namespace spikeformer {

struct ModelSpec {
  std::string name;  // canonical text, e.g. "Spikeformer-7/3x2x3"
  // transformer
  Index blocks = 2;
  Index heads = 2;
  Index mlp_ratio = 1;
  Index dim = 128;
  // tokenizer stem
  Index stem_kernel = 3;
  Index stem_modules = 1;  // modules per stage; the first one downsamples
  Index stem_stages = 2;
  // problem geometry
  Index in_channels = 2;
  Index input_h = 128;
  Index input_w = 128;
  Index time_steps = 16;
  Index classes = 10;
  // neurons / regularization
  NeuronMode neuron_mode = NeuronMode::plif;
  double tau = 2.0;
  double v_threshold = 1.0;
  double v_reset = 0.0;
  double surrogate_alpha = 2.0;
  double droppath = 0.1;
  // the positional table keeps at least this many time rows so parameter
  // counts do not depend on the simulation length used for one run
  Index pos_rows_min = 16;

  NeuronConfig neuron_config() const {
    NeuronConfig cfg;
    cfg.mode = neuron_mode;
    cfg.tau = tau;
    cfg.v_threshold = v_threshold;
    cfg.v_reset = v_reset;
    cfg.surrogate.alpha = surrogate_alpha;
    return cfg;
  }
};

// Channel plan: doubling per stage up to the embedding dim.
inline std::vector<Index> stage_channels(const ModelSpec& spec) {
  const Index denom = Index(1) << (spec.stem_stages - 1);
  if (spec.stem_stages < 1)
    throw std::invalid_argument("model: need at least one tokenizer stage");
  if (spec.dim % denom != 0)
    throw std::invalid_argument("model: embedding dim " + std::to_string(spec.dim) +
                                " is not divisible by 2^" + std::to_string(spec.stem_stages - 1) +
                                " as the stage channel plan requires");
  std::vector<Index> ch(static_cast<std::size_t>(spec.stem_stages));
  for (Index i = 0; i < spec.stem_stages; ++i)
    ch[static_cast<std::size_t>(i)] = spec.dim >> (spec.stem_stages - 1 - i);
  return ch;
}

// N = (H/2^s)·(W/2^s); each downsample stage divides the token count by 4.
inline Index tokens_per_frame(const ModelSpec& spec) {
  const Index div = Index(1) << spec.stem_stages;
  if (spec.input_h % div != 0 || spec.input_w % div != 0)
    throw std::invalid_argument("model: input " + std::to_string(spec.input_h) + "x" +
                                std::to_string(spec.input_w) + " is not divisible by 2^" +
                                std::to_string(spec.stem_stages) + " for " +
                                std::to_string(spec.stem_stages) + " downsample stages");
  return (spec.input_h / div) * (spec.input_w / div);
}

namespace detail {

// replaces the UTF-8 multiplication sign with 'x'
inline std::string normalize_layout_text(std::string s) {
  std::string out;
  for (std::size_t i = 0; i < s.size();) {
    if (i + 1 < s.size() && static_cast<unsigned char>(s[i]) == 0xC3 &&
        static_cast<unsigned char>(s[i + 1]) == 0x97) {
      out += 'x';
      i += 2;
    } else {
      out += s[i];
      ++i;
    }
  }
  return out;
}

inline Index parse_positive_int(const std::string& s, const std::string& what,
                                const std::string& whole) {
  if (s.empty() || !std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isdigit(c); }))
    throw std::invalid_argument("parse_variant: malformed " + what + " '" + s + "' in '" +
                                whole + "'");
  const long long v = std::stoll(s);
  if (v < 1) throw std::invalid_argument("parse_variant: " + what + " must be positive in '" + whole + "'");
  return static_cast<Index>(v);
}

}  // namespace detail

// "Spikeformer-<v>/<k>x<m>x<s>"  ->  architecture fields of a ModelSpec.
// Geometry (classes, channels, input size, T) keeps defaults; callers set
// those from the dataset.
inline ModelSpec parse_variant(const std::string& text) {
  const std::string norm = detail::normalize_layout_text(text);
  const auto slash = norm.find('/');
  if (slash == std::string::npos)
    throw std::invalid_argument("parse_variant: expected '<variant>/<k>x<m>x<s>', got '" + text +
                                "' (missing '/')");
  const std::string name = norm.substr(0, slash);
  const std::string layout = norm.substr(slash + 1);

  ModelSpec spec;
  if (name == "Spikeformer-2") {
    spec.blocks = 2; spec.heads = 2; spec.mlp_ratio = 1; spec.dim = 128;
  } else if (name == "Spikeformer-4") {
    spec.blocks = 4; spec.heads = 2; spec.mlp_ratio = 1; spec.dim = 128;
  } else if (name == "Spikeformer-7") {
    spec.blocks = 7; spec.heads = 4; spec.mlp_ratio = 2; spec.dim = 256;
  } else if (name == "Spikeformer-7L") {
    spec.blocks = 7; spec.heads = 8; spec.mlp_ratio = 3; spec.dim = 512;
  } else {
    throw std::invalid_argument("parse_variant: unknown variant '" + name +
                                "' (expected Spikeformer-2, -4, -7 or -7L)");
  }

  const auto x1 = layout.find('x');
  const auto x2 = x1 == std::string::npos ? std::string::npos : layout.find('x', x1 + 1);
  if (x1 == std::string::npos || x2 == std::string::npos || layout.find('x', x2 + 1) != std::string::npos)
    throw std::invalid_argument("parse_variant: malformed stem layout '" + layout + "' in '" +
                                text + "' (expected <k>x<m>x<s>)");
  spec.stem_kernel = detail::parse_positive_int(layout.substr(0, x1), "kernel size", text);
  spec.stem_modules = detail::parse_positive_int(layout.substr(x1 + 1, x2 - x1 - 1),
                                                 "modules-per-stage", text);
  spec.stem_stages = detail::parse_positive_int(layout.substr(x2 + 1), "stage count", text);
  if (spec.stem_kernel % 2 == 0)
    throw std::invalid_argument("parse_variant: kernel size must be odd, got " +
                                std::to_string(spec.stem_kernel) + " in '" + text + "'");
  spec.name = name + "/" + std::to_string(spec.stem_kernel) + "x" +
              std::to_string(spec.stem_modules) + "x" + std::to_string(spec.stem_stages);
  return spec;
}

// ---------------------------------------------------------------------------
// the model
// ---------------------------------------------------------------------------

template <typename S>
class SpikeformerModel {
 public:
  SpikeformerModel(ModelSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
    validate();
    RngStream rng(seed);
    build(rng);
  }

  const ModelSpec& spec() const { return spec_; }
  Index tokens() const { return tokens_per_frame(spec_); }

  // frames: [T, B, C, H, W] -> logits [B, classes]
  Tensor<S> forward(const Tensor<S>& frames, bool training, RngStream& rng) {
    if (frames.rank() != 5)
      throw std::invalid_argument("forward: frames must be [T,B,C,H,W], got " +
                                  shape_str(frames.shape()));
    if (frames.extent(0) != spec_.time_steps || frames.extent(2) != spec_.in_channels ||
        frames.extent(3) != spec_.input_h || frames.extent(4) != spec_.input_w)
      throw std::invalid_argument(
          "forward: frames " + shape_str(frames.shape()) + " do not match the configured [T=" +
          std::to_string(spec_.time_steps) + ", B, C=" + std::to_string(spec_.in_channels) +
          ", " + std::to_string(spec_.input_h) + ", " + std::to_string(spec_.input_w) + "]");
    Tensor<S> feat = stem_->forward(frames, training);
    Tensor<S> z = add_positional(tokens_from_feature_map(feat), pos_table_);
    for (auto& blk : blocks_) z = transformer_block(z, blk, training, rng);
    z = layer_norm(z, final_ln_gamma_, final_ln_beta_);
    Tensor<S> pooled = sequence_pool(z, pool_w_);       // [T, B, D]
    Tensor<S> feat_mean = mean0(pooled);                // [B, D]
    return linear(feat_mean, head_w_, std::optional<Tensor<S>>(head_b_));
  }

  // learnable tensors only (BN running statistics are buffers, not counted)
  Index parameter_count() const {
    Index n = 0;
    for (const auto& nt : registry_)
      if (nt.trainable) n += nt.tensor.numel();
    return n;
  }

  const std::vector<NamedTensor<S>>& named_tensors() const { return registry_; }

  std::vector<Tensor<S>> trainable_parameters() const {
    std::vector<Tensor<S>> out;
    for (const auto& nt : registry_)
      if (nt.trainable) out.push_back(nt.tensor);
    return out;
  }

  // Copies checkpoint tensors into the model.  The name sets must match
  // exactly (extra names in either direction are reported), shapes too.
  void load_state(const Checkpoint<S>& ckpt) {
    std::size_t used = 0;
    for (auto& nt : registry_) {
      const Tensor<S>* src = ckpt.find(nt.name);
      if (!src)
        throw std::runtime_error("checkpoint does not contain tensor '" + nt.name +
                                 "' required by " + spec_.name +
                                 " (parameter-name mismatch; was it saved from a different "
                                 "variant?)");
      if (src->shape() != nt.tensor.shape())
        throw std::runtime_error("checkpoint tensor '" + nt.name + "' has shape " +
                                 shape_str(src->shape()) + " but the model expects " +
                                 shape_str(nt.tensor.shape()));
      nt.tensor.values() = src->values();
      ++used;
    }
    // count only model tensors; optimizer state (opt.*) may ride along
    std::size_t model_tensors = 0;
    for (const auto& [name, t] : ckpt.tensors)
      if (name.rfind("opt.", 0) != 0) ++model_tensors;
    if (model_tensors != used)
      throw std::runtime_error("checkpoint holds " + std::to_string(model_tensors) +
                               " model tensors but " + spec_.name + " expects " +
                               std::to_string(used) + " (parameter-name mismatch)");
  }

  void extract_state(Checkpoint<S>& ckpt) const {
    for (const auto& nt : registry_) ckpt.tensors.emplace_back(nt.name, nt.tensor);
  }

  // pieces exposed for tests (zero-branch identity, probes, ...)
  TokenizerStem<S>& stem() { return *stem_; }
  std::vector<TransformerBlock<S>>& transformer_blocks() { return blocks_; }
  Tensor<S>& positional_table() { return pos_table_; }
  Tensor<S>& final_ln_gamma() { return final_ln_gamma_; }
  Tensor<S>& final_ln_beta() { return final_ln_beta_; }
  Tensor<S>& pool_weight() { return pool_w_; }
  Tensor<S>& head_weight() { return head_w_; }
  Tensor<S>& head_bias() { return head_b_; }

 private:
  void validate() const {
    if (spec_.blocks < 1) throw std::invalid_argument("model: need at least one transformer block");
    if (spec_.heads < 1 || spec_.dim % spec_.heads != 0)
      throw std::invalid_argument("model: heads " + std::to_string(spec_.heads) +
                                  " must divide embedding dim " + std::to_string(spec_.dim));
    if (spec_.mlp_ratio < 1) throw std::invalid_argument("model: mlp ratio must be >= 1");
    if (spec_.classes < 2) throw std::invalid_argument("model: need at least two classes");
    if (spec_.time_steps < 1) throw std::invalid_argument("model: need at least one time step");
    tokens_per_frame(spec_);  // validates divisibility
    stage_channels(spec_);    // validates channel plan
  }

  void build(RngStream& rng) {
    const NeuronConfig ncfg = spec_.neuron_config();
    stem_.emplace(spec_.in_channels, stage_channels(spec_), spec_.stem_kernel,
                  spec_.stem_modules, ncfg, rng);
    for (std::size_t i = 0; i < stem_->modules.size(); ++i) {
      auto& m = stem_->modules[i];
      const std::string base = "stem.m" + std::to_string(i);
      register_conv_unit(base + ".a", m.unit_a);
      register_conv_unit(base + ".b", m.unit_b);
      if (m.shortcut) register_conv_unit(base + ".sc", *m.shortcut);
    }

    const Index n = tokens_per_frame(spec_);
    const Index pos_rows = std::max(spec_.time_steps, spec_.pos_rows_min);
    pos_table_ = trunc_normal_param<S>({pos_rows, n, spec_.dim}, 0.02, rng);
    add_entry("pos_table", pos_table_, true);

    const Index hidden = spec_.mlp_ratio * spec_.dim;
    blocks_.reserve(static_cast<std::size_t>(spec_.blocks));
    for (Index l = 0; l < spec_.blocks; ++l) {
      blocks_.emplace_back(spec_.dim, spec_.heads, hidden, ncfg, spec_.droppath, rng);
      auto& b = blocks_.back();
      const std::string base = "block" + std::to_string(l);
      register_attention_sublayer(base + ".t", b.temporal);
      register_attention_sublayer(base + ".s", b.spatial);
      add_entry(base + ".mlp.ln.gamma", b.mlp_ln_gamma, true);
      add_entry(base + ".mlp.ln.beta", b.mlp_ln_beta, true);
      add_entry(base + ".mlp.fc1.weight", b.fc1_w, true);
      add_entry(base + ".mlp.fc1.bias", b.fc1_b, true);
      add_entry(base + ".mlp.fc2.weight", b.fc2_w, true);
      add_entry(base + ".mlp.fc2.bias", b.fc2_b, true);
      if (b.mlp_neuron.tau_param.defined())
        add_entry(base + ".mlp.neuron.tau", b.mlp_neuron.tau_param, true);
    }

    final_ln_gamma_ = Tensor<S>::filled({spec_.dim}, S(1));
    final_ln_gamma_.set_requires_grad();
    final_ln_beta_ = zeros_param<S>({spec_.dim});
    add_entry("final_ln.gamma", final_ln_gamma_, true);
    add_entry("final_ln.beta", final_ln_beta_, true);

    pool_w_ = fan_in_uniform<S>({spec_.dim, 1}, spec_.dim, rng);
    add_entry("pool.weight", pool_w_, true);
    head_w_ = fan_in_uniform<S>({spec_.dim, spec_.classes}, spec_.dim, rng);
    head_b_ = fan_in_uniform<S>({spec_.classes}, spec_.dim, rng);
    add_entry("head.weight", head_w_, true);
    add_entry("head.bias", head_b_, true);
  }

  void register_conv_unit(const std::string& base, ConvUnit<S>& u) {
    add_entry(base + ".kernel", u.kernel, true);
    add_entry(base + ".bn.gamma", u.bn.gamma, true);
    add_entry(base + ".bn.beta", u.bn.beta, true);
    add_entry(base + ".bn.running_mean", u.bn.running_mean, false);
    add_entry(base + ".bn.running_var", u.bn.running_var, false);
    if (u.cell.tau_param.defined()) add_entry(base + ".neuron.tau", u.cell.tau_param, true);
  }

  void register_attention_sublayer(const std::string& base, AttentionSublayer<S>& sl) {
    add_entry(base + ".ln.gamma", sl.ln_gamma, true);
    add_entry(base + ".ln.beta", sl.ln_beta, true);
    add_entry(base + ".wq", sl.wq, true);
    add_entry(base + ".wk", sl.wk, true);
    add_entry(base + ".wv", sl.wv, true);
    add_entry(base + ".wo", sl.wo, true);
  }

  void add_entry(const std::string& name, const Tensor<S>& t, bool trainable) {
    registry_.push_back(NamedTensor<S>{name, t, trainable});
  }

  ModelSpec spec_;
  std::optional<TokenizerStem<S>> stem_;
  Tensor<S> pos_table_;
  std::vector<TransformerBlock<S>> blocks_;
  Tensor<S> final_ln_gamma_, final_ln_beta_;
  Tensor<S> pool_w_;
  Tensor<S> head_w_, head_b_;
  std::vector<NamedTensor<S>> registry_;
};

}  // namespace spikeformer
