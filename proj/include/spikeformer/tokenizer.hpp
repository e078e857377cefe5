// Convolutional tokenizer: a stack of spiking conv stages that turns
// [T,B,C,H,W] frames into transformer tokens.
//
// The building element is conv -> batch norm -> spiking neuron.  Two of
// them plus an additive skip make one module:
//
//   normal:      y = unit_b(unit_a(x)) + x
//   downsample:  y = unit_b(unit_a(x)) + shortcut(avg_pool_2x2(x))
//
// where unit_a of a downsample module strides by 2 and the shortcut is a
// 1x1 conv unit on the pooled input.  Every stage halves the spatial
// extents with one leading downsample module, followed by normal modules;
// stage channel widths double up to the embedding dim.  Because the skip
// adds spike trains, zero-initialized conv kernels make a normal module an
// exact identity, which the tests pin down.
#pragma once

#include <optional>
#include <vector>

#include "spikeformer/init.hpp"
#include "spikeformer/neurons.hpp"
#include "spikeformer/nn_ops.hpp"
#include "spikeformer/tensor.hpp"

namespace spikeformer {

// conv (no bias) -> batch norm -> neuron over the time axis
template <typename S>
struct ConvUnit {
  Tensor<S> kernel;  // [out, in, k, k]
  BatchNorm<S> bn;
  NeuronCell<S> cell;
  Index stride = 1;
  Index pad = 0;

  ConvUnit(Index in_ch, Index out_ch, Index k, Index stride_, const NeuronConfig& ncfg,
           RngStream& rng)
      : kernel(fan_in_uniform<S>({out_ch, in_ch, k, k}, in_ch * k * k, rng)),
        bn(out_ch),
        cell(ncfg),
        stride(stride_),
        pad(k / 2) {
    if (k % 2 == 0)
      throw std::invalid_argument("ConvUnit: kernel size must be odd so padding preserves "
                                  "extents, got " + std::to_string(k));
  }

  Tensor<S> forward(const Tensor<S>& x, bool training) {
    Tensor<S> c = conv2d(x, kernel, stride, pad);
    Tensor<S> normed = batch_norm(c, bn, training);
    return neuron_sequence(normed, cell);
  }
};

// One tokenizer module (normal or downsample, see header comment).
template <typename S>
struct TokenizerModule {
  ConvUnit<S> unit_a, unit_b;
  std::optional<ConvUnit<S>> shortcut;  // present only when downsampling

  // normal module: channels preserved, extents preserved
  TokenizerModule(Index channels, Index k, const NeuronConfig& ncfg, RngStream& rng)
      : unit_a(channels, channels, k, 1, ncfg, rng),
        unit_b(channels, channels, k, 1, ncfg, rng) {}

  // downsample module: in_ch -> out_ch, extents halved
  TokenizerModule(Index in_ch, Index out_ch, Index k, const NeuronConfig& ncfg, RngStream& rng)
      : unit_a(in_ch, out_ch, k, 2, ncfg, rng),
        unit_b(out_ch, out_ch, k, 1, ncfg, rng),
        shortcut(ConvUnit<S>(in_ch, out_ch, 1, 1, ncfg, rng)) {}

  bool downsamples() const { return shortcut.has_value(); }

  Tensor<S> forward(const Tensor<S>& x, bool training) {
    Tensor<S> main = unit_b.forward(unit_a.forward(x, training), training);
    if (!shortcut) return add(main, x);
    Tensor<S> skip = shortcut->forward(avg_pool_2x2(x), training);
    return add(main, skip);
  }
};

// The whole stem: stages of modules, built from (kernel, modules-per-stage,
// stages) plus the channel plan.
template <typename S>
struct TokenizerStem {
  std::vector<TokenizerModule<S>> modules;

  TokenizerStem(Index in_channels, const std::vector<Index>& stage_channels, Index k,
                Index modules_per_stage, const NeuronConfig& ncfg, RngStream& rng) {
    if (stage_channels.empty())
      throw std::invalid_argument("TokenizerStem: need at least one stage");
    if (modules_per_stage < 1)
      throw std::invalid_argument("TokenizerStem: need at least one module per stage");
    Index ch = in_channels;
    for (Index out : stage_channels) {
      modules.emplace_back(ch, out, k, ncfg, rng);  // downsample first
      for (Index m = 1; m < modules_per_stage; ++m) modules.emplace_back(out, k, ncfg, rng);
      ch = out;
    }
  }

  Tensor<S> forward(const Tensor<S>& x, bool training) {
    if (x.rank() != 5)
      throw std::invalid_argument("TokenizerStem: frames must be [T,B,C,H,W], got " +
                                  shape_str(x.shape()));
    Tensor<S> h = x;
    for (auto& m : modules) h = m.forward(h, training);
    return h;
  }
};

}  // namespace spikeformer
