// Event-data pipeline: AER streams on disk, count-based binning into frame
// tensors, training-time frame augmentation, dataset-directory scanning and
// the synthetic gesture generator used for desk-scale experiments.
//
// AER file format (all little-endian): magic "SPKE", version u16, width u16,
// height u16, label i32 (-1 = unlabeled), event count u64, then packed
// 14-byte records {t: u64 microseconds, x: u16, y: u16, polarity: u8,
// pad: u8}.  Datasets live as <root>/<split>/<class_id>/<sample>.aer.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spikeformer/rng.hpp"
#include "spikeformer/tensor.hpp"

namespace spikeformer {

struct AerEvent {
  std::uint64_t t = 0;  // microseconds
  std::uint16_t x = 0;  // column
  std::uint16_t y = 0;  // row
  std::uint8_t polarity = 0;
};

struct EventStream {
  std::uint16_t width = 0;
  std::uint16_t height = 0;
  std::int32_t label = -1;  // -1 = unlabeled
  std::vector<AerEvent> events;  // nondecreasing t
};

// Binned sample: event counts per polarity channel, [T, 2, H, W].
struct FrameSample {
  Tensor<float> frames;
  std::int32_t label = -1;
};

struct AugmentConfig {
  bool flip_enabled = false;
  double flip_prob = 0.5;
  bool shift_enabled = false;
  Index shift_range = 5;  // a, b ~ U(-range, range)
  bool cutout_enabled = false;
  Index cutout_min = 1, cutout_max = 16;  // box edge lengths
  double label_smoothing = 0.0;
};

// "gesture" (nothing on), "cifar-dvs" (flip+shift+cutout, smoothing 0.14),
// "static" (flip+shift, smoothing 0.10).
AugmentConfig augment_profile(const std::string& name);

void save_aer(const EventStream& stream, const std::string& path);
EventStream load_aer(const std::string& path);

// Splits the stream's M events into T consecutive index ranges
// [j*M/T, (j+1)*M/T) and accumulates each into a 2xHxW count frame.
FrameSample bin_events(const EventStream& stream, Index t_steps);

// Flip / shift / cutout, one draw per sample applied to every time step.
// Draw order (when enabled): flip coin; shift a, b; cutout l, h, x0, y0.
FrameSample augment(const FrameSample& sample, const AugmentConfig& cfg, RngStream& rng);

struct SynthConfig {
  Index classes = 4;
  Index samples_per_class = 50;
  Index width = 32;
  Index height = 32;
  std::uint64_t duration_us = 100000;
  Index traverses = 2;     // full sweeps of the moving bar per stream
  double noise_frac = 0.03;  // uniform noise events as a fraction of signal
};

// Moving-bar gesture streams.  All but the last class are vertical bars
// sweeping horizontally with class-specific direction/phase — their
// time-collapsed histograms coincide, so only temporal structure separates
// them.  Class K-1 is a horizontal bar sweeping vertically (spatially
// distinct).  With K <= 3 every class is from the vertical family.
std::vector<EventStream> synth_gesture_dataset(std::uint64_t seed, const SynthConfig& cfg);

// True for classes whose time-collapsed histograms coincide with another
// class's (the vertical-bar family above).
bool synth_class_is_temporal(Index class_id, Index classes);

// Directory layout <root>/<split>/<class_id>/<sample>.aer, scanned in
// numeric class order and lexicographic file order (deterministic).
std::vector<EventStream> load_dataset_dir(const std::string& root, const std::string& split);
void write_dataset_dir(const std::string& root, const std::string& split,
                       const std::vector<EventStream>& streams);

}  // namespace spikeformer
