#include "spikeformer/data.hpp"

#include <algorithm>
#include <cctype>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "spikeformer/serialize.hpp"

namespace spikeformer {

namespace fs = std::filesystem;

namespace {

constexpr std::uint16_t kAerFormatVersion = 1;
constexpr std::size_t kAerHeaderBytes = 4 + 2 + 2 + 2 + 4 + 8;
constexpr std::size_t kAerEventBytes = 14;

void validate_event(const AerEvent& ev, std::uint16_t width, std::uint16_t height,
                    std::uint64_t prev_t, std::size_t index, const char* context) {
  const std::size_t base = kAerHeaderBytes + index * kAerEventBytes;
  if (ev.x >= width)
    throw std::runtime_error(std::string(context) + ": event " + std::to_string(index) +
                             " has x=" + std::to_string(ev.x) + " outside sensor width " +
                             std::to_string(width) + " (byte offset " + std::to_string(base + 8) +
                             ")");
  if (ev.y >= height)
    throw std::runtime_error(std::string(context) + ": event " + std::to_string(index) +
                             " has y=" + std::to_string(ev.y) + " outside sensor height " +
                             std::to_string(height) + " (byte offset " +
                             std::to_string(base + 10) + ")");
  if (ev.polarity > 1)
    throw std::runtime_error(std::string(context) + ": event " + std::to_string(index) +
                             " has polarity=" + std::to_string(int(ev.polarity)) +
                             ", expected 0 or 1 (byte offset " + std::to_string(base + 12) + ")");
  if (index > 0 && ev.t < prev_t)
    throw std::runtime_error(std::string(context) + ": event " + std::to_string(index) +
                             " has timestamp " + std::to_string(ev.t) +
                             " earlier than its predecessor " + std::to_string(prev_t) +
                             " (byte offset " + std::to_string(base) + ")");
}

}  // namespace

AugmentConfig augment_profile(const std::string& name) {
  AugmentConfig cfg;
  if (name == "gesture") return cfg;
  if (name == "cifar-dvs") {
    cfg.flip_enabled = true;
    cfg.shift_enabled = true;
    cfg.cutout_enabled = true;
    cfg.label_smoothing = 0.14;
    return cfg;
  }
  if (name == "static") {
    cfg.flip_enabled = true;
    cfg.shift_enabled = true;
    cfg.label_smoothing = 0.10;
    return cfg;
  }
  throw std::invalid_argument("unknown augmentation profile '" + name +
                              "'; expected gesture, cifar-dvs, or static");
}

void save_aer(const EventStream& stream, const std::string& path) {
  if (stream.width == 0 || stream.height == 0)
    throw std::invalid_argument("save_aer: sensor geometry must be positive, got " +
                                std::to_string(stream.width) + "x" +
                                std::to_string(stream.height));
  std::uint64_t prev_t = 0;
  for (std::size_t i = 0; i < stream.events.size(); ++i) {
    validate_event(stream.events[i], stream.width, stream.height, prev_t, i, "save_aer");
    prev_t = stream.events[i].t;
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_aer: cannot open '" + path + "' for writing");
  os.write("SPKE", 4);
  detail::write_pod<std::uint16_t>(os, kAerFormatVersion);
  detail::write_pod<std::uint16_t>(os, stream.width);
  detail::write_pod<std::uint16_t>(os, stream.height);
  detail::write_pod<std::int32_t>(os, stream.label);
  detail::write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(stream.events.size()));
  for (const AerEvent& ev : stream.events) {
    detail::write_pod<std::uint64_t>(os, ev.t);
    detail::write_pod<std::uint16_t>(os, ev.x);
    detail::write_pod<std::uint16_t>(os, ev.y);
    detail::write_pod<std::uint8_t>(os, ev.polarity);
    detail::write_pod<std::uint8_t>(os, 0);  // pad
  }
  if (!os) throw std::runtime_error("save_aer: write failed for '" + path + "'");
}

EventStream load_aer(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_aer: cannot open '" + path + "'");
  char magic[4] = {};
  if (!is.read(magic, 4))
    throw std::runtime_error("load_aer: '" + path + "' is shorter than the 4-byte magic");
  if (std::memcmp(magic, "SPKE", 4) != 0)
    throw std::runtime_error("load_aer: '" + path + "' has magic '" + std::string(magic, 4) +
                             "', expected 'SPKE' (byte offset 0)");
  const auto version = detail::read_pod<std::uint16_t>(is, "event-stream version");
  if (version != kAerFormatVersion)
    throw std::runtime_error("load_aer: '" + path + "' has format version " +
                             std::to_string(version) + ", this build reads version " +
                             std::to_string(kAerFormatVersion));
  EventStream stream;
  stream.width = detail::read_pod<std::uint16_t>(is, "sensor width");
  stream.height = detail::read_pod<std::uint16_t>(is, "sensor height");
  if (stream.width == 0 || stream.height == 0)
    throw std::runtime_error("load_aer: '" + path + "' declares sensor geometry " +
                             std::to_string(stream.width) + "x" + std::to_string(stream.height) +
                             ", both extents must be positive (byte offset 6)");
  stream.label = detail::read_pod<std::int32_t>(is, "label");
  const auto count = detail::read_pod<std::uint64_t>(is, "event count");
  stream.events.resize(static_cast<std::size_t>(count));
  std::uint64_t prev_t = 0;
  for (std::size_t i = 0; i < stream.events.size(); ++i) {
    AerEvent& ev = stream.events[i];
    ev.t = detail::read_pod<std::uint64_t>(is, "event timestamp");
    ev.x = detail::read_pod<std::uint16_t>(is, "event x");
    ev.y = detail::read_pod<std::uint16_t>(is, "event y");
    ev.polarity = detail::read_pod<std::uint8_t>(is, "event polarity");
    (void)detail::read_pod<std::uint8_t>(is, "event padding");
    validate_event(ev, stream.width, stream.height, prev_t, i, ("load_aer: '" + path + "'").c_str());
    prev_t = ev.t;
  }
  return stream;
}

FrameSample bin_events(const EventStream& stream, Index t_steps) {
  if (t_steps < 1)
    throw std::invalid_argument("bin_events: need at least 1 time step, got " +
                                std::to_string(t_steps));
  if (stream.events.empty())
    throw std::runtime_error(
        "bin_events: stream has no events; an empty stream cannot be split into " +
        std::to_string(t_steps) + " non-empty slices");
  if (stream.width == 0 || stream.height == 0)
    throw std::invalid_argument("bin_events: sensor geometry must be positive, got " +
                                std::to_string(stream.width) + "x" +
                                std::to_string(stream.height));
  const Index h = stream.height, w = stream.width;
  FrameSample sample;
  sample.label = stream.label;
  sample.frames = Tensor<float>::zeros({t_steps, 2, h, w});
  float* f = sample.frames.data();
  const std::size_t m = stream.events.size();
  std::uint64_t prev_t = 0;
  for (Index j = 0; j < t_steps; ++j) {
    const std::size_t lo = (static_cast<std::size_t>(j) * m) / static_cast<std::size_t>(t_steps);
    const std::size_t hi =
        (static_cast<std::size_t>(j + 1) * m) / static_cast<std::size_t>(t_steps);
    for (std::size_t i = lo; i < hi; ++i) {
      const AerEvent& ev = stream.events[i];
      validate_event(ev, stream.width, stream.height, prev_t, i, "bin_events");
      prev_t = ev.t;
      const Index idx = ((j * 2 + ev.polarity) * h + ev.y) * w + ev.x;
      f[idx] += 1.0f;
    }
  }
  return sample;
}

FrameSample augment(const FrameSample& sample, const AugmentConfig& cfg, RngStream& rng) {
  if (sample.frames.rank() != 4 || sample.frames.shape()[1] != 2)
    throw std::invalid_argument("augment: expected frames shaped [T, 2, H, W], got " +
                                shape_str(sample.frames.shape()));
  const Index t_steps = sample.frames.shape()[0];
  const Index h = sample.frames.shape()[2];
  const Index w = sample.frames.shape()[3];

  bool flip = false;
  Index shift_a = 0, shift_b = 0;        // rightwards, upwards
  Index cut_l = 0, cut_h = 0, cut_x0 = 0, cut_y0 = 0;
  if (cfg.flip_enabled) flip = rng.bernoulli(cfg.flip_prob);
  if (cfg.shift_enabled) {
    shift_a = rng.uniform_int(-cfg.shift_range, cfg.shift_range);
    shift_b = rng.uniform_int(-cfg.shift_range, cfg.shift_range);
  }
  if (cfg.cutout_enabled) {
    if (cfg.cutout_min < 1 || cfg.cutout_min > cfg.cutout_max)
      throw std::invalid_argument("augment: cutout edge range [" +
                                  std::to_string(cfg.cutout_min) + "," +
                                  std::to_string(cfg.cutout_max) + "] is empty or nonpositive");
    cut_l = std::min<Index>(rng.uniform_int(cfg.cutout_min, cfg.cutout_max), w);
    cut_h = std::min<Index>(rng.uniform_int(cfg.cutout_min, cfg.cutout_max), h);
    cut_x0 = rng.uniform_int(0, w - cut_l);
    cut_y0 = rng.uniform_int(0, h - cut_h);
  }

  FrameSample out;
  out.label = sample.label;
  out.frames = Tensor<float>::zeros({t_steps, 2, h, w});
  const float* src = sample.frames.data();
  float* dst = out.frames.data();
  for (Index t = 0; t < t_steps; ++t)
    for (Index p = 0; p < 2; ++p) {
      const float* sp = src + ((t * 2 + p) * h) * w;
      float* dp = dst + ((t * 2 + p) * h) * w;
      for (Index y = 0; y < h; ++y)
        for (Index x = 0; x < w; ++x) {
          // Content moves right by a and up by b: output (y, x) reads from
          // input (y + b, x - a); outside the frame reads zero.
          Index sx = x - shift_a;
          const Index sy = y + shift_b;
          if (sx < 0 || sx >= w || sy < 0 || sy >= h) continue;
          if (flip) sx = w - 1 - sx;
          dp[y * w + x] = sp[sy * w + sx];
        }
      if (cfg.cutout_enabled)
        for (Index y = cut_y0; y < cut_y0 + cut_h; ++y)
          for (Index x = cut_x0; x < cut_x0 + cut_l; ++x) dp[y * w + x] = 0.0f;
    }
  return out;
}

namespace {

// Van der Corput fraction (base 2) of p: 0, 1/2, 1/4, 3/4, 1/8, ...
// Used to hand each vertical-bar class a well-separated phase offset.
double phase_fraction(Index p) {
  double v = 0.0, base = 0.5;
  for (Index b = p; b > 0; b >>= 1, base *= 0.5)
    if (b & 1) v += base;
  return v;
}

}  // namespace

bool synth_class_is_temporal(Index class_id, Index classes) {
  if (classes < 3) return false;  // fewer than two vertical classes
  return class_id < classes - 1;  // last class is the horizontal sweep
}

std::vector<EventStream> synth_gesture_dataset(std::uint64_t seed, const SynthConfig& cfg) {
  if (cfg.classes < 2)
    throw std::invalid_argument("synth_gesture_dataset: need at least 2 classes, got " +
                                std::to_string(cfg.classes));
  if (cfg.samples_per_class < 1)
    throw std::invalid_argument("synth_gesture_dataset: samples_per_class must be positive, got " +
                                std::to_string(cfg.samples_per_class));
  if (cfg.width < 8 || cfg.height < 8)
    throw std::invalid_argument("synth_gesture_dataset: sensor must be at least 8x8, got " +
                                std::to_string(cfg.width) + "x" + std::to_string(cfg.height));
  const Index w = cfg.width, h = cfg.height;
  RngStream master(seed);

  std::vector<EventStream> out;
  out.reserve(static_cast<std::size_t>(cfg.classes * cfg.samples_per_class));
  for (Index c = 0; c < cfg.classes; ++c)
    for (Index i = 0; i < cfg.samples_per_class; ++i) {
      RngStream rng = master.child(static_cast<std::uint64_t>(c) * 0x10001u +
                                   static_cast<std::uint64_t>(i) + 1);
      EventStream stream;
      stream.width = static_cast<std::uint16_t>(w);
      stream.height = static_cast<std::uint16_t>(h);
      stream.label = static_cast<std::int32_t>(c);

      const bool horizontal = (cfg.classes >= 2 && c == cfg.classes - 1);
      const Index sweep_len = horizontal ? h : w;  // positions visited per traverse
      const double speed = rng.uniform(0.92, 1.08);
      const double step_us =
          speed * static_cast<double>(cfg.duration_us) /
          static_cast<double>(cfg.traverses * sweep_len);
      const double t0 = rng.uniform(0.0, 0.05 * static_cast<double>(cfg.duration_us));

      // The bar occupies the middle half of the orthogonal axis, jittered by
      // up to 2 pixels per sample (identically across the class family).
      const Index span = horizontal ? w : h;
      Index band_lo = span / 4 + rng.uniform_int(-2, 2);
      band_lo = std::max<Index>(0, std::min<Index>(band_lo, span / 2 - 1));
      const Index band_hi = band_lo + span / 2;

      // Vertical classes share one column-visit multiset (every column seen
      // exactly `traverses` times) and differ only in direction/phase, so
      // their time-collapsed count histograms coincide.
      const bool backward = (c & 1) != 0;
      const Index offset = static_cast<Index>(phase_fraction(c / 2) * sweep_len);

      for (Index r = 0; r < cfg.traverses; ++r)
        for (Index k = 0; k < sweep_len; ++k) {
          Index pos = horizontal ? k : (backward ? sweep_len - 1 - k : (k + offset) % sweep_len);
          const double arrive = t0 + (static_cast<double>(r * sweep_len + k)) * step_us;
          const double leave = arrive + 0.5 * step_us;
          for (Index q = band_lo; q < band_hi; ++q) {
            AerEvent on, off;
            on.t = static_cast<std::uint64_t>(arrive);
            off.t = static_cast<std::uint64_t>(leave);
            on.polarity = 1;
            off.polarity = 0;
            if (horizontal) {
              on.x = off.x = static_cast<std::uint16_t>(q);
              on.y = off.y = static_cast<std::uint16_t>(pos);
            } else {
              on.x = off.x = static_cast<std::uint16_t>(pos);
              on.y = off.y = static_cast<std::uint16_t>(q);
            }
            stream.events.push_back(on);
            stream.events.push_back(off);
          }
        }

      const auto signal = stream.events.size();
      const auto noise = static_cast<std::size_t>(cfg.noise_frac * static_cast<double>(signal));
      for (std::size_t n = 0; n < noise; ++n) {
        AerEvent ev;
        ev.t = static_cast<std::uint64_t>(rng.uniform(0.0, static_cast<double>(cfg.duration_us)));
        ev.x = static_cast<std::uint16_t>(rng.uniform_int(0, w - 1));
        ev.y = static_cast<std::uint16_t>(rng.uniform_int(0, h - 1));
        ev.polarity = static_cast<std::uint8_t>(rng.uniform_int(0, 1));
        stream.events.push_back(ev);
      }

      std::stable_sort(stream.events.begin(), stream.events.end(),
                       [](const AerEvent& a, const AerEvent& b) { return a.t < b.t; });
      out.push_back(std::move(stream));
    }
  return out;
}

std::vector<EventStream> load_dataset_dir(const std::string& root, const std::string& split) {
  const fs::path base = fs::path(root) / split;
  if (!fs::exists(base) || !fs::is_directory(base))
    throw std::runtime_error("dataset split directory '" + base.string() +
                             "' does not exist or is not a directory");
  std::vector<std::pair<Index, fs::path>> class_dirs;
  for (const auto& entry : fs::directory_iterator(base)) {
    if (!entry.is_directory()) continue;
    const std::string name = entry.path().filename().string();
    if (name.empty() || !std::all_of(name.begin(), name.end(),
                                     [](unsigned char ch) { return std::isdigit(ch); }))
      throw std::runtime_error("dataset split '" + base.string() +
                               "' contains directory '" + name +
                               "' whose name is not a numeric class id");
    class_dirs.emplace_back(static_cast<Index>(std::stoll(name)), entry.path());
  }
  if (class_dirs.empty())
    throw std::runtime_error("dataset split '" + base.string() + "' contains no class directories");
  std::sort(class_dirs.begin(), class_dirs.end());

  std::vector<EventStream> streams;
  for (const auto& [class_id, dir] : class_dirs) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir))
      if (entry.is_regular_file() && entry.path().extension() == ".aer")
        files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const auto& file : files) {
      EventStream s = load_aer(file.string());
      if (s.label >= 0 && s.label != static_cast<std::int32_t>(class_id))
        throw std::runtime_error("file '" + file.string() + "' carries label " +
                                 std::to_string(s.label) + " but sits in class directory " +
                                 std::to_string(class_id));
      s.label = static_cast<std::int32_t>(class_id);
      streams.push_back(std::move(s));
    }
  }
  if (streams.empty())
    throw std::runtime_error("dataset split '" + base.string() + "' contains no .aer files");
  return streams;
}

void write_dataset_dir(const std::string& root, const std::string& split,
                       const std::vector<EventStream>& streams) {
  std::vector<Index> per_class_counter;
  for (const EventStream& s : streams) {
    if (s.label < 0)
      throw std::invalid_argument("write_dataset_dir: stream without a label cannot be placed "
                                  "in a class directory");
    if (static_cast<std::size_t>(s.label) >= per_class_counter.size())
      per_class_counter.resize(static_cast<std::size_t>(s.label) + 1, 0);
    const fs::path dir = fs::path(root) / split / std::to_string(s.label);
    fs::create_directories(dir);
    std::ostringstream name;
    name << "sample_" << std::setw(5) << std::setfill('0')
         << per_class_counter[static_cast<std::size_t>(s.label)]++ << ".aer";
    save_aer(s, (dir / name.str()).string());
  }
}

}  // namespace spikeformer
