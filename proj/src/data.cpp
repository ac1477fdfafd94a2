#include "sslv/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>

#include "json.hpp"
#include "sslv/rng.hpp"

namespace sslv::data {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

double clip_gain(int cls, int channel) {
  return 0.55 + 0.45 * (static_cast<double>((cls + channel) % 3) / 2.0);
}

double clip_base(int cls, int channel) {
  return 0.3 + 0.3 * (static_cast<double>((3 * cls + channel) % 5) / 4.0);
}

std::string zero_padded(const char* prefix, int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%04d", prefix, index);
  return buf;
}

}  // namespace

ClipDataset generate_clip_dataset(const SyntheticClipSpec& spec) {
  if (spec.num_classes < 2 || spec.clips_per_class < 1 || spec.frames < 1 ||
      spec.height < 1 || spec.width < 1 || spec.channels < 1)
    throw InvalidInput("generate_clip_dataset: invalid dimensions");
  if (spec.noise_sigma < 0.0)
    throw InvalidInput("generate_clip_dataset: noise_sigma must be >= 0");

  ClipDataset dataset;
  dataset.label_space = core::LabelSpace::indexed(spec.num_classes);
  const int total = spec.num_classes * spec.clips_per_class;
  dataset.clips.reserve(static_cast<size_t>(total));

  for (int idx = 0; idx < total; ++idx) {
    const int cls = idx / spec.clips_per_class;
    rng::Xoshiro256ss gen(
        rng::derive_seed(spec.seed, rng::salt::kClip, static_cast<uint64_t>(idx)));
    const double phase = gen.uniform(0.0, kTwoPi);
    const double theta = 3.14159265358979323846 * cls / spec.num_classes;
    const double freq = 2.0 + cls;
    const double rate = 0.4 + 0.35 * cls;
    const double cos_t = std::cos(theta);
    const double sin_t = std::sin(theta);

    core::ClipArray frames(spec.frames, spec.height, spec.width, spec.channels);
    for (int t = 0; t < spec.frames; ++t) {
      for (int y = 0; y < spec.height; ++y) {
        for (int x = 0; x < spec.width; ++x) {
          const double wave =
              std::sin(kTwoPi * freq * (x * cos_t + y * sin_t) / spec.width +
                       phase + rate * t);
          for (int ch = 0; ch < spec.channels; ++ch) {
            double v = clip_base(cls, ch) + 0.25 * clip_gain(cls, ch) * wave;
            if (spec.noise_sigma > 0.0) v += gen.gaussian(0.0, spec.noise_sigma);
            frames.at(t, y, x, ch) =
                static_cast<float>(std::min(1.0, std::max(0.0, v)));
          }
        }
      }
    }
    dataset.clips.push_back(
        core::VideoClip::make(zero_padded("clip_", idx), std::move(frames), cls));
  }
  return dataset;
}

namespace {

struct Capsule {
  double x0, y0, x1, y1, radius;

  bool contains(double x, double y) const {
    const double dx = x1 - x0, dy = y1 - y0;
    const double len2 = dx * dx + dy * dy;
    double t = len2 > 0 ? ((x - x0) * dx + (y - y0) * dy) / len2 : 0.0;
    t = std::min(1.0, std::max(0.0, t));
    const double px = x0 + t * dx, py = y0 + t * dy;
    const double ddx = x - px, ddy = y - py;
    return ddx * ddx + ddy * ddy <= radius * radius;
  }
};

int paint_capsule(const Capsule& cap, int cls, int h, int w,
                  std::vector<int>& mask) {
  int painted = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (cap.contains(x, y)) {
        mask[static_cast<size_t>(y) * w + x] = cls;
        ++painted;
      }
    }
  }
  return painted;
}

int count_capsule(const Capsule& cap, int h, int w) {
  int count = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) count += cap.contains(x, y);
  return count;
}

}  // namespace

SegDataset generate_seg_dataset(const SyntheticSegSpec& spec) {
  if (spec.num_images < 1 || spec.height < 8 || spec.width < 8 ||
      spec.channels < 1)
    throw InvalidInput("generate_seg_dataset: invalid dimensions");
  if (spec.noise_sigma < 0.0)
    throw InvalidInput("generate_seg_dataset: noise_sigma must be >= 0");
  if (spec.min_instruments < 0 || spec.max_instruments < spec.min_instruments ||
      spec.min_anatomy < 0 || spec.max_anatomy < spec.min_anatomy)
    throw InvalidInput("generate_seg_dataset: invalid shape counts");

  SegDataset dataset;
  dataset.samples.reserve(static_cast<size_t>(spec.num_images));
  const int h = spec.height, w = spec.width;

  for (int idx = 0; idx < spec.num_images; ++idx) {
    rng::Xoshiro256ss gen(
        rng::derive_seed(spec.seed, rng::salt::kClip, static_cast<uint64_t>(idx)));
    SegSample sample;
    sample.id = zero_padded("frame_", idx);
    sample.image = core::ClipArray(1, h, w, spec.channels);
    sample.mask.assign(static_cast<size_t>(h) * w, 0);

    // Textured background.
    const double bg_phase = gen.uniform(0.0, kTwoPi);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double tex = 0.32 + 0.06 * std::sin(kTwoPi * (x + y) / 16.0 + bg_phase);
        for (int ch = 0; ch < spec.channels; ++ch) {
          sample.image.at(0, y, x, ch) = static_cast<float>(tex + 0.03 * ch);
        }
      }
    }

    // Anatomy blobs (ellipses), fully inside the frame.
    const int n_anatomy =
        static_cast<int>(gen.uniform_int(spec.min_anatomy, spec.max_anatomy));
    for (int a = 0; a < n_anatomy; ++a) {
      const double ax = gen.uniform(spec.anatomy_axis_min, spec.anatomy_axis_max);
      const double ay = gen.uniform(spec.anatomy_axis_min, spec.anatomy_axis_max);
      const double margin = std::max(ax, ay) + 1.0;
      const double cx = gen.uniform(margin, w - 1 - margin);
      const double cy = gen.uniform(margin, h - 1 - margin);
      const double rot = gen.uniform(0.0, kTwoPi);
      const double cr = std::cos(rot), sr = std::sin(rot);
      const double tint = gen.uniform(-0.06, 0.06);
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          const double rx = (x - cx) * cr + (y - cy) * sr;
          const double ry = -(x - cx) * sr + (y - cy) * cr;
          if ((rx * rx) / (ax * ax) + (ry * ry) / (ay * ay) <= 1.0) {
            sample.mask[static_cast<size_t>(y) * w + x] = 2;
            const double base[3] = {0.58, 0.34, 0.40};
            for (int ch = 0; ch < spec.channels; ++ch) {
              sample.image.at(0, y, x, ch) =
                  static_cast<float>(base[ch % 3] + tint);
            }
          }
        }
      }
    }

    // Instrument capsules, resampled until the painted area is in range.
    const int n_instr = static_cast<int>(
        gen.uniform_int(spec.min_instruments, spec.max_instruments));
    for (int s = 0; s < n_instr; ++s) {
      Capsule cap{};
      int area = 0;
      for (int attempt = 0; attempt < 64; ++attempt) {
        const double len =
            gen.uniform(spec.instrument_length_min, spec.instrument_length_max);
        const double radius = gen.uniform(spec.instrument_halfwidth_min,
                                          spec.instrument_halfwidth_max);
        const double angle = gen.uniform(0.0, kTwoPi);
        const double margin = len / 2.0 + radius + 1.0;
        if (2.0 * margin >= std::min(h, w)) continue;
        const double cx = gen.uniform(margin, w - 1 - margin);
        const double cy = gen.uniform(margin, h - 1 - margin);
        const double dx = std::cos(angle) * len / 2.0;
        const double dy = std::sin(angle) * len / 2.0;
        cap = Capsule{cx - dx, cy - dy, cx + dx, cy + dy, radius};
        area = count_capsule(cap, h, w);
        if (area >= spec.instrument_area_min && area <= spec.instrument_area_max)
          break;
        area = 0;
      }
      if (area == 0)
        throw InvalidInput(
            "generate_seg_dataset: instrument area range infeasible for frame size");
      paint_capsule(cap, 1, h, w, sample.mask);
      const double shade = gen.uniform(-0.05, 0.05);
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          if (sample.mask[static_cast<size_t>(y) * w + x] == 1) {
            const double base[3] = {0.78, 0.80, 0.83};
            for (int ch = 0; ch < spec.channels; ++ch) {
              sample.image.at(0, y, x, ch) =
                  static_cast<float>(base[ch % 3] + shade);
            }
          }
        }
      }
    }

    // Pixel noise over the composed image.
    for (float& v : sample.image.values) {
      double noisy = v;
      if (spec.noise_sigma > 0.0) noisy += gen.gaussian(0.0, spec.noise_sigma);
      v = static_cast<float>(std::min(1.0, std::max(0.0, noisy)));
    }
    dataset.samples.push_back(std::move(sample));
  }
  return dataset;
}

const char* split_name(Split s) {
  switch (s) {
    case Split::labeled: return "labeled";
    case Split::unlabeled: return "unlabeled";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "unlabeled";
}

Split split_from_name(const std::string& name) {
  if (name == "labeled") return Split::labeled;
  if (name == "unlabeled") return Split::unlabeled;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  throw ParseError("unknown split token '" + name + "'");
}

void Manifest::validate() const {
  std::set<std::string> seen;
  for (const auto& entry : entries) {
    if (!seen.insert(entry.clip_id).second)
      throw InvalidInput("manifest: duplicate clip_id '" + entry.clip_id + "'");
  }
}

namespace {

Manifest stratified_split(const std::vector<std::string>& ids,
                          const std::vector<std::optional<int>>& labels,
                          const std::vector<uint64_t>& generator_seeds,
                          double labeled_fraction, double val_fraction,
                          double test_fraction, uint64_t seed) {
  if (!(labeled_fraction > 0.0 && labeled_fraction < 1.0))
    throw InvalidInput("split_dataset: labeled_fraction must be in (0,1)");
  if (val_fraction < 0.0 || test_fraction < 0.0 ||
      labeled_fraction + val_fraction + test_fraction >= 1.0 + 1e-12)
    throw InvalidInput("split_dataset: fractions must sum below 1");

  // Group indices by class (single stratum when labels are absent).
  std::vector<std::vector<size_t>> strata;
  std::vector<int> stratum_of(ids.size(), 0);
  int max_label = -1;
  for (size_t i = 0; i < ids.size(); ++i)
    if (labels[i].has_value()) max_label = std::max(max_label, *labels[i]);
  strata.resize(static_cast<size_t>(max_label) + 2);
  for (size_t i = 0; i < ids.size(); ++i) {
    const int s = labels[i].has_value() ? *labels[i] : max_label + 1;
    strata[static_cast<size_t>(s)].push_back(i);
    stratum_of[i] = s;
  }

  rng::Xoshiro256ss gen(rng::derive_seed(seed, rng::salt::kSplit));
  std::vector<Split> assignment(ids.size(), Split::unlabeled);
  for (auto& stratum : strata) {
    if (stratum.empty()) continue;
    gen.shuffle(stratum.data(), stratum.size());
    const auto n = static_cast<double>(stratum.size());
    const size_t n_labeled = std::max<size_t>(
        1, static_cast<size_t>(std::floor(labeled_fraction * n)));
    const size_t n_val = static_cast<size_t>(std::floor(val_fraction * n));
    const size_t n_test = static_cast<size_t>(std::floor(test_fraction * n));
    if (n_labeled + n_val + n_test > stratum.size())
      throw InvalidInput("split_dataset: fractions infeasible for dataset size");
    size_t pos = 0;
    for (size_t i = 0; i < n_labeled; ++i) assignment[stratum[pos++]] = Split::labeled;
    for (size_t i = 0; i < n_val; ++i) assignment[stratum[pos++]] = Split::val;
    for (size_t i = 0; i < n_test; ++i) assignment[stratum[pos++]] = Split::test;
  }

  Manifest manifest;
  manifest.entries.reserve(ids.size());
  for (size_t i = 0; i < ids.size(); ++i) {
    ManifestEntry entry;
    entry.clip_id = ids[i];
    entry.generator_seed = generator_seeds[i];
    entry.split = assignment[i];
    // Ground truth stays hidden for the unlabeled split.
    if (entry.split != Split::unlabeled) entry.label = labels[i];
    manifest.entries.push_back(std::move(entry));
  }
  manifest.validate();
  return manifest;
}

}  // namespace

Manifest split_dataset(const ClipDataset& dataset, double labeled_fraction,
                       double val_fraction, double test_fraction,
                       uint64_t seed) {
  std::vector<std::string> ids;
  std::vector<std::optional<int>> labels;
  std::vector<uint64_t> seeds;
  for (size_t i = 0; i < dataset.clips.size(); ++i) {
    ids.push_back(dataset.clips[i].clip_id);
    labels.push_back(dataset.clips[i].label);
    seeds.push_back(rng::derive_seed(seed, rng::salt::kClip, i));
  }
  return stratified_split(ids, labels, seeds, labeled_fraction, val_fraction,
                          test_fraction, seed);
}

Manifest split_seg_dataset(const SegDataset& dataset, double labeled_fraction,
                           double val_fraction, double test_fraction,
                           uint64_t seed) {
  std::vector<std::string> ids;
  std::vector<std::optional<int>> labels(dataset.samples.size(), std::nullopt);
  std::vector<uint64_t> seeds;
  for (size_t i = 0; i < dataset.samples.size(); ++i) {
    ids.push_back(dataset.samples[i].id);
    seeds.push_back(rng::derive_seed(seed, rng::salt::kClip, i));
  }
  return stratified_split(ids, labels, seeds, labeled_fraction, val_fraction,
                          test_fraction, seed);
}

void write_manifest(const Manifest& manifest, const std::string& path) {
  manifest.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInput("write_manifest: cannot open " + path);
  for (const auto& entry : manifest.entries) {
    nlohmann::json j;
    j["clip_id"] = entry.clip_id;
    if (entry.path.has_value()) j["path"] = *entry.path;
    if (entry.generator_seed.has_value()) j["generator_seed"] = *entry.generator_seed;
    j["label"] = entry.label.has_value() ? nlohmann::json(*entry.label)
                                         : nlohmann::json(nullptr);
    j["split"] = split_name(entry.split);
    out << j.dump() << "\n";
  }
}

Manifest read_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("read_manifest: cannot open " + path);
  Manifest manifest;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("malformed manifest entry: ") + e.what(), line_no);
    }
    ManifestEntry entry;
    try {
      entry.clip_id = j.at("clip_id").get<std::string>();
      if (j.contains("path") && !j["path"].is_null())
        entry.path = j["path"].get<std::string>();
      if (j.contains("generator_seed") && !j["generator_seed"].is_null())
        entry.generator_seed = j["generator_seed"].get<uint64_t>();
      if (j.contains("label") && !j["label"].is_null())
        entry.label = j["label"].get<int>();
      entry.split = split_from_name(j.at("split").get<std::string>());
    } catch (const ParseError& e) {
      throw ParseError(e.what(), line_no);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("malformed manifest entry: ") + e.what(), line_no);
    }
    manifest.entries.push_back(std::move(entry));
  }
  try {
    manifest.validate();
  } catch (const InvalidInput& e) {
    throw ParseError(e.what());
  }
  return manifest;
}

namespace {

void write_u32le(std::ofstream& out, uint32_t v) {
  unsigned char buf[4] = {static_cast<unsigned char>(v & 0xFF),
                          static_cast<unsigned char>((v >> 8) & 0xFF),
                          static_cast<unsigned char>((v >> 16) & 0xFF),
                          static_cast<unsigned char>((v >> 24) & 0xFF)};
  out.write(reinterpret_cast<const char*>(buf), 4);
}

uint32_t read_u32le(std::ifstream& in) {
  unsigned char buf[4];
  in.read(reinterpret_cast<char*>(buf), 4);
  if (!in) throw IntegrityError("clip file: truncated");
  return static_cast<uint32_t>(buf[0]) | (static_cast<uint32_t>(buf[1]) << 8) |
         (static_cast<uint32_t>(buf[2]) << 16) |
         (static_cast<uint32_t>(buf[3]) << 24);
}

}  // namespace

void write_clip_file(const core::ClipArray& frames, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInput("write_clip_file: cannot open " + path);
  out.write("CLIP1", 5);
  write_u32le(out, static_cast<uint32_t>(frames.t));
  write_u32le(out, static_cast<uint32_t>(frames.h));
  write_u32le(out, static_cast<uint32_t>(frames.w));
  write_u32le(out, static_cast<uint32_t>(frames.c));
  for (float v : frames.values) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    write_u32le(out, bits);
  }
}

core::ClipArray read_clip_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IntegrityError("read_clip_file: cannot open " + path);
  char magic[5];
  in.read(magic, 5);
  if (!in || std::memcmp(magic, "CLIP1", 5) != 0)
    throw IntegrityError("read_clip_file: bad magic");
  const uint32_t t = read_u32le(in), h = read_u32le(in), w = read_u32le(in),
                 c = read_u32le(in);
  if (t == 0 || h == 0 || w == 0 || c == 0 || t > 1u << 20 || h > 1u << 16 ||
      w > 1u << 16 || c > 64)
    throw IntegrityError("read_clip_file: implausible dimensions");
  core::ClipArray frames(static_cast<int>(t), static_cast<int>(h),
                         static_cast<int>(w), static_cast<int>(c));
  for (float& v : frames.values) {
    const uint32_t bits = read_u32le(in);
    std::memcpy(&v, &bits, 4);
  }
  if (in.peek() != EOF) throw IntegrityError("read_clip_file: trailing bytes");
  return frames;
}

}  // namespace sslv::data
