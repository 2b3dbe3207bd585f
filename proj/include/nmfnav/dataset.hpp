#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "nmfnav/binary_io.hpp"
#include "nmfnav/nets.hpp"
#include "nmfnav/sensors.hpp"
#include "nmfnav/weights_io.hpp"

namespace nmfnav {

// NAVD container, little-endian:
//   "NAVD" u16 version u64 count u16 H_rgb u16 W_rgb u16 beams f32 increment f32 max_range
//   per record: u32 body_len, then body:
//     u64 tick f32 steering u8 env u8 dr u64 world_seed u64 sample_seed
//     u8 rgb[H*W*3] u32 points f32 xyz[points*3] f32 ranges[beams] (miss = -1)

struct DatasetHeader {
  static constexpr std::uint16_t kVersion = 1;
  static constexpr std::size_t kSize = 4 + 2 + 8 + 2 + 2 + 2 + 4 + 4;
  static constexpr std::size_t kCountOffset = 6;

  std::uint64_t count = 0;
  std::uint16_t rgb_h = 48, rgb_w = 64;
  std::uint16_t beams = 181;
  float increment = static_cast<float>(std::numbers::pi / 180.0);
  float max_range = 16.0f;

  static DatasetHeader from(const SensorConfig& s) {
    DatasetHeader h;
    h.rgb_h = static_cast<std::uint16_t>(s.camera.height);
    h.rgb_w = static_cast<std::uint16_t>(s.camera.width);
    h.beams = static_cast<std::uint16_t>(s.laser.beams);
    h.increment = static_cast<float>(s.laser.increment);
    h.max_range = static_cast<float>(s.laser.max_range);
    return h;
  }
  bool same_layout(const DatasetHeader& o) const {
    return rgb_h == o.rgb_h && rgb_w == o.rgb_w && beams == o.beams && increment == o.increment &&
           max_range == o.max_range;
  }
};

namespace detail {

inline std::vector<std::uint8_t> encode_header(const DatasetHeader& h) {
  binio::Writer w;
  w.bytes("NAVD");
  w.u16(DatasetHeader::kVersion);
  w.u64(h.count);
  w.u16(h.rgb_h);
  w.u16(h.rgb_w);
  w.u16(h.beams);
  w.f32(h.increment);
  w.f32(h.max_range);
  return std::move(w.buffer());
}

inline DatasetHeader decode_header(binio::Reader& in) {
  if (in.remaining() < 4 || in.str(4) != "NAVD")
    throw FormatError(FormatError::Kind::bad_magic, "bad magic: not a NAVD dataset");
  const std::uint16_t version = in.u16();
  if (version != DatasetHeader::kVersion)
    throw FormatError(FormatError::Kind::version_mismatch, "unsupported NAVD version " + std::to_string(version));
  DatasetHeader h;
  h.count = in.u64();
  h.rgb_h = in.u16();
  h.rgb_w = in.u16();
  h.beams = in.u16();
  h.increment = in.f32();
  h.max_range = in.f32();
  return h;
}

inline std::vector<std::uint8_t> encode_record(const SensorTriple& t) {
  binio::Writer w;
  w.u32(0);  // body length, patched below
  w.u64(t.tick);
  w.f32(t.steering);
  w.u8(static_cast<std::uint8_t>(t.env));
  w.u8(t.dr ? 1 : 0);
  w.u64(t.world_seed);
  w.u64(t.sample_seed);
  w.bytes(t.rgb.rgb.data(), t.rgb.rgb.size());
  w.u32(static_cast<std::uint32_t>(t.points()));
  for (float v : t.cloud) w.f32(v);
  for (float r : t.scan.ranges) w.f32(LaserScan::is_miss(r) ? -1.0f : r);
  auto& buf = w.buffer();
  const auto body = static_cast<std::uint32_t>(buf.size() - 4);
  for (int i = 0; i < 4; ++i) buf[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(body >> (8 * i));
  return std::move(buf);
}

inline SensorTriple decode_record(binio::Reader& in, const DatasetHeader& h, std::size_t index) {
  const auto truncated = [&] {
    return FormatError(FormatError::Kind::truncated_record, "truncated record at index " + std::to_string(index), index);
  };
  if (in.remaining() < 4) throw truncated();
  const std::uint32_t len = in.u32();
  if (len > in.remaining()) throw truncated();
  binio::Reader body(in.take(len), len, FormatError::Kind::truncated_record, index);
  SensorTriple t;
  t.tick = body.u64();
  t.steering = body.f32();
  const std::uint8_t env = body.u8();
  if (env > 3) throw FormatError(FormatError::Kind::invalid_field, "invalid env type at index " + std::to_string(index), index);
  t.env = static_cast<EnvType>(env);
  t.dr = body.u8() != 0;
  t.world_seed = body.u64();
  t.sample_seed = body.u64();
  t.rgb.height = h.rgb_h;
  t.rgb.width = h.rgb_w;
  const std::size_t nrgb = std::size_t{h.rgb_h} * h.rgb_w * 3;
  const std::uint8_t* px = body.take(nrgb);
  t.rgb.rgb.assign(px, px + nrgb);
  const std::uint32_t points = body.u32();
  if (std::size_t{points} * 12 > body.remaining()) throw truncated();
  t.cloud.resize(std::size_t{points} * 3);
  for (auto& v : t.cloud) v = body.f32();
  t.scan.increment = h.increment;
  t.scan.max_range = h.max_range;
  t.scan.ranges.resize(h.beams);
  for (auto& r : t.scan.ranges) {
    const float v = body.f32();
    r = v < 0 ? std::numeric_limits<float>::infinity() : v;
  }
  if (!body.at_end()) throw truncated();  // length field disagrees with the body
  return t;
}

inline void validate_triple(const SensorTriple& t, const DatasetHeader& h) {
  if (!(t.steering >= -1.0f && t.steering <= 1.0f))
    throw RangeError("steering " + std::to_string(t.steering) + " outside [-1, 1]");
  if (t.rgb.height != h.rgb_h || t.rgb.width != h.rgb_w || t.rgb.rgb.size() != std::size_t{h.rgb_h} * h.rgb_w * 3)
    throw ShapeError("record image dims do not match the dataset header");
  if (t.scan.beams() != h.beams) throw ShapeError("record scan beam count does not match the dataset header");
  if (t.cloud.size() % 3 != 0) throw ShapeError("record cloud length not a multiple of 3");
}

}  // namespace detail

/// Appends self-delimiting records and keeps the header count current after
/// every append. Opening an existing file resumes it; a torn trailing record
/// left by a crash is dropped.
class DatasetWriter {
 public:
  DatasetWriter(const std::filesystem::path& path, const DatasetHeader& layout, bool append = false) : path_(path) {
    header_ = layout;
    header_.count = 0;
    if (append && std::filesystem::exists(path)) {
      resume(layout);
    } else {
      std::ofstream create(path, std::ios::binary | std::ios::trunc);
      if (!create) throw IoError("cannot create " + path.string());
      const auto bytes = detail::encode_header(header_);
      create.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
      if (!create) throw IoError("write failed for " + path.string());
    }
    file_.open(path, std::ios::binary | std::ios::in | std::ios::out);
    if (!file_) throw IoError("cannot open " + path.string() + " for appending");
  }

  void append(const SensorTriple& t) {
    detail::validate_triple(t, header_);
    const auto bytes = detail::encode_record(t);
    file_.seekp(0, std::ios::end);
    file_.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    ++header_.count;
    write_count();
    if (!file_) throw IoError("append failed for " + path_.string());
  }

  std::uint64_t count() const { return header_.count; }
  const DatasetHeader& header() const { return header_; }
  const std::filesystem::path& path() const { return path_; }

 private:
  void write_count() {
    binio::Writer w;
    w.u64(header_.count);
    file_.seekp(static_cast<std::streamoff>(DatasetHeader::kCountOffset));
    file_.write(reinterpret_cast<const char*>(w.buffer().data()), 8);
    file_.flush();
  }

  void resume(const DatasetHeader& layout) {
    const auto bytes = read_file_bytes(path_);
    binio::Reader in(bytes.data(), bytes.size());
    DatasetHeader h = detail::decode_header(in);
    if (!h.same_layout(layout)) throw ShapeError("existing dataset " + path_.string() + " has a different layout");
    std::uint64_t good = 0;
    std::size_t end = in.position();
    while (in.remaining() > 0) {
      try {
        detail::decode_record(in, h, good);
      } catch (const FormatError&) {
        break;
      }
      ++good;
      end = in.position();
    }
    std::filesystem::resize_file(path_, end);
    header_ = h;
    header_.count = good;
    std::fstream f(path_, std::ios::binary | std::ios::in | std::ios::out);
    binio::Writer w;
    w.u64(good);
    f.seekp(static_cast<std::streamoff>(DatasetHeader::kCountOffset));
    f.write(reinterpret_cast<const char*>(w.buffer().data()), 8);
  }

  std::filesystem::path path_;
  DatasetHeader header_;
  std::fstream file_;
};

struct RawDataset {
  DatasetHeader header;
  std::vector<SensorTriple> records;
};

/// Decodes exactly `count` records. Bytes after them (a torn append) are ignored.
inline RawDataset decode_dataset(const std::vector<std::uint8_t>& bytes) {
  binio::Reader in(bytes.data(), bytes.size());
  RawDataset d;
  d.header = detail::decode_header(in);
  d.records.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(d.header.count, 1u << 20)));
  for (std::uint64_t k = 0; k < d.header.count; ++k) d.records.push_back(detail::decode_record(in, d.header, k));
  return d;
}

inline RawDataset read_dataset(const std::filesystem::path& path) { return decode_dataset(read_file_bytes(path)); }

// ---------------------------------------------------------------- network-ready samples

struct Sample {
  std::vector<float> rgb;      // 3 x H x W, values in [0, 1]
  std::vector<float> cloud;    // N_pts x 3
  std::vector<float> dmap;     // H_d x W_d, values in {0, 1}
  float steering = 0;
  std::uint64_t tick = 0;
  EnvType env = EnvType::normal_city;
  bool dr = false;
};

/// Image to channel-major floats in [0, 1].
inline std::vector<float> normalize_image(const Image& img) {
  const std::size_t hw = img.width * img.height;
  std::vector<float> out(3 * hw);
  for (std::size_t p = 0; p < hw; ++p)
    for (std::size_t c = 0; c < 3; ++c) out[c * hw + p] = static_cast<float>(img.rgb[p * 3 + c]) / 255.0f;
  return out;
}

inline std::vector<float> distance_map_floats(const DistanceMap& m) { return {m.cells.begin(), m.cells.end()}; }

/// Observation to network inputs: normalized image, cloud resampled to
/// N_pts with the record's seed, distance map derived from the scan.
inline Sample make_sample(const SensorTriple& t, const NetConfig& cfg) {
  if (t.rgb.height != cfg.rgb_h || t.rgb.width != cfg.rgb_w)
    throw ShapeError("record image " + std::to_string(t.rgb.height) + "x" + std::to_string(t.rgb.width) +
                     " does not match network input " + std::to_string(cfg.rgb_h) + "x" + std::to_string(cfg.rgb_w));
  Sample s;
  s.rgb = normalize_image(t.rgb);
  s.cloud = sample_pointcloud(t.cloud, cfg.points, t.sample_seed);
  s.dmap = distance_map_floats(scan_to_distance_map(t.scan, cfg.dmap_h, cfg.dmap_w, cfg.dmap_scale));
  s.steering = t.steering;
  s.tick = t.tick;
  s.env = t.env;
  s.dr = t.dr;
  return s;
}

struct Dataset {
  DatasetHeader header;
  NetConfig config;
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }
};

inline Dataset load_dataset(const std::filesystem::path& path, const NetConfig& cfg = {}) {
  const RawDataset raw = read_dataset(path);
  Dataset d;
  d.header = raw.header;
  d.config = cfg;
  d.samples.reserve(raw.records.size());
  for (const auto& r : raw.records) d.samples.push_back(make_sample(r, cfg));
  return d;
}

// ---------------------------------------------------------------- split and stats

struct SplitSpec {
  double train_fraction = 0.7;
  std::uint64_t seed = 0;
};

struct Split {
  std::vector<std::size_t> train, test;
};

/// Seeded shuffle; the first round(fraction * n) indices train.
inline Split split_dataset(std::size_t n, const SplitSpec& spec = {}) {
  if (n < 2) throw RangeError("split_dataset: need at least 2 records");
  if (!(spec.train_fraction > 0 && spec.train_fraction < 1)) throw RangeError("split_dataset: fraction must be in (0, 1)");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(mix_seed(spec.seed, 0x5b117));
  for (std::size_t i = n - 1; i > 0; --i) std::swap(idx[i], idx[rng.below(i + 1)]);
  const auto n_train = static_cast<std::size_t>(std::llround(spec.train_fraction * static_cast<double>(n)));
  Split s;
  s.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  return s;
}

struct DatasetStats {
  static constexpr std::size_t kBins = 10;  // steering histogram over [-1, 1]
  std::uint64_t count = 0;
  std::map<std::string, std::uint64_t> per_env;
  std::uint64_t dr_count = 0;
  std::array<std::uint64_t, kBins> histogram{};
  double abs_steering_sum = 0;

  std::optional<double> dr_fraction() const {
    if (count == 0) return std::nullopt;
    return static_cast<double>(dr_count) / static_cast<double>(count);
  }
  std::optional<double> mean_abs_steering() const {
    if (count == 0) return std::nullopt;
    return abs_steering_sum / static_cast<double>(count);
  }

  void add(const SensorTriple& t) {
    ++count;
    ++per_env[to_string(t.env)];
    dr_count += t.dr ? 1 : 0;
    const double u = (static_cast<double>(t.steering) + 1.0) / 2.0 * kBins;
    ++histogram[std::min(kBins - 1, static_cast<std::size_t>(std::max(0.0, u)))];
    abs_steering_sum += std::abs(static_cast<double>(t.steering));
  }

  nlohmann::json to_json() const {
    nlohmann::json envs = nlohmann::json::object();
    for (EnvType e : kAllEnvs) envs[to_string(e)] = per_env.contains(to_string(e)) ? per_env.at(to_string(e)) : 0;
    const auto opt = [](std::optional<double> v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    return {{"records", count},       {"per_env", envs},
            {"dr_records", dr_count}, {"dr_fraction", opt(dr_fraction())},
            {"histogram", histogram}, {"histogram_range", {-1.0, 1.0}},
            {"mean_abs_steering", opt(mean_abs_steering())}};
  }
};

inline DatasetStats dataset_stats(const RawDataset& d) {
  DatasetStats s;
  for (const auto& r : d.records) s.add(r);
  return s;
}

inline DatasetStats dataset_stats(const std::filesystem::path& path) { return dataset_stats(read_dataset(path)); }

}  // namespace nmfnav
