#pragma once

// On-disk dataset records.
//
//   <dir>/manifest.json   format version, scenario echo, counts, checksums
//   <dir>/imu.bin         packed IMU samples
//   <dir>/frames.jsonl    one JSON object per lidar/camera frame, in time order
//   <dir>/scans/*.bin     packed lidar scans
//   <dir>/images/*.pgm|ppm rasters and masks
//
// Every frame line carries an FNV-1a digest of its metadata and blobs; the
// reader recomputes it from the decoded frame, so a match means the round
// trip was lossless.

#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "svr/scenario_json.hpp"

namespace svr {

static_assert(std::endian::native == std::endian::little, "record blobs are written in host byte order");

inline constexpr std::uint32_t kScanBlobVersion = 1;
inline constexpr std::uint32_t kImuBlobVersion = 1;

[[nodiscard]] inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

[[nodiscard]] inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

namespace detail {

template <typename T>
void put(std::string& out, const T& v) {
  const auto* p = reinterpret_cast<const char*>(&v);
  out.append(p, sizeof(T));
}

class BlobReader {
 public:
  BlobReader(std::string data, std::string name) : data_(std::move(data)), name_(std::move(name)) {}

  template <typename T>
  T get() {
    if (pos_ + sizeof(T) > data_.size()) throw Error(ErrorCode::CorruptRecord, "truncated blob " + name_);
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  void expect_magic(const char* magic) {
    for (int i = 0; i < 4; ++i)
      if (get<char>() != magic[i]) throw Error(ErrorCode::CorruptRecord, "bad magic in " + name_);
  }
  [[nodiscard]] bool at_end() const { return pos_ == data_.size(); }

 private:
  std::string data_;
  std::string name_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorCode::CorruptRecord, "missing file " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error(ErrorCode::InvalidArgument, "cannot open for writing: " + p.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::InvalidArgument, "write failed: " + p.string());
}

inline std::string encode_scan(const LidarScan& s) {
  s.validate();
  std::string out = "SVRS";
  put(out, kScanBlobVersion);
  put(out, static_cast<std::uint8_t>(s.frame_tag));
  put(out, s.timestamp);
  put(out, static_cast<std::uint64_t>(s.size()));
  for (const auto& p : s.points) {
    put(out, p.x());
    put(out, p.y());
    put(out, p.z());
  }
  for (auto r : s.rings) put(out, r);
  for (auto l : s.labels) put(out, l);
  return out;
}

inline LidarScan decode_scan(std::string bytes, const std::string& name) {
  BlobReader in(std::move(bytes), name);
  in.expect_magic("SVRS");
  if (in.get<std::uint32_t>() != kScanBlobVersion) throw Error(ErrorCode::UnsupportedVersion, "scan blob version in " + name);
  LidarScan s;
  s.frame_tag = static_cast<FrameTag>(in.get<std::uint8_t>());
  s.timestamp = in.get<double>();
  const auto n = in.get<std::uint64_t>();
  if (n > (1u << 26)) throw Error(ErrorCode::CorruptRecord, "implausible point count in " + name);
  s.points.resize(n);
  s.rings.resize(n);
  s.labels.resize(n);
  for (auto& p : s.points) {
    const double x = in.get<double>();
    const double y = in.get<double>();
    p = Vec3(x, y, in.get<double>());
  }
  for (auto& r : s.rings) r = in.get<std::uint16_t>();
  for (auto& l : s.labels) l = in.get<std::uint8_t>();
  if (!in.at_end()) throw Error(ErrorCode::CorruptRecord, "trailing bytes in " + name);
  return s;
}

inline std::string encode_imu(const std::vector<ImuSample>& imu) {
  std::string out = "SVRI";
  put(out, kImuBlobVersion);
  put(out, static_cast<std::uint64_t>(imu.size()));
  for (const auto& m : imu) {
    put(out, m.timestamp);
    for (int i = 0; i < 3; ++i) put(out, m.accel[i]);
    for (int i = 0; i < 3; ++i) put(out, m.gyro[i]);
  }
  return out;
}

inline std::vector<ImuSample> decode_imu(std::string bytes) {
  BlobReader in(std::move(bytes), "imu.bin");
  in.expect_magic("SVRI");
  if (in.get<std::uint32_t>() != kImuBlobVersion) throw Error(ErrorCode::UnsupportedVersion, "imu blob version");
  const auto n = in.get<std::uint64_t>();
  if (n > (1u << 28)) throw Error(ErrorCode::CorruptRecord, "implausible imu count");
  std::vector<ImuSample> imu(n);
  for (auto& m : imu) {
    m.timestamp = in.get<double>();
    for (int i = 0; i < 3; ++i) m.accel[i] = in.get<double>();
    for (int i = 0; i < 3; ++i) m.gyro[i] = in.get<double>();
  }
  if (!in.at_end()) throw Error(ErrorCode::CorruptRecord, "trailing bytes in imu.bin");
  return imu;
}

inline std::string netpbm_bytes(const char* magic, int w, int h, const std::vector<std::uint8_t>& data) {
  std::string out = std::string(magic) + "\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  out.append(reinterpret_cast<const char*>(data.data()), data.size());
  return out;
}

inline std::string encode_image(const Image& img) {
  img.validate();
  return netpbm_bytes(img.channels == 3 ? "P6" : "P5", img.width, img.height, img.data);
}

inline std::string encode_mask(const Mask& m) {
  m.validate();
  std::vector<std::uint8_t> px(m.bits.size());
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = m.bits[i] ? 255 : 0;
  return netpbm_bytes("P5", m.width, m.height, px);
}

inline Json pose2_json(const AckermannState& s) {
  return {{"x_m", s.pose.x}, {"y_m", s.pose.y}, {"theta_rad", s.pose.theta}, {"speed_mps", s.speed},
          {"wheelbase_m", s.wheelbase}};
}

inline Json points_json(const std::vector<Vec2>& pts) {
  Json a = Json::array();
  for (const auto& p : pts) a.push_back({p.x(), p.y()});
  return a;
}

inline std::vector<Vec2> points_from(const Json& a) {
  std::vector<Vec2> out;
  for (const auto& p : a) out.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
  return out;
}

/// Serialized form of one frame: the JSON line (without digest) and its blobs.
struct EncodedFrame {
  Json meta;
  std::vector<std::pair<std::string, std::string>> blobs;  // relative path, bytes

  [[nodiscard]] std::uint64_t digest() const {
    std::uint64_t h = fnv1a(meta.dump());
    for (const auto& [path, bytes] : blobs) h = fnv1a(bytes, fnv1a(path, h));
    return h;
  }
};

inline std::string frame_stem(const char* kind, int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%06d", kind, index);
  return buf;
}

inline EncodedFrame encode_frame(const LidarFrame& f) {
  EncodedFrame e;
  const std::string stem = frame_stem("lidar", f.index);
  const std::string real = "scans/" + stem + "_real.bin";
  const std::string virt = "scans/" + stem + "_virtual.bin";
  e.meta = {{"kind", "lidar"},
            {"index", f.index},
            {"t_s", f.t},
            {"real_pose", transform_to_json(f.real_pose)},
            {"virtual_pose", transform_to_json(f.virtual_pose)},
            {"ext_true", transform_to_json(f.ext_true)},
            {"real_scan", real},
            {"virtual_scan", virt}};
  e.blobs = {{real, encode_scan(f.real)}, {virt, encode_scan(f.virt)}};
  return e;
}

inline EncodedFrame encode_frame(const CameraFrame& f) {
  EncodedFrame e;
  const std::string stem = frame_stem("camera", f.index);
  const std::string ext = f.real_image.channels == 3 ? ".ppm" : ".pgm";
  const std::string vext = f.virtual_image.channels == 3 ? ".ppm" : ".pgm";
  const std::string ri = "images/" + stem + "_real" + ext;
  const std::string vi = "images/" + stem + "_virtual" + vext;
  const std::string om = "images/" + stem + "_object.pgm";
  const std::string gm = "images/" + stem + "_ground.pgm";
  Json prompts = Json::array();
  for (const auto& b : f.prompts.boxes) prompts.push_back({b.x0, b.y0, b.x1, b.y1, b.cls});
  Json warp = Json::array();
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k) warp.push_back(f.warp.h(i, k));
  e.meta = {{"kind", "camera"},
            {"index", f.index},
            {"t_s", f.t},
            {"state", pose2_json(f.state)},
            {"ext_true", transform_to_json(f.ext_true)},
            {"real_image", ri},
            {"virtual_image", vi},
            {"object_mask", om},
            {"ground_mask", gm},
            {"prompts", prompts},
            {"warp", warp},
            {"labels_px", points_json(f.labels)},
            {"object_points_px", points_json(f.object_points)}};
  e.blobs = {{ri, encode_image(f.real_image)},
             {vi, encode_image(f.virtual_image)},
             {om, encode_mask(f.object)},
             {gm, encode_mask(f.ground)}};
  return e;
}

inline std::string blob_path(const Json& meta, const char* key) {
  const std::string p = meta.at(key).get<std::string>();
  if (p.empty() || p.front() == '/' || p.find("..") != std::string::npos)
    throw Error(ErrorCode::CorruptRecord, "blob path must be relative: " + p);
  return p;
}

inline LidarFrame decode_lidar(const Json& m, const std::filesystem::path& dir) {
  LidarFrame f;
  f.index = m.at("index").get<int>();
  f.t = m.at("t_s").get<double>();
  f.real_pose = transform_from_json(m.at("real_pose"), "real_pose");
  f.virtual_pose = transform_from_json(m.at("virtual_pose"), "virtual_pose");
  f.ext_true = transform_from_json(m.at("ext_true"), "ext_true");
  const std::string rp = blob_path(m, "real_scan");
  const std::string vp = blob_path(m, "virtual_scan");
  f.real = decode_scan(read_file(dir / rp), rp);
  f.virt = decode_scan(read_file(dir / vp), vp);
  return f;
}

inline CameraFrame decode_camera(const Json& m, const std::filesystem::path& dir) {
  CameraFrame f;
  f.index = m.at("index").get<int>();
  f.t = m.at("t_s").get<double>();
  const Json& s = m.at("state");
  f.state.pose = Pose2D(s.at("x_m").get<double>(), s.at("y_m").get<double>(), s.at("theta_rad").get<double>());
  f.state.speed = s.at("speed_mps").get<double>();
  f.state.wheelbase = s.at("wheelbase_m").get<double>();
  f.ext_true = transform_from_json(m.at("ext_true"), "ext_true");
  const auto image = [&](const char* key) {
    const std::string p = blob_path(m, key);
    const bool rgb = p.size() >= 4 && p.substr(p.size() - 4) == ".ppm";
    if (!std::filesystem::exists(dir / p)) throw Error(ErrorCode::CorruptRecord, "missing file " + p);
    return read_image((dir / p).string(), rgb ? 3 : 1);
  };
  const auto mask = [&](const char* key) {
    const std::string p = blob_path(m, key);
    if (!std::filesystem::exists(dir / p)) throw Error(ErrorCode::CorruptRecord, "missing file " + p);
    return read_mask((dir / p).string());
  };
  f.real_image = image("real_image");
  f.virtual_image = image("virtual_image");
  f.object = mask("object_mask");
  f.ground = mask("ground_mask");
  for (const auto& b : m.at("prompts"))
    f.prompts.boxes.push_back({b.at(0).get<int>(), b.at(1).get<int>(), b.at(2).get<int>(), b.at(3).get<int>(),
                               b.at(4).get<int>()});
  const Json& w = m.at("warp");
  if (w.size() != 9) throw Error(ErrorCode::CorruptRecord, "warp must have 9 entries");
  for (int i = 0; i < 9; ++i) f.warp.h(i / 3, i % 3) = w[i].get<double>();
  f.labels = points_from(m.at("labels_px"));
  f.object_points = points_from(m.at("object_points_px"));
  return f;
}

}  // namespace detail

[[nodiscard]] inline std::uint64_t frame_checksum(const LidarFrame& f) { return detail::encode_frame(f).digest(); }
[[nodiscard]] inline std::uint64_t frame_checksum(const CameraFrame& f) { return detail::encode_frame(f).digest(); }

/// Frames in file order: by time, lidar before camera on ties.
struct FrameRef {
  bool lidar = true;
  std::size_t index = 0;
};

[[nodiscard]] inline std::vector<FrameRef> frame_order(const DatasetRecord& rec) {
  std::vector<FrameRef> order;
  std::size_t i = 0, k = 0;
  while (i < rec.lidar.size() || k < rec.camera.size()) {
    const bool take_lidar = k >= rec.camera.size() || (i < rec.lidar.size() && rec.lidar[i].t <= rec.camera[k].t);
    order.push_back(take_lidar ? FrameRef{true, i++} : FrameRef{false, k++});
  }
  return order;
}

/// Digests in file order.
[[nodiscard]] inline std::vector<std::uint64_t> record_checksums(const DatasetRecord& rec) {
  std::vector<std::uint64_t> out;
  for (const auto& r : frame_order(rec))
    out.push_back(r.lidar ? frame_checksum(rec.lidar[r.index]) : frame_checksum(rec.camera[r.index]));
  return out;
}

/// Writes the record; returns the per-frame digests in file order.
inline std::vector<std::uint64_t> write_record(const DatasetRecord& rec, const std::string& dir_path) {
  namespace fs = std::filesystem;
  const fs::path dir(dir_path);
  fs::create_directories(dir / "scans");
  fs::create_directories(dir / "images");

  const std::string imu = detail::encode_imu(rec.imu);
  detail::write_file(dir / "imu.bin", imu);

  std::vector<std::uint64_t> digests;
  std::ofstream lines(dir / "frames.jsonl", std::ios::binary);
  if (!lines) throw Error(ErrorCode::InvalidArgument, "cannot open for writing: " + (dir / "frames.jsonl").string());
  long seq = 0;
  for (const auto& r : frame_order(rec)) {
    detail::EncodedFrame e = r.lidar ? detail::encode_frame(rec.lidar[r.index]) : detail::encode_frame(rec.camera[r.index]);
    const std::uint64_t d = e.digest();
    for (const auto& [path, bytes] : e.blobs) detail::write_file(dir / path, bytes);
    Json line = e.meta;
    line["seq"] = seq++;
    line["fnv1a"] = hex64(d);
    lines << line.dump() << '\n';
    digests.push_back(d);
  }
  lines.close();
  if (!lines) throw Error(ErrorCode::InvalidArgument, "write failed: frames.jsonl");

  std::uint64_t all = fnv1a("");
  for (auto d : digests) all = fnv1a(std::string_view(reinterpret_cast<const char*>(&d), sizeof d), all);
  Json manifest = {{"format", rec.version},
                   {"complete", rec.complete},
                   {"scenario", scenario_to_json(rec.scenario)},
                   {"counts", {{"imu", rec.imu.size()}, {"lidar", rec.lidar.size()}, {"camera", rec.camera.size()}}},
                   {"imu", {{"path", "imu.bin"}, {"fnv1a", hex64(fnv1a(imu))}}},
                   {"frames", {{"path", "frames.jsonl"}, {"fnv1a", hex64(all)}}}};
  detail::write_file(dir / "manifest.json", manifest.dump(2) + "\n");
  return digests;
}

/// Reads and verifies a record. A short or damaged frames.jsonl raises
/// CorruptRecordError naming the last frame that decoded cleanly.
[[nodiscard]] inline DatasetRecord read_record(const std::string& dir_path) {
  namespace fs = std::filesystem;
  const fs::path dir(dir_path);
  if (!fs::exists(dir / "manifest.json")) throw CorruptRecordError("missing manifest.json in " + dir_path, -1);

  Json manifest;
  try {
    manifest = Json::parse(detail::read_file(dir / "manifest.json"));
  } catch (const Json::exception& e) {
    throw CorruptRecordError(std::string("malformed manifest: ") + e.what(), -1);
  }
  const std::string format = manifest.value("format", std::string());
  if (format != kRecordVersion)
    throw Error(ErrorCode::UnsupportedVersion, "record format '" + format + "', expected '" + kRecordVersion + "'");

  DatasetRecord rec;
  rec.version = format;
  rec.complete = manifest.value("complete", true);
  rec.scenario = scenario_from_json(manifest.at("scenario"));

  const std::string imu = detail::read_file(dir / "imu.bin");
  if (hex64(fnv1a(imu)) != manifest.at("imu").at("fnv1a").get<std::string>())
    throw CorruptRecordError("imu.bin checksum mismatch", -1);
  rec.imu = detail::decode_imu(imu);

  const auto& counts = manifest.at("counts");
  const std::size_t n_lidar = counts.at("lidar").get<std::size_t>();
  const std::size_t n_cam = counts.at("camera").get<std::size_t>();
  if (rec.imu.size() != counts.at("imu").get<std::size_t>()) throw CorruptRecordError("imu count mismatch", -1);

  std::ifstream lines(dir / "frames.jsonl", std::ios::binary);
  if (!lines) throw CorruptRecordError("missing frames.jsonl", -1);
  long last = -1;
  std::string text;
  while (std::getline(lines, text)) {
    const bool terminated = !lines.eof();
    if (text.empty() && !terminated) break;
    if (!terminated) throw CorruptRecordError("frames.jsonl ends mid-line", last);
    try {
      const Json m = Json::parse(text);
      if (m.at("seq").get<long>() != last + 1) throw CorruptRecordError("frame sequence gap", last);
      const std::string kind = m.at("kind").get<std::string>();
      Json meta = m;
      meta.erase("seq");
      meta.erase("fnv1a");
      std::uint64_t d = 0;
      if (kind == "lidar") {
        rec.lidar.push_back(detail::decode_lidar(meta, dir));
        d = frame_checksum(rec.lidar.back());
      } else if (kind == "camera") {
        rec.camera.push_back(detail::decode_camera(meta, dir));
        d = frame_checksum(rec.camera.back());
      } else {
        throw CorruptRecordError("unknown frame kind '" + kind + "'", last);
      }
      if (hex64(d) != m.at("fnv1a").get<std::string>()) throw CorruptRecordError("frame checksum mismatch", last);
    } catch (const CorruptRecordError&) {
      throw;
    } catch (const Error& e) {
      if (e.code() == ErrorCode::UnsupportedVersion) throw;
      throw CorruptRecordError(e.what(), last);
    } catch (const std::exception& e) {
      throw CorruptRecordError(std::string("malformed frame: ") + e.what(), last);
    }
    ++last;
  }
  if (rec.lidar.size() != n_lidar || rec.camera.size() != n_cam)
    throw CorruptRecordError("record has fewer frames than its manifest", last);
  return rec;
}

}  // namespace svr
