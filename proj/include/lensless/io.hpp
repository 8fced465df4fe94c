#pragma once

// File formats: the LTG1 grid container, PNG images, network checkpoints and CSV
// reports.
//
// LTG1 record:   "LTG1" | dtype u8 (0 f32, 1 f64) | ndim u8 | ndim x u32 dims | payload
// Container:     repeated { u32 name length | UTF-8 name | LTG1 record } until EOF
//
// Everything is little-endian and row-major. Readers validate the header against
// the bytes actually present before allocating the payload.

#include <png.h>

#include <algorithm>
#include <bit>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lensless/gradcheck.hpp"
#include "lensless/training.hpp"

namespace lensless {

namespace fs = std::filesystem;

enum class Dtype : std::uint8_t { f32 = 0, f64 = 1 };

inline std::size_t dtype_size(Dtype t) { return t == Dtype::f32 ? 4 : 8; }

/// An n-dimensional array as stored on disk. Grids are ndim 2; parameter vectors
/// are ndim 1.
struct NamedArray {
  std::string name;
  std::vector<std::uint32_t> shape;
  std::vector<double> values;
  Dtype dtype = Dtype::f64;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

inline void put_f32(std::string& out, float v) {
  const auto bits = std::bit_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

inline void encode_record(std::string& out, const NamedArray& a) {
  std::size_t n = 1;
  for (auto d : a.shape) n *= d;
  if (n != a.values.size())
    throw DimensionError("array '" + a.name + "': shape does not match value count");
  if (a.shape.empty() || a.shape.size() > 255) throw DimensionError("array '" + a.name + "': bad rank");
  out += "LTG1";
  out.push_back(static_cast<char>(a.dtype));
  out.push_back(static_cast<char>(a.shape.size()));
  for (auto d : a.shape) put_u32(out, d);
  for (double v : a.values) {
    if (a.dtype == Dtype::f64)
      put_f64(out, v);
    else
      put_f32(out, static_cast<float>(v));
  }
}

/// Bounds-checked little-endian reader over an in-memory file.
class ByteReader {
 public:
  ByteReader(const std::string& bytes, std::string source) : bytes_(bytes), source_(std::move(source)) {}

  bool done() const { return pos_ == bytes_.size(); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  void need(std::size_t n, const char* what) const {
    if (remaining() < n) throw FormatError(source_ + ": truncated " + what);
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return static_cast<std::uint8_t>(bytes_[pos_++]);
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64_raw() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::string text(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  const std::string& source() const { return source_; }

 private:
  const std::string& bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

inline NamedArray decode_record(ByteReader& in) {
  if (in.text(4, "magic") != "LTG1") throw FormatError(in.source() + ": bad magic (expected LTG1)");
  const std::uint8_t dt = in.u8("dtype");
  if (dt > 1) throw FormatError(in.source() + ": unknown dtype code " + std::to_string(dt));
  const std::uint8_t ndim = in.u8("ndim");
  if (ndim == 0) throw FormatError(in.source() + ": ndim is 0");
  NamedArray a;
  a.dtype = static_cast<Dtype>(dt);
  std::uint64_t count = 1;
  for (int i = 0; i < ndim; ++i) {
    const std::uint32_t d = in.u32("dims");
    if (d == 0) throw FormatError(in.source() + ": zero-length dimension");
    if (count > std::numeric_limits<std::uint64_t>::max() / d / 8)
      throw FormatError(in.source() + ": dims overflow");
    count *= d;
    a.shape.push_back(d);
  }
  const std::uint64_t bytes = count * dtype_size(a.dtype);
  if (bytes > in.remaining())
    throw FormatError(in.source() + ": truncated payload (" + std::to_string(bytes) + " bytes declared, " +
                      std::to_string(in.remaining()) + " present)");
  a.values.resize(count);
  for (auto& v : a.values) {
    if (a.dtype == Dtype::f64) {
      v = std::bit_cast<double>(in.u64_raw());
    } else {
      v = static_cast<double>(std::bit_cast<float>(in.u32("payload")));
    }
  }
  return a;
}

inline std::string read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline void write_file(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot open '" + path.string() + "' for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error("write to '" + path.string() + "' failed");
}

}  // namespace detail

inline NamedArray to_array(const RealGrid& g, std::string name = {}, Dtype dtype = Dtype::f64) {
  return {std::move(name), {static_cast<std::uint32_t>(g.rows()), static_cast<std::uint32_t>(g.cols())},
          std::vector<double>(g.begin(), g.end()), dtype};
}

inline RealGrid to_grid(const NamedArray& a) {
  if (a.shape.size() == 1) return RealGrid({1, a.shape[0]}, a.values);
  if (a.shape.size() == 2) return RealGrid({a.shape[0], a.shape[1]}, a.values);
  throw FormatError("array '" + a.name + "' has rank " + std::to_string(a.shape.size()) + ", expected 1 or 2");
}

/// Single-record LTG1 bytes.
inline std::string encode_grid(const RealGrid& g, Dtype dtype = Dtype::f64) {
  std::string out;
  detail::encode_record(out, to_array(g, {}, dtype));
  return out;
}

inline RealGrid decode_grid(const std::string& bytes, const std::string& source = "<memory>") {
  detail::ByteReader in(bytes, source);
  RealGrid g = to_grid(detail::decode_record(in));
  if (!in.done()) throw FormatError(source + ": trailing bytes after grid record");
  return g;
}

inline void write_grid(const fs::path& path, const RealGrid& g, Dtype dtype = Dtype::f64) {
  detail::write_file(path, encode_grid(g, dtype));
}

inline RealGrid read_grid(const fs::path& path) { return decode_grid(detail::read_file(path), path.string()); }

inline std::string encode_container(const std::vector<NamedArray>& arrays) {
  std::set<std::string> seen;
  std::string out;
  for (const auto& a : arrays) {
    if (a.name.empty()) throw InvalidArgument("container arrays need a name");
    if (!seen.insert(a.name).second) throw InvalidArgument("duplicate array name '" + a.name + "'");
    detail::put_u32(out, static_cast<std::uint32_t>(a.name.size()));
    out += a.name;
    detail::encode_record(out, a);
  }
  return out;
}

inline std::vector<NamedArray> decode_container(const std::string& bytes, const std::string& source = "<memory>") {
  detail::ByteReader in(bytes, source);
  std::vector<NamedArray> arrays;
  std::set<std::string> seen;
  while (!in.done()) {
    const std::uint32_t len = in.u32("name length");
    if (len == 0 || len > 4096) throw FormatError(source + ": implausible array name length " + std::to_string(len));
    std::string name = in.text(len, "name");
    if (!seen.insert(name).second) throw FormatError(source + ": duplicate array name '" + name + "'");
    NamedArray a = detail::decode_record(in);
    a.name = std::move(name);
    arrays.push_back(std::move(a));
  }
  return arrays;
}

inline void write_container(const fs::path& path, const std::vector<NamedArray>& arrays) {
  detail::write_file(path, encode_container(arrays));
}

inline std::vector<NamedArray> read_container(const fs::path& path) {
  return decode_container(detail::read_file(path), path.string());
}

inline const NamedArray& find_array(const std::vector<NamedArray>& arrays, const std::string& name,
                                    const std::string& source) {
  for (const auto& a : arrays)
    if (a.name == name) return a;
  throw FormatError(source + ": missing array '" + name + "'");
}

inline const char* plane_name(std::size_t c) {
  static const char* names[kChannels] = {"red", "green", "blue"};
  return names[c];
}

/// Color planes as a container with arrays "red", "green", "blue".
inline void write_planes(const fs::path& path, const Planes& p, Dtype dtype = Dtype::f64) {
  std::vector<NamedArray> arrays;
  for (std::size_t c = 0; c < kChannels; ++c) arrays.push_back(to_array(p[c], plane_name(c), dtype));
  write_container(path, arrays);
}

inline Planes read_planes(const fs::path& path) {
  const auto arrays = read_container(path);
  Planes p;
  for (std::size_t c = 0; c < kChannels; ++c) p[c] = to_grid(find_array(arrays, plane_name(c), path.string()));
  for (std::size_t c = 1; c < kChannels; ++c)
    if (p[c].dims() != p[0].dims()) throw FormatError(path.string() + ": color planes differ in size");
  return p;
}

// ---------------------------------------------------------------------------
// PNG

struct PngImage {
  Planes planes;  // values in [0, 1]
  int bit_depth = 8;
};

namespace detail {

struct PngFile {
  std::FILE* f = nullptr;
  ~PngFile() {
    if (f) std::fclose(f);
  }
};

// libpng reports errors by longjmp; the message is parked here first.
struct PngError {
  char message[256] = "unknown error";
};

inline void png_error_fn(png_structp png, png_const_charp msg) {
  auto* e = static_cast<PngError*>(png_get_error_ptr(png));
  std::snprintf(e->message, sizeof e->message, "%s", msg);
  png_longjmp(png, 1);
}

inline void png_warning_fn(png_structp, png_const_charp) {}

}  // namespace detail

/// Reads an 8- or 16-bit PNG. Gray images are replicated to three planes, alpha
/// is dropped, palettes are expanded. Samples are scaled by the bit-depth maximum.
inline PngImage read_png(const fs::path& path) {
  const std::string where = path.string();
  detail::PngFile file{std::fopen(where.c_str(), "rb")};
  if (!file.f) throw Error("cannot open '" + where + "' for reading");
  png_byte sig[8];
  if (std::fread(sig, 1, 8, file.f) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw FormatError(where + ": not a PNG file");
  detail::PngError err;
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, detail::png_error_fn, detail::png_warning_fn);
  if (!png) throw Error("libpng initialization failed");
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError(where + ": " + err.message);
  }
  png_init_io(png, file.f);
  png_set_sig_bytes(png, 8);
  png_read_png(png, info, PNG_TRANSFORM_EXPAND | PNG_TRANSFORM_STRIP_ALPHA, nullptr);

  const std::size_t W = png_get_image_width(png, info), H = png_get_image_height(png, info);
  const int depth = png_get_bit_depth(png, info);
  const std::size_t channels = png_get_channels(png, info);
  png_bytepp rows = png_get_rows(png, info);
  PngImage img;
  if ((depth == 8 || depth == 16) && (channels == 1 || channels == 3)) {
    const double scale = depth == 16 ? 65535.0 : 255.0;
    img.bit_depth = depth;
    img.planes = Planes::filled({H, W});
    for (std::size_t r = 0; r < H; ++r)
      for (std::size_t c = 0; c < W; ++c)
        for (std::size_t ch = 0; ch < kChannels; ++ch) {
          const std::size_t s = c * channels + (channels == 1 ? 0 : ch);
          const unsigned v = depth == 16 ? (static_cast<unsigned>(rows[r][2 * s]) << 8) | rows[r][2 * s + 1]
                                         : rows[r][s];
          img.planes[ch](r, c) = v / scale;
        }
  }
  png_destroy_read_struct(&png, &info, nullptr);
  if (img.planes[0].size() == 0)
    throw FormatError(where + ": unsupported PNG layout (bit depth " + std::to_string(depth) + ", " +
                      std::to_string(channels) + " channels)");
  return img;
}

/// Quantizes a [0, 1] value: clamp, then round half up.
inline unsigned quantize(double v, unsigned max) {
  const double x = std::clamp(v, 0.0, 1.0) * max;
  return static_cast<unsigned>(std::floor(x + 0.5));
}

/// Writes three planes as an 8- or 16-bit RGB PNG.
inline void write_png(const fs::path& path, const Planes& img, int bit_depth = 8) {
  if (bit_depth != 8 && bit_depth != 16) throw InvalidArgument("PNG bit depth must be 8 or 16");
  for (std::size_t c = 0; c < kChannels; ++c) require_finite(img[c], "PNG export");
  const std::string where = path.string();
  const std::size_t H = img.dims().rows, W = img.dims().cols;
  const std::size_t bytes = static_cast<std::size_t>(bit_depth) / 8;
  const unsigned max = bit_depth == 16 ? 65535u : 255u;
  std::vector<png_byte> pixels(H * W * kChannels * bytes);
  std::vector<png_bytep> rows(H);
  for (std::size_t r = 0; r < H; ++r) {
    rows[r] = &pixels[r * W * kChannels * bytes];
    for (std::size_t c = 0; c < W; ++c)
      for (std::size_t ch = 0; ch < kChannels; ++ch) {
        const unsigned q = quantize(img[ch](r, c), max);
        png_bytep s = rows[r] + (c * kChannels + ch) * bytes;
        if (bytes == 2) {
          s[0] = static_cast<png_byte>(q >> 8);
          s[1] = static_cast<png_byte>(q & 0xff);
        } else {
          s[0] = static_cast<png_byte>(q);
        }
      }
  }

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  detail::PngFile file{std::fopen(where.c_str(), "wb")};
  if (!file.f) throw Error("cannot open '" + where + "' for writing");
  detail::PngError err;
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, detail::png_error_fn, detail::png_warning_fn);
  if (!png) throw Error("libpng initialization failed");
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(where + ": PNG write failed: " + err.message);
  }
  png_init_io(png, file.f);
  png_set_IHDR(png, info, static_cast<png_uint_32>(W), static_cast<png_uint_32>(H), bit_depth, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

// ---------------------------------------------------------------------------
// Checkpoints: a container of named parameter arrays plus a JSON sidecar.

inline fs::path sidecar_path(const fs::path& checkpoint) {
  fs::path p = checkpoint;
  p += ".json";
  return p;
}

inline void write_checkpoint(const fs::path& path, const NetworkParams& net, Dims sensor,
                             std::size_t n_train_images = 0) {
  net.theta.validate();
  const std::size_t K = net.theta.depth();
  auto vec = [](std::string name, std::vector<double> v) {
    return NamedArray{std::move(name), {static_cast<std::uint32_t>(v.size())}, std::move(v), Dtype::f64};
  };
  std::vector<double> m1(K), m2(K), m3(K), t(K);
  for (std::size_t k = 0; k < K; ++k) {
    m1[k] = net.theta.layers[k].log_mu1;
    m2[k] = net.theta.layers[k].log_mu2;
    m3[k] = net.theta.layers[k].log_mu3;
    t[k] = net.theta.layers[k].log_tau;
  }
  std::vector<NamedArray> arrays{vec("log_mu1", m1), vec("log_mu2", m2), vec("log_mu3", m3), vec("log_tau", t)};
  if (net.variant == Variant::leadmm_star) {
    const auto& tr = net.transform;
    constexpr auto H = static_cast<std::uint32_t>(LearnedTransform::hidden);
    constexpr auto T = static_cast<std::uint32_t>(LearnedTransform::taps);
    arrays.push_back({"conv_in", {H, T}, {tr.conv_in.begin(), tr.conv_in.end()}, Dtype::f64});
    arrays.push_back({"bias_in", {H}, {tr.bias_in.begin(), tr.bias_in.end()}, Dtype::f64});
    arrays.push_back({"conv_out", {H, T}, {tr.conv_out.begin(), tr.conv_out.end()}, Dtype::f64});
    arrays.push_back(vec("bias_out", {tr.bias_out}));
  }
  write_container(path, arrays);
  nlohmann::ordered_json side;
  side["K"] = K;
  side["dims"] = {sensor.rows, sensor.cols};
  side["variant"] = to_string(net.variant);
  if (net.variant == Variant::leadmm_star) side["residual"] = net.transform.residual;
  if (n_train_images > 0) side["n_train_images"] = n_train_images;
  detail::write_file(sidecar_path(path), side.dump(2) + "\n");
}

struct Checkpoint {
  NetworkParams net;
  Dims sensor;
  std::size_t n_train_images = 0;
};

inline Checkpoint read_checkpoint(const fs::path& path) {
  const std::string where = path.string();
  nlohmann::json side;
  try {
    side = nlohmann::json::parse(detail::read_file(sidecar_path(path)));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(sidecar_path(path).string() + ": " + e.what());
  }
  Checkpoint ck;
  std::size_t K = 0;
  try {
    K = side.at("K").get<std::size_t>();
    ck.sensor = {side.at("dims").at(0).get<std::size_t>(), side.at("dims").at(1).get<std::size_t>()};
    ck.net.variant = parse_variant(side.at("variant").get<std::string>());
    if (side.contains("residual")) ck.net.transform.residual = side["residual"].get<bool>();
    if (side.contains("n_train_images")) ck.n_train_images = side["n_train_images"].get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(sidecar_path(path).string() + ": " + e.what());
  }
  const auto arrays = read_container(path);
  auto get = [&](const char* name, std::size_t n) -> const std::vector<double>& {
    const NamedArray& a = find_array(arrays, name, where);
    if (a.values.size() != n)
      throw FormatError(where + ": array '" + name + "' has " + std::to_string(a.values.size()) +
                        " entries, expected " + std::to_string(n));
    return a.values;
  };
  const auto& m1 = get("log_mu1", K);
  const auto& m2 = get("log_mu2", K);
  const auto& m3 = get("log_mu3", K);
  const auto& t = get("log_tau", K);
  ck.net.theta.layers.resize(K);
  for (std::size_t k = 0; k < K; ++k) ck.net.theta.layers[k] = {m1[k], m2[k], m3[k], t[k]};
  if (ck.net.variant == Variant::leadmm_star) {
    auto& tr = ck.net.transform;
    const auto& ci = get("conv_in", tr.conv_in.size());
    const auto& bi = get("bias_in", tr.bias_in.size());
    const auto& co = get("conv_out", tr.conv_out.size());
    std::copy(ci.begin(), ci.end(), tr.conv_in.begin());
    std::copy(bi.begin(), bi.end(), tr.bias_in.begin());
    std::copy(co.begin(), co.end(), tr.conv_out.begin());
    tr.bias_out = get("bias_out", 1)[0];
  }
  try {
    ck.net.theta.validate();
  } catch (const InvalidArgument& e) {
    throw FormatError(where + ": " + e.what());
  }
  return ck;
}

// ---------------------------------------------------------------------------
// CSV

namespace detail {
inline std::string num(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}
}  // namespace detail

inline std::string history_csv(const std::vector<EpochRecord>& history) {
  std::string out = "epoch,train_loss,test_mse,test_ssim\n";
  for (const auto& h : history)
    out += std::to_string(h.epoch) + "," + detail::num(h.train_loss) + "," + detail::num(h.test_mse) + "," +
           detail::num(h.test_ssim) + "\n";
  return out;
}

inline std::string metrics_csv(const MetricsReport& report) {
  std::string out = "method,data_fidelity,mse,ssim,psnr,wall_time_ms,n_train_images\n";
  for (const auto& r : report.rows)
    out += r.name + "," + detail::num(r.data_fidelity) + "," + detail::num(r.mse) + "," + detail::num(r.ssim) +
           "," + detail::num(r.psnr) + "," + detail::num(r.wall_time_ms) + "," + std::to_string(r.n_train_images) +
           "\n";
  return out;
}

/// Fixed-width text rendering of a metrics report.
inline std::string metrics_table(const MetricsReport& report) {
  std::ostringstream s;
  s << std::left << std::setw(14) << "method" << std::right << std::setw(14) << "fidelity" << std::setw(10)
    << "MSE" << std::setw(9) << "SSIM" << std::setw(9) << "PSNR" << std::setw(12) << "time [ms]" << std::setw(8)
    << "n_train" << "\n";
  for (const auto& r : report.rows)
    s << std::left << std::setw(14) << r.name << std::right << std::fixed << std::setprecision(4) << std::setw(14)
      << r.data_fidelity << std::setw(10) << r.mse << std::setw(9) << r.ssim << std::setprecision(2)
      << std::setw(9) << r.psnr << std::setprecision(1) << std::setw(12) << r.wall_time_ms << std::setw(8)
      << r.n_train_images << "\n";
  return s.str();
}

inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = "train_size,test_mse,test_ssim\n";
  for (const auto& r : rows)
    out += std::to_string(r.train_size) + "," + detail::num(r.test_mse) + "," + detail::num(r.test_ssim) + "\n";
  return out;
}

inline std::string layer_csv(const std::vector<LayerMetrics>& rows) {
  std::string out = "layer,mse,data_fidelity\n";
  for (std::size_t k = 0; k < rows.size(); ++k)
    out += std::to_string(k + 1) + "," + detail::num(rows[k].mse) + "," + detail::num(rows[k].data_fidelity) + "\n";
  return out;
}

inline std::string gradcheck_csv(const GradientCheckReport& r) {
  std::string out = "parameter,analytic,numeric,rel_error,step,status\n";
  for (const auto& e : r.entries)
    out += e.name + "," + detail::num(e.analytic) + "," + detail::num(e.numeric) + "," + detail::num(e.rel_error) +
           "," + detail::num(e.step) + "," + (e.skipped ? "skip" : e.passed ? "ok" : "FAIL") + "\n";
  return out;
}

inline void write_text(const fs::path& path, const std::string& text) { detail::write_file(path, text); }

// ---------------------------------------------------------------------------
// Dataset directories
//
//   manifest.json              sensor, valid region, PSF file, noise, pair list
//   psf.ltg                    normalized PSF grid
//   {train,test}/NNNN_b.ltg    measurement planes
//   {train,test}/NNNN_gt.png   16-bit ground truth

inline constexpr int kGroundTruthBits = 16;

inline void save_dataset(const fs::path& dir, const Dataset& data, const Psf& psf, const NoiseModel& noise,
                         std::uint64_t seed) {
  nlohmann::ordered_json m;
  const Dims sensor = psf.sensor_dims();
  m["sensor"] = {sensor.rows, sensor.cols};
  const Dims valid = !data.train.empty() ? data.train.front().valid_region : data.test.front().valid_region;
  m["valid_region"] = {valid.rows, valid.cols};
  m["psf"] = "psf.ltg";
  m["psf_norm"] = psf.norm;
  m["noise"] = {{"kind", noise.kind == NoiseModel::Kind::none ? "none" : "gaussian"},
                {"sigma", noise.sigma},
                {"seed", noise.seed}};
  m["seed"] = seed;
  write_grid(dir / "psf.ltg", psf.grid);
  for (const char* split : {"train", "test"}) {
    const auto& pairs = std::string(split) == "train" ? data.train : data.test;
    nlohmann::ordered_json list = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      char stem[32];
      std::snprintf(stem, sizeof stem, "%s/%04zu", split, i);
      const std::string b = std::string(stem) + "_b.ltg", gt = std::string(stem) + "_gt.png";
      write_planes(dir / b, pairs[i].measurement);
      write_png(dir / gt, pairs[i].ground_truth, kGroundTruthBits);
      list.push_back({{"measurement", b}, {"ground_truth", gt}});
    }
    m[split] = list;
  }
  write_text(dir / "manifest.json", m.dump(2) + "\n");
}

struct LoadedDataset {
  Dataset data;
  Psf psf;
};

inline LoadedDataset load_dataset(const fs::path& dir) {
  const fs::path manifest = dir / "manifest.json";
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(detail::read_file(manifest));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(manifest.string() + ": " + e.what());
  }
  LoadedDataset out;
  try {
    const Dims sensor{m.at("sensor").at(0).get<std::size_t>(), m.at("sensor").at(1).get<std::size_t>()};
    const Dims valid{m.at("valid_region").at(0).get<std::size_t>(), m.at("valid_region").at(1).get<std::size_t>()};
    out.psf.grid = read_grid(dir / m.at("psf").get<std::string>());
    out.psf.norm = m.at("psf_norm").get<double>();
    if (out.psf.sensor_dims() != sensor) throw FormatError(manifest.string() + ": PSF dims differ from 'sensor'");
    for (const char* split : {"train", "test"}) {
      auto& pairs = std::string(split) == "train" ? out.data.train : out.data.test;
      for (const auto& e : m.at(split)) {
        DatasetPair p;
        p.measurement.planes = read_planes(dir / e.at("measurement").get<std::string>()).planes;
        p.ground_truth = read_png(dir / e.at("ground_truth").get<std::string>()).planes;
        p.valid_region = valid;
        if (p.measurement.dims() != sensor || p.ground_truth.dims() != sensor)
          throw FormatError(manifest.string() + ": pair '" + e.at("measurement").get<std::string>() +
                            "' does not match the sensor dims");
        pairs.push_back(std::move(p));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(manifest.string() + ": " + e.what());
  }
  return out;
}

}  // namespace lensless
