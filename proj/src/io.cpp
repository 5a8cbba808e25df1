#include "flimreg/io.hpp"

#include <fcntl.h>
#include <png.h>
#include <unistd.h>

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

#include "flimreg/error.hpp"
#include "json.hpp"

namespace flimreg {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

static_assert(std::endian::native == std::endian::little, "raw formats assume a little-endian host");

std::vector<char> read_all(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingFile, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T get(const char* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

int require_positive_int(const json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_number_integer() || j[key].get<long long>() <= 0) {
    throw Error(ErrorCode::CorruptHeader, std::string("manifest field '") + key + "' must be a positive integer");
  }
  return j[key].get<int>();
}

}  // namespace

HypercubeManifest read_hypercube_manifest(const fs::path& manifest_path) {
  if (!fs::exists(manifest_path)) throw Error(ErrorCode::MissingFile, "manifest not found: " + manifest_path.string());
  json j;
  try {
    std::ifstream in(manifest_path);
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::CorruptHeader, "manifest is not valid JSON: " + std::string(e.what()));
  }

  HypercubeManifest m;
  m.axes.width = require_positive_int(j, "width");
  m.axes.height = require_positive_int(j, "height");
  m.axes.spectral_bins = require_positive_int(j, "spectral_bins");
  m.axes.time_bins = require_positive_int(j, "time_bins");
  m.axes.wavelength_start_nm = j.value("wavelength_start_nm", 500.0);
  m.axes.wavelength_step_nm = j.value("wavelength_step_nm", 1.0);
  if (j.contains("time_bin_ps")) {
    m.axes.time_bin_ps = j["time_bin_ps"].get<double>();
  } else {
    m.axes.time_bin_ps = 50.0;
    m.time_bin_defaulted = true;
  }
  const std::string dtype = j.value("dtype", "u16");
  if (dtype == "u16") {
    m.dtype = CubeDtype::u16;
  } else if (dtype == "f32") {
    m.dtype = CubeDtype::f32;
  } else {
    throw Error(ErrorCode::CorruptHeader, "unsupported dtype '" + dtype + "'");
  }
  const std::string layout = j.value("layout", "row-major x,y,s,t");
  if (layout != "row-major x,y,s,t") throw Error(ErrorCode::CorruptHeader, "unsupported layout '" + layout + "'");
  if (!j.contains("data_file") || !j["data_file"].is_string()) {
    throw Error(ErrorCode::CorruptHeader, "manifest lacks data_file");
  }
  m.data_file = j["data_file"].get<std::string>();
  try {
    Hypercube::validate_axes(m.axes);
  } catch (const Error& e) {
    throw Error(ErrorCode::CorruptHeader, e.what());
  }
  return m;
}

Hypercube load_hypercube(const fs::path& manifest_path, const WarningSink& warn) {
  const HypercubeManifest m = read_hypercube_manifest(manifest_path);
  if (m.time_bin_defaulted && warn) warn("manifest omits time_bin_ps; assuming 50 ps");

  const fs::path data = m.data_file.is_absolute() ? m.data_file : manifest_path.parent_path() / m.data_file;
  if (!fs::exists(data)) throw Error(ErrorCode::MissingFile, "hypercube data file not found: " + data.string());

  const std::size_t n = Hypercube::element_count(m.axes);
  const std::size_t elem = m.dtype == CubeDtype::u16 ? 2 : 4;
  const auto actual = static_cast<std::size_t>(fs::file_size(data));
  if (actual != n * elem) {
    throw Error(ErrorCode::DimensionMismatch, "data file holds " + std::to_string(actual) + " bytes, manifest declares " +
                                                  std::to_string(n * elem));
  }

  std::ifstream in(data, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot read " + data.string());
  std::vector<float> counts(n);
  if (m.dtype == CubeDtype::f32) {
    in.read(reinterpret_cast<char*>(counts.data()), static_cast<std::streamsize>(n * 4));
  } else {
    std::vector<std::uint16_t> raw(n);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n * 2));
    std::copy(raw.begin(), raw.end(), counts.begin());
  }
  if (!in) throw Error(ErrorCode::IoFailure, "short read on " + data.string());
  return Hypercube(m.axes, std::move(counts));
}

void save_hypercube(const Hypercube& cube, const fs::path& manifest_path, CubeDtype dtype) {
  const fs::path data_name = manifest_path.stem().string() + ".raw";
  const fs::path data_path = manifest_path.parent_path() / data_name;
  {
    std::ofstream out(data_path, std::ios::binary);
    if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + data_path.string());
    const auto counts = cube.counts();
    if (dtype == CubeDtype::f32) {
      out.write(reinterpret_cast<const char*>(counts.data()), static_cast<std::streamsize>(counts.size() * 4));
    } else {
      std::vector<std::uint16_t> raw(counts.size());
      for (std::size_t i = 0; i < counts.size(); ++i) {
        raw[i] = static_cast<std::uint16_t>(std::min(65535.0f, std::round(counts[i])));
      }
      out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size() * 2));
    }
    if (!out) throw Error(ErrorCode::IoFailure, "write failed: " + data_path.string());
  }
  const auto& a = cube.axes();
  const json j = {{"width", a.width},
                  {"height", a.height},
                  {"spectral_bins", a.spectral_bins},
                  {"time_bins", a.time_bins},
                  {"wavelength_start_nm", a.wavelength_start_nm},
                  {"wavelength_step_nm", a.wavelength_step_nm},
                  {"time_bin_ps", a.time_bin_ps},
                  {"dtype", dtype == CubeDtype::u16 ? "u16" : "f32"},
                  {"layout", "row-major x,y,s,t"},
                  {"data_file", data_name.string()}};
  std::ofstream out(manifest_path);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + manifest_path.string());
  out << j.dump(2) << '\n';
}

std::string encode_plane(const ScalarPlane& plane) {
  std::string buf;
  buf.reserve(32 + plane.size() * 4);
  buf.append(kPlaneMagic);
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(plane.width()));
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(plane.height()));
  put<std::uint32_t>(buf, plane.kind() == PlaneKind::lifetime_ns ? 1u : 0u);
  put<std::uint32_t>(buf, plane.wavelength_nm() ? 1u : 0u);
  put<double>(buf, plane.wavelength_nm().value_or(0.0));
  const auto v = plane.values();
  buf.append(reinterpret_cast<const char*>(v.data()), v.size() * 4);
  return buf;
}

void save_plane(const ScalarPlane& plane, const fs::path& path) {
  const std::string buf = encode_plane(plane);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw Error(ErrorCode::IoFailure, "write failed: " + path.string());
}

ScalarPlane load_plane(const fs::path& path) {
  const std::vector<char> bytes = read_all(path);
  if (bytes.size() < 32 || std::string_view(bytes.data(), 8) != kPlaneMagic) {
    throw Error(ErrorCode::CorruptHeader, path.string() + " is not a plane file");
  }
  const auto w = get<std::uint32_t>(bytes.data() + 8);
  const auto h = get<std::uint32_t>(bytes.data() + 12);
  const auto kind = get<std::uint32_t>(bytes.data() + 16);
  const auto flags = get<std::uint32_t>(bytes.data() + 20);
  const auto wl = get<double>(bytes.data() + 24);
  if (w == 0 || h == 0 || kind > 1 || w > (1u << 20) || h > (1u << 20)) {
    throw Error(ErrorCode::CorruptHeader, path.string() + ": invalid plane header");
  }
  const std::size_t n = static_cast<std::size_t>(w) * h;
  if (bytes.size() != 32 + n * 4) throw Error(ErrorCode::CorruptHeader, path.string() + ": truncated plane data");
  std::vector<float> values(n);
  std::memcpy(values.data(), bytes.data() + 32, n * 4);
  std::optional<double> wavelength;
  if (flags & 1u) wavelength = wl;
  try {
    return ScalarPlane(static_cast<int>(w), static_cast<int>(h),
                       kind == 1 ? PlaneKind::lifetime_ns : PlaneKind::intensity_counts, std::move(values), wavelength);
  } catch (const Error& e) {
    throw Error(ErrorCode::CorruptHeader, path.string() + ": " + e.what());
  }
}

// ---- PNG -------------------------------------------------------------------

namespace {

struct PngReadState {
  std::span<const std::uint8_t> bytes;
  std::size_t offset = 0;
};

void png_read_from_memory(png_structp png, png_bytep out, png_size_t len) {
  auto* st = static_cast<PngReadState*>(png_get_io_ptr(png));
  if (st->offset + len > st->bytes.size()) png_error(png, "truncated PNG");
  std::memcpy(out, st->bytes.data() + st->offset, len);
  st->offset += len;
}

void png_write_to_vector(png_structp png, png_bytep data, png_size_t len) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + len);
}

void png_flush_noop(png_structp) {}

[[noreturn]] void png_throw(png_structp, png_const_charp msg) {
  throw Error(ErrorCode::CorruptHeader, std::string("PNG: ") + msg);
}

void png_warn_silently(png_structp, png_const_charp) {}

}  // namespace

RgbImage decode_png(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) {
    throw Error(ErrorCode::CorruptHeader, "not a PNG stream");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_throw, png_warn_silently);
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* p;
    png_infop* i;
    ~Guard() { png_destroy_read_struct(p, i, nullptr); }
  } guard{&png, &info};

  PngReadState st{bytes, 0};
  png_set_read_fn(png, &st, png_read_from_memory);
  png_read_info(png, info);

  const png_byte color = png_get_color_type(png, info);
  const png_byte depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  if (color & PNG_COLOR_MASK_ALPHA || png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  if (png_get_rowbytes(png, info) != static_cast<std::size_t>(w) * 3) {
    throw Error(ErrorCode::CorruptHeader, "PNG could not be converted to 8-bit RGB");
  }
  std::vector<std::uint8_t> data(static_cast<std::size_t>(w) * h * 3);
  std::vector<png_bytep> rows(static_cast<std::size_t>(h));
  for (int y = 0; y < h; ++y) rows[static_cast<std::size_t>(y)] = data.data() + static_cast<std::size_t>(y) * w * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  return RgbImage(w, h, std::move(data));
}

RgbImage read_png(const fs::path& path) {
  const std::vector<char> bytes = read_all(path);
  try {
    return decode_png({reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()});
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

std::vector<std::uint8_t> encode_png(const RgbImage& image) {
  std::vector<std::uint8_t> out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_throw, png_warn_silently);
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* p;
    png_infop* i;
    ~Guard() { png_destroy_write_struct(p, i); }
  } guard{&png, &info};

  png_set_write_fn(png, &out, png_write_to_vector, png_flush_noop);
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width()), static_cast<png_uint_32>(image.height()), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_set_compression_level(png, 3);
  png_write_info(png, info);
  const auto data = image.data();
  for (int y = 0; y < image.height(); ++y) {
    png_write_row(png, const_cast<png_bytep>(data.data() + static_cast<std::size_t>(y) * image.width() * 3));
  }
  png_write_end(png, nullptr);
  return out;
}

void write_png(const RgbImage& image, const fs::path& path) {
  const auto bytes = encode_png(image);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::IoFailure, "write failed: " + path.string());
}

void write_file_atomic(const fs::path& path, std::string_view bytes) {
  const fs::path tmp = path.string() + ".tmp." + std::to_string(::getpid());
  const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  if (fd < 0) throw Error(ErrorCode::PersistFailure, "cannot create " + tmp.string() + ": " + std::strerror(errno));
  std::size_t done = 0;
  while (done < bytes.size()) {
    const ssize_t n = ::write(fd, bytes.data() + done, bytes.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      ::close(fd);
      ::unlink(tmp.c_str());
      throw Error(ErrorCode::PersistFailure, "write failed on " + tmp.string());
    }
    done += static_cast<std::size_t>(n);
  }
  if (::fsync(fd) != 0 || ::close(fd) != 0) {
    ::unlink(tmp.c_str());
    throw Error(ErrorCode::PersistFailure, "fsync failed on " + tmp.string());
  }
  if (::rename(tmp.c_str(), path.c_str()) != 0) {
    ::unlink(tmp.c_str());
    throw Error(ErrorCode::PersistFailure, "rename to " + path.string() + " failed");
  }
  const fs::path dir = path.has_parent_path() ? path.parent_path() : fs::path(".");
  const int dfd = ::open(dir.c_str(), O_RDONLY | O_DIRECTORY);
  if (dfd >= 0) {
    ::fsync(dfd);
    ::close(dfd);
  }
}

}  // namespace flimreg
