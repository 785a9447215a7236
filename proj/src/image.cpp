#include "faithcam/image.hpp"

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

#include <fmt/format.h>
#include <jpeglib.h>
#include <png.h>

#include "faithcam/error.hpp"

namespace faithcam {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

Image8 decode_png(const std::filesystem::path& path) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw ImageError(fmt::format("cannot decode PNG {}: {}", path.string(), img.message));
  }
  img.format = PNG_FORMAT_RGB;
  Image8 out;
  out.width = img.width;
  out.height = img.height;
  out.rgb.resize(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, out.rgb.data(), 0, nullptr)) {
    std::string msg = img.message;
    png_image_free(&img);
    throw ImageError(fmt::format("cannot decode PNG {}: {}", path.string(), msg));
  }
  return out;
}

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

void jpeg_silence(j_common_ptr, int) {}

Image8 decode_jpeg(const std::filesystem::path& path) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw ImageError("cannot open " + path.string());

  jpeg_decompress_struct cinfo;
  JpegErrorManager err;
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  err.base.emit_message = jpeg_silence;
  Image8 out;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw ImageError(fmt::format("cannot decode JPEG {}: {}", path.string(), err.message));
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, file.get());
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  out.width = cinfo.output_width;
  out.height = cinfo.output_height;
  out.rgb.resize(out.width * out.height * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = out.rgb.data() + static_cast<std::size_t>(cinfo.output_scanline) * out.width * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return out;
}

}  // namespace

Image8 decode_image(const std::filesystem::path& path) {
  unsigned char sig[8] = {};
  {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ImageError("cannot open image " + path.string());
    f.read(reinterpret_cast<char*>(sig), sizeof(sig));
    if (f.gcount() < 4) throw ImageError("cannot decode " + path.string() + ": file too short");
  }
  if (png_sig_cmp(sig, 0, 8) == 0) return decode_png(path);
  if (sig[0] == 0xFF && sig[1] == 0xD8 && sig[2] == 0xFF) return decode_jpeg(path);
  throw ImageError("cannot decode " + path.string() + ": not a PNG or JPEG file");
}

void write_png(const std::filesystem::path& path, const Image8& image,
               const std::vector<std::pair<std::string, std::string>>& text) {
  if (image.width == 0 || image.height == 0 || image.rgb.size() != image.width * image.height * 3) {
    throw ImageError(fmt::format("refusing to write malformed {}x{} image to {}", image.width,
                                 image.height, path.string()));
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw IoError("cannot open for writing: " + path.string());

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw ImageError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw ImageError("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed writing PNG " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  std::vector<png_text> chunks(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    chunks[i].compression = PNG_TEXT_COMPRESSION_NONE;
    chunks[i].key = const_cast<char*>(text[i].first.c_str());
    chunks[i].text = const_cast<char*>(text[i].second.c_str());
  }
  if (!chunks.empty()) png_set_text(png, info, chunks.data(), static_cast<int>(chunks.size()));
  png_write_info(png, info);
  for (std::size_t row = 0; row < image.height; ++row) {
    png_write_row(png, const_cast<png_bytep>(image.rgb.data() + row * image.width * 3));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image8 to_image8(const RgbImage& image) {
  Image8 out{image.width, image.height, std::vector<std::uint8_t>(image.rgb.size())};
  for (std::size_t i = 0; i < image.rgb.size(); ++i) {
    const float v = std::clamp(image.rgb[i], 0.0f, 1.0f);
    out.rgb[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
  }
  return out;
}

RgbImage to_rgb(const Image8& image) {
  RgbImage out{image.width, image.height, std::vector<float>(image.rgb.size())};
  for (std::size_t i = 0; i < image.rgb.size(); ++i) out.rgb[i] = image.rgb[i] / 255.0f;
  return out;
}

template <typename T>
std::vector<T> resize_bilinear(std::span<const T> planes, std::size_t channels, std::size_t in_h,
                               std::size_t in_w, std::size_t out_h, std::size_t out_w) {
  if (planes.size() != channels * in_h * in_w || in_h == 0 || in_w == 0 || out_h == 0 || out_w == 0) {
    throw ImageError(fmt::format("resize_bilinear: {} values for {}x{}x{} source, target {}x{}",
                                 planes.size(), channels, in_h, in_w, out_h, out_w));
  }
  if (in_h == out_h && in_w == out_w) return {planes.begin(), planes.end()};

  struct Tap {
    std::size_t lo, hi;
    double frac;
  };
  auto taps = [](std::size_t in, std::size_t out) {
    std::vector<Tap> t(out);
    const double ratio = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t i = 0; i < out; ++i) {
      double src = (static_cast<double>(i) + 0.5) * ratio - 0.5;
      src = std::clamp(src, 0.0, static_cast<double>(in - 1));
      const auto lo = static_cast<std::size_t>(std::floor(src));
      t[i] = {lo, std::min(lo + 1, in - 1), src - static_cast<double>(lo)};
    }
    return t;
  };
  const auto ys = taps(in_h, out_h);
  const auto xs = taps(in_w, out_w);

  std::vector<T> out(channels * out_h * out_w);
  for (std::size_t c = 0; c < channels; ++c) {
    const T* src = planes.data() + c * in_h * in_w;
    T* dst = out.data() + c * out_h * out_w;
    for (std::size_t y = 0; y < out_h; ++y) {
      const auto& ty = ys[y];
      for (std::size_t x = 0; x < out_w; ++x) {
        const auto& tx = xs[x];
        const double top = (1.0 - tx.frac) * src[ty.lo * in_w + tx.lo] + tx.frac * src[ty.lo * in_w + tx.hi];
        const double bottom = (1.0 - tx.frac) * src[ty.hi * in_w + tx.lo] + tx.frac * src[ty.hi * in_w + tx.hi];
        dst[y * out_w + x] = static_cast<T>((1.0 - ty.frac) * top + ty.frac * bottom);
      }
    }
  }
  return out;
}

template std::vector<float> resize_bilinear(std::span<const float>, std::size_t, std::size_t, std::size_t,
                                            std::size_t, std::size_t);
template std::vector<double> resize_bilinear(std::span<const double>, std::size_t, std::size_t, std::size_t,
                                             std::size_t, std::size_t);

std::array<float, 3> colormap(double value) {
  static constexpr std::array<std::array<float, 3>, 5> knots = {{
      {0.0f, 0.0f, 1.0f},  // blue
      {0.0f, 1.0f, 1.0f},  // cyan
      {0.0f, 1.0f, 0.0f},  // green
      {1.0f, 1.0f, 0.0f},  // yellow
      {1.0f, 0.0f, 0.0f},  // red
  }};
  const double v = std::isnan(value) ? 0.0 : std::clamp(value, 0.0, 1.0);
  const double pos = v * 4.0;
  const auto seg = std::min<std::size_t>(static_cast<std::size_t>(pos), 3);
  const double t = pos - static_cast<double>(seg);
  std::array<float, 3> rgb{};
  for (std::size_t c = 0; c < 3; ++c) {
    rgb[c] = static_cast<float>((1.0 - t) * knots[seg][c] + t * knots[seg + 1][c]);
  }
  return rgb;
}

}  // namespace faithcam
