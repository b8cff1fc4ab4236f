#include "pean/image.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>

namespace pean {

Image load_png(const std::string& path) {
  FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) fail_io("cannot open PNG for reading: " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    fail_io("libpng failed to decode: " + path);
  }
  png_init_io(png, fp);
  png_read_info(png, info);

  png_set_expand(png);
  png_set_strip_16(png);
  png_set_gray_to_rgb(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  Image img(h, w, 3);
  std::vector<png_byte> row(static_cast<size_t>(png_get_rowbytes(png, info)));
  for (int y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < 3; ++ch)
        img.at(y, x, ch) = static_cast<float>(row[static_cast<size_t>(x) * 3 + ch]) / 255.f;
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return img;
}

void save_png(const std::string& path, const Image& img) {
  check(img.c == 3, "save_png: RGB images only");
  FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) fail_io("cannot open PNG for writing: " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    fail_io("libpng failed to encode: " + path);
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.w), static_cast<png_uint_32>(img.h), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_byte> row(static_cast<size_t>(img.w) * 3);
  for (int y = 0; y < img.h; ++y) {
    for (int x = 0; x < img.w; ++x)
      for (int ch = 0; ch < 3; ++ch) {
        float v = img.at(y, x, ch);
        v = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
        row[static_cast<size_t>(x) * 3 + ch] = static_cast<png_byte>(std::lround(v * 255.f));
      }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

Image gaussian_blur(const Image& img, double sigma) {
  if (sigma <= 0.0) return img;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<float> kernel(static_cast<size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
    kernel[static_cast<size_t>(i + radius)] = static_cast<float>(v);
    sum += v;
  }
  for (float& k : kernel) k = static_cast<float>(k / sum);

  auto clampi = [](int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); };
  Image tmp(img.h, img.w, img.c), out(img.h, img.w, img.c);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      for (int ch = 0; ch < img.c; ++ch) {
        float s = 0.f;
        for (int i = -radius; i <= radius; ++i)
          s += kernel[static_cast<size_t>(i + radius)] * img.at(y, clampi(x + i, 0, img.w - 1), ch);
        tmp.at(y, x, ch) = s;
      }
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      for (int ch = 0; ch < img.c; ++ch) {
        float s = 0.f;
        for (int i = -radius; i <= radius; ++i)
          s += kernel[static_cast<size_t>(i + radius)] * tmp.at(clampi(y + i, 0, img.h - 1), x, ch);
        out.at(y, x, ch) = s;
      }
  return out;
}

Image box_downsample2x(const Image& img) {
  check(img.h % 2 == 0 && img.w % 2 == 0, "box_downsample2x: odd extent");
  Image out(img.h / 2, img.w / 2, img.c);
  for (int y = 0; y < out.h; ++y)
    for (int x = 0; x < out.w; ++x)
      for (int ch = 0; ch < img.c; ++ch)
        out.at(y, x, ch) = 0.25f * (img.at(2 * y, 2 * x, ch) + img.at(2 * y, 2 * x + 1, ch) +
                                    img.at(2 * y + 1, 2 * x, ch) + img.at(2 * y + 1, 2 * x + 1, ch));
  return out;
}

namespace {
// Catmull-Rom kernel (a = -0.5)
float cubic_weight(float t) {
  const float a = -0.5f;
  t = std::fabs(t);
  if (t <= 1.f) return (a + 2.f) * t * t * t - (a + 3.f) * t * t + 1.f;
  if (t < 2.f) return a * t * t * t - 5.f * a * t * t + 8.f * a * t - 4.f * a;
  return 0.f;
}
}  // namespace

Image bicubic_upsample2x(const Image& img) {
  Image out(img.h * 2, img.w * 2, img.c);
  auto clampi = [](int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); };
  for (int y = 0; y < out.h; ++y) {
    const float sy = (y + 0.5f) / 2.f - 0.5f;
    const int y0 = static_cast<int>(std::floor(sy));
    for (int x = 0; x < out.w; ++x) {
      const float sx = (x + 0.5f) / 2.f - 0.5f;
      const int x0 = static_cast<int>(std::floor(sx));
      for (int ch = 0; ch < img.c; ++ch) {
        float acc = 0.f, wsum = 0.f;
        for (int dy = -1; dy <= 2; ++dy)
          for (int dx = -1; dx <= 2; ++dx) {
            const float wy = cubic_weight(sy - (y0 + dy));
            const float wx = cubic_weight(sx - (x0 + dx));
            const float w = wy * wx;
            acc += w * img.at(clampi(y0 + dy, 0, img.h - 1), clampi(x0 + dx, 0, img.w - 1), ch);
            wsum += w;
          }
        float v = acc / wsum;
        out.at(y, x, ch) = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
      }
    }
  }
  return out;
}

Image nearest_upsample2x(const Image& img) {
  Image out(img.h * 2, img.w * 2, img.c);
  for (int y = 0; y < out.h; ++y)
    for (int x = 0; x < out.w; ++x)
      for (int ch = 0; ch < img.c; ++ch) out.at(y, x, ch) = img.at(y / 2, x / 2, ch);
  return out;
}

void add_gaussian_noise(Image& img, double stddev, Rng& rng) {
  if (stddev <= 0.0) return;
  for (float& v : img.px) v += static_cast<float>(rng.normal(0.0, stddev));
}

void clamp01(Image& img) {
  for (float& v : img.px) v = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
}

double image_mse(const Image& a, const Image& b) {
  check(a.h == b.h && a.w == b.w && a.c == b.c, "image_mse: shape mismatch");
  double s = 0.0;
  for (size_t i = 0; i < a.px.size(); ++i) {
    const double d = static_cast<double>(a.px[i]) - b.px[i];
    s += d * d;
  }
  return s / static_cast<double>(a.px.size());
}

}  // namespace pean
