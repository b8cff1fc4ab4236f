#pragma once

#include <string>
#include <vector>

#include "pean/rng.hpp"
#include "pean/tensor.hpp"

namespace pean {

// Float RGB image in [0,1], row-major [h][w][c].
struct Image {
  int h = 0, w = 0, c = 0;
  std::vector<float> px;

  Image() = default;
  Image(int h_, int w_, int c_) : h(h_), w(w_), c(c_), px(static_cast<size_t>(h_) * w_ * c_, 0.f) {}

  float& at(int y, int x, int ch) { return px[(static_cast<size_t>(y) * w + x) * c + ch]; }
  const float& at(int y, int x, int ch) const { return px[(static_cast<size_t>(y) * w + x) * c + ch]; }
  size_t size() const { return px.size(); }
};

// PNG I/O (8-bit). Writing quantizes with round(v*255); loading any
// gray/rgb/rgba 8-bit PNG yields RGB floats.
Image load_png(const std::string& path);
void save_png(const std::string& path, const Image& img);

Image gaussian_blur(const Image& img, double sigma);
Image box_downsample2x(const Image& img);
Image bicubic_upsample2x(const Image& img);
Image nearest_upsample2x(const Image& img);
void add_gaussian_noise(Image& img, double stddev, Rng& rng);
void clamp01(Image& img);

double image_mse(const Image& a, const Image& b);

template <class T>
Tensor<T> image_to_tensor(const Image& img) {
  Tensor<T> t(Shape{1, img.h, img.w, img.c});
  for (size_t i = 0; i < img.size(); ++i) t[static_cast<int64_t>(i)] = static_cast<T>(img.px[i]);
  return t;
}

template <class T>
Tensor<T> images_to_tensor(const std::vector<Image>& imgs) {
  check(!imgs.empty(), "images_to_tensor: empty batch");
  const int h = imgs[0].h, w = imgs[0].w, c = imgs[0].c;
  Tensor<T> t(Shape{static_cast<int>(imgs.size()), h, w, c});
  int64_t k = 0;
  for (const Image& im : imgs) {
    check(im.h == h && im.w == w && im.c == c, "images_to_tensor: inconsistent shapes");
    for (size_t i = 0; i < im.size(); ++i) t[k++] = static_cast<T>(im.px[i]);
  }
  return t;
}

template <class T>
Image tensor_to_image(const Tensor<T>& t, int batch_index = 0) {
  check(t.ndim() == 4, "tensor_to_image: expected [B,H,W,C]");
  Image img(t.dim(1), t.dim(2), t.dim(3));
  const int64_t n = static_cast<int64_t>(img.size());
  for (int64_t i = 0; i < n; ++i) img.px[static_cast<size_t>(i)] = static_cast<float>(t[batch_index * n + i]);
  return img;
}

}  // namespace pean
