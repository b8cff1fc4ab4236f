#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pean/charset.hpp"
#include "pean/image.hpp"

namespace pean {

enum class Difficulty { Easy, Medium, Hard };

inline const char* difficulty_name(Difficulty d) {
  switch (d) {
    case Difficulty::Easy: return "easy";
    case Difficulty::Medium: return "medium";
    default: return "hard";
  }
}
std::optional<Difficulty> difficulty_from_name(const std::string& s);

// Blur sigma applied at HR scale before downsampling, then additive noise.
struct DegradeParams {
  double blur_sigma;
  double noise_std;
};
DegradeParams degrade_params(Difficulty d);

struct RenderStyle {
  float fg[3] = {0.f, 0.f, 0.f};
  float bg[3] = {1.f, 1.f, 1.f};
  int font_scale = 0;     // 0: auto from text length
  double shear = 0.0;     // horizontal shear, px per py
  double blur_sigma = 0;  // degradation, usually from difficulty
  double noise_std = 0;

  static RenderStyle random(Rng& rng, Difficulty d);
};

struct TextImagePair {
  Image lr;  // 16 x 64
  Image hr;  // 32 x 128
  std::string text;
  Difficulty difficulty = Difficulty::Easy;
};

constexpr int kLrH = 16, kLrW = 64, kHrH = 32, kHrW = 128;

// Deterministic given (text, style, seed); seed only drives the LR noise.
TextImagePair render_pair(const std::string& text, const RenderStyle& style, uint64_t seed);

// Draws text glyphs into an HR canvas (exposed for tests).
Image render_text_image(const std::string& text, const RenderStyle& style);

struct ManifestEntry {
  std::string id;
  std::string lr_path;  // relative to the dataset root
  std::string hr_path;
  std::string text;
  std::string split;  // "train" | "test"
  Difficulty difficulty;
};

struct DatasetSpec {
  int n_train = 500;
  int n_test_per_difficulty = 50;
  uint64_t seed = 0;
  int min_text_len = 2;
  int max_text_len = 8;
};

std::vector<ManifestEntry> build_dataset(const DatasetSpec& spec, const std::string& out_dir);

std::vector<ManifestEntry> load_manifest(const std::string& dataset_dir);
void write_manifest(const std::string& dataset_dir, const std::vector<ManifestEntry>& entries);

struct Sample {
  Image lr, hr;
  std::string text;
  Difficulty difficulty;
};

// Loads the referenced PNGs into memory; split = "train"/"test"/"" (all).
std::vector<Sample> load_samples(const std::string& dataset_dir, const std::string& split);

std::string random_text(Rng& rng, int min_len, int max_len);

}  // namespace pean
