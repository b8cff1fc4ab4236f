#include "pean/datagen.hpp"

#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "pean/font5x7.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace pean {

std::optional<Difficulty> difficulty_from_name(const std::string& s) {
  if (s == "easy") return Difficulty::Easy;
  if (s == "medium") return Difficulty::Medium;
  if (s == "hard") return Difficulty::Hard;
  return std::nullopt;
}

DegradeParams degrade_params(Difficulty d) {
  switch (d) {
    case Difficulty::Easy: return {0.5, 0.01};
    case Difficulty::Medium: return {1.0, 0.02};
    default: return {1.8, 0.04};
  }
}

RenderStyle RenderStyle::random(Rng& rng, Difficulty d) {
  RenderStyle st;
  const DegradeParams dp = degrade_params(d);
  st.blur_sigma = dp.blur_sigma;
  st.noise_std = dp.noise_std;
  // Contrasting fg/bg: draw until luminance gap is wide enough.
  auto luminance = [](const float* c) { return 0.299f * c[0] + 0.587f * c[1] + 0.114f * c[2]; };
  for (int attempt = 0; attempt < 64; ++attempt) {
    for (int i = 0; i < 3; ++i) {
      st.bg[i] = static_cast<float>(rng.uniform(0.0, 1.0));
      st.fg[i] = static_cast<float>(rng.uniform(0.0, 1.0));
    }
    if (std::fabs(luminance(st.fg) - luminance(st.bg)) >= 0.4f) break;
    if (attempt == 63) {
      st.bg[0] = st.bg[1] = st.bg[2] = 0.9f;
      st.fg[0] = st.fg[1] = st.fg[2] = 0.1f;
    }
  }
  st.shear = rng.uniform(-0.08, 0.08);
  return st;
}

Image render_text_image(const std::string& text, const RenderStyle& style) {
  if (!Charset::valid_text(text))
    fail_config("text not renderable over charset (1..25 of [0-9a-z]): '" + text + "'");
  Image hr(kHrH, kHrW, 3);
  for (int y = 0; y < kHrH; ++y)
    for (int x = 0; x < kHrW; ++x)
      for (int ch = 0; ch < 3; ++ch) hr.at(y, x, ch) = style.bg[ch];

  const int len = static_cast<int>(text.size());
  int scale = style.font_scale;
  if (scale <= 0) scale = std::clamp(kHrW / ((kGlyphW + 1) * len + 2), 1, 3);
  int spacing = scale;
  int total = len * kGlyphW * scale + (len - 1) * spacing;
  if (total > kHrW) {
    spacing = 0;
    total = len * kGlyphW * scale;
  }
  const int x0 = (kHrW - total) / 2;
  const int y0 = (kHrH - kGlyphH * scale) / 2;
  const double yc = kHrH / 2.0;

  int pen = x0;
  for (char c : text) {
    const uint8_t* rows = glyph5x7(c);
    for (int gy = 0; gy < kGlyphH; ++gy)
      for (int gx = 0; gx < kGlyphW; ++gx) {
        if (!(rows[gy] & (1 << (kGlyphW - 1 - gx)))) continue;
        for (int sy = 0; sy < scale; ++sy)
          for (int sx = 0; sx < scale; ++sx) {
            const int y = y0 + gy * scale + sy;
            const int shear_dx = static_cast<int>(std::lround(style.shear * (y - yc)));
            const int x = pen + gx * scale + sx + shear_dx;
            if (y < 0 || y >= kHrH || x < 0 || x >= kHrW) continue;
            for (int ch = 0; ch < 3; ++ch) hr.at(y, x, ch) = style.fg[ch];
          }
      }
    pen += kGlyphW * scale + spacing;
  }
  return hr;
}

TextImagePair render_pair(const std::string& text, const RenderStyle& style, uint64_t seed) {
  TextImagePair pair;
  pair.text = text;
  pair.hr = render_text_image(text, style);
  Image blurred = gaussian_blur(pair.hr, style.blur_sigma);
  pair.lr = box_downsample2x(blurred);
  Rng rng(seed);
  add_gaussian_noise(pair.lr, style.noise_std, rng);
  clamp01(pair.lr);
  return pair;
}

std::string random_text(Rng& rng, int min_len, int max_len) {
  const int len = rng.uniform_int(min_len, max_len);
  std::string s(static_cast<size_t>(len), '?');
  for (char& c : s) c = Charset::kSymbols[rng.uniform_int(0, Charset::kSize - 2)];
  return s;
}

namespace {

constexpr Difficulty kAll[3] = {Difficulty::Easy, Difficulty::Medium, Difficulty::Hard};

ManifestEntry make_entry(const std::string& dataset_dir, const std::string& id,
                         const std::string& split, Difficulty diff, const std::string& text,
                         const TextImagePair& pair) {
  ManifestEntry e;
  e.id = id;
  e.lr_path = "images/" + id + "_lr.png";
  e.hr_path = "images/" + id + "_hr.png";
  e.text = text;
  e.split = split;
  e.difficulty = diff;
  save_png(dataset_dir + "/" + e.lr_path, pair.lr);
  save_png(dataset_dir + "/" + e.hr_path, pair.hr);
  return e;
}

}  // namespace

std::vector<ManifestEntry> build_dataset(const DatasetSpec& spec, const std::string& out_dir) {
  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "images", ec);
  if (ec) fail_io("cannot create dataset directory: " + out_dir + " (" + ec.message() + ")");
  {
    std::ofstream probe(fs::path(out_dir) / ".write_probe");
    if (!probe) fail_io("dataset directory not writable: " + out_dir);
  }
  fs::remove(fs::path(out_dir) / ".write_probe", ec);

  Rng rng(spec.seed);
  std::vector<ManifestEntry> entries;
  char id[32];
  for (int i = 0; i < spec.n_train; ++i) {
    Rng item = rng.fork(static_cast<uint64_t>(i));
    const Difficulty d = kAll[item.uniform_int(0, 2)];
    const std::string text = random_text(item, spec.min_text_len, spec.max_text_len);
    const RenderStyle st = RenderStyle::random(item, d);
    std::snprintf(id, sizeof(id), "tr%05d", i);
    entries.push_back(make_entry(out_dir, id, "train", d, text,
                                 render_pair(text, st, item.next_u64())));
  }
  for (int di = 0; di < 3; ++di)
    for (int i = 0; i < spec.n_test_per_difficulty; ++i) {
      Rng item = rng.fork(0x10000000ull + static_cast<uint64_t>(di) * 100000 + i);
      const Difficulty d = kAll[di];
      const std::string text = random_text(item, spec.min_text_len, spec.max_text_len);
      const RenderStyle st = RenderStyle::random(item, d);
      std::snprintf(id, sizeof(id), "te%05d", di * spec.n_test_per_difficulty + i);
      entries.push_back(make_entry(out_dir, id, "test", d, text,
                                   render_pair(text, st, item.next_u64())));
    }
  write_manifest(out_dir, entries);
  return entries;
}

void write_manifest(const std::string& dataset_dir, const std::vector<ManifestEntry>& entries) {
  const std::string path = dataset_dir + "/manifest.jsonl";
  std::ofstream out(path);
  if (!out) fail_io("cannot write manifest: " + path);
  for (const ManifestEntry& e : entries) {
    json j = {{"id", e.id},     {"lr_path", e.lr_path}, {"hr_path", e.hr_path},
              {"text", e.text}, {"split", e.split},     {"difficulty", difficulty_name(e.difficulty)}};
    out << j.dump() << "\n";
  }
  if (!out) fail_io("failed writing manifest: " + path);
}

std::vector<ManifestEntry> load_manifest(const std::string& dataset_dir) {
  const std::string path = dataset_dir + "/manifest.jsonl";
  std::ifstream in(path);
  if (!in) fail_io("cannot open manifest: " + path);
  std::vector<ManifestEntry> entries;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) fail_io("bad JSON at " + path + ":" + std::to_string(lineno));
    ManifestEntry e;
    e.id = j.at("id").get<std::string>();
    e.lr_path = j.at("lr_path").get<std::string>();
    e.hr_path = j.at("hr_path").get<std::string>();
    e.text = j.at("text").get<std::string>();
    e.split = j.at("split").get<std::string>();
    auto d = difficulty_from_name(j.at("difficulty").get<std::string>());
    if (!d) fail_io("bad difficulty at " + path + ":" + std::to_string(lineno));
    e.difficulty = *d;
    if (!Charset::valid_text(e.text))
      fail_io("manifest text invalid over charset at " + path + ":" + std::to_string(lineno));
    entries.push_back(std::move(e));
  }
  return entries;
}

std::vector<Sample> load_samples(const std::string& dataset_dir, const std::string& split) {
  std::vector<Sample> out;
  for (const ManifestEntry& e : load_manifest(dataset_dir)) {
    if (!split.empty() && e.split != split) continue;
    Sample s;
    s.lr = load_png(dataset_dir + "/" + e.lr_path);
    s.hr = load_png(dataset_dir + "/" + e.hr_path);
    s.text = e.text;
    s.difficulty = e.difficulty;
    check(s.lr.h == kLrH && s.lr.w == kLrW, "sample LR has wrong size: " + e.lr_path);
    check(s.hr.h == kHrH && s.hr.w == kHrW, "sample HR has wrong size: " + e.hr_path);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace pean
