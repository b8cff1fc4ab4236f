#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>

#include "pean/datagen.hpp"
#include "pean/evalkit.hpp"

using namespace pean;
namespace fs = std::filesystem;

namespace {

std::string temp_dir(const std::string& tag) {
  const auto p = fs::temp_directory_path() / ("pean_datagen_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

bool images_equal(const Image& a, const Image& b) {
  return a.h == b.h && a.w == b.w && a.px == b.px;
}

}  // namespace

TEST_CASE("render_pair is deterministic in (text, style, seed)") {
  Rng rng(1);
  RenderStyle st = RenderStyle::random(rng, Difficulty::Medium);
  TextImagePair a = render_pair("hello42", st, 99);
  TextImagePair b = render_pair("hello42", st, 99);
  CHECK(images_equal(a.lr, b.lr));
  CHECK(images_equal(a.hr, b.hr));
  TextImagePair c = render_pair("hello42", st, 100);
  CHECK_FALSE(images_equal(a.lr, c.lr));  // noise seed differs
  CHECK(images_equal(a.hr, c.hr));        // HR is noise-free
}

TEST_CASE("degenerate degradation reduces to exact box downsampling") {
  Rng rng(2);
  RenderStyle st = RenderStyle::random(rng, Difficulty::Easy);
  st.blur_sigma = 0;
  st.noise_std = 0;
  TextImagePair p = render_pair("abc", st, 5);
  Image want = box_downsample2x(p.hr);
  CHECK(images_equal(p.lr, want));
}

TEST_CASE("shapes, ranges and difficulty parameters") {
  CHECK(degrade_params(Difficulty::Easy).blur_sigma == 0.5);
  CHECK(degrade_params(Difficulty::Easy).noise_std == 0.01);
  CHECK(degrade_params(Difficulty::Medium).blur_sigma == 1.0);
  CHECK(degrade_params(Difficulty::Medium).noise_std == 0.02);
  CHECK(degrade_params(Difficulty::Hard).blur_sigma == 1.8);
  CHECK(degrade_params(Difficulty::Hard).noise_std == 0.04);
  Rng rng(3);
  TextImagePair p = render_pair("q7", RenderStyle::random(rng, Difficulty::Hard), 1);
  CHECK(p.hr.h == 32);
  CHECK(p.hr.w == 128);
  CHECK(p.lr.h == 16);
  CHECK(p.lr.w == 64);
  for (float v : p.lr.px) {
    CHECK(v >= 0.f);
    CHECK(v <= 1.f);
  }
}

TEST_CASE("harder degradation strictly lowers PSNR against the clean reference") {
  Rng rng(4);
  RenderStyle easy = RenderStyle::random(rng, Difficulty::Easy);
  RenderStyle hard = easy;  // same colors/shear, harder degradation
  const DegradeParams hp = degrade_params(Difficulty::Hard);
  hard.blur_sigma = hp.blur_sigma;
  hard.noise_std = hp.noise_std;
  TextImagePair pe = render_pair("contrast", easy, 7);
  TextImagePair ph = render_pair("contrast", hard, 7);
  Image ref = box_downsample2x(pe.hr);  // same HR for both styles
  CHECK(evalkit::psnr(ph.lr, ref) < evalkit::psnr(pe.lr, ref));
}

TEST_CASE("render_pair rejects invalid text") {
  Rng rng(5);
  RenderStyle st = RenderStyle::random(rng, Difficulty::Easy);
  CHECK_THROWS_AS(render_pair("UPPER", st, 1), Error);
  CHECK_THROWS_AS(render_pair("", st, 1), Error);
  CHECK_THROWS_AS(render_pair("with space", st, 1), Error);
  CHECK_THROWS_AS(render_pair(std::string(26, 'a'), st, 1), Error);
  CHECK_NOTHROW(render_pair(std::string(25, 'a'), st, 1));
}

TEST_CASE("build_dataset writes a loadable, complete manifest") {
  const std::string dir = temp_dir("build");
  DatasetSpec spec;
  spec.n_train = 100;
  spec.n_test_per_difficulty = 4;
  spec.seed = 42;
  auto entries = build_dataset(spec, dir);
  CHECK(entries.size() == 100 + 3 * 4);

  auto loaded = load_manifest(dir);
  REQUIRE(loaded.size() == entries.size());
  int train_count = 0;
  std::map<std::string, int> test_by_diff;
  for (const auto& e : loaded) {
    if (e.split == "train") ++train_count;
    else ++test_by_diff[difficulty_name(e.difficulty)];
    CHECK(fs::exists(fs::path(dir) / e.lr_path));
    CHECK(fs::exists(fs::path(dir) / e.hr_path));
    CHECK(Charset::valid_text(e.text));
  }
  CHECK(train_count == 100);
  CHECK(test_by_diff["easy"] == 4);
  CHECK(test_by_diff["medium"] == 4);
  CHECK(test_by_diff["hard"] == 4);

  // every line round-trips through the sample loader
  auto samples = load_samples(dir, "");
  CHECK(samples.size() == loaded.size());
}

TEST_CASE("dataset builds are deterministic per seed") {
  DatasetSpec spec;
  spec.n_train = 12;
  spec.n_test_per_difficulty = 2;
  spec.seed = 7;
  const std::string d1 = temp_dir("det1"), d2 = temp_dir("det2");
  build_dataset(spec, d1);
  build_dataset(spec, d2);
  CHECK(slurp(d1 + "/manifest.jsonl") == slurp(d2 + "/manifest.jsonl"));
  // image bytes identical too
  for (const auto& e : load_manifest(d1)) {
    CHECK(slurp(d1 + "/" + e.lr_path) == slurp(d2 + "/" + e.lr_path));
    CHECK(slurp(d1 + "/" + e.hr_path) == slurp(d2 + "/" + e.hr_path));
  }
  spec.seed = 8;
  const std::string d3 = temp_dir("det3");
  build_dataset(spec, d3);
  CHECK(slurp(d1 + "/manifest.jsonl") != slurp(d3 + "/manifest.jsonl"));
}

TEST_CASE("PNG round trip stays within 8-bit quantization") {
  Rng rng(6);
  RenderStyle st = RenderStyle::random(rng, Difficulty::Medium);
  TextImagePair p = render_pair("roundtrip", st, 3);
  const std::string dir = temp_dir("png");
  save_png(dir + "/x.png", p.lr);
  Image back = load_png(dir + "/x.png");
  REQUIRE(back.h == p.lr.h);
  REQUIRE(back.w == p.lr.w);
  float max_err = 0;
  for (size_t i = 0; i < back.px.size(); ++i)
    max_err = std::max(max_err, std::abs(back.px[i] - p.lr.px[i]));
  CHECK(max_err <= 1.0f / 255.0f + 1e-6f);
}

TEST_CASE("uniform text sampler covers the whole charset") {
  Rng rng(9);
  std::map<char, int> hist;
  for (int i = 0; i < 5000; ++i)
    for (char c : random_text(rng, 2, 8)) ++hist[c];
  for (const char* p = Charset::kSymbols; *p; ++p) {
    CHECK(hist[*p] > 0);
  }
  CHECK(hist.size() == 36);
}

TEST_CASE("build_dataset surfaces unwritable paths with context") {
  DatasetSpec spec;
  spec.n_train = 1;
  spec.n_test_per_difficulty = 0;
  CHECK_THROWS_AS(build_dataset(spec, "/proc/definitely/not/writable"), Error);
}
