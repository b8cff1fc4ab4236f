#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "pean/ctc.hpp"
#include "pean/gradcheck.hpp"

using namespace pean;
using namespace pean::rec;

namespace {

// Exhaustive CTC oracle: enumerate every |A|^L frame path, collapse repeats,
// drop blanks, and accumulate the probability of paths matching the label.
double ctc_bruteforce(const Tensor<double>& logits, const std::vector<int>& label, int blank = 0) {
  const int len = logits.dim(0), na = logits.dim(1);
  Tensor<double> p(Shape{len, na});
  for (int t = 0; t < len; ++t) {
    double m = logits.at(t, 0);
    for (int k = 1; k < na; ++k) m = std::max(m, logits.at(t, k));
    double z = 0;
    for (int k = 0; k < na; ++k) z += std::exp(logits.at(t, k) - m);
    for (int k = 0; k < na; ++k) p.at(t, k) = std::exp(logits.at(t, k) - m) / z;
  }
  double total = 0;
  std::vector<int> path(static_cast<size_t>(len), 0);
  int64_t count = 1;
  for (int t = 0; t < len; ++t) count *= na;
  for (int64_t idx = 0; idx < count; ++idx) {
    int64_t rem = idx;
    for (int t = 0; t < len; ++t) {
      path[static_cast<size_t>(t)] = static_cast<int>(rem % na);
      rem /= na;
    }
    std::vector<int> collapsed;
    int prev = -1;
    for (int s : path) {
      if (s != prev && s != blank) collapsed.push_back(s);
      prev = s;
    }
    if (collapsed == label) {
      double pp = 1.0;
      for (int t = 0; t < len; ++t) pp *= p.at(t, path[static_cast<size_t>(t)]);
      total += pp;
    }
  }
  return -std::log(total);
}

Tensor<double> one_hot_seq(const std::vector<int>& frames, int na, double hot = 10.0) {
  Tensor<double> t(Shape{static_cast<int>(frames.size()), na});
  for (size_t i = 0; i < frames.size(); ++i) t.at(static_cast<int>(i), frames[i]) = hot;
  return t;
}

}  // namespace

TEST_CASE("ctc_loss single frame equals -log p(a)") {
  Rng rng(1);
  Var<double> logits(rng.normal_tensor<double>({1, 1, 2}));
  Var<double> loss = ctc_loss(logits, {{1}});
  const double a = logits.val()[0], b = logits.val()[1];
  const double pa = std::exp(b) / (std::exp(a) + std::exp(b));
  CHECK(std::abs(loss.item() + std::log(pa)) < 1e-12);
}

TEST_CASE("ctc_loss over two frames enumerates the three alignments") {
  Rng rng(2);
  Var<double> logits(rng.normal_tensor<double>({2, 2}));
  // p1(a)p2(a) + p1(-)p2(a) + p1(a)p2(-)
  Tensor<double> p = softmax_lastdim(Var<double>(logits.val())).detach();
  const double expected =
      -std::log(p.at(0, 1) * p.at(1, 1) + p.at(0, 0) * p.at(1, 1) + p.at(0, 1) * p.at(1, 0));
  Var<double> loss = ctc_loss_single(logits, {1});
  CHECK(std::abs(loss.item() - expected) < 1e-12);
}

TEST_CASE("ctc_loss matches exhaustive path enumeration") {
  Rng rng(3);
  for (int rep = 0; rep < 200; ++rep) {
    const int len = rng.uniform_int(1, 6);
    const int na = rng.uniform_int(2, 4);
    std::vector<int> label;
    const int ll = rng.uniform_int(0, std::min(3, len));
    for (int i = 0; i < ll; ++i) label.push_back(rng.uniform_int(1, na - 1));
    if (rec::detail::min_frames(label) > len) continue;
    Tensor<double> logits = rng.normal_tensor<double>({len, na}, 0, 2);
    const double expected = ctc_bruteforce(logits, label);
    const double got = ctc_loss_single(Var<double>(logits), label).item();
    CHECK(std::abs(got - expected) < 1e-6);
  }
}

TEST_CASE("ctc_loss gradient passes finite differences") {
  Rng rng(4);
  Var<double> logits(rng.normal_tensor<double>({2, 5, 4}), true);
  nn::Params<double> ps;
  ps.add("logits", logits);
  std::vector<std::vector<int>> labels = {{1, 2}, {3}};
  auto rep = grad_check([&] { return ctc_loss(logits, labels); }, ps);
  CHECK(rep.passed);
  CHECK(rep.max_rel_err <= 1e-4);
}

TEST_CASE("ctc_loss gradient flows through preceding layers") {
  Rng rng(5);
  nn::Linear<double> lin(rng, 3, 4);
  Var<double> x(rng.normal_tensor<double>({1, 6, 3}));
  nn::Params<double> ps;
  lin.collect(ps, "lin");
  auto rep = grad_check([&] { return ctc_loss(lin(x), {{2, 1, 2}}); }, ps);
  CHECK(rep.passed);
}

TEST_CASE("ctc_loss rejects infeasible and invalid labels") {
  Var<double> logits(Tensor<double>::zeros({1, 2, 4}));
  CHECK_THROWS_AS(ctc_loss(logits, {{1, 2, 3}}), Error);  // needs 3 frames
  CHECK_THROWS_AS(ctc_loss(logits, {{1, 1}}), Error);     // repeat needs a blank frame
  CHECK_THROWS_AS(ctc_loss(logits, {{0}}), Error);        // blank in label
  CHECK_THROWS_AS(ctc_loss(logits, {{7}}), Error);        // out of range
  CHECK_NOTHROW(ctc_loss(logits, {{}}));                  // empty label is fine
}

TEST_CASE("ctc_loss handles the empty label as all-blank probability") {
  Rng rng(6);
  Tensor<double> logits = rng.normal_tensor<double>({3, 3});
  Tensor<double> p = softmax_lastdim(Var<double>(logits)).detach();
  const double expected = -std::log(p.at(0, 0) * p.at(1, 0) * p.at(2, 0));
  CHECK(std::abs(ctc_loss_single(Var<double>(logits), {}).item() - expected) < 1e-12);
}

TEST_CASE("greedy decode collapses repeats and drops blanks") {
  const int a = Charset::index_of('a');
  // frames: a a - a  ->  "aa"
  Tensor<double> probs = one_hot_seq({a, a, 0, a}, Charset::kSize);
  CHECK(ctc_greedy_decode(probs) == "aa");
  CHECK(ctc_greedy_decode(one_hot_seq({0, 0, 0}, Charset::kSize)).empty());
  // one-hot "cat" with blanks interleaved -> "cat"
  const int c = Charset::index_of('c'), t = Charset::index_of('t');
  CHECK(ctc_greedy_decode(one_hot_seq({0, c, 0, a, 0, t, 0}, Charset::kSize)) == "cat");
}
