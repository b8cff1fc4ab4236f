#pragma once

#include <cstdlib>
#include <random>
#include <sstream>
#include <string>

#include "pean/tensor.hpp"

namespace pean {

// Every random draw in the project goes through a seeded Rng instance.
// No global generator: determinism is by construction, PEAN_DETERMINISTIC=1
// additionally pins the worker-thread count (see thread_count()).
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }
  std::mt19937_64& engine() { return gen_; }

  double uniform(double lo = 0.0, double hi = 1.0) {
    std::uniform_real_distribution<double> d(lo, hi);
    return d(gen_);
  }
  int uniform_int(int lo, int hi) {  // inclusive bounds
    std::uniform_int_distribution<int> d(lo, hi);
    return d(gen_);
  }
  double normal(double mean = 0.0, double stddev = 1.0) {
    std::normal_distribution<double> d(mean, stddev);
    return d(gen_);
  }

  // Derive an independent stream, e.g. per sample or per batch.
  Rng fork(uint64_t salt) {
    std::seed_seq seq{static_cast<uint32_t>(gen_()), static_cast<uint32_t>(salt),
                      static_cast<uint32_t>(salt >> 32)};
    std::mt19937_64 g(seq);
    Rng r;
    r.gen_ = g;
    return r;
  }

  template <class T>
  Tensor<T> normal_tensor(Shape s, double mean = 0.0, double stddev = 1.0) {
    Tensor<T> t(std::move(s));
    std::normal_distribution<double> d(mean, stddev);
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(d(gen_));
    return t;
  }
  template <class T>
  Tensor<T> uniform_tensor(Shape s, double lo, double hi) {
    Tensor<T> t(std::move(s));
    std::uniform_real_distribution<double> d(lo, hi);
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(d(gen_));
    return t;
  }

  std::string state_str() const {
    std::ostringstream os;
    os << gen_;
    return os.str();
  }
  void restore_state(const std::string& s) {
    std::istringstream is(s);
    is >> gen_;
  }

 private:
  std::mt19937_64 gen_;
};

inline bool deterministic_mode() {
  const char* v = std::getenv("PEAN_DETERMINISTIC");
  return v && std::string(v) == "1";
}

int thread_count();
void init_runtime();

}  // namespace pean
