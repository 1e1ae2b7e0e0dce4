// Copyright (c) 2026 moetts contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace moetts {

// Error with a short machine-parsable class tag, surfaced by the CLI as
// "error:<cls>: <message>".
class Error : public std::runtime_error {
 public:
  Error(std::string cls, const std::string& msg)
      : std::runtime_error("error:" + cls + ": " + msg), cls_(std::move(cls)) {}
  const std::string& cls() const { return cls_; }

 private:
  std::string cls_;
};

inline void check(bool cond, const std::string& cls, const std::string& msg) {
  if (!cond) throw Error(cls, msg);
}

// Deterministic RNG used everywhere; a single seeded stream per concern keeps
// runs reproducible regardless of wall clock or thread count.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : gen_(seed) {}

  double uniform() { return unif_(gen_); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * unif_(gen_); }
  double normal() { return norm_(gen_); }
  // [lo, hi] inclusive
  int randint(int lo, int hi) {
    return int(std::uniform_int_distribution<int64_t>(lo, hi)(gen_));
  }
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = size_t(randint(0, int(i - 1)));
      std::swap(v[i - 1], v[j]);
    }
  }
  uint64_t raw() { return gen_(); }

 private:
  std::mt19937_64 gen_;
  std::uniform_real_distribution<double> unif_{0.0, 1.0};
  std::normal_distribution<double> norm_{0.0, 1.0};
};

// 2D row-major double matrix; the single value container used by both the
// autodiff tape and plain DSP code. Sequences are stored channels x time.
struct Mat {
  int rows = 0, cols = 0;
  std::vector<double> d;

  Mat() = default;
  Mat(int r, int c, double fill = 0.0) : rows(r), cols(c), d(size_t(r) * c, fill) {}

  static Mat from(int r, int c, std::vector<double> data) {
    Mat m;
    m.rows = r;
    m.cols = c;
    m.d = std::move(data);
    return m;
  }

  double& at(int r, int c) { return d[size_t(r) * cols + c]; }
  double at(int r, int c) const { return d[size_t(r) * cols + c]; }
  size_t size() const { return d.size(); }
  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }

  bool all_finite() const {
    for (double v : d)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

inline double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / double(v.size());
}

// Population variance, two-pass for stability.
inline double variance_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / double(v.size());
}

}  // namespace moetts
