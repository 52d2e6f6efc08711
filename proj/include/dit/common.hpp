#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace dit {

using Vec3 = Eigen::Vector3d;
using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// Error categories map 1:1 onto CLI exit codes.
enum class Errc : int {
  io = 2,
  config = 3,
  mismatch = 4,
  invalid_arg = 5,
  numeric = 6,
};

class DitError : public std::runtime_error {
 public:
  DitError(Errc code, const std::string& msg)
      : std::runtime_error(msg), code_(code) {}
  Errc code() const { return code_; }

 private:
  Errc code_;
};

// Round a double to the nearest f32 value, returned as double. The volatile
// store blocks a gcc 11 SLP-vectorizer bug that elides the paired
// cvtsd2ss/cvtss2sd narrowing at -O3.
inline double round_to_f32(double x) {
  volatile float f = static_cast<float>(x);
  return static_cast<double>(f);
}

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Derives an independent stream seed; used so each (shape, seed) and
// (iteration, seed) pair gets its own generator regardless of scheduling.
inline uint64_t derive_seed(uint64_t seed, uint64_t stream) {
  return splitmix64(seed ^ splitmix64(stream + 1));
}

// Deterministic RNG wrapper. Avoids std::*_distribution so sequences do not
// depend on the standard library implementation.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(splitmix64(seed)) {}

  uint64_t next_u64() { return engine_(); }

  // uniform in [0, 1)
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n)
  int uniform_int(int n) {
    return static_cast<int>(next_u64() % static_cast<uint64_t>(n));
  }

  // Box-Muller, one value per call (second value cached).
  double gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  Vec3 gaussian3() { return Vec3(gaussian(), gaussian(), gaussian()); }

  // uniform point in the unit ball (rejection from the cube)
  Vec3 unit_ball() {
    for (;;) {
      Vec3 p(uniform(-1, 1), uniform(-1, 1), uniform(-1, 1));
      if (p.squaredNorm() <= 1.0) return p;
    }
  }

  // uniform direction
  Vec3 unit_sphere() {
    for (;;) {
      Vec3 p(uniform(-1, 1), uniform(-1, 1), uniform(-1, 1));
      double n2 = p.squaredNorm();
      if (n2 > 1e-12 && n2 <= 1.0) return p / std::sqrt(n2);
    }
  }

  // Fisher-Yates shuffle of an index vector.
  void shuffle(std::vector<int>& v) {
    for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
      int j = uniform_int(i + 1);
      std::swap(v[i], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace dit
