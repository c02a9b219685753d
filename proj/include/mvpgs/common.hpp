// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace mvpgs {

// ---------------------------------------------------------------------------
// Error hierarchy. ValidationError maps to CLI exit code 2, NumericalAbort to
// exit code 3; anything else escaping main is a bug.
// ---------------------------------------------------------------------------

class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

class NumericalAbort : public std::runtime_error {
 public:
  explicit NumericalAbort(const std::string& msg) : std::runtime_error(msg) {}
};

#define MVPGS_DEFINE_ERROR(NAME)                                        \
  class NAME : public ValidationError {                                 \
   public:                                                              \
    explicit NAME(const std::string& msg = #NAME) : ValidationError(msg) {} \
  }

MVPGS_DEFINE_ERROR(NonPositiveDepth);
MVPGS_DEFINE_ERROR(OutOfBounds);
MVPGS_DEFINE_ERROR(DimensionMismatch);
MVPGS_DEFINE_ERROR(ShapeMismatch);
MVPGS_DEFINE_ERROR(TooFewViews);
MVPGS_DEFINE_ERROR(TooFewValidPixels);
MVPGS_DEFINE_ERROR(EmptyCloud);
MVPGS_DEFINE_ERROR(AllPointsCulled);
MVPGS_DEFINE_ERROR(CountMismatch);
MVPGS_DEFINE_ERROR(MissingInput);
MVPGS_DEFINE_ERROR(IoError);

#undef MVPGS_DEFINE_ERROR

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ValidationError(msg);
}

// ---------------------------------------------------------------------------
// Seeded RNG with explicit, engine-stable distributions. All randomized
// pipeline stages draw from this so that a (seed, call order) pair pins the
// result bit-for-bit.
// ---------------------------------------------------------------------------

class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : eng_(seed) {}

  std::uint64_t next_u64() { return eng_(); }

  // Uniform in [0,1) with 53 random bits.
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0, n) via rejection.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw ValidationError("Rng::below(0)");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t r;
    do {
      r = eng_();
    } while (r >= limit);
    return r % n;
  }

  // Standard normal via Box-Muller; the pair's second value is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1, u2;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    u2 = uniform();
    const double mag = std::sqrt(-2.0 * std::log(u1));
    constexpr double two_pi = 6.283185307179586476925286766559;
    spare_ = mag * std::sin(two_pi * u2);
    has_spare_ = true;
    return mag * std::cos(two_pi * u2);
  }

  // k distinct indices from [0, n) in random order (partial Fisher-Yates).
  std::vector<std::size_t> sample_permutation(std::size_t n, std::size_t k) {
    if (k > n) throw ValidationError("sample_permutation: k > n");
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(below(n - i));
      std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    return idx;
  }

  // k distinct indices from [0, n), ascending, so downstream consumption
  // stays canonical.
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k) {
    std::vector<std::size_t> idx = sample_permutation(n, k);
    std::sort(idx.begin(), idx.end());
    return idx;
  }

 private:
  std::mt19937_64 eng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// ---------------------------------------------------------------------------
// Parallelism cap. MVPGS_THREADS=0 (or unset, or deterministic callers)
// means single-threaded canonical order.
// ---------------------------------------------------------------------------

inline int thread_cap() {
  if (const char* env = std::getenv("MVPGS_THREADS")) {
    const int v = std::atoi(env);
    if (v <= 0) return 1;
    return v;
  }
  return 1;
}

// Runs fn(begin, end) over [0, n) split into contiguous chunks, one per
// worker. With a single worker this degenerates to fn(0, n) on the calling
// thread. Chunk boundaries depend only on (n, workers), so any reduction the
// caller performs in chunk order is reproducible for a fixed worker count.
template <typename Fn>
inline void parallel_chunks(std::size_t n, int workers, Fn&& fn) {
  if (n == 0) return;
  if (workers <= 1 || n == 1) {
    fn(std::size_t{0}, n);
    return;
  }
  const std::size_t nw = std::min<std::size_t>(workers, n);
  const std::size_t chunk = (n + nw - 1) / nw;
  std::vector<std::thread> pool;
  pool.reserve(nw);
  for (std::size_t w = 0; w < nw; ++w) {
    const std::size_t b = w * chunk;
    const std::size_t e = std::min(n, b + chunk);
    if (b >= e) break;
    pool.emplace_back([&fn, b, e] { fn(b, e); });
  }
  for (auto& t : pool) t.join();
}

// FNV-1a, used for stable config hashing in run manifests.
inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double inverse_sigmoid(double y) {
  require(y > 0.0 && y < 1.0, "inverse_sigmoid: argument outside (0,1)");
  return std::log(y / (1.0 - y));
}

// ---------------------------------------------------------------------------
// Binary file helpers (little-endian on disk).
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInput("cannot open: " + path);
  in.seekg(0, std::ios::end);
  const auto n = in.tellg();
  in.seekg(0);
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(n));
  in.read(reinterpret_cast<char*>(buf.data()), n);
  if (!in) throw IoError("short read: " + path);
  return buf;
}

inline void write_file(const std::string& path, const void* data, std::size_t n) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write: " + path);
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  if (!out) throw IoError("short write: " + path);
}

inline void put_u32_le(std::vector<std::uint8_t>& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

inline void put_u64_le(std::vector<std::uint8_t>& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

inline void put_f32_le(std::vector<std::uint8_t>& buf, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32_le(buf, bits);
}

// Cursor over an in-memory little-endian payload; throws on overrun.
struct ByteReader {
  const std::uint8_t* p;
  const std::uint8_t* end;

  explicit ByteReader(const std::vector<std::uint8_t>& buf)
      : p(buf.data()), end(buf.data() + buf.size()) {}

  void need(std::size_t n) const {
    if (static_cast<std::size_t>(end - p) < n) throw IoError("truncated payload");
  }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    p += 4;
    return v;
  }

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    p += 8;
    return v;
  }

  float f32() {
    const std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }

  void bytes(void* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, p, n);
    p += n;
  }

  bool exhausted() const { return p == end; }
};

}  // namespace detail

}  // namespace mvpgs
