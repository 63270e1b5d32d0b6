#pragma once

// Flat f64 vectors, deterministic reductions, seeded RNG substreams and a
// central finite-difference gradient used as a test oracle.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace gradmix {

/// Raised when a caller breaks an operation's precondition (dimension
/// mismatch, out-of-range label, bad config value...).
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised for malformed input data (files, JSON documents).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Flat parameter or gradient vector. Entries are finite on construction.
class ParamVec {
 public:
  ParamVec() = default;
  explicit ParamVec(std::size_t dim) : values_(dim, 0.0) {}
  explicit ParamVec(std::vector<double> values) : values_(std::move(values)) {
    for (std::size_t i = 0; i < values_.size(); ++i) {
      if (!std::isfinite(values_[i])) {
        throw ContractError("ParamVec: non-finite entry at index " + std::to_string(i));
      }
    }
  }
  ParamVec(std::initializer_list<double> values) : ParamVec(std::vector<double>(values)) {}

  std::size_t dim() const noexcept { return values_.size(); }
  double operator[](std::size_t i) const noexcept { return values_[i]; }
  double& operator[](std::size_t i) noexcept { return values_[i]; }

  std::span<const double> values() const noexcept { return values_; }
  std::span<double> values() noexcept { return values_; }
  const std::vector<double>& storage() const noexcept { return values_; }

  auto begin() const noexcept { return values_.begin(); }
  auto end() const noexcept { return values_.end(); }

  bool all_finite() const noexcept {
    for (double v : values_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  friend bool operator==(const ParamVec&, const ParamVec&) = default;

 private:
  std::vector<double> values_;
};

inline void require_same_dim(const ParamVec& a, const ParamVec& b, const char* what) {
  if (a.dim() != b.dim()) {
    throw ContractError(std::string(what) + ": dimension mismatch (" + std::to_string(a.dim()) +
                        " vs " + std::to_string(b.dim()) + ")");
  }
}

/// Sequential left-to-right accumulation; never reordered or fused.
inline double dot(const ParamVec& a, const ParamVec& b) {
  require_same_dim(a, b, "dot");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) acc += a[i] * b[i];
  return acc;
}

inline double squared_norm(const ParamVec& a) {
  double acc = 0.0;
  for (double v : a) acc += v * v;
  return acc;
}

inline double norm(const ParamVec& a) { return std::sqrt(squared_norm(a)); }

/// Cosine similarity clamped to [-1, 1]. std::nullopt marks an undefined
/// similarity (one of the inputs has zero norm).
///
/// IEEE multiplication is commutative, so the result is bitwise symmetric in
/// its arguments without any argument reordering.
inline std::optional<double> cosine_similarity(const ParamVec& a, const ParamVec& b) {
  require_same_dim(a, b, "cosine_similarity");
  const double na = norm(a);
  const double nb = norm(b);
  if (na == 0.0 || nb == 0.0) return std::nullopt;
  const double c = dot(a, b) / (na * nb);
  if (c > 1.0) return 1.0;
  if (c < -1.0) return -1.0;
  return c;
}

/// out = a + scale * b, elementwise.
inline ParamVec add_scaled(const ParamVec& a, double scale, const ParamVec& b) {
  require_same_dim(a, b, "add_scaled");
  ParamVec out(a.dim());
  for (std::size_t i = 0; i < a.dim(); ++i) out[i] = a[i] + scale * b[i];
  return out;
}

inline ParamVec scaled(const ParamVec& a, double scale) {
  ParamVec out(a.dim());
  for (std::size_t i = 0; i < a.dim(); ++i) out[i] = a[i] * scale;
  return out;
}

using LossFn = std::function<double(const ParamVec&)>;

/// Central finite-difference gradient. With no explicit step, coordinate i
/// uses h_i = 1e-5 * max(1, |theta_i|).
inline ParamVec finite_diff_grad(const LossFn& loss, const ParamVec& theta,
                                 std::optional<double> step = std::nullopt) {
  if (step && !(*step > 0.0)) throw ContractError("finite_diff_grad: step must be positive");
  ParamVec grad(theta.dim());
  ParamVec probe = theta;
  for (std::size_t i = 0; i < theta.dim(); ++i) {
    const double h = step ? *step : 1e-5 * std::max(1.0, std::abs(theta[i]));
    probe[i] = theta[i] + h;
    const double up = loss(probe);
    probe[i] = theta[i] - h;
    const double down = loss(probe);
    probe[i] = theta[i];
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw std::domain_error("finite_diff_grad: non-finite loss probing coordinate " +
                              std::to_string(i));
    }
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

// ---------------------------------------------------------------------------
// RNG

enum class Substream : std::uint64_t {
  init = 1,
  shuffle = 2,
  lang_pick = 3,
  surgery_p = 4,
  shot_sample = 5,
  synth_data = 6,
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// FNV-1a; std::hash is not stable across standard libraries.
inline std::uint64_t fnv1a(std::string_view s) noexcept {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

}  // namespace detail

/// One deterministic generator. The engine is mt19937_64, whose output
/// sequence is fixed by the standard; the distributions below are written out
/// so results do not depend on the standard library implementation.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Uniform integer in [0, n) by rejection sampling.
  std::size_t uniform_index(std::size_t n) {
    if (n == 0) throw ContractError("uniform_index: empty range");
    const std::uint64_t bound = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return static_cast<std::size_t>(x % bound);
  }

  /// Standard normal via Box-Muller (one variate per call).
  double normal() {
    double u1 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = uniform_index(i);
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

/// Per-run RNG bundle. Each substream is an independent generator seeded from
/// (master_seed, substream id); drawing from one never advances another.
/// `derive` builds a fresh generator keyed additionally by a label, for
/// draws that must not depend on history (per-language shots, per-epoch
/// shuffles).
class RngStreams {
 public:
  explicit RngStreams(std::uint64_t master_seed)
      : master_seed_(master_seed),
        init_(seed_for(Substream::init)),
        shuffle_(seed_for(Substream::shuffle)),
        lang_pick_(seed_for(Substream::lang_pick)),
        surgery_p_(seed_for(Substream::surgery_p)),
        shot_sample_(seed_for(Substream::shot_sample)),
        synth_data_(seed_for(Substream::synth_data)) {}

  RngStreams(const RngStreams&) = delete;
  RngStreams& operator=(const RngStreams&) = delete;
  RngStreams(RngStreams&&) = default;
  RngStreams& operator=(RngStreams&&) = default;

  std::uint64_t master_seed() const noexcept { return master_seed_; }

  RngStream& stream(Substream id) {
    switch (id) {
      case Substream::init: return init_;
      case Substream::shuffle: return shuffle_;
      case Substream::lang_pick: return lang_pick_;
      case Substream::surgery_p: return surgery_p_;
      case Substream::shot_sample: return shot_sample_;
      case Substream::synth_data: return synth_data_;
    }
    throw ContractError("unknown substream");
  }

  RngStream derive(Substream id, std::string_view key) const {
    return RngStream(detail::splitmix64(seed_for(id) ^ detail::fnv1a(key)));
  }

 private:
  std::uint64_t seed_for(Substream id) const noexcept {
    return detail::splitmix64(master_seed_ ^
                              detail::splitmix64(static_cast<std::uint64_t>(id) * 0x632BE59BD9B4E019ULL));
  }

  std::uint64_t master_seed_;
  RngStream init_;
  RngStream shuffle_;
  RngStream lang_pick_;
  RngStream surgery_p_;
  RngStream shot_sample_;
  RngStream synth_data_;
};

}  // namespace gradmix
