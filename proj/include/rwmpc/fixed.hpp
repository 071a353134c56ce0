// SPDX-License-Identifier: Apache-2.0
//
// Bit-exact emulation of two's-complement fixed-point arithmetic with
// configurable rounding/overflow behavior, plus the tree-reduction
// matrix-vector kernel used by the FWL solver backend.
//
// All operations are pure integer arithmetic on a signed 128-bit raw
// carrier, so results are deterministic and platform-independent.

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace rwmpc {

using Int128 = __int128;

enum class Rounding { HalfUp, Truncate };
enum class Overflow { Saturate, Wrap };

std::string to_string(Rounding r);
std::string to_string(Overflow o);
Rounding rounding_from_string(const std::string& s);
Overflow overflow_from_string(const std::string& s);

// A fixed-point number format. `int_bits` counts the sign bit and may be
// zero or negative (the value range then shrinks below 1). The stored
// value is raw * 2^(int_bits - width), i.e. there are width - int_bits
// fractional bits.
struct FixedFormat {
  int width = 27;
  int int_bits = 2;
  Rounding rounding = Rounding::HalfUp;
  Overflow overflow = Overflow::Saturate;

  int frac_bits() const { return width - int_bits; }

  // Smallest/largest storable raw pattern: [-2^(width-1), 2^(width-1) - 1].
  Int128 raw_min() const { return -(Int128(1) << (width - 1)); }
  Int128 raw_max() const { return (Int128(1) << (width - 1)) - 1; }

  double ulp() const;        // 2^(int_bits - width)
  double min_value() const;  // raw_min * ulp
  double max_value() const;  // raw_max * ulp

  void validate() const;  // throws std::invalid_argument

  bool operator==(const FixedFormat& o) const {
    return width == o.width && int_bits == o.int_bits &&
           rounding == o.rounding && overflow == o.overflow;
  }
  bool operator!=(const FixedFormat& o) const { return !(*this == o); }
};

// Counters for quantization events; threaded through the solver so FWL
// overflow shows up as data, never as silent corruption.
struct QuantStats {
  long long saturations = 0;
  void merge(const QuantStats& o) { saturations += o.saturations; }
};

struct FixedValue {
  Int128 raw = 0;
  FixedFormat format;

  double to_double() const;
  static FixedValue from_raw(Int128 raw, const FixedFormat& f);
};

// Round a real to the nearest representable value of f under f's rounding
// rule; out-of-range inputs clamp (saturate) or wrap per f.overflow.
// Non-finite input throws std::domain_error.
FixedValue quantize(double x, const FixedFormat& f, QuantStats* stats = nullptr);

// Exact integer-level add/subtract/multiply followed by a single
// quantization into `out` (one rounding, one saturation), matching
// hardware widen-then-convert behavior.
FixedValue fx_add(const FixedValue& a, const FixedValue& b, const FixedFormat& out,
                  QuantStats* stats = nullptr);
FixedValue fx_sub(const FixedValue& a, const FixedValue& b, const FixedFormat& out,
                  QuantStats* stats = nullptr);
FixedValue fx_mul(const FixedValue& a, const FixedValue& b, const FixedFormat& out,
                  QuantStats* stats = nullptr);

// Re-represent a raw value carrying frac_from fractional bits in format
// `to`. This is the single rounding/saturation primitive behind all ops.
Int128 requantize_raw(Int128 raw, int frac_from, const FixedFormat& to,
                      QuantStats* stats = nullptr);

struct FixedVector {
  FixedFormat format;
  std::vector<Int128> raw;

  FixedVector() = default;
  FixedVector(std::size_t n, const FixedFormat& f) : format(f), raw(n, 0) {}

  std::size_t size() const { return raw.size(); }
  double value(std::size_t i) const;
  std::vector<double> to_doubles() const;
  static FixedVector quantized(const std::vector<double>& x, const FixedFormat& f,
                               QuantStats* stats = nullptr);
};

struct FixedMatrix {
  FixedFormat format;
  std::size_t rows = 0, cols = 0;
  std::vector<Int128> raw;  // row-major

  FixedMatrix() = default;
  FixedMatrix(std::size_t r, std::size_t c, const FixedFormat& f)
      : format(f), rows(r), cols(c), raw(r * c, 0) {}

  Int128& at(std::size_t i, std::size_t j) { return raw[i * cols + j]; }
  Int128 at(std::size_t i, std::size_t j) const { return raw[i * cols + j]; }
  double value(std::size_t i, std::size_t j) const;
  static FixedMatrix quantized(const std::vector<double>& row_major, std::size_t r,
                               std::size_t c, const FixedFormat& f,
                               QuantStats* stats = nullptr);
};

// Per-stage formats of the binary summation tree. `stages` holds the
// formats of the intermediate levels; the final addition quantizes
// directly into `result`. For an n-column matvec there are
// ceil(log2(n)) summation levels in total.
struct TreeSchedule {
  FixedFormat product;
  std::vector<FixedFormat> stages;
  FixedFormat result;

  // Mirrors the FPGA schedule: products capped at product_width bits with
  // int_bits(H) + int_bits(v) integer bits, each summation stage widening
  // by one integer bit (stage widths carry headroom so stage sums are
  // exact), final stage re-quantized to the result format.
  static TreeSchedule standard(const FixedFormat& h_fmt, const FixedFormat& v_fmt,
                               std::size_t n, const FixedFormat& result_fmt,
                               int product_width = 35);

  void validate(std::size_t n) const;
};

inline std::size_t tree_levels(std::size_t n) {
  std::size_t levels = 0;
  while (n > 1) {
    n = (n + 1) / 2;
    ++levels;
  }
  return levels;
}

// Per output row: elementwise products, then pairwise binary-tree
// summation in a fixed order (odd leftover carried to the next stage at
// the tail position). Bit-exact and platform-independent.
FixedVector tree_matvec(const FixedMatrix& H, const FixedVector& v,
                        const TreeSchedule& schedule, QuantStats* stats = nullptr);

// Decimal string of a raw pattern (raw values serialize as decimal
// integers with their format attached).
std::string int128_to_string(Int128 v);
Int128 int128_from_string(const std::string& s);

}  // namespace rwmpc
