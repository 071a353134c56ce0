// SPDX-License-Identifier: Apache-2.0

#include "rwmpc/fixed.hpp"

#include <cmath>

namespace rwmpc {

namespace {

// Largest magnitude that is guaranteed to fit the 128-bit carrier after
// conversion from double.
const double kInt128Limit = std::ldexp(1.0, 126);

Int128 clamp_or_wrap(Int128 raw, const FixedFormat& f, QuantStats* stats) {
  const Int128 lo = f.raw_min();
  const Int128 hi = f.raw_max();
  if (raw >= lo && raw <= hi) return raw;
  if (f.overflow == Overflow::Saturate) {
    if (stats) ++stats->saturations;
    return raw < lo ? lo : hi;
  }
  // Wrap: keep the low `width` bits, sign-extended.
  const unsigned __int128 mask = (((unsigned __int128)1) << f.width) - 1;
  unsigned __int128 u = ((unsigned __int128)raw) & mask;
  if (u >> (f.width - 1)) u |= ~mask;  // sign extend
  return (Int128)u;
}

}  // namespace

std::string to_string(Rounding r) {
  return r == Rounding::HalfUp ? "round-half-up" : "truncate";
}
std::string to_string(Overflow o) {
  return o == Overflow::Saturate ? "saturate" : "wrap";
}
Rounding rounding_from_string(const std::string& s) {
  if (s == "round-half-up") return Rounding::HalfUp;
  if (s == "truncate") return Rounding::Truncate;
  throw std::invalid_argument("unknown rounding mode: " + s);
}
Overflow overflow_from_string(const std::string& s) {
  if (s == "saturate") return Overflow::Saturate;
  if (s == "wrap") return Overflow::Wrap;
  throw std::invalid_argument("unknown overflow mode: " + s);
}

void FixedFormat::validate() const {
  if (width < 2) throw std::invalid_argument("fixed format: width must be >= 2");
  if (width > 127)
    throw std::invalid_argument("fixed format: width exceeds the 128-bit raw carrier");
  if (int_bits > width)
    throw std::invalid_argument("fixed format: int_bits must not exceed width");
}

double FixedFormat::ulp() const { return std::ldexp(1.0, int_bits - width); }
double FixedFormat::min_value() const { return -std::ldexp(1.0, int_bits - 1); }
double FixedFormat::max_value() const {
  return std::ldexp(1.0, int_bits - 1) - ulp();
}

double FixedValue::to_double() const {
  return std::ldexp(static_cast<double>(raw), format.int_bits - format.width);
}

FixedValue FixedValue::from_raw(Int128 raw, const FixedFormat& f) {
  f.validate();
  if (raw < f.raw_min() || raw > f.raw_max())
    throw std::out_of_range("fixed value: raw pattern does not fit the format width");
  return FixedValue{raw, f};
}

FixedValue quantize(double x, const FixedFormat& f, QuantStats* stats) {
  f.validate();
  if (!std::isfinite(x)) throw std::domain_error("quantize: non-finite input");
  const double scaled = std::ldexp(x, f.frac_bits());
  Int128 raw;
  if (scaled >= kInt128Limit || scaled <= -kInt128Limit) {
    // Far outside any representable format; the clamp below resolves it.
    raw = scaled > 0 ? (Int128(1) << 126) : -(Int128(1) << 126);
  } else {
    const double fl = std::floor(scaled);
    raw = static_cast<Int128>(fl);
    if (f.rounding == Rounding::HalfUp) {
      // scaled - fl is exact: either |scaled| < 2^53 or scaled is integral.
      if (scaled - fl >= 0.5) raw += 1;
    }
  }
  return FixedValue{clamp_or_wrap(raw, f, stats), f};
}

Int128 requantize_raw(Int128 raw, int frac_from, const FixedFormat& to,
                      QuantStats* stats) {
  const int shift = frac_from - to.frac_bits();
  if (shift <= 0) {
    const int up = -shift;
    // Saturate early if the left shift cannot fit the carrier.
    if (up > 0) {
      const Int128 hi_safe = Int128(1) << (126 - (up > 126 ? 126 : up));
      if (up > 126 || raw >= hi_safe || raw <= -hi_safe) {
        if (raw != 0) {
          if (stats) ++stats->saturations;
          return raw > 0 ? to.raw_max() : to.raw_min();
        }
        return 0;
      }
    }
    return clamp_or_wrap(raw << up, to, stats);
  }
  Int128 r;
  if (to.rounding == Rounding::HalfUp) {
    // floor(raw / 2^shift + 1/2), computed in two steps so the +half
    // cannot overflow the carrier.
    r = (raw >> (shift - 1));
    r = (r + 1) >> 1;
  } else {
    r = raw >> shift;  // arithmetic shift == floor
  }
  return clamp_or_wrap(r, to, stats);
}

FixedValue fx_add(const FixedValue& a, const FixedValue& b, const FixedFormat& out,
                  QuantStats* stats) {
  out.validate();
  const int fa = a.format.frac_bits();
  const int fb = b.format.frac_bits();
  const int fc = fa > fb ? fa : fb;
  if (a.format.width + (fc - fa) > 126 || b.format.width + (fc - fb) > 126)
    throw std::invalid_argument("fx_add: aligned operands exceed the 128-bit carrier");
  const Int128 sum = (a.raw << (fc - fa)) + (b.raw << (fc - fb));
  return FixedValue{requantize_raw(sum, fc, out, stats), out};
}

FixedValue fx_sub(const FixedValue& a, const FixedValue& b, const FixedFormat& out,
                  QuantStats* stats) {
  const int fa = a.format.frac_bits();
  const int fb = b.format.frac_bits();
  const int fc = fa > fb ? fa : fb;
  if (a.format.width + (fc - fa) > 126 || b.format.width + (fc - fb) > 126)
    throw std::invalid_argument("fx_sub: aligned operands exceed the 128-bit carrier");
  const Int128 diff = (a.raw << (fc - fa)) - (b.raw << (fc - fb));
  return FixedValue{requantize_raw(diff, fc, out, stats), out};
}

FixedValue fx_mul(const FixedValue& a, const FixedValue& b, const FixedFormat& out,
                  QuantStats* stats) {
  out.validate();
  if (a.format.width + b.format.width > 127)
    throw std::invalid_argument("fx_mul: product exceeds the 128-bit carrier");
  const Int128 prod = a.raw * b.raw;
  return FixedValue{
      requantize_raw(prod, a.format.frac_bits() + b.format.frac_bits(), out, stats),
      out};
}

double FixedVector::value(std::size_t i) const {
  return std::ldexp(static_cast<double>(raw[i]), format.int_bits - format.width);
}

std::vector<double> FixedVector::to_doubles() const {
  std::vector<double> out(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) out[i] = value(i);
  return out;
}

FixedVector FixedVector::quantized(const std::vector<double>& x, const FixedFormat& f,
                                   QuantStats* stats) {
  FixedVector v(x.size(), f);
  for (std::size_t i = 0; i < x.size(); ++i) v.raw[i] = quantize(x[i], f, stats).raw;
  return v;
}

double FixedMatrix::value(std::size_t i, std::size_t j) const {
  return std::ldexp(static_cast<double>(at(i, j)), format.int_bits - format.width);
}

FixedMatrix FixedMatrix::quantized(const std::vector<double>& row_major, std::size_t r,
                                   std::size_t c, const FixedFormat& f,
                                   QuantStats* stats) {
  if (row_major.size() != r * c)
    throw std::invalid_argument("fixed matrix: element count mismatch");
  FixedMatrix m(r, c, f);
  for (std::size_t k = 0; k < row_major.size(); ++k)
    m.raw[k] = quantize(row_major[k], f, stats).raw;
  return m;
}

TreeSchedule TreeSchedule::standard(const FixedFormat& h_fmt, const FixedFormat& v_fmt,
                                    std::size_t n, const FixedFormat& result_fmt,
                                    int product_width) {
  TreeSchedule s;
  const int full_width = h_fmt.width + v_fmt.width;
  s.product = FixedFormat{product_width < full_width ? product_width : full_width,
                          h_fmt.int_bits + v_fmt.int_bits, result_fmt.rounding,
                          result_fmt.overflow};
  const std::size_t levels = tree_levels(n);
  const std::size_t intermediate = levels == 0 ? 0 : levels - 1;
  for (std::size_t k = 1; k <= intermediate; ++k) {
    s.stages.push_back(FixedFormat{s.product.width + 7 + static_cast<int>(k),
                                   s.product.int_bits + static_cast<int>(k),
                                   result_fmt.rounding, result_fmt.overflow});
  }
  s.result = result_fmt;
  s.validate(n);
  return s;
}

void TreeSchedule::validate(std::size_t n) const {
  product.validate();
  result.validate();
  for (const auto& f : stages) f.validate();
  const std::size_t levels = tree_levels(n);
  const std::size_t needed = levels == 0 ? 0 : levels - 1;
  if (stages.size() != needed)
    throw std::invalid_argument("tree schedule: expected " + std::to_string(needed) +
                                " intermediate stage formats, got " +
                                std::to_string(stages.size()));
}

FixedVector tree_matvec(const FixedMatrix& H, const FixedVector& v,
                        const TreeSchedule& schedule, QuantStats* stats) {
  if (H.cols != v.size())
    throw std::invalid_argument("tree_matvec: dimension mismatch");
  if (H.cols == 0) throw std::invalid_argument("tree_matvec: empty operands");
  schedule.validate(H.cols);

  const std::size_t n = H.cols;
  FixedVector out(H.rows, schedule.result);

  std::vector<Int128> cur(n), next((n + 1) / 2);
  for (std::size_t i = 0; i < H.rows; ++i) {
    // Elementwise products, quantized into the product format.
    const int frac_full = H.format.frac_bits() + v.format.frac_bits();
    for (std::size_t j = 0; j < n; ++j) {
      const Int128 p = H.at(i, j) * v.raw[j];
      cur[j] = requantize_raw(p, frac_full, schedule.product, stats);
    }
    if (n == 1) {
      out.raw[i] =
          requantize_raw(cur[0], schedule.product.frac_bits(), schedule.result, stats);
      continue;
    }
    // Pairwise summation; the odd leftover rides along at the tail.
    std::size_t m = n;
    FixedFormat in_fmt = schedule.product;
    std::size_t level = 0;
    while (m > 1) {
      const std::size_t half = (m + 1) / 2;
      const bool last = (half == 1);
      const FixedFormat& out_fmt = last ? schedule.result : schedule.stages[level];
      const int frac_in = in_fmt.frac_bits();
      for (std::size_t j = 0; j + half < m; ++j) {
        // Operands share frac_in, so the exact sum carries frac_in too.
        next[j] = requantize_raw(cur[j] + cur[j + half], frac_in, out_fmt, stats);
      }
      if (m % 2 == 1)
        next[half - 1] = requantize_raw(cur[m - 1], frac_in, out_fmt, stats);
      m = half;
      in_fmt = out_fmt;
      ++level;
      std::swap(cur, next);
    }
    out.raw[i] = cur[0];
  }
  return out;
}

std::string int128_to_string(Int128 v) {
  if (v == 0) return "0";
  const bool neg = v < 0;
  unsigned __int128 u = neg ? (unsigned __int128)(-(v + 1)) + 1 : (unsigned __int128)v;
  std::string s;
  while (u > 0) {
    s.insert(s.begin(), static_cast<char>('0' + (int)(u % 10)));
    u /= 10;
  }
  return neg ? "-" + s : s;
}

Int128 int128_from_string(const std::string& s) {
  if (s.empty()) throw std::invalid_argument("int128_from_string: empty string");
  std::size_t i = 0;
  bool neg = false;
  if (s[0] == '-' || s[0] == '+') {
    neg = s[0] == '-';
    i = 1;
  }
  if (i == s.size()) throw std::invalid_argument("int128_from_string: no digits");
  Int128 v = 0;
  for (; i < s.size(); ++i) {
    if (s[i] < '0' || s[i] > '9')
      throw std::invalid_argument("int128_from_string: invalid digit");
    v = v * 10 + (s[i] - '0');
  }
  return neg ? -v : v;
}

}  // namespace rwmpc
