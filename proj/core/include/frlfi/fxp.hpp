#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace frlfi::fxp {

using Code = std::int32_t;

/// Two's-complement fixed-point format Q(1, int_bits, frac_bits).
struct QFormat {
  int int_bits = 2;
  int frac_bits = 5;

  constexpr int sign_bits() const { return 1; }
  constexpr int total_bits() const { return 1 + int_bits + frac_bits; }
  constexpr Code min_code() const { return static_cast<Code>(-(std::int64_t{1} << (total_bits() - 1))); }
  constexpr Code max_code() const { return static_cast<Code>((std::int64_t{1} << (total_bits() - 1)) - 1); }
  double lsb() const;
  double min_value() const;
  double max_value() const;

  /// Throws std::invalid_argument unless total_bits is 8, 16 or 32.
  void validate() const;

  /// "Q(1,i,f)"
  std::string to_string() const;
  static QFormat parse(std::string_view text);

  friend bool operator==(const QFormat&, const QFormat&) = default;
};

inline constexpr QFormat kQ1_2_5{2, 5};
inline constexpr QFormat kQ1_4_11{4, 11};
inline constexpr QFormat kQ1_7_8{7, 8};
inline constexpr QFormat kQ1_10_5{10, 5};

/// Round-to-nearest-even of x * 2^frac_bits, saturated to the format range.
/// Throws std::domain_error for non-finite x.
Code quantize(double x, QFormat fmt);

/// code * 2^-frac_bits. Throws std::out_of_range if code does not fit.
double dequantize(Code code, QFormat fmt);

bool in_range(Code code, QFormat fmt);

/// Raw bit pattern of the code in the low total_bits bits.
std::uint32_t to_bits(Code code, QFormat fmt);
/// Sign-extends a total_bits-wide pattern back into a code.
Code from_bits(std::uint32_t bits, QFormat fmt);

bool bit_set(Code code, int bit_index, QFormat fmt);

/// Inverts exactly one bit. Throws std::out_of_range for a bad bit index.
Code flip_bit(Code code, int bit_index, QFormat fmt);

struct CodeTensor {
  std::vector<Code> codes;
  QFormat fmt{};
  std::vector<std::size_t> shape;

  std::size_t size() const { return codes.size(); }
  bool empty() const { return codes.empty(); }
};

CodeTensor quantize_all(std::span<const double> values, QFormat fmt, std::vector<std::size_t> shape = {});
std::vector<double> dequantize_all(std::span<const Code> codes, QFormat fmt);

/// Fraction of 1-bits at each bit position (index 0 = LSB).
/// Throws std::invalid_argument for an empty tensor.
std::vector<double> bit_histogram(const CodeTensor& t);

/// Overall fraction of 0-bits across the tensor.
double zero_bit_fraction(const CodeTensor& t);

}  // namespace frlfi::fxp
