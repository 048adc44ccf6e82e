#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <stdexcept>

#include "frlfi/fxp.hpp"

using namespace frlfi::fxp;

namespace {

std::vector<QFormat> eight_bit_formats() {
  std::vector<QFormat> out;
  for (int i = 0; i <= 7; ++i) out.push_back(QFormat{i, 7 - i});
  return out;
}

}  // namespace

TEST(Quantize, Examples) {
  EXPECT_EQ(quantize(0.0, kQ1_4_11), 0);
  EXPECT_EQ(quantize(1.0, kQ1_4_11), 2048);
  EXPECT_EQ(quantize(100.0, kQ1_4_11), 32767);
  EXPECT_EQ(quantize(-100.0, kQ1_4_11), -32768);
  EXPECT_NEAR(dequantize(32767, kQ1_4_11), 15.9995, 1e-4);
}

TEST(Quantize, TiesToEven) {
  const double lsb = kQ1_4_11.lsb();
  EXPECT_EQ(quantize(0.5 * lsb, kQ1_4_11), 0);
  EXPECT_EQ(quantize(1.5 * lsb, kQ1_4_11), 2);
  EXPECT_EQ(quantize(2.5 * lsb, kQ1_4_11), 2);
  EXPECT_EQ(quantize(-0.5 * lsb, kQ1_4_11), 0);
  EXPECT_EQ(quantize(-1.5 * lsb, kQ1_4_11), -2);
}

TEST(Quantize, NonFiniteThrows) {
  EXPECT_THROW(quantize(std::numeric_limits<double>::quiet_NaN(), kQ1_2_5), std::domain_error);
  EXPECT_THROW(quantize(std::numeric_limits<double>::infinity(), kQ1_2_5), std::domain_error);
}

TEST(Dequantize, Examples) {
  EXPECT_EQ(dequantize(0, kQ1_2_5), 0.0);
  EXPECT_EQ(dequantize(2048, kQ1_4_11), 1.0);
  EXPECT_EQ(dequantize(-32768, kQ1_4_11), -16.0);
  EXPECT_THROW(dequantize(32768, kQ1_4_11), std::out_of_range);
  EXPECT_THROW(dequantize(128, kQ1_2_5), std::out_of_range);
}

TEST(Format, ParseAndValidate) {
  EXPECT_EQ(QFormat::parse("Q(1,2,5)"), kQ1_2_5);
  EXPECT_EQ(QFormat::parse("Q(1,10,5)"), kQ1_10_5);
  EXPECT_EQ(kQ1_7_8.to_string(), "Q(1,7,8)");
  EXPECT_THROW(QFormat::parse("Q(1,2,4)"), std::invalid_argument);
  EXPECT_THROW(QFormat::parse("bogus"), std::invalid_argument);
  EXPECT_DOUBLE_EQ(kQ1_2_5.lsb(), 1.0 / 32);
  EXPECT_DOUBLE_EQ(kQ1_2_5.min_value(), -4.0);
  EXPECT_DOUBLE_EQ(kQ1_2_5.max_value(), 4.0 - 1.0 / 32);
}

TEST(FlipBit, Examples) {
  EXPECT_EQ(flip_bit(0, 11, kQ1_4_11), 2048);
  EXPECT_EQ(dequantize(flip_bit(0, 11, kQ1_4_11), kQ1_4_11), 1.0);
  EXPECT_EQ(dequantize(flip_bit(0, 15, kQ1_4_11), kQ1_4_11), -16.0);
  EXPECT_THROW(flip_bit(0, 16, kQ1_4_11), std::out_of_range);
  EXPECT_THROW(flip_bit(0, -1, kQ1_4_11), std::out_of_range);
}

TEST(FlipBit, ExhaustiveEightBitDeltas) {
  for (const auto f : eight_bit_formats()) {
    for (Code c = f.min_code(); c <= f.max_code(); ++c) {
      for (int b = 0; b < 8; ++b) {
        const Code flipped = flip_bit(c, b, f);
        ASSERT_TRUE(in_range(flipped, f));
        ASSERT_EQ(flip_bit(flipped, b, f), c);
        const double delta = dequantize(flipped, f) - dequantize(c, f);
        const bool was_set = bit_set(c, b, f);
        double magnitude = b == 7 ? std::ldexp(1.0, f.int_bits) : std::ldexp(1.0, b - f.frac_bits);
        // Setting the sign bit subtracts its weight, setting any other bit adds.
        const double expected = (b == 7) == was_set ? magnitude : -magnitude;
        ASSERT_EQ(delta, expected) << f.to_string() << " code " << c << " bit " << b;
      }
    }
  }
}

TEST(FlipBit, SixteenBitSpotChecks) {
  for (Code c : {-32768, -1, 0, 1, 12345, 32767}) {
    for (int b = 0; b < 16; ++b) EXPECT_EQ(flip_bit(flip_bit(c, b, kQ1_7_8), b, kQ1_7_8), c);
  }
}

TEST(RoundTrip, QuantizeOfDequantizeIsIdentity) {
  for (const auto f : eight_bit_formats()) {
    for (Code c = f.min_code(); c <= f.max_code(); ++c) EXPECT_EQ(quantize(dequantize(c, f), f), c);
  }
}

TEST(RoundTrip, MonotoneAndWithinHalfLsb) {
  const auto f = kQ1_2_5;
  Code prev = f.min_code();
  for (double x = -5.0; x <= 5.0; x += 0.001) {
    const Code c = quantize(x, f);
    EXPECT_GE(c, prev);
    prev = c;
    if (x >= f.min_value() && x <= f.max_value()) {
      EXPECT_LE(std::abs(dequantize(c, f) - x), f.lsb() / 2 + 1e-12);
    }
  }
}

TEST(Bits, ToFromBits) {
  EXPECT_EQ(to_bits(-1, kQ1_2_5), 0xFFu);
  EXPECT_EQ(from_bits(0x80u, kQ1_2_5), -128);
  EXPECT_EQ(from_bits(to_bits(-12345, kQ1_4_11), kQ1_4_11), -12345);
}

TEST(BitHistogram, Examples) {
  const auto zeros = quantize_all(std::vector<double>(10, 0.0), kQ1_2_5);
  for (double v : bit_histogram(zeros)) EXPECT_EQ(v, 0.0);
  CodeTensor ones{{-1, -1, -1}, kQ1_2_5, {}};
  for (double v : bit_histogram(ones)) EXPECT_EQ(v, 1.0);
  CodeTensor mixed{{0, -1}, kQ1_4_11, {}};
  const auto h = bit_histogram(mixed);
  ASSERT_EQ(h.size(), 16u);
  for (double v : h) EXPECT_EQ(v, 0.5);
  EXPECT_EQ(zero_bit_fraction(mixed), 0.5);
  EXPECT_THROW(bit_histogram(CodeTensor{{}, kQ1_2_5, {}}), std::invalid_argument);
}
