#include "frlfi/fxp.hpp"

#include <charconv>
#include <cmath>
#include <stdexcept>

namespace frlfi::fxp {

double QFormat::lsb() const { return std::ldexp(1.0, -frac_bits); }
double QFormat::min_value() const { return -std::ldexp(1.0, int_bits); }
double QFormat::max_value() const { return std::ldexp(1.0, int_bits) - lsb(); }

void QFormat::validate() const {
  if (int_bits < 0 || frac_bits < 0) throw std::invalid_argument("QFormat: negative bit count");
  const int total = total_bits();
  if (total != 8 && total != 16 && total != 32) {
    throw std::invalid_argument("QFormat: total bits must be 8, 16 or 32, got " + std::to_string(total));
  }
}

std::string QFormat::to_string() const {
  return "Q(1," + std::to_string(int_bits) + "," + std::to_string(frac_bits) + ")";
}

namespace {

int parse_int(std::string_view& s) {
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{}) throw std::invalid_argument("QFormat: expected integer");
  s.remove_prefix(static_cast<std::size_t>(ptr - s.data()));
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  return v;
}

void expect(std::string_view& s, char c) {
  if (s.empty() || s.front() != c) throw std::invalid_argument(std::string("QFormat: expected '") + c + "'");
  s.remove_prefix(1);
}

}  // namespace

QFormat QFormat::parse(std::string_view text) {
  std::string_view s = text;
  expect(s, 'Q');
  expect(s, '(');
  if (parse_int(s) != 1) throw std::invalid_argument("QFormat: sign bits must be 1");
  expect(s, ',');
  const int i = parse_int(s);
  expect(s, ',');
  const int f = parse_int(s);
  expect(s, ')');
  if (!s.empty()) throw std::invalid_argument("QFormat: trailing characters in '" + std::string(text) + "'");
  QFormat fmt{i, f};
  fmt.validate();
  return fmt;
}

Code quantize(double x, QFormat fmt) {
  if (!std::isfinite(x)) throw std::domain_error("quantize: non-finite input");
  // nearbyint honours the default FE_TONEAREST mode, i.e. ties to even.
  const double scaled = std::nearbyint(std::ldexp(x, fmt.frac_bits));
  if (scaled <= static_cast<double>(fmt.min_code())) return fmt.min_code();
  if (scaled >= static_cast<double>(fmt.max_code())) return fmt.max_code();
  return static_cast<Code>(scaled);
}

bool in_range(Code code, QFormat fmt) { return code >= fmt.min_code() && code <= fmt.max_code(); }

double dequantize(Code code, QFormat fmt) {
  if (!in_range(code, fmt)) throw std::out_of_range("dequantize: code outside " + fmt.to_string());
  return std::ldexp(static_cast<double>(code), -fmt.frac_bits);
}

std::uint32_t to_bits(Code code, QFormat fmt) {
  const auto raw = static_cast<std::uint32_t>(code);
  const int n = fmt.total_bits();
  return n == 32 ? raw : raw & ((std::uint32_t{1} << n) - 1);
}

Code from_bits(std::uint32_t bits, QFormat fmt) {
  const int n = fmt.total_bits();
  if (n == 32) return static_cast<Code>(bits);
  const std::uint32_t sign = std::uint32_t{1} << (n - 1);
  bits &= (std::uint32_t{1} << n) - 1;
  return static_cast<Code>(static_cast<std::int64_t>(bits ^ sign) - static_cast<std::int64_t>(sign));
}

bool bit_set(Code code, int bit_index, QFormat fmt) {
  if (bit_index < 0 || bit_index >= fmt.total_bits()) throw std::out_of_range("bit index out of range");
  return (to_bits(code, fmt) >> bit_index) & 1U;
}

Code flip_bit(Code code, int bit_index, QFormat fmt) {
  if (bit_index < 0 || bit_index >= fmt.total_bits()) {
    throw std::out_of_range("flip_bit: bit " + std::to_string(bit_index) + " outside " + fmt.to_string());
  }
  return from_bits(to_bits(code, fmt) ^ (std::uint32_t{1} << bit_index), fmt);
}

CodeTensor quantize_all(std::span<const double> values, QFormat fmt, std::vector<std::size_t> shape) {
  CodeTensor t;
  t.fmt = fmt;
  t.codes.reserve(values.size());
  for (double v : values) t.codes.push_back(quantize(v, fmt));
  t.shape = shape.empty() ? std::vector<std::size_t>{values.size()} : std::move(shape);
  return t;
}

std::vector<double> dequantize_all(std::span<const Code> codes, QFormat fmt) {
  std::vector<double> out;
  out.reserve(codes.size());
  for (Code c : codes) out.push_back(dequantize(c, fmt));
  return out;
}

std::vector<double> bit_histogram(const CodeTensor& t) {
  if (t.empty()) throw std::invalid_argument("bit_histogram: empty tensor");
  const int n = t.fmt.total_bits();
  std::vector<std::size_t> ones(static_cast<std::size_t>(n), 0);
  for (Code c : t.codes) {
    const std::uint32_t bits = to_bits(c, t.fmt);
    for (int b = 0; b < n; ++b) ones[static_cast<std::size_t>(b)] += (bits >> b) & 1U;
  }
  std::vector<double> frac(ones.size());
  for (std::size_t b = 0; b < ones.size(); ++b) {
    frac[b] = static_cast<double>(ones[b]) / static_cast<double>(t.codes.size());
  }
  return frac;
}

double zero_bit_fraction(const CodeTensor& t) {
  const auto hist = bit_histogram(t);
  double ones = 0.0;
  for (double f : hist) ones += f;
  return 1.0 - ones / static_cast<double>(hist.size());
}

}  // namespace frlfi::fxp
