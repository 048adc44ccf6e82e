#include "frlfi/policy.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace frlfi::policy {

using gridworld::kNumActions;
using gridworld::Observation;

std::vector<LayerShape> make_layout(std::span<const int> layer_dims) {
  if (layer_dims.size() < 2) throw std::invalid_argument("policy needs at least an input and an output layer");
  if (layer_dims.front() != kNumActions || layer_dims.back() != kNumActions) {
    throw std::invalid_argument("policy input and output width must both be 4");
  }
  std::vector<LayerShape> layout;
  std::size_t offset = 0;
  for (std::size_t i = 0; i + 1 < layer_dims.size(); ++i) {
    if (layer_dims[i] <= 0 || layer_dims[i + 1] <= 0) throw std::invalid_argument("layer width must be positive");
    LayerShape l{layer_dims[i], layer_dims[i + 1], offset};
    offset += l.param_count();
    layout.push_back(l);
  }
  return layout;
}

std::size_t param_count(std::span<const int> layer_dims) {
  const auto layout = make_layout(layer_dims);
  return layout.back().offset + layout.back().param_count();
}

namespace {

std::size_t widest(std::span<const LayerShape> layout) {
  std::size_t w = kNumActions;
  for (const auto& l : layout) w = std::max<std::size_t>(w, static_cast<std::size_t>(l.fan_out));
  return w;
}

}  // namespace

ActionValues forward_params(std::span<const LayerShape> layout, std::span<const double> params,
                            const Observation& obs, const ActivationHook* hook) {
  thread_local std::vector<double> a;
  thread_local std::vector<double> b;
  const std::size_t w = widest(layout);
  a.assign(w, 0.0);
  b.assign(w, 0.0);
  for (std::size_t i = 0; i < obs.size(); ++i) a[i] = obs[i];

  const int last = static_cast<int>(layout.size()) - 1;
  for (int li = 0; li <= last; ++li) {
    const auto& l = layout[static_cast<std::size_t>(li)];
    const double* W = params.data() + l.offset;
    const double* bias = params.data() + l.bias_offset();
    for (int o = 0; o < l.fan_out; ++o) {
      double acc = bias[o];
      const double* row = W + static_cast<std::size_t>(o) * static_cast<std::size_t>(l.fan_in);
      for (int k = 0; k < l.fan_in; ++k) acc += row[k] * a[static_cast<std::size_t>(k)];
      if (li != last && acc < 0.0) acc = 0.0;
      b[static_cast<std::size_t>(o)] = acc;
    }
    if (hook != nullptr && *hook) (*hook)(li, std::span<double>(b.data(), static_cast<std::size_t>(l.fan_out)));
    std::swap(a, b);
  }
  ActionValues out{};
  std::copy_n(a.begin(), kNumActions, out.begin());
  return out;
}

MLPPolicy::MLPPolicy(std::vector<int> layer_dims, fxp::QFormat fmt)
    : dims_(std::move(layer_dims)), fmt_(fmt), layout_(make_layout(dims_)) {
  fmt_.validate();
  const std::size_t n = layout_.back().offset + layout_.back().param_count();
  codes_.assign(n, 0);
  deq_.assign(n, 0.0);
  master_.assign(n, 0.0);
}

MLPPolicy MLPPolicy::initialized(std::vector<int> layer_dims, fxp::QFormat fmt, Rng& rng) {
  MLPPolicy p(std::move(layer_dims), fmt);
  for (const auto& l : p.layout_) {
    const double limit = std::sqrt(6.0 / static_cast<double>(l.fan_in));
    for (std::size_t i = 0; i < l.weight_count(); ++i) {
      p.master_[l.offset + i] = (2.0 * rng.uniform() - 1.0) * limit;
    }
  }
  p.sync();
  return p;
}

ActionValues MLPPolicy::forward(const Observation& obs, const ActivationHook* hook) const {
  return forward_params(layout_, deq_, obs, hook);
}

ActionValues MLPPolicy::forward_master(const Observation& obs) const { return forward_params(layout_, master_, obs); }

double MLPPolicy::gradient(const Observation& obs, int action, std::span<double> grad, GradientAt at) const {
  if (grad.size() != master_.size()) throw std::invalid_argument("gradient buffer has wrong size");
  if (action < 0 || action >= kNumActions) throw std::invalid_argument("gradient: bad action");
  std::fill(grad.begin(), grad.end(), 0.0);
  const std::vector<double>& params = at == GradientAt::Stored ? deq_ : master_;

  // Forward, keeping every layer's input.
  thread_local std::vector<std::vector<double>> acts;
  acts.resize(layout_.size() + 1);
  acts[0].assign(obs.begin(), obs.end());
  const std::size_t last = layout_.size() - 1;
  for (std::size_t li = 0; li < layout_.size(); ++li) {
    const auto& l = layout_[li];
    auto& out = acts[li + 1];
    out.assign(static_cast<std::size_t>(l.fan_out), 0.0);
    const double* W = params.data() + l.offset;
    const double* bias = params.data() + l.bias_offset();
    for (int o = 0; o < l.fan_out; ++o) {
      double acc = bias[o];
      const double* row = W + static_cast<std::size_t>(o) * static_cast<std::size_t>(l.fan_in);
      for (int k = 0; k < l.fan_in; ++k) acc += row[k] * acts[li][static_cast<std::size_t>(k)];
      out[static_cast<std::size_t>(o)] = (li != last && acc < 0.0) ? 0.0 : acc;
    }
  }

  // Backward from the selected output unit.
  thread_local std::vector<double> delta;
  thread_local std::vector<double> prev;
  delta.assign(static_cast<std::size_t>(kNumActions), 0.0);
  delta[static_cast<std::size_t>(action)] = 1.0;
  for (std::size_t li = layout_.size(); li-- > 0;) {
    const auto& l = layout_[li];
    const auto& in = acts[li];
    double* gW = grad.data() + l.offset;
    double* gb = grad.data() + l.bias_offset();
    const double* W = params.data() + l.offset;
    prev.assign(static_cast<std::size_t>(l.fan_in), 0.0);
    for (int o = 0; o < l.fan_out; ++o) {
      const double d = delta[static_cast<std::size_t>(o)];
      if (d == 0.0) continue;
      gb[o] += d;
      const std::size_t row = static_cast<std::size_t>(o) * static_cast<std::size_t>(l.fan_in);
      for (int k = 0; k < l.fan_in; ++k) {
        gW[row + static_cast<std::size_t>(k)] += d * in[static_cast<std::size_t>(k)];
        prev[static_cast<std::size_t>(k)] += d * W[row + static_cast<std::size_t>(k)];
      }
    }
    if (li > 0) {
      // ReLU derivative of the previous hidden layer (output 0 means inactive).
      for (std::size_t k = 0; k < prev.size(); ++k) {
        if (in[k] <= 0.0) prev[k] = 0.0;
      }
    }
    std::swap(delta, prev);
  }
  return acts.back()[static_cast<std::size_t>(action)];
}

void MLPPolicy::sync() {
  const double lo = fmt_.min_value() - 0.5 * fmt_.lsb();
  const double hi = fmt_.max_value() + 0.5 * fmt_.lsb();
  for (std::size_t i = 0; i < master_.size(); ++i) {
    master_[i] = std::clamp(master_[i], lo, hi);
    codes_[i] = fxp::quantize(master_[i], fmt_);
  }
  refresh_dequantized();
}

void MLPPolicy::load_codes(std::span<const fxp::Code> codes) {
  if (codes.size() != codes_.size()) {
    throw std::invalid_argument("load_params: expected " + std::to_string(codes_.size()) + " codes, got " +
                                std::to_string(codes.size()));
  }
  const double half = 0.4999 * fmt_.lsb();
  for (std::size_t i = 0; i < codes.size(); ++i) {
    if (!fxp::in_range(codes[i], fmt_)) throw std::invalid_argument("load_params: code out of range");
    const double residual = std::clamp(master_[i] - deq_[i], -half, half);
    codes_[i] = codes[i];
    deq_[i] = fxp::dequantize(codes[i], fmt_);
    master_[i] = deq_[i] + residual;
  }
}

void MLPPolicy::load_codes(std::span<const fxp::Code> codes, std::span<const double> residual) {
  if (residual.size() != codes.size()) throw std::invalid_argument("load_codes: residual length mismatch");
  load_codes(codes);
  const double half = 0.4999 * fmt_.lsb();
  for (std::size_t i = 0; i < codes.size(); ++i) master_[i] = deq_[i] + std::clamp(residual[i], -half, half);
}

void MLPPolicy::refresh_dequantized() {
  for (std::size_t i = 0; i < codes_.size(); ++i) deq_[i] = fxp::dequantize(codes_[i], fmt_);
}

fxp::CodeTensor MLPPolicy::flatten_params() const {
  return fxp::CodeTensor{codes_, fmt_, {codes_.size()}};
}

void MLPPolicy::load_params(const fxp::CodeTensor& flat) {
  if (flat.fmt != fmt_) throw std::invalid_argument("load_params: format mismatch");
  load_codes(flat.codes);
}

gridworld::Action greedy_action(const ActionValues& values) {
  std::size_t best = 0;
  for (std::size_t a = 0; a < values.size(); ++a) {
    if (std::isnan(values[a])) throw std::domain_error("action values contain NaN");
    if (values[a] > values[best]) best = a;
  }
  return static_cast<gridworld::Action>(best);
}

gridworld::Action select_action(const ActionValues& values, ActionMode mode, Rng& rng) {
  const auto greedy = greedy_action(values);
  if (mode.epsilon > 0.0 && rng.uniform() < mode.epsilon) {
    return static_cast<gridworld::Action>(rng.uniform_int(kNumActions));
  }
  return greedy;
}

double consensus_std(const MLPPolicy& policy) {
  double total = 0.0;
  for (int i = 0; i < gridworld::kNumObservations; ++i) {
    const auto q = policy.forward(gridworld::observation_from_index(i));
    const double m = *std::max_element(q.begin(), q.end());
    std::array<double, kNumActions> p{};
    double z = 0.0;
    for (std::size_t a = 0; a < p.size(); ++a) z += (p[a] = std::exp(q[a] - m));
    double mean = 0.0;
    for (auto& v : p) mean += (v /= z);
    mean /= static_cast<double>(p.size());
    double var = 0.0;
    for (double v : p) var += (v - mean) * (v - mean);
    total += std::sqrt(var / static_cast<double>(p.size()));
  }
  return total / gridworld::kNumObservations;
}

namespace {

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : bytes_(b) {}
  std::uint32_t get(int width) {
    if (pos_ + static_cast<std::size_t>(width) > bytes_.size()) throw std::runtime_error("parameter blob truncated");
    std::uint32_t v = 0;
    for (int i = 0; i < width; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  std::size_t pos() const { return pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_params(const ParamBlob& blob) {
  blob.fmt.validate();
  std::vector<std::uint8_t> out(kParamMagic.begin(), kParamMagic.end());
  put_u16(out, kParamVersion);
  out.push_back(1);
  out.push_back(static_cast<std::uint8_t>(blob.fmt.int_bits));
  out.push_back(static_cast<std::uint8_t>(blob.fmt.frac_bits));
  put_u32(out, static_cast<std::uint32_t>(blob.layer_dims.size()));
  for (int d : blob.layer_dims) put_u32(out, static_cast<std::uint32_t>(d));
  const int width = blob.fmt.total_bits() / 8;
  for (fxp::Code c : blob.codes) {
    const std::uint32_t bits = fxp::to_bits(c, blob.fmt);
    for (int i = 0; i < width; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  }
  return out;
}

ParamBlob decode_params(std::span<const std::uint8_t> bytes, std::size_t* consumed) {
  Reader r(bytes);
  for (char m : kParamMagic) {
    if (static_cast<char>(r.get(1)) != m) throw std::runtime_error("parameter blob: bad magic");
  }
  if (r.get(2) != kParamVersion) throw std::runtime_error("parameter blob: unsupported version");
  ParamBlob blob;
  if (r.get(1) != 1) throw std::runtime_error("parameter blob: sign bits must be 1");
  blob.fmt.int_bits = static_cast<int>(r.get(1));
  blob.fmt.frac_bits = static_cast<int>(r.get(1));
  blob.fmt.validate();
  const std::uint32_t layers = r.get(4);
  if (layers < 2 || layers > 64) throw std::runtime_error("parameter blob: implausible layer count");
  for (std::uint32_t i = 0; i < layers; ++i) blob.layer_dims.push_back(static_cast<int>(r.get(4)));
  const std::size_t n = param_count(blob.layer_dims);
  const int width = blob.fmt.total_bits() / 8;
  blob.codes.reserve(n);
  for (std::size_t i = 0; i < n; ++i) blob.codes.push_back(fxp::from_bits(r.get(width), blob.fmt));
  if (consumed != nullptr) *consumed = r.pos();
  return blob;
}

}  // namespace frlfi::policy
