#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "frlfi/fxp.hpp"
#include "frlfi/gridworld.hpp"
#include "frlfi/rng.hpp"

namespace frlfi::policy {

using ActionValues = std::array<double, gridworld::kNumActions>;

/// Location of one dense layer inside the flat parameter vector. Weights are
/// stored row-major as [fan_out][fan_in], followed by fan_out biases.
struct LayerShape {
  int fan_in = 0;
  int fan_out = 0;
  std::size_t offset = 0;

  std::size_t weight_count() const { return static_cast<std::size_t>(fan_in) * static_cast<std::size_t>(fan_out); }
  std::size_t bias_offset() const { return offset + weight_count(); }
  std::size_t param_count() const { return weight_count() + static_cast<std::size_t>(fan_out); }
};

std::vector<LayerShape> make_layout(std::span<const int> layer_dims);
std::size_t param_count(std::span<const int> layer_dims);

/// Called once per layer on that layer's output (after ReLU for hidden layers).
/// May modify activations in place.
using ActivationHook = std::function<void(int layer, std::span<double> activations)>;

/// Plain dense forward pass over an explicit parameter vector.
ActionValues forward_params(std::span<const LayerShape> layout, std::span<const double> params,
                            const gridworld::Observation& obs, const ActivationHook* hook = nullptr);

/// Quantized MLP policy. Real-valued master weights are what the learner
/// updates; the integer codes are what lives in (faultable) memory and what
/// forward() reads. Master weights are always dequantize(codes) plus a
/// sub-LSB residual, so corrupting the codes corrupts the policy.
class MLPPolicy {
 public:
  static constexpr std::array<int, 3> kDefaultDims{4, 64, 4};

  /// All-zero policy.
  MLPPolicy(std::vector<int> layer_dims, fxp::QFormat fmt);
  MLPPolicy() : MLPPolicy({kDefaultDims.begin(), kDefaultDims.end()}, fxp::kQ1_2_5) {}

  /// He-uniform weights, zero biases.
  static MLPPolicy initialized(std::vector<int> layer_dims, fxp::QFormat fmt, Rng& rng);

  const std::vector<int>& layer_dims() const { return dims_; }
  const std::vector<LayerShape>& layout() const { return layout_; }
  fxp::QFormat format() const { return fmt_; }
  std::size_t param_count() const { return codes_.size(); }

  /// Evaluates the network from the stored codes.
  ActionValues forward(const gridworld::Observation& obs, const ActivationHook* hook = nullptr) const;
  /// Evaluates the network from the master weights.
  ActionValues forward_master(const gridworld::Observation& obs) const;

  /// Which weights a gradient is evaluated at.
  enum class GradientAt { Master, Stored };

  /// d Q(obs, action) / d master, written into grad (size param_count()).
  /// With GradientAt::Stored the network is evaluated at the dequantized codes
  /// and the result is passed straight through to the master weights.
  /// Returns Q(obs, action).
  double gradient(const gridworld::Observation& obs, int action, std::span<double> grad,
                  GradientAt at = GradientAt::Master) const;

  std::span<const fxp::Code> codes() const { return codes_; }
  std::span<const double> dequantized() const { return deq_; }
  std::span<const double> master() const { return master_; }

  /// Mutable master weights; call sync() once done.
  std::span<double> master_mut() { return master_; }

  /// codes = quantize(master); master is clipped to the representable range.
  void sync();

  /// Replaces the stored codes, carrying the sub-LSB residual over.
  void load_codes(std::span<const fxp::Code> codes);
  /// Replaces the stored codes with an explicit residual per parameter.
  void load_codes(std::span<const fxp::Code> codes, std::span<const double> residual);

  /// Edits the stored codes in place (fault injection on memory).
  template <class F>
  void mutate_codes(F&& edit) {
    std::vector<fxp::Code> c = codes_;
    edit(std::span<fxp::Code>(c));
    load_codes(c);
  }

  fxp::CodeTensor flatten_params() const;
  /// Throws std::invalid_argument on a length or format mismatch.
  void load_params(const fxp::CodeTensor& flat);

  friend bool operator==(const MLPPolicy& a, const MLPPolicy& b) {
    return a.dims_ == b.dims_ && a.fmt_ == b.fmt_ && a.codes_ == b.codes_ && a.master_ == b.master_;
  }

 private:
  void refresh_dequantized();

  std::vector<int> dims_;
  fxp::QFormat fmt_;
  std::vector<LayerShape> layout_;
  std::vector<fxp::Code> codes_;
  std::vector<double> deq_;
  std::vector<double> master_;
};

/// Epsilon-greedy action selection; epsilon = 0 is greedy.
struct ActionMode {
  double epsilon = 0.0;
  static ActionMode greedy() { return {0.0}; }
  static ActionMode epsilon_greedy(double eps) { return {eps}; }
};

/// Argmax with lowest-index tie break, or a uniform action with probability
/// epsilon. Throws std::domain_error if any value is NaN.
gridworld::Action select_action(const ActionValues& values, ActionMode mode, Rng& rng);
gridworld::Action greedy_action(const ActionValues& values);

/// Mean over all 81 observations of the population std of softmax(Q(s, .)).
double consensus_std(const MLPPolicy& policy);

/// Parameter file codec: magic "FRLFI\0", u16 version, QFormat (3 x u8),
/// u32 layer count + u32 dims, raw little-endian codes in flatten order.
inline constexpr std::array<char, 6> kParamMagic{'F', 'R', 'L', 'F', 'I', '\0'};
inline constexpr std::uint16_t kParamVersion = 1;

struct ParamBlob {
  fxp::QFormat fmt{};
  std::vector<int> layer_dims;
  std::vector<fxp::Code> codes;
};

std::vector<std::uint8_t> encode_params(const ParamBlob& blob);
/// Decodes from the front of bytes; `consumed` receives the number of bytes read.
/// Throws std::runtime_error on malformed input.
ParamBlob decode_params(std::span<const std::uint8_t> bytes, std::size_t* consumed = nullptr);

}  // namespace frlfi::policy
