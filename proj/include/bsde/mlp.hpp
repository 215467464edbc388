#pragma once

// Per-time-step feedforward controls: input -> [affine, relu] x2 -> affine.

#include "bsde/autodiff.hpp"
#include "bsde/common.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace bsde {

struct DenseLayer {
  Matrix weights;  // out x in
  Vector bias;     // out
};

/// Network parameters plus a fixed (non-trainable) input standardization
/// (x - input_shift) / input_scale and output multiplier. The defaults make
/// the map the plain affine/relu composition.
struct MlpParams {
  std::vector<DenseLayer> layers;
  Vector input_shift;
  Vector input_scale;
  double output_scale = 1.0;

  int input_dim() const { return static_cast<int>(layers.front().weights.cols()); }
  int output_dim() const { return static_cast<int>(layers.back().weights.rows()); }
  /// [d1, hidden, hidden, d].
  std::vector<int> layer_sizes() const;
  std::size_t parameter_count() const;

  /// Throws std::invalid_argument when shapes do not chain or entries are
  /// not finite.
  void validate() const;
};

/// Hidden weights ~ N(0, 2/fan_in), output weights ~ N(0, 1/fan_in), zero
/// biases. `index` selects an independent stream (e.g. the time step).
MlpParams init_mlp(int d1, int d, std::uint64_t seed, std::uint32_t index = 0,
                   int hidden_width = -1);

/// All weights and biases zero; the network outputs 0 everywhere.
MlpParams zero_mlp(int d1, int d, int hidden_width = -1);

Vector mlp_forward(const MlpParams& params, const Eigen::Ref<const Vector>& x);
/// Columns of `x` (d1 x batch) mapped to columns of the result (d x batch).
Matrix mlp_forward_batch(const MlpParams& params, const Eigen::Ref<const Matrix>& x);

/// Tape handles for one network's parameters, in flatten() order.
struct MlpHandles {
  std::vector<NodeId> weights;
  std::vector<NodeId> biases;
};

/// Records the forward pass of a batch (d1 x batch) on the tape.
NodeId record_mlp(Tape& tape, const MlpParams& params, const Eigen::Ref<const Matrix>& x,
                  MlpHandles& handles);

/// Parameters in layer order: weights (column-major), then bias.
void flatten_into(const MlpParams& params, std::vector<double>& out);
void unflatten_from(MlpParams& params, const double*& cursor);
void gradients_into(const Tape& tape, const MlpParams& params, const MlpHandles& handles,
                    std::vector<double>& out);

/// One network per time step t_0..t_{n-1}.
struct ControlStack {
  std::vector<MlpParams> steps;

  int size() const { return static_cast<int>(steps.size()); }
  std::size_t parameter_count() const;
  std::vector<double> flatten() const;
  void assign(const std::vector<double>& flat);
};

ControlStack init_controls(int steps, int d1, int d, std::uint64_t seed, int hidden_width = -1);
ControlStack zero_controls(int steps, int d1, int d, int hidden_width = -1);

/// JSON checkpoint: per step the layer sizes, normalization and row-major
/// weights followed by biases.
void save_controls(std::ostream& out, const ControlStack& controls);
ControlStack load_controls(std::istream& in);
void save_controls(const std::string& path, const ControlStack& controls);
ControlStack load_controls(const std::string& path);

}  // namespace bsde
