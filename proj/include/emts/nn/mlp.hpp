#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace emts::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;    // out
};

/// Activations recorded during a forward pass, consumed by `Mlp::backward`.
/// Batches are stored column-wise: one column per sample.
struct MlpTape {
  std::vector<Matrix> inputs;  // input of each layer
  Matrix output;
};

enum class OutputInit { Glorot, Zero };

/// Fully connected network: tanh on hidden layers, identity on the output layer.
class Mlp {
 public:
  Mlp() = default;
  Mlp(const std::vector<int>& widths, std::mt19937_64& rng, OutputInit output_init = OutputInit::Glorot);

  /// A network with the given layers. Throws std::invalid_argument if shapes do not chain.
  explicit Mlp(std::vector<DenseLayer> layers);

  int input_size() const;
  int output_size() const;
  std::vector<int> widths() const;
  std::size_t parameter_count() const;

  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<DenseLayer>& layers() { return layers_; }

  Vector forward(const Vector& input) const;
  Matrix forward(const Matrix& input) const;
  Matrix forward(const Matrix& input, MlpTape& tape) const;

  /// Reverse-mode pass for a batch recorded in `tape`. Parameter gradients are
  /// accumulated into `grads` when it is non-null (it must have this network's
  /// shape); the gradient with respect to the input is returned.
  Matrix backward(const MlpTape& tape, const Matrix& grad_output, Mlp* grads) const;

  /// Same shape, all parameters zero.
  Mlp zeros_like() const;
  void set_zero();

  /// Flat views over every weight and bias, in a fixed order.
  std::vector<std::span<double>> parameter_spans();
  std::vector<std::span<const double>> parameter_spans() const;

  bool all_finite() const;
  bool operator==(const Mlp& other) const;

 private:
  void check_input(Eigen::Index rows) const;

  std::vector<DenseLayer> layers_;
};

}  // namespace emts::nn
