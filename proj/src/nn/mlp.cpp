#include "emts/nn/mlp.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace emts::nn {

Mlp::Mlp(const std::vector<int>& widths, std::mt19937_64& rng, OutputInit output_init) {
  if (widths.size() < 2) throw std::invalid_argument("Mlp: need at least input and output widths");
  for (int w : widths) {
    if (w < 1) throw std::invalid_argument("Mlp: widths must be positive");
  }
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const int in = widths[l];
    const int out = widths[l + 1];
    DenseLayer layer{Matrix::Zero(out, in), Vector::Zero(out)};
    const bool is_output = l + 2 == widths.size();
    if (!(is_output && output_init == OutputInit::Zero)) {
      const double limit = std::sqrt(6.0 / (in + out));
      std::uniform_real_distribution<double> dist(-limit, limit);
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) {
        for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) layer.weight(r, c) = dist(rng);
      }
    }
    layers_.push_back(std::move(layer));
  }
}

Mlp::Mlp(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) throw std::invalid_argument("Mlp: no layers");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    if (layers_[l].bias.size() != layers_[l].weight.rows()) {
      throw std::invalid_argument("Mlp: bias size does not match layer output");
    }
    if (l > 0 && layers_[l].weight.cols() != layers_[l - 1].weight.rows()) {
      throw std::invalid_argument("Mlp: layer shapes do not chain");
    }
  }
}

int Mlp::input_size() const { return layers_.empty() ? 0 : static_cast<int>(layers_.front().weight.cols()); }
int Mlp::output_size() const { return layers_.empty() ? 0 : static_cast<int>(layers_.back().weight.rows()); }

std::vector<int> Mlp::widths() const {
  std::vector<int> w;
  if (layers_.empty()) return w;
  w.push_back(input_size());
  for (const auto& l : layers_) w.push_back(static_cast<int>(l.weight.rows()));
  return w;
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

void Mlp::check_input(Eigen::Index rows) const {
  if (layers_.empty()) throw std::logic_error("Mlp: forward on an empty network");
  if (rows != layers_.front().weight.cols()) {
    throw std::invalid_argument("Mlp: input size " + std::to_string(rows) + " does not match " +
                                std::to_string(layers_.front().weight.cols()));
  }
}

Vector Mlp::forward(const Vector& input) const {
  check_input(input.size());
  Vector x = input;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Vector z = layers_[l].weight * x + layers_[l].bias;
    x = (l + 1 < layers_.size()) ? Vector(z.array().tanh()) : z;
  }
  return x;
}

Matrix Mlp::forward(const Matrix& input) const {
  check_input(input.rows());
  Matrix x = input;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Matrix z = layers_[l].weight * x;
    z.colwise() += layers_[l].bias;
    x = (l + 1 < layers_.size()) ? Matrix(z.array().tanh()) : std::move(z);
  }
  return x;
}

Matrix Mlp::forward(const Matrix& input, MlpTape& tape) const {
  check_input(input.rows());
  tape.inputs.clear();
  tape.inputs.reserve(layers_.size());
  tape.inputs.push_back(input);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Matrix z = layers_[l].weight * tape.inputs.back();
    z.colwise() += layers_[l].bias;
    if (l + 1 < layers_.size()) {
      tape.inputs.push_back(z.array().tanh());
    } else {
      tape.output = std::move(z);
    }
  }
  return tape.output;
}

Matrix Mlp::backward(const MlpTape& tape, const Matrix& grad_output, Mlp* grads) const {
  if (tape.inputs.size() != layers_.size()) throw std::logic_error("Mlp::backward: tape does not match network");
  if (grad_output.rows() != output_size() || grad_output.cols() != tape.output.cols()) {
    throw std::invalid_argument("Mlp::backward: output gradient shape mismatch");
  }
  Matrix delta = grad_output;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    const Matrix& x = tape.inputs[i];
    if (grads != nullptr) {
      grads->layers_[i].weight.noalias() += delta * x.transpose();
      grads->layers_[i].bias += delta.rowwise().sum();
    }
    Matrix back = layers_[i].weight.transpose() * delta;
    if (i > 0) {
      // x = tanh(z) for hidden layers, so dz = dx * (1 - x^2).
      back.array() *= (1.0 - x.array().square());
    }
    delta = std::move(back);
  }
  return delta;
}

Mlp Mlp::zeros_like() const {
  Mlp out = *this;
  out.set_zero();
  return out;
}

void Mlp::set_zero() {
  for (auto& l : layers_) {
    l.weight.setZero();
    l.bias.setZero();
  }
}

std::vector<std::span<double>> Mlp::parameter_spans() {
  std::vector<std::span<double>> spans;
  for (auto& l : layers_) {
    spans.emplace_back(l.weight.data(), static_cast<std::size_t>(l.weight.size()));
    spans.emplace_back(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
  }
  return spans;
}

std::vector<std::span<const double>> Mlp::parameter_spans() const {
  std::vector<std::span<const double>> spans;
  for (const auto& l : layers_) {
    spans.emplace_back(l.weight.data(), static_cast<std::size_t>(l.weight.size()));
    spans.emplace_back(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
  }
  return spans;
}

bool Mlp::all_finite() const {
  for (const auto& l : layers_) {
    if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
  }
  return true;
}

bool Mlp::operator==(const Mlp& other) const {
  if (layers_.size() != other.layers_.size()) return false;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& a = layers_[i];
    const auto& b = other.layers_[i];
    if (a.weight.rows() != b.weight.rows() || a.weight.cols() != b.weight.cols()) return false;
    if (a.weight != b.weight || a.bias != b.bias) return false;
  }
  return true;
}

}  // namespace emts::nn
