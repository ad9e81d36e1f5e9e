#include "bpnet/optim.hpp"

#include <cmath>

namespace bpnet {

AdamW::AdamW(std::vector<NamedTensor> params, AdamWSettings settings)
    : params_(std::move(params)), settings_(settings) {
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.numel(), 0.0);
    v_.emplace_back(p.tensor.numel(), 0.0);
  }
}

void AdamW::step() {
  for (const auto& p : params_) {
    if (!p.tensor.has_grad()) continue;
    for (double g : p.tensor.grad()) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter '" + p.name + "'");
    }
  }
  ++step_;
  const auto& s = settings_;
  const double bc1 = 1.0 - std::pow(s.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(s.beta2, static_cast<double>(step_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& t = params_[k].tensor;
    auto data = t.mutable_data();
    const bool has = t.has_grad();
    auto grad = t.grad();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double g = has ? grad[i] : 0.0;
      data[i] -= s.lr * s.weight_decay * data[i];
      m_[k][i] = s.beta1 * m_[k][i] + (1.0 - s.beta1) * g;
      v_[k][i] = s.beta2 * v_[k][i] + (1.0 - s.beta2) * g * g;
      const double mhat = m_[k][i] / bc1;
      const double vhat = v_[k][i] / bc2;
      data[i] -= s.lr * mhat / (std::sqrt(vhat) + s.eps);
    }
  }
}

double clip_grad_norm(const std::vector<NamedTensor>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    for (double g : p.tensor.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto p : params) {
      if (!p.tensor.has_grad()) continue;
      for (double& g : p.tensor.mutable_grad()) g *= factor;
    }
  }
  return norm;
}

}  // namespace bpnet
