#include "bpnet/nn.hpp"

#include <cmath>
#include <unordered_map>

namespace bpnet {

void ParameterStore::check_new(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name == name) throw Error("duplicate parameter name: " + name);
  }
  for (const auto& s : stats_) {
    if (s.first == name) throw Error("duplicate parameter name: " + name);
  }
}

Tensor ParameterStore::add(const std::string& name, Tensor value) {
  check_new(name);
  value.set_requires_grad(true);
  params_.push_back({name, value});
  return value;
}

Tensor ParameterStore::uniform(const std::string& name, const Shape& shape, double bound) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(numel(shape));
  for (double& x : v) x = dist(rng_);
  return add(name, Tensor::from(shape, std::move(v)));
}

Tensor ParameterStore::constant(const std::string& name, const Shape& shape, double value) {
  return add(name, Tensor::full(shape, value));
}

BatchNormStats& ParameterStore::add_stats(const std::string& name, std::size_t channels,
                                          double momentum, double eps) {
  check_new(name);
  BatchNormStats stats(channels);
  stats.momentum = momentum;
  stats.eps = eps;
  stats_.emplace_back(name, std::move(stats));
  return stats_.back().second;
}

std::size_t ParameterStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

std::vector<NamedTensor> ParameterStore::state() const {
  std::vector<NamedTensor> out = params_;
  for (const auto& [name, s] : stats_) {
    const Shape shape{s.running_mean.size()};
    out.push_back({name + ".running_mean", Tensor::from(shape, s.running_mean)});
    out.push_back({name + ".running_var", Tensor::from(shape, s.running_var)});
  }
  return out;
}

void ParameterStore::load_state(const std::vector<NamedTensor>& state) {
  std::unordered_map<std::string, const Tensor*> by_name;
  for (const auto& s : state) by_name[s.name] = &s.tensor;
  auto fetch = [&](const std::string& name, const Shape& shape) -> std::span<const double> {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw DataError("checkpoint is missing tensor '" + name + "'");
    if (it->second->shape() != shape) {
      throw DataError("checkpoint tensor '" + name + "' has shape " +
                      shape_str(it->second->shape()) + ", model expects " + shape_str(shape));
    }
    return it->second->data();
  };
  if (by_name.size() != params_.size() + 2 * stats_.size()) {
    throw DataError("checkpoint holds " + std::to_string(by_name.size()) +
                    " tensors, model expects " + std::to_string(params_.size() + 2 * stats_.size()));
  }
  for (auto& p : params_) {
    auto src = fetch(p.name, p.tensor.shape());
    std::copy(src.begin(), src.end(), p.tensor.mutable_data().begin());
  }
  for (auto& [name, s] : stats_) {
    const Shape shape{s.running_mean.size()};
    auto m = fetch(name + ".running_mean", shape);
    auto v = fetch(name + ".running_var", shape);
    s.running_mean.assign(m.begin(), m.end());
    s.running_var.assign(v.begin(), v.end());
  }
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

namespace {
double kaiming_bound(std::size_t fan_in) { return std::sqrt(6.0 / static_cast<double>(fan_in)); }
}  // namespace

Linear::Linear(ParameterStore& store, const std::string& name, std::size_t in_, std::size_t out_,
               bool with_bias)
    : in(in_), out(out_) {
  weight = store.uniform(name + ".weight", {out, in}, 1.0 / std::sqrt(static_cast<double>(in)));
  if (with_bias) bias = store.constant(name + ".bias", {out}, 0.0);
}

Conv2d::Conv2d(ParameterStore& store, const std::string& name, std::size_t in_, std::size_t out_,
               std::size_t kernel_, std::size_t stride_, bool zero_init, bool with_bias)
    : in(in_), out(out_), kernel(kernel_), stride(stride_) {
  const Shape shape{out, in, kernel, kernel};
  weight = zero_init ? store.constant(name + ".weight", shape, 0.0)
                     : store.uniform(name + ".weight", shape, kaiming_bound(in * kernel * kernel));
  if (with_bias) bias = store.constant(name + ".bias", {out}, 0.0);
}

Tensor Conv2d::operator()(const Tensor& x) const {
  return conv2d(x, weight, bias, stride, kernel / 2);
}

Deconv2d::Deconv2d(ParameterStore& store, const std::string& name, std::size_t in_,
                   std::size_t out_)
    : in(in_), out(out_) {
  weight = store.uniform(name + ".weight", {in, out, 3, 3}, kaiming_bound(in * 9 / 4));
  bias = store.constant(name + ".bias", {out}, 0.0);
}

Tensor Deconv2d::operator()(const Tensor& x) const {
  return conv_transpose2d(x, weight, bias, 2, 1, 1);
}

BatchNorm::BatchNorm(ParameterStore& store, const std::string& name, std::size_t channels,
                     NormSettings settings) {
  gamma = store.constant(name + ".gamma", {channels}, 1.0);
  beta = store.constant(name + ".beta", {channels}, 0.0);
  stats = &store.add_stats(name, channels, settings.momentum, settings.eps);
}

Tensor BatchNorm::operator()(const Tensor& x, bool training, std::size_t channel_axis) const {
  return batch_norm(x, gamma, beta, *stats, training, channel_axis);
}

Basic2d::Basic2d(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
                 std::size_t stride, NormSettings norm)
    : conv(store, name + ".conv", in, out, 3, stride, false, false), bn(store, name + ".bn", out, norm) {}

Tensor Basic2d::operator()(const Tensor& x, bool training) const {
  return gelu(bn(conv(x), training, 0));
}

ResBlock::ResBlock(ParameterStore& store, const std::string& name, std::size_t in,
                   std::size_t out, std::size_t stride, NormSettings norm)
    : conv1(store, name + ".conv1", in, out, 3, stride, false, false),
      conv2(store, name + ".conv2", out, out, 3, 1, false, false),
      bn1(store, name + ".bn1", out, norm),
      bn2(store, name + ".bn2", out, norm),
      projected(in != out || stride != 1) {
  if (projected) {
    shortcut = Conv2d(store, name + ".shortcut", in, out, 1, stride, false, false);
    bn_shortcut = BatchNorm(store, name + ".bn_shortcut", out, norm);
  }
}

Tensor ResBlock::operator()(const Tensor& x, bool training) const {
  Tensor y = gelu(bn1(conv1(x), training, 0));
  y = bn2(conv2(y), training, 0);
  Tensor skip = projected ? bn_shortcut(shortcut(x), training, 0) : x;
  return gelu(add(y, skip));
}

}  // namespace bpnet
