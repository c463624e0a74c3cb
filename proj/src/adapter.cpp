#include "shadeadapt/adapter.hpp"

#include "shadeadapt/errors.hpp"

#include <cmath>
#include <sstream>

namespace shadeadapt {

TokenSequence::TokenSequence(torch::Tensor data) : data_(std::move(data)) {
  if (!data_.defined() || data_.dim() != 3) {
    throw RequestError("TokenSequence expects a (batch, tokens, channels) tensor");
  }
  if (!torch::isfinite(data_).all().item<bool>()) {
    throw NumericError("TokenSequence contains non-finite values");
  }
}

int64_t AdapterConfig::hidden() const {
  return static_cast<int64_t>(std::floor(ratio * static_cast<double>(channels)));
}

void AdapterConfig::validate() const {
  if (channels <= 0) {
    throw ConfigError("adapter channels must be positive");
  }
  if (!(ratio > 0.0 && ratio < 1.0)) {
    throw ConfigError("adapter_ratio must lie in (0,1)");
  }
  if (hidden() < 1) {
    std::ostringstream os;
    os << "adapter_ratio " << ratio << " leaves floor(ratio*" << channels
       << ") = 0 hidden channels";
    throw ConfigError(os.str());
  }
  if (!(scale > 0.0) || !std::isfinite(scale)) {
    throw ConfigError("adapter_scale must be a positive finite number");
  }
}

AdapterImpl::AdapterImpl(const AdapterConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  down = register_module("down", torch::nn::Linear(cfg_.channels, cfg_.hidden()));
  up = register_module("up", torch::nn::Linear(cfg_.hidden(), cfg_.channels));
  torch::NoGradGuard no_grad;
  down->weight.normal_(0.0, cfg_.init_std);
  up->weight.normal_(0.0, cfg_.init_std);
  down->bias.zero_();
  up->bias.zero_();
}

torch::Tensor AdapterImpl::forward(const torch::Tensor& x) {
  if (x.size(-1) != cfg_.channels) {
    std::ostringstream os;
    os << "adapter expects " << cfg_.channels << " channels, got " << x.size(-1);
    throw ConfigError(os.str());
  }
  return up->forward(torch::gelu(down->forward(x)));
}

TokenSequence AdapterImpl::forward(const TokenSequence& x) {
  return TokenSequence(forward(x.data()));
}

}  // namespace shadeadapt
