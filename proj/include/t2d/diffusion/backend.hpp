#pragma once

#include <functional>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "t2d/core/tensor.hpp"
#include "t2d/diffusion/schedule.hpp"
#include "t2d/diffusion/text_encoder.hpp"

namespace t2d {

// Raw denoiser captures: exactly 4 feature scales (coarse to fine) and 16
// cross-attention maps groupable into 4 resolution groups.
struct FeatureBundle {
  std::vector<Tensor> features;    // each [C_s, H_s, W_s]
  std::vector<Tensor> attentions;  // each [n_tokens, H, W], rows sum to 1 per pixel
};

// Frozen denoising backbone. Implementations must be safe for concurrent
// read-only inference from multiple workers.
class DiffusionBackend {
 public:
  virtual ~DiffusionBackend() = default;

  virtual std::string name() const = 0;
  virtual int image_size() const = 0;
  virtual int latent_channels() const = 0;
  virtual int latent_size() const = 0;
  virtual std::vector<int> feature_channels() const = 0;     // coarse -> fine
  virtual std::vector<int> feature_resolutions() const = 0;  // coarse -> fine
  virtual int attention_layer_count() const { return 16; }
  virtual const TextEncoder& text_encoder() const = 0;

  // [3,H,W] in [0,1] -> clean latent (t = 0).
  virtual LatentCode encode(const Tensor& image) const = 0;
  // latent -> [3,H,W] in [0,1].
  virtual Tensor decode(const Tensor& latent) const = 0;

  // One denoiser evaluation: predicts the noise component of xt and, when
  // `capture` is non-null, fills the multi-scale features / attention maps.
  virtual Tensor predict_noise(const Tensor& xt, int t, const PromptEmbedding& prompt,
                               FeatureBundle* capture = nullptr) const = 0;

  // Fingerprint of all backbone weights; used by the frozen-backbone checks.
  virtual std::string weights_hash() const = 0;
};

using BackendFactory =
    std::function<std::shared_ptr<DiffusionBackend>(const nlohmann::json& config)>;

// String-keyed registry so configs can select a backend by name.
class BackendRegistry {
 public:
  static BackendRegistry& instance() {
    static BackendRegistry reg;
    return reg;
  }

  void register_backend(const std::string& name, BackendFactory factory) {
    factories_[name] = std::move(factory);
  }

  std::shared_ptr<DiffusionBackend> create(const std::string& name,
                                           const nlohmann::json& config) const {
    auto it = factories_.find(name);
    if (it == factories_.end())
      throw std::invalid_argument("unknown diffusion backend: " + name);
    return it->second(config);
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : factories_) out.push_back(k);
    return out;
  }

 private:
  std::map<std::string, BackendFactory> factories_;
};

}  // namespace t2d
