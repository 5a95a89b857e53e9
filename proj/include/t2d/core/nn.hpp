#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "t2d/core/autograd.hpp"
#include "t2d/core/rng.hpp"
#include "t2d/core/tensor.hpp"

namespace t2d {
namespace nn {

template <class T>
using ParamMapT = std::map<std::string, ag::ValueT<T>>;
using ParamMap = ParamMapT<float>;

template <class T>
ag::ValueT<T> make_param(Rng& rng, std::vector<int> shape, double fan_in) {
  TensorT<T> t(std::move(shape));
  const double bound = std::sqrt(6.0 / std::max(1.0, fan_in));
  rng.fill_uniform(t, -bound, bound);
  return ag::ValueT<T>::leaf(std::move(t), true);
}

template <class T>
ag::ValueT<T> zeros_param(std::vector<int> shape) {
  return ag::ValueT<T>::leaf(TensorT<T>(std::move(shape)), true);
}

template <class T>
struct Conv2dT {
  int in_ch = 0, out_ch = 0, ksize = 1, stride = 1, pad = 0;
  bool has_bias = true;
  ag::ValueT<T> weight;  // [out,in,k,k]
  ag::ValueT<T> bias;    // [out]

  Conv2dT() = default;
  Conv2dT(Rng& rng, int in, int out, int k, int stride_ = 1, int pad_ = 0, bool bias_ = true)
      : in_ch(in), out_ch(out), ksize(k), stride(stride_), pad(pad_), has_bias(bias_) {
    weight = make_param<T>(rng, {out, in, k, k}, static_cast<double>(in) * k * k);
    if (has_bias) bias = zeros_param<T>({out});
  }

  ag::ValueT<T> forward(const ag::ValueT<T>& x) const {
    auto y = ag::conv2d(x, weight, stride, pad);
    if (has_bias) y = ag::bias_add_chw(y, bias);
    return y;
  }

  void collect(const std::string& prefix, ParamMapT<T>& out) const {
    out[prefix + ".weight"] = weight;
    if (has_bias) out[prefix + ".bias"] = bias;
  }
};

template <class T>
struct LinearT {
  int in_dim = 0, out_dim = 0;
  bool has_bias = true;
  ag::ValueT<T> weight;  // [in,out]
  ag::ValueT<T> bias;    // [out]

  LinearT() = default;
  LinearT(Rng& rng, int in, int out, bool bias_ = true)
      : in_dim(in), out_dim(out), has_bias(bias_) {
    weight = make_param<T>(rng, {in, out}, in);
    if (has_bias) bias = zeros_param<T>({out});
  }

  // x: [N,in] -> [N,out]
  ag::ValueT<T> forward(const ag::ValueT<T>& x) const {
    auto y = ag::matmul(x, weight);
    if (has_bias) y = ag::bias_add_rows(y, bias);
    return y;
  }

  void collect(const std::string& prefix, ParamMapT<T>& out) const {
    out[prefix + ".weight"] = weight;
    if (has_bias) out[prefix + ".bias"] = bias;
  }
};

template <class T>
struct LayerNormT {
  int dim = 0;
  ag::ValueT<T> gamma, beta;

  LayerNormT() = default;
  explicit LayerNormT(int d) : dim(d) {
    gamma = ag::ValueT<T>::leaf(TensorT<T>::full({d}, T(1)), true);
    beta = zeros_param<T>({d});
  }

  ag::ValueT<T> forward(const ag::ValueT<T>& x) const {
    return ag::layernorm_rows(x, gamma, beta);
  }

  void collect(const std::string& prefix, ParamMapT<T>& out) const {
    out[prefix + ".gamma"] = gamma;
    out[prefix + ".beta"] = beta;
  }
};

// Two-layer perceptron with ReLU; used for query fusion and mask embedding.
template <class T>
struct MlpT {
  LinearT<T> fc1, fc2;

  MlpT() = default;
  MlpT(Rng& rng, int in, int hidden, int out)
      : fc1(rng, in, hidden), fc2(rng, hidden, out) {}

  ag::ValueT<T> forward(const ag::ValueT<T>& x) const {
    return fc2.forward(ag::relu(fc1.forward(x)));
  }

  void collect(const std::string& prefix, ParamMapT<T>& out) const {
    fc1.collect(prefix + ".fc1", out);
    fc2.collect(prefix + ".fc2", out);
  }
};

// Scaled dot-product attention with separate key/value input width.
// Optionally captures the head-averaged attention map (softmax rows).
template <class T>
struct MultiheadAttentionT {
  int dim = 0, heads = 1, head_dim = 0;
  LinearT<T> q_proj, k_proj, v_proj, out_proj;

  MultiheadAttentionT() = default;
  MultiheadAttentionT(Rng& rng, int dim_, int heads_, int kv_dim)
      : dim(dim_), heads(heads_), head_dim(dim_ / heads_),
        q_proj(rng, dim_, dim_), k_proj(rng, kv_dim, dim_),
        v_proj(rng, kv_dim, dim_), out_proj(rng, dim_, dim_) {
    if (dim_ % heads_ != 0) throw std::invalid_argument("attention dim % heads != 0");
  }

  // q:[Nq,dim] k,v:[Nk,kv_dim]; add_mask (optional): additive [Nq,Nk].
  // attn_capture (optional): receives mean-over-heads softmax map [Nq,Nk].
  ag::ValueT<T> forward(const ag::ValueT<T>& q, const ag::ValueT<T>& k,
                        const ag::ValueT<T>& v,
                        const TensorT<T>* add_mask = nullptr,
                        TensorT<T>* attn_capture = nullptr) const {
    auto Q = q_proj.forward(q);
    auto K = k_proj.forward(k);
    auto V = v_proj.forward(v);
    const T scale = T(1) / std::sqrt(static_cast<T>(head_dim));
    ag::ValueT<T> out;
    if (attn_capture) *attn_capture = TensorT<T>({q.val().dim(0), k.val().dim(0)});
    for (int h = 0; h < heads; ++h) {
      auto Qh = ag::mul_scalar(ag::slice_cols(Q, h * head_dim, (h + 1) * head_dim), scale);
      auto Kh = ag::slice_cols(K, h * head_dim, (h + 1) * head_dim);
      auto Vh = ag::slice_cols(V, h * head_dim, (h + 1) * head_dim);
      auto scores = ag::matmul(Qh, ag::transpose2d(Kh));
      if (add_mask) scores = ag::add(scores, ag::ValueT<T>::constant(*add_mask));
      auto attn = ag::softmax_rows(scores);
      if (attn_capture) {
        const T invh = T(1) / static_cast<T>(heads);
        for (int64_t i = 0; i < attn_capture->numel(); ++i)
          (*attn_capture)[i] += attn.val()[i] * invh;
      }
      auto Oh = ag::matmul(attn, Vh);
      out = h == 0 ? Oh : ag::concat_cols(out, Oh);
    }
    return out_proj.forward(out);
  }

  void collect(const std::string& prefix, ParamMapT<T>& out) const {
    q_proj.collect(prefix + ".q", out);
    k_proj.collect(prefix + ".k", out);
    v_proj.collect(prefix + ".v", out);
    out_proj.collect(prefix + ".o", out);
  }
};

// Sinusoidal embedding of a scalar step index.
template <class T>
TensorT<T> sinusoid_embedding(double t, int dim) {
  TensorT<T> e({dim});
  const int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / std::max(1, half - 1));
    e[i] = static_cast<T>(std::sin(t * freq));
    e[half + i] = static_cast<T>(std::cos(t * freq));
  }
  return e;
}

// Fixed 2D sine-cosine positional encoding, flattened to [H*W, dim].
template <class T>
TensorT<T> posenc_2d(int dim, int h, int w) {
  TensorT<T> pe({h * w, dim});
  const int quarter = dim / 4;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      T* row = pe.data() + static_cast<int64_t>(y * w + x) * dim;
      for (int i = 0; i < quarter; ++i) {
        const double freq = std::exp(-std::log(10000.0) * i / std::max(1, quarter - 1));
        row[4 * i + 0] = static_cast<T>(std::sin(y * freq));
        row[4 * i + 1] = static_cast<T>(std::cos(y * freq));
        row[4 * i + 2] = static_cast<T>(std::sin(x * freq));
        row[4 * i + 3] = static_cast<T>(std::cos(x * freq));
      }
    }
  }
  return pe;
}

template <class T>
std::vector<ag::ValueT<T>> params_of(const ParamMapT<T>& m) {
  std::vector<ag::ValueT<T>> out;
  out.reserve(m.size());
  for (const auto& [k, v] : m) out.push_back(v);
  return out;
}

}  // namespace nn
}  // namespace t2d
