#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "t2d/core/rng.hpp"
#include "t2d/core/tensor.hpp"

namespace t2d {

// Forward-process variances and their cumulative products. Immutable after
// construction; indexing is 1-based in t (alpha_bar(0) == 1, the clean image).
struct NoiseSchedule {
  std::vector<double> betas;       // beta_1 .. beta_T
  std::vector<double> alpha_bars;  // prod_{s<=t}(1 - beta_s)
  int T = 0;

  double beta(int t) const { return betas.at(static_cast<size_t>(t - 1)); }
  double alpha_bar(int t) const {
    if (t == 0) return 1.0;
    return alpha_bars.at(static_cast<size_t>(t - 1));
  }
};

enum class ScheduleKind { kLinear };

inline ScheduleKind schedule_kind_from_string(const std::string& s) {
  if (s == "linear") return ScheduleKind::kLinear;
  throw std::invalid_argument("unknown schedule kind: " + s);
}

inline NoiseSchedule build_schedule(int T, double beta_start, double beta_end,
                                    ScheduleKind kind = ScheduleKind::kLinear) {
  if (T < 1) throw std::invalid_argument("build_schedule: T must be >= 1");
  if (!(beta_start > 0.0 && beta_start < 1.0) || !(beta_end > 0.0 && beta_end < 1.0))
    throw std::invalid_argument("build_schedule: beta endpoints must lie in (0,1)");
  if (beta_start > beta_end)
    throw std::invalid_argument("build_schedule: beta_start must be <= beta_end");
  (void)kind;  // single kind today
  NoiseSchedule s;
  s.T = T;
  s.betas.resize(T);
  s.alpha_bars.resize(T);
  double prod = 1.0;
  for (int t = 0; t < T; ++t) {
    const double frac = T == 1 ? 0.0 : static_cast<double>(t) / (T - 1);
    s.betas[t] = beta_start + (beta_end - beta_start) * frac;
    prod *= 1.0 - s.betas[t];
    s.alpha_bars[t] = prod;
  }
  return s;
}

// Latent code plus its diffusion timestep; t = 0 is the clean encoding.
struct LatentCode {
  Tensor data;  // [C,h,w]
  int timestep = 0;
};

// Closed-form marginal q(x_t | x_0) = N(sqrt(abar_t) x0, (1 - abar_t) I).
// With an explicit zero noise tensor this reduces to sqrt(abar_t) * x0.
inline LatentCode forward_noise(const LatentCode& x0, int t, const NoiseSchedule& schedule,
                                const Tensor* noise = nullptr, uint64_t seed = 0) {
  if (t < 1 || t > schedule.T)
    throw std::invalid_argument("forward_noise: t out of [1,T]");
  if (x0.timestep != 0)
    throw std::invalid_argument("forward_noise: input must be a clean latent (t=0)");
  Tensor eps;
  if (noise) {
    if (!noise->same_shape(x0.data))
      throw std::invalid_argument("forward_noise: noise shape mismatch");
    eps = *noise;
  } else {
    Rng rng = Rng::for_stream(seed, 0x6e6f6973ULL);  // dedicated noise stream
    eps = rng.normal_tensor<float>(x0.data.shape());
  }
  const double ab = schedule.alpha_bar(t);
  const float signal = static_cast<float>(std::sqrt(ab));
  const float sigma = static_cast<float>(std::sqrt(1.0 - ab));
  LatentCode out;
  out.timestep = t;
  out.data = Tensor(x0.data.shape());
  for (int64_t i = 0; i < out.data.numel(); ++i)
    out.data[i] = signal * x0.data[i] + sigma * eps[i];
  return out;
}

}  // namespace t2d
