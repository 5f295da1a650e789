#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "lab/shapes_world.hpp"
#include "lab/textenc.hpp"

namespace lab::diffusion {

/// Noise-level table. alpha_bar[0] == 1 and alpha_bar is strictly decreasing.
struct Schedule {
  int T = 0;
  std::vector<double> alpha_bar;  // T + 1 entries
};

/// Linear per-step betas 1e-4 -> 0.02 defined for 1000 steps, rescaled by
/// 1000 / T so short schedules still end near pure noise.
Schedule make_schedule(int T);

template <class S>
Mat<S> add_noise(const Mat<S>& z0, int t, const Mat<S>& eps, const Schedule& schedule);

/// eps_u + guidance_scale * (eps_c - eps_u)
template <class S>
Mat<S> cfg_noise(const Mat<S>& eps_u, const Mat<S>& eps_c, double guidance_scale);

/// Deterministic DDIM update from t to t_prev (t_prev <= t).
template <class S>
Mat<S> ddim_step(const Mat<S>& z_t, const Mat<S>& eps_hat, int t, int t_prev,
                 const Schedule& schedule);

/// Channel widths of the encoder-decoder and the conditioning MLP width.
struct DenoiserArch {
  int c1 = 16;
  int c2 = 32;
  int c3 = 64;
  int embed = 128;
  bool operator==(const DenoiserArch&) const = default;
};

struct DenoiserParams {
  DenoiserArch arch;
  int T = 200;
  ParamMap<float> weights;

  static DenoiserParams init(const DenoiserArch& arch, int T, std::uint64_t seed);
  Schedule schedule() const { return make_schedule(T); }
  void validate() const;
};

inline constexpr int kTimeEmbed = 32;
inline constexpr int kCondDim = textenc::kSeqLen * textenc::kDim;

/// Sinusoidal timestep features, N x kTimeEmbed.
template <class S>
Mat<S> timestep_features(std::span<const int> t);

/// Batched noise prediction on a tape. z is 3 x (N*256) channel-major,
/// cond is N x kCondDim (flattened prompt embeddings or the null row).
template <class S>
ad::Var<S> denoiser_forward(const Bound<S>& params, ad::Var<S> z,
                            std::span<const int> t, ad::Var<S> cond);

/// eps_theta(z_t, c, t); a null cond selects the learned null embedding.
Mat<float> predict_noise(const DenoiserParams& params, const Mat<float>& z_t, int t,
                         const textenc::PromptEmbedding* cond);

/// Unconditional and conditional predictions from one batched pass.
struct NoisePair {
  Mat<float> uncond;
  Mat<float> cond;
};
NoisePair predict_noise_pair(const DenoiserParams& params, const Mat<float>& z_t, int t,
                             const textenc::PromptEmbedding& cond);

struct TrainConfig {
  int epochs = 10;
  int batch = 32;
  double lr = 2e-3;
  double p_uncond = 0.1;
  /// Probability of omitting each attribute word from a caption.
  double p_omit = 0.25;
  double grad_clip = 1.0;
  std::uint64_t seed = 0;
  bool train_text_encoder = true;
};

struct TrainResult {
  DenoiserParams denoiser;
  textenc::TextEncoderParams text_encoder;
  std::vector<double> step_losses;
};

using ProgressFn = std::function<void(int step, int total, double loss)>;

/// Minimizes E||eps - eps_theta(z_t, c, t)||^2 with condition dropout. The
/// text encoder is optimized jointly unless cfg.train_text_encoder is false.
TrainResult train_denoiser(std::span<const world::ImageSample> dataset,
                           const textenc::TextEncoderParams& text_encoder,
                           const DenoiserArch& arch, int T, const TrainConfig& cfg,
                           const ProgressFn& progress = {});

struct TrainStepResult {
  double loss = 0.0;
  ParamMap<float> denoiser_grads;
  ParamMap<float> text_grads;
};

/// Loss and gradients on one explicit batch.
TrainStepResult train_step_gradients(std::span<const world::ImageSample> batch,
                                     std::span<const int> timesteps,
                                     const Mat<float>& noise,
                                     std::span<const std::string> captions,
                                     std::span<const bool> drop_condition,
                                     const DenoiserParams& denoiser,
                                     const textenc::TextEncoderParams& text_encoder,
                                     bool text_trainable);

struct SamplerConfig {
  int steps = 50;
  double guidance_scale = 4.0;
  std::uint64_t seed = 0;
  void validate(int T) const;
};

/// Timesteps visited by the reverse sampler: steps + 1 values from T to 0.
std::vector<int> sampling_timesteps(int T, int steps);

/// Seeded standard-normal starting latent.
Mat<float> initial_latent(std::uint64_t seed);

/// Condition supplier for step index k (0 = noisiest).
using ConditionFn = std::function<const textenc::PromptEmbedding&(int step_index)>;

/// Guided reverse process shared by plain and steered sampling. Output is
/// clamped to [-1, 1].
Mat<float> sample_with(const DenoiserParams& params, const ConditionFn& condition,
                       const SamplerConfig& cfg);

Mat<float> sample(const DenoiserParams& params, const textenc::PromptEmbedding& cond,
                  const SamplerConfig& cfg);

}  // namespace lab::diffusion
