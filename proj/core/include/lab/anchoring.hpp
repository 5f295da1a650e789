#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "lab/diffusion.hpp"
#include "lab/nn.hpp"
#include "lab/textenc.hpp"

namespace lab::anchoring {

enum class TargetMode { Towards, AwayFrom };
enum class VectorKind { LowRank, Dense };

std::string_view name(TargetMode m);
std::string_view name(VectorKind k);
TargetMode parse_target_mode(std::string_view s);
VectorKind parse_vector_kind(std::string_view s);

struct VectorMeta {
  std::string concept_label;
  TargetMode mode = TargetMode::AwayFrom;
  double w = 3.0;
  std::string config_digest;
};

/// A direction d in prompt-embedding space. LowRank stores "B" (L x 1) and
/// "A" (1 x D) with d = BA; Dense stores "M" (L x D).
struct DirectionVector {
  VectorKind kind = VectorKind::LowRank;
  ParamMap<float> params;
  VectorMeta meta;

  /// B = 0, A ~ N(0, 1) from the seed.
  static DirectionVector low_rank(std::uint64_t seed);
  static DirectionVector dense_zero();
  static DirectionVector dense(const Mat<float>& m);
  void validate() const;
};

template <class S>
Mat<S> materialize(VectorKind kind, const ParamMap<S>& params);
Mat<float> materialize(const DirectionVector& d);

/// Towards: u + w (o - u).  AwayFrom: u - w (o - u).
template <class S>
Mat<S> psi_target(const Mat<S>& eps_u, const Mat<S>& eps_o, double w, TargetMode mode);

/// Inputs of one summand of the anchoring objective. The target is a
/// constant; only the vector parameters receive gradients.
template <class S>
struct AnchorProblem {
  const ParamMap<S>* denoiser = nullptr;
  Mat<S> z_t;       // 3 x 256
  int t = 0;
  Mat<S> prompt;    // L x D
  Mat<S> target;    // 3 x 256
};

/// ||eps_theta(z_t, P_c + d, t) - target||^2, summed over entries.
template <class S>
S anchoring_loss(const AnchorProblem<S>& problem, VectorKind kind, const ParamMap<S>& vector);

template <class S>
struct LossGradient {
  S loss = 0;
  ParamMap<S> grads;  // same keys as the vector parameters
};

template <class S>
LossGradient<S> loss_gradient(const AnchorProblem<S>& problem, VectorKind kind,
                              const ParamMap<S>& vector);

struct AnchorConfig {
  std::vector<std::string> base_prompts;
  std::string target_concept;
  TargetMode mode = TargetMode::AwayFrom;
  double w = 3.0;
  int epochs = 5;
  AdamConfig adam;
  int steps = 50;
  VectorKind kind = VectorKind::LowRank;
  std::uint64_t seed = 0;

  void validate(int T) const;
};

struct DiscoverStep {
  int epoch = 0;
  int prompt = 0;
  int step = 0;
  double loss = 0.0;
};
using DiscoverProgress = std::function<void(const DiscoverStep&)>;

struct DiscoverResult {
  DirectionVector vector;
  std::vector<double> losses;  // one per optimizer step
};

/// Optimizes d along the denoising trajectory of every base prompt. Each
/// reverse step takes one Adam step on d, then advances z_t with the plain
/// conditional prediction under the updated d.
DiscoverResult discover(const diffusion::DenoiserParams& denoiser,
                        const textenc::TextEncoderParams& text_encoder, const AnchorConfig& cfg,
                        const DiscoverProgress& progress = {});

}  // namespace lab::anchoring
