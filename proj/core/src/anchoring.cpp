#include "lab/anchoring.hpp"

#include <cmath>
#include <optional>

#include "lab/error.hpp"

namespace lab::anchoring {

using textenc::kDim;
using textenc::kSeqLen;

std::string_view name(TargetMode m) { return m == TargetMode::Towards ? "towards" : "away_from"; }
std::string_view name(VectorKind k) { return k == VectorKind::LowRank ? "low_rank" : "dense"; }

TargetMode parse_target_mode(std::string_view s) {
  if (s == "towards") return TargetMode::Towards;
  if (s == "away_from") return TargetMode::AwayFrom;
  fail(Errc::ConfigError, "mode must be \"towards\" or \"away_from\", got \"" + std::string(s) + "\"");
}

VectorKind parse_vector_kind(std::string_view s) {
  if (s == "low_rank") return VectorKind::LowRank;
  if (s == "dense") return VectorKind::Dense;
  fail(Errc::ConfigError, "kind must be \"low_rank\" or \"dense\", got \"" + std::string(s) + "\"");
}

DirectionVector DirectionVector::low_rank(std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0xa11));
  DirectionVector d;
  d.kind = VectorKind::LowRank;
  d.params["A"] = normal_matrix<float>(rng, 1, kDim);
  d.params["B"] = Mat<float>::Zero(kSeqLen, 1);
  return d;
}

DirectionVector DirectionVector::dense_zero() { return dense(Mat<float>::Zero(kSeqLen, kDim)); }

DirectionVector DirectionVector::dense(const Mat<float>& m) {
  require(m.rows() == kSeqLen && m.cols() == kDim, Errc::ShapeMismatch, "dense vector must be 8 x 32");
  DirectionVector d;
  d.kind = VectorKind::Dense;
  d.params["M"] = m;
  return d;
}

namespace {

template <class S>
const Mat<S>& entry(const ParamMap<S>& p, const char* key, Eigen::Index rows, Eigen::Index cols) {
  auto it = p.find(key);
  require(it != p.end(), Errc::ShapeMismatch, std::string("direction vector lacks ") + key);
  require(it->second.rows() == rows && it->second.cols() == cols, Errc::ShapeMismatch,
          std::string("direction vector entry ") + key + " has the wrong shape");
  return it->second;
}

template <class S>
void check_vector(VectorKind kind, const ParamMap<S>& p) {
  if (kind == VectorKind::LowRank) {
    entry(p, "A", 1, kDim);
    entry(p, "B", kSeqLen, 1);
    require(p.size() == 2, Errc::ShapeMismatch, "low-rank vector has extra entries");
  } else {
    entry(p, "M", kSeqLen, kDim);
    require(p.size() == 1, Errc::ShapeMismatch, "dense vector has extra entries");
  }
}

}  // namespace

void DirectionVector::validate() const {
  check_vector(kind, params);
  for (const auto& [_, m] : params)
    require(m.allFinite(), Errc::InvalidArgument, "direction vector has non-finite entries");
}

template <class S>
Mat<S> materialize(VectorKind kind, const ParamMap<S>& p) {
  check_vector(kind, p);
  if (kind == VectorKind::LowRank) return p.at("B") * p.at("A");
  return p.at("M");
}

Mat<float> materialize(const DirectionVector& d) { return materialize<float>(d.kind, d.params); }

template <class S>
Mat<S> psi_target(const Mat<S>& eps_u, const Mat<S>& eps_o, double w, TargetMode mode) {
  require(eps_u.rows() == eps_o.rows() && eps_u.cols() == eps_o.cols(), Errc::ShapeMismatch,
          "psi_target: predictions differ in shape");
  require(w > 0.0 && std::isfinite(w), Errc::InvalidArgument, "psi_target: w must be > 0");
  // Affine forms keep w = 1 exact: Towards gives o, AwayFrom gives 2u - o.
  const S ws = static_cast<S>(w);
  if (mode == TargetMode::Towards) return (S(1) - ws) * eps_u + ws * eps_o;
  return (S(1) + ws) * eps_u - ws * eps_o;
}

namespace {

template <class S>
struct Graph {
  ad::Tape<S> tape;
  std::optional<Bound<S>> vector;
  ad::Var<S> loss;
};

template <class S>
void build(Graph<S>& g, const AnchorProblem<S>& pr, VectorKind kind, const ParamMap<S>& vector) {
  require(pr.denoiser != nullptr, Errc::InvalidArgument, "anchor problem has no denoiser");
  require(pr.prompt.rows() == kSeqLen && pr.prompt.cols() == kDim, Errc::ShapeMismatch,
          "prompt embedding must be 8 x 32");
  require(pr.z_t.rows() == pr.target.rows() && pr.z_t.cols() == pr.target.cols(), Errc::ShapeMismatch,
          "target and latent differ in shape");
  check_vector(kind, vector);
  Bound<S> den(g.tape, *pr.denoiser, false);
  g.vector.emplace(g.tape, vector, true);
  auto m = kind == VectorKind::LowRank ? ad::matmul((*g.vector)("B"), (*g.vector)("A"))
                                       : (*g.vector)("M");
  auto cond = ad::reshape(ad::add(g.tape.constant(pr.prompt), m), 1, kSeqLen * kDim);
  const int ts[1] = {pr.t};
  auto pred = diffusion::denoiser_forward<S>(den, g.tape.constant(pr.z_t), ts, cond);
  g.loss = ad::sum_squared_error(pred, pr.target);
}

}  // namespace

template <class S>
S anchoring_loss(const AnchorProblem<S>& problem, VectorKind kind, const ParamMap<S>& vector) {
  Graph<S> g;
  build(g, problem, kind, vector);
  return g.loss.value()(0, 0);
}

template <class S>
LossGradient<S> loss_gradient(const AnchorProblem<S>& problem, VectorKind kind,
                              const ParamMap<S>& vector) {
  Graph<S> g;
  build(g, problem, kind, vector);
  g.tape.backward(g.loss);
  return {g.loss.value()(0, 0), g.vector->grads()};
}

void AnchorConfig::validate(int T) const {
  require(!base_prompts.empty(), Errc::ConfigError, "anchor.base_prompts must not be empty");
  require(w > 0.0 && std::isfinite(w), Errc::ConfigError, "anchor.w must be > 0");
  require(epochs >= 0, Errc::ConfigError, "anchor.epochs must be >= 0");
  require(adam.lr > 0.0, Errc::ConfigError, "anchor learning rate must be > 0");
  require(steps >= 1 && steps <= T, Errc::ConfigError, "anchor.steps must lie in [1, T]");
}

DiscoverResult discover(const diffusion::DenoiserParams& denoiser,
                        const textenc::TextEncoderParams& text_encoder, const AnchorConfig& cfg,
                        const DiscoverProgress& progress) {
  cfg.validate(denoiser.T);
  const auto target_embedding = textenc::encode_text(cfg.target_concept, text_encoder);
  std::vector<textenc::PromptEmbedding> prompts;
  for (const auto& p : cfg.base_prompts) prompts.push_back(textenc::encode_text(p, text_encoder));

  DiscoverResult out;
  out.vector = cfg.kind == VectorKind::LowRank ? DirectionVector::low_rank(cfg.seed)
                                                : DirectionVector::dense_zero();
  out.vector.meta.concept_label = cfg.target_concept;
  out.vector.meta.mode = cfg.mode;
  out.vector.meta.w = cfg.w;

  const auto schedule = denoiser.schedule();
  const auto ts = diffusion::sampling_timesteps(denoiser.T, cfg.steps);
  const int m = static_cast<int>(prompts.size());
  AdamState<float> state;
  AnchorProblem<float> problem;
  problem.denoiser = &denoiser.weights;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (int i = 0; i < m; ++i) {
      problem.prompt = prompts[static_cast<std::size_t>(i)].rows;
      Mat<float> z = diffusion::initial_latent(
          derive_seed(cfg.seed, 1 + static_cast<std::uint64_t>(epoch) * m + i));
      for (int k = 0; k < cfg.steps; ++k) {
        const int t = ts[static_cast<std::size_t>(k)];
        const int t_prev = ts[static_cast<std::size_t>(k) + 1];
        const auto eps_u = diffusion::predict_noise(denoiser, z, t, nullptr);
        const auto eps_o = diffusion::predict_noise(denoiser, z, t, &target_embedding);
        problem.z_t = z;
        problem.t = t;
        problem.target = psi_target<float>(eps_u, eps_o, cfg.w, cfg.mode);
        auto lg = loss_gradient<float>(problem, out.vector.kind, out.vector.params);
        if (!std::isfinite(lg.loss) || !all_finite(lg.grads))
          fail(Errc::NonFiniteLoss, "anchoring loss diverged (epoch " + std::to_string(epoch) +
                                        ", prompt \"" + cfg.base_prompts[static_cast<std::size_t>(i)] +
                                        "\", step " + std::to_string(k) + ")");
        adam_update(state, out.vector.params, lg.grads, cfg.adam);
        out.losses.push_back(lg.loss);
        if (progress) progress({epoch, i, k, lg.loss});

        textenc::PromptEmbedding steered{problem.prompt + materialize(out.vector)};
        const auto eps = diffusion::predict_noise(denoiser, z, t, &steered);
        z = diffusion::ddim_step<float>(z, eps, t, t_prev, schedule);
      }
    }
  }
  return out;
}

template Mat<float> materialize(VectorKind, const ParamMap<float>&);
template Mat<double> materialize(VectorKind, const ParamMap<double>&);
template Mat<float> psi_target(const Mat<float>&, const Mat<float>&, double, TargetMode);
template Mat<double> psi_target(const Mat<double>&, const Mat<double>&, double, TargetMode);
template float anchoring_loss(const AnchorProblem<float>&, VectorKind, const ParamMap<float>&);
template double anchoring_loss(const AnchorProblem<double>&, VectorKind, const ParamMap<double>&);
template LossGradient<float> loss_gradient(const AnchorProblem<float>&, VectorKind,
                                           const ParamMap<float>&);
template LossGradient<double> loss_gradient(const AnchorProblem<double>&, VectorKind,
                                            const ParamMap<double>&);

}  // namespace lab::anchoring
