#include "lab/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

#include "lab/error.hpp"

namespace lab::diffusion {

using textenc::PromptEmbedding;

Schedule make_schedule(int T) {
  if (T < 2) fail(Errc::BadT, "T must be at least 2, got " + std::to_string(T));
  const double rescale = 1000.0 / T;
  Schedule s;
  s.T = T;
  s.alpha_bar.resize(static_cast<std::size_t>(T) + 1);
  s.alpha_bar[0] = 1.0;
  for (int i = 1; i <= T; ++i) {
    const double beta_1000 = 1e-4 + (0.02 - 1e-4) * (i - 1) / (T - 1);
    const double beta = std::min(0.999, rescale * beta_1000);
    s.alpha_bar[i] = s.alpha_bar[i - 1] * (1.0 - beta);
  }
  return s;
}

namespace {

void check_t(int t, const Schedule& schedule) {
  require(t >= 0 && t <= schedule.T, Errc::InvalidArgument,
          "timestep " + std::to_string(t) + " outside [0, T]");
}

}  // namespace

template <class S>
Mat<S> add_noise(const Mat<S>& z0, int t, const Mat<S>& eps, const Schedule& schedule) {
  require(z0.rows() == eps.rows() && z0.cols() == eps.cols(), Errc::ShapeMismatch,
          "add_noise: z0 and eps differ in shape");
  check_t(t, schedule);
  const double ab = schedule.alpha_bar[static_cast<std::size_t>(t)];
  const S a = static_cast<S>(std::sqrt(ab));
  const S b = static_cast<S>(std::sqrt(1.0 - ab));
  return a * z0 + b * eps;
}

template <class S>
Mat<S> cfg_noise(const Mat<S>& eps_u, const Mat<S>& eps_c, double guidance_scale) {
  require(eps_u.rows() == eps_c.rows() && eps_u.cols() == eps_c.cols(), Errc::ShapeMismatch,
          "cfg_noise: predictions differ in shape");
  // Written as (1 - w) u + w c so that w = 1 and w = 0 are exact.
  const S w = static_cast<S>(guidance_scale);
  return (S(1) - w) * eps_u + w * eps_c;
}

template <class S>
Mat<S> ddim_step(const Mat<S>& z_t, const Mat<S>& eps_hat, int t, int t_prev,
                 const Schedule& schedule) {
  require(z_t.rows() == eps_hat.rows() && z_t.cols() == eps_hat.cols(), Errc::ShapeMismatch,
          "ddim_step: latent and noise differ in shape");
  check_t(t, schedule);
  check_t(t_prev, schedule);
  if (t_prev > t)
    fail(Errc::BadStepOrder, "t_prev " + std::to_string(t_prev) + " > t " + std::to_string(t));
  if (t_prev == t) return z_t;
  const double ab_t = schedule.alpha_bar[static_cast<std::size_t>(t)];
  const double ab_p = schedule.alpha_bar[static_cast<std::size_t>(t_prev)];
  const S inv_a_t = static_cast<S>(1.0 / std::sqrt(ab_t));
  const S s_t = static_cast<S>(std::sqrt(1.0 - ab_t));
  const S a_p = static_cast<S>(std::sqrt(ab_p));
  const S s_p = static_cast<S>(std::sqrt(1.0 - ab_p));
  Mat<S> x0 = (z_t - s_t * eps_hat) * inv_a_t;
  return a_p * x0 + s_p * eps_hat;
}

DenoiserParams DenoiserParams::init(const DenoiserArch& a, int T, std::uint64_t seed) {
  require(a.c1 > 0 && a.c2 > 0 && a.c3 > 0 && a.embed > 0, Errc::ConfigError,
          "denoiser widths must be positive");
  make_schedule(T);
  Rng rng(derive_seed(seed, 0xde40));
  DenoiserParams p;
  p.arch = a;
  p.T = T;
  auto& w = p.weights;
  auto conv = [&](const std::string& name, int cout, int cin, double gain = 2.0) {
    w[name + ".w"] = normal_matrix<float>(rng, cout, cin * 9, std::sqrt(gain / (cin * 9)));
    w[name + ".b"] = Mat<float>::Zero(cout, 1);
  };
  auto linear = [&](const std::string& name, int in, int out, double stddev) {
    w[name + ".w"] = normal_matrix<float>(rng, in, out, stddev);
    w[name + ".b"] = Mat<float>::Zero(1, out);
  };
  conv("enc.in", a.c1, world::kChannels);
  conv("enc.b1", a.c1, a.c1);
  conv("enc.b2", a.c2, a.c1);
  conv("mid.in", a.c3, a.c2);
  conv("mid.out", a.c3, a.c3);
  conv("dec.u1", a.c2, a.c3 + a.c2);
  conv("dec.u2", a.c1, a.c2 + a.c1);
  conv("dec.out", world::kChannels, a.c1, 1.0);
  w["cond.time.w"] = normal_matrix<float>(rng, kTimeEmbed, a.embed, 1.0 / std::sqrt(kTimeEmbed));
  w["cond.text.w"] = normal_matrix<float>(rng, kCondDim, a.embed, 1.0 / std::sqrt(kCondDim));
  w["cond.b"] = Mat<float>::Zero(1, a.embed);
  w["cond.null"] = normal_matrix<float>(rng, 1, kCondDim, 1.0);
  linear("cond.hidden", a.embed, a.embed, 1.0 / std::sqrt(a.embed));
  linear("film.scale", a.embed, a.c3, 0.02);
  w["film.scale.b"] = Mat<float>::Ones(1, a.c3);
  linear("film.shift", a.embed, a.c3 * 16, 0.02);
  linear("film.u1.scale", a.embed, a.c2, 0.02);
  w["film.u1.scale.b"] = Mat<float>::Ones(1, a.c2);
  linear("film.u1.shift", a.embed, a.c2, 0.02);
  linear("film.u2.scale", a.embed, a.c1, 0.02);
  w["film.u2.scale.b"] = Mat<float>::Ones(1, a.c1);
  linear("film.u2.shift", a.embed, a.c1, 0.02);
  return p;
}

void DenoiserParams::validate() const {
  const auto ref = init(arch, T, 0);
  for (const auto& [name, m] : ref.weights) {
    auto it = weights.find(name);
    require(it != weights.end(), Errc::ShapeMismatch, "denoiser lacks tensor " + name);
    require(it->second.rows() == m.rows() && it->second.cols() == m.cols(), Errc::ShapeMismatch,
            "denoiser tensor has wrong shape: " + name);
    require(it->second.allFinite(), Errc::InvalidArgument, "non-finite entries in " + name);
  }
  require(weights.size() == ref.weights.size(), Errc::ShapeMismatch, "denoiser has unexpected tensors");
}

template <class S>
Mat<S> timestep_features(std::span<const int> t) {
  Mat<S> f(static_cast<Eigen::Index>(t.size()), kTimeEmbed);
  constexpr int half = kTimeEmbed / 2;
  for (std::size_t n = 0; n < t.size(); ++n)
    for (int i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * i / half);
      f(static_cast<Eigen::Index>(n), 2 * i) = static_cast<S>(std::sin(t[n] * freq));
      f(static_cast<Eigen::Index>(n), 2 * i + 1) = static_cast<S>(std::cos(t[n] * freq));
    }
  return f;
}

template <class S>
ad::Var<S> denoiser_forward(const Bound<S>& p, ad::Var<S> z, std::span<const int> t,
                            ad::Var<S> cond) {
  ad::Tape<S>& tape = *z.tape;
  const int n = static_cast<int>(t.size());
  require(cond.rows() == n && cond.cols() == kCondDim, Errc::ShapeMismatch,
          "denoiser: condition must be N x " + std::to_string(kCondDim));
  require(z.rows() == world::kChannels && z.cols() == n * world::kPixelsPerChannel,
          Errc::ShapeMismatch, "denoiser: latent must be 3 x (N*256)");
  const ad::Geo g16{n, world::kSide, world::kSide};
  const ad::Geo g8 = g16.pooled();
  const ad::Geo g4 = g8.pooled();
  auto conv = [&](ad::Var<S> x, const std::string& name, ad::Geo g) {
    return ad::add_col_vector(ad::conv3x3(x, p(name + ".w"), g), p(name + ".b"));
  };
  auto linear = [&](ad::Var<S> x, const std::string& name) {
    return ad::add_row_vector(ad::matmul(x, p(name + ".w")), p(name + ".b"));
  };

  auto h = ad::silu(conv(z, "enc.in", g16));
  auto skip16 = ad::silu(conv(h, "enc.b1", g16));
  h = ad::avgpool2(skip16, g16);
  auto skip8 = ad::silu(conv(h, "enc.b2", g8));
  h = ad::avgpool2(skip8, g8);
  h = conv(h, "mid.in", g4);

  // Bottleneck conditioning: timestep features and the full flattened P_c.
  auto temb = tape.constant(timestep_features<S>(t));
  auto e = ad::add_row_vector(
      ad::add(ad::matmul(temb, p("cond.time.w")), ad::matmul(cond, p("cond.text.w"))),
      p("cond.b"));
  e = ad::silu(linear(ad::silu(e), "cond.hidden"));
  auto film_scale = linear(e, "film.scale");
  auto film_shift = ad::samples_to_channels(linear(e, "film.shift"), g4);
  h = ad::silu(ad::add(ad::scale_per_sample_channel(h, film_scale, g4), film_shift));
  h = ad::silu(conv(h, "mid.out", g4));

  // The same embedding modulates each decoder stage per channel.
  auto film = [&](ad::Var<S> x, const std::string& name, ad::Geo g) {
    auto ones = tape.constant(Mat<S>::Ones(x.rows(), x.cols()));
    auto shift = ad::scale_per_sample_channel(ones, linear(e, name + ".shift"), g);
    return ad::add(ad::scale_per_sample_channel(x, linear(e, name + ".scale"), g), shift);
  };
  h = ad::concat_rows(ad::upsample2(h, g4), skip8);
  h = ad::silu(film(conv(h, "dec.u1", g8), "film.u1", g8));
  h = ad::concat_rows(ad::upsample2(h, g8), skip16);
  h = ad::silu(film(conv(h, "dec.u2", g16), "film.u2", g16));
  return conv(h, "dec.out", g16);
}

Mat<float> predict_noise(const DenoiserParams& params, const Mat<float>& z_t, int t,
                         const PromptEmbedding* cond) {
  require(z_t.rows() == world::kChannels && z_t.cols() == world::kPixelsPerChannel,
          Errc::ShapeMismatch, "predict_noise: latent must be 3 x 256");
  if (cond)
    require(cond->rows.rows() == textenc::kSeqLen && cond->rows.cols() == textenc::kDim,
            Errc::ShapeMismatch, "predict_noise: prompt embedding must be 8 x 32");
  ad::Tape<float> tape;
  Bound<float> p(tape, params.weights, false);
  auto c = cond ? tape.constant(cond->flat()) : p("cond.null");
  const int ts[1] = {t};
  return denoiser_forward<float>(p, tape.constant(z_t), ts, c).value();
}

NoisePair predict_noise_pair(const DenoiserParams& params, const Mat<float>& z_t, int t,
                             const PromptEmbedding& cond) {
  require(z_t.rows() == world::kChannels && z_t.cols() == world::kPixelsPerChannel,
          Errc::ShapeMismatch, "predict_noise: latent must be 3 x 256");
  ad::Tape<float> tape;
  Bound<float> p(tape, params.weights, false);
  Mat<float> conds(2, kCondDim);
  conds.row(0) = params.weights.at("cond.null");
  conds.row(1) = cond.flat();
  Mat<float> z2(world::kChannels, 2 * world::kPixelsPerChannel);
  z2 << z_t, z_t;
  const int ts[2] = {t, t};
  const Mat<float> out =
      denoiser_forward<float>(p, tape.constant(std::move(z2)), ts,
                              tape.constant(std::move(conds)))
          .value();
  return {out.leftCols(world::kPixelsPerChannel), out.rightCols(world::kPixelsPerChannel)};
}

TrainStepResult train_step_gradients(std::span<const world::ImageSample> batch,
                                     std::span<const int> timesteps, const Mat<float>& noise,
                                     std::span<const std::string> captions,
                                     std::span<const bool> drop_condition,
                                     const DenoiserParams& denoiser,
                                     const textenc::TextEncoderParams& text_encoder,
                                     bool text_trainable) {
  const int n = static_cast<int>(batch.size());
  require(n > 0, Errc::EmptyDataset, "empty batch");
  require(static_cast<int>(timesteps.size()) == n && static_cast<int>(captions.size()) == n &&
              static_cast<int>(drop_condition.size()) == n,
          Errc::ShapeMismatch, "train step: per-sample inputs differ in length");
  constexpr int P = world::kPixelsPerChannel;
  require(noise.rows() == world::kChannels && noise.cols() == n * P, Errc::ShapeMismatch,
          "train step: noise must be 3 x (N*256)");
  const Schedule schedule = denoiser.schedule();

  Mat<float> z_t(world::kChannels, n * P);
  for (int i = 0; i < n; ++i)
    z_t.middleCols(i * P, P) =
        add_noise<float>(batch[i].pixels, timesteps[i], noise.middleCols(i * P, P), schedule);

  std::vector<textenc::TokenSeq> seqs;
  seqs.reserve(captions.size());
  for (const auto& c : captions) seqs.push_back(textenc::tokenize(c));
  Mat<float> keep(n, kCondDim);
  Mat<float> drop(n, 1);
  for (int i = 0; i < n; ++i) {
    keep.row(i).setConstant(drop_condition[i] ? 0.f : 1.f);
    drop(i, 0) = drop_condition[i] ? 1.f : 0.f;
  }

  ad::Tape<float> tape;
  Bound<float> den(tape, denoiser.weights, true);
  Bound<float> txt(tape, text_encoder.weights, text_trainable);
  auto prompts = textenc::encode_batch<float>(txt, seqs);
  auto cond = ad::add(ad::mul(prompts, tape.constant(std::move(keep))),
                      ad::matmul(tape.constant(std::move(drop)), den("cond.null")));
  auto pred = denoiser_forward<float>(den, tape.constant(std::move(z_t)),
                                      timesteps, cond);
  auto loss = ad::mean_squared_error(pred, noise);
  tape.backward(loss);

  TrainStepResult r;
  r.loss = loss.value()(0, 0);
  r.denoiser_grads = den.grads();
  if (text_trainable) r.text_grads = txt.grads();
  return r;
}

TrainResult train_denoiser(std::span<const world::ImageSample> dataset,
                           const textenc::TextEncoderParams& text_encoder,
                           const DenoiserArch& arch, int T, const TrainConfig& cfg,
                           const ProgressFn& progress) {
  if (dataset.empty()) fail(Errc::EmptyDataset, "cannot train on an empty dataset");
  require(cfg.batch > 0 && cfg.epochs >= 0 && cfg.lr > 0.0, Errc::ConfigError,
          "train config needs batch > 0, epochs >= 0, lr > 0");
  require(cfg.p_uncond >= 0.0 && cfg.p_uncond <= 1.0 && cfg.p_omit >= 0.0 && cfg.p_omit <= 1.0,
          Errc::ConfigError, "train probabilities must lie in [0, 1]");
  text_encoder.validate();

  TrainResult out;
  out.denoiser = DenoiserParams::init(arch, T, cfg.seed);
  out.text_encoder = text_encoder;
  Rng rng(derive_seed(cfg.seed, 0x7a1d));
  constexpr int P = world::kPixelsPerChannel;

  const std::size_t n = dataset.size();
  const std::size_t batch = static_cast<std::size_t>(cfg.batch);
  const int steps_per_epoch = static_cast<int>((n + batch - 1) / batch);
  const int total = steps_per_epoch * cfg.epochs;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  AdamState<float> den_state;
  AdamState<float> txt_state;
  int step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t count = std::min(batch, n - start);
      std::vector<world::ImageSample> items;
      std::vector<int> ts;
      std::vector<std::string> captions;
      std::unique_ptr<bool[]> drops(new bool[count]);
      Mat<float> noise(world::kChannels, static_cast<Eigen::Index>(count) * P);
      for (std::size_t k = 0; k < count; ++k) {
        const auto& s = dataset[order[start + k]];
        items.push_back(s);
        ts.push_back(1 + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(T))));
        const bool omit_hue = uniform01(rng) < cfg.p_omit;
        const bool omit_shape = uniform01(rng) < cfg.p_omit;
        captions.push_back(
            world::caption_with_omissions(s.attrs, s.template_id, omit_hue, omit_shape));
        drops[k] = uniform01(rng) < cfg.p_uncond;
        for (int c = 0; c < world::kChannels; ++c)
          for (int j = 0; j < P; ++j)
            noise(c, static_cast<Eigen::Index>(k) * P + j) = static_cast<float>(standard_normal(rng));
      }
      auto r = train_step_gradients(items, ts, noise, captions,
                                    std::span<const bool>(drops.get(), count), out.denoiser,
                                    out.text_encoder, cfg.train_text_encoder);
      if (!std::isfinite(r.loss)) fail(Errc::NonFiniteLoss, "denoiser loss diverged at step " + std::to_string(step));

      double sq = 0.0;
      for (const auto& [_, g] : r.denoiser_grads) sq += g.squaredNorm();
      for (const auto& [_, g] : r.text_grads) sq += g.squaredNorm();
      const double norm = std::sqrt(sq);
      if (cfg.grad_clip > 0.0 && norm > cfg.grad_clip) {
        const float f = static_cast<float>(cfg.grad_clip / norm);
        for (auto& [_, g] : r.denoiser_grads) g *= f;
        for (auto& [_, g] : r.text_grads) g *= f;
      }
      // Cosine decay to a tenth of the base rate.
      const double progress_frac = total > 1 ? static_cast<double>(step) / (total - 1) : 0.0;
      AdamConfig adam;
      adam.lr = cfg.lr * (0.1 + 0.9 * 0.5 * (1.0 + std::cos(M_PI * progress_frac)));
      adam_update(den_state, out.denoiser.weights, r.denoiser_grads, adam);
      if (cfg.train_text_encoder) adam_update(txt_state, out.text_encoder.weights, r.text_grads, adam);
      out.step_losses.push_back(r.loss);
      if (progress) progress(step, total, r.loss);
      ++step;
    }
  }
  return out;
}

void SamplerConfig::validate(int T) const {
  require(steps >= 1 && steps <= T, Errc::ConfigError,
          "sampler steps must lie in [1, T], got " + std::to_string(steps));
  require(guidance_scale >= 0.0 && std::isfinite(guidance_scale), Errc::ConfigError,
          "guidance_scale must be >= 0");
}

std::vector<int> sampling_timesteps(int T, int steps) {
  require(steps >= 1 && steps <= T, Errc::ConfigError, "sampler steps must lie in [1, T]");
  std::vector<int> ts(static_cast<std::size_t>(steps) + 1);
  for (int k = 0; k <= steps; ++k)
    ts[static_cast<std::size_t>(k)] = static_cast<int>(static_cast<long long>(T) * (steps - k) / steps);
  return ts;
}

Mat<float> initial_latent(std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x5a3e));
  return normal_matrix<float>(rng, world::kChannels, world::kPixelsPerChannel);
}

Mat<float> sample_with(const DenoiserParams& params, const ConditionFn& condition,
                       const SamplerConfig& cfg) {
  cfg.validate(params.T);
  const Schedule schedule = params.schedule();
  const auto ts = sampling_timesteps(params.T, cfg.steps);
  Mat<float> z = initial_latent(cfg.seed);
  for (int k = 0; k < cfg.steps; ++k) {
    const int t = ts[static_cast<std::size_t>(k)];
    const int t_prev = ts[static_cast<std::size_t>(k) + 1];
    const auto pair = predict_noise_pair(params, z, t, condition(k));
    z = ddim_step<float>(z, cfg_noise<float>(pair.uncond, pair.cond, cfg.guidance_scale), t,
                         t_prev, schedule);
  }
  return z.cwiseMax(-1.f).cwiseMin(1.f);
}

Mat<float> sample(const DenoiserParams& params, const PromptEmbedding& cond,
                  const SamplerConfig& cfg) {
  return sample_with(params, [&](int) -> const PromptEmbedding& { return cond; }, cfg);
}

template Mat<float> add_noise(const Mat<float>&, int, const Mat<float>&, const Schedule&);
template Mat<double> add_noise(const Mat<double>&, int, const Mat<double>&, const Schedule&);
template Mat<float> cfg_noise(const Mat<float>&, const Mat<float>&, double);
template Mat<double> cfg_noise(const Mat<double>&, const Mat<double>&, double);
template Mat<float> ddim_step(const Mat<float>&, const Mat<float>&, int, int, const Schedule&);
template Mat<double> ddim_step(const Mat<double>&, const Mat<double>&, int, int, const Schedule&);
template Mat<float> timestep_features(std::span<const int>);
template Mat<double> timestep_features(std::span<const int>);
template ad::Var<float> denoiser_forward(const Bound<float>&, ad::Var<float>,
                                         std::span<const int>, ad::Var<float>);
template ad::Var<double> denoiser_forward(const Bound<double>&, ad::Var<double>,
                                          std::span<const int>, ad::Var<double>);

}  // namespace lab::diffusion
