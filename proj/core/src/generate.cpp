#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>

#include "lab/error.hpp"
#include "lab/harness.hpp"

namespace lab::harness {

std::vector<std::string> cycle_prompts(std::span<const std::string> prompts, int n) {
  require(!prompts.empty(), Errc::EmptyList, "no prompts to cycle");
  std::vector<std::string> out;
  out.reserve(static_cast<std::size_t>(std::max(n, 0)));
  for (int i = 0; i < n; ++i) out.push_back(prompts[static_cast<std::size_t>(i) % prompts.size()]);
  return out;
}

std::vector<std::uint64_t> image_seeds(const RunConfig& cfg, int n, std::uint64_t stream) {
  const auto base = derive_seed(component_seed(cfg, SeedTag::Generate), stream);
  std::vector<std::uint64_t> out;
  for (int i = 0; i < n; ++i) out.push_back(derive_seed(base, static_cast<std::uint64_t>(i)));
  return out;
}

std::vector<world::Pixels> generate_images(const Model& model, std::span<const std::string> prompts,
                                           std::span<const std::uint64_t> seeds,
                                           const steering::SteeringPlan& plan,
                                           const SamplerSection& sampler, int threads) {
  require(prompts.size() == seeds.size(), Errc::LengthMismatch,
          std::to_string(prompts.size()) + " prompts but " + std::to_string(seeds.size()) + " seeds");
  plan.validate(sampler.steps);
  std::map<std::string, textenc::PromptEmbedding> encoded;
  for (const auto& p : prompts)
    if (!encoded.count(p)) encoded.emplace(p, textenc::encode_text(p, model.text));
  const bool plain = plan.mode == steering::PlanMode::Fixed && plan.entries.empty();

  std::vector<world::Pixels> out(prompts.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto work = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= out.size()) return;
      try {
        diffusion::SamplerConfig sc{sampler.steps, sampler.guidance_scale, seeds[i]};
        const auto& cond = encoded.at(prompts[i]);
        out[i] = plain ? diffusion::sample(model.denoiser, cond, sc)
                       : steering::guided_sample(model.denoiser, cond, plan, sc);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        next.store(out.size());
      }
    }
  };
  const int n_threads = std::clamp(threads, 1, static_cast<int>(std::max<std::size_t>(out.size(), 1)));
  if (n_threads == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(work);
  }
  if (error) std::rethrow_exception(error);
  return out;
}

steering::SteeringPlan plan_from_config(const RunConfig& cfg) {
  auto load = [](const std::string& path) {
    require(fs::exists(path), Errc::MissingPrerequisite, "vector checkpoint not found: " + path);
    return vector_from_tensors(io::load_checkpoint(path));
  };
  steering::SteeringPlan plan;
  plan.warm_up_step = cfg.steering.warm_up_step;
  if (cfg.steering.mode == "fair_sample") {
    plan.mode = steering::PlanMode::FairSample;
    for (const auto& p : cfg.steering.fair_vectors) plan.fair_set.push_back(load(p));
  } else {
    for (const auto& v : cfg.steering.vectors) plan.entries.push_back({load(v.path), v.beta});
  }
  return plan;
}

}  // namespace lab::harness
