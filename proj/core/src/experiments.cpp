#include <cmath>
#include <cstring>
#include <limits>

#include <Eigen/SVD>

#include "lab/error.hpp"
#include "lab/harness.hpp"

namespace lab::harness {

namespace {

// Seed streams of the image sets; conditions within one set share seeds.
enum Stream : std::uint64_t { kUnsafe = 1, kNeutral = 2, kFair = 3, kSteerCheck = 4 };

struct ImageSet {
  std::vector<std::string> prompts;
  std::vector<std::uint64_t> seeds;
};

class Recipe {
 public:
  Recipe(Artifacts& a, const Context& ctx) : art(a), ctx(ctx), cfg(ctx.cfg) {}

  void add(const std::string& metric, double value, std::int64_t n) {
    rows.push_back({cfg.run_id, metric, value, n, ctx.digest});
  }

  ImageSet set(std::span<const std::string> prompts, int n, Stream s) const {
    return {cycle_prompts(prompts, n), image_seeds(cfg, n, s)};
  }
  ImageSet unsafe_set() const { return set(cfg.eval.unsafe_prompts, cfg.eval.n_images, kUnsafe); }
  ImageSet neutral_set() const { return set(cfg.eval.neutral_prompts, cfg.eval.n_images, kNeutral); }

  std::vector<world::Pixels> gen(ModelVariant v, const ImageSet& s, const steering::SteeringPlan& plan) {
    return generate_images(art.model(v), s.prompts, s.seeds, plan, cfg.sampler, ctx.threads);
  }

  double unsafe(const std::vector<world::Pixels>& images) { return eval::unsafe_ratio(images, art.oracle()); }
  double aligned(const std::vector<world::Pixels>& images, const ImageSet& s) {
    return eval::alignment(images, s.prompts, art.oracle());
  }

  /// Clean renders with the attributes each prompt states.
  Mat<double> reference_features(const ImageSet& s) {
    Rng rng(derive_seed(component_seed(cfg, SeedTag::Generate), 0x7ef));
    std::vector<world::Pixels> ref;
    for (const auto& p : s.prompts) {
      const auto want = eval::parse_prompt(p);
      world::AttributeTuple a;
      a.shape = want.shape.value_or(world::kShapes[uniform_index(rng, 2)]);
      a.hue = want.hue.value_or(world::kHues[uniform_index(rng, 3)]);
      a.marker = world::Marker::Clean;
      ref.push_back(world::render(a, rng()));
    }
    return eval::feature_matrix(eval::classify_batch(art.oracle(), ref));
  }
  double frechet_to(const Mat<double>& ref, const std::vector<world::Pixels>& images) {
    return eval::frechet(eval::feature_matrix(eval::classify_batch(art.oracle(), images)), ref);
  }

  static steering::SteeringPlan none() {
    steering::SteeringPlan p;
    p.warm_up_step = 0;
    return p;
  }
  steering::SteeringPlan fixed(const anchoring::DirectionVector& d, double beta,
                               std::optional<int> warm_up = {}) const {
    steering::SteeringPlan p;
    p.entries.push_back({d, beta});
    p.warm_up_step = warm_up.value_or(cfg.steering.warm_up_step);
    return p;
  }

  Artifacts& art;
  const Context& ctx;
  const RunConfig& cfg;
  std::vector<MetricRow> rows;
};

double singular_ratio(const anchoring::DirectionVector& d) {
  const Mat<double> m = anchoring::materialize(d).cast<double>();
  Eigen::JacobiSVD<Mat<double>> svd(m);
  const auto& s = svd.singularValues();
  if (s.size() < 2 || s(1) == 0.0) return std::numeric_limits<double>::infinity();
  return s(0) / s(1);
}

std::vector<std::int64_t> shape_counts(const std::vector<eval::Classification>& labels) {
  std::vector<std::int64_t> counts(world::kShapes.size(), 0);
  for (const auto& l : labels) ++counts[static_cast<std::size_t>(l.attrs.shape)];
  return counts;
}

void safe_suppression(Recipe& r) {
  const auto acc = r.art.oracle_accuracy();
  const auto n_hold = static_cast<std::int64_t>(r.cfg.oracle.n_holdout);
  r.add("oracle_accuracy_shape", acc[0], n_hold);
  r.add("oracle_accuracy_hue", acc[1], n_hold);
  r.add("oracle_accuracy_marker", acc[2], n_hold);

  const auto& d = r.art.safe_vector();
  const auto plan = r.fixed(d, 1.0);
  const auto us = r.unsafe_set();
  const auto ns = r.neutral_set();
  const auto n = static_cast<std::int64_t>(us.prompts.size());
  const double base_u = r.unsafe(r.gen(ModelVariant::M1, us, r.none()));
  const double guided_u = r.unsafe(r.gen(ModelVariant::M1, us, plan));
  const auto base_n_img = r.gen(ModelVariant::M1, ns, r.none());
  const auto guided_n_img = r.gen(ModelVariant::M1, ns, plan);
  const double base_a = r.aligned(base_n_img, ns);
  const double guided_a = r.aligned(guided_n_img, ns);
  r.add("baseline_unsafe_ratio", base_u, n);
  r.add("guided_unsafe_ratio", guided_u, n);
  r.add("guided_to_baseline_unsafe", base_u > 0 ? guided_u / base_u : std::nan(""), n);
  r.add("baseline_neutral_alignment", base_a, n);
  r.add("guided_neutral_alignment", guided_a, n);
  r.add("neutral_alignment_relative_drop", base_a > 0 ? (base_a - guided_a) / base_a : std::nan(""), n);
  r.add("baseline_neutral_unsafe_ratio", r.unsafe(base_n_img), n);
  r.add("guided_neutral_unsafe_ratio", r.unsafe(guided_n_img), n);
  r.add("vector_norm", anchoring::materialize(d).norm(), 1);
}

void fair_generation(Recipe& r) {
  const auto& vectors = r.art.fair_vectors();
  const auto& attrs = r.cfg.fair.attributes;
  const auto fset = r.set(r.cfg.eval.fair_prompts, r.cfg.eval.fair_images, kFair);
  const auto n = static_cast<std::int64_t>(fset.prompts.size());

  steering::SteeringPlan fair_plan;
  fair_plan.mode = steering::PlanMode::FairSample;
  fair_plan.warm_up_step = 0;
  fair_plan.fair_set = vectors;
  const auto base = eval::classify_batch(r.art.oracle(), r.gen(ModelVariant::Fair, fset, r.none()));
  const auto fair = eval::classify_batch(r.art.oracle(), r.gen(ModelVariant::Fair, fset, fair_plan));
  const auto base_counts = shape_counts(base);
  const auto fair_counts = shape_counts(fair);
  r.add("baseline_deviation_ratio", eval::deviation_ratio({base_counts}), n);
  r.add("fair_deviation_ratio", eval::deviation_ratio({fair_counts}), n);
  for (auto s : world::kShapes) {
    const auto i = static_cast<std::size_t>(s);
    r.add("baseline_share_" + std::string(world::name(s)), static_cast<double>(base_counts[i]) / n, n);
    r.add("fair_share_" + std::string(world::name(s)), static_cast<double>(fair_counts[i]) / n, n);
  }

  // How reliably each vector alone produces its attribute.
  const int per = std::max(1, r.cfg.eval.fair_images / static_cast<int>(vectors.size()));
  const auto check = r.set(r.cfg.eval.fair_prompts, per, kSteerCheck);
  for (std::size_t k = 0; k < vectors.size(); ++k) {
    const auto labels =
        eval::classify_batch(r.art.oracle(), r.gen(ModelVariant::Fair, check, r.fixed(vectors[k], 1.0, 0)));
    const auto want = *world::parse_shape(attrs[k]);
    std::int64_t hits = 0;
    for (const auto& l : labels) hits += l.attrs.shape == want;
    r.add("steering_accuracy_" + attrs[k], static_cast<double>(hits) / per, per);
  }
}

void transfer(Recipe& r) {
  const auto& d = r.art.safe_vector();
  const auto us = r.unsafe_set();
  const auto n = static_cast<std::int64_t>(us.prompts.size());
  const double m1_none = r.unsafe(r.gen(ModelVariant::M1, us, r.none()));
  const double m1_vec = r.unsafe(r.gen(ModelVariant::M1, us, r.fixed(d, 1.0)));
  const double m2_none = r.unsafe(r.gen(ModelVariant::M2, us, r.none()));
  const double m2_vec = r.unsafe(r.gen(ModelVariant::M2, us, r.fixed(d, 1.0)));
  const auto ns = r.neutral_set();
  r.add("m1_none_unsafe_ratio", m1_none, n);
  r.add("m1_m1vector_unsafe_ratio", m1_vec, n);
  r.add("m2_none_unsafe_ratio", m2_none, n);
  r.add("m2_m1vector_unsafe_ratio", m2_vec, n);
  r.add("m2_relative_reduction", m2_none > 0 ? (m2_none - m2_vec) / m2_none : std::nan(""), n);
  r.add("m2_neutral_alignment", r.aligned(r.gen(ModelVariant::M2, ns, r.none()), ns), n);
}

void fidelity(Recipe& r) {
  const auto& d = r.art.safe_vector();
  const auto ns = r.neutral_set();
  const auto n = static_cast<std::int64_t>(ns.prompts.size());
  const auto ref = r.reference_features(ns);
  const auto base = r.gen(ModelVariant::M1, ns, r.none());
  const auto guided = r.gen(ModelVariant::M1, ns, r.fixed(d, 1.0));
  r.add("baseline_frechet", r.frechet_to(ref, base), n);
  r.add("guided_frechet", r.frechet_to(ref, guided), n);
  r.add("baseline_alignment", r.aligned(base, ns), n);
  r.add("guided_alignment", r.aligned(guided, ns), n);
}

void init_ablation(Recipe& r) {
  const auto& low = r.art.safe_vector(anchoring::VectorKind::LowRank);
  const auto& dense = r.art.safe_vector(anchoring::VectorKind::Dense);
  const auto us = r.unsafe_set();
  const auto ns = r.neutral_set();
  const auto n = static_cast<std::int64_t>(us.prompts.size());
  const double base = r.unsafe(r.gen(ModelVariant::M1, us, r.none()));
  const double low_u = r.unsafe(r.gen(ModelVariant::M1, us, r.fixed(low, 1.0)));
  const double low_red = base - low_u;

  // Scale the dense vector until its reduction matches the low-rank one.
  double best_beta = 0.0, best_u = base, best_gap = std::numeric_limits<double>::infinity();
  for (int k = 1; k <= 8; ++k) {
    const double beta = 0.25 * k;
    const double u = r.unsafe(r.gen(ModelVariant::M1, us, r.fixed(dense, beta)));
    const double gap = std::abs((base - u) - low_red);
    r.add("dense_unsafe_ratio_beta_" + format_value(beta), u, n);
    if (gap < best_gap) {
      best_gap = gap;
      best_beta = beta;
      best_u = u;
    }
  }
  const auto ref = r.reference_features(ns);
  r.add("baseline_unsafe_ratio", base, n);
  r.add("lowrank_unsafe_ratio", low_u, n);
  r.add("dense_matched_beta", best_beta, 1);
  r.add("dense_matched_unsafe_ratio", best_u, n);
  r.add("reduction_gap", best_gap, n);
  r.add("baseline_frechet", r.frechet_to(ref, r.gen(ModelVariant::M1, ns, r.none())), n);
  r.add("lowrank_frechet", r.frechet_to(ref, r.gen(ModelVariant::M1, ns, r.fixed(low, 1.0))), n);
  r.add("dense_frechet", r.frechet_to(ref, r.gen(ModelVariant::M1, ns, r.fixed(dense, best_beta))), n);
  r.add("lowrank_singular_ratio", singular_ratio(low), 1);
  r.add("dense_singular_ratio", singular_ratio(dense), 1);
}

void beta_sweep(Recipe& r) {
  const auto& d = r.art.safe_vector();
  const auto us = r.unsafe_set();
  const auto n = static_cast<std::int64_t>(us.prompts.size());
  r.add("baseline_unsafe_ratio", r.unsafe(r.gen(ModelVariant::M1, us, r.none())), n);
  std::vector<double> ratios;
  for (double beta : r.cfg.eval.betas) {
    ratios.push_back(r.unsafe(r.gen(ModelVariant::M1, us, r.fixed(d, beta))));
    r.add("unsafe_ratio_beta_" + format_value(beta), ratios.back(), n);
  }
  if (ratios.size() >= 2)
    r.add("spearman_rho", eval::spearman(r.cfg.eval.betas, ratios), static_cast<std::int64_t>(ratios.size()));
}

void combination(Recipe& r) {
  const auto& d1 = r.art.safe_vector();
  const auto& d2 = r.art.second_vector();
  const auto us = r.unsafe_set();
  const auto n = static_cast<std::int64_t>(us.prompts.size());
  steering::SteeringPlan separate;
  separate.warm_up_step = r.cfg.steering.warm_up_step;
  separate.entries = {{d1, 0.5}, {d2, 0.5}};
  steering::SteeringPlan combined;
  combined.warm_up_step = separate.warm_up_step;
  combined.entries = {{anchoring::DirectionVector::dense(steering::combine(separate.entries)), 1.0}};
  const auto a = r.gen(ModelVariant::M1, us, separate);
  const auto b = r.gen(ModelVariant::M1, us, combined);
  std::int64_t same = 0;
  double max_diff = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    same += a[i].size() == b[i].size() &&
            std::memcmp(a[i].data(), b[i].data(), sizeof(float) * static_cast<std::size_t>(a[i].size())) == 0;
    max_diff = std::max(max_diff, static_cast<double>((a[i] - b[i]).cwiseAbs().maxCoeff()));
  }
  r.add("bitwise_identical_fraction", static_cast<double>(same) / n, n);
  r.add("max_abs_difference", max_diff, n);
  r.add("baseline_unsafe_ratio", r.unsafe(r.gen(ModelVariant::M1, us, r.none())), n);
  r.add("vector1_unsafe_ratio", r.unsafe(r.gen(ModelVariant::M1, us, r.fixed(d1, 1.0))), n);
  r.add("vector2_unsafe_ratio", r.unsafe(r.gen(ModelVariant::M1, us, r.fixed(d2, 1.0))), n);
  r.add("separate_unsafe_ratio", r.unsafe(a), n);
  r.add("combined_unsafe_ratio", r.unsafe(b), n);
}

void warmup_sweep(Recipe& r) {
  const auto& d = r.art.safe_vector();
  const auto us = r.unsafe_set();
  const auto ns = r.neutral_set();
  const auto n = static_cast<std::int64_t>(us.prompts.size());
  for (int ws : r.cfg.eval.warm_up_steps) {
    const auto tag = std::to_string(ws);
    r.add("unsafe_ratio_warmup_" + tag, r.unsafe(r.gen(ModelVariant::M1, us, r.fixed(d, 1.0, ws))), n);
    r.add("neutral_alignment_warmup_" + tag, r.aligned(r.gen(ModelVariant::M1, ns, r.fixed(d, 1.0, ws)), ns), n);
  }
}

}  // namespace

const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names{"safe-suppression", "fair-generation", "transfer",
                                              "fidelity",         "init-ablation",   "beta-sweep",
                                              "combination",      "warmup-sweep"};
  return names;
}

std::vector<MetricRow> run_experiment(const std::string& name, Artifacts& artifacts, const Context& ctx) {
  Recipe r(artifacts, ctx);
  if (name == "safe-suppression") safe_suppression(r);
  else if (name == "fair-generation") fair_generation(r);
  else if (name == "transfer") transfer(r);
  else if (name == "fidelity") fidelity(r);
  else if (name == "init-ablation") init_ablation(r);
  else if (name == "beta-sweep") beta_sweep(r);
  else if (name == "combination") combination(r);
  else if (name == "warmup-sweep") warmup_sweep(r);
  else fail(Errc::ConfigError, "unknown experiment \"" + name + "\"");
  return std::move(r.rows);
}

std::vector<MetricRow> run_evaluate(Artifacts& artifacts, const Context& ctx) {
  Recipe r(artifacts, ctx);
  auto plan = plan_from_config(ctx.cfg);
  if (plan.mode == steering::PlanMode::FairSample) {
    const auto s = r.set(ctx.cfg.eval.fair_prompts, ctx.cfg.eval.fair_images, kFair);
    const auto n = static_cast<std::int64_t>(s.prompts.size());
    auto delta = [&](const steering::SteeringPlan& p) {
      return eval::deviation_ratio({shape_counts(eval::classify_batch(r.art.oracle(), r.gen(ModelVariant::Fair, s, p)))});
    };
    r.add("baseline_deviation_ratio", delta(r.none()), n);
    r.add("steered_deviation_ratio", delta(plan), n);
    return std::move(r.rows);
  }
  if (plan.entries.empty()) plan = r.fixed(artifacts.safe_vector(), 1.0);
  const auto us = r.unsafe_set();
  const auto ns = r.neutral_set();
  const auto n = static_cast<std::int64_t>(us.prompts.size());
  r.add("baseline_unsafe_ratio", r.unsafe(r.gen(ModelVariant::M1, us, r.none())), n);
  r.add("steered_unsafe_ratio", r.unsafe(r.gen(ModelVariant::M1, us, plan)), n);
  r.add("baseline_neutral_alignment", r.aligned(r.gen(ModelVariant::M1, ns, r.none()), ns), n);
  r.add("steered_neutral_alignment", r.aligned(r.gen(ModelVariant::M1, ns, plan), ns), n);
  return std::move(r.rows);
}

}  // namespace lab::harness
