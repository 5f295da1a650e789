// lab: command-line front end for data, training, discovery and experiments.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "lab/error.hpp"
#include "lab/harness.hpp"

namespace {

using namespace lab;
using namespace lab::harness;

constexpr int kOk = 0;
constexpr int kValidation = 1;
constexpr int kRuntime = 2;

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  int threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "JSON run configuration (defaults apply when omitted)");
  cmd->add_option("--out", c.out, "artifact root (default: $LAB_DATA_DIR, else ./lab-out)");
  cmd->add_option("--seed", c.seed, "overrides the config seed");
  cmd->add_option("--threads", c.threads, "worker threads for generation")->check(CLI::PositiveNumber);
}

int report_error(const std::string& code, const std::string& message, int status) {
  nlohmann::json j{{"error", code}, {"message", message}, {"exit_code", status}};
  std::cerr << j.dump() << "\n";
  return status;
}

bool is_validation(Errc code) {
  return code == Errc::ConfigError || code == Errc::UnknownKey || code == Errc::UnknownToken ||
         code == Errc::TooLong || code == Errc::UnparseablePrompt;
}

Context make_context(const Common& c) {
  RunConfig cfg = c.config.empty() ? parse_config(Json::object()) : load_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  std::string out = c.out;
  if (out.empty()) {
    const char* env = std::getenv("LAB_DATA_DIR");
    out = env && *env ? env : "lab-out";
  }
  Context ctx(std::move(cfg), out, c.threads);
  ctx.log = [](const std::string& line) { std::cerr << line << "\n"; };
  return ctx;
}

void print_rows(const std::vector<MetricRow>& rows) { std::cout << metrics_csv(rows); }

void write_blob(const fs::path& path, const std::vector<world::ImageSample>& data) {
  fs::create_directories(path.parent_path());
  io::save_checkpoint(dataset_tensors(data), path);
  auto manifest = path;
  manifest.replace_extension(".csv");
  io::write_file_atomic(manifest, dataset_manifest(data));
  std::cout << "wrote " << data.size() << " samples to " << path.string() << " and " << manifest.string()
            << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Direction-vector steering laboratory"};
  app.require_subcommand(1);
  Common common;

  auto* make_data = app.add_subcommand("make-data", "write the training datasets and manifests");
  auto* train_den = app.add_subcommand("train-denoiser", "train a denoiser and its text encoder");
  std::string variant = "m1";
  train_den->add_option("--model", variant, "m1, m2 (frozen m1 text encoder) or fair")
      ->check(CLI::IsMember({"m1", "m2", "fair"}));
  auto* train_oracle = app.add_subcommand("train-oracle", "train the attribute oracle");
  auto* discover = app.add_subcommand("discover", "discover a direction vector");
  std::string which = "safe";
  discover->add_option("--vector", which, "safe, dense, second or fair")
      ->check(CLI::IsMember({"safe", "dense", "second", "fair"}));
  auto* generate = app.add_subcommand("generate", "sample images as PPM files");
  std::vector<std::string> prompts;
  int n_images = 0;
  generate->add_option("--prompt", prompts, "prompt (repeatable; default: eval.neutral_prompts)");
  generate->add_option("--n", n_images, "image count (default: one per prompt)")->check(CLI::NonNegativeNumber);
  auto* evaluate = app.add_subcommand("evaluate", "score the configured steering plan");
  auto* experiment = app.add_subcommand("experiment", "run a named experiment recipe");
  std::string exp_name;
  experiment->add_option("name", exp_name, "recipe name")->required()->check(CLI::IsMember(experiment_names()));
  auto* report = app.add_subcommand("report", "summarize every metrics CSV");
  for (auto* cmd : {make_data, train_den, train_oracle, discover, generate, evaluate, experiment, report})
    add_common(cmd, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error("UsageError", e.what(), kValidation);
  }

  try {
    Context ctx = make_context(common);
    Artifacts art(ctx);

    if (*make_data) {
      write_blob(art.dataset_path(ModelVariant::M1), art.dataset(ModelVariant::M1));
      write_blob(art.dataset_path(ModelVariant::Fair), art.dataset(ModelVariant::Fair));
    } else if (*train_den) {
      const auto v = variant == "m2" ? ModelVariant::M2 : variant == "fair" ? ModelVariant::Fair : ModelVariant::M1;
      art.model(v);
      std::cout << "denoiser " << variant << ": " << art.model_path(v).string() << "\n";
    } else if (*train_oracle) {
      art.oracle();
      const auto acc = art.oracle_accuracy();
      const auto n = static_cast<std::int64_t>(ctx.cfg.oracle.n_holdout);
      std::vector<MetricRow> rows{{ctx.cfg.run_id, "oracle_accuracy_shape", acc[0], n, ctx.digest},
                                  {ctx.cfg.run_id, "oracle_accuracy_hue", acc[1], n, ctx.digest},
                                  {ctx.cfg.run_id, "oracle_accuracy_marker", acc[2], n, ctx.digest}};
      write_metrics(ctx.out / "metrics" / "train-oracle.csv", rows);
      print_rows(rows);
    } else if (*discover) {
      if (which == "fair") {
        art.fair_vectors();
        for (const auto& a : ctx.cfg.fair.attributes)
          std::cout << "vector: " << art.vector_path("fair_" + a).string() << "\n";
      } else {
        if (which == "second") art.second_vector();
        else art.safe_vector(which == "dense" ? std::optional(anchoring::VectorKind::Dense) : std::nullopt);
        const auto file = which == "second" ? std::string("safe_second")
                          : which == "dense" ? std::string("safe_dense")
                                             : "safe_" + std::string(anchoring::name(ctx.cfg.anchor.kind));
        std::cout << "vector: "
                  << (which == "safe" && ctx.cfg.paths.vector ? fs::path(*ctx.cfg.paths.vector)
                                                               : art.vector_path(file))
                         .string()
                  << "\n";
      }
    } else if (*generate) {
      if (prompts.empty()) prompts = ctx.cfg.eval.neutral_prompts;
      const int n = n_images > 0 ? n_images : static_cast<int>(prompts.size());
      const auto plan = plan_from_config(ctx.cfg);
      const auto v = plan.mode == steering::PlanMode::FairSample ? ModelVariant::Fair : ModelVariant::M1;
      const auto list = cycle_prompts(prompts, n);
      const auto seeds = image_seeds(ctx.cfg, n);
      const auto images = generate_images(art.model(v), list, seeds, plan, ctx.cfg.sampler, ctx.threads);
      const auto dir = ctx.out / "images";
      fs::create_directories(dir);
      std::string manifest = "file,prompt,seed,config_digest\n";
      for (int i = 0; i < n; ++i) {
        const auto file = ctx.cfg.run_id + "_" + std::to_string(i) + ".ppm";
        io::write_file_atomic(dir / file, encode_ppm(images[static_cast<std::size_t>(i)], ctx.digest));
        manifest += file + "," + list[static_cast<std::size_t>(i)] + "," +
                    std::to_string(seeds[static_cast<std::size_t>(i)]) + "," + ctx.digest + "\n";
      }
      io::write_file_atomic(dir / "manifest.csv", manifest);
      std::cout << "wrote " << n << " images to " << dir.string() << "\n";
    } else if (*evaluate) {
      const auto rows = run_evaluate(art, ctx);
      write_metrics(ctx.out / "metrics" / "evaluate.csv", rows);
      print_rows(rows);
    } else if (*experiment) {
      const auto rows = run_experiment(exp_name, art, ctx);
      write_metrics(ctx.out / "metrics" / (exp_name + ".csv"), rows);
      print_rows(rows);
    } else if (*report) {
      const auto text = report_csv(ctx.out / "metrics");
      io::write_file_atomic(ctx.out / "report.csv", text);
      std::cout << text;
    }
    return kOk;
  } catch (const Error& e) {
    return report_error(std::string(errc_name(e.code())), e.what(),
                        is_validation(e.code()) ? kValidation : kRuntime);
  } catch (const std::exception& e) {
    return report_error("RuntimeError", e.what(), kRuntime);
  }
}
