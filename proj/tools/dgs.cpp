// dgs: decouple, simulate and render splat scenes from a JSON config.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <omp.h>

#include "dgs/config.hpp"
#include "dgs/image_io.hpp"
#include "dgs/metrics.hpp"
#include "dgs/pipeline.hpp"
#include "dgs/ply.hpp"
#include "dgs/splat_ops.hpp"
#include "dgs/synthetic.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  int threads = 0;
  bool quiet = false;
};

void add_common(CLI::App* cmd, Common& c, bool with_stage, std::string* stage) {
  cmd->add_option("-c,--config", c.config, "Pipeline config (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "Override the config seed");
  cmd->add_option("--threads", c.threads, "Worker threads (0 = OpenMP default)")->check(CLI::NonNegativeNumber);
  cmd->add_flag("-q,--quiet", c.quiet, "Suppress progress output");
  if (with_stage)
    cmd->add_option("--stage", *stage, "Stage to run")
        ->check(CLI::IsMember({"all", "decouple", "simulate", "render"}));
}

dgs::PipelineConfig prepare(const Common& c) {
  if (c.threads > 0) omp_set_num_threads(c.threads);
  dgs::PipelineConfig cfg = dgs::load_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  cfg.validate(true);
  return cfg;
}

void run_stages(const Common& c, const std::string& stage) {
  const dgs::PipelineConfig cfg = prepare(c);
  std::ostream* log = c.quiet ? nullptr : &std::cerr;
  if (stage == "all" || stage == "decouple") dgs::run_decouple(cfg, log);
  if (stage == "all" || stage == "simulate") dgs::run_simulate(cfg, log);
  if (stage == "all" || stage == "render") dgs::run_render(cfg, log);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Decoupled splat restoration and simulation"};
  app.require_subcommand(1);

  Common common;
  std::string stage = "all";
  std::string decouple_stage = "decouple", simulate_stage = "simulate", render_stage = "render";

  auto* run = app.add_subcommand("run", "Run pipeline stages in order");
  add_common(run, common, true, &stage);
  auto* decouple = app.add_subcommand("decouple", "Split, restore and carve object and scene");
  add_common(decouple, common, false, nullptr);
  auto* simulate = app.add_subcommand("simulate", "Simulate the restored object against the scene");
  add_common(simulate, common, false, nullptr);
  auto* render = app.add_subcommand("render", "Render simulated frames");
  add_common(render, common, false, nullptr);

  auto* eval = app.add_subcommand("eval", "Chamfer distance between splat centers or PSNR between images");
  std::string ply_a, ply_b, img_a, img_b;
  eval->add_option("--ply-a", ply_a, "First splat PLY")->check(CLI::ExistingFile);
  eval->add_option("--ply-b", ply_b, "Second splat PLY")->check(CLI::ExistingFile);
  eval->add_option("--image-a", img_a, "First PPM image")->check(CLI::ExistingFile);
  eval->add_option("--image-b", img_b, "Second PPM image")->check(CLI::ExistingFile);

  auto* synth = app.add_subcommand("synth", "Write the synthetic sphere-on-slab case");
  std::string synth_dir;
  std::vector<double> dv{1.0, 0.0, 0.0};
  synth->add_option("-o,--out", synth_dir, "Output directory")->required();
  synth->add_option("--dv", dv, "Impulse at frame 0")->expected(3);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    if (*run) {
      run_stages(common, stage);
    } else if (*decouple) {
      run_stages(common, decouple_stage);
    } else if (*simulate) {
      run_stages(common, simulate_stage);
    } else if (*render) {
      run_stages(common, render_stage);
    } else if (*eval) {
      bool any = false;
      if (!ply_a.empty() || !ply_b.empty()) {
        if (ply_a.empty() || ply_b.empty())
          throw dgs::ConfigError("eval: --ply-a and --ply-b go together");
        const auto a = dgs::centers_of(dgs::load_ply(ply_a).kernels);
        const auto b = dgs::centers_of(dgs::load_ply(ply_b).kernels);
        std::cout << "chamfer " << dgs::chamfer_distance(a, b) << '\n';
        any = true;
      }
      if (!img_a.empty() || !img_b.empty()) {
        if (img_a.empty() || img_b.empty())
          throw dgs::ConfigError("eval: --image-a and --image-b go together");
        std::cout << "psnr " << dgs::psnr(dgs::read_ppm(img_a), dgs::read_ppm(img_b)) << '\n';
        any = true;
      }
      if (!any) throw dgs::ConfigError("eval: give --ply-a/--ply-b or --image-a/--image-b");
    } else if (*synth) {
      const auto path = dgs::write_sphere_on_slab_case(synth_dir, {}, dgs::Vec3(dv[0], dv[1], dv[2]));
      std::cout << path.string() << '\n';
    }
  } catch (const dgs::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const dgs::FormatError& e) {
    std::cerr << "format error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const dgs::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
