// Command-line entry points: synth, condition, train, generate, eval, serve.

#include <fmt/format.h>

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <iostream>

#include "mf/conditioning/package.hpp"
#include "mf/dit/generate.hpp"
#include "mf/dit/train.hpp"
#include "mf/eval/report.hpp"
#include "mf/service/server.hpp"
#include "mf/synth/dataset.hpp"
#include "mf/synth/manifest.hpp"

namespace fs = std::filesystem;
using namespace mf;

namespace {

constexpr int kUsageExit = 2;

struct SynthArgs {
  std::size_t count = 8;
  std::uint64_t seed = 0;
  fs::path out = "data";
  int frames = 17, width = 64, height = 64;
};

struct ConditionArgs {
  fs::path spec, out;
  int points = cond::kDefaultPointsPerObject;
  int stride = cond::kDefaultStride;
  int radius = geom::kDefaultSplatRadius;
};

struct TrainArgs {
  fs::path data, out;
  int stage0 = 1200, stage1 = 1000, stage2 = 800;
  int batch = 4;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  int checkpoint_every = 250;
};

struct GenerateArgs {
  fs::path checkpoint, spec, out;
  int steps = dit::kDefaultSamplerSteps;
  std::optional<std::uint64_t> seed;
  bool no_vcm = false, no_omm = false, no_guidance = false;
};

struct EvalArgs {
  fs::path spec, video, ann;
  std::string id;
};

struct ServeArgs {
  std::string host = "127.0.0.1";
  int port = service::kDefaultPort;
  int workers = 1;
  fs::path data_dir;
};

void run_synth(const SynthArgs& a) {
  synth::DatasetOptions opts;
  opts.base.num_frames = a.frames;
  opts.base.width = a.width;
  opts.base.height = a.height;
  const auto index = synth::make_dataset(a.count, a.seed, a.out, opts, [](std::size_t done, std::size_t total) {
    std::fprintf(stderr, "\rsynth %zu/%zu", done, total);
  });
  std::fprintf(stderr, "\n");
  // A spec per clip commanding its annotated motion, ready for condition/eval.
  for (const auto& clip : index.clips) {
    const auto dir = a.out / clip.id;
    const auto spec = synth::spec_from_annotation(synth::read_manifest(dir / "annotation.json"), dir);
    cond::write_spec(spec, dir / "spec.json");
  }
  std::cout << fmt::format("{} clips in {}\n", index.clips.size(), a.out.string());
}

void run_condition(const ConditionArgs& a) {
  const auto spec = cond::read_spec(a.spec);
  cond::PackageOptions opts;
  opts.points_per_object = a.points;
  opts.stride = a.stride;
  opts.splat_radius = a.radius;
  cond::write_package(cond::build_control_package(spec, opts), a.out);
  std::cout << fmt::format("package written to {}\n", a.out.string());
}

void run_train(const TrainArgs& a) {
  dit::ModelConfig mc;
  mc.seed = a.seed;
  const auto data = dit::load_dataset(mc, a.data);
  dit::Model model(mc);
  dit::TrainConfig tc;
  tc.stage_steps = {a.stage0, a.stage1, a.stage2};
  tc.batch = a.batch;
  tc.lr = a.lr;
  tc.seed = a.seed;
  tc.checkpoint_every = a.checkpoint_every;
  dit::train(model, data, tc, a.out, [&](const dit::TrainProgress& p) {
    if (p.step % 50 == 0 || p.step + 1 == tc.total_steps())
      std::fprintf(stderr, "step %d/%d stage %d loss %.4f lr %.2e\n", p.step + 1, tc.total_steps(), p.stage, p.loss,
                   p.lr);
  });
  std::cout << fmt::format("checkpoint written to {}\n", a.out.string());
}

void run_generate(const GenerateArgs& a) {
  auto spec = cond::read_spec(a.spec);
  if (a.seed) spec.seed = *a.seed;
  const auto model = dit::load_model(a.checkpoint);
  dit::GenerateOptions o;
  o.steps = a.steps;
  o.vcm = !a.no_vcm;
  o.omm = !a.no_omm;
  o.drop_guidance = a.no_guidance;
  synth::write_frames(dit::generate(model, spec, o), a.out);
  std::cout << fmt::format("frames written to {}\n", a.out.string());
}

void run_eval(const EvalArgs& a) {
  const auto spec = cond::read_spec(a.spec);
  const auto video = synth::read_frames(a.video);
  std::optional<synth::SceneAnnotation> ann;
  if (!a.ann.empty()) ann = synth::read_manifest(a.ann);
  const auto report = eval::evaluate(spec, video, ann ? &*ann : nullptr, a.id);
  std::cout << eval::report_to_json(report);
}

void run_serve(const ServeArgs& a) {
  service::ServiceOptions o;
  o.data_dir = a.data_dir.empty() ? service::data_dir_from_env() : a.data_dir;
  o.workers = a.workers;
  std::fprintf(stderr, "serving %s on http://%s:%d\n", o.data_dir.string().c_str(), a.host.c_str(), a.port);
  service::serve(o, a.host, a.port);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Motion-controlled video toolkit"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  synth->add_option("--count", sa.count, "Number of clips")->capture_default_str();
  synth->add_option("--seed", sa.seed, "Base seed")->capture_default_str();
  synth->add_option("--out", sa.out, "Output directory")->capture_default_str();
  synth->add_option("--frames", sa.frames, "Frames per clip")->capture_default_str();
  synth->add_option("--width", sa.width, "Frame width")->capture_default_str();
  synth->add_option("--height", sa.height, "Frame height")->capture_default_str();

  ConditionArgs ca;
  auto* condition = app.add_subcommand("condition", "Build the control package of a spec");
  condition->add_option("--spec", ca.spec, "ControlSpec JSON")->required();
  condition->add_option("--out", ca.out, "Output directory")->required();
  condition->add_option("--points", ca.points, "Points per object")->capture_default_str();
  condition->add_option("--stride", ca.stride, "Temporal stride")->capture_default_str();
  condition->add_option("--radius", ca.radius, "Splat radius in pixels")->capture_default_str();

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train the toy model");
  train->add_option("--data", ta.data, "Synthetic dataset directory")->required();
  train->add_option("--out", ta.out, "Checkpoint directory")->required();
  train->add_option("--stage0", ta.stage0, "Base steps")->capture_default_str();
  train->add_option("--stage1", ta.stage1, "Camera-control steps")->capture_default_str();
  train->add_option("--stage2", ta.stage2, "Object-motion steps")->capture_default_str();
  train->add_option("--batch", ta.batch, "Batch size")->capture_default_str();
  train->add_option("--lr", ta.lr, "Peak learning rate")->capture_default_str();
  train->add_option("--seed", ta.seed, "Seed")->capture_default_str();
  train->add_option("--checkpoint-every", ta.checkpoint_every, "Steps between checkpoints")->capture_default_str();

  GenerateArgs ga;
  auto* generate = app.add_subcommand("generate", "Generate a video for a spec");
  generate->add_option("--checkpoint", ga.checkpoint, "Checkpoint directory")->required();
  generate->add_option("--spec", ga.spec, "ControlSpec JSON")->required();
  generate->add_option("--out", ga.out, "Frame directory")->required();
  generate->add_option("--steps", ga.steps, "Sampler steps")->capture_default_str();
  generate->add_option("--seed", ga.seed, "Override the spec seed");
  generate->add_flag("--no-vcm", ga.no_vcm, "Disable camera control");
  generate->add_flag("--no-omm", ga.no_omm, "Disable object trajectories");
  generate->add_flag("--no-guidance", ga.no_guidance, "Zero the guidance renders");

  EvalArgs ea;
  auto* evaluate = app.add_subcommand("eval", "Print the metrics report of a video");
  evaluate->add_option("--spec", ea.spec, "ControlSpec JSON")->required();
  evaluate->add_option("--video", ea.video, "Frame directory")->required();
  evaluate->add_option("--ann", ea.ann, "Scene annotation for camera errors");
  evaluate->add_option("--id", ea.id, "Clip id for the report");

  ServeArgs va;
  auto* serve = app.add_subcommand("serve", "Run the HTTP service");
  serve->add_option("--host", va.host, "Bind address")->capture_default_str();
  serve->add_option("--port", va.port, "Port")->capture_default_str();
  serve->add_option("--workers", va.workers, "Generation workers")->capture_default_str();
  serve->add_option("--data-dir", va.data_dir, "Artifact root (default $MF_DATA_DIR)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsageExit;
  }

  try {
    if (*synth) run_synth(sa);
    if (*condition) run_condition(ca);
    if (*train) run_train(ta);
    if (*generate) run_generate(ga);
    if (*evaluate) run_eval(ea);
    if (*serve) run_serve(va);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
