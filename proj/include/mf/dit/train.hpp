#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <vector>

#include "mf/dit/data.hpp"
#include "mf/dit/model.hpp"

MF_NUMERIC_BEGIN
namespace dit {

struct TrainConfig {
  // Stage 0: base warmup; stage 1: camera control (VCM); stage 2: object dynamics (OMM).
  std::array<int, 3> stage_steps{1200, 1000, 800};
  int batch = 4;
  double lr = 1e-3;
  int warmup = 100;
  double weight_decay = 0.01;
  // Probability per stage that a sample's guidance renders are zeroed.
  std::array<double, 3> guidance_dropout{0.0, 0.2, 0.2};
  std::uint64_t seed = 0;
  int checkpoint_every = 250;

  int total_steps() const { return stage_steps[0] + stage_steps[1] + stage_steps[2]; }
  int stage_at(int step) const;
  int stage_start(int stage) const;
};

// Marks the parameters a stage updates as trainable and freezes the rest.
void select_stage(Model& model, int stage);
ForwardOptions stage_forward_options(int stage);

struct StepResult {
  Tensor loss;          // flow-matching loss
  Tensor decoder_loss;  // stage 0 only
};

// Samples t and noise from rng, builds the flow state and returns the losses.
// Throws NumericError if the loss is not finite.
StepResult training_step(const Model& model, const Batch& batch, int stage, std::mt19937_64& rng);

struct TrainProgress {
  int step;
  int stage;
  double loss;
  double lr;
};

// Trains into out_dir (model.ckpt, optimizer.ckpt, train_state.json,
// train_log.csv). A directory holding a previous state resumes from its step.
void train(Model& model, const std::vector<ClipTensors>& data, const TrainConfig& config,
           const std::filesystem::path& out_dir, const std::function<void(const TrainProgress&)>& progress = {});

void save_model(const Model& model, const std::filesystem::path& dir);
// Reads model.json and model.ckpt from a training output directory.
Model load_model(const std::filesystem::path& dir);

}  // namespace dit
MF_NUMERIC_END
