#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "mf/numeric/parameters.hpp"

MF_NUMERIC_BEGIN

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
  double clip_norm = 1.0;  // global gradient-norm clip; <= 0 disables
};

// Adam with decoupled weight decay. Only parameters that currently require
// grad and hold a gradient are updated.
class AdamW {
 public:
  AdamW(ParameterStore& store, AdamWConfig config = {});

  // Returns the pre-clip global gradient norm.
  double step(double lr);
  std::int64_t steps_taken() const { return t_; }

  void save(const std::filesystem::path& path) const;
  void load(const std::filesystem::path& path);

 private:
  ParameterStore& store_;
  AdamWConfig config_;
  std::vector<std::vector<Scalar>> m_, v_;
  std::vector<std::int64_t> counts_;
  std::int64_t t_ = 0;
};

// Linear warmup to base_lr over warmup_steps, constant afterwards.
double warmup_constant_lr(double base_lr, std::int64_t step, std::int64_t warmup_steps);

MF_NUMERIC_END
