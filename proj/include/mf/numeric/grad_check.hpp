#pragma once

#include <cstddef>
#include <functional>

#include "mf/numeric/tensor.hpp"

MF_NUMERIC_BEGIN

struct GradCheckReport {
  double max_relative_error = 0;  // max |analytic - numeric| / max(1, |numeric|)
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  // Coordinates skipped because the function has a kink inside [x-eps, x+eps]
  // (the two one-sided difference quotients disagree by more than
  // kink_threshold). ReLU-style dead branches land here.
  std::size_t exempted = 0;
};

struct GradCheckOptions {
  double eps = 1e-3;
  double kink_threshold = 0.1;
  // When nonzero, at most this many evenly strided coordinates per leaf
  // (always including the first and last) are perturbed.
  std::size_t max_per_leaf = 0;
};

// Central-difference check of backward() for a scalar-valued fn. Finite
// differences are accumulated in double. Throws NumericError naming the
// coordinate when fn produces a non-finite value.
GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& fn, const Tensor& point,
                           GradCheckOptions options = {});

// Variant over a set of leaf tensors already wired into fn (e.g. model
// parameters); every coordinate of every tensor is perturbed in turn.
GradCheckReport grad_check_leaves(const std::function<Tensor()>& fn, std::vector<Tensor> leaves,
                                  GradCheckOptions options = {});

MF_NUMERIC_END
