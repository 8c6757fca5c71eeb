#pragma once

#include <string>

namespace mf::acceptance {

struct GradientOutcome {
  bool pass = false;
  std::string detail;
};

// Loss gradient of the tiny full model against central differences, run on
// the 64-bit engine.
GradientOutcome check_model_gradients();

}  // namespace mf::acceptance
