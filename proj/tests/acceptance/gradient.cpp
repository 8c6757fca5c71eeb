#include "gradient.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <chrono>

#include "../unit/dit_fixtures.hpp"
#include "mf/dit/flow.hpp"
#include "mf/numeric/grad_check.hpp"
#include "mf/numeric/ops.hpp"

namespace mf::acceptance {

using namespace mf::dit;

namespace {

constexpr int kSeeds = 5;
constexpr std::size_t kCoordinatesPerLeaf = 32;
constexpr double kTolerance = 1e-4;
constexpr double kBudgetSeconds = 120;

}  // namespace

GradientOutcome check_model_gradients() {
  const auto start = std::chrono::steady_clock::now();
  double worst = 0;
  std::size_t checked = 0, exempted = 0;
  for (std::uint64_t seed = 1; seed <= kSeeds; ++seed) {
    Model model(testing::tiny_config(seed));
    std::mt19937_64 rng(seed * 31);
    testing::randomize_parameters(model, rng);
    const auto cond = testing::random_conditioning(model.config(), {2, 1}, rng);
    const auto z0 = testing::latent_shaped(model.config(), 2, rng);
    const auto z1 = testing::latent_shaped(model.config(), 2, rng);
    std::uniform_real_distribution<double> ut(0.1, 0.9);
    const std::vector<double> t{ut(rng), ut(rng)};
    std::vector<Scalar> zt(z0.numel()), vt(z0.numel());
    const auto per = z0.numel() / 2;
    for (std::size_t b = 0; b < 2; ++b) {
      const auto fs =
          flow_interpolate<Scalar>(z0.values().subspan(b * per, per), z1.values().subspan(b * per, per), t[b]);
      std::ranges::copy(fs.z_t, zt.begin() + std::ptrdiff_t(b * per));
      std::ranges::copy(fs.v_t, vt.begin() + std::ptrdiff_t(b * per));
    }
    const Tensor z_t(z0.shape(), zt), v_t(z0.shape(), vt);
    std::vector<Tensor> leaves;
    for (const auto& [name, p] : model.parameters().entries())
      if (!is_decoder_parameter(name)) leaves.push_back(p);
    GradCheckOptions options;
    options.max_per_leaf = kCoordinatesPerLeaf;
    const auto report =
        grad_check_leaves([&] { return ops::mse(model.velocity(z_t, t, cond), v_t); }, leaves, options);
    worst = std::max(worst, report.max_relative_error);
    checked += report.checked;
    exempted += report.exempted;
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {worst < kTolerance && seconds < kBudgetSeconds,
          fmt::format("{} seeds, {} coordinates ({} at kinks), max relative error {:.2e}, {:.1f} s", kSeeds, checked,
                      exempted, worst, seconds)};
}

}  // namespace mf::acceptance
