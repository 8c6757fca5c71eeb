#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "mf/common/error.hpp"
#include "mf/numeric/scalar.hpp"

MF_NUMERIC_BEGIN
namespace dit {

// Convention: z0 is data, z1 is unit-Gaussian noise, so t = 0 is clean.
inline constexpr bool kNoiseAtTOne = true;

// t = sigmoid(g), g ~ Normal(0, 1).
inline double sample_timestep(std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  return 1.0 / (1.0 + std::exp(-normal(rng)));
}

template <class T>
struct FlowState {
  std::vector<T> z_t;
  std::vector<T> v_t;
};

// z_t = t·z1 + (1−t)·z0 and v_t = z1 − z0, evaluated in double.
template <class T>
FlowState<T> flow_interpolate(std::span<const T> z0, std::span<const T> z1, double t) {
  if (z0.size() != z1.size()) throw DimensionError("flow_interpolate: z0 and z1 differ in size");
  if (!(t >= 0 && t <= 1)) throw ContractError("flow_interpolate: t outside [0, 1]");
  FlowState<T> out;
  out.z_t.resize(z0.size());
  out.v_t.resize(z0.size());
  for (std::size_t i = 0; i < z0.size(); ++i) {
    const double a = z0[i], b = z1[i];
    out.z_t[i] = static_cast<T>(t * b + (1 - t) * a);
    out.v_t[i] = static_cast<T>(b - a);
  }
  return out;
}

// Writes v(z, t) into the output span.
using VelocityField = std::function<void(std::span<const double> z, double t, std::span<double> v)>;

// Integrates dz/dt = v from t = 1 to t = 0 with uniform Euler steps.
inline std::vector<double> euler_sample(std::vector<double> z, int steps, const VelocityField& field) {
  if (steps < 1) throw ContractError("sampler needs at least one step");
  std::vector<double> v(z.size());
  const double dt = 1.0 / steps;
  for (int k = 0; k < steps; ++k) {
    const double t = 1.0 - double(k) / steps;
    field(z, t, v);
    for (std::size_t i = 0; i < z.size(); ++i) z[i] -= dt * v[i];
  }
  return z;
}

}  // namespace dit
MF_NUMERIC_END
