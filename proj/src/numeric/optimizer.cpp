#include "mf/numeric/optimizer.hpp"

#include <algorithm>
#include <cmath>

#include "mf/common/error.hpp"

MF_NUMERIC_BEGIN

AdamW::AdamW(ParameterStore& store, AdamWConfig config) : store_(store), config_(config) {
  for (const auto& [_, t] : store_.entries()) {
    m_.emplace_back(t.numel(), Scalar(0));
    v_.emplace_back(t.numel(), Scalar(0));
    counts_.push_back(0);
  }
}

double AdamW::step(double lr) {
  const auto& entries = store_.entries();
  double norm2 = 0;
  for (const auto& [_, t] : entries) {
    if (!t.requires_grad() || !t.has_grad()) continue;
    for (Scalar g : t.grad()) norm2 += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(norm2);
  if (!std::isfinite(norm)) throw NumericError("AdamW: non-finite gradient norm");
  const double clip = (config_.clip_norm > 0 && norm > config_.clip_norm) ? config_.clip_norm / norm : 1.0;

  ++t_;
  for (std::size_t k = 0; k < entries.size(); ++k) {
    Tensor t = entries[k].second;
    if (!t.requires_grad() || !t.has_grad()) continue;
    // Bias correction follows each parameter's own update count so that
    // parameters unfrozen in a later stage start fresh.
    const auto n = ++counts_[k];
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(n));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(n));
    auto values = t.values();
    const auto grad = t.grad();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = grad[i] * clip;
      m[i] = static_cast<Scalar>(config_.beta1 * m[i] + (1 - config_.beta1) * g);
      v[i] = static_cast<Scalar>(config_.beta2 * v[i] + (1 - config_.beta2) * g * g);
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      double p = values[i];
      p -= lr * config_.weight_decay * p;
      p -= lr * mhat / (std::sqrt(vhat) + config_.epsilon);
      values[i] = static_cast<Scalar>(p);
    }
  }
  return norm;
}

void AdamW::save(const std::filesystem::path& path) const {
  std::vector<NamedTensor> tensors;
  const auto& entries = store_.entries();
  tensors.push_back({"__step", {1}, {static_cast<float>(t_)}});
  for (std::size_t k = 0; k < entries.size(); ++k) {
    const auto& [name, t] = entries[k];
    tensors.push_back({"m/" + name, t.shape(), std::vector<float>(m_[k].begin(), m_[k].end())});
    tensors.push_back({"v/" + name, t.shape(), std::vector<float>(v_[k].begin(), v_[k].end())});
    tensors.push_back({"n/" + name, {1}, {static_cast<float>(counts_[k])}});
  }
  write_checkpoint(path, tensors);
}

void AdamW::load(const std::filesystem::path& path) {
  const auto tensors = read_checkpoint(path);
  const auto& entries = store_.entries();
  if (tensors.size() != 1 + 3 * entries.size()) throw IoError("optimizer state does not match model: " + path.string());
  t_ = static_cast<std::int64_t>(tensors[0].values.at(0));
  for (std::size_t k = 0; k < entries.size(); ++k) {
    const auto& m = tensors[1 + 3 * k];
    const auto& v = tensors[2 + 3 * k];
    if (m.name != "m/" + entries[k].first || m.values.size() != m_[k].size()) {
      throw IoError("optimizer state mismatch at " + entries[k].first);
    }
    std::copy(m.values.begin(), m.values.end(), m_[k].begin());
    std::copy(v.values.begin(), v.values.end(), v_[k].begin());
    counts_[k] = static_cast<std::int64_t>(tensors[3 + 3 * k].values.at(0));
  }
}

double warmup_constant_lr(double base_lr, std::int64_t step, std::int64_t warmup_steps) {
  if (warmup_steps <= 0) return base_lr;
  const double frac = static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
  return base_lr * std::min(1.0, frac);
}

MF_NUMERIC_END
