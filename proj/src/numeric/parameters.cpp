#include "mf/numeric/parameters.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "mf/common/error.hpp"

MF_NUMERIC_BEGIN

namespace {

constexpr char kMagic[] = "MFCKPT1";
constexpr std::size_t kMagicLen = 7;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void put_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }

std::uint32_t get_u32(std::istream& is, const std::filesystem::path& path) {
  std::uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 4)) throw IoError("checkpoint truncated: " + path.string());
  return v;
}

}  // namespace

Tensor ParameterStore::create(const std::string& name, Shape shape, Init init, std::mt19937_64& rng,
                              Scalar stddev) {
  if (contains(name)) throw ContractError("parameter registered twice: " + name);
  auto t = Tensor::zeros(shape, true);
  auto v = t.values();
  switch (init) {
    case Init::kZeros:
      break;
    case Init::kOnes:
      std::fill(v.begin(), v.end(), Scalar(1));
      break;
    case Init::kNormal: {
      std::normal_distribution<double> normal(0.0, stddev);
      for (auto& x : v) x = static_cast<Scalar>(normal(rng));
      break;
    }
    case Init::kXavier: {
      const double fan_in = shape.size() >= 2 ? static_cast<double>(shape[0]) : 1.0;
      const double fan_out = shape.size() >= 2 ? static_cast<double>(shape[1]) : static_cast<double>(shape[0]);
      const double limit = std::sqrt(6.0 / (fan_in + fan_out));
      std::uniform_real_distribution<double> uniform(-limit, limit);
      for (auto& x : v) x = static_cast<Scalar>(uniform(rng));
      break;
    }
  }
  index_[name] = entries_.size();
  entries_.emplace_back(name, t);
  return t;
}

Tensor ParameterStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter: " + name);
  return entries_[it->second].second;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : entries_) n += t.numel();
  return n;
}

void ParameterStore::set_trainable(const std::function<bool(const std::string&)>& select) {
  for (auto& [name, t] : entries_) {
    t.set_requires_grad(select(name));
    t.zero_grad();
  }
}

std::vector<std::string> ParameterStore::trainable_names() const {
  std::vector<std::string> out;
  for (const auto& [name, t] : entries_)
    if (t.requires_grad()) out.push_back(name);
  return out;
}

void ParameterStore::zero_grad() {
  for (auto& [_, t] : entries_) t.zero_grad();
}

void ParameterStore::copy_values_from(const ParameterStore& other) {
  if (other.entries_.size() != entries_.size()) throw ContractError("copy_values_from: layout differs");
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    auto& dst = entries_[i].second;
    const auto& src = other.entries_[i].second;
    if (entries_[i].first != other.entries_[i].first || dst.shape() != src.shape()) {
      throw ContractError("copy_values_from: parameter " + entries_[i].first + " differs");
    }
    std::copy(src.values().begin(), src.values().end(), dst.values().begin());
  }
}

void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write checkpoint: " + tmp);
    os.write(kMagic, kMagicLen);
    put_u32(os, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& t : tensors) {
      put_u32(os, static_cast<std::uint32_t>(t.name.size()));
      os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
      put_u32(os, static_cast<std::uint32_t>(t.shape.size()));
      for (auto e : t.shape) put_u32(os, static_cast<std::uint32_t>(e));
      os.write(reinterpret_cast<const char*>(t.values.data()),
               static_cast<std::streamsize>(t.values.size() * sizeof(float)));
    }
    if (!os) throw IoError("checkpoint write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path.string());
  char magic[kMagicLen];
  if (!is.read(magic, kMagicLen) || std::memcmp(magic, kMagic, kMagicLen) != 0) {
    throw IoError("not an MFCKPT1 checkpoint: " + path.string());
  }
  const auto count = get_u32(is, path);
  std::vector<NamedTensor> out;
  out.reserve(count);
  for (std::uint32_t k = 0; k < count; ++k) {
    NamedTensor t;
    t.name.resize(get_u32(is, path));
    if (!is.read(t.name.data(), static_cast<std::streamsize>(t.name.size()))) throw IoError("checkpoint truncated: " + path.string());
    const auto rank = get_u32(is, path);
    for (std::uint32_t r = 0; r < rank; ++r) t.shape.push_back(get_u32(is, path));
    t.values.resize(shape_numel(t.shape));
    if (!is.read(reinterpret_cast<char*>(t.values.data()), static_cast<std::streamsize>(t.values.size() * sizeof(float)))) {
      throw IoError("checkpoint truncated: " + path.string());
    }
    out.push_back(std::move(t));
  }
  return out;
}

void ParameterStore::save(const std::filesystem::path& path) const {
  std::vector<NamedTensor> tensors;
  tensors.reserve(entries_.size());
  for (const auto& [name, t] : entries_) {
    tensors.push_back({name, t.shape(), std::vector<float>(t.values().begin(), t.values().end())});
  }
  write_checkpoint(path, tensors);
}

void ParameterStore::load(const std::filesystem::path& path) {
  const auto tensors = read_checkpoint(path);
  if (tensors.size() != entries_.size()) {
    throw IoError("checkpoint " + path.string() + " has " + std::to_string(tensors.size()) +
                  " parameters, model expects " + std::to_string(entries_.size()));
  }
  for (const auto& t : tensors) {
    auto it = index_.find(t.name);
    if (it == index_.end()) throw IoError("checkpoint parameter not in model: " + t.name);
    auto& dst = entries_[it->second].second;
    if (dst.shape() != t.shape) {
      throw IoError("checkpoint parameter " + t.name + " has shape " + shape_string(t.shape) +
                    ", model expects " + shape_string(dst.shape()));
    }
    std::copy(t.values.begin(), t.values.end(), dst.values().begin());
  }
}

MF_NUMERIC_END
