#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "mf/numeric/tensor.hpp"

MF_NUMERIC_BEGIN

enum class Init { kZeros, kOnes, kNormal, kXavier };

// Named, ordered registry of learnable leaves. Registration order is stable
// and defines the checkpoint layout.
class ParameterStore {
 public:
  Tensor create(const std::string& name, Shape shape, Init init, std::mt19937_64& rng,
                Scalar stddev = Scalar(0.02));
  Tensor get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;

  // Marks exactly the parameters selected by the predicate as trainable.
  void set_trainable(const std::function<bool(const std::string&)>& select);
  std::vector<std::string> trainable_names() const;
  void zero_grad();

  // Copies values (not gradients) from another store with identical layout.
  void copy_values_from(const ParameterStore& other);

  // Flat binary checkpoint: "MFCKPT1", u32 count, then per parameter
  // u32 name length, name bytes, u32 rank, u32 extents..., f32 LE payload.
  // The write goes to a temporary file that is renamed into place.
  void save(const std::filesystem::path& path) const;
  // Loads values into already-registered parameters; names and shapes must match.
  void load(const std::filesystem::path& path);

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::map<std::string, std::size_t> index_;
};

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path);

MF_NUMERIC_END
