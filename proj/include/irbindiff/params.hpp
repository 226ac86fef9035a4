#pragma once

#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "irbindiff/autograd.hpp"
#include "irbindiff/rng.hpp"

namespace irbindiff::nn {

// A named trainable leaf. The Var's value is the tensor and its grad the
// gradient; the name is the checkpoint path.
struct Parameter {
  std::string name;
  Var var;
};

class ParameterStore {
 public:
  // Registers a new trainable tensor. Names must be unique.
  Var add(const std::string& name, Tensor init);
  const Var& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const std::vector<Parameter>& params() const { return params_; }
  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;

  void zero_grad();
  // Copies values from a store with identical names and shapes.
  void copy_values_from(const ParameterStore& other);
  void check_compatible(const ParameterStore& other) const;

 private:
  std::vector<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

Tensor normal_tensor(Shape shape, double stddev, Rng& rng);
Tensor uniform_unit_rows(std::size_t rows, std::size_t cols, Rng& rng);

// `<prefix>.json` holds the ordered name -> shape manifest and `<prefix>.bin`
// the little-endian float64 payload concatenated in manifest order.
void save_checkpoint(const ParameterStore& store, const std::filesystem::path& prefix);
// Loads into an already constructed store; names and shapes must match.
void load_checkpoint(ParameterStore& store, const std::filesystem::path& prefix);
bool checkpoint_exists(const std::filesystem::path& prefix);

}  // namespace irbindiff::nn
