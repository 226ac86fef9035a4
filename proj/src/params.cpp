#include "irbindiff/params.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "irbindiff/error.hpp"
#include "irbindiff/text.hpp"

namespace irbindiff::nn {

Var ParameterStore::add(const std::string& name, Tensor init) {
  if (index_.count(name)) throw CheckpointError("duplicate parameter name: " + name);
  index_.emplace(name, params_.size());
  params_.push_back(Parameter{name, variable(std::move(init))});
  return params_.back().var;
}

const Var& ParameterStore::get(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw CheckpointError("unknown parameter: " + name);
  return params_[it->second].var;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.var.value().size();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p.var.node()->grad_buffer().fill(0.0);
}

void ParameterStore::check_compatible(const ParameterStore& other) const {
  if (other.params_.size() != params_.size()) {
    throw CheckpointError("parameter count mismatch: " + std::to_string(params_.size()) +
                          " vs " + std::to_string(other.params_.size()));
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& a = params_[i];
    const auto& b = other.params_[i];
    if (a.name != b.name || a.var.shape() != b.var.shape()) {
      throw CheckpointError("parameter mismatch: " + a.name + " " + shape_str(a.var.shape()) +
                            " vs " + b.name + " " + shape_str(b.var.shape()));
    }
  }
}

void ParameterStore::copy_values_from(const ParameterStore& other) {
  check_compatible(other);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    params_[i].var.node()->value.storage() = other.params_[i].var.value().storage();
  }
}

Tensor normal_tensor(Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

Tensor uniform_unit_rows(std::size_t rows, std::size_t cols, Rng& rng) {
  Tensor t = normal_tensor({rows, cols}, 1.0, rng);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0;
    for (double v : t.row(r)) s += v * v;
    s = std::sqrt(s);
    for (auto& v : t.row(r)) v /= s;
  }
  return t;
}

namespace {

std::filesystem::path with_suffix(const std::filesystem::path& prefix, const char* suffix) {
  return prefix.string() + suffix;
}

std::uint64_t to_le(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::big) return __builtin_bswap64(v);
  return v;
}

}  // namespace

bool checkpoint_exists(const std::filesystem::path& prefix) {
  return std::filesystem::exists(with_suffix(prefix, ".json")) &&
         std::filesystem::exists(with_suffix(prefix, ".bin"));
}

void save_checkpoint(const ParameterStore& store, const std::filesystem::path& prefix) {
  nlohmann::ordered_json manifest = nlohmann::ordered_json::object();
  std::string payload;
  payload.reserve(store.scalar_count() * 8);
  for (const auto& p : store.params()) {
    manifest[p.name] = p.var.shape();
    for (double v : p.var.value().values()) {
      const std::uint64_t bits = to_le(std::bit_cast<std::uint64_t>(v));
      char buf[8];
      std::memcpy(buf, &bits, 8);
      payload.append(buf, 8);
    }
  }
  text::write_file(with_suffix(prefix, ".json"), manifest.dump(1) + "\n");
  text::write_file(with_suffix(prefix, ".bin"), payload);
}

void load_checkpoint(ParameterStore& store, const std::filesystem::path& prefix) {
  const auto manifest_path = with_suffix(prefix, ".json");
  if (!checkpoint_exists(prefix)) {
    throw StageError("missing checkpoint: " + manifest_path.string());
  }
  nlohmann::ordered_json manifest;
  try {
    manifest = nlohmann::ordered_json::parse(text::read_file(manifest_path));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(manifest_path.string() + ": " + e.what());
  }
  if (manifest.size() != store.size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(manifest.size()) +
                          " parameters, model expects " + std::to_string(store.size()));
  }
  const std::string payload = text::read_file(with_suffix(prefix, ".bin"));
  if (payload.size() != store.scalar_count() * 8) {
    throw CheckpointError("checkpoint payload has " + std::to_string(payload.size()) +
                          " bytes, expected " + std::to_string(store.scalar_count() * 8));
  }
  std::size_t i = 0, offset = 0;
  for (auto it = manifest.begin(); it != manifest.end(); ++it, ++i) {
    const auto& p = store.params()[i];
    const auto shape = it.value().get<Shape>();
    if (it.key() != p.name || shape != p.var.shape()) {
      throw CheckpointError("checkpoint entry " + it.key() + " " + shape_str(shape) +
                            " does not match " + p.name + " " + shape_str(p.var.shape()));
    }
    auto& values = p.var.node()->value;
    for (auto& v : values.values()) {
      std::uint64_t bits;
      std::memcpy(&bits, payload.data() + offset, 8);
      v = std::bit_cast<double>(to_le(bits));
      offset += 8;
    }
  }
}

}  // namespace irbindiff::nn
