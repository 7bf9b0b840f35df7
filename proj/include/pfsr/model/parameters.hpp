#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace pfsr::model {

struct LayerGroup {
  std::string name;
  std::size_t offset = 0;
  std::size_t length = 0;

  friend bool operator==(const LayerGroup&, const LayerGroup&) = default;
};

// Ordered, contiguous, disjoint partition of [0, total) into named groups.
class LayerMap {
 public:
  LayerMap() = default;

  // Appends a group at the current end and returns it.
  const LayerGroup& append(std::string name, std::size_t length);

  const std::vector<LayerGroup>& groups() const { return groups_; }
  std::size_t total() const { return total_; }
  std::size_t size() const { return groups_.size(); }

  const LayerGroup& at(const std::string& name) const;
  bool contains(const std::string& name) const;

  // True iff groups are contiguous from 0, non-empty and cover total().
  bool valid() const;

  friend bool operator==(const LayerMap&, const LayerMap&) = default;

 private:
  std::vector<LayerGroup> groups_;
  std::size_t total_ = 0;
};

// Flat model parameters theta with their group layout.
class ParameterVector {
 public:
  ParameterVector() = default;
  explicit ParameterVector(LayerMap layers, double fill = 0.0);
  ParameterVector(LayerMap layers, std::vector<double> values);

  const LayerMap& layers() const { return layers_; }
  std::size_t size() const { return values_.size(); }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  std::span<double> group(const std::string& name);
  std::span<const double> group(const std::string& name) const;
  std::span<const double> group(const LayerGroup& g) const {
    return {values_.data() + g.offset, g.length};
  }

  bool compatible_with(const ParameterVector& other) const { return layers_ == other.layers_; }

  friend bool operator==(const ParameterVector&, const ParameterVector&) = default;

 private:
  LayerMap layers_;
  std::vector<double> values_;
};

// Throws ContractError unless a and b share one LayerMap.
void require_compatible(const ParameterVector& a, const ParameterVector& b, const char* what);

// Checkpoint file: "PFSR" magic, u32 version, u64 d_theta, u32 group count,
// then per group (u32 name length, name bytes, u64 offset, u64 length),
// followed by d_theta little-endian IEEE-754 doubles.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const ParameterVector& params, const std::filesystem::path& path);
ParameterVector load_checkpoint(const std::filesystem::path& path);

std::vector<char> encode_checkpoint(const ParameterVector& params);
ParameterVector decode_checkpoint(std::span<const char> bytes);

}  // namespace pfsr::model
