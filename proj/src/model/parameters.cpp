#include "pfsr/model/parameters.hpp"

#include <algorithm>

#include "pfsr/errors.hpp"
#include "pfsr/util/binary_io.hpp"

namespace pfsr::model {

const LayerGroup& LayerMap::append(std::string name, std::size_t length) {
  if (length == 0) throw ContractError("layer group '" + name + "' is empty");
  if (contains(name)) throw ContractError("duplicate layer group '" + name + "'");
  groups_.push_back(LayerGroup{std::move(name), total_, length});
  total_ += length;
  return groups_.back();
}

const LayerGroup& LayerMap::at(const std::string& name) const {
  auto it = std::find_if(groups_.begin(), groups_.end(),
                         [&](const LayerGroup& g) { return g.name == name; });
  if (it == groups_.end()) throw ContractError("unknown layer group '" + name + "'");
  return *it;
}

bool LayerMap::contains(const std::string& name) const {
  return std::any_of(groups_.begin(), groups_.end(),
                     [&](const LayerGroup& g) { return g.name == name; });
}

bool LayerMap::valid() const {
  std::size_t next = 0;
  for (const auto& g : groups_) {
    if (g.offset != next || g.length == 0) return false;
    next += g.length;
  }
  return next == total_;
}

ParameterVector::ParameterVector(LayerMap layers, double fill)
    : layers_(std::move(layers)), values_(layers_.total(), fill) {}

ParameterVector::ParameterVector(LayerMap layers, std::vector<double> values)
    : layers_(std::move(layers)), values_(std::move(values)) {
  if (values_.size() != layers_.total()) {
    throw DimensionError("parameter vector has " + std::to_string(values_.size()) +
                         " values but its layer map covers " + std::to_string(layers_.total()));
  }
}

std::span<double> ParameterVector::group(const std::string& name) {
  const auto& g = layers_.at(name);
  return {values_.data() + g.offset, g.length};
}

std::span<const double> ParameterVector::group(const std::string& name) const {
  return group(layers_.at(name));
}

void require_compatible(const ParameterVector& a, const ParameterVector& b, const char* what) {
  if (!a.compatible_with(b)) {
    throw ContractError(std::string(what) + ": parameter vectors have different layer maps");
  }
}

std::vector<char> encode_checkpoint(const ParameterVector& params) {
  util::ByteWriter w;
  w.bytes("PFSR");
  w.u32(kCheckpointVersion);
  w.u64(params.size());
  w.u32(static_cast<std::uint32_t>(params.layers().size()));
  for (const auto& g : params.layers().groups()) {
    w.u32(static_cast<std::uint32_t>(g.name.size()));
    w.bytes(g.name);
    w.u64(g.offset);
    w.u64(g.length);
  }
  for (double v : params.values()) w.f64(v);
  return w.take();
}

ParameterVector decode_checkpoint(std::span<const char> bytes) {
  util::ByteReader r(bytes);
  if (r.bytes(4) != "PFSR") throw IoError("checkpoint: bad magic");
  if (const auto version = r.u32(); version != kCheckpointVersion) {
    throw IoError("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto d_theta = r.u64();
  const auto n_groups = r.u32();
  LayerMap layers;
  for (std::uint32_t i = 0; i < n_groups; ++i) {
    const auto name_len = r.u32();
    auto name = r.bytes(name_len);
    const auto offset = r.u64();
    const auto length = r.u64();
    if (offset != layers.total()) throw IoError("checkpoint: layer groups are not contiguous");
    layers.append(std::move(name), length);
  }
  if (layers.total() != d_theta) throw IoError("checkpoint: layer map does not cover d_theta");
  if (r.remaining() != d_theta * 8) throw IoError("checkpoint: payload size mismatch");
  std::vector<double> values(d_theta);
  for (auto& v : values) v = r.f64();
  return ParameterVector(std::move(layers), std::move(values));
}

void save_checkpoint(const ParameterVector& params, const std::filesystem::path& path) {
  util::write_file(path.string(), encode_checkpoint(params));
}

ParameterVector load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = util::read_file(path.string());
  return decode_checkpoint(bytes);
}

}  // namespace pfsr::model
