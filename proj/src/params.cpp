#include "sdba/params.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>

#include "sdba/errors.hpp"

namespace sdba {

LayerSchema::LayerSchema(std::vector<std::pair<std::string, std::size_t>> layers) {
  std::set<std::string, std::less<>> seen;
  for (auto& [name, length] : layers) {
    if (name.empty()) throw ConfigError("layer schema: empty layer name");
    if (length == 0) throw ConfigError("layer schema: layer '" + name + "' has zero length");
    if (!seen.insert(name).second) throw ConfigError("layer schema: duplicate layer '" + name + "'");
    layers_.push_back({std::move(name), total_, length});
    total_ += length;
  }
}

bool LayerSchema::contains(std::string_view name) const noexcept {
  for (const auto& l : layers_)
    if (l.name == name) return true;
  return false;
}

const Layer& LayerSchema::layer(std::string_view name) const {
  for (const auto& l : layers_)
    if (l.name == name) return l;
  throw ConfigError("unknown layer '" + std::string(name) + "'");
}

namespace {

// "h12.attn.c_proj" -> "attn.c_proj"; anything else -> "".
std::string_view strip_block_prefix(std::string_view name) {
  if (name.size() < 3 || name[0] != 'h') return {};
  std::size_t i = 1;
  while (i < name.size() && name[i] >= '0' && name[i] <= '9') ++i;
  if (i == 1 || i >= name.size() || name[i] != '.') return {};
  return name.substr(i + 1);
}

}  // namespace

std::vector<std::size_t> LayerSchema::resolve(std::string_view name) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& n = layers_[i].name;
    if (n == name || strip_block_prefix(n) == name) out.push_back(i);
  }
  return out;
}

ParamVector::ParamVector(SchemaPtr schema) : schema_(std::move(schema)), values_(schema_->size(), 0.0) {}

ParamVector::ParamVector(SchemaPtr schema, std::vector<double> values)
    : schema_(std::move(schema)), values_(values.begin(), values.end()) {
  if (values_.size() != schema_->size())
    throw ProtocolError("parameter vector length " + std::to_string(values_.size()) +
                        " does not match schema length " + std::to_string(schema_->size()));
}

std::span<double> ParamVector::segment(std::string_view name) { return segment(schema_->layer(name)); }

std::span<const double> ParamVector::segment(std::string_view name) const {
  return segment(schema_->layer(name));
}

bool ParamVector::same_schema(const ParamVector& other) const {
  if (!schema_ || !other.schema_) return schema_ == other.schema_;
  return schema_ == other.schema_ || *schema_ == *other.schema_;
}

bool ParamVector::all_finite() const noexcept {
  for (double v : values_)
    if (!std::isfinite(v)) return false;
  return true;
}

double ParamVector::norm() const noexcept {
  double s = 0.0;
  for (double v : values_) s += v * v;
  return std::sqrt(s);
}

double ParamVector::squared_distance(const ParamVector& other) const {
  if (!same_schema(other)) throw ProtocolError("squared_distance: schema mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < values_.size(); ++i) {
    const double d = values_[i] - other.values_[i];
    s += d * d;
  }
  return s;
}

double ParamVector::dot(const ParamVector& other) const {
  if (!same_schema(other)) throw ProtocolError("dot: schema mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < values_.size(); ++i) s += values_[i] * other.values_[i];
  return s;
}

void ParamVector::axpy(double alpha, const ParamVector& other) {
  if (!same_schema(other)) throw ProtocolError("axpy: schema mismatch");
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += alpha * other.values_[i];
}

void ParamVector::scale(double alpha) noexcept {
  for (double& v : values_) v *= alpha;
}

bool ParamVector::operator==(const ParamVector& other) const {
  if (!same_schema(other)) return false;
  return std::memcmp(values_.data(), other.values_.data(), values_.size() * sizeof(double)) == 0;
}

ParamVector operator-(const ParamVector& a, const ParamVector& b) {
  ParamVector out = a;
  out.axpy(-1.0, b);
  return out;
}

ParamVector operator+(const ParamVector& a, const ParamVector& b) {
  ParamVector out = a;
  out.axpy(1.0, b);
  return out;
}

namespace {

constexpr char kMagic[8] = {'S', 'D', 'B', 'A', 'P', 'V', '0', '1'};

template <typename T>
void put_le(std::ostream& out, T value) {
  static_assert(std::is_integral_v<T>);
  unsigned char buf[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>((value >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T get_le(std::istream& in) {
  unsigned char buf[sizeof(T)];
  in.read(reinterpret_cast<char*>(buf), sizeof(T));
  if (!in) throw DataError("checkpoint: truncated stream");
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(buf[i]) << (8 * i);
  return value;
}

}  // namespace

void write_params(std::ostream& out, const ParamVector& params) {
  out.write(kMagic, sizeof(kMagic));
  const auto& layers = params.schema().layers();
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(layers.size()));
  for (const auto& l : layers) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(l.name.size()));
    out.write(l.name.data(), static_cast<std::streamsize>(l.name.size()));
    put_le<std::uint64_t>(out, l.length);
  }
  put_le<std::uint64_t>(out, params.size());
  for (double v : params.values()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
}

ParamVector read_params(std::istream& in) {
  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw DataError("checkpoint: bad magic");
  const auto count = get_le<std::uint32_t>(in);
  std::vector<std::pair<std::string, std::size_t>> layers;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = get_le<std::uint32_t>(in);
    std::string name(len, '\0');
    in.read(name.data(), len);
    if (!in) throw DataError("checkpoint: truncated layer name");
    layers.emplace_back(std::move(name), get_le<std::uint64_t>(in));
  }
  auto schema = std::make_shared<const LayerSchema>(std::move(layers));
  const auto n = get_le<std::uint64_t>(in);
  if (n != schema->size()) throw DataError("checkpoint: value count does not match schema");
  std::vector<double> values(n);
  for (auto& v : values) v = std::bit_cast<double>(get_le<std::uint64_t>(in));
  return ParamVector(std::move(schema), std::move(values));
}

ParamVector read_params(std::istream& in, const SchemaPtr& expected) {
  ParamVector raw = read_params(in);
  if (!(raw.schema() == *expected)) throw ProtocolError("checkpoint: schema does not match model");
  std::vector<double> values(raw.values().begin(), raw.values().end());
  return ParamVector(expected, std::move(values));
}

void save_checkpoint(const std::string& path, const ParamVector& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open checkpoint for writing: " + path);
  write_params(out, params);
  if (!out) throw Error("failed writing checkpoint: " + path);
}

ParamVector load_checkpoint(const std::string& path, const SchemaPtr& expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint: " + path);
  return read_params(in, expected);
}

}  // namespace sdba
