#pragma once

#include <cstddef>
#include <iosfwd>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace sdba {

struct Layer {
  std::string name;
  std::size_t offset = 0;
  std::size_t length = 0;

  bool operator==(const Layer&) const = default;
};

/// Ordered, named partition of a flat parameter vector.
class LayerSchema {
 public:
  LayerSchema() = default;
  /// Throws ConfigError on duplicate names or zero lengths.
  explicit LayerSchema(std::vector<std::pair<std::string, std::size_t>> layers);

  const std::vector<Layer>& layers() const noexcept { return layers_; }
  std::size_t size() const noexcept { return total_; }
  bool contains(std::string_view name) const noexcept;
  const Layer& layer(std::string_view name) const;

  /// Indices of segments a taxonomy name refers to. A name matches a segment
  /// either exactly or as the suffix after a block prefix ("h0.mlp.c_fc"
  /// matches "mlp.c_fc"). Empty when nothing matches.
  std::vector<std::size_t> resolve(std::string_view name) const;

  bool operator==(const LayerSchema& other) const { return layers_ == other.layers_; }

 private:
  std::vector<Layer> layers_;
  std::size_t total_ = 0;
};

using SchemaPtr = std::shared_ptr<const LayerSchema>;

/// Cache-line aligned allocator. Vectorised kernels round differently
/// depending on where a buffer starts, so storage alignment is pinned.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};
  AlignedAllocator() noexcept = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }
  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

using AlignedDoubles = std::vector<double, AlignedAllocator<double>>;

/// Flat parameter (or gradient, or delta) vector tied to a schema.
class ParamVector {
 public:
  ParamVector() = default;
  explicit ParamVector(SchemaPtr schema);
  ParamVector(SchemaPtr schema, std::vector<double> values);

  const LayerSchema& schema() const { return *schema_; }
  const SchemaPtr& schema_ptr() const noexcept { return schema_; }
  std::size_t size() const noexcept { return values_.size(); }

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }
  double* data() noexcept { return values_.data(); }
  const double* data() const noexcept { return values_.data(); }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  std::span<double> segment(std::string_view name);
  std::span<const double> segment(std::string_view name) const;
  std::span<double> segment(const Layer& layer) { return {values_.data() + layer.offset, layer.length}; }
  std::span<const double> segment(const Layer& layer) const {
    return {values_.data() + layer.offset, layer.length};
  }

  bool same_schema(const ParamVector& other) const;
  bool all_finite() const noexcept;
  double norm() const noexcept;
  double squared_distance(const ParamVector& other) const;
  double dot(const ParamVector& other) const;

  ParamVector zeros_like() const { return ParamVector(schema_); }
  /// this += alpha * other
  void axpy(double alpha, const ParamVector& other);
  void scale(double alpha) noexcept;

  /// Exact value and schema equality.
  bool operator==(const ParamVector& other) const;

 private:
  SchemaPtr schema_;
  AlignedDoubles values_;
};

ParamVector operator-(const ParamVector& a, const ParamVector& b);
ParamVector operator+(const ParamVector& a, const ParamVector& b);

// Binary checkpoint: magic "SDBAPV01", u32 layer count, per layer
// (u32 name length, name bytes, u64 length), then u64 value count and the
// values as little-endian IEEE-754 doubles.
void write_params(std::ostream& out, const ParamVector& params);
ParamVector read_params(std::istream& in);
/// Reads and checks the embedded schema against `expected`.
ParamVector read_params(std::istream& in, const SchemaPtr& expected);

void save_checkpoint(const std::string& path, const ParamVector& params);
ParamVector load_checkpoint(const std::string& path, const SchemaPtr& expected);

}  // namespace sdba
