#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace ragrec {

// Row-major matrix of f32 embeddings, one row per item in dense item-id order.
//
// On disk ("RREC", little-endian):
//   magic "RREC" | version u16 | count u32 | dim u32 | template_hash u64 |
//   count*dim f32, row-major
struct EmbeddingStore {
  static constexpr std::uint16_t kVersion = 1;
  static constexpr std::size_t kHeaderBytes = 4 + 2 + 4 + 4 + 8;

  std::uint32_t dim = 0;
  std::uint64_t template_hash = 0;
  std::vector<float> data;

  EmbeddingStore() = default;
  explicit EmbeddingStore(std::uint32_t dim, std::uint64_t template_hash = 0)
      : dim(dim), template_hash(template_hash) {}

  std::size_t count() const { return dim == 0 ? 0 : data.size() / dim; }
  std::span<const float> row(std::size_t i) const {
    return std::span<const float>(data).subspan(i * dim, dim);
  }
  std::span<float> row(std::size_t i) { return std::span<float>(data).subspan(i * dim, dim); }

  // Throws ContractError when v.size() != dim.
  void append(std::span<const float> v);
  void append(std::span<const double> v);

  bool operator==(const EmbeddingStore&) const = default;
};

std::string serialize_store(const EmbeddingStore& store);
EmbeddingStore deserialize_store(std::string_view bytes);

// Atomic write (temp file + rename).
void write_store(const std::filesystem::path& path, const EmbeddingStore& store);
EmbeddingStore read_store(const std::filesystem::path& path);

// Reads only the header; count is returned through `count`.
EmbeddingStore read_store_header(const std::filesystem::path& path, std::size_t& count);

// Sidecar listing the item id of each row, one per line.
void write_row_ids(const std::filesystem::path& path, std::span<const std::string> ids);
std::vector<std::string> read_row_ids(const std::filesystem::path& path);

}  // namespace ragrec
