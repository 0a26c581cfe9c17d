#include "ragrec/store.h"

#include <bit>
#include <cstring>
#include <fstream>

#include "ragrec/error.h"
#include "ragrec/io.h"

namespace ragrec {

namespace {

constexpr char kMagic[4] = {'R', 'R', 'E', 'C'};

template <typename T>
void put_le(std::string& out, T value) {
  using U = std::make_unsigned_t<T>;
  auto u = static_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<char>(u & 0xff));
    u = static_cast<U>(u >> 8);
  }
}

template <typename T>
T get_le(std::string_view bytes, std::size_t offset) {
  using U = std::make_unsigned_t<T>;
  U u = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    u |= static_cast<U>(static_cast<U>(static_cast<unsigned char>(bytes[offset + i])) << (8 * i));
  }
  return static_cast<T>(u);
}

struct Header {
  std::uint32_t count;
  std::uint32_t dim;
  std::uint64_t hash;
};

Header parse_header(std::string_view bytes) {
  if (bytes.size() < EmbeddingStore::kHeaderBytes) throw ParseError("store: truncated header", 0);
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw ParseError("store: bad magic", 0);
  auto version = get_le<std::uint16_t>(bytes, 4);
  if (version != EmbeddingStore::kVersion) {
    throw ParseError("store: unsupported version " + std::to_string(version), 0);
  }
  return {get_le<std::uint32_t>(bytes, 6), get_le<std::uint32_t>(bytes, 10),
          get_le<std::uint64_t>(bytes, 14)};
}

}  // namespace

void EmbeddingStore::append(std::span<const float> v) {
  if (v.size() != dim) {
    throw ContractError("store: row has dimension " + std::to_string(v.size()) + ", expected " +
                        std::to_string(dim));
  }
  data.insert(data.end(), v.begin(), v.end());
}

void EmbeddingStore::append(std::span<const double> v) {
  if (v.size() != dim) {
    throw ContractError("store: row has dimension " + std::to_string(v.size()) + ", expected " +
                        std::to_string(dim));
  }
  for (double x : v) data.push_back(static_cast<float>(x));
}

std::string serialize_store(const EmbeddingStore& store) {
  std::string out;
  out.reserve(EmbeddingStore::kHeaderBytes + store.data.size() * 4);
  out.append(kMagic, 4);
  put_le<std::uint16_t>(out, EmbeddingStore::kVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(store.count()));
  put_le<std::uint32_t>(out, store.dim);
  put_le<std::uint64_t>(out, store.template_hash);
  for (float f : store.data) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(f));
  return out;
}

EmbeddingStore deserialize_store(std::string_view bytes) {
  auto h = parse_header(bytes);
  const std::size_t n = static_cast<std::size_t>(h.count) * h.dim;
  if (bytes.size() != EmbeddingStore::kHeaderBytes + n * 4) {
    throw ParseError("store: payload size does not match header", 0);
  }
  EmbeddingStore store(h.dim, h.hash);
  store.data.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    store.data[i] =
        std::bit_cast<float>(get_le<std::uint32_t>(bytes, EmbeddingStore::kHeaderBytes + 4 * i));
  }
  return store;
}

void write_store(const std::filesystem::path& path, const EmbeddingStore& store) {
  write_file_atomic(path, serialize_store(store));
}

EmbeddingStore read_store(const std::filesystem::path& path) {
  try {
    return deserialize_store(read_text_file(path));
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), 0);
  }
}

EmbeddingStore read_store_header(const std::filesystem::path& path, std::size_t& count) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::string buf(EmbeddingStore::kHeaderBytes, '\0');
  in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (in.gcount() != static_cast<std::streamsize>(buf.size())) {
    throw ParseError(path.string() + ": truncated header", 0);
  }
  auto h = parse_header(buf);
  count = h.count;
  return EmbeddingStore(h.dim, h.hash);
}

void write_row_ids(const std::filesystem::path& path, std::span<const std::string> ids) {
  std::string out;
  for (const auto& id : ids) {
    out += id;
    out += '\n';
  }
  write_file_atomic(path, out);
}

std::vector<std::string> read_row_ids(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    ids.push_back(line);
  }
  return ids;
}

}  // namespace ragrec
