#include "uap/tensor_io.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <memory>

#include "uap/error.hpp"

namespace uap {

namespace {

constexpr char kMagic[4] = {'U', 'A', 'P', 'T'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

double get_f64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return std::bit_cast<double>(v);
}

}  // namespace

std::vector<std::uint8_t> encode_uapt(const Tensor& tensor) {
  if (tensor.rank() > 255) throw InvalidArgument("UAPT supports rank <= 255");
  std::vector<std::uint8_t> out;
  out.reserve(6 + 4 * tensor.rank() + 8 * tensor.size());
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  out.push_back(kUaptVersion);
  out.push_back(static_cast<std::uint8_t>(tensor.rank()));
  for (std::size_t d : tensor.shape()) {
    if (d > 0xffffffffULL) throw InvalidArgument("UAPT dimension exceeds u32");
    put_u32(out, static_cast<std::uint32_t>(d));
  }
  for (double v : tensor.data()) put_f64(out, v);
  return out;
}

Tensor decode_uapt(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 6 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw IntegrityError("not a UAPT tensor (bad magic)");
  }
  if (bytes[4] != kUaptVersion) {
    throw IntegrityError("unsupported UAPT version " + std::to_string(bytes[4]));
  }
  const std::size_t rank = bytes[5];
  std::size_t offset = 6;
  if (bytes.size() < offset + 4 * rank) throw IntegrityError("UAPT header truncated");
  Shape shape(rank);
  for (std::size_t i = 0; i < rank; ++i, offset += 4) {
    shape[i] = get_u32(bytes.data() + offset);
    if (shape[i] == 0) throw IntegrityError("UAPT dimension is zero");
  }
  const std::size_t count = shape_size(shape);
  if (bytes.size() != offset + 8 * count) {
    throw IntegrityError("UAPT payload has " + std::to_string(bytes.size() - offset) + " bytes, expected " +
                         std::to_string(8 * count));
  }
  std::vector<double> data(count);
  for (std::size_t i = 0; i < count; ++i, offset += 8) data[i] = get_f64(bytes.data() + offset);
  try {
    return Tensor(std::move(shape), std::move(data));
  } catch (const InvalidArgument& e) {
    throw IntegrityError(std::string("UAPT payload invalid: ") + e.what());
  }
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string read_text_file(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return std::string(bytes.begin(), bytes.end());
}

void write_uapt(const std::filesystem::path& path, const Tensor& tensor) {
  write_file_bytes(path, encode_uapt(tensor));
}

Tensor read_uapt(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return decode_uapt(bytes);
  } catch (const IntegrityError& e) {
    throw IntegrityError(path.string() + ": " + e.what());
  }
}

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), digest, &len) != 1) {
    throw std::runtime_error("SHA-256 computation failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string hex;
  hex.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    hex.push_back(kHex[digest[i] >> 4]);
    hex.push_back(kHex[digest[i] & 0xf]);
  }
  return hex;
}

std::string sha256_hex(const std::string& text) {
  return sha256_hex(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string sha256_file(const std::filesystem::path& path) { return sha256_hex(read_file_bytes(path)); }

}  // namespace uap
