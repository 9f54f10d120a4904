#include "container.hpp"

#include <bit>
#include <cstring>
#include <istream>
#include <iterator>
#include <ostream>

namespace ict::detail {

namespace {

using Kind = TraceError::Kind;

void put_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t get_u64_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

void append_floats_le(std::string& out, std::span<const float> values) {
  const std::size_t start = out.size();
  out.resize(start + values.size() * 4);
  char* dst = out.data() + start;
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(dst, values.data(), values.size() * 4);
  } else {
    for (float f : values) {
      const auto bits = std::bit_cast<std::uint32_t>(f);
      for (int i = 0; i < 4; ++i) *dst++ = static_cast<char>((bits >> (8 * i)) & 0xFF);
    }
  }
}

void read_floats_le(const unsigned char* src, std::span<float> values) {
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(values.data(), src, values.size() * 4);
  } else {
    for (float& f : values) {
      std::uint32_t bits = 0;
      for (int i = 3; i >= 0; --i) bits = (bits << 8) | src[i];
      f = std::bit_cast<float>(bits);
      src += 4;
    }
  }
}

}  // namespace

std::size_t write_container(std::ostream& sink, std::string_view magic, nlohmann::json header,
                            const std::vector<NamedTensor>& tensors) {
  auto descriptors = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, tensor] : tensors) {
    descriptors.push_back({{"name", name}, {"dims", tensor->dims()}, {"offset", offset}});
    offset += tensor->size() * 4;
  }
  header["tensors"] = std::move(descriptors);

  std::string header_text;
  try {
    header_text = header.dump();
  } catch (const nlohmann::json::exception& e) {
    throw TraceError(Kind::validation, std::string("header is not valid UTF-8: ") + e.what());
  }

  std::string bytes;
  bytes.reserve(12 + header_text.size() + offset);
  bytes.append(magic);
  put_u64_le(bytes, header_text.size());
  bytes += header_text;
  for (const auto& [name, tensor] : tensors) append_floats_le(bytes, tensor->values());

  sink.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!sink) throw TraceError(Kind::io, "write failed after partial output");
  return bytes.size();
}

Container read_container(std::istream& source, std::string_view magic) {
  const std::string bytes{std::istreambuf_iterator<char>(source), std::istreambuf_iterator<char>()};
  if (source.bad()) throw TraceError(Kind::io, "read failed");
  const auto* data = reinterpret_cast<const unsigned char*>(bytes.data());

  if (bytes.size() < magic.size() || std::string_view(bytes).substr(0, magic.size()) != magic) {
    throw TraceError(Kind::bad_magic, "missing " + std::string(magic) + " magic bytes");
  }
  std::size_t pos = magic.size();
  if (bytes.size() < pos + 8) throw TraceError(Kind::truncated, "truncated in header length");
  const std::uint64_t header_len = get_u64_le(data + pos);
  pos += 8;
  if (header_len > bytes.size() - pos) throw TraceError(Kind::truncated, "truncated in header");

  Container out;
  try {
    out.header = nlohmann::json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                                       bytes.begin() + static_cast<std::ptrdiff_t>(pos + header_len));
  } catch (const nlohmann::json::exception& e) {
    throw TraceError(Kind::malformed_header, std::string("header JSON: ") + e.what());
  }
  pos += header_len;

  const std::size_t payload_size = bytes.size() - pos;
  const unsigned char* payload = data + pos;
  std::uint64_t expected_offset = 0;
  try {
    for (const auto& desc : out.header.at("tensors")) {
      const auto name = desc.at("name").get<std::string>();
      auto dims = desc.at("dims").get<std::vector<std::size_t>>();
      const auto offset = desc.at("offset").get<std::uint64_t>();
      const std::uint64_t nbytes = element_count(dims) * 4;
      if (offset != expected_offset) {
        throw TraceError(Kind::dimension_mismatch,
                         "tensor '" + name + "' offset " + std::to_string(offset) +
                             " disagrees with preceding dims (expected " +
                             std::to_string(expected_offset) + ")");
      }
      if (offset + nbytes > payload_size) {
        throw TraceError(Kind::truncated, "payload truncated inside tensor '" + name + "' " +
                                              format_dims(dims));
      }
      Tensor t(dims);
      read_floats_le(payload + offset, t.values());
      out.tensors.emplace(name, std::move(t));
      expected_offset = offset + nbytes;
    }
  } catch (const nlohmann::json::exception& e) {
    throw TraceError(Kind::malformed_header, std::string("tensor descriptor: ") + e.what());
  }
  if (expected_offset != payload_size) {
    throw TraceError(Kind::dimension_mismatch,
                     "payload holds " + std::to_string(payload_size) + " bytes but descriptors declare " +
                         std::to_string(expected_offset));
  }
  return out;
}

}  // namespace ict::detail
