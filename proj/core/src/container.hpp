#pragma once

// Shared layout for the ICT1 trace and TOYP parameter containers:
//   magic (4 bytes) | header length (u64 LE) | JSON header | raw payloads
// Payload tensors are little-endian float32, row-major; the header lists
// each tensor's name, dims and offset from payload start.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "ict/tensor.hpp"
#include "ict/trace.hpp"

namespace ict::detail {

using NamedTensor = std::pair<std::string, const Tensor*>;

/// Appends the "tensors" descriptor list to header and writes the container.
std::size_t write_container(std::ostream& sink, std::string_view magic, nlohmann::json header,
                            const std::vector<NamedTensor>& tensors);

struct Container {
  nlohmann::json header;
  std::map<std::string, Tensor> tensors;
};

/// Throws TraceError with a kind that distinguishes magic, header, truncation
/// and dimension problems.
Container read_container(std::istream& source, std::string_view magic);

}  // namespace ict::detail
