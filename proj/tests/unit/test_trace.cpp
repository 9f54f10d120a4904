#include <doctest.h>

#include <sstream>

#include "fixtures.hpp"
#include "ict/trace.hpp"

using namespace ict;
using ict::testing::random_trace;
using ict::testing::TraceSpec;

namespace {

std::string bytes_of(const TraceSet& set) {
  std::ostringstream out;
  write_trace(set, out);
  return out.str();
}

TraceSet parse(const std::string& bytes, ReadOptions opt = {}) {
  std::istringstream in(bytes);
  return read_trace(in, opt);
}

TraceError::Kind read_error(const std::string& bytes, std::string* message = nullptr) {
  try {
    parse(bytes);
  } catch (const TraceError& e) {
    if (message) *message = e.what();
    return e.kind();
  }
  FAIL("read_trace accepted a corrupted stream");
  return TraceError::Kind::io;
}

TraceSet minimal_set() {
  Rng rng(1);
  TraceSpec spec;
  spec.layers = 2;
  spec.hidden = 4;
  spec.vocab = 3;
  spec.records = 1;
  spec.attention = false;
  return random_trace(rng, spec);
}

bool has_field(const std::vector<Violation>& v, const std::string& field) {
  for (const auto& x : v) {
    if (x.field == field) return true;
  }
  return false;
}

}  // namespace

TEST_CASE("minimal set round-trips byte-identical") {
  const auto set = minimal_set();
  const auto first = bytes_of(set);
  REQUIRE(first.substr(0, 4) == "ICT1");
  const auto back = parse(first);
  CHECK(back == set);
  CHECK(bytes_of(back) == first);
}

TEST_CASE("two writes of the same set give identical bytes") {
  Rng rng(2);
  TraceSpec spec;
  spec.ffn_rows = 5;
  const auto set = random_trace(rng, spec);
  CHECK(bytes_of(set) == bytes_of(set));
}

TEST_CASE("round trip keeps optional payloads and missing labels") {
  Rng rng(3);
  TraceSpec spec;
  spec.records = 5;
  spec.ffn_rows = 3;
  auto set = random_trace(rng, spec);
  set.records[1].gold_label.reset();
  set.records[2].attention_rows.reset();
  set.records[2].segments.reset();
  const auto back = parse(bytes_of(set));
  CHECK(back == set);
  CHECK_FALSE(back.records[1].gold_label.has_value());
  CHECK_FALSE(back.records[2].attention_rows.has_value());
  CHECK(back.records[0].attention_rows.has_value());
}

TEST_CASE("written bytes follow the container layout") {
  const auto bytes = bytes_of(minimal_set());
  std::uint64_t header_len = 0;
  for (int i = 0; i < 8; ++i) header_len |= std::uint64_t(static_cast<unsigned char>(bytes[4 + i])) << (8 * i);
  REQUIRE(12 + header_len <= bytes.size());
  const auto header = bytes.substr(12, header_len);
  CHECK(header.front() == '{');
  CHECK(header.find("\"tensors\"") != std::string::npos);
  // unembed [3 x 4] + one record [2 x 3 x 4] of float32
  CHECK(bytes.size() - 12 - header_len == (12 + 24) * 4);
}

TEST_CASE("unembed rows differing from vocab length is rejected before writing") {
  auto set = minimal_set();
  set.vocab.push_back("extra");
  set.model_meta.vocab = 4;
  CHECK(has_field(validate_trace(set), "unembed"));
  std::ostringstream out;
  CHECK_THROWS_AS(write_trace(set, out), TraceError);
  CHECK(out.str().empty());
}

TEST_CASE("bad magic is its own error kind") {
  auto bytes = bytes_of(minimal_set());
  bytes[3] = '2';
  CHECK(read_error(bytes) == TraceError::Kind::bad_magic);
}

TEST_CASE("stream truncated mid-tensor names the tensor") {
  const auto bytes = bytes_of(minimal_set());
  std::string message;
  CHECK(read_error(bytes.substr(0, bytes.size() - 6), &message) == TraceError::Kind::truncated);
  CHECK(message.find("record/0/hidden_states") != std::string::npos);
}

TEST_CASE("stream truncated inside the header") {
  const auto bytes = bytes_of(minimal_set());
  CHECK(read_error(bytes.substr(0, 20)) == TraceError::Kind::truncated);
  CHECK(read_error(bytes.substr(0, 6)) == TraceError::Kind::truncated);
}

TEST_CASE("header declaring d=8 over a d=4 payload is a dimension mismatch") {
  auto bytes = bytes_of(minimal_set());
  const auto at = bytes.find("\"hidden\":4");
  REQUIRE(at != std::string::npos);
  bytes[at + 9] = '8';
  CHECK(read_error(bytes) == TraceError::Kind::dimension_mismatch);
}

TEST_CASE("trailing payload bytes are a dimension mismatch") {
  CHECK(read_error(bytes_of(minimal_set()) + std::string(4, '\0')) == TraceError::Kind::dimension_mismatch);
}

TEST_CASE("unparsable header is malformed") {
  auto bytes = bytes_of(minimal_set());
  bytes[12] = '[';
  CHECK(read_error(bytes) == TraceError::Kind::malformed_header);
}

TEST_CASE("validate_trace") {
  Rng rng(4);
  TraceSpec spec;
  spec.records = 3;
  auto set = random_trace(rng, spec);

  SUBCASE("valid set has no violations") { CHECK(validate_trace(set).empty()); }

  SUBCASE("attention row summing to 0.8 gives one violation naming layer and head") {
    auto& row = set.records[1].attention_rows.value();
    auto r = row.row(1, 0);
    double sum = 0;
    for (auto& w : r) sum += w;
    for (auto& w : r) w = static_cast<float>(w / sum * 0.8);
    const auto v = validate_trace(set);
    REQUIRE(v.size() == 1);
    CHECK(v[0].record_id == "r1");
    CHECK(v[0].field == "attention_rows");
    CHECK(v[0].message.find("layer 1 head 0") != std::string::npos);
  }

  SUBCASE("answer_position_index out of range gives one violation") {
    set.records[0].answer_position_index = 7;
    const auto v = validate_trace(set);
    REQUIRE(v.size() == 1);
    CHECK(v[0].field == "answer_position_index");
  }

  SUBCASE("wrong layer count in hidden states") {
    set.records[2].hidden_states = Tensor({2, spec.layers, spec.hidden});
    CHECK(has_field(validate_trace(set), "hidden_states"));
  }

  SUBCASE("overlapping segments") {
    set.records[0].segments->query.begin = 0;
    CHECK(has_field(validate_trace(set), "segments"));
  }

  SUBCASE("duplicate answer token ids") {
    set.answer_space.token_ids = {2, 2};
    CHECK(has_field(validate_trace(set), "answer_space"));
  }

  SUBCASE("invalid sets are readable without validation and rejected with it") {
    set.records[0].answer_position_index = 9;
    std::ostringstream out;
    CHECK_THROWS(write_trace(set, out));
  }
}

TEST_CASE("segment buckets cover every position") {
  const SegmentMap m{{0, 3}, {3, 5}, {5, 9}};
  CHECK(m.bucket_of(0) == Segment::context);
  CHECK(m.bucket_of(4) == Segment::query);
  CHECK(m.bucket_of(8) == Segment::rationale);
  CHECK(m.bucket_of(9) == Segment::other);
}

TEST_CASE("missing file is an io error") {
  try {
    read_trace_file("/nonexistent/trace.ict");
    FAIL("expected an error");
  } catch (const TraceError& e) {
    CHECK(e.kind() == TraceError::Kind::io);
  }
}
