#include "ict/trace.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "container.hpp"

namespace ict {

using nlohmann::json;
using Kind = TraceError::Kind;

namespace {

constexpr double kRowSumTolerance = 1e-4;

std::string record_tensor(std::size_t index, const char* what) {
  return "record/" + std::to_string(index) + "/" + what;
}

std::string ffn_tensor(std::size_t layer) { return "ffn/" + std::to_string(layer) + "/values"; }

bool all_finite(std::span<const float> values) {
  for (float v : values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

json range_json(const PositionRange& r) { return json::array({r.begin, r.end}); }

PositionRange range_from(const json& j) {
  return {j.at(0).get<std::size_t>(), j.at(1).get<std::size_t>()};
}

void validate_record(const TraceSet& set, const ExampleRecord& rec, std::vector<Violation>& out) {
  const auto& meta = set.model_meta;
  auto add = [&](std::string field, std::string message) {
    out.push_back({rec.example_id, std::move(field), std::move(message)});
  };

  const auto& hs = rec.hidden_states;
  if (hs.rank() != 3 || hs.dim(0) == 0) {
    add("hidden_states", "expected [positions x L+1 x d], got " + format_dims(hs.dims()));
  } else {
    if (hs.dim(1) != meta.layers + 1) {
      add("hidden_states", "layer axis is " + std::to_string(hs.dim(1)) + ", expected L+1 = " +
                               std::to_string(meta.layers + 1));
    }
    if (hs.dim(2) != meta.hidden) {
      add("hidden_states", "hidden axis is " + std::to_string(hs.dim(2)) + ", expected d = " +
                               std::to_string(meta.hidden));
    }
    if (!all_finite(hs.values())) add("hidden_states", "non-finite value");
    if (rec.answer_position_index >= hs.dim(0)) {
      add("answer_position_index", std::to_string(rec.answer_position_index) +
                                       " out of range for " + std::to_string(hs.dim(0)) +
                                       " recorded positions");
    }
  }

  if (rec.gold_label && *rec.gold_label > 1) {
    add("gold_label", "label index " + std::to_string(*rec.gold_label) + " is not 0 or 1");
  }

  std::size_t seq_len = 0;
  if (rec.attention_rows) {
    const auto& att = *rec.attention_rows;
    if (att.rank() != 3 || att.dim(0) != meta.layers || att.dim(1) != meta.heads || att.dim(2) == 0) {
      add("attention_rows", "expected [L x H x seq_len], got " + format_dims(att.dims()));
    } else {
      seq_len = att.dim(2);
      for (std::size_t l = 0; l < att.dim(0); ++l) {
        for (std::size_t h = 0; h < att.dim(1); ++h) {
          double sum = 0.0;
          bool bad = false;
          for (float w : att.row(l, h)) {
            if (!std::isfinite(w) || w < 0.0f) bad = true;
            sum += w;
          }
          const std::string where = "layer " + std::to_string(l) + " head " + std::to_string(h);
          if (bad) {
            add("attention_rows", where + ": negative or non-finite weight");
          } else if (std::abs(sum - 1.0) > kRowSumTolerance) {
            add("attention_rows", where + ": row sums to " + std::to_string(sum));
          }
        }
      }
    }
  }

  if (rec.segments) {
    const auto& seg = *rec.segments;
    const std::array<std::pair<const char*, PositionRange>, 3> parts{
        {{"context", seg.context}, {"query", seg.query}, {"rationale", seg.rationale}}};
    for (const auto& [name, r] : parts) {
      if (r.end < r.begin) add("segments", std::string(name) + " range is reversed");
      if (seq_len && r.end > seq_len) {
        add("segments", std::string(name) + " range ends past attention row length " +
                            std::to_string(seq_len));
      }
    }
    for (std::size_t a = 0; a < parts.size(); ++a) {
      for (std::size_t b = a + 1; b < parts.size(); ++b) {
        const auto& ra = parts[a].second;
        const auto& rb = parts[b].second;
        if (!ra.empty() && !rb.empty() && ra.begin < rb.end && rb.begin < ra.end) {
          add("segments", std::string(parts[a].first) + " overlaps " + parts[b].first);
        }
      }
    }
  }
}

}  // namespace

const char* segment_name(Segment s) {
  switch (s) {
    case Segment::context: return "context";
    case Segment::query: return "query";
    case Segment::rationale: return "rationale";
    case Segment::other: return "other";
  }
  return "other";
}

Segment SegmentMap::bucket_of(std::size_t position) const noexcept {
  if (context.contains(position)) return Segment::context;
  if (query.contains(position)) return Segment::query;
  if (rationale.contains(position)) return Segment::rationale;
  return Segment::other;
}

std::string to_string(const Violation& v) {
  std::string out = v.record_id.empty() ? std::string("<set>") : v.record_id;
  return out + " " + v.field + ": " + v.message;
}

std::vector<Violation> validate_trace(const TraceSet& set) {
  std::vector<Violation> out;
  auto add = [&](std::string field, std::string message) {
    out.push_back({"", std::move(field), std::move(message)});
  };
  const auto& meta = set.model_meta;

  if (meta.layers == 0 || meta.hidden == 0 || meta.heads == 0 || meta.vocab == 0) {
    add("model_meta", "all of L, d, H, V must be positive");
  }
  if (set.vocab.size() != meta.vocab) {
    add("vocab", std::to_string(set.vocab.size()) + " tokens but model_meta.V = " +
                     std::to_string(meta.vocab));
  }
  if (set.unembed.rank() != 2 || set.unembed.dim(0) != set.vocab.size() ||
      set.unembed.dim(1) != meta.hidden) {
    add("unembed", "shape " + format_dims(set.unembed.dims()) + " does not match [vocab x d] = [" +
                       std::to_string(set.vocab.size()) + "x" + std::to_string(meta.hidden) + "]");
  } else if (!all_finite(set.unembed.values())) {
    add("unembed", "non-finite value");
  }

  const auto& ids = set.answer_space.token_ids;
  if (ids[0] == ids[1]) add("answer_space", "token ids must be distinct");
  for (std::size_t i = 0; i < 2; ++i) {
    if (ids[i] >= meta.vocab) {
      add("answer_space", "token id " + std::to_string(ids[i]) + " outside vocabulary");
    }
    if (set.answer_space.labels[i].empty()) add("answer_space", "empty label name");
  }

  if (!set.ffn_value_matrices.empty()) {
    if (set.ffn_value_matrices.size() != meta.layers) {
      add("ffn_value_matrices", std::to_string(set.ffn_value_matrices.size()) +
                                    " matrices for " + std::to_string(meta.layers) + " layers");
    }
    for (std::size_t l = 0; l < set.ffn_value_matrices.size(); ++l) {
      const auto& m = set.ffn_value_matrices[l];
      const auto& first = set.ffn_value_matrices.front();
      if (m.rank() != 2 || m.dim(1) != meta.hidden || m.dim(0) != first.dim(0)) {
        add("ffn_value_matrices", "layer " + std::to_string(l) + " shape " + format_dims(m.dims()));
      }
    }
  }

  for (const auto& rec : set.records) validate_record(set, rec, out);
  return out;
}

std::size_t write_trace(const TraceSet& set, std::ostream& sink) {
  if (auto violations = validate_trace(set); !violations.empty()) {
    throw TraceError(Kind::validation, "refusing to write invalid trace: " + to_string(violations.front()));
  }

  json header;
  header["format"] = kTraceMagic;
  header["version"] = 1;
  header["model_meta"] = {{"layers", set.model_meta.layers},
                          {"hidden", set.model_meta.hidden},
                          {"heads", set.model_meta.heads},
                          {"vocab", set.model_meta.vocab}};
  header["vocab"] = set.vocab;
  header["answer_space"] = {{"labels", set.answer_space.labels},
                            {"token_ids", set.answer_space.token_ids}};

  std::vector<detail::NamedTensor> tensors;
  tensors.emplace_back("unembed", &set.unembed);

  auto records = json::array();
  for (std::size_t i = 0; i < set.records.size(); ++i) {
    const auto& rec = set.records[i];
    json r;
    r["example_id"] = rec.example_id;
    r["gold_label"] = rec.gold_label ? json(*rec.gold_label) : json(nullptr);
    r["answer_position_index"] = rec.answer_position_index;
    r["path_group"] = rec.path_group;
    r["has_attention"] = rec.attention_rows.has_value();
    if (rec.segments) {
      r["segments"] = {{"context", range_json(rec.segments->context)},
                       {"query", range_json(rec.segments->query)},
                       {"rationale", range_json(rec.segments->rationale)}};
    } else {
      r["segments"] = nullptr;
    }
    records.push_back(std::move(r));
    tensors.emplace_back(record_tensor(i, "hidden_states"), &rec.hidden_states);
    if (rec.attention_rows) tensors.emplace_back(record_tensor(i, "attention_rows"), &*rec.attention_rows);
  }
  header["records"] = std::move(records);
  header["ffn_layers"] = set.ffn_value_matrices.size();
  for (std::size_t l = 0; l < set.ffn_value_matrices.size(); ++l) {
    tensors.emplace_back(ffn_tensor(l), &set.ffn_value_matrices[l]);
  }

  // Serialize to memory first so a failed sink never sees a partial header.
  std::ostringstream buffer;
  const std::size_t n = detail::write_container(buffer, kTraceMagic, std::move(header), tensors);
  const std::string bytes = std::move(buffer).str();
  sink.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!sink) throw TraceError(Kind::io, "trace sink write failed");
  return n;
}

void write_trace_file(const TraceSet& set, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw TraceError(Kind::io, "cannot open " + path + " for writing");
  write_trace(set, out);
}

TraceSet read_trace(std::istream& source, ReadOptions options) {
  auto container = detail::read_container(source, kTraceMagic);
  auto& header = container.header;
  auto take = [&](const std::string& name) -> Tensor {
    auto it = container.tensors.find(name);
    if (it == container.tensors.end()) {
      throw TraceError(Kind::malformed_header, "header references missing tensor '" + name + "'");
    }
    return std::move(it->second);
  };
  auto expect_dims = [](const std::string& name, const Tensor& t, std::size_t axis, std::size_t want,
                        const char* symbol) {
    if (t.rank() <= axis || t.dim(axis) != want) {
      throw TraceError(Kind::dimension_mismatch,
                       "tensor '" + name + "' " + format_dims(t.dims()) + " disagrees with header " +
                           symbol + "=" + std::to_string(want));
    }
  };

  TraceSet set;
  try {
    const auto& meta = header.at("model_meta");
    set.model_meta = {meta.at("layers").get<std::size_t>(), meta.at("hidden").get<std::size_t>(),
                      meta.at("heads").get<std::size_t>(), meta.at("vocab").get<std::size_t>()};
    set.vocab = header.at("vocab").get<std::vector<std::string>>();
    const auto& answers = header.at("answer_space");
    set.answer_space.labels = answers.at("labels").get<std::array<std::string, 2>>();
    set.answer_space.token_ids = answers.at("token_ids").get<std::array<std::size_t, 2>>();
    const std::size_t L = set.model_meta.layers;
    const std::size_t d = set.model_meta.hidden;

    set.unembed = take("unembed");
    expect_dims("unembed", set.unembed, 1, d, "d");

    const auto& records = header.at("records");
    set.records.reserve(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
      const auto& r = records[i];
      ExampleRecord rec;
      rec.example_id = r.at("example_id").get<std::string>();
      if (!r.at("gold_label").is_null()) rec.gold_label = r.at("gold_label").get<Label>();
      rec.answer_position_index = r.at("answer_position_index").get<std::size_t>();
      rec.path_group = r.at("path_group").get<std::string>();
      const auto hs_name = record_tensor(i, "hidden_states");
      rec.hidden_states = take(hs_name);
      expect_dims(hs_name, rec.hidden_states, 1, L + 1, "L+1");
      expect_dims(hs_name, rec.hidden_states, 2, d, "d");
      if (r.at("has_attention").get<bool>()) {
        const auto att_name = record_tensor(i, "attention_rows");
        rec.attention_rows = take(att_name);
        expect_dims(att_name, *rec.attention_rows, 0, L, "L");
        expect_dims(att_name, *rec.attention_rows, 1, set.model_meta.heads, "H");
      }
      if (const auto& s = r.at("segments"); !s.is_null()) {
        rec.segments = SegmentMap{range_from(s.at("context")), range_from(s.at("query")),
                                  range_from(s.at("rationale"))};
      }
      set.records.push_back(std::move(rec));
    }

    const auto ffn_layers = header.at("ffn_layers").get<std::size_t>();
    for (std::size_t l = 0; l < ffn_layers; ++l) {
      set.ffn_value_matrices.push_back(take(ffn_tensor(l)));
      expect_dims(ffn_tensor(l), set.ffn_value_matrices.back(), 1, d, "d");
    }
  } catch (const nlohmann::json::exception& e) {
    throw TraceError(Kind::malformed_header, std::string("trace header: ") + e.what());
  }

  if (options.validate) {
    if (auto violations = validate_trace(set); !violations.empty()) {
      throw TraceError(Kind::validation, std::to_string(violations.size()) +
                                             " invariant violation(s); first: " +
                                             to_string(violations.front()));
    }
  }
  return set;
}

TraceSet read_trace_file(const std::string& path, ReadOptions options) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TraceError(Kind::io, "cannot open " + path);
  return read_trace(in, options);
}

}  // namespace ict
