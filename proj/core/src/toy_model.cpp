#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "container.hpp"
#include "toy_internal.hpp"

namespace ict::toy {

namespace {

using detail::as_matrix;
using detail::as_row;
using detail::Mat;

constexpr float kNormEpsilon = 1e-5f;

Tensor random_matrix(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
  Tensor t({rows, cols});
  for (auto& x : t.values()) x = static_cast<float>(stddev * rng.normal());
  return t;
}

Tensor constant_vector(std::size_t n, float value) {
  Tensor t({n});
  for (auto& x : t.values()) x = value;
  return t;
}

void layer_norm(const Mat& x, const Tensor& gain, const Tensor& bias, Mat& out, detail::NormCache& cache) {
  const auto d = static_cast<float>(x.cols());
  cache.normalized.resize(x.rows(), x.cols());
  cache.inverse_std.resize(x.rows());
  for (Eigen::Index t = 0; t < x.rows(); ++t) {
    const float mean = x.row(t).sum() / d;
    const auto centered = (x.row(t).array() - mean).matrix();
    const float var = centered.squaredNorm() / d;
    const float inv = 1.0f / std::sqrt(var + kNormEpsilon);
    cache.inverse_std(t) = inv;
    cache.normalized.row(t) = centered * inv;
  }
  out = (cache.normalized.array().rowwise() * as_row(gain).array()).rowwise() + as_row(bias).array();
}

Mat layer_norm_backward(const Mat& d_out, const detail::NormCache& cache, const Tensor& gain,
                        Tensor& d_gain, Tensor& d_bias) {
  const auto& xhat = cache.normalized;
  as_row(d_gain) += (d_out.array() * xhat.array()).colwise().sum().matrix();
  as_row(d_bias) += d_out.colwise().sum();
  const Mat d_xhat = d_out.array().rowwise() * as_row(gain).array();
  const auto d = static_cast<float>(xhat.cols());
  Mat d_in(xhat.rows(), xhat.cols());
  for (Eigen::Index t = 0; t < xhat.rows(); ++t) {
    const float mean_g = d_xhat.row(t).sum() / d;
    const float mean_gx = d_xhat.row(t).dot(xhat.row(t)) / d;
    d_in.row(t) = cache.inverse_std(t) *
                  (d_xhat.row(t).array() - mean_g - xhat.row(t).array() * mean_gx).matrix();
  }
  return d_in;
}

}  // namespace

void ToyConfig::validate() const {
  if (!layers || !hidden || !heads || !ffn || !vocab || !max_seq) {
    throw std::invalid_argument("ToyConfig: all sizes must be at least 1");
  }
  if (hidden % heads != 0) throw std::invalid_argument("ToyConfig: d must be divisible by H");
}

ToyParams ToyParams::init(const ToyConfig& config) {
  config.validate();
  Rng rng(config.seed);
  const std::size_t d = config.hidden, dm = config.ffn;
  const double proj = 1.0 / std::sqrt(static_cast<double>(d));
  const double residual = proj / std::sqrt(2.0 * static_cast<double>(config.layers));

  ToyParams p;
  p.config = config;
  p.token_embedding = random_matrix(config.vocab, d, 1.0, rng);
  p.position_embedding = random_matrix(config.max_seq, d, 0.5, rng);
  for (std::size_t l = 0; l < config.layers; ++l) {
    BlockParams b;
    b.query = random_matrix(d, d, proj, rng);
    b.key = random_matrix(d, d, proj, rng);
    b.value = random_matrix(d, d, proj, rng);
    b.output = random_matrix(d, d, residual, rng);
    b.ffn_key = random_matrix(dm, d, proj, rng);
    b.ffn_value = random_matrix(dm, d, residual * std::sqrt(static_cast<double>(d) / dm), rng);
    b.norm1_gain = constant_vector(d, 1.0f);
    b.norm1_bias = constant_vector(d, 0.0f);
    b.norm2_gain = constant_vector(d, 1.0f);
    b.norm2_bias = constant_vector(d, 0.0f);
    p.blocks.push_back(std::move(b));
  }
  p.unembed = random_matrix(config.vocab, d, proj, rng);
  return p;
}

ToyParams ToyParams::zeros_like(const ToyParams& other) {
  ToyParams z = other;
  for (auto* t : z.tensors()) std::fill(t->values().begin(), t->values().end(), 0.0f);
  z.train_accuracy = 0.0;
  return z;
}

void ToyParams::zero_blocks() {
  for (auto& b : blocks) {
    for (auto* t : {&b.query, &b.key, &b.value, &b.output, &b.ffn_key, &b.ffn_value}) {
      std::fill(t->values().begin(), t->values().end(), 0.0f);
    }
  }
}

std::vector<Tensor*> ToyParams::tensors() {
  std::vector<Tensor*> out{&token_embedding, &position_embedding};
  for (auto& b : blocks) {
    out.insert(out.end(), {&b.query, &b.key, &b.value, &b.output, &b.ffn_key, &b.ffn_value,
                           &b.norm1_gain, &b.norm1_bias, &b.norm2_gain, &b.norm2_bias});
  }
  out.push_back(&unembed);
  return out;
}

std::vector<const Tensor*> ToyParams::tensors() const {
  auto mutable_list = const_cast<ToyParams*>(this)->tensors();
  return {mutable_list.begin(), mutable_list.end()};
}

namespace detail {

void check_tokens(const ToyParams& params, std::span<const Token> tokens) {
  if (tokens.empty()) throw std::invalid_argument("toy forward: empty input");
  if (tokens.size() > params.config.max_seq) {
    throw std::invalid_argument("toy forward: length " + std::to_string(tokens.size()) +
                                " exceeds max_seq " + std::to_string(params.config.max_seq));
  }
  for (auto t : tokens) {
    if (t >= params.config.vocab) throw std::invalid_argument("toy forward: invalid token " + std::to_string(t));
  }
}

void forward(const ToyParams& params, std::span<const Token> tokens, ForwardCache& cache) {
  check_tokens(params, tokens);
  const auto& cfg = params.config;
  const auto T = static_cast<Eigen::Index>(tokens.size());
  const auto d = static_cast<Eigen::Index>(cfg.hidden);
  const auto H = static_cast<Eigen::Index>(cfg.heads);
  const Eigen::Index dh = d / H;
  const float scale = 1.0f / std::sqrt(static_cast<float>(dh));

  cache.hidden.assign(cfg.layers + 1, Mat());
  cache.blocks.resize(cfg.layers);
  Mat& h0 = cache.hidden[0];
  h0.resize(T, d);
  const auto tok = as_matrix(params.token_embedding);
  const auto pos = as_matrix(params.position_embedding);
  for (Eigen::Index t = 0; t < T; ++t) h0.row(t) = tok.row(tokens[static_cast<std::size_t>(t)]) + pos.row(t);

  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const auto& b = params.blocks[l];
    auto& c = cache.blocks[l];
    const Mat& h = cache.hidden[l];

    if (cfg.pre_norm) {
      layer_norm(h, b.norm1_gain, b.norm1_bias, c.attn_in, c.norm1);
    } else {
      c.attn_in = h;
    }
    c.q.noalias() = c.attn_in * as_matrix(b.query).transpose();
    c.k.noalias() = c.attn_in * as_matrix(b.key).transpose();
    c.v.noalias() = c.attn_in * as_matrix(b.value).transpose();
    c.context.resize(T, d);
    c.probs.resize(static_cast<std::size_t>(H));
    for (Eigen::Index hd = 0; hd < H; ++hd) {
      Mat& p = c.probs[static_cast<std::size_t>(hd)];
      p.noalias() = (c.q.middleCols(hd * dh, dh) * c.k.middleCols(hd * dh, dh).transpose()) * scale;
      for (Eigen::Index i = 0; i < T; ++i) {
        const float top = p.row(i).head(i + 1).maxCoeff();
        float sum = 0.0f;
        for (Eigen::Index j = 0; j <= i; ++j) {
          p(i, j) = std::exp(p(i, j) - top);
          sum += p(i, j);
        }
        p.row(i).head(i + 1) /= sum;
        p.row(i).tail(T - i - 1).setZero();
      }
      c.context.middleCols(hd * dh, dh).noalias() = p * c.v.middleCols(hd * dh, dh);
    }
    c.mixed = h;
    c.mixed.noalias() += c.context * as_matrix(b.output).transpose();

    if (cfg.pre_norm) {
      layer_norm(c.mixed, b.norm2_gain, b.norm2_bias, c.ffn_in, c.norm2);
    } else {
      c.ffn_in = c.mixed;
    }
    c.pre_activation.noalias() = c.ffn_in * as_matrix(b.ffn_key).transpose();
    c.activation = c.pre_activation.cwiseMax(0.0f);

    Mat& next = cache.hidden[l + 1];
    next = h;
    next.noalias() += c.activation * as_matrix(b.ffn_value);
  }
  cache.logits.noalias() = cache.hidden.back() * as_matrix(params.unembed).transpose();
}

void backward(const ToyParams& params, std::span<const Token> tokens, const ForwardCache& cache,
              const Mat& d_logits, ToyParams& gradient) {
  const auto& cfg = params.config;
  const auto T = static_cast<Eigen::Index>(tokens.size());
  const auto d = static_cast<Eigen::Index>(cfg.hidden);
  const auto H = static_cast<Eigen::Index>(cfg.heads);
  const Eigen::Index dh = d / H;
  const float scale = 1.0f / std::sqrt(static_cast<float>(dh));

  as_matrix(gradient.unembed).noalias() += d_logits.transpose() * cache.hidden.back();
  Mat d_h = d_logits * as_matrix(params.unembed);

  for (std::size_t l = cfg.layers; l-- > 0;) {
    const auto& b = params.blocks[l];
    auto& g = gradient.blocks[l];
    const auto& c = cache.blocks[l];

    // h' = h + relu(ffn_in W_K^T) W_V
    as_matrix(g.ffn_value).noalias() += c.activation.transpose() * d_h;
    Mat d_pre = d_h * as_matrix(b.ffn_value).transpose();
    d_pre = (c.pre_activation.array() > 0.0f).select(d_pre, 0.0f);
    as_matrix(g.ffn_key).noalias() += d_pre.transpose() * c.ffn_in;
    Mat d_mixed = d_pre * as_matrix(b.ffn_key);
    if (cfg.pre_norm) d_mixed = layer_norm_backward(d_mixed, c.norm2, b.norm2_gain, g.norm2_gain, g.norm2_bias);

    // mixed = h + context W_O^T
    Mat d_prev = d_h + d_mixed;
    as_matrix(g.output).noalias() += d_mixed.transpose() * c.context;
    const Mat d_context = d_mixed * as_matrix(b.output);

    Mat d_q(T, d), d_k(T, d), d_v(T, d);
    for (Eigen::Index hd = 0; hd < H; ++hd) {
      const Mat& p = c.probs[static_cast<std::size_t>(hd)];
      const auto dc = d_context.middleCols(hd * dh, dh);
      const Mat d_p = dc * c.v.middleCols(hd * dh, dh).transpose();
      d_v.middleCols(hd * dh, dh).noalias() = p.transpose() * dc;
      const Eigen::VectorXf row_dot = (d_p.array() * p.array()).rowwise().sum();
      const Mat d_s = ((d_p.colwise() - row_dot).array() * p.array() * scale).matrix();
      d_q.middleCols(hd * dh, dh).noalias() = d_s * c.k.middleCols(hd * dh, dh);
      d_k.middleCols(hd * dh, dh).noalias() = d_s.transpose() * c.q.middleCols(hd * dh, dh);
    }
    as_matrix(g.query).noalias() += d_q.transpose() * c.attn_in;
    as_matrix(g.key).noalias() += d_k.transpose() * c.attn_in;
    as_matrix(g.value).noalias() += d_v.transpose() * c.attn_in;
    Mat d_attn_in = d_q * as_matrix(b.query);
    d_attn_in.noalias() += d_k * as_matrix(b.key);
    d_attn_in.noalias() += d_v * as_matrix(b.value);
    if (cfg.pre_norm) {
      d_prev += layer_norm_backward(d_attn_in, c.norm1, b.norm1_gain, g.norm1_gain, g.norm1_bias);
    } else {
      d_prev += d_attn_in;
    }
    d_h = std::move(d_prev);
  }

  auto d_tok = as_matrix(gradient.token_embedding);
  auto d_pos = as_matrix(gradient.position_embedding);
  for (Eigen::Index t = 0; t < T; ++t) {
    d_tok.row(tokens[static_cast<std::size_t>(t)]) += d_h.row(t);
    d_pos.row(t) += d_h.row(t);
  }
}

}  // namespace detail

ForwardTrace forward_with_trace(std::span<const Token> tokens, const ToyParams& params,
                                const ForwardRequest& request) {
  detail::ForwardCache cache;
  detail::forward(params, tokens, cache);
  const auto& cfg = params.config;
  const std::size_t T = tokens.size();

  ForwardTrace out;
  const auto last = cache.logits.row(static_cast<Eigen::Index>(T - 1));
  out.logits.assign(last.data(), last.data() + last.size());

  out.hidden = Tensor({request.record_positions.size(), cfg.layers + 1, cfg.hidden});
  for (std::size_t i = 0; i < request.record_positions.size(); ++i) {
    const std::size_t p = request.record_positions[i];
    if (p >= T) throw std::invalid_argument("forward_with_trace: record position past the input");
    for (std::size_t l = 0; l <= cfg.layers; ++l) {
      const auto row = cache.hidden[l].row(static_cast<Eigen::Index>(p));
      std::copy(row.data(), row.data() + row.size(), out.hidden.row(i, l).begin());
    }
  }

  if (request.attention_from) {
    const std::size_t from = *request.attention_from;
    if (from >= T) throw std::invalid_argument("forward_with_trace: attention position past the input");
    Tensor att({cfg.layers, cfg.heads, from + 1});
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      for (std::size_t h = 0; h < cfg.heads; ++h) {
        const auto row = cache.blocks[l].probs[h].row(static_cast<Eigen::Index>(from));
        std::copy(row.data(), row.data() + from + 1, att.row(l, h).begin());
      }
    }
    out.attention = std::move(att);
  }
  return out;
}

void write_toy_params(const ToyParams& params, std::ostream& sink) {
  const auto& c = params.config;
  nlohmann::json header;
  header["format"] = kToyParamsMagic;
  header["version"] = 1;
  header["config"] = {{"layers", c.layers}, {"hidden", c.hidden},   {"heads", c.heads},
                      {"ffn", c.ffn},       {"vocab", c.vocab},     {"max_seq", c.max_seq},
                      {"pre_norm", c.pre_norm}, {"seed", c.seed}};
  header["train_accuracy"] = params.train_accuracy;
  header["vocab"] = CoinVocab::strings();

  std::vector<ict::detail::NamedTensor> named{{"token_embedding", &params.token_embedding},
                                         {"position_embedding", &params.position_embedding}};
  for (std::size_t l = 0; l < params.blocks.size(); ++l) {
    const auto& b = params.blocks[l];
    const std::string prefix = "block/" + std::to_string(l) + "/";
    for (const auto& [name, t] : std::initializer_list<std::pair<const char*, const Tensor*>>{
             {"query", &b.query},           {"key", &b.key},
             {"value", &b.value},           {"output", &b.output},
             {"ffn_key", &b.ffn_key},       {"ffn_value", &b.ffn_value},
             {"norm1_gain", &b.norm1_gain}, {"norm1_bias", &b.norm1_bias},
             {"norm2_gain", &b.norm2_gain}, {"norm2_bias", &b.norm2_bias}}) {
      named.emplace_back(prefix + name, t);
    }
  }
  named.emplace_back("unembed", &params.unembed);
  ict::detail::write_container(sink, kToyParamsMagic, std::move(header), named);
}

ToyParams read_toy_params(std::istream& source) {
  auto container = ict::detail::read_container(source, kToyParamsMagic);
  ToyParams p;
  try {
    const auto& c = container.header.at("config");
    p.config = {c.at("layers").get<std::size_t>(), c.at("hidden").get<std::size_t>(),
                c.at("heads").get<std::size_t>(),  c.at("ffn").get<std::size_t>(),
                c.at("vocab").get<std::size_t>(),  c.at("max_seq").get<std::size_t>(),
                c.at("pre_norm").get<bool>(),      c.at("seed").get<std::uint64_t>()};
    p.train_accuracy = container.header.at("train_accuracy").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw TraceError(TraceError::Kind::malformed_header, std::string("toy params header: ") + e.what());
  }
  p.config.validate();

  // Shapes are checked against a freshly shaped parameter set.
  ToyParams shaped = ToyParams::init(p.config);
  p.blocks.resize(p.config.layers);
  auto take = [&](const std::string& name, Tensor& dst, const Tensor& like) {
    auto it = container.tensors.find(name);
    if (it == container.tensors.end()) {
      throw TraceError(TraceError::Kind::malformed_header, "toy params: missing tensor '" + name + "'");
    }
    if (it->second.dims() != like.dims()) {
      throw TraceError(TraceError::Kind::dimension_mismatch,
                       "toy params: tensor '" + name + "' " + format_dims(it->second.dims()) +
                           " disagrees with config " + format_dims(like.dims()));
    }
    dst = std::move(it->second);
  };
  take("token_embedding", p.token_embedding, shaped.token_embedding);
  take("position_embedding", p.position_embedding, shaped.position_embedding);
  for (std::size_t l = 0; l < p.config.layers; ++l) {
    const std::string prefix = "block/" + std::to_string(l) + "/";
    auto& b = p.blocks[l];
    const auto& s = shaped.blocks[l];
    take(prefix + "query", b.query, s.query);
    take(prefix + "key", b.key, s.key);
    take(prefix + "value", b.value, s.value);
    take(prefix + "output", b.output, s.output);
    take(prefix + "ffn_key", b.ffn_key, s.ffn_key);
    take(prefix + "ffn_value", b.ffn_value, s.ffn_value);
    take(prefix + "norm1_gain", b.norm1_gain, s.norm1_gain);
    take(prefix + "norm1_bias", b.norm1_bias, s.norm1_bias);
    take(prefix + "norm2_gain", b.norm2_gain, s.norm2_gain);
    take(prefix + "norm2_bias", b.norm2_bias, s.norm2_bias);
  }
  take("unembed", p.unembed, shaped.unembed);
  return p;
}

void save_toy_params(const ToyParams& params, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  write_toy_params(params, out);
}

ToyParams load_toy_params(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return read_toy_params(in);
}

}  // namespace ict::toy
