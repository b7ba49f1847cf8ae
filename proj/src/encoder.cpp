#include "extembed/encoder.hpp"

#include <cmath>
#include <cstring>
#include <numbers>
#include <string>

#include "extembed/errors.hpp"
#include "extembed/position_ext.hpp"
#include "extembed/rng.hpp"

namespace extembed {

std::uint64_t checksum(const Matrix& m, std::uint64_t seed) {
  std::uint64_t h = seed;
  auto mix = [&h](const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 1099511628211ULL;
    }
  };
  const std::int64_t shape[2] = {m.rows(), m.cols()};
  mix(shape, sizeof(shape));
  mix(m.data(), sizeof(double) * static_cast<std::size_t>(m.size()));
  return h;
}

std::string_view to_string(PositionMode mode) { return mode == PositionMode::Absolute ? "absolute" : "rotary"; }

PositionMode parse_position_mode(std::string_view name) {
  if (name == "absolute" || name == "ABSOLUTE" || name == "ape") return PositionMode::Absolute;
  if (name == "rotary" || name == "ROTARY" || name == "rope") return PositionMode::Rotary;
  throw ConfigError("unknown position mode '" + std::string(name) + "'");
}

void ModelConfig::validate() const {
  if (hidden_size == 0 || n_heads == 0) throw ConfigError("hidden_size and n_heads must be positive");
  if (hidden_size % n_heads != 0) {
    throw ConfigError("hidden_size " + std::to_string(hidden_size) + " is not divisible by n_heads " +
                      std::to_string(n_heads));
  }
  if (head_dim() % 2 != 0) {
    throw ConfigError("per-head dimension " + std::to_string(head_dim()) + " must be even for rotary pairs");
  }
  if (n_layers == 0) throw ConfigError("n_layers must be at least 1");
  if (ffn_multiplier == 0) throw ConfigError("ffn_multiplier must be positive");
  if (vocab_size == 0) throw ConfigError("vocab_size must be positive");
  if (original_context == 0) throw ConfigError("original_context must be at least 1");
  if (!(rope_base > 1.0)) throw ConfigError("rope_base must exceed 1");
}

std::size_t PositionEmbeddingMatrix::frozen_count() const {
  std::size_t n = 0;
  for (const bool f : frozen) n += f ? 1 : 0;
  return n;
}

PositionEmbeddingMatrix PositionEmbeddingMatrix::original_rows(std::size_t original_context) const {
  PositionEmbeddingMatrix out;
  out.values.resize(static_cast<Eigen::Index>(original_context), values.cols());
  out.frozen.assign(original_context, false);
  const Eigen::Index step = layout == TableLayout::Interpolated ? static_cast<Eigen::Index>(scale) : 1;
  if (static_cast<Eigen::Index>(original_context - 1) * step >= values.rows()) {
    throw PositionError("installed table is too short to hold the original rows");
  }
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(original_context); ++i) {
    out.values.row(i) = values.row(i * step);
  }
  return out;
}

Weights Weights::zeros_like() const {
  Weights z = *this;
  z.for_each_tensor([](const std::string&, Matrix& m) { m.setZero(); });
  return z;
}

void Weights::for_each_tensor(const std::function<void(const std::string&, Matrix&)>& fn) {
  fn("token_embedding", token_embedding);
  if (positions.values.size() > 0) fn("position_embedding", positions.values);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto& L = layers[l];
    const std::string p = "layer" + std::to_string(l) + ".";
    fn(p + "attn_norm_gain", L.attn_norm_gain);
    fn(p + "attn_norm_bias", L.attn_norm_bias);
    fn(p + "wq", L.wq);
    fn(p + "bq", L.bq);
    fn(p + "wk", L.wk);
    fn(p + "bk", L.bk);
    fn(p + "wv", L.wv);
    fn(p + "bv", L.bv);
    fn(p + "wo", L.wo);
    fn(p + "bo", L.bo);
    fn(p + "ffn_norm_gain", L.ffn_norm_gain);
    fn(p + "ffn_norm_bias", L.ffn_norm_bias);
    fn(p + "w_in", L.w_in);
    fn(p + "b_in", L.b_in);
    fn(p + "w_out", L.w_out);
    fn(p + "b_out", L.b_out);
  }
  fn("final_norm_gain", final_norm_gain);
  fn("final_norm_bias", final_norm_bias);
}

void Weights::for_each_tensor(const std::function<void(const std::string&, const Matrix&)>& fn) const {
  const_cast<Weights*>(this)->for_each_tensor(
      [&fn](const std::string& name, Matrix& m) { fn(name, static_cast<const Matrix&>(m)); });
}

namespace {

Matrix uniform_matrix(Rng& rng, std::size_t rows, std::size_t cols, double bound) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-bound, bound);
  return m;
}

Matrix row_of(std::size_t cols, double value) { return Matrix::Constant(1, static_cast<Eigen::Index>(cols), value); }

}  // namespace

Model init_model(const ModelConfig& config) {
  config.validate();
  const std::size_t d = config.hidden_size;
  const std::size_t f = config.ffn_size();
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  Rng rng(config.init_seed);

  Model model;
  model.config = config;
  auto& w = model.weights;
  w.token_embedding = uniform_matrix(rng, config.vocab_size, d, bound);
  if (config.position_mode == PositionMode::Absolute) {
    w.positions.values = uniform_matrix(rng, config.original_context, d, bound);
    w.positions.frozen.assign(config.original_context, false);
  }
  w.layers.resize(config.n_layers);
  for (auto& L : w.layers) {
    L.attn_norm_gain = row_of(d, 1.0);
    L.attn_norm_bias = row_of(d, 0.0);
    L.wq = uniform_matrix(rng, d, d, bound);
    L.wk = uniform_matrix(rng, d, d, bound);
    L.wv = uniform_matrix(rng, d, d, bound);
    L.wo = uniform_matrix(rng, d, d, bound);
    L.bq = row_of(d, 0.0);
    L.bk = row_of(d, 0.0);
    L.bv = row_of(d, 0.0);
    L.bo = row_of(d, 0.0);
    L.ffn_norm_gain = row_of(d, 1.0);
    L.ffn_norm_bias = row_of(d, 0.0);
    L.w_in = uniform_matrix(rng, d, f, bound);
    L.b_in = row_of(f, 0.0);
    L.w_out = uniform_matrix(rng, f, d, bound);
    L.b_out = row_of(d, 0.0);
  }
  w.final_norm_gain = row_of(d, 1.0);
  w.final_norm_bias = row_of(d, 0.0);
  return model;
}

std::uint64_t model_checksum(const Model& model) {
  std::uint64_t h = 1469598103934665603ULL;
  model.weights.for_each_tensor([&h](const std::string&, const Matrix& m) { h = checksum(m, h); });
  for (const bool f : model.weights.positions.frozen) {
    h ^= f ? 1U : 0U;
    h *= 1099511628211ULL;
  }
  return h;
}

std::uint64_t non_position_checksum(const Model& model) {
  std::uint64_t h = 1469598103934665603ULL;
  model.weights.for_each_tensor([&h](const std::string& name, const Matrix& m) {
    if (name != "position_embedding") h = checksum(m, h);
  });
  return h;
}

PositionAssignment PositionAssignment::identity(PositionMode mode, std::size_t length) {
  return shifted(mode, length, 0);
}

PositionAssignment PositionAssignment::shifted(PositionMode mode, std::size_t length, std::size_t offset) {
  PositionAssignment p;
  if (mode == PositionMode::Absolute) {
    p.rows.resize(length);
    for (std::size_t i = 0; i < length; ++i) p.rows[i] = offset + i;
  } else {
    p.phases.resize(length);
    for (std::size_t i = 0; i < length; ++i) p.phases[i] = static_cast<double>(offset + i);
  }
  return p;
}

namespace {

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

double gelu(double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x))); }

double gelu_grad(double x) {
  const double t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}

Matrix layer_norm(const Matrix& x, const Matrix& gain, const Matrix& bias, NormCache* cache) {
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  Matrix xhat(n, d);
  Vector inv_std(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mean = x.row(i).mean();
    const double var = (x.row(i).array() - mean).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + ModelConfig::kLayerNormEps);
    xhat.row(i) = (x.row(i).array() - mean) * inv_std(i);
  }
  Matrix y = (xhat.array().rowwise() * gain.row(0).array()).rowwise() + bias.row(0).array();
  if (cache != nullptr) {
    cache->normalized = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

Matrix layer_norm_backward(const Matrix& dy, const NormCache& cache, const Matrix& gain, Matrix& d_gain,
                           Matrix& d_bias) {
  d_gain += (dy.array() * cache.normalized.array()).colwise().sum().matrix();
  d_bias += dy.colwise().sum();
  const Matrix dxhat = dy.array().rowwise() * gain.row(0).array();
  Matrix dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const double m1 = dxhat.row(i).mean();
    const double m2 = (dxhat.row(i).array() * cache.normalized.row(i).array()).mean();
    dx.row(i) = cache.inv_std(i) * (dxhat.row(i).array() - m1 - cache.normalized.row(i).array() * m2);
  }
  return dx;
}

// In-place rotation of every head slice of `x` (L x d). `sign` = -1 applies
// the inverse rotation (used in the backward pass).
void rotate_heads(Matrix& x, const std::vector<double>& phases, const RoPEFrequencies& freqs, std::size_t n_heads,
                  double sign = 1.0) {
  const std::size_t dh = static_cast<std::size_t>(x.cols()) / n_heads;
  const std::size_t pairs = dh / 2;
  for (Eigen::Index t = 0; t < x.rows(); ++t) {
    const double m = phases[static_cast<std::size_t>(t)];
    for (std::size_t j = 0; j < pairs; ++j) {
      const double angle = sign * m * freqs.theta[j];
      const double c = std::cos(angle);
      const double s = std::sin(angle);
      for (std::size_t h = 0; h < n_heads; ++h) {
        const Eigen::Index col = static_cast<Eigen::Index>(h * dh + 2 * j);
        const double x0 = x(t, col);
        const double x1 = x(t, col + 1);
        x(t, col) = x0 * c - x1 * s;
        x(t, col + 1) = x0 * s + x1 * c;
      }
    }
  }
}

void softmax_rows(Matrix& s) {
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const double mx = s.row(i).maxCoeff();
    s.row(i) = (s.row(i).array() - mx).exp();
    s.row(i) /= s.row(i).sum();
  }
}

// Attention logits for one head when relative phases are remapped pairwise
// (self-extend). q, k are unrotated head slices.
Matrix remapped_logits(const Matrix& q, const Matrix& k, const std::vector<double>& phases,
                       const SelfExtendWindow& se, const RoPEFrequencies& freqs) {
  const Eigen::Index n = q.rows();
  const std::size_t pairs = freqs.theta.size();
  std::vector<long> pos(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) pos[static_cast<std::size_t>(i)] = std::lround(phases[static_cast<std::size_t>(i)]);

  // cos/sin tables over the (bounded) range of remapped relative positions.
  long max_rel = 0;
  if (n > 0) {
    const long span = pos.back() - pos.front();
    max_rel = self_extend_max_relpos(std::abs(span) + 1, se.group, se.window);
  }
  const std::size_t width = static_cast<std::size_t>(2 * max_rel + 1);
  std::vector<double> cos_t(width * pairs), sin_t(width * pairs);
  for (long r = -max_rel; r <= max_rel; ++r) {
    for (std::size_t j = 0; j < pairs; ++j) {
      const double a = static_cast<double>(r) * freqs.theta[j];
      cos_t[static_cast<std::size_t>(r + max_rel) * pairs + j] = std::cos(a);
      sin_t[static_cast<std::size_t>(r + max_rel) * pairs + j] = std::sin(a);
    }
  }

  Matrix logits(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index jk = 0; jk < n; ++jk) {
      const long r = self_extend_relpos(pos[static_cast<std::size_t>(i)], pos[static_cast<std::size_t>(jk)],
                                        se.group, se.window);
      const double* c = &cos_t[static_cast<std::size_t>(r + max_rel) * pairs];
      const double* s = &sin_t[static_cast<std::size_t>(r + max_rel) * pairs];
      double acc = 0.0;
      for (std::size_t p = 0; p < pairs; ++p) {
        const Eigen::Index col = static_cast<Eigen::Index>(2 * p);
        const double q0 = q(i, col), q1 = q(i, col + 1);
        const double k0 = k(jk, col), k1 = k(jk, col + 1);
        acc += (q0 * k0 + q1 * k1) * c[p] - (q1 * k0 - q0 * k1) * s[p];
      }
      logits(i, jk) = acc;
    }
  }
  return logits;
}

struct ResolvedPositions {
  const PositionEmbeddingMatrix* table = nullptr;
  RoPEFrequencies freqs;
};

ResolvedPositions resolve_source(const Model& model, const PositionAssignment& positions, std::size_t length,
                                 const PositionSource& source) {
  const auto& cfg = model.config;
  ResolvedPositions r;
  if (cfg.position_mode == PositionMode::Absolute) {
    r.table = source.table != nullptr ? source.table : &model.weights.positions;
    if (positions.rows.size() != length) {
      throw PositionError("position assignment has " + std::to_string(positions.rows.size()) + " rows for " +
                          std::to_string(length) + " tokens");
    }
    for (const auto row : positions.rows) {
      if (row >= r.table->rows()) {
        throw PositionError("absolute position index " + std::to_string(row) + " outside table of " +
                            std::to_string(r.table->rows()) + " rows");
      }
    }
  } else {
    if (positions.phases.size() != length) {
      throw PositionError("position assignment has " + std::to_string(positions.phases.size()) + " phases for " +
                          std::to_string(length) + " tokens");
    }
    r.freqs = source.freqs != nullptr ? *source.freqs : RoPEFrequencies::standard(cfg.head_dim(), cfg.rope_base);
    if (r.freqs.theta.size() != cfg.head_dim() / 2) {
      throw DimensionError("frequency table does not match the per-head dimension");
    }
  }
  return r;
}

Matrix embed_tokens(const Model& model, const TokenSequence& tokens, const PositionAssignment& positions,
                    const PositionEmbeddingMatrix* table) {
  const auto& cfg = model.config;
  const Eigen::Index n = static_cast<Eigen::Index>(tokens.size());
  Matrix x(n, static_cast<Eigen::Index>(cfg.hidden_size));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto id = tokens.ids[static_cast<std::size_t>(i)];
    if (id >= cfg.vocab_size) {
      throw ConfigError("token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(cfg.vocab_size));
    }
    x.row(i) = model.weights.token_embedding.row(id);
    if (table != nullptr) x.row(i) += table->values.row(static_cast<Eigen::Index>(positions.rows[static_cast<std::size_t>(i)]));
  }
  return x;
}

// One transformer block. When `tape` is non-null the intermediates are kept.
Matrix run_layer(const ModelConfig& cfg, const LayerWeights& L, const Matrix& x, const PositionAssignment& positions,
                 const RoPEFrequencies& freqs, double attn_scale, LayerTape* tape) {
  const std::size_t H = cfg.n_heads;
  const Eigen::Index dh = static_cast<Eigen::Index>(cfg.head_dim());
  const double alpha = attn_scale / std::sqrt(static_cast<double>(dh));
  const bool rotary = cfg.position_mode == PositionMode::Rotary;
  const bool remapped = rotary && positions.self_extend.has_value();

  NormCache n1;
  Matrix a = layer_norm(x, L.attn_norm_gain, L.attn_norm_bias, tape ? &n1 : nullptr);
  Matrix q = (a * L.wq).rowwise() + L.bq.row(0);
  Matrix k = (a * L.wk).rowwise() + L.bk.row(0);
  Matrix v = (a * L.wv).rowwise() + L.bv.row(0);
  if (rotary && !remapped) {
    rotate_heads(q, positions.phases, freqs, H);
    rotate_heads(k, positions.phases, freqs, H);
  }

  Matrix context(x.rows(), x.cols());
  std::vector<Matrix> probs;
  for (std::size_t h = 0; h < H; ++h) {
    const Eigen::Index c0 = static_cast<Eigen::Index>(h) * dh;
    Matrix s;
    if (remapped) {
      s = remapped_logits(q.middleCols(c0, dh), k.middleCols(c0, dh), positions.phases, *positions.self_extend, freqs);
    } else {
      s = q.middleCols(c0, dh) * k.middleCols(c0, dh).transpose();
    }
    s *= alpha;
    softmax_rows(s);
    context.middleCols(c0, dh) = s * v.middleCols(c0, dh);
    if (tape) probs.push_back(std::move(s));
  }

  Matrix resid1 = x + ((context * L.wo).rowwise() + L.bo.row(0));
  NormCache n2;
  Matrix b = layer_norm(resid1, L.ffn_norm_gain, L.ffn_norm_bias, tape ? &n2 : nullptr);
  Matrix pre = (b * L.w_in).rowwise() + L.b_in.row(0);
  Matrix act = pre.unaryExpr([](double z) { return gelu(z); });
  Matrix out = resid1 + ((act * L.w_out).rowwise() + L.b_out.row(0));

  if (tape) {
    tape->input = x;
    tape->norm1 = std::move(n1);
    tape->normed1 = std::move(a);
    tape->q_rot = std::move(q);
    tape->k_rot = std::move(k);
    tape->v = std::move(v);
    tape->probs = std::move(probs);
    tape->context = std::move(context);
    tape->resid1 = std::move(resid1);
    tape->norm2 = std::move(n2);
    tape->normed2 = std::move(b);
    tape->ffn_pre = std::move(pre);
    tape->ffn_act = std::move(act);
  }
  return out;
}

}  // namespace

Matrix forward(const Model& model, const TokenSequence& tokens, const PositionAssignment& positions, double attn_scale,
               const PositionSource& source) {
  if (tokens.empty()) throw EmptyInputError("cannot encode an empty token sequence");
  const auto resolved = resolve_source(model, positions, tokens.size(), source);
  Matrix x = embed_tokens(model, tokens, positions, resolved.table);
  for (const auto& L : model.weights.layers) {
    x = run_layer(model.config, L, x, positions, resolved.freqs, attn_scale, nullptr);
  }
  return layer_norm(x, model.weights.final_norm_gain, model.weights.final_norm_bias, nullptr);
}

EmbeddingVector pool_and_normalize(const Matrix& hidden, const std::vector<bool>& mask) {
  if (static_cast<Eigen::Index>(mask.size()) != hidden.rows()) {
    throw DimensionError("mask length does not match the number of hidden rows");
  }
  Vector sum = Vector::Zero(hidden.cols());
  std::size_t active = 0;
  for (Eigen::Index i = 0; i < hidden.rows(); ++i) {
    if (!mask[static_cast<std::size_t>(i)]) continue;
    sum += hidden.row(i).transpose();
    ++active;
  }
  if (active == 0) throw EmptyInputError("pooling mask selects no tokens");
  sum /= static_cast<double>(active);
  const double norm = sum.norm();
  if (!(norm > 0.0) || !std::isfinite(norm)) throw NumericError("pooled embedding has zero or non-finite norm");
  return EmbeddingVector{sum / norm};
}

EmbeddingVector pool_and_normalize(const Matrix& hidden) {
  return pool_and_normalize(hidden, std::vector<bool>(static_cast<std::size_t>(hidden.rows()), true));
}

EncoderTape record_forward(const Model& model, const TokenSequence& tokens, const PositionAssignment& positions,
                           double attn_scale) {
  if (tokens.empty()) throw EmptyInputError("cannot encode an empty token sequence");
  if (positions.self_extend) throw ConfigError("self-extend remapping is inference-only");
  const auto resolved = resolve_source(model, positions, tokens.size(), {});
  EncoderTape tape;
  tape.tokens = tokens;
  tape.positions = positions;
  tape.attn_scale = attn_scale;
  tape.layers.resize(model.weights.layers.size());

  Matrix x = embed_tokens(model, tokens, positions, resolved.table);
  for (std::size_t l = 0; l < model.weights.layers.size(); ++l) {
    x = run_layer(model.config, model.weights.layers[l], x, positions, resolved.freqs, attn_scale, &tape.layers[l]);
  }
  const Matrix z = layer_norm(x, model.weights.final_norm_gain, model.weights.final_norm_bias, &tape.final_norm);
  tape.pooled = z.colwise().mean().transpose();
  tape.pooled_norm = tape.pooled.norm();
  if (!(tape.pooled_norm > 0.0) || !std::isfinite(tape.pooled_norm)) {
    throw NumericError("pooled embedding has zero or non-finite norm");
  }
  tape.embedding = EmbeddingVector{tape.pooled / tape.pooled_norm};
  return tape;
}

void backpropagate(const Model& model, const EncoderTape& tape, const Vector& d_embedding, Weights& grads) {
  const auto& cfg = model.config;
  const auto& W = model.weights;
  const std::size_t H = cfg.n_heads;
  const Eigen::Index dh = static_cast<Eigen::Index>(cfg.head_dim());
  const double alpha = tape.attn_scale / std::sqrt(static_cast<double>(dh));
  const Eigen::Index n = static_cast<Eigen::Index>(tape.tokens.size());
  const bool rotary = cfg.position_mode == PositionMode::Rotary;
  const RoPEFrequencies freqs =
      rotary ? RoPEFrequencies::standard(cfg.head_dim(), cfg.rope_base) : RoPEFrequencies{};

  // normalize: u = p / |p|
  const Vector& u = tape.embedding.values;
  const Vector d_pooled = (d_embedding - u * u.dot(d_embedding)) / tape.pooled_norm;
  // mean pool
  Matrix dz(n, static_cast<Eigen::Index>(cfg.hidden_size));
  dz.rowwise() = d_pooled.transpose() / static_cast<double>(n);

  Matrix dx = layer_norm_backward(dz, tape.final_norm, W.final_norm_gain, grads.final_norm_gain, grads.final_norm_bias);

  for (std::size_t li = W.layers.size(); li-- > 0;) {
    const auto& L = W.layers[li];
    auto& G = grads.layers[li];
    const auto& T = tape.layers[li];

    // out = resid1 + act * w_out + b_out
    G.w_out.noalias() += T.ffn_act.transpose() * dx;
    G.b_out += dx.colwise().sum();
    Matrix d_act = dx * L.w_out.transpose();
    Matrix d_pre = d_act.array() * T.ffn_pre.unaryExpr([](double z) { return gelu_grad(z); }).array();
    G.w_in.noalias() += T.normed2.transpose() * d_pre;
    G.b_in += d_pre.colwise().sum();
    Matrix d_normed2 = d_pre * L.w_in.transpose();
    Matrix d_resid1 = dx + layer_norm_backward(d_normed2, T.norm2, L.ffn_norm_gain, G.ffn_norm_gain, G.ffn_norm_bias);

    // resid1 = x + context * wo + bo
    G.wo.noalias() += T.context.transpose() * d_resid1;
    G.bo += d_resid1.colwise().sum();
    Matrix d_context = d_resid1 * L.wo.transpose();

    Matrix dq(n, static_cast<Eigen::Index>(cfg.hidden_size));
    Matrix dk(n, static_cast<Eigen::Index>(cfg.hidden_size));
    Matrix dv(n, static_cast<Eigen::Index>(cfg.hidden_size));
    for (std::size_t h = 0; h < H; ++h) {
      const Eigen::Index c0 = static_cast<Eigen::Index>(h) * dh;
      const Matrix& P = T.probs[h];
      const auto dO = d_context.middleCols(c0, dh);
      dv.middleCols(c0, dh).noalias() = P.transpose() * dO;
      Matrix dP = dO * T.v.middleCols(c0, dh).transpose();
      const Vector row_dot = (dP.array() * P.array()).rowwise().sum();
      Matrix dS = P.array() * (dP.colwise() - row_dot).array();
      dS *= alpha;
      dq.middleCols(c0, dh).noalias() = dS * T.k_rot.middleCols(c0, dh);
      dk.middleCols(c0, dh).noalias() = dS.transpose() * T.q_rot.middleCols(c0, dh);
    }
    if (rotary) {
      rotate_heads(dq, tape.positions.phases, freqs, H, -1.0);
      rotate_heads(dk, tape.positions.phases, freqs, H, -1.0);
    }
    G.wq.noalias() += T.normed1.transpose() * dq;
    G.bq += dq.colwise().sum();
    G.wk.noalias() += T.normed1.transpose() * dk;
    G.bk += dk.colwise().sum();
    G.wv.noalias() += T.normed1.transpose() * dv;
    G.bv += dv.colwise().sum();
    Matrix d_normed1 = dq * L.wq.transpose() + dk * L.wk.transpose() + dv * L.wv.transpose();
    dx = d_resid1 + layer_norm_backward(d_normed1, T.norm1, L.attn_norm_gain, G.attn_norm_gain, G.attn_norm_bias);
  }

  for (Eigen::Index i = 0; i < n; ++i) {
    grads.token_embedding.row(tape.tokens.ids[static_cast<std::size_t>(i)]) += dx.row(i);
    if (!rotary) {
      grads.positions.values.row(static_cast<Eigen::Index>(tape.positions.rows[static_cast<std::size_t>(i)])) += dx.row(i);
    }
  }
}

}  // namespace extembed
