#include "seqrec/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <string>

#include "seqrec/error.hpp"
#include "seqrec/rng.hpp"

namespace seqrec {

// ---------------------------------------------------------------------------
// Config and layout
// ---------------------------------------------------------------------------

void ModelConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& what) {
    throw Error(ErrorCategory::kConfig, "model." + field + " " + what);
  };
  if (hidden_size < 1) fail("hidden_size", "must be positive");
  if (num_blocks < 1) fail("num_blocks", "must be positive");
  if (num_heads < 1) fail("num_heads", "must be positive");
  if (hidden_size % num_heads != 0) fail("num_heads", "must divide hidden_size");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout", "must lie in [0, 1)");
  if (max_seq_len < 2) fail("max_seq_len", "must be >= 2");
  if (item_count < 1) fail("item_count", "must be positive");
}

ParameterLayout::ParameterLayout(const ModelConfig& config) {
  config.validate();
  const std::int64_t c = config.hidden_size;
  item_embedding = add("item_embedding", {config.item_count + 1, c});
  position_embedding = add("position_embedding", {config.max_seq_len, c});
  for (int b = 0; b < config.num_blocks; ++b) {
    const std::string p = "block" + std::to_string(b) + ".";
    Block blk{};
    blk.ln1_weight = add(p + "ln1.weight", {c});
    blk.ln1_bias = add(p + "ln1.bias", {c});
    blk.qkv_weight = add(p + "attn.qkv.weight", {3 * c, c});
    blk.qkv_bias = add(p + "attn.qkv.bias", {3 * c});
    blk.attn_proj_weight = add(p + "attn.proj.weight", {c, c});
    blk.attn_proj_bias = add(p + "attn.proj.bias", {c});
    blk.ln2_weight = add(p + "ln2.weight", {c});
    blk.ln2_bias = add(p + "ln2.bias", {c});
    blk.fc_weight = add(p + "mlp.fc.weight", {4 * c, c});
    blk.fc_bias = add(p + "mlp.fc.bias", {4 * c});
    blk.fc_proj_weight = add(p + "mlp.proj.weight", {c, 4 * c});
    blk.fc_proj_bias = add(p + "mlp.proj.bias", {c});
    blocks.push_back(blk);
  }
  final_ln_weight = add("final_ln.weight", {c});
  final_ln_bias = add("final_ln.bias", {c});
}

std::size_t ParameterLayout::add(std::string name, std::vector<std::int64_t> shape) {
  std::size_t size = 1;
  for (auto dim : shape) size *= static_cast<std::size_t>(dim);
  tensors_.push_back(TensorInfo{std::move(name), std::move(shape), total_, size});
  total_ += size;
  return tensors_.back().offset;
}

const TensorInfo& ParameterLayout::find(std::string_view name) const {
  for (const auto& t : tensors_) {
    if (t.name == name) return t;
  }
  throw Error(ErrorCategory::kModel, "no parameter tensor named '" + std::string(name) + "'");
}

Parameters init_parameters(const ModelConfig& config, std::uint64_t seed, double stddev) {
  Parameters params(config);
  Rng rng(derive_seed(seed, "init"));
  for (const auto& t : params.layout.tensors()) {
    auto values = std::span<float>(params.values).subspan(t.offset, t.size);
    const bool is_bias = t.name.ends_with(".bias");
    const bool is_ln_weight = t.name.find("ln") != std::string::npos && t.name.ends_with(".weight");
    if (is_ln_weight) {
      std::fill(values.begin(), values.end(), 1.0f);
    } else if (is_bias) {
      std::fill(values.begin(), values.end(), 0.0f);
    } else {
      for (auto& v : values) v = static_cast<float>(stddev * rng.normal());
    }
  }
  auto emb = params.tensor("item_embedding");
  std::fill(emb.begin(), emb.begin() + config.hidden_size, 0.0f);
  return params;
}

// ---------------------------------------------------------------------------
// Kernels
// ---------------------------------------------------------------------------

namespace {

constexpr double kLayerNormEps = 1e-5;

template <class R>
void layernorm_forward(R* out, R* mean, R* rstd, const R* in, const R* weight,
                       const R* bias, int rows, int c) {
  for (int t = 0; t < rows; ++t) {
    const R* x = in + static_cast<std::size_t>(t) * c;
    R m = 0;
    for (int i = 0; i < c; ++i) m += x[i];
    m /= static_cast<R>(c);
    R v = 0;
    for (int i = 0; i < c; ++i) {
      const R d = x[i] - m;
      v += d * d;
    }
    v /= static_cast<R>(c);
    const R s = static_cast<R>(1.0 / std::sqrt(static_cast<double>(v) + kLayerNormEps));
    R* o = out + static_cast<std::size_t>(t) * c;
    for (int i = 0; i < c; ++i) o[i] = (x[i] - m) * s * weight[i] + bias[i];
    mean[t] = m;
    rstd[t] = s;
  }
}

template <class R>
void layernorm_backward(R* din, R* dweight, R* dbias, const R* dout, const R* in,
                        const R* weight, const R* mean, const R* rstd, int rows, int c) {
  for (int t = 0; t < rows; ++t) {
    const R* x = in + static_cast<std::size_t>(t) * c;
    const R* g = dout + static_cast<std::size_t>(t) * c;
    R* dx = din + static_cast<std::size_t>(t) * c;
    const R m = mean[t];
    const R s = rstd[t];
    R dnorm_mean = 0;
    R dnorm_norm_mean = 0;
    for (int i = 0; i < c; ++i) {
      const R norm = (x[i] - m) * s;
      const R dnorm = weight[i] * g[i];
      dnorm_mean += dnorm;
      dnorm_norm_mean += dnorm * norm;
    }
    dnorm_mean /= static_cast<R>(c);
    dnorm_norm_mean /= static_cast<R>(c);
    for (int i = 0; i < c; ++i) {
      const R norm = (x[i] - m) * s;
      const R dnorm = weight[i] * g[i];
      dbias[i] += g[i];
      dweight[i] += norm * g[i];
      dx[i] += (dnorm - dnorm_mean - norm * dnorm_norm_mean) * s;
    }
  }
}

// out[t, o] = bias[o] + sum_c in[t, c] * weight[o, c]
template <class R>
void linear_forward(R* out, const R* in, const R* weight, const R* bias, int rows,
                    int c, int oc) {
  for (int t = 0; t < rows; ++t) {
    const R* x = in + static_cast<std::size_t>(t) * c;
    R* y = out + static_cast<std::size_t>(t) * oc;
    for (int o = 0; o < oc; ++o) {
      const R* w = weight + static_cast<std::size_t>(o) * c;
      R acc = bias[o];
      for (int i = 0; i < c; ++i) acc += x[i] * w[i];
      y[o] = acc;
    }
  }
}

template <class R>
void linear_backward(R* din, R* dweight, R* dbias, const R* dout, const R* in,
                     const R* weight, int rows, int c, int oc) {
  for (int t = 0; t < rows; ++t) {
    const R* x = in + static_cast<std::size_t>(t) * c;
    const R* g = dout + static_cast<std::size_t>(t) * oc;
    R* dx = din + static_cast<std::size_t>(t) * c;
    for (int o = 0; o < oc; ++o) {
      const R go = g[o];
      const R* w = weight + static_cast<std::size_t>(o) * c;
      R* dw = dweight + static_cast<std::size_t>(o) * c;
      for (int i = 0; i < c; ++i) {
        dx[i] += go * w[i];
        dw[i] += go * x[i];
      }
      dbias[o] += go;
    }
  }
}

template <class R>
R gelu(R x) {
  constexpr double k = 0.7978845608028654;  // sqrt(2 / pi)
  const double xd = static_cast<double>(x);
  return static_cast<R>(0.5 * xd * (1.0 + std::tanh(k * (xd + 0.044715 * xd * xd * xd))));
}

template <class R>
R gelu_grad(R x) {
  constexpr double k = 0.7978845608028654;
  const double xd = static_cast<double>(x);
  const double inner = k * (xd + 0.044715 * xd * xd * xd);
  const double th = std::tanh(inner);
  const double sech2 = 1.0 - th * th;
  return static_cast<R>(0.5 * (1.0 + th) +
                        0.5 * xd * sech2 * k * (1.0 + 3.0 * 0.044715 * xd * xd));
}

// One causal attention row for one head: query q attends to keys/values
// 0..count-1. `weights` receives the normalized attention probabilities.
// Shared by the full-sequence and the cached path so both produce identical
// arithmetic.
template <class R>
void attend_row(R* out, R* weights, const R* q, const R* keys, std::size_t key_stride,
                const R* values, std::size_t value_stride, int count, int head_size,
                R scale) {
  R max_score = -std::numeric_limits<R>::infinity();
  for (int s = 0; s < count; ++s) {
    const R* k = keys + static_cast<std::size_t>(s) * key_stride;
    R dot = 0;
    for (int i = 0; i < head_size; ++i) dot += q[i] * k[i];
    dot *= scale;
    weights[s] = dot;
    max_score = std::max(max_score, dot);
  }
  R sum = 0;
  for (int s = 0; s < count; ++s) {
    weights[s] = static_cast<R>(std::exp(static_cast<double>(weights[s] - max_score)));
    sum += weights[s];
  }
  const R inv = R(1) / sum;
  for (int s = 0; s < count; ++s) weights[s] *= inv;
  for (int i = 0; i < head_size; ++i) out[i] = 0;
  for (int s = 0; s < count; ++s) {
    const R* v = values + static_cast<std::size_t>(s) * value_stride;
    const R w = weights[s];
    for (int i = 0; i < head_size; ++i) out[i] += w * v[i];
  }
}

// Activations of one sequence, kept for the backward pass.
template <class R>
struct BlockActivations {
  std::vector<R> ln1, ln1_mean, ln1_rstd, qkv, att, atty, attn_mask, mid;
  std::vector<R> ln2, ln2_mean, ln2_rstd, fc, act, mlp_mask;
};

template <class R>
struct SequenceActivations {
  int rows = 0;
  std::vector<R> emb_mask;
  std::vector<std::vector<R>> resid;  // num_blocks + 1 entries, [T, C]
  std::vector<BlockActivations<R>> blocks;
  std::vector<R> lnf, lnf_mean, lnf_rstd;
};

template <class R>
void draw_mask(std::vector<R>& mask, std::size_t n, double rate, Rng* rng) {
  if (rng == nullptr || rate <= 0.0) {
    mask.clear();
    return;
  }
  mask.resize(n);
  const R keep = static_cast<R>(1.0 / (1.0 - rate));
  for (auto& m : mask) m = rng->uniform() < rate ? R(0) : keep;
}

template <class R>
void apply_mask(R* x, const std::vector<R>& mask) {
  for (std::size_t i = 0; i < mask.size(); ++i) x[i] *= mask[i];
}

template <class R>
void sequence_forward(const ParameterSet<R>& p, std::span<const ItemId> tokens,
                      SequenceActivations<R>& a, Rng* dropout_rng, double dropout_rate) {
  const ModelConfig& cfg = p.config;
  const int T = static_cast<int>(tokens.size());
  const int C = cfg.hidden_size;
  const int H = cfg.num_heads;
  const int hs = C / H;
  const std::size_t TC = static_cast<std::size_t>(T) * C;
  const R* w = p.values.data();
  const auto& L = p.layout;

  a.rows = T;
  a.resid.assign(static_cast<std::size_t>(cfg.num_blocks) + 1, std::vector<R>(TC));
  a.blocks.resize(static_cast<std::size_t>(cfg.num_blocks));

  std::vector<R>& x0 = a.resid[0];
  for (int t = 0; t < T; ++t) {
    const R* e = w + L.item_embedding + static_cast<std::size_t>(tokens[t]) * C;
    const R* pos = w + L.position_embedding + static_cast<std::size_t>(t) * C;
    for (int i = 0; i < C; ++i) x0[static_cast<std::size_t>(t) * C + i] = e[i] + pos[i];
  }
  draw_mask(a.emb_mask, TC, dropout_rate, dropout_rng);
  apply_mask(x0.data(), a.emb_mask);

  const R scale = static_cast<R>(1.0 / std::sqrt(static_cast<double>(hs)));
  for (int b = 0; b < cfg.num_blocks; ++b) {
    const auto& lb = L.blocks[b];
    auto& ba = a.blocks[b];
    const std::vector<R>& in = a.resid[b];
    ba.ln1.resize(TC);
    ba.ln1_mean.resize(T);
    ba.ln1_rstd.resize(T);
    layernorm_forward(ba.ln1.data(), ba.ln1_mean.data(), ba.ln1_rstd.data(), in.data(),
                      w + lb.ln1_weight, w + lb.ln1_bias, T, C);
    ba.qkv.resize(3 * TC);
    linear_forward(ba.qkv.data(), ba.ln1.data(), w + lb.qkv_weight, w + lb.qkv_bias, T, C,
                   3 * C);
    ba.att.assign(static_cast<std::size_t>(H) * T * T, R(0));
    ba.atty.resize(TC);
    for (int t = 0; t < T; ++t) {
      for (int h = 0; h < H; ++h) {
        const R* q = ba.qkv.data() + static_cast<std::size_t>(t) * 3 * C + h * hs;
        const R* k = ba.qkv.data() + C + h * hs;
        const R* v = ba.qkv.data() + 2 * C + h * hs;
        R* weights = ba.att.data() + (static_cast<std::size_t>(h) * T + t) * T;
        attend_row(ba.atty.data() + static_cast<std::size_t>(t) * C + h * hs, weights, q, k,
                   static_cast<std::size_t>(3 * C), v, static_cast<std::size_t>(3 * C), t + 1,
                   hs, scale);
      }
    }
    ba.mid.resize(TC);
    linear_forward(ba.mid.data(), ba.atty.data(), w + lb.attn_proj_weight,
                   w + lb.attn_proj_bias, T, C, C);
    draw_mask(ba.attn_mask, TC, dropout_rate, dropout_rng);
    apply_mask(ba.mid.data(), ba.attn_mask);
    for (std::size_t i = 0; i < TC; ++i) ba.mid[i] += in[i];

    ba.ln2.resize(TC);
    ba.ln2_mean.resize(T);
    ba.ln2_rstd.resize(T);
    layernorm_forward(ba.ln2.data(), ba.ln2_mean.data(), ba.ln2_rstd.data(), ba.mid.data(),
                      w + lb.ln2_weight, w + lb.ln2_bias, T, C);
    ba.fc.resize(4 * TC);
    linear_forward(ba.fc.data(), ba.ln2.data(), w + lb.fc_weight, w + lb.fc_bias, T, C,
                   4 * C);
    ba.act.resize(4 * TC);
    for (std::size_t i = 0; i < 4 * TC; ++i) ba.act[i] = gelu(ba.fc[i]);
    std::vector<R>& out = a.resid[b + 1];
    linear_forward(out.data(), ba.act.data(), w + lb.fc_proj_weight, w + lb.fc_proj_bias, T,
                   4 * C, C);
    draw_mask(ba.mlp_mask, TC, dropout_rate, dropout_rng);
    apply_mask(out.data(), ba.mlp_mask);
    for (std::size_t i = 0; i < TC; ++i) out[i] += ba.mid[i];
  }

  a.lnf.resize(TC);
  a.lnf_mean.resize(T);
  a.lnf_rstd.resize(T);
  layernorm_forward(a.lnf.data(), a.lnf_mean.data(), a.lnf_rstd.data(),
                    a.resid.back().data(), w + L.final_ln_weight, w + L.final_ln_bias, T, C);
}

// Tied output projection: logits[i] = z . E[i] for i >= 1; slot 0 masked.
template <class R>
void output_logits(double* logits, const R* z, const R* embedding, int item_count, int c) {
  logits[0] = kMaskedLogit;
  for (int i = 1; i <= item_count; ++i) {
    const R* e = embedding + static_cast<std::size_t>(i) * c;
    R acc = 0;
    for (int k = 0; k < c; ++k) acc += z[k] * e[k];
    logits[i] = static_cast<double>(acc);
  }
}

// Backward through one sequence given d(loss)/d(final LayerNorm output).
template <class R>
void sequence_backward(const ParameterSet<R>& p, std::span<const ItemId> tokens,
                       const SequenceActivations<R>& a, std::vector<R>& dlnf,
                       ParameterSet<R>& g) {
  const ModelConfig& cfg = p.config;
  const int T = a.rows;
  const int C = cfg.hidden_size;
  const int H = cfg.num_heads;
  const int hs = C / H;
  const std::size_t TC = static_cast<std::size_t>(T) * C;
  const R* w = p.values.data();
  R* dw = g.values.data();
  const auto& L = p.layout;
  const R scale = static_cast<R>(1.0 / std::sqrt(static_cast<double>(hs)));

  std::vector<R> dresid(TC, R(0));
  layernorm_backward(dresid.data(), dw + L.final_ln_weight, dw + L.final_ln_bias, dlnf.data(),
                     a.resid.back().data(), w + L.final_ln_weight, a.lnf_mean.data(),
                     a.lnf_rstd.data(), T, C);

  std::vector<R> dtmp(TC), dact(4 * TC), dfc(4 * TC), dln(TC), datty(TC), dqkv(3 * TC);
  std::vector<R> datt(static_cast<std::size_t>(T));
  for (int b = cfg.num_blocks - 1; b >= 0; --b) {
    const auto& lb = L.blocks[b];
    const auto& ba = a.blocks[b];

    // MLP branch: resid[b+1] = mid + mask * proj(gelu(fc(ln2(mid)))).
    std::vector<R>& dmid = dresid;  // residual passes the gradient through
    dtmp.assign(dresid.begin(), dresid.end());
    apply_mask(dtmp.data(), ba.mlp_mask);
    std::fill(dact.begin(), dact.end(), R(0));
    linear_backward(dact.data(), dw + lb.fc_proj_weight, dw + lb.fc_proj_bias, dtmp.data(),
                    ba.act.data(), w + lb.fc_proj_weight, T, 4 * C, C);
    for (std::size_t i = 0; i < 4 * TC; ++i) dfc[i] = dact[i] * gelu_grad(ba.fc[i]);
    std::fill(dln.begin(), dln.end(), R(0));
    linear_backward(dln.data(), dw + lb.fc_weight, dw + lb.fc_bias, dfc.data(), ba.ln2.data(),
                    w + lb.fc_weight, T, C, 4 * C);
    layernorm_backward(dmid.data(), dw + lb.ln2_weight, dw + lb.ln2_bias, dln.data(),
                       ba.mid.data(), w + lb.ln2_weight, ba.ln2_mean.data(),
                       ba.ln2_rstd.data(), T, C);

    // Attention branch: mid = resid[b] + mask * proj(attn(qkv(ln1(resid[b])))).
    dtmp.assign(dmid.begin(), dmid.end());
    apply_mask(dtmp.data(), ba.attn_mask);
    std::fill(datty.begin(), datty.end(), R(0));
    linear_backward(datty.data(), dw + lb.attn_proj_weight, dw + lb.attn_proj_bias,
                    dtmp.data(), ba.atty.data(), w + lb.attn_proj_weight, T, C, C);
    std::fill(dqkv.begin(), dqkv.end(), R(0));
    for (int t = 0; t < T; ++t) {
      for (int h = 0; h < H; ++h) {
        const R* weights = ba.att.data() + (static_cast<std::size_t>(h) * T + t) * T;
        const R* dy = datty.data() + static_cast<std::size_t>(t) * C + h * hs;
        const R* q = ba.qkv.data() + static_cast<std::size_t>(t) * 3 * C + h * hs;
        R* dq = dqkv.data() + static_cast<std::size_t>(t) * 3 * C + h * hs;
        R dsum = 0;
        for (int s = 0; s <= t; ++s) {
          const R* v = ba.qkv.data() + static_cast<std::size_t>(s) * 3 * C + 2 * C + h * hs;
          R* dv = dqkv.data() + static_cast<std::size_t>(s) * 3 * C + 2 * C + h * hs;
          R d = 0;
          for (int i = 0; i < hs; ++i) {
            d += dy[i] * v[i];
            dv[i] += weights[s] * dy[i];
          }
          datt[s] = d;
          dsum += weights[s] * d;
        }
        for (int s = 0; s <= t; ++s) {
          const R dpre = weights[s] * (datt[s] - dsum) * scale;
          const R* k = ba.qkv.data() + static_cast<std::size_t>(s) * 3 * C + C + h * hs;
          R* dk = dqkv.data() + static_cast<std::size_t>(s) * 3 * C + C + h * hs;
          for (int i = 0; i < hs; ++i) {
            dq[i] += dpre * k[i];
            dk[i] += dpre * q[i];
          }
        }
      }
    }
    std::fill(dln.begin(), dln.end(), R(0));
    linear_backward(dln.data(), dw + lb.qkv_weight, dw + lb.qkv_bias, dqkv.data(),
                    ba.ln1.data(), w + lb.qkv_weight, T, C, 3 * C);
    layernorm_backward(dresid.data(), dw + lb.ln1_weight, dw + lb.ln1_bias, dln.data(),
                       a.resid[b].data(), w + lb.ln1_weight, ba.ln1_mean.data(),
                       ba.ln1_rstd.data(), T, C);
  }

  apply_mask(dresid.data(), a.emb_mask);
  for (int t = 0; t < T; ++t) {
    R* de = dw + L.item_embedding + static_cast<std::size_t>(tokens[t]) * C;
    R* dp = dw + L.position_embedding + static_cast<std::size_t>(t) * C;
    const R* d = dresid.data() + static_cast<std::size_t>(t) * C;
    for (int i = 0; i < C; ++i) {
      de[i] += d[i];
      dp[i] += d[i];
    }
  }
}

std::span<const ItemId> strip_padding(const std::vector<ItemId>& row) {
  std::size_t first = 0;
  while (first < row.size() && row[first] == kPadItem) ++first;
  return std::span<const ItemId>(row).subspan(first);
}

template <class R>
std::size_t check_batch(const ParameterSet<R>& p, std::span<const std::vector<ItemId>> batch) {
  std::size_t targets = 0;
  const std::size_t width = batch.empty() ? 0 : batch.front().size();
  for (const auto& row : batch) {
    if (row.size() != width) {
      throw Error(ErrorCategory::kModel, "batch rows must share one padded width");
    }
    if (row.size() > static_cast<std::size_t>(p.config.max_seq_len)) {
      throw Error(ErrorCategory::kModel, "batch row longer than max_seq_len");
    }
    const auto seq = strip_padding(row);
    for (ItemId item : seq) {
      if (item < 1 || item > p.config.item_count) {
        throw Error(ErrorCategory::kModel,
                    "item id " + std::to_string(item) + " is out of catalog");
      }
    }
    if (seq.size() >= 2) targets += seq.size() - 1;
  }
  if (targets == 0) {
    throw Error(ErrorCategory::kModel, "batch contains no non-padding targets");
  }
  return targets;
}

// Shared by loss_and_gradients (grads != nullptr) and batch_loss.
template <class R>
double run_batch(const ParameterSet<R>& p, std::span<const std::vector<ItemId>> batch,
                 ParameterSet<R>* grads, const DropoutSpec* dropout) {
  const std::size_t targets = check_batch(p, batch);
  const ModelConfig& cfg = p.config;
  const int C = cfg.hidden_size;
  const int I = cfg.item_count;
  const double inv_targets = 1.0 / static_cast<double>(targets);
  const R* emb = p.values.data() + p.layout.item_embedding;

  if (grads != nullptr) std::fill(grads->values.begin(), grads->values.end(), R(0));

  std::optional<Rng> rng;
  if (dropout != nullptr && dropout->rate > 0.0) rng.emplace(dropout->seed);
  const double rate = rng ? dropout->rate : 0.0;

  double loss_sum = 0.0;
  SequenceActivations<R> acts;
  std::vector<double> logits(static_cast<std::size_t>(I) + 1);
  std::vector<R> dlnf;
  for (const auto& row : batch) {
    const auto seq = strip_padding(row);
    if (seq.size() < 2) continue;
    const auto inputs = seq.first(seq.size() - 1);
    const int T = static_cast<int>(inputs.size());
    sequence_forward(p, inputs, acts, rng ? &*rng : nullptr, rate);
    if (grads != nullptr) dlnf.assign(static_cast<std::size_t>(T) * C, R(0));
    for (int t = 0; t < T; ++t) {
      const R* z = acts.lnf.data() + static_cast<std::size_t>(t) * C;
      output_logits(logits.data(), z, emb, I, C);
      double max_logit = -std::numeric_limits<double>::infinity();
      for (int i = 1; i <= I; ++i) max_logit = std::max(max_logit, logits[i]);
      double sum = 0.0;
      for (int i = 1; i <= I; ++i) {
        logits[i] = std::exp(logits[i] - max_logit);
        sum += logits[i];
      }
      const ItemId target = seq[static_cast<std::size_t>(t) + 1];
      loss_sum += -std::log(logits[target] / sum);
      if (grads == nullptr) continue;
      R* dz = dlnf.data() + static_cast<std::size_t>(t) * C;
      R* demb = grads->values.data() + grads->layout.item_embedding;
      for (int i = 1; i <= I; ++i) {
        double d = logits[i] / sum;
        if (i == target) d -= 1.0;
        const R dl = static_cast<R>(d * inv_targets);
        const R* e = emb + static_cast<std::size_t>(i) * C;
        R* de = demb + static_cast<std::size_t>(i) * C;
        for (int k = 0; k < C; ++k) {
          dz[k] += dl * e[k];
          de[k] += dl * z[k];
        }
      }
    }
    if (grads != nullptr) sequence_backward(p, inputs, acts, dlnf, *grads);
  }
  return loss_sum * inv_targets;
}

// ---------------------------------------------------------------------------
// Cached inference session
// ---------------------------------------------------------------------------

class TransformerSession final : public DecodeSession {
 public:
  TransformerSession(const Parameters& params, std::span<const ItemId> prefix)
      : p_(&params) {
    const ModelConfig& cfg = params.config;
    const std::size_t cache = static_cast<std::size_t>(cfg.max_seq_len) * cfg.hidden_size;
    keys_.assign(static_cast<std::size_t>(cfg.num_blocks), std::vector<float>(cache));
    values_.assign(static_cast<std::size_t>(cfg.num_blocks), std::vector<float>(cache));
    logits_.kind = ScoreVector::Kind::kLogits;
    logits_.values.resize(static_cast<std::size_t>(cfg.item_count) + 1);
    const std::size_t keep = std::min(prefix.size(), static_cast<std::size_t>(cfg.max_seq_len));
    tokens_.assign(prefix.end() - static_cast<std::ptrdiff_t>(keep), prefix.end());
    rebuild();
  }

  const ScoreVector& logits() const override { return logits_; }

  void push(ItemId item) override {
    const ModelConfig& cfg = p_->config;
    if (item < 1 || item > cfg.item_count) {
      throw Error(ErrorCategory::kModel, "item id " + std::to_string(item) + " is out of catalog");
    }
    tokens_.push_back(item);
    if (static_cast<int>(tokens_.size()) > cfg.max_seq_len) {
      // Window slides: positions shift, so the cache must be recomputed.
      tokens_.erase(tokens_.begin());
      rebuild();
    } else {
      step(static_cast<int>(tokens_.size()) - 1, true);
    }
  }

  std::unique_ptr<DecodeSession> clone() const override {
    return std::make_unique<TransformerSession>(*this);
  }

 private:
  void rebuild() {
    for (std::size_t t = 0; t < tokens_.size(); ++t) {
      step(static_cast<int>(t), t + 1 == tokens_.size());
    }
  }

  // Processes tokens_[pos] at position pos, appending to the cache.
  void step(int pos, bool emit_logits) {
    const ModelConfig& cfg = p_->config;
    const int C = cfg.hidden_size;
    const int H = cfg.num_heads;
    const int hs = C / H;
    const float* w = p_->values.data();
    const auto& L = p_->layout;
    const float scale = static_cast<float>(1.0 / std::sqrt(static_cast<double>(hs)));

    x_.resize(C);
    ln_.resize(C);
    qkv_.resize(3 * static_cast<std::size_t>(C));
    y_.resize(C);
    tmp_.resize(C);
    fc_.resize(4 * static_cast<std::size_t>(C));
    weights_.resize(static_cast<std::size_t>(cfg.max_seq_len));
    float mean = 0, rstd = 0;

    const float* e = w + L.item_embedding + static_cast<std::size_t>(tokens_[pos]) * C;
    const float* pe = w + L.position_embedding + static_cast<std::size_t>(pos) * C;
    for (int i = 0; i < C; ++i) x_[i] = e[i] + pe[i];

    for (int b = 0; b < cfg.num_blocks; ++b) {
      const auto& lb = L.blocks[b];
      layernorm_forward(ln_.data(), &mean, &rstd, x_.data(), w + lb.ln1_weight,
                        w + lb.ln1_bias, 1, C);
      linear_forward(qkv_.data(), ln_.data(), w + lb.qkv_weight, w + lb.qkv_bias, 1, C, 3 * C);
      float* kc = keys_[b].data();
      float* vc = values_[b].data();
      std::copy_n(qkv_.data() + C, C, kc + static_cast<std::size_t>(pos) * C);
      std::copy_n(qkv_.data() + 2 * C, C, vc + static_cast<std::size_t>(pos) * C);
      for (int h = 0; h < H; ++h) {
        attend_row(y_.data() + h * hs, weights_.data(), qkv_.data() + h * hs, kc + h * hs,
                   static_cast<std::size_t>(C), vc + h * hs, static_cast<std::size_t>(C),
                   pos + 1, hs, scale);
      }
      linear_forward(tmp_.data(), y_.data(), w + lb.attn_proj_weight, w + lb.attn_proj_bias, 1,
                     C, C);
      for (int i = 0; i < C; ++i) x_[i] = tmp_[i] + x_[i];
      layernorm_forward(ln_.data(), &mean, &rstd, x_.data(), w + lb.ln2_weight,
                        w + lb.ln2_bias, 1, C);
      linear_forward(fc_.data(), ln_.data(), w + lb.fc_weight, w + lb.fc_bias, 1, C, 4 * C);
      for (auto& v : fc_) v = gelu(v);
      linear_forward(tmp_.data(), fc_.data(), w + lb.fc_proj_weight, w + lb.fc_proj_bias, 1,
                     4 * C, C);
      for (int i = 0; i < C; ++i) x_[i] = tmp_[i] + x_[i];
    }
    if (!emit_logits) return;
    layernorm_forward(ln_.data(), &mean, &rstd, x_.data(), w + L.final_ln_weight,
                      w + L.final_ln_bias, 1, C);
    output_logits(logits_.values.data(), ln_.data(), w + L.item_embedding, cfg.item_count, C);
  }

  const Parameters* p_;
  std::vector<ItemId> tokens_;
  std::vector<std::vector<float>> keys_, values_;
  ScoreVector logits_;
  std::vector<float> x_, ln_, qkv_, y_, tmp_, fc_, weights_;
};

}  // namespace

template <class Real>
double loss_and_gradients(const ParameterSet<Real>& params,
                          std::span<const std::vector<ItemId>> batch,
                          ParameterSet<Real>& grads, const DropoutSpec* dropout) {
  if (grads.values.size() != params.values.size()) {
    throw Error(ErrorCategory::kModel, "gradient buffer does not match parameter layout");
  }
  return run_batch(params, batch, &grads, dropout);
}

template <class Real>
double batch_loss(const ParameterSet<Real>& params, std::span<const std::vector<ItemId>> batch) {
  return run_batch<Real>(params, batch, nullptr, nullptr);
}

template <class Real>
std::vector<double> sequence_logits(const ParameterSet<Real>& params,
                                    std::span<const ItemId> tokens) {
  const ModelConfig& cfg = params.config;
  if (tokens.empty() || tokens.size() > static_cast<std::size_t>(cfg.max_seq_len)) {
    throw Error(ErrorCategory::kModel, "sequence length must lie in [1, max_seq_len]");
  }
  for (ItemId item : tokens) {
    if (item < 1 || item > cfg.item_count) {
      throw Error(ErrorCategory::kModel, "item id " + std::to_string(item) + " is out of catalog");
    }
  }
  SequenceActivations<Real> acts;
  sequence_forward(params, tokens, acts, nullptr, 0.0);
  const int T = static_cast<int>(tokens.size());
  const int C = cfg.hidden_size;
  const std::size_t width = static_cast<std::size_t>(cfg.item_count) + 1;
  std::vector<double> out(static_cast<std::size_t>(T) * width);
  for (int t = 0; t < T; ++t) {
    output_logits(out.data() + static_cast<std::size_t>(t) * width,
                  acts.lnf.data() + static_cast<std::size_t>(t) * C,
                  params.values.data() + params.layout.item_embedding, cfg.item_count, C);
  }
  return out;
}

template double loss_and_gradients<float>(const ParameterSet<float>&,
                                          std::span<const std::vector<ItemId>>,
                                          ParameterSet<float>&, const DropoutSpec*);
template double loss_and_gradients<double>(const ParameterSet<double>&,
                                           std::span<const std::vector<ItemId>>,
                                           ParameterSet<double>&, const DropoutSpec*);
template double batch_loss<float>(const ParameterSet<float>&,
                                  std::span<const std::vector<ItemId>>);
template double batch_loss<double>(const ParameterSet<double>&,
                                   std::span<const std::vector<ItemId>>);
template std::vector<double> sequence_logits<float>(const ParameterSet<float>&,
                                                    std::span<const ItemId>);
template std::vector<double> sequence_logits<double>(const ParameterSet<double>&,
                                                     std::span<const ItemId>);

// ---------------------------------------------------------------------------
// Transformer
// ---------------------------------------------------------------------------

Transformer::Transformer(Parameters params) : params_(std::move(params)) {
  params_.config.validate();
  for (float v : params_.values) {
    if (!std::isfinite(v)) throw Error(ErrorCategory::kModel, "non-finite parameter value");
  }
}

ScoreVector Transformer::forward(std::span<const ItemId> prefix) const {
  return start(prefix)->logits();
}

std::unique_ptr<DecodeSession> Transformer::start(std::span<const ItemId> prefix) const {
  check_prefix(prefix);
  return std::make_unique<TransformerSession>(params_, prefix);
}

}  // namespace seqrec
