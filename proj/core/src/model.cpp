#include "neurodecode/model.hpp"

#include <cmath>

#include "neurodecode/error.hpp"

namespace neurodecode {

void ModelConfig::validate() const {
  if (channels < 1) throw ConfigError("model: channels must be >= 1");
  if (num_sessions < 1) throw ConfigError("model: num_sessions must be >= 1");
  if (d_model < 1 || d_model % heads != 0) {
    throw ConfigError("model: d_model (" + std::to_string(d_model) +
                      ") must be a positive multiple of heads (" + std::to_string(heads) + ")");
  }
  if (num_blocks < 1) throw ConfigError("model: num_blocks must be >= 1");
  if (d_ff < 1) throw ConfigError("model: d_ff must be >= 1");
  if (conv_kernel < 1) throw ConfigError("model: conv_kernel must be >= 1");
  if (patch_size < 1 || stride < 1 || stride > patch_size) {
    throw ConfigError("model: require 1 <= stride <= patch_size");
  }
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("model: dropout must be in [0, 1)");
  if (vocab_size < 2) throw ConfigError("model: vocab_size must be >= 2");
  if (max_pos_len < 1) throw ConfigError("model: max_pos_len must be >= 1");
}

int64_t ModelConfig::token_count(int64_t frames) const {
  return (frames - patch_size) / stride + 1;
}

ParamCount count_parameters(const ModelConfig& cfg) {
  const int64_t c = cfg.channels, d = cfg.d_model, v = cfg.vocab_size;
  ParamCount out;
  out.adapters = cfg.num_sessions * (c * c + c);

  const int64_t patch = cfg.patch_size * c * d + d;
  const int64_t ffn = d * cfg.d_ff + cfg.d_ff + cfg.d_ff * d + d;  // w1+b1+w2+b2
  const int64_t norm = 2 * d;
  const int64_t attn = 4 * (d * d + d);
  const int64_t conv = (d * 2 * d + 2 * d)            // pointwise expand
                       + (cfg.conv_kernel * d + d)    // depthwise + bias
                       + 2 * d                        // batch-norm affine
                       + (d * d + d);                 // pointwise project
  const int64_t block = 2 * (ffn + norm) + (norm + attn) + (norm + conv) + norm;
  const int64_t head = d * d + d + d * v + v;

  out.without_adapters = patch + cfg.num_blocks * block + head;
  out.with_adapters = out.without_adapters + out.adapters;
  return out;
}

Tensor sinusoidal_table(int64_t max_len, int64_t d_model, Dtype dtype) {
  Tensor table = Tensor::zeros({max_len, d_model}, dtype);
  for (int64_t p = 0; p < max_len; ++p) {
    for (int64_t i = 0; i < d_model; i += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(d_model));
      table.set(p * d_model + i, std::sin(p * freq));
      if (i + 1 < d_model) table.set(p * d_model + i + 1, std::cos(p * freq));
    }
  }
  return table;
}

namespace {

Tensor uniform_init(Shape shape, int64_t fan_in, RngStream& rng, Dtype dt) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Tensor t = Tensor::uniform(std::move(shape), -bound, bound, rng, dt);
  t.set_requires_grad(true);
  return t;
}

// Additive key mask for attention: 0 on valid keys, a large negative value on
// padded ones, replicated per head and query row.
Tensor attention_mask(const Tensor& token_mask, int64_t heads, Dtype dt) {
  const int64_t bsz = token_mask.dim(0), n = token_mask.dim(1);
  Tensor mask = Tensor::zeros({bsz * heads, n, n}, dt);
  dispatch_dtype(dt, [&](auto tag) {
    using T = decltype(tag);
    auto out = mask.data<T>();
    for (int64_t b = 0; b < bsz; ++b) {
      for (int64_t key = 0; key < n; ++key) {
        if (token_mask.at(b * n + key) != 0.0) continue;
        for (int64_t h = 0; h < heads; ++h) {
          T* plane = out.data() + ((b * heads + h) * n) * n;
          for (int64_t q = 0; q < n; ++q) plane[q * n + key] = T(-1e9);
        }
      }
    }
  });
  return mask;
}

Tensor split_heads(const Tensor& x, int64_t heads) {
  const int64_t b = x.dim(0), n = x.dim(1), d = x.dim(2);
  Tensor t = ops::reshape(x, {b, n, heads, d / heads});
  t = ops::permute_0213(t);  // [B, h, N, dk]
  return ops::reshape(t, {b * heads, n, d / heads});
}

Tensor merge_heads(const Tensor& x, int64_t bsz, int64_t heads) {
  const int64_t n = x.dim(1), dk = x.dim(2);
  Tensor t = ops::reshape(x, {bsz, heads, n, dk});
  t = ops::permute_0213(t);  // [B, N, h, dk]
  return ops::reshape(t, {bsz, n, heads * dk});
}

}  // namespace

DecoderModel::DecoderModel(ModelConfig cfg, Dtype dtype, uint64_t seed,
                           bool freeze_alignment)
    : cfg_(cfg), dtype_(dtype), freeze_alignment_(freeze_alignment) {
  cfg_.validate();
  RngStream rng = RngStream(seed).fork("model-init");
  const int64_t c = cfg_.channels, d = cfg_.d_model;

  auto reg = [&](std::string name, Tensor t, bool day_group = false) {
    params_.push_back({std::move(name), std::move(t), day_group});
  };

  // Session adapters start as an exact pass-through (identity, zero bias).
  for (int64_t s = 0; s < cfg_.num_sessions; ++s) {
    Tensor w = Tensor::identity(c, dtype_);
    Tensor b = Tensor::zeros({c}, dtype_);
    if (!freeze_alignment_) {
      w.set_requires_grad(true);
      b.set_requires_grad(true);
      reg("align.W." + std::to_string(s), w, true);
      reg("align.b." + std::to_string(s), b, true);
    }
    align_w_.push_back(w);
    align_b_.push_back(b);
  }

  patch_w_ = uniform_init({cfg_.patch_size * c, d}, cfg_.patch_size * c, rng, dtype_);
  patch_b_ = uniform_init({d}, cfg_.patch_size * c, rng, dtype_);
  reg("patch.w", patch_w_);
  reg("patch.b", patch_b_);
  pos_table_ = sinusoidal_table(cfg_.max_pos_len, d, dtype_);

  auto make_norm = [&](const std::string& prefix) {
    detail::Norm n;
    n.gamma = Tensor::full({d}, 1.0, dtype_);
    n.gamma.set_requires_grad(true);
    n.beta = Tensor::zeros({d}, dtype_, true);
    reg(prefix + ".g", n.gamma);
    reg(prefix + ".b", n.beta);
    return n;
  };
  auto make_linear = [&](const std::string& prefix, int64_t in, int64_t out) {
    detail::Linear l;
    l.w = uniform_init({in, out}, in, rng, dtype_);
    l.b = uniform_init({out}, in, rng, dtype_);
    reg(prefix + ".w", l.w);
    reg(prefix + ".b", l.b);
    return l;
  };

  for (int64_t i = 0; i < cfg_.num_blocks; ++i) {
    const std::string bp = "block." + std::to_string(i);
    detail::ConformerBlock block;

    block.ffn1.ln = make_norm(bp + ".ffn1.ln");
    block.ffn1.w1 = {uniform_init({d, cfg_.d_ff}, d, rng, dtype_),
                     uniform_init({cfg_.d_ff}, d, rng, dtype_)};
    reg(bp + ".ffn1.w1", block.ffn1.w1.w);
    reg(bp + ".ffn1.b1", block.ffn1.w1.b);
    block.ffn1.w2 = {uniform_init({cfg_.d_ff, d}, cfg_.d_ff, rng, dtype_),
                     uniform_init({d}, cfg_.d_ff, rng, dtype_)};
    reg(bp + ".ffn1.w2", block.ffn1.w2.w);
    reg(bp + ".ffn1.b2", block.ffn1.w2.b);

    block.attn.ln = make_norm(bp + ".attn.ln");
    block.attn.wq = make_linear(bp + ".attn.wq", d, d);
    block.attn.wk = make_linear(bp + ".attn.wk", d, d);
    block.attn.wv = make_linear(bp + ".attn.wv", d, d);
    block.attn.wo = make_linear(bp + ".attn.wo", d, d);

    block.conv.ln = make_norm(bp + ".conv.ln");
    block.conv.pw1 = make_linear(bp + ".conv.pw1", d, 2 * d);
    block.conv.dw_kernel = uniform_init({cfg_.conv_kernel, d}, cfg_.conv_kernel, rng, dtype_);
    block.conv.dw_bias = uniform_init({d}, cfg_.conv_kernel, rng, dtype_);
    reg(bp + ".conv.dw.w", block.conv.dw_kernel);
    reg(bp + ".conv.dw.b", block.conv.dw_bias);
    block.conv.bn_gamma = Tensor::full({d}, 1.0, dtype_);
    block.conv.bn_gamma.set_requires_grad(true);
    block.conv.bn_beta = Tensor::zeros({d}, dtype_, true);
    reg(bp + ".conv.bn.g", block.conv.bn_gamma);
    reg(bp + ".conv.bn.b", block.conv.bn_beta);
    block.conv.bn_running_mean = Tensor::zeros({d}, dtype_);
    block.conv.bn_running_var = Tensor::full({d}, 1.0, dtype_);
    buffers_.push_back({bp + ".conv.bn.running_mean", block.conv.bn_running_mean});
    buffers_.push_back({bp + ".conv.bn.running_var", block.conv.bn_running_var});
    block.conv.pw2 = make_linear(bp + ".conv.pw2", d, d);

    block.ffn2.ln = make_norm(bp + ".ffn2.ln");
    block.ffn2.w1 = {uniform_init({d, cfg_.d_ff}, d, rng, dtype_),
                     uniform_init({cfg_.d_ff}, d, rng, dtype_)};
    reg(bp + ".ffn2.w1", block.ffn2.w1.w);
    reg(bp + ".ffn2.b1", block.ffn2.w1.b);
    block.ffn2.w2 = {uniform_init({cfg_.d_ff, d}, cfg_.d_ff, rng, dtype_),
                     uniform_init({d}, cfg_.d_ff, rng, dtype_)};
    reg(bp + ".ffn2.w2", block.ffn2.w2.w);
    reg(bp + ".ffn2.b2", block.ffn2.w2.b);

    block.out_ln = make_norm(bp + ".out_ln");
    blocks_.push_back(std::move(block));
  }

  head1_ = make_linear("head.w1", d, d);
  head2_ = make_linear("head.w2", d, cfg_.vocab_size);
  // make_linear registered these under .w/.b; rename to the documented names.
  for (auto& p : params_) {
    if (p.name == "head.w1.w") p.name = "head.w1";
    else if (p.name == "head.w1.b") p.name = "head.b1";
    else if (p.name == "head.w2.w") p.name = "head.w2";
    else if (p.name == "head.w2.b") p.name = "head.b2";
  }
}

std::vector<ParamInfo> DecoderModel::named_tensors() const {
  std::vector<ParamInfo> all = params_;
  if (freeze_alignment_) {
    // Frozen adapters are still part of the serialized model.
    for (int64_t s = 0; s < cfg_.num_sessions; ++s) {
      all.push_back({"align.W." + std::to_string(s), align_w_[static_cast<size_t>(s)], true});
      all.push_back({"align.b." + std::to_string(s), align_b_[static_cast<size_t>(s)], true});
    }
  }
  for (const auto& b : buffers_) all.push_back(b);
  return all;
}

int64_t DecoderModel::registered_parameter_count() const {
  int64_t total = 0;
  for (const auto& p : params_) total += p.tensor.numel();
  return total;
}

void DecoderModel::reset_bn_running_stats() {
  for (auto& block : blocks_) {
    dispatch_dtype(dtype_, [&](auto tag) {
      using T = decltype(tag);
      auto mean = block.conv.bn_running_mean.data<T>();
      auto var = block.conv.bn_running_var.data<T>();
      std::fill(mean.begin(), mean.end(), T(0));
      std::fill(var.begin(), var.end(), T(1));
    });
    block.conv.bn_batches_seen = 0;
  }
}

Tensor DecoderModel::align(const Tensor& x, const std::vector<int>& session_ids) const {
  return ops::silu(ops::session_linear(x, session_ids, align_w_, align_b_));
}

Tensor DecoderModel::embed_tokens(const Tensor& x, const std::vector<int>& session_ids,
                                  const std::vector<int64_t>& valid_frames) const {
  const int64_t bsz = x.dim(0), frames = x.dim(1);
  const int64_t n_tokens = cfg_.token_count(frames);
  Tensor token_mask = Tensor::zeros({bsz, n_tokens}, dtype_);
  for (int64_t i = 0; i < bsz; ++i) {
    const int64_t nv = cfg_.token_count(valid_frames[static_cast<size_t>(i)]);
    for (int64_t t = 0; t < nv; ++t) token_mask.set(i * n_tokens + t, 1.0);
  }
  return embed(x, session_ids, Mode::kEval, nullptr, token_mask);
}

Tensor DecoderModel::embed(const Tensor& x, const std::vector<int>& session_ids,
                           Mode mode, RngStream* rng, const Tensor& token_mask) const {
  Tensor aligned = ops::silu(ops::session_linear(x, session_ids, align_w_, align_b_));
  Tensor patches = ops::unfold_patches(aligned, cfg_.patch_size, cfg_.stride);
  Tensor z = ops::add(ops::matmul(patches, patch_w_), patch_b_);

  const int64_t n = z.dim(1);
  if (n > cfg_.max_pos_len) {
    throw ConfigError("model: sequence of " + std::to_string(n) +
                      " tokens exceeds max_pos_len " + std::to_string(cfg_.max_pos_len));
  }
  Tensor pos = Tensor::zeros({n, cfg_.d_model}, dtype_);
  dispatch_dtype(dtype_, [&](auto tag) {
    using T = decltype(tag);
    auto src = pos_table_.data<T>();
    auto dst = pos.data<T>();
    std::copy(src.begin(), src.begin() + n * cfg_.d_model, dst.begin());
  });
  z = ops::add(z, pos);

  RngStream dummy(0);
  z = ops::dropout(z, cfg_.dropout, rng ? *rng : dummy, mode);
  return ops::mask_rows(z, token_mask);
}

Tensor DecoderModel::run_block(detail::ConformerBlock& block, const Tensor& x,
                               const Tensor& token_mask, const Tensor& attn_mask,
                               Mode mode, RngStream* rng) {
  RngStream dummy(0);
  RngStream& r = rng ? *rng : dummy;
  const double p = cfg_.dropout;

  auto half_ffn = [&](detail::FeedForward& f, const Tensor& in) {
    Tensor h = f.ln.forward(in);
    h = f.w1.forward(h);
    h = ops::silu(h);
    h = ops::dropout(h, p, r, mode);
    h = f.w2.forward(h);
    h = ops::dropout(h, p, r, mode);
    return ops::add(in, ops::scalar_mul(h, 0.5));
  };

  Tensor h = half_ffn(block.ffn1, x);

  {  // multi-head self-attention with padded keys masked out
    Tensor a = block.attn.ln.forward(h);
    const int64_t bsz = a.dim(0);
    const int64_t dk = cfg_.d_model / cfg_.heads;
    Tensor q = split_heads(block.attn.wq.forward(a), cfg_.heads);
    Tensor k = split_heads(block.attn.wk.forward(a), cfg_.heads);
    Tensor v = split_heads(block.attn.wv.forward(a), cfg_.heads);
    Tensor scores = ops::scalar_mul(ops::matmul(q, ops::transpose_last(k)),
                                    1.0 / std::sqrt(static_cast<double>(dk)));
    scores = ops::add(scores, attn_mask);
    Tensor weights = ops::softmax(scores);
    Tensor ctx = merge_heads(ops::matmul(weights, v), bsz, cfg_.heads);
    h = ops::add(h, block.attn.wo.forward(ctx));
  }

  {  // convolution module
    Tensor c = block.conv.ln.forward(h);
    c = block.conv.pw1.forward(c);
    c = ops::glu(c);
    // Depthwise taps must not read padded rows.
    c = ops::mask_rows(c, token_mask);
    c = ops::depthwise_conv1d(c, block.conv.dw_kernel, block.conv.dw_bias);
    c = ops::batch_norm_1d(c, block.conv.bn_gamma, block.conv.bn_beta, token_mask,
                           block.conv.bn_running_mean, block.conv.bn_running_var,
                           block.conv.bn_batches_seen, mode);
    c = ops::silu(c);
    c = block.conv.pw2.forward(c);
    c = ops::dropout(c, p, r, mode);
    h = ops::add(h, c);
  }

  h = half_ffn(block.ffn2, h);
  h = block.out_ln.forward(h);
  return ops::mask_rows(h, token_mask);
}

ForwardResult DecoderModel::forward(const Tensor& x, const std::vector<int>& session_ids,
                                    const std::vector<int64_t>& valid_frames, Mode mode,
                                    RngStream* rng) {
  if (x.rank() != 3 || x.dim(2) != cfg_.channels) {
    throw ShapeError("model: expected input [B,T," + std::to_string(cfg_.channels) +
                     "], got " + shape_str(x.shape()));
  }
  const int64_t bsz = x.dim(0), frames = x.dim(1);
  if (static_cast<int64_t>(session_ids.size()) != bsz ||
      static_cast<int64_t>(valid_frames.size()) != bsz) {
    throw ShapeError("model: per-trial metadata does not match batch size");
  }
  if (frames < cfg_.patch_size) {
    throw TrialTooShortError("model: batch buffer of " + std::to_string(frames) +
                             " frames is shorter than patch size " +
                             std::to_string(cfg_.patch_size));
  }
  if (mode == Mode::kTrain && cfg_.dropout > 0.0 && rng == nullptr) {
    throw ConfigError("model: train-mode forward requires an rng stream");
  }

  ForwardResult result;
  result.token_lengths.resize(static_cast<size_t>(bsz));
  for (int64_t i = 0; i < bsz; ++i) {
    const int64_t v = valid_frames[static_cast<size_t>(i)];
    if (v < cfg_.patch_size) {
      throw TrialTooShortError("model: trial " + std::to_string(i) + " has " +
                               std::to_string(v) + " valid frames, need >= " +
                               std::to_string(cfg_.patch_size));
    }
    if (v > frames) throw ShapeError("model: valid frames exceed buffer for trial " + std::to_string(i));
    result.token_lengths[static_cast<size_t>(i)] = cfg_.token_count(v);
  }

  const int64_t n_tokens = cfg_.token_count(frames);
  Tensor token_mask = Tensor::zeros({bsz, n_tokens}, dtype_);
  for (int64_t i = 0; i < bsz; ++i) {
    for (int64_t t = 0; t < result.token_lengths[static_cast<size_t>(i)]; ++t) {
      token_mask.set(i * n_tokens + t, 1.0);
    }
  }

  Tensor z = embed(x, session_ids, mode, rng, token_mask);
  Tensor attn_mask = attention_mask(token_mask, cfg_.heads, dtype_);
  for (auto& block : blocks_) {
    z = run_block(block, z, token_mask, attn_mask, mode, rng);
  }

  RngStream dummy(0);
  Tensor h = ops::silu(head1_.forward(z));
  h = ops::dropout(h, cfg_.dropout, rng ? *rng : dummy, mode);
  Tensor logits = head2_.forward(h);
  result.log_probs = ops::log_softmax(logits);
  return result;
}

}  // namespace neurodecode
