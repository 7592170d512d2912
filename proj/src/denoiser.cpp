#include "adjust/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "adjust/optim.hpp"

namespace adjust {

std::vector<ProbRow> marginals(const Denoiser& model, const TokenString& x, double temperature,
                               double top_p) {
  std::vector<int> masked = x.masked_positions();
  if (masked.empty()) throw std::invalid_argument("marginals: no masked positions");
  std::vector<ProbRow> rows = model.prob_rows(x, masked);
  for (auto& row : rows) {
    if (temperature != 1.0) row = temper_row(row, temperature);
    if (top_p < 1.0) row = nucleus_truncate(row, top_p);
  }
  return rows;
}

// ---- tabular ----------------------------------------------------------------

TabularDenoiser::TabularDenoiser(Vocab vocab, std::vector<TokenString> support,
                                 std::vector<double> weights, double lambda)
    : vocab_(std::move(vocab)), support_(std::move(support)), weights_(std::move(weights)),
      lambda_(lambda) {
  if (support_.empty() || support_.size() != weights_.size())
    throw std::invalid_argument("TabularDenoiser: support/weights size mismatch");
  if (lambda_ < 0.0 || lambda_ >= 1.0)
    throw std::invalid_argument("TabularDenoiser: lambda must be in [0,1)");
  const int L = support_[0].length();
  double total = 0.0;
  for (size_t s = 0; s < support_.size(); ++s) {
    if (support_[s].length() != L)
      throw std::invalid_argument("TabularDenoiser: support strings must share length");
    if (support_[s].mask_count() != 0)
      throw std::invalid_argument("TabularDenoiser: support strings must be fully unmasked");
    if (!(weights_[s] > 0.0)) throw std::invalid_argument("TabularDenoiser: weights must be positive");
    total += weights_[s];
  }
  for (double& w : weights_) w /= total;

  uncond_.assign(L, ProbRow(vocab_.size, 0.0));
  for (size_t s = 0; s < support_.size(); ++s)
    for (int i = 0; i < L; ++i) uncond_[i][support_[s].at(i)] += weights_[s];
}

ProbRow TabularDenoiser::conditional(const TokenString& x, int position) const {
  if (!x.is_masked(position))
    throw std::invalid_argument("tabular_conditional: position is not masked");
  ProbRow row(vocab_.size, 0.0);
  double total = 0.0;
  for (size_t s = 0; s < support_.size(); ++s) {
    bool consistent = true;
    for (int i = 0; i < x.length() && consistent; ++i)
      if (!x.is_masked(i) && support_[s].at(i) != x.at(i)) consistent = false;
    if (!consistent) continue;
    row[support_[s].at(position)] += weights_[s];
    total += weights_[s];
  }
  if (total > 0.0) {
    for (double& v : row) v /= total;
    return row;
  }
  // Off-support evidence: unconditional marginal blended with uniform.
  const int n_real = vocab_.size - 1;
  for (int v = 0; v < vocab_.size; ++v) {
    if (v == vocab_.mask_id) continue;
    row[v] = (1.0 - lambda_) * uncond_[position][v] + lambda_ / n_real;
  }
  return row;
}

std::vector<ProbRow> TabularDenoiser::prob_rows(const TokenString& x,
                                                const std::vector<int>& positions) const {
  std::vector<ProbRow> out;
  out.reserve(positions.size());
  for (int i : positions) out.push_back(conditional(x, i));
  return out;
}

TabularDenoiser two_sentence_world() {
  Vocab v = Vocab::with_labels({"the", "cat", "dog", "sat", "ran", "on", "in", "mat", "yard"});
  auto sent = [&](std::vector<std::string> words) {
    std::vector<int> toks;
    for (const auto& w : words) toks.push_back(v.label_id(w));
    return TokenString(toks, v.mask_id);
  };
  return TabularDenoiser(v,
                         {sent({"the", "cat", "sat", "on", "the", "mat"}),
                          sent({"the", "dog", "ran", "in", "the", "yard"})},
                         {0.5, 0.5});
}

// ---- neural -----------------------------------------------------------------

void BlockParams::collect(const std::string& prefix,
                          std::vector<std::pair<std::string, Tensor>>& out) const {
  out.emplace_back(prefix + ".ln1.gain", ln1_gain);
  out.emplace_back(prefix + ".ln1.bias", ln1_bias);
  out.emplace_back(prefix + ".attn.wq", wq);
  out.emplace_back(prefix + ".attn.bq", bq);
  out.emplace_back(prefix + ".attn.wk", wk);
  out.emplace_back(prefix + ".attn.bk", bk);
  out.emplace_back(prefix + ".attn.wv", wv);
  out.emplace_back(prefix + ".attn.bv", bv);
  out.emplace_back(prefix + ".attn.wo", wo);
  out.emplace_back(prefix + ".attn.bo", bo);
  out.emplace_back(prefix + ".ln2.gain", ln2_gain);
  out.emplace_back(prefix + ".ln2.bias", ln2_bias);
  out.emplace_back(prefix + ".mlp.w_up", w_up);
  out.emplace_back(prefix + ".mlp.b_up", b_up);
  out.emplace_back(prefix + ".mlp.w_down", w_down);
  out.emplace_back(prefix + ".mlp.b_down", b_down);
}

int64_t BlockParams::param_count() const {
  std::vector<std::pair<std::string, Tensor>> all;
  collect("b", all);
  int64_t n = 0;
  for (auto& [name, t] : all) n += t.size();
  return n;
}

Tensor block_forward(const BlockParams& p, const Tensor& x, int n_heads) {
  const int L = x.dim(0), d = x.dim(1);
  if (d % n_heads != 0) throw std::invalid_argument("block_forward: d not divisible by heads");
  const int dh = d / n_heads;
  const double scale_factor = 1.0 / std::sqrt(static_cast<double>(dh));

  Tensor normed = layer_norm(x, p.ln1_gain, p.ln1_bias);
  Tensor q = add_row_broadcast(matmul_transposed(normed, p.wq), p.bq);
  Tensor k = add_row_broadcast(matmul_transposed(normed, p.wk), p.bk);
  Tensor v = add_row_broadcast(matmul_transposed(normed, p.wv), p.bv);

  Tensor ctx;  // [L, d], heads concatenated
  for (int h = 0; h < n_heads; ++h) {
    Tensor qh = slice_cols(q, h * dh, dh);
    Tensor kh = slice_cols(k, h * dh, dh);
    Tensor vh = slice_cols(v, h * dh, dh);
    Tensor scores = scale(matmul_transposed(qh, kh), scale_factor);  // [L, L], no mask
    Tensor attn = softmax_rows(scores);
    Tensor ctx_h = matmul(attn, vh);
    ctx = h == 0 ? ctx_h : concat_cols(ctx, ctx_h);
  }
  Tensor attn_out = add_row_broadcast(matmul_transposed(ctx, p.wo), p.bo);
  Tensor x1 = add(x, attn_out);

  Tensor normed2 = layer_norm(x1, p.ln2_gain, p.ln2_bias);
  Tensor up = gelu(add_row_broadcast(matmul_transposed(normed2, p.w_up), p.b_up));
  Tensor down = add_row_broadcast(matmul_transposed(up, p.w_down), p.b_down);
  return add(x1, down);
}

namespace {

BlockParams init_block(int d, RngStream& rng) {
  const double s = 0.02;
  BlockParams p;
  p.ln1_gain = Tensor::full({d}, 1.0);
  p.ln1_bias = Tensor::zeros({d});
  p.wq = Tensor::gaussian({d, d}, s, rng);
  p.bq = Tensor::zeros({d});
  p.wk = Tensor::gaussian({d, d}, s, rng);
  p.bk = Tensor::zeros({d});
  p.wv = Tensor::gaussian({d, d}, s, rng);
  p.bv = Tensor::zeros({d});
  p.wo = Tensor::gaussian({d, d}, s, rng);
  p.bo = Tensor::zeros({d});
  p.ln2_gain = Tensor::full({d}, 1.0);
  p.ln2_bias = Tensor::zeros({d});
  p.w_up = Tensor::gaussian({4 * d, d}, s, rng);
  p.b_up = Tensor::zeros({4 * d});
  p.w_down = Tensor::gaussian({d, 4 * d}, s, rng);
  p.b_down = Tensor::zeros({d});
  return p;
}

}  // namespace

NeuralDenoiser::NeuralDenoiser(Vocab vocab, NeuralDims dims, RngStream& rng)
    : vocab_(std::move(vocab)), dims_(dims) {
  token_embedding = Tensor::gaussian({vocab_.size, dims_.d}, 0.02, rng);
  positional_embedding = Tensor::gaussian({dims_.l_max, dims_.d}, 0.02, rng);
  for (int b = 0; b < dims_.blocks; ++b) blocks_.push_back(init_block(dims_.d, rng));
  final_gain = Tensor::full({dims_.d}, 1.0);
  final_bias = Tensor::zeros({dims_.d});
  head = Tensor::gaussian({vocab_.size, dims_.d}, 0.02, rng);
}

Tensor NeuralDenoiser::embeddings(const TokenString& x) const {
  if (x.length() > dims_.l_max)
    throw std::invalid_argument("embeddings: string longer than l_max");
  std::vector<int> pos_ids(x.length());
  for (int i = 0; i < x.length(); ++i) pos_ids[i] = i;
  Tensor h = add(embedding_lookup(token_embedding, x.tokens()),
                 embedding_lookup(positional_embedding, pos_ids));
  for (const auto& b : blocks_) h = block_forward(b, h, dims_.heads);
  return layer_norm(h, final_gain, final_bias);
}

Tensor NeuralDenoiser::head_logits(const Tensor& h) const { return matmul_transposed(h, head); }

ProbRow row_softmax_no_mask(const double* logits, int vocab_size, int mask_id) {
  ProbRow row(vocab_size, 0.0);
  double mx = -1e300;
  for (int v = 0; v < vocab_size; ++v)
    if (v != mask_id) mx = std::max(mx, logits[v]);
  double z = 0.0;
  for (int v = 0; v < vocab_size; ++v) {
    if (v == mask_id) continue;
    row[v] = std::exp(logits[v] - mx);
    z += row[v];
  }
  for (double& p : row) p /= z;
  return row;
}

std::vector<ProbRow> NeuralDenoiser::rows_from_embeddings(
    const Tensor& h, const std::vector<int>& positions) const {
  Tensor logits = head_logits(h);
  std::vector<ProbRow> out;
  out.reserve(positions.size());
  for (int i : positions)
    out.push_back(row_softmax_no_mask(logits.data().data() + static_cast<int64_t>(i) * vocab_.size,
                                      vocab_.size, vocab_.mask_id));
  return out;
}

std::vector<ProbRow> NeuralDenoiser::prob_rows(const TokenString& x,
                                               const std::vector<int>& positions) const {
  for (int i : positions)
    if (!x.is_masked(i)) throw std::invalid_argument("prob_rows: position is not masked");
  return rows_from_embeddings(embeddings(x), positions);
}

std::vector<std::pair<std::string, Tensor>> NeuralDenoiser::named_params() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("token_embedding", token_embedding);
  out.emplace_back("positional_embedding", positional_embedding);
  for (size_t b = 0; b < blocks_.size(); ++b) blocks_[b].collect("block" + std::to_string(b), out);
  out.emplace_back("final.gain", final_gain);
  out.emplace_back("final.bias", final_bias);
  out.emplace_back("head", head);
  return out;
}

void NeuralDenoiser::set_trainable(bool trainable) {
  for (auto& [name, t] : named_params()) t.node()->requires_grad = trainable;
  fingerprint_valid_ = false;
}

int64_t NeuralDenoiser::param_count() const {
  int64_t n = 0;
  for (auto& [name, t] : named_params()) n += t.size();
  return n;
}

uint64_t NeuralDenoiser::fingerprint() const {
  if (!fingerprint_valid_) {
    fingerprint_ = params_fingerprint(named_params());
    fingerprint_valid_ = true;
  }
  return fingerprint_;
}

uint64_t params_fingerprint(const std::vector<std::pair<std::string, Tensor>>& params) {
  uint64_t h = 1469598103934665603ULL;
  auto feed = [&h](const void* bytes, size_t n) {
    const unsigned char* b = static_cast<const unsigned char*>(bytes);
    for (size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& [name, t] : params) {
    feed(name.data(), name.size());
    for (double v : t.data()) {
      float f = static_cast<float>(v);
      uint32_t u;
      std::memcpy(&u, &f, 4);
      feed(&u, 4);
    }
  }
  return h;
}

// ---- training ---------------------------------------------------------------

std::vector<LossCurvePoint> train_base(NeuralDenoiser& model,
                                       const std::vector<TokenString>& corpus,
                                       const BaseTrainConfig& cfg, RngStream rng) {
  if (corpus.empty()) throw std::invalid_argument("train_base: empty corpus");
  const size_t L = corpus[0].length();
  for (const auto& s : corpus)
    if (static_cast<size_t>(s.length()) != L || s.mask_count() != 0)
      throw std::invalid_argument("train_base: corpus strings must be fully unmasked, equal length");

  model.set_trainable(true);
  std::vector<std::pair<std::string, Tensor>> params = model.named_params();
  AdamState opt(params);

  RngStream shuffle_rng = rng.stream(rng.stream_id() ^ 0x5151515151515151ULL);
  std::vector<LossCurvePoint> curve;
  const int mask_id = model.vocab().mask_id;
  int step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<size_t> order(corpus.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    shuffle_rng.shuffle(order);

    for (size_t start = 0; start + 1 <= order.size(); start += cfg.batch_size) {
      const size_t end = std::min(order.size(), start + cfg.batch_size);
      Tensor batch_loss;
      int count = 0;
      for (size_t bi = start; bi < end; ++bi) {
        const TokenString& clean = corpus[order[bi]];
        // Mask rate per sample; redraw patterns that mask nothing.
        std::vector<int> noisy = clean.tokens();
        std::vector<int> targets(L, -1);
        for (;;) {
          double t = rng.next_double();
          int masked = 0;
          for (size_t i = 0; i < L; ++i) {
            if (rng.next_double() < t) {
              noisy[i] = mask_id;
              targets[i] = clean.at(static_cast<int>(i));
              ++masked;
            } else {
              noisy[i] = clean.at(static_cast<int>(i));
              targets[i] = -1;
            }
          }
          if (masked > 0) break;
        }
        Tensor logits = model.head_logits(model.embeddings(TokenString(noisy, mask_id)));
        Tensor loss = cross_entropy_rows(logits, targets);
        batch_loss = count == 0 ? loss : add(batch_loss, loss);
        ++count;
      }
      batch_loss = scale(batch_loss, 1.0 / count);
      for (auto& [name, t] : params) t.zero_grad();
      batch_loss.backward();
      opt.step(params, cfg.lr);
      curve.push_back({step, batch_loss.scalar()});
      ++step;
    }
  }

  model.set_trainable(false);
  model.invalidate_fingerprint();
  return curve;
}

}  // namespace adjust
