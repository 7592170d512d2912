#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "adjust/prob.hpp"
#include "adjust/tensor.hpp"
#include "adjust/vocab.hpp"

namespace adjust {

// A denoiser exposes, for a partially masked string, the conditional
// distribution of each requested masked position given the unmasked
// evidence. The mask token itself is never generable: rows put zero mass
// on it.
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual const Vocab& vocab() const = 0;
  // Raw rows (temperature 1, no truncation) at the given positions, which
  // must all be masked in x.
  virtual std::vector<ProbRow> prob_rows(const TokenString& x,
                                         const std::vector<int>& positions) const = 0;
  // Transformer blocks per forward pass; used by the layer-pass cost model.
  virtual int block_count() const { return 1; }
};

// Per-position rows over M(x) after temperature scaling and nucleus
// truncation, keyed in masked_positions() order. Errors when nothing is
// masked.
std::vector<ProbRow> marginals(const Denoiser& model, const TokenString& x,
                               double temperature, double top_p);

// ---- tabular denoiser -----------------------------------------------------

// Exact conditionals of an explicit distribution over fully unmasked
// strings. Off-support evidence falls back to
// (1 - lambda) * unconditional marginal + lambda * uniform over non-mask
// tokens.
class TabularDenoiser : public Denoiser {
 public:
  TabularDenoiser(Vocab vocab, std::vector<TokenString> support, std::vector<double> weights,
                  double lambda = 0.0);

  const Vocab& vocab() const override { return vocab_; }
  std::vector<ProbRow> prob_rows(const TokenString& x,
                                 const std::vector<int>& positions) const override;

  ProbRow conditional(const TokenString& x, int position) const;
  const std::vector<TokenString>& support() const { return support_; }
  const std::vector<double>& weights() const { return weights_; }
  int length() const { return support_[0].length(); }

 private:
  Vocab vocab_;
  std::vector<TokenString> support_;
  std::vector<double> weights_;
  double lambda_;
  std::vector<ProbRow> uncond_;  // per-position marginals of the support
};

// The two-sentence world used throughout the tests: equal mass on
// "the cat sat on the mat" and "the dog ran in the yard".
TabularDenoiser two_sentence_world();

// ---- neural denoiser ------------------------------------------------------

struct BlockParams {
  Tensor ln1_gain, ln1_bias;
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor ln2_gain, ln2_bias;
  Tensor w_up, b_up, w_down, b_down;

  void collect(const std::string& prefix,
               std::vector<std::pair<std::string, Tensor>>& out) const;
  int64_t param_count() const;
};

// One pre-norm bidirectional block: x + attn(ln1(x)) followed by
// x + mlp(ln2(x)). Linear weights are stored [out, in]; y = x W^T + b.
Tensor block_forward(const BlockParams& p, const Tensor& x, int n_heads);

struct NeuralDims {
  int d = 64;
  int blocks = 4;
  int heads = 4;
  int l_max = 16;
};

// The frozen base model (f, W): token + learned positional embeddings, B
// bidirectional pre-norm blocks, a final layer norm and a linear head.
// There is no time input; the noise level is implicit in the mask count.
class NeuralDenoiser : public Denoiser {
 public:
  NeuralDenoiser(Vocab vocab, NeuralDims dims, RngStream& rng);

  const Vocab& vocab() const override { return vocab_; }
  int block_count() const override { return dims_.blocks; }
  const NeuralDims& dims() const { return dims_; }

  // f(x): per-position output embeddings, shape [L, d].
  Tensor embeddings(const TokenString& x) const;
  // W h: logits over the vocabulary, shape [L, |V|].
  Tensor head_logits(const Tensor& h) const;

  std::vector<ProbRow> prob_rows(const TokenString& x,
                                 const std::vector<int>& positions) const override;

  // Rows at the given positions from already-computed embeddings; used by
  // the samplers so one forward serves a whole macro-step.
  std::vector<ProbRow> rows_from_embeddings(const Tensor& h,
                                            const std::vector<int>& positions) const;

  std::vector<std::pair<std::string, Tensor>> named_params() const;
  void set_trainable(bool trainable);
  int64_t param_count() const;
  int64_t single_block_param_count() const { return blocks_[0].param_count(); }

  // Checksum over the canonical float32 serialization of all parameters;
  // recomputed lazily after training or loading.
  uint64_t fingerprint() const;
  void invalidate_fingerprint() { fingerprint_valid_ = false; }

  Tensor token_embedding;
  Tensor positional_embedding;
  Tensor final_gain, final_bias;
  Tensor head;  // [|V|, d]

  const std::vector<BlockParams>& blocks() const { return blocks_; }
  std::vector<BlockParams>& mutable_blocks() { return blocks_; }

 private:
  Vocab vocab_;
  NeuralDims dims_;
  std::vector<BlockParams> blocks_;
  mutable uint64_t fingerprint_ = 0;
  mutable bool fingerprint_valid_ = false;
};

// FNV-1a over the canonical little-endian float32 serialization of the
// given parameters, in order.
uint64_t params_fingerprint(const std::vector<std::pair<std::string, Tensor>>& params);

// Softmax over non-mask entries of one logit row; the mask slot gets zero.
ProbRow row_softmax_no_mask(const double* logits, int vocab_size, int mask_id);

// ---- base-model training --------------------------------------------------

struct BaseTrainConfig {
  int epochs = 4;
  double lr = 1e-3;
  int batch_size = 32;
};

struct LossCurvePoint {
  int step;
  double loss;
};

// Masked-denoising training: per sample, a mask rate t ~ U(0,1), each
// token masked independently with probability t (patterns with zero masks
// are redrawn), cross-entropy on the true tokens at masked positions.
std::vector<LossCurvePoint> train_base(NeuralDenoiser& model,
                                       const std::vector<TokenString>& corpus,
                                       const BaseTrainConfig& cfg, RngStream rng);

}  // namespace adjust
