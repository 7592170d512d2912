#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "adjust/denoiser.hpp"

namespace adjust {

// The trainable joint sampler g. Per position it embeds the current token
// with the frozen base embeddings, concatenates that with the incoming
// embedding h, down-projects to d and runs one transformer block of the
// base architecture. Logits reuse the frozen base head. Only the
// down-projection and the block train.
class AdjustNet {
 public:
  enum class Init {
    kIdentity,  // h passes through: output == h until training moves it
    kRandom,    // fully random block, for sensitivity tests
  };

  AdjustNet(const NeuralDenoiser& base, RngStream& rng, Init init = Init::kIdentity);

  // g(h, x): [L, d] -> [L, d]. x may contain masks.
  Tensor forward(const Tensor& h, const TokenString& x) const;

  // Trainable parameters only; the frozen references never appear here.
  std::vector<std::pair<std::string, Tensor>> named_params() const;
  void set_trainable(bool trainable);
  int64_t trainable_param_count() const;

  uint64_t base_fingerprint() const { return base_fingerprint_; }
  void set_base_fingerprint(uint64_t f) { base_fingerprint_ = f; }
  uint64_t fingerprint() const { return params_fingerprint(named_params()); }

  int dim() const { return d_; }
  int heads() const { return heads_; }

  Tensor down_projection;  // [d, 2d]; columns 0..d-1 act on the token half
  BlockParams block;

  // Frozen views of the base model.
  Tensor frozen_token_embedding;
  Tensor frozen_positional_embedding;
  Tensor frozen_head;

 private:
  int d_;
  int heads_;
  uint64_t base_fingerprint_;
};

// State of the within-macro-step embedding recursion: the most current
// embeddings h_k and string, with k counting tokens committed this
// macro-step.
struct RecursionState {
  Tensor h;
  TokenString x;
  int k = 1;
};

// Commits one token and refreshes the embeddings through g.
RecursionState advance(const RecursionState& state, const AdjustNet& g,
                       std::pair<int, int> newly_unmasked);

// Row provider used by approximate joint sampling between base forwards.
// Implementations carry per-macro-step state and must be cloneable so the
// enumeration oracle can snapshot branches.
class JointBackend {
 public:
  virtual ~JointBackend() = default;
  // Macro-step start. base_embeddings is f(x) when the base is neural and
  // an undefined tensor otherwise.
  virtual void begin(const Tensor& base_embeddings, const TokenString& x) = 0;
  // One sampler forward on the just-updated string.
  virtual void advance_state(const TokenString& x) = 0;
  // Raw rows (temperature 1, no truncation, no mask mass) at the given
  // masked positions of x.
  virtual std::vector<ProbRow> rows(const TokenString& x,
                                    const std::vector<int>& positions) const = 0;
  virtual std::unique_ptr<JointBackend> clone() const = 0;
  virtual bool needs_base_embeddings() const { return false; }
  // Throws when the backend was trained against a different base model.
  virtual void check_compatible(const Denoiser& base) const {}
};

// g with the frozen base head: rows = softmax(W h_k) at masked positions.
class AdjustNetBackend : public JointBackend {
 public:
  explicit AdjustNetBackend(const AdjustNet& g) : g_(&g) {}
  void begin(const Tensor& base_embeddings, const TokenString& x) override;
  void advance_state(const TokenString& x) override;
  std::vector<ProbRow> rows(const TokenString& x,
                            const std::vector<int>& positions) const override;
  std::unique_ptr<JointBackend> clone() const override {
    return std::make_unique<AdjustNetBackend>(*this);
  }
  bool needs_base_embeddings() const override { return true; }
  void check_compatible(const Denoiser& base) const override;

 private:
  const AdjustNet* g_;
  Tensor h_;
  int vocab_size_ = 0;
  int mask_id_ = 0;
};

// Test oracle standing in for a perfectly trained g: rows equal the
// tabular model's exact conditionals of the current string, isolating the
// sampling control flow from learning quality.
class OracleBackend : public JointBackend {
 public:
  explicit OracleBackend(const TabularDenoiser& tab) : tab_(&tab) {}
  void begin(const Tensor&, const TokenString&) override {}
  void advance_state(const TokenString&) override {}
  std::vector<ProbRow> rows(const TokenString& x,
                            const std::vector<int>& positions) const override {
    return tab_->prob_rows(x, positions);
  }
  std::unique_ptr<JointBackend> clone() const override {
    return std::make_unique<OracleBackend>(*this);
  }

 private:
  const TabularDenoiser* tab_;
};

// Keeps h unchanged across advances; with it, approximate joint sampling
// degenerates to parallel sampling whenever the position order coincides.
class IdentityBackend : public JointBackend {
 public:
  explicit IdentityBackend(const NeuralDenoiser& base) : base_(&base) {}
  void begin(const Tensor& base_embeddings, const TokenString&) override { h_ = base_embeddings; }
  void advance_state(const TokenString&) override {}
  std::vector<ProbRow> rows(const TokenString& x,
                            const std::vector<int>& positions) const override {
    return base_->rows_from_embeddings(h_, positions);
  }
  std::unique_ptr<JointBackend> clone() const override {
    return std::make_unique<IdentityBackend>(*this);
  }
  bool needs_base_embeddings() const override { return true; }

 private:
  const NeuralDenoiser* base_;
  Tensor h_;
};

}  // namespace adjust
