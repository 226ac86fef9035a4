#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "irbindiff/autograd.hpp"
#include "irbindiff/layers.hpp"
#include "irbindiff/params.hpp"
#include "irbindiff/sampling.hpp"

namespace irbindiff::lm {

using nn::Var;
using sampling::PretrainExample;
using sampling::TokenIds;

enum class Pooling { kCls, kMean };

struct LMConfig {
  int layers = 4;
  int hidden = 128;
  int heads = 8;
  int max_position = 128;
  int vocab_size = 0;
  double lr = 3e-5;
  std::size_t batch_size = 256;
  int epochs = 3;
  std::size_t block_max_len = 128;
  Pooling pooling = Pooling::kCls;

  void validate() const;
};

// Input batch, right-padded to the longest example.
struct LMBatch {
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::vector<int> ids, segments, positions;
  std::vector<std::uint8_t> valid;
  std::vector<int> mlm_labels;  // per padded position, -1 where unlabeled
  std::vector<int> nsp_labels;
};

LMBatch make_batch(const std::vector<const PretrainExample*>& examples);
LMBatch make_batch(const std::vector<PretrainExample>& examples);

struct LMOutput {
  Var mlm_logits;  // (batch, seq, vocab), or (|M|, vocab) when masked_only
  Var nsp_logits;  // (batch, 2)
  std::vector<int> mlm_targets;  // aligned with the rows of mlm_logits
  std::vector<int> nsp_targets;
};

class LanguageModel {
 public:
  LanguageModel(const LMConfig& config, std::uint64_t seed);

  const LMConfig& config() const { return config_; }
  nn::ParameterStore& params() { return store_; }
  const nn::ParameterStore& params() const { return store_; }

  // Final hidden states, (batch * seq, hidden).
  Var encode(const LMBatch& batch) const;

  // `masked_only` evaluates the MLM head only at labelled positions; the
  // loss is the same, the cost much lower.
  LMOutput forward(const LMBatch& batch, bool masked_only = false) const;

 private:
  struct Layer {
    nn::AttentionParams attn;
    nn::LayerNormParams ln1;
    nn::Linear ffn_in, ffn_out;
    nn::LayerNormParams ln2;
  };

  LMConfig config_;
  nn::ParameterStore store_;
  Var token_emb_, position_emb_, segment_emb_;
  nn::LayerNormParams emb_ln_;
  std::vector<Layer> layers_;
  nn::Linear mlm_transform_;
  nn::LayerNormParams mlm_ln_;
  nn::Linear mlm_decoder_;
  nn::Linear pooler_;
  nn::Linear nsp_classifier_;
};

LMOutput lm_forward(const LanguageModel& model, const std::vector<PretrainExample>& batch);

// L_MLM (mean over labelled positions) + L_NSP (mean over the batch).
Var total_loss(const LMOutput& out);

struct PretrainLog {
  std::vector<double> epoch_loss;
  std::vector<double> epoch_mlm;
  std::vector<double> epoch_nsp;
};

using EpochCallback = std::function<void(int epoch, double loss)>;

PretrainLog pretrain(LanguageModel& model, const std::vector<PretrainExample>& corpus,
                     std::uint64_t seed, const EpochCallback& on_epoch = {});

// Fraction of examples whose NSP prediction matches the label.
double nsp_accuracy(const LanguageModel& model, const std::vector<PretrainExample>& examples);

// [CLS] t1 .. tn [SEP] with segment 0, truncated to block_max_len.
TokenIds block_input(const TokenIds& block_tokens, std::size_t max_len);

struct EmbedDiagnostics {
  std::size_t empty_blocks = 0;
};

// Final [CLS] state (or masked mean, per config). An empty block gives a
// zero vector and bumps the diagnostic counter.
std::vector<double> embed_block(const LanguageModel& model, const TokenIds& block_tokens,
                                EmbedDiagnostics* diag = nullptr);
std::vector<std::vector<double>> embed_blocks(const LanguageModel& model,
                                              const std::vector<TokenIds>& blocks,
                                              EmbedDiagnostics* diag = nullptr,
                                              std::size_t batch_size = 64);

// Stand-in block encoder without a language model: a fixed Gaussian
// random projection of the token-count vector, keyed by token id.
std::vector<double> hashed_block_embedding(const TokenIds& block_tokens, int dim,
                                           std::uint64_t seed = 0);

}  // namespace irbindiff::lm
