#include "irbindiff/lm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "irbindiff/error.hpp"
#include "irbindiff/normalize.hpp"
#include "irbindiff/rng.hpp"

namespace irbindiff::lm {

using namespace irbindiff::nn;
using norm::Vocabulary;

void LMConfig::validate() const {
  if (layers < 1 || hidden < 1 || heads < 1) throw ConfigError("lm layers/hidden/heads must be >= 1");
  if (hidden % heads != 0) {
    throw ConfigError("lm hidden " + std::to_string(hidden) + " not divisible by heads " +
                      std::to_string(heads));
  }
  if (vocab_size <= Vocabulary::kNumSpecials) throw ConfigError("lm vocab_size too small");
  if (max_position < 8) throw ConfigError("lm max_position must be >= 8");
  if (block_max_len < 3 || block_max_len > static_cast<std::size_t>(max_position)) {
    throw ConfigError("lm block_max_len must lie in [3, max_position]");
  }
  if (batch_size < 1 || epochs < 0 || lr <= 0) throw ConfigError("invalid lm training settings");
}

LMBatch make_batch(const std::vector<const PretrainExample*>& examples) {
  LMBatch b;
  b.batch = examples.size();
  for (const auto* ex : examples) b.seq = std::max(b.seq, ex->size());
  const std::size_t n = b.batch * b.seq;
  b.ids.assign(n, Vocabulary::kPad);
  b.segments.assign(n, 0);
  b.positions.assign(n, 0);
  b.valid.assign(n, 0);
  b.mlm_labels.assign(n, sampling::kIgnoreLabel);
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& ex = *examples[i];
    for (std::size_t t = 0; t < ex.size(); ++t) {
      const std::size_t k = i * b.seq + t;
      b.ids[k] = ex.input_ids[t];
      b.segments[k] = ex.segment_ids[t];
      b.positions[k] = ex.position_ids[t];
      b.valid[k] = 1;
      b.mlm_labels[k] = ex.mlm_labels[t];
    }
    for (std::size_t t = ex.size(); t < b.seq; ++t) {
      b.positions[i * b.seq + t] = static_cast<int>(t);
    }
    b.nsp_labels.push_back(ex.nsp_label);
  }
  return b;
}

LMBatch make_batch(const std::vector<PretrainExample>& examples) {
  std::vector<const PretrainExample*> ptrs;
  for (const auto& ex : examples) ptrs.push_back(&ex);
  return make_batch(ptrs);
}

LanguageModel::LanguageModel(const LMConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(derive_seed(seed, "lm-init"));
  const auto H = static_cast<std::size_t>(config_.hidden);
  const auto V = static_cast<std::size_t>(config_.vocab_size);
  token_emb_ = store_.add("embeddings.token", normal_tensor({V, H}, 0.02, rng));
  position_emb_ = store_.add("embeddings.position",
                             normal_tensor({static_cast<std::size_t>(config_.max_position), H},
                                           0.02, rng));
  segment_emb_ = store_.add("embeddings.segment", normal_tensor({2, H}, 0.02, rng));
  emb_ln_ = LayerNormParams::create(store_, "embeddings.ln", H);
  for (int l = 0; l < config_.layers; ++l) {
    const std::string p = "encoder." + std::to_string(l);
    Layer layer;
    layer.attn = AttentionParams::create(store_, p + ".attention", H, rng);
    layer.ln1 = LayerNormParams::create(store_, p + ".ln1", H);
    layer.ffn_in = Linear::create(store_, p + ".ffn_in", H, 4 * H, rng);
    layer.ffn_out = Linear::create(store_, p + ".ffn_out", 4 * H, H, rng);
    layer.ln2 = LayerNormParams::create(store_, p + ".ln2", H);
    layers_.push_back(layer);
  }
  mlm_transform_ = Linear::create(store_, "mlm.transform", H, H, rng);
  mlm_ln_ = LayerNormParams::create(store_, "mlm.ln", H);
  mlm_decoder_ = Linear::create(store_, "mlm.decoder", H, V, rng);
  pooler_ = Linear::create(store_, "nsp.pooler", H, H, rng);
  nsp_classifier_ = Linear::create(store_, "nsp.classifier", H, 2, rng);
}

Var LanguageModel::encode(const LMBatch& batch) const {
  for (int p : batch.positions) {
    if (p < 0 || p >= config_.max_position) {
      throw InputError("position " + std::to_string(p) + " exceeds max_position " +
                       std::to_string(config_.max_position));
    }
  }
  for (int id : batch.ids) {
    if (id < 0 || id >= config_.vocab_size) {
      throw InputError("token id " + std::to_string(id) + " outside vocabulary of size " +
                       std::to_string(config_.vocab_size));
    }
  }
  Var x = add(add(embedding_lookup(token_emb_, batch.ids),
                  embedding_lookup(position_emb_, batch.positions)),
              embedding_lookup(segment_emb_, batch.segments));
  x = emb_ln_(x);
  const auto heads = static_cast<std::size_t>(config_.heads);
  for (const auto& layer : layers_) {
    const Var a = multi_head_attention(x, layer.attn, heads, batch.batch, batch.seq, batch.valid);
    x = layer.ln1(add(x, a));
    const Var f = layer.ffn_out(gelu(layer.ffn_in(x)));
    x = layer.ln2(add(x, f));
  }
  return x;
}

LMOutput LanguageModel::forward(const LMBatch& batch, bool masked_only) const {
  const Var h = encode(batch);
  LMOutput out;
  Var mlm_in = h;
  if (masked_only) {
    std::vector<std::size_t> rows;
    for (std::size_t k = 0; k < batch.mlm_labels.size(); ++k) {
      if (batch.mlm_labels[k] != sampling::kIgnoreLabel) {
        rows.push_back(k);
        out.mlm_targets.push_back(batch.mlm_labels[k]);
      }
    }
    mlm_in = gather_rows(h, rows);
  } else {
    out.mlm_targets = batch.mlm_labels;
  }
  if (mlm_in.value().rows() > 0) {
    out.mlm_logits = mlm_decoder_(mlm_ln_(gelu(mlm_transform_(mlm_in))));
  } else {
    out.mlm_logits = constant(Tensor({0, static_cast<std::size_t>(config_.vocab_size)}));
  }
  if (!masked_only) {
    out.mlm_logits = reshape(out.mlm_logits, {batch.batch, batch.seq,
                                              static_cast<std::size_t>(config_.vocab_size)});
  }
  std::vector<std::size_t> cls(batch.batch);
  for (std::size_t b = 0; b < batch.batch; ++b) cls[b] = b * batch.seq;
  out.nsp_logits = nsp_classifier_(tanh(pooler_(gather_rows(h, cls))));
  out.nsp_targets = batch.nsp_labels;
  return out;
}

LMOutput lm_forward(const LanguageModel& model, const std::vector<PretrainExample>& batch) {
  return model.forward(make_batch(batch), false);
}

Var total_loss(const LMOutput& out) {
  const Var nsp = cross_entropy(out.nsp_logits, out.nsp_targets);
  if (out.mlm_logits.value().size() == 0) return nsp;
  return add(cross_entropy(out.mlm_logits, out.mlm_targets), nsp);
}

PretrainLog pretrain(LanguageModel& model, const std::vector<PretrainExample>& corpus,
                     std::uint64_t seed, const EpochCallback& on_epoch) {
  if (corpus.empty()) throw ConfigError("pretraining corpus is empty");
  const auto& cfg = model.config();
  Adam opt(model.params(), AdamConfig{.lr = cfg.lr});
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  PretrainLog log;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng(derive_seed(seed, "pretrain-shuffle", std::to_string(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0, mlm_total = 0, nsp_total = 0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<const PretrainExample*> examples;
      for (std::size_t i = start; i < end; ++i) examples.push_back(&corpus[order[i]]);
      const auto out = model.forward(make_batch(examples), true);
      const Var nsp = cross_entropy(out.nsp_logits, out.nsp_targets);
      Var loss = nsp;
      double mlm_value = 0;
      if (out.mlm_logits.value().size() != 0) {
        const Var mlm = cross_entropy(out.mlm_logits, out.mlm_targets);
        mlm_value = mlm.item();
        loss = add(mlm, nsp);
      }
      model.params().zero_grad();
      backward(loss);
      opt.step();
      total += loss.item();
      mlm_total += mlm_value;
      nsp_total += nsp.item();
      ++batches;
    }
    const double n = static_cast<double>(batches);
    log.epoch_loss.push_back(total / n);
    log.epoch_mlm.push_back(mlm_total / n);
    log.epoch_nsp.push_back(nsp_total / n);
    if (on_epoch) on_epoch(epoch, total / n);
  }
  return log;
}

double nsp_accuracy(const LanguageModel& model, const std::vector<PretrainExample>& examples) {
  if (examples.empty()) throw ConfigError("no examples to score");
  NoGradGuard guard;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < examples.size(); start += 64) {
    std::vector<const PretrainExample*> chunk;
    for (std::size_t i = start; i < std::min(examples.size(), start + 64); ++i) {
      chunk.push_back(&examples[i]);
    }
    const auto batch = make_batch(chunk);
    const auto out = model.forward(batch, true);
    const auto& logits = out.nsp_logits.value();
    for (std::size_t b = 0; b < chunk.size(); ++b) {
      const int pred = logits.at(b, 1) > logits.at(b, 0) ? 1 : 0;
      correct += pred == chunk[b]->nsp_label;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(examples.size());
}

TokenIds block_input(const TokenIds& block_tokens, std::size_t max_len) {
  TokenIds ids{Vocabulary::kCls};
  const std::size_t keep = std::min(block_tokens.size(), max_len - 2);
  ids.insert(ids.end(), block_tokens.begin(), block_tokens.begin() + static_cast<long>(keep));
  ids.push_back(Vocabulary::kSep);
  return ids;
}

std::vector<std::vector<double>> embed_blocks(const LanguageModel& model,
                                              const std::vector<TokenIds>& blocks,
                                              EmbedDiagnostics* diag, std::size_t batch_size) {
  const auto& cfg = model.config();
  const auto H = static_cast<std::size_t>(cfg.hidden);
  std::vector<std::vector<double>> out(blocks.size(), std::vector<double>(H, 0.0));
  std::vector<std::size_t> todo;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    if (blocks[i].empty()) {
      if (diag) ++diag->empty_blocks;
    } else {
      todo.push_back(i);
    }
  }
  NoGradGuard guard;
  for (std::size_t start = 0; start < todo.size(); start += batch_size) {
    std::vector<PretrainExample> chunk;
    for (std::size_t k = start; k < std::min(todo.size(), start + batch_size); ++k) {
      PretrainExample ex;
      ex.input_ids = block_input(blocks[todo[k]], cfg.block_max_len);
      ex.segment_ids.assign(ex.input_ids.size(), 0);
      ex.position_ids.resize(ex.input_ids.size());
      std::iota(ex.position_ids.begin(), ex.position_ids.end(), 0);
      ex.mlm_labels.assign(ex.input_ids.size(), sampling::kIgnoreLabel);
      chunk.push_back(std::move(ex));
    }
    const auto batch = make_batch(chunk);
    const auto hidden = model.encode(batch).value();
    for (std::size_t b = 0; b < chunk.size(); ++b) {
      auto& vec = out[todo[start + b]];
      if (cfg.pooling == Pooling::kCls) {
        const auto row = hidden.row(b * batch.seq);
        std::copy(row.begin(), row.end(), vec.begin());
      } else {
        const std::size_t n = chunk[b].size();
        for (std::size_t t = 0; t < n; ++t) {
          const auto row = hidden.row(b * batch.seq + t);
          for (std::size_t c = 0; c < H; ++c) vec[c] += row[c] / static_cast<double>(n);
        }
      }
    }
  }
  return out;
}

std::vector<double> embed_block(const LanguageModel& model, const TokenIds& block_tokens,
                                EmbedDiagnostics* diag) {
  return embed_blocks(model, {block_tokens}, diag, 1).front();
}

std::vector<double> hashed_block_embedding(const TokenIds& block_tokens, int dim,
                                           std::uint64_t seed) {
  std::vector<double> v(static_cast<std::size_t>(dim), 0.0);
  if (block_tokens.empty()) return v;
  // Sorted so the result depends on the bag of ids, not their order.
  TokenIds sorted = block_tokens;
  std::sort(sorted.begin(), sorted.end());
  for (int id : sorted) {
    Rng rng(derive_seed(seed, "hashed-embedding", std::to_string(id)));
    std::normal_distribution<double> dist(0.0, 1.0);
    for (auto& x : v) x += dist(rng);
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(block_tokens.size() * v.size()));
  for (auto& x : v) x *= scale;
  return v;
}

}  // namespace irbindiff::lm
