#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "xformparser/autodiff.hpp"
#include "xformparser/corpus.hpp"
#include "xformparser/encoder.hpp"
#include "xformparser/heads.hpp"

namespace xfp {

struct ModelConfig {
  EncoderConfig enc;
  int64_t d_label = 32;
  int64_t d_biaff = 64;
  bool use_decoder = true;
  bool faithful_eq10 = true;
  std::string label_set = "xfund";

  std::string to_json() const;
  static ModelConfig from_json(const std::string& json);
};

struct ForwardOptions {
  bool training = false;
  bool compute_loss = false;
  int64_t epoch = 1;
  SoftLabelSchedule schedule;
  bool gold_candidates = false;  // evaluation-only: enumerate pairs from gold labels
  rng::Xoshiro256* dropout_rng = nullptr;
  double ser_loss_scale = 0.0;  // 0 -> per-document mean
  double re_loss_scale = 0.0;
  const PrecomputedStates* precomputed = nullptr;
  VisualProvider visual_provider;  // unset -> box-derived statistics
};

struct DocForward {
  SerOutput ser;
  std::vector<std::pair<int64_t, int64_t>> pairs;  // candidate (head, tail) cell ids
  ad::Var pair_logits;
  std::vector<double> pair_rel_prob;  // P(relation) per candidate
  bool has_loss = false;
  LossBreakdown loss;
  int64_t n_tokens = 0;
  int64_t n_pairs = 0;
};

// Encoder plus joint heads over one parameter store; construction order fixes
// both the initialization stream and the checkpoint payload layout.
class JointModel {
 public:
  JointModel(const ModelConfig& cfg, const LabelSet& labels, Vocab vocab, uint64_t init_seed);

  DocForward forward(ad::Tape& t, const Document& doc, const TokenizedDocument& td,
                     const ForwardOptions& opts) const;

  // Candidate-pair count under gold labels, used for batch loss scaling.
  int64_t count_training_pairs(const Document& doc, const TokenizedDocument& td) const;

  void quantize_parameters();  // clamp all parameters to float32 precision

  ad::ParameterStore& params() { return store_; }
  const ad::ParameterStore& params() const { return store_; }
  const ModelConfig& config() const { return cfg_; }
  const LabelSet& labels() const { return labels_; }
  const Vocab& vocab() const { return vocab_; }
  ToyEncoder& encoder() { return *encoder_; }
  const ToyEncoder& encoder() const { return *encoder_; }
  Heads& heads() { return *heads_; }
  const Heads& heads() const { return *heads_; }

 private:
  ModelConfig cfg_;
  LabelSet labels_;
  Vocab vocab_;
  ad::ParameterStore store_;
  std::unique_ptr<ToyEncoder> encoder_;
  std::unique_ptr<Heads> heads_;
};

}  // namespace xfp
