#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "xformparser/autodiff.hpp"
#include "xformparser/corpus.hpp"

namespace xfp {

// Warm-up soft-label schedule: hard label embeddings until ep_start, then a
// linear blend toward prediction-derived soft embeddings over ep_warm epochs.
struct SoftLabelSchedule {
  int64_t ep_start = 30;
  int64_t ep_warm = 10;
  bool enabled = true;

  void check() const {
    if (ep_start < 0 || ep_warm < 1)
      throw Error(ErrKind::Contract, "soft-label schedule: ep_start >= 0 and ep_warm >= 1 required");
  }
};

// alpha = clamp(min(1, (ep - ep_start) / ep_warm), 0, 1); beta = 1 - alpha.
double alpha(int64_t ep, const SoftLabelSchedule& s);

// LE = LE_hl when ep <= ep_start or the schedule is disabled (bitwise),
// else alpha*LE_sl + (1-alpha)*LE_hl.
ad::Array blend_label_embedding(const ad::Array& le_hl, const ad::Array& le_sl, int64_t ep,
                                const SoftLabelSchedule& s);

// Soft label embedding of one cell: softmax(logits)·LE_weight / N.
// divide_by_n mirrors the printed formula; switching it off is an experiment
// knob, not the default.
ad::Array soft_label_embedding(const ad::Array& label_logits, const ad::Array& le_weight,
                               bool divide_by_n = true);

// All ordered (head, tail) cell-id pairs with head-capable head label and
// tail-capable tail label; ascending head id, then tail id.
std::vector<std::pair<int64_t, int64_t>> candidate_pairs(const std::vector<int64_t>& cell_ids,
                                                         const std::vector<int>& label_indices,
                                                         const LabelSet& labels);

struct SerOutput {
  ad::Var token_logits;           // [tokens, num_bio]
  ad::Var cell_label_logits;      // [cells_with_tokens, num_labels]
  std::vector<int64_t> cell_ids;  // row alignment for cell_label_logits
  std::vector<int> pred_labels;   // argmax per row
  std::vector<double> confidence; // softmax max per row
  std::vector<int64_t> skipped_cell_ids;  // zero-token cells, excluded from P
  std::vector<std::vector<int64_t>> token_groups;  // token rows per cell row
};

struct LossBreakdown {
  ad::Var loss_ser;
  ad::Var loss_re;
  ad::Var total;
  double loss_ser_value = 0.0;
  double loss_re_value = 0.0;
  double total_value = 0.0;
  int64_t gold_pairs_outside_candidates = 0;
};

// Parameters and forward passes of the SER head, the RE decoder (Bi-LSTM +
// MLP_head/MLP_tail + biaffine) and the joint loss.
class Heads {
 public:
  Heads(const LabelSet& labels, int64_t d_model, int64_t d_label, int64_t d_biaff, bool use_decoder,
        double dropout, ad::ParameterStore& store, rng::Xoshiro256& init);

  // Token BIO logits plus per-cell aggregated label logits (mean of the
  // cell's token logits, B/I channels summed per class, O to outside).
  SerOutput ser_forward(ad::Tape& t, ad::Var hidden, const TokenizedDocument& td,
                        rng::Xoshiro256* dropout_rng) const;

  // Mean-pooled Dense_re states concatenated with label embeddings.
  // label_embeddings rows align with ser.cell_ids.
  ad::Var entity_vectors(ad::Tape& t, ad::Var hidden, const TokenizedDocument& td,
                         const SerOutput& ser, ad::Var label_embeddings) const;

  // Label embedding matrix for the cells of `ser`, blending soft and hard
  // rows per the schedule. hard_label_indices supplies LE_hl rows (gold at
  // training time, predictions at inference).
  ad::Var label_embedding_rows(ad::Tape& t, const SerOutput& ser,
                               const std::vector<int>& hard_label_indices, int64_t ep,
                               const SoftLabelSchedule& schedule, bool training) const;

  // Single-layer Bi-LSTM over entities in reading order; row i is
  // concat(forward_i, backward_i) of width d_model.
  ad::Var bilstm_decode(ad::Tape& t, ad::Var entities) const;

  // Biaffine pair scores over candidate pairs. `decoded` rows align with
  // ser.cell_ids. Returns [pairs, 2] logits ({no-relation, relation}).
  ad::Var pair_scores(ad::Tape& t, ad::Var decoded, const SerOutput& ser,
                      const std::vector<std::pair<int64_t, int64_t>>& pairs,
                      rng::Xoshiro256* dropout_rng) const;

  LossBreakdown joint_loss(ad::Tape& t, const SerOutput& ser, const TokenizedDocument& td,
                           ad::Var pair_logits,
                           const std::vector<std::pair<int64_t, int64_t>>& pairs,
                           const std::vector<Relation>& gold_relations,
                           double ser_scale = 0.0, double re_scale = 0.0) const;

  ad::Parameter& label_table() { return *le_weight_; }
  const ad::Parameter& label_table() const { return *le_weight_; }
  const LabelSet& labels() const { return labels_; }
  bool use_decoder() const { return use_decoder_; }
  bool faithful_eq10 = true;  // keep the /N division of the printed formula

 private:
  LabelSet labels_;
  int64_t d_model_;
  int64_t d_label_;
  int64_t d_biaff_;
  bool use_decoder_;
  double dropout_;

  ad::Parameter *dser_w_, *dser_b_, *mlp_ser_w_, *mlp_ser_b_;
  ad::Parameter *dre_w_, *dre_b_;
  ad::Parameter* le_weight_;
  ad::Parameter *lstm_f_wih_, *lstm_f_whh_, *lstm_f_b_;
  ad::Parameter *lstm_b_wih_, *lstm_b_whh_, *lstm_b_b_;
  ad::Parameter *head_w1_, *head_b1_, *head_w2_, *head_b2_;
  ad::Parameter *tail_w1_, *tail_b1_, *tail_w2_, *tail_b2_;
  ad::Parameter *biaff_u_, *biaff_w_, *biaff_b_;

  ad::Array bio_to_label_matrix() const;
  ad::Var lstm_direction(ad::Tape& t, ad::Var entities, bool backward) const;
};

}  // namespace xfp
