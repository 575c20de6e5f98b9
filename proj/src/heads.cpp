#include "xformparser/heads.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

namespace xfp {

using ad::Parameter;
using ad::Tape;
using ad::Var;

double alpha(int64_t ep, const SoftLabelSchedule& s) {
  s.check();
  double a = std::min(1.0, static_cast<double>(ep - s.ep_start) / static_cast<double>(s.ep_warm));
  return std::clamp(a, 0.0, 1.0);
}

ad::Array blend_label_embedding(const ad::Array& le_hl, const ad::Array& le_sl, int64_t ep,
                                const SoftLabelSchedule& s) {
  if (!le_hl.same_shape(le_sl))
    throw Error(ErrKind::Contract, "blend_label_embedding: shape mismatch " + le_hl.shape_str() +
                                       " vs " + le_sl.shape_str());
  if (!s.enabled || ep <= s.ep_start) return le_hl;
  double a = alpha(ep, s);
  double b = 1.0 - a;
  ad::Array out = le_hl;
  for (int64_t i = 0; i < out.numel(); ++i) out.at(i) = a * le_sl.at(i) + b * le_hl.at(i);
  return out;
}

ad::Array soft_label_embedding(const ad::Array& label_logits, const ad::Array& le_weight,
                               bool divide_by_n) {
  int64_t n = label_logits.numel();
  if (le_weight.shape.size() != 2 || le_weight.rows() != n)
    throw Error(ErrKind::Contract, "soft_label_embedding: logits length " + std::to_string(n) +
                                       " vs table " + le_weight.shape_str());
  int64_t d = le_weight.cols();
  double mx = label_logits.at(0);
  for (int64_t i = 1; i < n; ++i) mx = std::max(mx, label_logits.at(i));
  std::vector<double> p(static_cast<size_t>(n));
  double sum = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    p[static_cast<size_t>(i)] = std::exp(label_logits.at(i) - mx);
    sum += p[static_cast<size_t>(i)];
  }
  ad::Array out({d});
  double denom = divide_by_n ? static_cast<double>(n) : 1.0;
  for (int64_t i = 0; i < n; ++i) {
    double w = p[static_cast<size_t>(i)] / sum / denom;
    for (int64_t j = 0; j < d; ++j) out.at(j) += w * le_weight.at(i, j);
  }
  return out;
}

std::vector<std::pair<int64_t, int64_t>> candidate_pairs(const std::vector<int64_t>& cell_ids,
                                                         const std::vector<int>& label_indices,
                                                         const LabelSet& labels) {
  if (cell_ids.size() != label_indices.size())
    throw Error(ErrKind::Contract, "candidate_pairs: ids and labels must align");
  std::vector<std::pair<int64_t, int64_t>> out;
  for (size_t i = 0; i < cell_ids.size(); ++i) {
    if (!labels.head_capable(labels.label_name(label_indices[i]))) continue;
    for (size_t j = 0; j < cell_ids.size(); ++j) {
      if (i == j) continue;
      if (!labels.tail_capable(labels.label_name(label_indices[j]))) continue;
      out.push_back({cell_ids[i], cell_ids[j]});
    }
  }
  return out;
}

Heads::Heads(const LabelSet& labels, int64_t d_model, int64_t d_label, int64_t d_biaff,
             bool use_decoder, double dropout, ad::ParameterStore& store, rng::Xoshiro256& init)
    : labels_(labels),
      d_model_(d_model),
      d_label_(d_label),
      d_biaff_(d_biaff),
      use_decoder_(use_decoder),
      dropout_(dropout) {
  if (d_model < 2 || d_model % 2 != 0)
    throw Error(ErrKind::Contract, "heads: d_model must be even for the Bi-LSTM split");
  auto weight = [&](const std::string& name, int64_t out, int64_t in) {
    Parameter& p = store.create(name, {out, in});
    ad::glorot_init(p.value, in, out, init);
    return &p;
  };
  auto zeros = [&](const std::string& name, std::vector<int64_t> shape) {
    return &store.create(name, std::move(shape));
  };

  int num_bio = labels_.num_bio_tags();
  dser_w_ = weight("ser.dense.w", d_model, d_model);
  dser_b_ = zeros("ser.dense.b", {d_model});
  mlp_ser_w_ = weight("ser.mlp.w", num_bio, d_model);
  mlp_ser_b_ = zeros("ser.mlp.b", {num_bio});
  dre_w_ = weight("re.dense.w", d_model, d_model);
  dre_b_ = zeros("re.dense.b", {d_model});
  le_weight_ = &store.create("re.le_weight", {labels_.num_labels(), d_label});
  ad::glorot_init(le_weight_->value, labels_.num_labels(), d_label, init);

  int64_t ent_dim = d_model + d_label;
  if (use_decoder_) {
    int64_t h = d_model / 2;
    auto lstm = [&](const std::string& pre, Parameter** wih, Parameter** whh, Parameter** b) {
      *wih = weight(pre + ".w_ih", 4 * h, ent_dim);
      *whh = weight(pre + ".w_hh", 4 * h, h);
      *b = zeros(pre + ".bias", {4 * h});
      for (int64_t i = h; i < 2 * h; ++i) (*b)->value.at(i) = 1.0;  // forget gate bias
    };
    lstm("re.lstm.fwd", &lstm_f_wih_, &lstm_f_whh_, &lstm_f_b_);
    lstm("re.lstm.bwd", &lstm_b_wih_, &lstm_b_whh_, &lstm_b_b_);
  } else {
    lstm_f_wih_ = lstm_f_whh_ = lstm_f_b_ = nullptr;
    lstm_b_wih_ = lstm_b_whh_ = lstm_b_b_ = nullptr;
  }

  int64_t mlp_in = use_decoder_ ? d_model : ent_dim;
  head_w1_ = weight("re.mlp_head.w1", d_biaff, mlp_in);
  head_b1_ = zeros("re.mlp_head.b1", {d_biaff});
  head_w2_ = weight("re.mlp_head.w2", d_biaff, d_biaff);
  head_b2_ = zeros("re.mlp_head.b2", {d_biaff});
  tail_w1_ = weight("re.mlp_tail.w1", d_biaff, mlp_in);
  tail_b1_ = zeros("re.mlp_tail.b1", {d_biaff});
  tail_w2_ = weight("re.mlp_tail.w2", d_biaff, d_biaff);
  tail_b2_ = zeros("re.mlp_tail.b2", {d_biaff});

  biaff_u_ = &store.create("re.biaffine.u", {2, d_biaff, d_biaff});
  ad::glorot_init(biaff_u_->value, d_biaff, d_biaff, init);
  biaff_w_ = weight("re.biaffine.w", 2, 2 * d_biaff);
  biaff_b_ = zeros("re.biaffine.b", {2});
}

ad::Array Heads::bio_to_label_matrix() const {
  ad::Array m({labels_.num_bio_tags(), labels_.num_labels()});
  m.at(0, labels_.outside_index()) = 1.0;
  for (int k = 0; k < labels_.num_labels(); ++k) {
    if (k == labels_.outside_index()) continue;
    m.at(labels_.bio_tag(k, true), k) = 1.0;
    m.at(labels_.bio_tag(k, false), k) = 1.0;
  }
  return m;
}

SerOutput Heads::ser_forward(Tape& t, Var hidden, const TokenizedDocument& td,
                             rng::Xoshiro256* dropout_rng) const {
  SerOutput out;
  int64_t n = t.val(hidden).rows();
  if (n != td.num_tokens())
    throw Error(ErrKind::Contract, "ser_forward: hidden rows " + std::to_string(n) +
                                       " vs tokens " + std::to_string(td.num_tokens()));
  Var h_ser = ad::tanh_(t, ad::affine(t, hidden, t.leaf(*dser_w_), t.leaf(*dser_b_)));
  out.token_logits =
      ad::affine(t, ad::dropout(t, h_ser, dropout_, dropout_rng), t.leaf(*mlp_ser_w_), t.leaf(*mlp_ser_b_));

  // Token rows grouped per cell; zero-token cells cannot be classified.
  std::map<int64_t, std::vector<int64_t>> rows_by_cell;
  for (int64_t i = 0; i < td.num_tokens(); ++i) rows_by_cell[td.token_cell[static_cast<size_t>(i)]].push_back(i);
  for (int64_t cid : td.kept_cell_ids) {
    auto it = rows_by_cell.find(cid);
    if (it == rows_by_cell.end()) {
      out.skipped_cell_ids.push_back(cid);
    } else {
      out.cell_ids.push_back(cid);
      out.token_groups.push_back(it->second);
    }
  }

  if (!out.cell_ids.empty()) {
    Var bio_mean = ad::group_mean_rows(t, out.token_logits, out.token_groups);
    out.cell_label_logits = ad::matmul(t, bio_mean, t.input(bio_to_label_matrix()));
    const ad::Array& logits = t.val(out.cell_label_logits);
    for (int64_t r = 0; r < logits.rows(); ++r) {
      int best = 0;
      for (int c = 1; c < labels_.num_labels(); ++c)
        if (logits.at(r, c) > logits.at(r, best)) best = c;
      out.pred_labels.push_back(best);
      double mx = logits.at(r, best), sum = 0.0;
      for (int c = 0; c < labels_.num_labels(); ++c) sum += std::exp(logits.at(r, c) - mx);
      out.confidence.push_back(1.0 / sum);
    }
  }
  return out;
}

Var Heads::label_embedding_rows(Tape& t, const SerOutput& ser,
                                const std::vector<int>& hard_label_indices, int64_t ep,
                                const SoftLabelSchedule& schedule, bool training) const {
  if (hard_label_indices.size() != ser.cell_ids.size())
    throw Error(ErrKind::Contract, "label_embedding_rows: hard labels must align with cells");
  std::vector<int64_t> idx(hard_label_indices.begin(), hard_label_indices.end());
  Var hl = ad::select_rows(t, t.leaf(*le_weight_), idx);
  if (!training || !schedule.enabled || ep <= schedule.ep_start) return hl;
  double a = alpha(ep, schedule);
  Var probs = ad::softmax(t, ser.cell_label_logits);
  Var sl = ad::matmul(t, probs, t.leaf(*le_weight_));
  if (faithful_eq10) sl = ad::scale(t, sl, 1.0 / static_cast<double>(labels_.num_labels()));
  return ad::add(t, ad::scale(t, sl, a), ad::scale(t, hl, 1.0 - a));
}

Var Heads::entity_vectors(Tape& t, Var hidden, const TokenizedDocument& td, const SerOutput& ser,
                          Var label_embeddings) const {
  (void)td;
  Var h_re = ad::tanh_(t, ad::affine(t, hidden, t.leaf(*dre_w_), t.leaf(*dre_b_)));
  Var pooled = ad::group_mean_rows(t, h_re, ser.token_groups);
  std::vector<Var> parts = {pooled, label_embeddings};
  return ad::concat_cols(t, parts);
}

Var Heads::lstm_direction(Tape& t, Var entities, bool backward) const {
  const Parameter* wih = backward ? lstm_b_wih_ : lstm_f_wih_;
  const Parameter* whh = backward ? lstm_b_whh_ : lstm_f_whh_;
  const Parameter* bias = backward ? lstm_b_b_ : lstm_f_b_;
  int64_t n = t.val(entities).rows();
  int64_t hdim = d_model_ / 2;
  Var w_ih = t.leaf(const_cast<Parameter&>(*wih));
  Var w_hh = t.leaf(const_cast<Parameter&>(*whh));
  Var b = t.leaf(const_cast<Parameter&>(*bias));
  Var h = t.input(ad::Array({1, hdim}));
  Var c = t.input(ad::Array({1, hdim}));
  std::vector<Var> outs(static_cast<size_t>(n));
  for (int64_t k = 0; k < n; ++k) {
    int64_t i = backward ? n - 1 - k : k;
    Var x = ad::select_rows(t, entities, {i});
    auto [h2, c2] = ad::lstm_cell(t, x, h, c, w_ih, w_hh, b);
    h = h2;
    c = c2;
    outs[static_cast<size_t>(i)] = h2;
  }
  std::vector<Var> rows;
  rows.reserve(static_cast<size_t>(n));
  for (auto v : outs) rows.push_back(ad::reshape(t, v, {hdim}));
  return ad::stack_rows(t, rows);
}

Var Heads::bilstm_decode(Tape& t, Var entities) const {
  if (!use_decoder_)
    throw Error(ErrKind::Contract, "bilstm_decode: decoder disabled by configuration");
  int64_t n = t.val(entities).rows();
  if (n == 0) return t.input(ad::Array({0, d_model_}));
  Var fwd = lstm_direction(t, entities, false);
  Var bwd = lstm_direction(t, entities, true);
  std::vector<Var> parts = {fwd, bwd};
  return ad::concat_cols(t, parts);
}

Var Heads::pair_scores(Tape& t, Var decoded, const SerOutput& ser,
                       const std::vector<std::pair<int64_t, int64_t>>& pairs,
                       rng::Xoshiro256* dropout_rng) const {
  std::map<int64_t, int64_t> row_of;
  for (size_t i = 0; i < ser.cell_ids.size(); ++i) row_of[ser.cell_ids[i]] = static_cast<int64_t>(i);

  std::vector<int64_t> head_rows, tail_rows;
  std::map<int64_t, int64_t> head_pos, tail_pos;
  for (const auto& [h, tl] : pairs) {
    auto hit = row_of.find(h);
    auto tit = row_of.find(tl);
    if (hit == row_of.end() || tit == row_of.end())
      throw Error(ErrKind::Contract, "pair_scores: pair references a cell without tokens");
    if (!head_pos.count(h)) {
      head_pos[h] = static_cast<int64_t>(head_rows.size());
      head_rows.push_back(hit->second);
    }
    if (!tail_pos.count(tl)) {
      tail_pos[tl] = static_cast<int64_t>(tail_rows.size());
      tail_rows.push_back(tit->second);
    }
  }
  Var h_in = ad::dropout(t, ad::select_rows(t, decoded, head_rows), dropout_, dropout_rng);
  Var t_in = ad::dropout(t, ad::select_rows(t, decoded, tail_rows), dropout_, dropout_rng);
  Var h_mat = ad::affine(t, ad::relu_(t, ad::affine(t, h_in, t.leaf(*head_w1_), t.leaf(*head_b1_))),
                         t.leaf(*head_w2_), t.leaf(*head_b2_));
  Var t_mat = ad::affine(t, ad::relu_(t, ad::affine(t, t_in, t.leaf(*tail_w1_), t.leaf(*tail_b1_))),
                         t.leaf(*tail_w2_), t.leaf(*tail_b2_));
  std::vector<std::pair<int64_t, int64_t>> mapped;
  mapped.reserve(pairs.size());
  for (const auto& [h, tl] : pairs) mapped.push_back({head_pos[h], tail_pos[tl]});
  return ad::biaffine_pair_logits(t, h_mat, t_mat, t.leaf(*biaff_u_), t.leaf(*biaff_w_),
                                  t.leaf(*biaff_b_), mapped);
}

LossBreakdown Heads::joint_loss(Tape& t, const SerOutput& ser, const TokenizedDocument& td,
                                Var pair_logits, const std::vector<std::pair<int64_t, int64_t>>& pairs,
                                const std::vector<Relation>& gold_relations, double ser_scale,
                                double re_scale) const {
  if (td.num_tokens() == 0)
    throw Error(ErrKind::Contract, "joint_loss: document has no tokens");
  LossBreakdown out;
  if (ser_scale > 0.0) {
    out.loss_ser = ad::scale(t, ad::cross_entropy(t, ser.token_logits, td.bio_tags, ad::Reduction::Sum),
                             ser_scale);
  } else {
    out.loss_ser = ad::cross_entropy(t, ser.token_logits, td.bio_tags, ad::Reduction::Mean);
  }

  std::set<std::pair<int64_t, int64_t>> gold;
  for (const auto& r : gold_relations) gold.insert({r.head_id, r.tail_id});
  std::vector<int64_t> pair_targets;
  pair_targets.reserve(pairs.size());
  std::set<std::pair<int64_t, int64_t>> covered;
  for (const auto& p : pairs) {
    bool hit = gold.count(p) > 0;
    pair_targets.push_back(hit ? 1 : 0);
    if (hit) covered.insert(p);
  }
  out.gold_pairs_outside_candidates = static_cast<int64_t>(gold.size() - covered.size());

  if (!pairs.empty()) {
    if (re_scale > 0.0) {
      out.loss_re = ad::scale(t, ad::cross_entropy(t, pair_logits, pair_targets, ad::Reduction::Sum),
                              re_scale);
    } else {
      out.loss_re = ad::cross_entropy(t, pair_logits, pair_targets, ad::Reduction::Mean);
    }
  } else {
    out.loss_re = t.input(ad::Array::scalar(0.0));  // no candidates: loss_re = 0
  }
  out.total = ad::add(t, out.loss_ser, out.loss_re);
  out.loss_ser_value = t.val(out.loss_ser).data[0];
  out.loss_re_value = t.val(out.loss_re).data[0];
  out.total_value = t.val(out.total).data[0];
  return out;
}

}  // namespace xfp
