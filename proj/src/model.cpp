#include "xformparser/model.hpp"

#include <cmath>
#include <set>

#include "json.hpp"

namespace xfp {

using ad::Tape;
using ad::Var;
using ordered_json = nlohmann::ordered_json;

std::string ModelConfig::to_json() const {
  ordered_json j;
  j["label_set"] = label_set;
  j["d_label"] = d_label;
  j["d_biaff"] = d_biaff;
  j["use_decoder"] = use_decoder;
  j["faithful_eq10"] = faithful_eq10;
  ordered_json e;
  e["d_model"] = enc.d_model;
  e["layers"] = enc.layers;
  e["heads"] = enc.heads;
  e["ffn_mult"] = enc.ffn_mult;
  e["max_len"] = enc.max_len;
  e["coord_buckets"] = enc.coord_buckets;
  e["visual_dim"] = enc.visual_dim;
  e["dropout"] = enc.dropout;
  j["encoder"] = std::move(e);
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& json) {
  ordered_json j;
  try {
    j = ordered_json::parse(json);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrKind::Format, std::string("model config: ") + e.what());
  }
  ModelConfig c;
  c.label_set = j.at("label_set").get<std::string>();
  c.d_label = j.at("d_label").get<int64_t>();
  c.d_biaff = j.at("d_biaff").get<int64_t>();
  c.use_decoder = j.at("use_decoder").get<bool>();
  c.faithful_eq10 = j.at("faithful_eq10").get<bool>();
  const auto& e = j.at("encoder");
  c.enc.d_model = e.at("d_model").get<int64_t>();
  c.enc.layers = e.at("layers").get<int64_t>();
  c.enc.heads = e.at("heads").get<int64_t>();
  c.enc.ffn_mult = e.at("ffn_mult").get<int64_t>();
  c.enc.max_len = e.at("max_len").get<int64_t>();
  c.enc.coord_buckets = e.at("coord_buckets").get<int64_t>();
  c.enc.visual_dim = e.at("visual_dim").get<int64_t>();
  c.enc.dropout = e.at("dropout").get<double>();
  return c;
}

JointModel::JointModel(const ModelConfig& cfg, const LabelSet& labels, Vocab vocab,
                       uint64_t init_seed)
    : cfg_(cfg), labels_(labels), vocab_(std::move(vocab)) {
  rng::Xoshiro256 init(rng::derive(init_seed, 0x1217));
  encoder_ = std::make_unique<ToyEncoder>(cfg_.enc, vocab_.size(), store_, init);
  heads_ = std::make_unique<Heads>(labels_, cfg_.enc.d_model, cfg_.d_label, cfg_.d_biaff,
                                   cfg_.use_decoder, cfg_.enc.dropout, store_, init);
  heads_->faithful_eq10 = cfg_.faithful_eq10;
}

int64_t JointModel::count_training_pairs(const Document& doc, const TokenizedDocument& td) const {
  std::vector<int64_t> ids;
  std::vector<int> lab;
  std::set<int64_t> with_tokens(td.token_cell.begin(), td.token_cell.end());
  for (int64_t cid : td.kept_cell_ids) {
    if (!with_tokens.count(cid)) continue;
    const Cell* c = doc.cell_by_id(cid);
    int idx = labels_.index_of(c->label);
    if (idx < 0) throw Error(ErrKind::Schema, "unknown label '" + c->label + "'");
    ids.push_back(cid);
    lab.push_back(idx);
  }
  return static_cast<int64_t>(candidate_pairs(ids, lab, labels_).size());
}

DocForward JointModel::forward(Tape& t, const Document& doc, const TokenizedDocument& td,
                               const ForwardOptions& opts) const {
  DocForward out;
  out.n_tokens = td.num_tokens();
  if (out.n_tokens == 0) return out;

  Var hidden;
  if (opts.precomputed) {
    const ad::Array* st = opts.precomputed->find(doc.id);
    if (!st)
      throw Error(ErrKind::Format, "precomputed states: no entry for document " + doc.id);
    if (st->rows() != td.num_tokens() || st->cols() != cfg_.enc.d_model)
      throw Error(ErrKind::Format, "precomputed states: document " + doc.id + " has " +
                                       std::to_string(st->rows()) + "x" + std::to_string(st->cols()) +
                                       " states, expected " + std::to_string(td.num_tokens()) + "x" +
                                       std::to_string(cfg_.enc.d_model));
    hidden = t.input(*st);
  } else {
    ad::Array visual = opts.visual_provider ? opts.visual_provider(doc, td, cfg_.enc.visual_dim)
                                            : visual_features(doc, td, cfg_.enc.visual_dim);
    hidden = encoder_->encode(t, td, visual, opts.training ? opts.dropout_rng : nullptr);
  }

  out.ser = heads_->ser_forward(t, hidden, td, opts.training ? opts.dropout_rng : nullptr);

  // Label source: gold during training, SER predictions at inference
  // (gold_candidates restores gold labels for the RE-only diagnostic).
  std::vector<int> gold_idx;
  gold_idx.reserve(out.ser.cell_ids.size());
  for (int64_t cid : out.ser.cell_ids) {
    const Cell* c = doc.cell_by_id(cid);
    int idx = labels_.index_of(c->label);
    if (idx < 0) throw Error(ErrKind::Schema, "unknown label '" + c->label + "' on cell");
    gold_idx.push_back(idx);
  }
  bool use_gold = opts.training || opts.gold_candidates;
  const std::vector<int>& chosen = use_gold ? gold_idx : out.ser.pred_labels;

  if (!out.ser.cell_ids.empty()) {
    Var le = heads_->label_embedding_rows(t, out.ser, chosen, opts.epoch, opts.schedule,
                                          opts.training);
    Var ents = heads_->entity_vectors(t, hidden, td, out.ser, le);
    Var decoded = cfg_.use_decoder ? heads_->bilstm_decode(t, ents) : ents;
    out.pairs = candidate_pairs(out.ser.cell_ids, chosen, labels_);
    out.pair_logits =
        heads_->pair_scores(t, decoded, out.ser, out.pairs, opts.training ? opts.dropout_rng : nullptr);
    const ad::Array& pl = t.val(out.pair_logits);
    out.pair_rel_prob.reserve(out.pairs.size());
    for (int64_t p = 0; p < pl.rows(); ++p) {
      double a = pl.at(p, 0), b = pl.at(p, 1);
      double mx = std::max(a, b);
      double ea = std::exp(a - mx), eb = std::exp(b - mx);
      out.pair_rel_prob.push_back(eb / (ea + eb));
    }
  }
  out.n_pairs = static_cast<int64_t>(out.pairs.size());

  if (opts.compute_loss) {
    out.loss = heads_->joint_loss(t, out.ser, td, out.pair_logits, out.pairs, doc.relations,
                                  opts.ser_loss_scale, opts.re_loss_scale);
    out.has_loss = true;
  }
  return out;
}

void JointModel::quantize_parameters() {
  for (ad::Parameter* p : store_.all()) ad::quantize_f32(p->value);
}

}  // namespace xfp
