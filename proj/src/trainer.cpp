#include "xformparser/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include "json.hpp"

namespace xfp {

using ordered_json = nlohmann::ordered_json;

namespace {

constexpr uint64_t kShuffleStream = 0x5357;
constexpr uint64_t kDropoutStream = 0x4452;

int64_t to_i64(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    int64_t r = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (...) {
    throw Error(ErrKind::Usage, "config: '" + key + "' expects an integer, got '" + v + "'");
  }
}

uint64_t to_u64(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    uint64_t r = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (...) {
    throw Error(ErrKind::Usage, "config: '" + key + "' expects an unsigned integer, got '" + v + "'");
  }
}

double to_f64(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    double r = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (...) {
    throw Error(ErrKind::Usage, "config: '" + key + "' expects a number, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "off" || v == "no") return false;
  throw Error(ErrKind::Usage, "config: '" + key + "' expects a boolean, got '" + v + "'");
}

std::string num_str(double v) { return ordered_json(v).dump(); }

}  // namespace

void TrainConfig::set(const std::string& key, const std::string& value) {
  if (key == "lr") lr = to_f64(key, value);
  else if (key == "beta1") beta1 = to_f64(key, value);
  else if (key == "beta2") beta2 = to_f64(key, value);
  else if (key == "adam_eps") adam_eps = to_f64(key, value);
  else if (key == "weight_decay") weight_decay = to_f64(key, value);
  else if (key == "warmup_fraction") warmup_fraction = to_f64(key, value);
  else if (key == "batch_size") batch_size = to_i64(key, value);
  else if (key == "epochs") epochs = to_i64(key, value);
  else if (key == "seed") seed = to_u64(key, value);
  else if (key == "max_sequence") max_sequence = to_i64(key, value);
  else if (key == "clip_norm") clip_norm = to_f64(key, value);
  else if (key == "soft_label_start") schedule.ep_start = to_i64(key, value);
  else if (key == "soft_label_warm") schedule.ep_warm = to_i64(key, value);
  else if (key == "soft_label") schedule.enabled = to_bool(key, value);
  else if (key == "checkpoint_every") checkpoint_every = to_i64(key, value);
  else if (key == "dtype") dtype = value;
  else if (key == "encoder") encoder = value;
  else if (key == "max_steps") max_steps = to_i64(key, value);
  else if (key == "vocab_min_count") vocab_min_count = to_i64(key, value);
  else if (key == "resume") resume = value;
  else if (key == "label_set") model.label_set = value;
  else if (key == "d_model") model.enc.d_model = to_i64(key, value);
  else if (key == "layers") model.enc.layers = to_i64(key, value);
  else if (key == "heads") model.enc.heads = to_i64(key, value);
  else if (key == "ffn_mult") model.enc.ffn_mult = to_i64(key, value);
  else if (key == "visual_dim") model.enc.visual_dim = to_i64(key, value);
  else if (key == "dropout") model.enc.dropout = to_f64(key, value);
  else if (key == "d_label") model.d_label = to_i64(key, value);
  else if (key == "d_biaff") model.d_biaff = to_i64(key, value);
  else if (key == "use_decoder") model.use_decoder = to_bool(key, value);
  else if (key == "faithful_eq10") model.faithful_eq10 = to_bool(key, value);
  else throw Error(ErrKind::Usage, "config: unknown key '" + key + "'");
}

std::string TrainConfig::get(const std::string& key) const {
  if (key == "lr") return num_str(lr);
  if (key == "beta1") return num_str(beta1);
  if (key == "beta2") return num_str(beta2);
  if (key == "adam_eps") return num_str(adam_eps);
  if (key == "weight_decay") return num_str(weight_decay);
  if (key == "warmup_fraction") return num_str(warmup_fraction);
  if (key == "batch_size") return std::to_string(batch_size);
  if (key == "epochs") return std::to_string(epochs);
  if (key == "seed") return std::to_string(seed);
  if (key == "max_sequence") return std::to_string(max_sequence);
  if (key == "clip_norm") return num_str(clip_norm);
  if (key == "soft_label_start") return std::to_string(schedule.ep_start);
  if (key == "soft_label_warm") return std::to_string(schedule.ep_warm);
  if (key == "soft_label") return schedule.enabled ? "true" : "false";
  if (key == "checkpoint_every") return std::to_string(checkpoint_every);
  if (key == "dtype") return dtype;
  if (key == "encoder") return encoder;
  if (key == "max_steps") return std::to_string(max_steps);
  if (key == "vocab_min_count") return std::to_string(vocab_min_count);
  if (key == "resume") return resume;
  if (key == "label_set") return model.label_set;
  if (key == "d_model") return std::to_string(model.enc.d_model);
  if (key == "layers") return std::to_string(model.enc.layers);
  if (key == "heads") return std::to_string(model.enc.heads);
  if (key == "ffn_mult") return std::to_string(model.enc.ffn_mult);
  if (key == "visual_dim") return std::to_string(model.enc.visual_dim);
  if (key == "dropout") return num_str(model.enc.dropout);
  if (key == "d_label") return std::to_string(model.d_label);
  if (key == "d_biaff") return std::to_string(model.d_biaff);
  if (key == "use_decoder") return model.use_decoder ? "true" : "false";
  if (key == "faithful_eq10") return model.faithful_eq10 ? "true" : "false";
  throw Error(ErrKind::Usage, "config: unknown key '" + key + "'");
}

const std::vector<std::string>& TrainConfig::keys() {
  static const std::vector<std::string> k = {
      "lr",          "beta1",        "beta2",      "adam_eps",        "weight_decay",
      "warmup_fraction", "batch_size", "epochs",   "seed",            "max_sequence",
      "clip_norm",   "soft_label_start", "soft_label_warm", "soft_label", "checkpoint_every",
      "dtype",       "encoder",      "max_steps",  "vocab_min_count", "resume",
      "label_set",   "d_model",      "layers",     "heads",           "ffn_mult",
      "visual_dim",  "dropout",      "d_label",    "d_biaff",         "use_decoder",
      "faithful_eq10"};
  return k;
}

void TrainConfig::check() const {
  if (lr <= 0.0) throw Error(ErrKind::Usage, "config: lr must be positive");
  if (batch_size < 1) throw Error(ErrKind::Usage, "config: batch_size must be >= 1");
  if (epochs < 1) throw Error(ErrKind::Usage, "config: epochs must be >= 1");
  if (warmup_fraction < 0.0 || warmup_fraction >= 1.0)
    throw Error(ErrKind::Usage, "config: warmup_fraction must be in [0,1)");
  if (max_sequence < 1) throw Error(ErrKind::Usage, "config: max_sequence must be >= 1");
  if (clip_norm < 0.0) throw Error(ErrKind::Usage, "config: clip_norm must be >= 0");
  if (dtype != "f32" && dtype != "f64")
    throw Error(ErrKind::Usage, "config: dtype must be f32 or f64");
  if (encoder != "toy" && encoder.rfind("precomputed:", 0) != 0)
    throw Error(ErrKind::Usage, "config: encoder must be 'toy' or 'precomputed:PATH'");
  if (vocab_min_count < 1) throw Error(ErrKind::Usage, "config: vocab_min_count must be >= 1");
  schedule.check();
}

double lr_at(int64_t step, int64_t total_steps, const TrainConfig& cfg) {
  if (total_steps < 1) throw Error(ErrKind::Contract, "lr_at: total_steps must be >= 1");
  if (step < 0 || step > total_steps)
    throw Error(ErrKind::Contract, "lr_at: step out of range [0," + std::to_string(total_steps) + "]");
  int64_t warmup = static_cast<int64_t>(std::llround(cfg.warmup_fraction * static_cast<double>(total_steps)));
  if (warmup > 0 && step <= warmup)
    return cfg.lr * static_cast<double>(step) / static_cast<double>(warmup);
  return cfg.lr * static_cast<double>(total_steps - step) / static_cast<double>(total_steps - warmup);
}

bool adamw_step(std::vector<ad::Parameter*> params, AdamState& state, double lr,
                const TrainConfig& cfg) {
  if (state.m.empty()) {
    for (ad::Parameter* p : params) {
      state.m.push_back(ad::Array(p->value.shape));
      state.v.push_back(ad::Array(p->value.shape));
    }
  }
  if (state.m.size() != params.size())
    throw Error(ErrKind::Contract, "adamw_step: state does not match parameter list");
  for (ad::Parameter* p : params)
    if (!p->grad.all_finite()) return false;

  state.t += 1;
  double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  bool f32 = cfg.dtype == "f32";
  for (size_t pi = 0; pi < params.size(); ++pi) {
    ad::Parameter* p = params[pi];
    ad::Array& m = state.m[pi];
    ad::Array& v = state.v[pi];
    if (!m.same_shape(p->value))
      throw Error(ErrKind::Contract, "adamw_step: moment shape mismatch for " + p->name);
    for (int64_t i = 0; i < p->value.numel(); ++i) {
      double g = p->grad.at(i);
      m.at(i) = cfg.beta1 * m.at(i) + (1.0 - cfg.beta1) * g;
      v.at(i) = cfg.beta2 * v.at(i) + (1.0 - cfg.beta2) * g * g;
      double mhat = m.at(i) / bc1;
      double vhat = v.at(i) / bc2;
      p->value.at(i) -= lr * (mhat / (std::sqrt(vhat) + cfg.adam_eps) + cfg.weight_decay * p->value.at(i));
    }
    if (f32) {
      ad::quantize_f32(p->value);
      ad::quantize_f32(m);
      ad::quantize_f32(v);
    }
  }
  return true;
}

std::string EpochLog::to_json_line() const {
  ordered_json j;
  j["epoch"] = epoch;
  j["loss_ser"] = loss_ser;
  j["loss_re"] = loss_re;
  j["alpha"] = alpha;
  j["lr"] = lr;
  j["val_cell_acc"] = val_cell_acc;
  j["val_re_f1"] = val_re_f1;
  return j.dump();
}

// ---- checkpoint file (magic XFCK1) ----

namespace {

constexpr char kCkptMagic[] = "XFCK1";

void put_u32(std::string& s, uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& s, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(s, bits);
}

uint32_t get_u32(const std::string& s, size_t& pos) {
  if (pos + 4 > s.size()) throw Error(ErrKind::Format, "checkpoint: truncated at offset " + std::to_string(pos));
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(s[pos + static_cast<size_t>(i)])) << (8 * i);
  pos += 4;
  return v;
}

float get_f32(const std::string& s, size_t& pos) {
  uint32_t bits = get_u32(s, pos);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

ordered_json train_cfg_json(const TrainConfig& cfg) {
  ordered_json j = ordered_json::object();
  for (const auto& k : TrainConfig::keys()) j[k] = cfg.get(k);
  return j;
}

TrainConfig train_cfg_from_json(const ordered_json& j) {
  TrainConfig cfg;
  for (auto it = j.begin(); it != j.end(); ++it) cfg.set(it.key(), it.value().get<std::string>());
  return cfg;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  ordered_json man;
  man["format_version"] = ckpt.format_version;
  man["model"] = ordered_json::parse(ckpt.model_cfg.to_json());
  ordered_json jl;
  jl["name"] = ckpt.labels.name();
  jl["names"] = ckpt.labels.names();
  ordered_json heads = ordered_json::array(), tails = ordered_json::array();
  for (const auto& n : ckpt.labels.names()) {
    if (ckpt.labels.head_capable(n)) heads.push_back(n);
    if (ckpt.labels.tail_capable(n)) tails.push_back(n);
  }
  jl["head_capable"] = heads;
  jl["tail_capable"] = tails;
  jl["outside"] = ckpt.labels.outside();
  man["labels"] = std::move(jl);
  man["vocab"] = ckpt.vocab.tokens;
  man["train_config"] = train_cfg_json(ckpt.train_cfg);
  man["epoch"] = ckpt.epoch;
  man["global_step"] = ckpt.global_step;
  man["adam_t"] = ckpt.adam_t;
  man["best_val_re_f1"] = ckpt.best_val_re_f1;
  man["best_epoch"] = ckpt.best_epoch;
  man["has_moments"] = !ckpt.adam_m.empty();
  ordered_json jp = ordered_json::array();
  int64_t total = 0;
  for (const auto& [name, value] : ckpt.params) {
    ordered_json e;
    e["name"] = name;
    e["shape"] = value.shape;
    jp.push_back(std::move(e));
    total += value.numel();
  }
  man["params"] = std::move(jp);
  man["total_param_floats"] = total;

  std::string out;
  out += kCkptMagic;
  std::string man_bytes = man.dump();
  put_u32(out, static_cast<uint32_t>(man_bytes.size()));
  out += man_bytes;
  for (const auto& [name, value] : ckpt.params)
    for (int64_t i = 0; i < value.numel(); ++i) put_f32(out, static_cast<float>(value.at(i)));
  for (const auto& m : ckpt.adam_m)
    for (int64_t i = 0; i < m.numel(); ++i) put_f32(out, static_cast<float>(m.at(i)));
  for (const auto& v : ckpt.adam_v)
    for (int64_t i = 0; i < v.numel(); ++i) put_f32(out, static_cast<float>(v.at(i)));

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(ErrKind::Io, "cannot write " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw Error(ErrKind::Io, "short write to " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrKind::Io, "cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (bytes.size() < 5 || bytes.compare(0, 5, kCkptMagic) != 0)
    throw Error(ErrKind::Format, "checkpoint: bad magic (expected XFCK1)");
  size_t pos = 5;
  uint32_t man_len = get_u32(bytes, pos);
  if (pos + man_len > bytes.size())
    throw Error(ErrKind::Format, "checkpoint: truncated manifest at offset " + std::to_string(pos));
  ordered_json man;
  try {
    man = ordered_json::parse(bytes.substr(pos, man_len));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrKind::Format, std::string("checkpoint: manifest is not valid JSON: ") + e.what());
  }
  pos += man_len;

  Checkpoint ckpt;
  ckpt.format_version = man.at("format_version").get<int64_t>();
  if (ckpt.format_version != 1)
    throw Error(ErrKind::Format,
                "checkpoint: unsupported format version " + std::to_string(ckpt.format_version));
  ckpt.model_cfg = ModelConfig::from_json(man.at("model").dump());
  const auto& jl = man.at("labels");
  ckpt.labels = LabelSet(jl.at("name").get<std::string>(),
                         jl.at("names").get<std::vector<std::string>>(),
                         jl.at("head_capable").get<std::vector<std::string>>(),
                         jl.at("tail_capable").get<std::vector<std::string>>(),
                         jl.at("outside").get<std::string>());
  ckpt.vocab.tokens = man.at("vocab").get<std::vector<std::string>>();
  ckpt.vocab.rebuild_index();
  ckpt.train_cfg = train_cfg_from_json(man.at("train_config"));
  ckpt.epoch = man.at("epoch").get<int64_t>();
  ckpt.global_step = man.at("global_step").get<int64_t>();
  ckpt.adam_t = man.at("adam_t").get<int64_t>();
  ckpt.best_val_re_f1 = man.at("best_val_re_f1").get<double>();
  ckpt.best_epoch = man.at("best_epoch").get<int64_t>();
  bool has_moments = man.at("has_moments").get<bool>();

  int64_t total = 0;
  for (const auto& e : man.at("params")) {
    std::string name = e.at("name").get<std::string>();
    std::vector<int64_t> shape = e.at("shape").get<std::vector<int64_t>>();
    int64_t n = 1;
    for (int64_t s : shape) {
      if (s <= 0) throw Error(ErrKind::Format, "checkpoint: bad shape for parameter " + name);
      n *= s;
    }
    ckpt.params.push_back({std::move(name), ad::Array(std::move(shape))});
    total += n;
  }
  if (man.at("total_param_floats").get<int64_t>() != total)
    throw Error(ErrKind::Format, "checkpoint: manifest float count does not match parameter shapes");
  size_t expected = pos + static_cast<size_t>(total) * 4 * (has_moments ? 3 : 1);
  if (bytes.size() != expected)
    throw Error(ErrKind::Format, "checkpoint: payload length " + std::to_string(bytes.size() - pos) +
                                     " does not match manifest (expected " +
                                     std::to_string(expected - pos) + " bytes)");

  for (auto& [name, value] : ckpt.params)
    for (int64_t i = 0; i < value.numel(); ++i) value.at(i) = static_cast<double>(get_f32(bytes, pos));
  if (has_moments) {
    for (const auto& [name, value] : ckpt.params) {
      ad::Array m(value.shape);
      for (int64_t i = 0; i < m.numel(); ++i) m.at(i) = static_cast<double>(get_f32(bytes, pos));
      ckpt.adam_m.push_back(std::move(m));
    }
    for (const auto& [name, value] : ckpt.params) {
      ad::Array v(value.shape);
      for (int64_t i = 0; i < v.numel(); ++i) v.at(i) = static_cast<double>(get_f32(bytes, pos));
      ckpt.adam_v.push_back(std::move(v));
    }
  }
  return ckpt;
}

std::unique_ptr<JointModel> model_from_checkpoint(const Checkpoint& ckpt) {
  auto model = std::make_unique<JointModel>(ckpt.model_cfg, ckpt.labels, ckpt.vocab, 0);
  auto live = model->params().all();
  if (live.size() != ckpt.params.size())
    throw Error(ErrKind::Format, "checkpoint: parameter count " + std::to_string(ckpt.params.size()) +
                                     " does not match model (" + std::to_string(live.size()) + ")");
  for (size_t i = 0; i < live.size(); ++i) {
    const auto& [name, value] = ckpt.params[i];
    if (live[i]->name != name)
      throw Error(ErrKind::Format, "checkpoint: unexpected parameter '" + name + "' (expected '" +
                                       live[i]->name + "')");
    if (live[i]->value.shape != value.shape)
      throw Error(ErrKind::Format, "checkpoint: shape mismatch for parameter '" + name + "': stored " +
                                       value.shape_str() + ", model expects " +
                                       live[i]->value.shape_str());
    live[i]->value = value;
  }
  return model;
}

// ---- inference ----

int env_thread_cap() {
  const char* v = std::getenv("XFP_THREADS");
  if (!v) return 1;
  int n = std::atoi(v);
  return n < 1 ? 1 : n;
}

namespace {

DocPrediction predict_one(const JointModel& model, const Document& doc, const EvalOptions& opts) {
  DocPrediction dp;
  dp.doc_id = doc.id;
  for (const auto& c : doc.cells) {
    dp.cell_ids.push_back(c.id);
    int idx = model.labels().index_of(c.label);
    dp.gold_label.push_back(idx);
    dp.pred_label.push_back(-1);
    dp.confidence.push_back(0.0);
  }
  TokenizedDocument td = tokenize(doc, model.vocab(), model.labels(), model.config().enc.max_len);
  if (td.num_tokens() == 0) return dp;

  ad::Tape tape;
  ForwardOptions fo;
  fo.training = false;
  fo.compute_loss = false;
  fo.gold_candidates = opts.gold_candidates;
  fo.precomputed = opts.precomputed;
  DocForward fwd = model.forward(tape, doc, td, fo);

  std::map<int64_t, size_t> pos;
  for (size_t i = 0; i < dp.cell_ids.size(); ++i) pos[dp.cell_ids[i]] = i;
  for (size_t r = 0; r < fwd.ser.cell_ids.size(); ++r) {
    size_t i = pos.at(fwd.ser.cell_ids[r]);
    dp.pred_label[i] = fwd.ser.pred_labels[r];
    dp.confidence[i] = fwd.ser.confidence[r];
  }
  const ad::Array& tl = tape.val(fwd.ser.token_logits);
  for (int64_t r = 0; r < tl.rows(); ++r) {
    int64_t best = 0;
    for (int64_t c = 1; c < tl.cols(); ++c)
      if (tl.at(r, c) > tl.at(r, best)) best = c;
    dp.pred_tags.push_back(best);
  }
  dp.gold_tags = td.bio_tags;
  for (size_t p = 0; p < fwd.pairs.size(); ++p) {
    double prob = fwd.pair_rel_prob[p];
    if (prob >= opts.re_threshold)
      dp.relations.push_back({fwd.pairs[p].first, fwd.pairs[p].second, prob});
  }
  return dp;
}

}  // namespace

std::vector<DocPrediction> predict_documents(const JointModel& model,
                                             const std::vector<Document>& docs,
                                             const EvalOptions& opts) {
  std::vector<DocPrediction> out(docs.size());
  int threads = std::max(1, opts.threads);
  if (threads == 1 || docs.size() < 2) {
    for (size_t i = 0; i < docs.size(); ++i) out[i] = predict_one(model, docs[i], opts);
    return out;
  }
  std::atomic<size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      size_t i = next.fetch_add(1);
      if (i >= docs.size()) return;
      out[i] = predict_one(model, docs[i], opts);
    }
  };
  std::vector<std::thread> pool;
  for (int i = 0; i < threads; ++i) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  return out;
}

MetricsReport evaluate(const JointModel& model, const std::vector<Document>& docs,
                       const EvalOptions& opts) {
  std::vector<DocPrediction> preds = predict_documents(model, docs, opts);
  MetricsReport rep;

  std::vector<int> all_pred, all_gold;
  std::vector<std::vector<int64_t>> tag_pred, tag_gold;
  std::set<PairKey> re_pred, re_gold;
  for (size_t d = 0; d < docs.size(); ++d) {
    const DocPrediction& dp = preds[d];
    all_pred.insert(all_pred.end(), dp.pred_label.begin(), dp.pred_label.end());
    all_gold.insert(all_gold.end(), dp.gold_label.begin(), dp.gold_label.end());
    tag_pred.push_back(dp.pred_tags);
    tag_gold.push_back(dp.gold_tags);
    for (const auto& [h, t, prob] : dp.relations) re_pred.insert({dp.doc_id, h, t});
    for (const auto& r : docs[d].relations) re_gold.insert({docs[d].id, r.head_id, r.tail_id});
  }

  rep.cell_accuracy = cell_accuracy(all_pred, all_gold, &rep.ccd, &rep.tcc, &rep.degenerate);
  rep.bio_micro = bio_micro_f1(tag_pred, tag_gold, model.labels());
  for (int li = 0; li < model.labels().num_labels(); ++li) {
    int64_t tp = 0, fp = 0, fn = 0;
    for (size_t i = 0; i < all_gold.size(); ++i) {
      bool g = all_gold[i] == li;
      bool p = all_pred[i] == li;
      if (g && p) ++tp;
      else if (!g && p) ++fp;
      else if (g && !p) ++fn;
    }
    rep.per_label[model.labels().label_name(li)] = prf1_from_counts(tp, fp, fn);
  }
  rep.re = re_prf1(re_pred, re_gold);
  return rep;
}

std::string predictions_to_json(const std::vector<DocPrediction>& preds, const LabelSet& labels,
                                double threshold) {
  ordered_json root;
  root["schema_version"] = 1;
  root["re_threshold"] = threshold;
  root["documents"] = ordered_json::array();
  for (const auto& dp : preds) {
    ordered_json jd;
    jd["id"] = dp.doc_id;
    jd["cells"] = ordered_json::array();
    for (size_t i = 0; i < dp.cell_ids.size(); ++i) {
      ordered_json jc;
      jc["id"] = dp.cell_ids[i];
      if (dp.pred_label[i] >= 0) {
        std::string name = labels.label_name(dp.pred_label[i]);
        for (char& ch : name) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
        jc["label"] = name;
      } else {
        jc["label"] = nullptr;
      }
      jc["confidence"] = dp.confidence[i];
      jd["cells"].push_back(std::move(jc));
    }
    jd["relations"] = ordered_json::array();
    for (const auto& [h, t, prob] : dp.relations) {
      ordered_json jr;
      jr["head"] = h;
      jr["tail"] = t;
      jr["prob"] = prob;
      jd["relations"].push_back(std::move(jr));
    }
    root["documents"].push_back(std::move(jd));
  }
  return root.dump(2) + "\n";
}

// ---- training loop ----

namespace {

Checkpoint snapshot(const JointModel& model, const TrainConfig& cfg, const AdamState& adam,
                    int64_t epoch, int64_t global_step, double best, int64_t best_epoch) {
  Checkpoint ck;
  ck.model_cfg = model.config();
  ck.labels = model.labels();
  ck.vocab = model.vocab();
  ck.train_cfg = cfg;
  ck.epoch = epoch;
  ck.global_step = global_step;
  ck.adam_t = adam.t;
  ck.best_val_re_f1 = best;
  ck.best_epoch = best_epoch;
  for (const ad::Parameter* p : model.params().all()) ck.params.push_back({p->name, p->value});
  ck.adam_m = adam.m;
  ck.adam_v = adam.v;
  return ck;
}

double clip_global_norm(std::vector<ad::Parameter*>& params, double max_norm) {
  double sq = 0.0;
  for (ad::Parameter* p : params)
    for (double g : p->grad.data) sq += g * g;
  double norm = std::sqrt(sq);
  if (max_norm > 0.0 && std::isfinite(norm) && norm > max_norm) {
    double s = max_norm / norm;
    for (ad::Parameter* p : params)
      for (double& g : p->grad.data) g *= s;
  }
  return norm;
}

}  // namespace

TrainResult train(const std::vector<Document>& train_docs, const std::vector<Document>* val_docs,
                  const TrainConfig& cfg_in, const std::string& ckpt_out, const std::string& log_out) {
  TrainResult result;
  TrainConfig cfg = cfg_in;
  cfg.check();
  if (train_docs.empty()) throw Error(ErrKind::Contract, "train: dataset is empty");

  std::unique_ptr<JointModel> model;
  AdamState adam;
  int64_t start_epoch = 0;
  int64_t global_step = 0;
  double best = -1.0;
  int64_t best_epoch = 0;

  if (!cfg.resume.empty()) {
    Checkpoint ck = load_checkpoint(cfg.resume);
    TrainConfig stored = ck.train_cfg;
    stored.epochs = cfg.epochs;
    stored.checkpoint_every = cfg.checkpoint_every;
    stored.resume = cfg.resume;
    cfg = stored;
    model = model_from_checkpoint(ck);
    adam.t = ck.adam_t;
    adam.m = ck.adam_m;
    adam.v = ck.adam_v;
    start_epoch = ck.epoch;
    global_step = ck.global_step;
    best = ck.best_val_re_f1;
    best_epoch = ck.best_epoch;
  } else {
    cfg.model.enc.max_len = cfg.max_sequence;
    LabelSet labels = cfg.model.label_set == "auto" ? detect_label_set(train_docs)
                                                    : LabelSet::by_name(cfg.model.label_set);
    cfg.model.label_set = labels.name();
    Vocab vocab = build_vocab(train_docs, cfg.vocab_min_count);
    model = std::make_unique<JointModel>(cfg.model, labels, std::move(vocab), cfg.seed);
    if (cfg.dtype == "f32") model->quantize_parameters();
  }

  PrecomputedStates pre_states;
  const PrecomputedStates* pre = nullptr;
  if (cfg.encoder.rfind("precomputed:", 0) == 0) {
    pre_states = PrecomputedStates::load(cfg.encoder.substr(12), model->config().enc.d_model);
    pre = &pre_states;
  }

  // Tokenize once; documents without tokens cannot contribute to the loss.
  std::vector<TokenizedDocument> tds(train_docs.size());
  std::vector<size_t> usable;
  std::vector<int64_t> pair_count(train_docs.size(), 0);
  for (size_t i = 0; i < train_docs.size(); ++i) {
    tds[i] = tokenize(train_docs[i], model->vocab(), model->labels(), cfg.max_sequence);
    for (const auto& w : tds[i].warnings) result.warnings.push_back(w);
    if (tds[i].num_tokens() == 0) {
      result.warnings.push_back("document " + train_docs[i].id + " has no tokens; skipped");
      continue;
    }
    pair_count[i] = model->count_training_pairs(train_docs[i], tds[i]);
    usable.push_back(i);
  }
  if (usable.empty()) throw Error(ErrKind::Contract, "train: no trainable documents");

  int64_t batches_per_epoch =
      (static_cast<int64_t>(usable.size()) + cfg.batch_size - 1) / cfg.batch_size;
  int64_t planned = cfg.epochs * batches_per_epoch;
  int64_t schedule_total = cfg.max_steps > 0 ? std::min(planned, cfg.max_steps) : planned;

  std::ofstream log_file;
  if (!log_out.empty()) {
    log_file.open(log_out, std::ios::trunc);
    if (!log_file) throw Error(ErrKind::Io, "cannot write " + log_out);
    ordered_json header;
    header["config"] = train_cfg_json(cfg);
    log_file << header.dump() << "\n";
  }

  auto params = model->params().all();
  const std::vector<Document>& vdocs = val_docs ? *val_docs : train_docs;
  int consecutive_bad = 0;
  bool stop = false;

  for (int64_t ep = start_epoch + 1; ep <= cfg.epochs && !stop; ++ep) {
    rng::Xoshiro256 shuffle_rng(rng::derive(cfg.seed, kShuffleStream, static_cast<uint64_t>(ep)));
    rng::Xoshiro256 dropout_rng(rng::derive(cfg.seed, kDropoutStream, static_cast<uint64_t>(ep)));
    std::vector<size_t> order = usable;
    rng::shuffle(order, shuffle_rng);

    double ep_ser = 0.0, ep_re = 0.0, last_lr = 0.0;
    int64_t nb = 0;
    for (int64_t b = 0; b < batches_per_epoch && !stop; ++b) {
      size_t lo = static_cast<size_t>(b * cfg.batch_size);
      size_t hi = std::min(order.size(), lo + static_cast<size_t>(cfg.batch_size));
      int64_t n_tok = 0, n_pair = 0;
      for (size_t k = lo; k < hi; ++k) {
        n_tok += tds[order[k]].num_tokens();
        n_pair += pair_count[order[k]];
      }

      model->params().zero_grads();
      double batch_ser = 0.0, batch_re = 0.0;
      for (size_t k = lo; k < hi; ++k) {
        size_t di = order[k];
        ad::Tape tape;
        ForwardOptions fo;
        fo.training = true;
        fo.compute_loss = true;
        fo.epoch = ep;
        fo.schedule = cfg.schedule;
        fo.dropout_rng = &dropout_rng;
        fo.ser_loss_scale = 1.0 / static_cast<double>(n_tok);
        fo.re_loss_scale = n_pair > 0 ? 1.0 / static_cast<double>(n_pair) : 1.0;
        fo.precomputed = pre;
        DocForward fwd = model->forward(tape, train_docs[di], tds[di], fo);
        if (std::isfinite(fwd.loss.total_value) &&
            fwd.loss.total_value != fwd.loss.loss_ser_value + fwd.loss.loss_re_value)
          throw Error(ErrKind::Internal, "loss decomposition violated");
        batch_ser += fwd.loss.loss_ser_value;
        batch_re += fwd.loss.loss_re_value;
        tape.backward(fwd.loss.total);
      }

      double batch_total = batch_ser + batch_re;
      if (!std::isfinite(batch_total)) {
        ++consecutive_bad;
        if (consecutive_bad >= 2)
          throw Error(ErrKind::Diverged, "training diverged: non-finite loss in two consecutive steps");
      } else {
        consecutive_bad = 0;
      }
      ep_ser += batch_ser;
      ep_re += batch_re;
      ++nb;

      int64_t step = global_step + 1;
      last_lr = lr_at(step, schedule_total, cfg);
      clip_global_norm(params, cfg.clip_norm);
      if (!adamw_step(params, adam, last_lr, cfg)) ++result.skipped_steps;
      global_step = step;
      if (global_step >= schedule_total) stop = true;
    }

    EpochLog el;
    el.epoch = ep;
    el.loss_ser = nb > 0 ? ep_ser / static_cast<double>(nb) : 0.0;
    el.loss_re = nb > 0 ? ep_re / static_cast<double>(nb) : 0.0;
    el.alpha = cfg.schedule.enabled ? alpha(ep, cfg.schedule) : 0.0;
    el.lr = last_lr;
    EvalOptions eo;
    eo.precomputed = pre;
    MetricsReport rep = evaluate(*model, vdocs, eo);
    el.val_cell_acc = rep.cell_accuracy;
    el.val_re_f1 = rep.re.f1;
    result.log.push_back(el);
    if (log_file) log_file << el.to_json_line() << "\n";

    if (el.val_re_f1 > best) {
      best = el.val_re_f1;
      best_epoch = ep;
      if (!ckpt_out.empty())
        save_checkpoint(snapshot(*model, cfg, adam, ep, global_step, best, best_epoch), ckpt_out);
    }
    if (cfg.checkpoint_every > 0 && ep % cfg.checkpoint_every == 0 && !ckpt_out.empty())
      save_checkpoint(snapshot(*model, cfg, adam, ep, global_step, best, best_epoch),
                      ckpt_out + ".ep" + std::to_string(ep));
  }

  // A run that never improved still leaves a usable artifact behind.
  if (best < 0.0 && !ckpt_out.empty())
    save_checkpoint(snapshot(*model, cfg, adam, cfg.epochs, global_step, best, best_epoch), ckpt_out);

  result.best_val_re_f1 = best;
  result.best_epoch = best_epoch;
  return result;
}

}  // namespace xfp
