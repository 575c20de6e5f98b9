#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <tuple>
#include <vector>

#include "xformparser/metrics.hpp"
#include "xformparser/model.hpp"

namespace xfp {

struct TrainConfig {
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.1;
  double warmup_fraction = 0.1;
  int64_t batch_size = 8;
  int64_t epochs = 100;
  uint64_t seed = 42;
  int64_t max_sequence = 512;
  double clip_norm = 1.0;
  SoftLabelSchedule schedule;
  int64_t checkpoint_every = 0;  // epochs between snapshots, 0 = off
  std::string dtype = "f32";     // f32 | f64
  std::string encoder = "toy";   // toy | precomputed:PATH
  int64_t max_steps = 0;         // optional optimizer-step cap, 0 = off
  int64_t vocab_min_count = 1;
  std::string resume;            // snapshot to continue from
  ModelConfig model;             // label_set may be "auto"

  // Uniform key=value access backing both the config file format and the
  // C API; unknown keys raise usage errors.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static const std::vector<std::string>& keys();
  void check() const;
};

// Linear warmup to the configured peak over warmup_fraction of total_steps,
// then linear decay to zero.
double lr_at(int64_t step, int64_t total_steps, const TrainConfig& cfg);

struct AdamState {
  std::vector<ad::Array> m;
  std::vector<ad::Array> v;
  int64_t t = 0;
};

// Decoupled-weight-decay update with bias correction, applied uniformly to
// every parameter. Returns false (and leaves all state untouched) when any
// gradient is non-finite.
bool adamw_step(std::vector<ad::Parameter*> params, AdamState& state, double lr,
                const TrainConfig& cfg);

struct EpochLog {
  int64_t epoch = 0;
  double loss_ser = 0.0;
  double loss_re = 0.0;
  double alpha = 0.0;
  double lr = 0.0;
  double val_cell_acc = 0.0;
  double val_re_f1 = 0.0;

  std::string to_json_line() const;
};

struct Checkpoint {
  int64_t format_version = 1;
  ModelConfig model_cfg;
  LabelSet labels = LabelSet::xfund();
  Vocab vocab;
  TrainConfig train_cfg;
  int64_t epoch = 0;
  int64_t global_step = 0;
  int64_t adam_t = 0;
  double best_val_re_f1 = -1.0;
  int64_t best_epoch = 0;
  std::vector<std::pair<std::string, ad::Array>> params;
  std::vector<ad::Array> adam_m;
  std::vector<ad::Array> adam_v;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);
std::unique_ptr<JointModel> model_from_checkpoint(const Checkpoint& ckpt);

struct TrainResult {
  std::vector<EpochLog> log;
  double best_val_re_f1 = -1.0;
  int64_t best_epoch = 0;
  int64_t skipped_steps = 0;
  std::vector<std::string> warnings;
};

// Deterministic single-worker loop: seeded shuffle, batched joint loss,
// global-norm clipping, AdamW, linear schedule, per-epoch validation, best
// checkpoint (by validation RE F1) written to ckpt_out.
TrainResult train(const std::vector<Document>& train_docs, const std::vector<Document>* val_docs,
                  const TrainConfig& cfg, const std::string& ckpt_out, const std::string& log_out);

// ---- inference over datasets ----

struct EvalOptions {
  double re_threshold = 0.5;
  bool gold_candidates = false;
  int threads = 1;
  const PrecomputedStates* precomputed = nullptr;
};

struct DocPrediction {
  std::string doc_id;
  std::vector<int64_t> cell_ids;  // every cell of the document
  std::vector<int> pred_label;    // -1 when the model skipped the cell
  std::vector<int> gold_label;
  std::vector<double> confidence;
  std::vector<std::tuple<int64_t, int64_t, double>> relations;  // head, tail, prob
  std::vector<int64_t> pred_tags;
  std::vector<int64_t> gold_tags;
};

std::vector<DocPrediction> predict_documents(const JointModel& model,
                                             const std::vector<Document>& docs,
                                             const EvalOptions& opts);

MetricsReport evaluate(const JointModel& model, const std::vector<Document>& docs,
                       const EvalOptions& opts);

std::string predictions_to_json(const std::vector<DocPrediction>& preds, const LabelSet& labels,
                                double threshold);

int env_thread_cap();  // XFP_THREADS, default 1

}  // namespace xfp
