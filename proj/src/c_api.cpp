#include "xformparser/xfp.h"

#include <cstdlib>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>

#include "json.hpp"
#include "xformparser/corpus.hpp"
#include "xformparser/model.hpp"
#include "xformparser/syngen.hpp"
#include "xformparser/trainer.hpp"
#include "xformparser/viz.hpp"

struct xfp_dataset_t {
  std::vector<xfp::Document> docs;
};

struct xfp_train_config_t {
  xfp::TrainConfig cfg;
};

struct xfp_model_t {
  std::unique_ptr<xfp::JointModel> model;
  std::string manifest_json;
};

namespace {

char* dup_string(const std::string& s) {
  char* p = static_cast<char*>(std::malloc(s.size() + 1));
  if (p) std::memcpy(p, s.c_str(), s.size() + 1);
  return p;
}

void set_err(char** errmsg, const std::string& msg) {
  if (errmsg) *errmsg = dup_string(msg);
}

int code_of(xfp::ErrKind kind) {
  using xfp::ErrKind;
  switch (kind) {
    case ErrKind::Usage: return XFP_ERR_USAGE;
    case ErrKind::Io: return XFP_ERR_IO;
    case ErrKind::Parse: return XFP_ERR_PARSE;
    case ErrKind::Schema: return XFP_ERR_SCHEMA;
    case ErrKind::Referential: return XFP_ERR_REFERENTIAL;
    case ErrKind::Validation: return XFP_ERR_VALIDATION;
    case ErrKind::Contract: return XFP_ERR_CONTRACT;
    case ErrKind::Format: return XFP_ERR_FORMAT;
    case ErrKind::Diverged: return XFP_ERR_DIVERGED;
    case ErrKind::Internal: return XFP_ERR_INTERNAL;
  }
  return XFP_ERR_INTERNAL;
}

template <typename Fn>
int guarded(char** errmsg, Fn&& fn) {
  try {
    fn();
    return XFP_OK;
  } catch (const xfp::Error& e) {
    set_err(errmsg, e.what());
    return code_of(e.kind());
  } catch (const std::exception& e) {
    set_err(errmsg, e.what());
    return XFP_ERR_INTERNAL;
  }
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw xfp::Error(xfp::ErrKind::Io, "cannot open " + path);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw xfp::Error(xfp::ErrKind::Io, "cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw xfp::Error(xfp::ErrKind::Io, "short write to " + path);
}

}  // namespace

extern "C" {

const char* xfp_version(void) { return "0.1.0"; }

void xfp_free(void* ptr) { std::free(ptr); }

int xfp_dataset_parse(const char* json, size_t len, xfp_dataset_t** out, char** errmsg) {
  if (!json || !out) {
    set_err(errmsg, "xfp_dataset_parse: null argument");
    return XFP_ERR_USAGE;
  }
  return guarded(errmsg, [&] {
    auto ds = std::make_unique<xfp_dataset_t>();
    ds->docs = xfp::parse_dataset(std::string_view(json, len));
    *out = ds.release();
  });
}

int xfp_dataset_open(const char* path, xfp_dataset_t** out, char** errmsg) {
  if (!path || !out) {
    set_err(errmsg, "xfp_dataset_open: null argument");
    return XFP_ERR_USAGE;
  }
  return guarded(errmsg, [&] {
    std::string bytes = read_file(path);
    auto ds = std::make_unique<xfp_dataset_t>();
    ds->docs = xfp::parse_dataset(bytes);
    *out = ds.release();
  });
}

int xfp_dataset_serialize(const xfp_dataset_t* ds, char** json_out, size_t* len_out, char** errmsg) {
  if (!ds || !json_out) {
    set_err(errmsg, "xfp_dataset_serialize: null argument");
    return XFP_ERR_USAGE;
  }
  return guarded(errmsg, [&] {
    std::string s = xfp::serialize_dataset(ds->docs);
    if (len_out) *len_out = s.size();
    *json_out = dup_string(s);
  });
}

int xfp_dataset_write(const xfp_dataset_t* ds, const char* path, char** errmsg) {
  if (!ds || !path) {
    set_err(errmsg, "xfp_dataset_write: null argument");
    return XFP_ERR_USAGE;
  }
  return guarded(errmsg, [&] { write_file(path, xfp::serialize_dataset(ds->docs)); });
}

size_t xfp_dataset_doc_count(const xfp_dataset_t* ds) { return ds ? ds->docs.size() : 0; }

int xfp_dataset_validate(const xfp_dataset_t* ds, char** violations_json, size_t* count,
                         char** errmsg) {
  if (!ds) {
    set_err(errmsg, "xfp_dataset_validate: null argument");
    return XFP_ERR_USAGE;
  }
  return guarded(errmsg, [&] {
    xfp::LabelSet labels = xfp::detect_label_set(ds->docs);
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    size_t n = 0;
    for (const auto& doc : ds->docs) {
      for (const auto& v : xfp::validate(doc, labels)) {
        nlohmann::ordered_json jv;
        jv["document"] = doc.id;
        jv["code"] = v.code;
        jv["where"] = v.where;
        jv["detail"] = v.detail;
        arr.push_back(std::move(jv));
        ++n;
      }
    }
    if (count) *count = n;
    if (violations_json) *violations_json = dup_string(arr.dump(2) + "\n");
  });
}

int xfp_dataset_stats(const xfp_dataset_t* ds, char** stats_json, char** errmsg) {
  if (!ds || !stats_json) {
    set_err(errmsg, "xfp_dataset_stats: null argument");
    return XFP_ERR_USAGE;
  }
  return guarded(errmsg, [&] { *stats_json = dup_string(xfp::stats_to_json(xfp::corpus_stats(ds->docs))); });
}

void xfp_dataset_free(xfp_dataset_t* ds) { delete ds; }

int xfp_generate(uint64_t seed, int64_t num_docs, double one_to_many_frac, const char* label_set,
                 const char* split, xfp_dataset_t** out, char** errmsg) {
  if (!out) {
    set_err(errmsg, "xfp_generate: null output");
    return XFP_ERR_USAGE;
  }
  return guarded(errmsg, [&] {
    xfp::SynSpec spec;
    spec.seed = seed;
    spec.num_docs = num_docs;
    spec.one_to_many_frac = one_to_many_frac;
    if (label_set) spec.label_set = label_set;
    if (split) spec.split = split;
    auto ds = std::make_unique<xfp_dataset_t>();
    ds->docs = xfp::generate(spec);
    *out = ds.release();
  });
}

xfp_train_config_t* xfp_train_config_create(void) { return new xfp_train_config_t(); }

int xfp_train_config_set(xfp_train_config_t* cfg, const char* key, const char* value,
                         char** errmsg) {
  if (!cfg || !key || !value) {
    set_err(errmsg, "xfp_train_config_set: null argument");
    return XFP_ERR_USAGE;
  }
  return guarded(errmsg, [&] { cfg->cfg.set(key, value); });
}

int xfp_train_config_get(const xfp_train_config_t* cfg, const char* key, char** value_out,
                         char** errmsg) {
  if (!cfg || !key || !value_out) {
    set_err(errmsg, "xfp_train_config_get: null argument");
    return XFP_ERR_USAGE;
  }
  return guarded(errmsg, [&] { *value_out = dup_string(cfg->cfg.get(key)); });
}

void xfp_train_config_free(xfp_train_config_t* cfg) { delete cfg; }

int xfp_train(const xfp_dataset_t* train, const xfp_dataset_t* val, const xfp_train_config_t* cfg,
              const char* checkpoint_out, const char* log_out, char** errmsg) {
  if (!train || !cfg || !checkpoint_out) {
    set_err(errmsg, "xfp_train: null argument");
    return XFP_ERR_USAGE;
  }
  return guarded(errmsg, [&] {
    xfp::train(train->docs, val ? &val->docs : nullptr, cfg->cfg, checkpoint_out,
               log_out ? log_out : "");
  });
}

int xfp_model_open(const char* checkpoint_path, xfp_model_t** out, char** errmsg) {
  if (!checkpoint_path || !out) {
    set_err(errmsg, "xfp_model_open: null argument");
    return XFP_ERR_USAGE;
  }
  return guarded(errmsg, [&] {
    xfp::Checkpoint ck = xfp::load_checkpoint(checkpoint_path);
    auto m = std::make_unique<xfp_model_t>();
    nlohmann::ordered_json man;
    man["model"] = nlohmann::ordered_json::parse(ck.model_cfg.to_json());
    man["label_set"] = ck.labels.name();
    man["vocab_size"] = ck.vocab.size();
    man["epoch"] = ck.epoch;
    man["global_step"] = ck.global_step;
    man["best_val_re_f1"] = ck.best_val_re_f1;
    man["best_epoch"] = ck.best_epoch;
    nlohmann::ordered_json tc = nlohmann::ordered_json::object();
    for (const auto& k : xfp::TrainConfig::keys()) tc[k] = ck.train_cfg.get(k);
    man["train_config"] = std::move(tc);
    m->manifest_json = man.dump(2) + "\n";
    m->model = xfp::model_from_checkpoint(ck);
    *out = m.release();
  });
}

int xfp_model_manifest(const xfp_model_t* model, char** json_out, char** errmsg) {
  if (!model || !json_out) {
    set_err(errmsg, "xfp_model_manifest: null argument");
    return XFP_ERR_USAGE;
  }
  *json_out = dup_string(model->manifest_json);
  return XFP_OK;
}

void xfp_model_free(xfp_model_t* model) { delete model; }

int xfp_evaluate(const xfp_model_t* model, const xfp_dataset_t* ds, double re_threshold,
                 int use_gold_candidates, char** report_json, char** errmsg) {
  if (!model || !ds || !report_json) {
    set_err(errmsg, "xfp_evaluate: null argument");
    return XFP_ERR_USAGE;
  }
  return guarded(errmsg, [&] {
    xfp::EvalOptions opts;
    opts.re_threshold = re_threshold;
    opts.gold_candidates = use_gold_candidates != 0;
    opts.threads = xfp::env_thread_cap();
    *report_json = dup_string(xfp::evaluate(*model->model, ds->docs, opts).to_json());
  });
}

int xfp_predict(const xfp_model_t* model, const xfp_dataset_t* ds, double re_threshold,
                char** predictions_json, char** errmsg) {
  if (!model || !ds || !predictions_json) {
    set_err(errmsg, "xfp_predict: null argument");
    return XFP_ERR_USAGE;
  }
  return guarded(errmsg, [&] {
    xfp::EvalOptions opts;
    opts.re_threshold = re_threshold;
    opts.threads = xfp::env_thread_cap();
    auto preds = xfp::predict_documents(*model->model, ds->docs, opts);
    *predictions_json = dup_string(xfp::predictions_to_json(preds, model->model->labels(), re_threshold));
  });
}

int xfp_render(const xfp_dataset_t* ds, const char* predictions_json, const char* format,
               const char* doc_id, char** out_doc, char** errmsg) {
  if (!ds || !predictions_json || !format || !out_doc) {
    set_err(errmsg, "xfp_render: null argument");
    return XFP_ERR_USAGE;
  }
  return guarded(errmsg, [&] {
    std::string fmt = format;
    if (fmt != "svg" && fmt != "dot")
      throw xfp::Error(xfp::ErrKind::Usage, "format must be svg or dot");
    if (ds->docs.empty()) throw xfp::Error(xfp::ErrKind::Usage, "dataset has no documents");
    auto preds = xfp::parse_predictions(predictions_json);
    const xfp::Document* doc = nullptr;
    if (doc_id) {
      for (const auto& d : ds->docs)
        if (d.id == doc_id) doc = &d;
      if (!doc)
        throw xfp::Error(xfp::ErrKind::Referential,
                         std::string("document ") + doc_id + " not found in dataset");
    } else {
      doc = &ds->docs.front();
    }
    const xfp::VizDoc* vd = nullptr;
    for (const auto& p : preds)
      if (p.doc_id == doc->id) vd = &p;
    if (!vd)
      throw xfp::Error(xfp::ErrKind::Referential,
                       "predictions contain no entry for document " + doc->id);
    *out_doc = dup_string(fmt == "svg" ? xfp::render_svg(*doc, *vd) : xfp::render_dot(*doc, *vd));
  });
}

}  // extern "C"
