// Command-line front end. Everything goes through the C API in xfp.h; the
// C++ core is not linked directly.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "xformparser/xfp.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitData = 1;
constexpr int kExitUsage = 2;

int exit_code_for(int api_code) { return api_code == XFP_ERR_USAGE ? kExitUsage : kExitData; }

int fail(int api_code, char* errmsg) {
  std::cerr << "error: " << (errmsg ? errmsg : "unknown failure") << "\n";
  xfp_free(errmsg);
  return exit_code_for(api_code);
}

struct DatasetHandle {
  xfp_dataset_t* ds = nullptr;
  ~DatasetHandle() { xfp_dataset_free(ds); }
};

struct ModelHandle {
  xfp_model_t* model = nullptr;
  ~ModelHandle() { xfp_model_free(model); }
};

struct ConfigHandle {
  xfp_train_config_t* cfg = nullptr;
  ConfigHandle() : cfg(xfp_train_config_create()) {}
  ~ConfigHandle() { xfp_train_config_free(cfg); }
};

bool read_text_file(const std::string& path, std::string* out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return false;
  std::ostringstream ss;
  ss << in.rdbuf();
  *out = ss.str();
  return true;
}

bool write_text_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) return false;
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  return static_cast<bool>(out);
}

// Flat key=value lines; '#' starts a comment.
int apply_config_file(xfp_train_config_t* cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    std::cerr << "error: cannot open config file " << path << "\n";
    return kExitData;
  }
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    size_t a = line.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) continue;
    size_t b = line.find_last_not_of(" \t\r\n");
    line = line.substr(a, b - a + 1);
    size_t eq = line.find('=');
    if (eq == std::string::npos) {
      std::cerr << "error: " << path << ":" << lineno << ": expected key=value\n";
      return kExitUsage;
    }
    auto trim = [](std::string s) {
      size_t x = s.find_first_not_of(" \t");
      size_t y = s.find_last_not_of(" \t");
      return x == std::string::npos ? std::string() : s.substr(x, y - x + 1);
    };
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    char* err = nullptr;
    int rc = xfp_train_config_set(cfg, key.c_str(), value.c_str(), &err);
    if (rc != XFP_OK) {
      std::cerr << "error: " << path << ":" << lineno << ": " << (err ? err : "bad config line")
                << "\n";
      xfp_free(err);
      return exit_code_for(rc);
    }
  }
  return kExitOk;
}

int cmd_gen(uint64_t seed, int64_t num_docs, const std::string& out_path, double one_to_many,
            const std::string& label_set, const std::string& split) {
  char* err = nullptr;
  DatasetHandle ds;
  int rc = xfp_generate(seed, num_docs, one_to_many, label_set.c_str(), split.c_str(), &ds.ds, &err);
  if (rc != XFP_OK) return fail(rc, err);
  rc = xfp_dataset_write(ds.ds, out_path.c_str(), &err);
  if (rc != XFP_OK) return fail(rc, err);
  char* stats = nullptr;
  rc = xfp_dataset_stats(ds.ds, &stats, &err);
  if (rc != XFP_OK) return fail(rc, err);
  std::cout << stats;
  xfp_free(stats);
  std::cerr << "wrote " << xfp_dataset_doc_count(ds.ds) << " documents to " << out_path << "\n";
  return kExitOk;
}

int cmd_validate(const std::string& data_path) {
  char* err = nullptr;
  DatasetHandle ds;
  int rc = xfp_dataset_open(data_path.c_str(), &ds.ds, &err);
  if (rc != XFP_OK) return fail(rc, err);
  char* violations = nullptr;
  size_t count = 0;
  rc = xfp_dataset_validate(ds.ds, &violations, &count, &err);
  if (rc != XFP_OK) return fail(rc, err);
  if (count > 0) {
    std::cerr << count << " violation(s) found:\n";
    std::cout << violations;
    xfp_free(violations);
    return kExitData;
  }
  xfp_free(violations);
  char* stats = nullptr;
  rc = xfp_dataset_stats(ds.ds, &stats, &err);
  if (rc != XFP_OK) return fail(rc, err);
  std::cout << stats;
  xfp_free(stats);
  std::cerr << "ok: " << xfp_dataset_doc_count(ds.ds) << " documents, no violations\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"XFormParser: joint semantic entity recognition and relation extraction for forms"};
  app.require_subcommand(1);

  // gen
  auto* gen = app.add_subcommand("gen", "generate a synthetic labeled form dataset");
  uint64_t gen_seed = 7;
  int64_t gen_num = 10;
  double gen_o2m = 0.15;
  std::string gen_out, gen_labels = "xfund", gen_split = "train";
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--num-docs", gen_num, "number of documents");
  gen->add_option("--out", gen_out, "output dataset path")->required();
  gen->add_option("--one-to-many-frac", gen_o2m, "fraction of questions with several answers");
  gen->add_option("--label-set", gen_labels, "xfund|indform")
      ->check(CLI::IsMember({"xfund", "indform"}));
  gen->add_option("--split", gen_split, "split tag written to the file");

  // validate
  auto* val = app.add_subcommand("validate", "validate a dataset file");
  std::string val_data;
  val->add_option("--data", val_data, "dataset path")->required();

  // train
  auto* tr = app.add_subcommand("train", "train the joint model");
  std::string tr_data, tr_val, tr_config, tr_out, tr_log, tr_encoder, tr_resume;
  std::vector<std::string> tr_sets;
  uint64_t tr_seed = 0;
  int64_t tr_soft_start = -1, tr_soft_warm = -1, tr_epochs = -1;
  bool tr_no_soft = false, tr_no_decoder = false;
  tr->add_option("--data", tr_data, "training dataset")->required();
  tr->add_option("--val-data", tr_val, "validation dataset (default: training data)");
  tr->add_option("--config", tr_config, "key=value config file");
  tr->add_option("--out", tr_out, "checkpoint output path")->required();
  tr->add_option("--log", tr_log, "training log path (line-delimited JSON)");
  tr->add_option("--encoder", tr_encoder, "toy | precomputed:PATH");
  tr->add_option("--soft-label-start", tr_soft_start, "epoch the soft labels start");
  tr->add_option("--soft-label-warm", tr_soft_warm, "warm-up length in epochs");
  tr->add_flag("--no-soft-label", tr_no_soft, "disable the warm-up soft label");
  tr->add_flag("--no-decoder", tr_no_decoder, "ablation: bypass the Bi-LSTM decoder");
  tr->add_option("--seed", tr_seed, "training seed");
  tr->add_option("--epochs", tr_epochs, "training epochs");
  tr->add_option("--resume", tr_resume, "checkpoint snapshot to resume from");
  tr->add_option("--set", tr_sets, "extra key=value overrides")->take_all();

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string ev_ckpt, ev_data, ev_report;
  double ev_threshold = 0.5;
  bool ev_gold = false;
  ev->add_option("--ckpt", ev_ckpt, "checkpoint path")->required();
  ev->add_option("--data", ev_data, "dataset path")->required();
  ev->add_option("--report", ev_report, "write the metrics report here (default: stdout)");
  ev->add_option("--re-threshold", ev_threshold, "relation probability threshold");
  ev->add_flag("--gold-candidates", ev_gold, "enumerate RE candidates from gold labels");

  // predict
  auto* pr = app.add_subcommand("predict", "write predictions for a dataset");
  std::string pr_ckpt, pr_input, pr_out;
  double pr_threshold = 0.5;
  pr->add_option("--ckpt", pr_ckpt, "checkpoint path")->required();
  pr->add_option("--input", pr_input, "dataset path")->required();
  pr->add_option("--out", pr_out, "prediction file path")->required();
  pr->add_option("--re-threshold", pr_threshold, "relation probability threshold");

  // viz
  auto* vz = app.add_subcommand("viz", "render predictions as SVG or DOT");
  std::string vz_pred, vz_data, vz_out, vz_format = "svg", vz_doc;
  vz->add_option("--pred", vz_pred, "prediction file")->required();
  vz->add_option("--data", vz_data, "dataset path")->required();
  vz->add_option("--out", vz_out, "output figure path")->required();
  vz->add_option("--format", vz_format, "svg|dot")->check(CLI::IsMember({"svg", "dot"}));
  vz->add_option("--doc", vz_doc, "document id (default: first document)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  if (gen->parsed()) {
    if (gen_num < 1) {
      std::cerr << "error: --num-docs must be >= 1\n";
      return kExitUsage;
    }
    return cmd_gen(gen_seed, gen_num, gen_out, gen_o2m, gen_labels, gen_split);
  }

  if (val->parsed()) return cmd_validate(val_data);

  if (tr->parsed()) {
    ConfigHandle cfg;
    if (!tr_config.empty()) {
      int rc = apply_config_file(cfg.cfg, tr_config);
      if (rc != kExitOk) return rc;
    }
    auto set_or_die = [&](const char* key, const std::string& value) -> int {
      char* err = nullptr;
      int rc = xfp_train_config_set(cfg.cfg, key, value.c_str(), &err);
      if (rc != XFP_OK) return fail(rc, err);
      return kExitOk;
    };
    if (tr->count("--seed") && set_or_die("seed", std::to_string(tr_seed))) return kExitUsage;
    if (tr_epochs >= 0 && set_or_die("epochs", std::to_string(tr_epochs))) return kExitUsage;
    if (!tr_encoder.empty() && set_or_die("encoder", tr_encoder)) return kExitUsage;
    if (tr_soft_start >= 0 && set_or_die("soft_label_start", std::to_string(tr_soft_start)))
      return kExitUsage;
    if (tr_soft_warm >= 0 && set_or_die("soft_label_warm", std::to_string(tr_soft_warm)))
      return kExitUsage;
    if (tr_no_soft && set_or_die("soft_label", "false")) return kExitUsage;
    if (tr_no_decoder && set_or_die("use_decoder", "false")) return kExitUsage;
    if (!tr_resume.empty() && set_or_die("resume", tr_resume)) return kExitUsage;
    for (const auto& kv : tr_sets) {
      size_t eq = kv.find('=');
      if (eq == std::string::npos) {
        std::cerr << "error: --set expects key=value, got '" << kv << "'\n";
        return kExitUsage;
      }
      char* err = nullptr;
      int rc = xfp_train_config_set(cfg.cfg, kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str(), &err);
      if (rc != XFP_OK) return fail(rc, err);
    }

    char* err = nullptr;
    DatasetHandle train_ds;
    int rc = xfp_dataset_open(tr_data.c_str(), &train_ds.ds, &err);
    if (rc != XFP_OK) return fail(rc, err);
    DatasetHandle val_ds;
    if (!tr_val.empty()) {
      rc = xfp_dataset_open(tr_val.c_str(), &val_ds.ds, &err);
      if (rc != XFP_OK) return fail(rc, err);
    }
    rc = xfp_train(train_ds.ds, val_ds.ds, cfg.cfg, tr_out.c_str(),
                   tr_log.empty() ? nullptr : tr_log.c_str(), &err);
    if (rc != XFP_OK) return fail(rc, err);
    std::cerr << "checkpoint written to " << tr_out << "\n";
    return kExitOk;
  }

  if (ev->parsed()) {
    char* err = nullptr;
    ModelHandle model;
    int rc = xfp_model_open(ev_ckpt.c_str(), &model.model, &err);
    if (rc != XFP_OK) return fail(rc, err);
    DatasetHandle ds;
    rc = xfp_dataset_open(ev_data.c_str(), &ds.ds, &err);
    if (rc != XFP_OK) return fail(rc, err);
    char* report = nullptr;
    rc = xfp_evaluate(model.model, ds.ds, ev_threshold, ev_gold ? 1 : 0, &report, &err);
    if (rc != XFP_OK) return fail(rc, err);
    if (ev_report.empty()) {
      std::cout << report;
    } else if (!write_text_file(ev_report, report)) {
      std::cerr << "error: cannot write " << ev_report << "\n";
      xfp_free(report);
      return kExitData;
    }
    xfp_free(report);
    return kExitOk;
  }

  if (pr->parsed()) {
    char* err = nullptr;
    ModelHandle model;
    int rc = xfp_model_open(pr_ckpt.c_str(), &model.model, &err);
    if (rc != XFP_OK) return fail(rc, err);
    DatasetHandle ds;
    rc = xfp_dataset_open(pr_input.c_str(), &ds.ds, &err);
    if (rc != XFP_OK) return fail(rc, err);
    char* preds = nullptr;
    rc = xfp_predict(model.model, ds.ds, pr_threshold, &preds, &err);
    if (rc != XFP_OK) return fail(rc, err);
    bool ok = write_text_file(pr_out, preds);
    xfp_free(preds);
    if (!ok) {
      std::cerr << "error: cannot write " << pr_out << "\n";
      return kExitData;
    }
    return kExitOk;
  }

  if (vz->parsed()) {
    char* err = nullptr;
    DatasetHandle ds;
    int rc = xfp_dataset_open(vz_data.c_str(), &ds.ds, &err);
    if (rc != XFP_OK) return fail(rc, err);
    std::string pred_json;
    if (!read_text_file(vz_pred, &pred_json)) {
      std::cerr << "error: cannot open " << vz_pred << "\n";
      return kExitData;
    }
    char* doc = nullptr;
    rc = xfp_render(ds.ds, pred_json.c_str(), vz_format.c_str(),
                    vz_doc.empty() ? nullptr : vz_doc.c_str(), &doc, &err);
    if (rc != XFP_OK) return fail(rc, err);
    bool ok = write_text_file(vz_out, doc);
    xfp_free(doc);
    if (!ok) {
      std::cerr << "error: cannot write " << vz_out << "\n";
      return kExitData;
    }
    return kExitOk;
  }

  return kExitUsage;
}
