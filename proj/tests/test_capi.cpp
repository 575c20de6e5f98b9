// Exercises the shared-library surface the way an external consumer would:
// only xfp.h plus the vendored JSON reader for checking payloads.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "doctest.h"
#include "json.hpp"
#include "xformparser/xfp.h"

namespace {

std::string tmp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

struct Freed {
  char* p = nullptr;
  ~Freed() { xfp_free(p); }
};

void config_tiny(xfp_train_config_t* cfg) {
  const char* kv[][2] = {{"d_model", "16"}, {"layers", "1"},  {"heads", "2"},
                         {"ffn_mult", "2"}, {"d_label", "8"}, {"d_biaff", "8"},
                         {"dropout", "0"},  {"lr", "0.002"},  {"batch_size", "4"},
                         {"epochs", "2"},   {"seed", "9"}};
  for (auto& [k, v] : kv) {
    char* err = nullptr;
    REQUIRE(xfp_train_config_set(cfg, k, v, &err) == XFP_OK);
  }
}

}  // namespace

TEST_CASE("version string is present") {
  REQUIRE(xfp_version() != nullptr);
  CHECK(std::strlen(xfp_version()) > 0);
}

TEST_CASE("generate, serialize, reparse") {
  char* err = nullptr;
  xfp_dataset_t* ds = nullptr;
  REQUIRE(xfp_generate(7, 5, 0.15, "xfund", "train", &ds, &err) == XFP_OK);
  CHECK(xfp_dataset_doc_count(ds) == 5);
  Freed json;
  size_t len = 0;
  REQUIRE(xfp_dataset_serialize(ds, &json.p, &len, &err) == XFP_OK);
  CHECK(len > 0);
  xfp_dataset_t* ds2 = nullptr;
  REQUIRE(xfp_dataset_parse(json.p, len, &ds2, &err) == XFP_OK);
  CHECK(xfp_dataset_doc_count(ds2) == 5);
  Freed json2;
  size_t len2 = 0;
  REQUIRE(xfp_dataset_serialize(ds2, &json2.p, &len2, &err) == XFP_OK);
  CHECK(std::string(json.p, len) == std::string(json2.p, len2));
  xfp_dataset_free(ds);
  xfp_dataset_free(ds2);
}

TEST_CASE("bad arguments and malformed inputs map to error codes") {
  char* err = nullptr;
  xfp_dataset_t* ds = nullptr;
  CHECK(xfp_generate(1, 0, 0.1, "xfund", "train", &ds, &err) == XFP_ERR_USAGE);
  REQUIRE(err != nullptr);
  xfp_free(err);
  err = nullptr;
  CHECK(xfp_dataset_parse("{nope", 5, &ds, &err) == XFP_ERR_PARSE);
  REQUIRE(err != nullptr);
  CHECK(std::string(err).find("byte") != std::string::npos);
  xfp_free(err);
  err = nullptr;
  CHECK(xfp_dataset_open("/nonexistent/path.json", &ds, &err) == XFP_ERR_IO);
  xfp_free(err);
}

TEST_CASE("validate reports capability violations as data, not failure") {
  const char* json = R"({"lang":"en","version":"0.1","split":"train","documents":[
    {"id":"d","cells":[
      {"box":[0,0,10,10],"text":"a","label":"answer","id":0,"linking":[[0,1]]},
      {"box":[20,0,30,10],"text":"q","label":"question","id":1,"linking":[]}],
     "img":{"fname":"d.png","width":50,"height":20}}]})";
  char* err = nullptr;
  xfp_dataset_t* ds = nullptr;
  REQUIRE(xfp_dataset_parse(json, std::strlen(json), &ds, &err) == XFP_OK);
  Freed violations;
  size_t count = 0;
  REQUIRE(xfp_dataset_validate(ds, &violations.p, &count, &err) == XFP_OK);
  CHECK(count == 2);  // head not capable + tail not capable
  auto arr = nlohmann::json::parse(violations.p);
  REQUIRE(arr.is_array());
  CHECK(arr.size() == 2);
  CHECK(arr[0]["code"] == "HeadNotCapable");
  xfp_dataset_free(ds);
}

TEST_CASE("config: unknown keys are usage errors, values round-trip") {
  xfp_train_config_t* cfg = xfp_train_config_create();
  char* err = nullptr;
  CHECK(xfp_train_config_set(cfg, "lr", "0.01", &err) == XFP_OK);
  Freed v;
  CHECK(xfp_train_config_get(cfg, "lr", &v.p, &err) == XFP_OK);
  CHECK(std::string(v.p) == "0.01");
  CHECK(xfp_train_config_set(cfg, "warp_speed", "9", &err) == XFP_ERR_USAGE);
  REQUIRE(err != nullptr);
  xfp_free(err);
  xfp_train_config_free(cfg);
}

TEST_CASE("train, open, evaluate, predict, render through the C API") {
  char* err = nullptr;
  xfp_dataset_t* ds = nullptr;
  REQUIRE(xfp_generate(21, 6, 0.15, "xfund", "train", &ds, &err) == XFP_OK);
  xfp_train_config_t* cfg = xfp_train_config_create();
  config_tiny(cfg);
  std::string ckpt = tmp_path("capi_ckpt.xfck");
  std::string log = tmp_path("capi_train.log");
  REQUIRE(xfp_train(ds, nullptr, cfg, ckpt.c_str(), log.c_str(), &err) == XFP_OK);
  {
    std::ifstream in(log);
    std::string header;
    std::getline(in, header);
    auto j = nlohmann::json::parse(header);
    CHECK(j.contains("config"));
    CHECK(j["config"]["epochs"] == "2");
    std::string line;
    int lines = 0;
    while (std::getline(in, line))
      if (!line.empty()) ++lines;
    CHECK(lines == 2);
  }

  xfp_model_t* model = nullptr;
  REQUIRE(xfp_model_open(ckpt.c_str(), &model, &err) == XFP_OK);
  Freed manifest;
  REQUIRE(xfp_model_manifest(model, &manifest.p, &err) == XFP_OK);
  auto man = nlohmann::json::parse(manifest.p);
  CHECK(man["model"]["encoder"]["d_model"] == 16);
  CHECK(man["label_set"] == "xfund");

  Freed report;
  REQUIRE(xfp_evaluate(model, ds, 0.5, 0, &report.p, &err) == XFP_OK);
  auto rep = nlohmann::json::parse(report.p);
  CHECK(rep.contains("ser"));
  CHECK(rep.contains("re"));
  CHECK(rep["ser"]["tcc"].get<int>() > 0);

  Freed preds;
  REQUIRE(xfp_predict(model, ds, 0.5, &preds.p, &err) == XFP_OK);
  auto pj = nlohmann::json::parse(preds.p);
  CHECK(pj["documents"].size() == 6);

  Freed svg;
  REQUIRE(xfp_render(ds, preds.p, "svg", nullptr, &svg.p, &err) == XFP_OK);
  CHECK(std::string(svg.p).find("<svg") != std::string::npos);
  Freed dot;
  REQUIRE(xfp_render(ds, preds.p, "dot", nullptr, &dot.p, &err) == XFP_OK);
  CHECK(std::string(dot.p).find("digraph") != std::string::npos);
  Freed bad;
  CHECK(xfp_render(ds, preds.p, "gif", nullptr, &bad.p, &err) == XFP_ERR_USAGE);
  xfp_free(err);
  err = nullptr;

  xfp_model_free(model);
  xfp_train_config_free(cfg);
  xfp_dataset_free(ds);
  std::remove(ckpt.c_str());
  std::remove(log.c_str());
}

TEST_CASE("model_open rejects garbage checkpoints") {
  std::string bad = tmp_path("capi_bad.xfck");
  {
    std::ofstream out(bad, std::ios::binary);
    out << "not a checkpoint";
  }
  char* err = nullptr;
  xfp_model_t* model = nullptr;
  CHECK(xfp_model_open(bad.c_str(), &model, &err) == XFP_ERR_FORMAT);
  REQUIRE(err != nullptr);
  xfp_free(err);
  std::remove(bad.c_str());
}

TEST_CASE("stats expose label counts and the relation histogram") {
  char* err = nullptr;
  xfp_dataset_t* ds = nullptr;
  REQUIRE(xfp_generate(3, 8, 0.2, "indform", "train", &ds, &err) == XFP_OK);
  Freed stats;
  REQUIRE(xfp_dataset_stats(ds, &stats.p, &err) == XFP_OK);
  auto j = nlohmann::json::parse(stats.p);
  CHECK(j["docs"] == 8);
  CHECK(j["label_counts"].contains("QUESTION"));
  CHECK(j["relation_histogram"].contains("one-to-one"));
  xfp_dataset_free(ds);
}
