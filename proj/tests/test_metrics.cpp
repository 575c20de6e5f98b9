#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "xformparser/metrics.hpp"
#include "xformparser/rng.hpp"

using namespace xfp;

TEST_CASE("cell accuracy: all correct, nine of ten, empty") {
  std::vector<int> gold10(10, 1), pred10(10, 1);
  CHECK(cell_accuracy(pred10, gold10) == 1.0);
  pred10[7] = 2;
  int64_t ccd = 0, tcc = 0;
  CHECK(cell_accuracy(pred10, gold10, &ccd, &tcc) == doctest::Approx(0.9));
  CHECK(ccd == 9);
  CHECK(tcc == 10);
  bool degenerate = false;
  CHECK(cell_accuracy({}, {}, nullptr, nullptr, &degenerate) == 1.0);
  CHECK(degenerate);
}

TEST_CASE("cells skipped by the model count as incorrect") {
  std::vector<int> gold = {0, 1};
  std::vector<int> pred = {-1, 1};
  CHECK(cell_accuracy(pred, gold) == doctest::Approx(0.5));
}

TEST_CASE("re_prf1: exact match, the 2/3 fixture, empty-set conventions") {
  std::set<PairKey> gold = {{"d", 0, 1}, {"d", 2, 3}};
  CHECK(re_prf1(gold, gold).f1 == 1.0);
  CHECK(re_prf1(gold, gold).precision == 1.0);
  CHECK(re_prf1(gold, gold).recall == 1.0);

  // TP=2, FP=1, FN=1
  std::set<PairKey> pred = {{"d", 0, 1}, {"d", 2, 3}, {"d", 4, 5}};
  std::set<PairKey> gold2 = {{"d", 0, 1}, {"d", 2, 3}, {"d", 6, 7}};
  PRF1 r = re_prf1(pred, gold2);
  CHECK(r.tp == 2);
  CHECK(r.fp == 1);
  CHECK(r.fn == 1);
  CHECK(r.precision == doctest::Approx(2.0 / 3.0));
  CHECK(r.recall == doctest::Approx(2.0 / 3.0));
  CHECK(r.f1 == doctest::Approx(2.0 / 3.0));

  // no predictions: precision 1 by convention, recall 0, F1 0
  PRF1 e = re_prf1({}, gold);
  CHECK(e.precision == 1.0);
  CHECK(e.recall == 0.0);
  CHECK(e.f1 == 0.0);
  // both empty: all 1
  PRF1 both = re_prf1({}, {});
  CHECK(both.precision == 1.0);
  CHECK(both.recall == 1.0);
  CHECK(both.f1 == 1.0);
  // no gold but predictions: recall 1 by convention
  PRF1 ng = re_prf1(gold, {});
  CHECK(ng.recall == 1.0);
  CHECK(ng.precision == 0.0);
  CHECK(ng.f1 == 0.0);
}

TEST_CASE("re_prf1 equals brute-force counting over the pair cross-product") {
  rng::Xoshiro256 g(555);
  for (int trial = 0; trial < 1000; ++trial) {
    int64_t ncells = g.range(1, 10);
    std::set<PairKey> pred, gold;
    for (int64_t i = 0; i < ncells; ++i)
      for (int64_t j = 0; j < ncells; ++j) {
        if (i == j) continue;
        if (g.bernoulli(0.2)) pred.insert({"doc", i, j});
        if (g.bernoulli(0.2)) gold.insert({"doc", i, j});
      }
    // independent oracle: walk the full cross product and classify each pair
    int64_t tp = 0, fp = 0, fn = 0;
    for (int64_t i = 0; i < ncells; ++i)
      for (int64_t j = 0; j < ncells; ++j) {
        if (i == j) continue;
        bool in_pred = pred.count({"doc", i, j}) > 0;
        bool in_gold = gold.count({"doc", i, j}) > 0;
        if (in_pred && in_gold) ++tp;
        if (in_pred && !in_gold) ++fp;
        if (!in_pred && in_gold) ++fn;
      }
    PRF1 r = re_prf1(pred, gold);
    CHECK(r.tp == tp);
    CHECK(r.fp == fp);
    CHECK(r.fn == fn);
    PRF1 o = prf1_from_counts(tp, fp, fn);
    CHECK(r.precision == o.precision);
    CHECK(r.recall == o.recall);
    CHECK(r.f1 == o.f1);
  }
}

TEST_CASE("f1 lies between min and max of precision and recall") {
  rng::Xoshiro256 g(777);
  for (int trial = 0; trial < 500; ++trial) {
    int64_t tp = g.range(0, 20), fp = g.range(0, 20), fn = g.range(0, 20);
    PRF1 r = prf1_from_counts(tp, fp, fn);
    if (r.precision + r.recall > 0.0) {
      CHECK(r.f1 >= std::min(r.precision, r.recall) - 1e-12);
      CHECK(r.f1 <= std::max(r.precision, r.recall) + 1e-12);
    }
  }
}

TEST_CASE("bio micro f1: identical sequences score one") {
  LabelSet xf = LabelSet::xfund();
  int bq = xf.bio_tag(xf.index_of("QUESTION"), true);
  int iq = xf.bio_tag(xf.index_of("QUESTION"), false);
  std::vector<std::vector<int64_t>> seqs = {{bq, iq, 0, bq}};
  PRF1 r = bio_micro_f1(seqs, seqs, xf);
  CHECK(r.f1 == 1.0);
  CHECK(r.tp == 2);
}

TEST_CASE("bio micro f1: clipped span counts as both fp and fn") {
  LabelSet xf = LabelSet::xfund();
  int bq = xf.bio_tag(xf.index_of("QUESTION"), true);
  int iq = xf.bio_tag(xf.index_of("QUESTION"), false);
  std::vector<std::vector<int64_t>> gold = {{bq, iq}};
  std::vector<std::vector<int64_t>> pred = {{bq, 0}};
  PRF1 r = bio_micro_f1(pred, gold, xf);
  CHECK(r.tp == 0);
  CHECK(r.fp == 1);
  CHECK(r.fn == 1);
  CHECK(r.f1 == 0.0);
}

TEST_CASE("bio micro counts add over documents (micro additivity)") {
  LabelSet xf = LabelSet::xfund();
  rng::Xoshiro256 g(888);
  auto random_seq = [&](int64_t n) {
    std::vector<int64_t> s;
    for (int64_t i = 0; i < n; ++i) s.push_back(g.range(0, xf.num_bio_tags() - 1));
    return s;
  };
  std::vector<std::vector<int64_t>> gold = {random_seq(12), random_seq(7)};
  std::vector<std::vector<int64_t>> pred = {random_seq(12), random_seq(7)};
  PRF1 merged = bio_micro_f1(pred, gold, xf);
  PRF1 a = bio_micro_f1({pred[0]}, {gold[0]}, xf);
  PRF1 b = bio_micro_f1({pred[1]}, {gold[1]}, xf);
  CHECK(merged.tp == a.tp + b.tp);
  CHECK(merged.fp == a.fp + b.fp);
  CHECK(merged.fn == a.fn + b.fn);
}

TEST_CASE("orphan I-X opens a new span and is counted as a repair") {
  LabelSet xf = LabelSet::xfund();
  int iq = xf.bio_tag(xf.index_of("QUESTION"), false);
  int64_t repairs = 0;
  auto spans = extract_spans({0, iq, iq, 0}, xf, &repairs);
  REQUIRE(spans.size() == 1);
  CHECK(std::get<0>(spans[0]) == 1);
  CHECK(std::get<1>(spans[0]) == 3);
  CHECK(repairs == 1);
}

TEST_CASE("span extraction splits on class changes inside a run") {
  LabelSet xf = LabelSet::xfund();
  int bq = xf.bio_tag(xf.index_of("QUESTION"), true);
  int ia = xf.bio_tag(xf.index_of("ANSWER"), false);
  auto spans = extract_spans({bq, ia}, xf, nullptr);
  REQUIRE(spans.size() == 2);
  CHECK(std::get<2>(spans[0]) == xf.index_of("QUESTION"));
  CHECK(std::get<2>(spans[1]) == xf.index_of("ANSWER"));
}

TEST_CASE("metrics report serializes with fixed key order") {
  MetricsReport rep;
  rep.cell_accuracy = 0.5;
  rep.ccd = 1;
  rep.tcc = 2;
  rep.re = prf1_from_counts(2, 1, 1);
  rep.per_label["ANSWER"] = prf1_from_counts(1, 0, 0);
  std::string a = rep.to_json();
  std::string b = rep.to_json();
  CHECK(a == b);
  CHECK(a.find("\"ser\"") != std::string::npos);
  CHECK(a.find("\"re\"") != std::string::npos);
  CHECK(a.find("\"cell_accuracy\"") < a.find("\"bio_micro\""));
}
