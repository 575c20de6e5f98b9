#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "xformparser/corpus.hpp"

namespace xfp {

struct PRF1 {
  int64_t tp = 0, fp = 0, fn = 0;
  double precision = 1.0, recall = 1.0, f1 = 1.0;
};

// Conventions for empty sets: precision 1 with no predictions, recall 1 with
// no gold, F1 1 when both are empty and 0 when precision + recall is 0.
PRF1 prf1_from_counts(int64_t tp, int64_t fp, int64_t fn);

struct MetricsReport {
  double cell_accuracy = 1.0;
  int64_t ccd = 0;  // correctly discriminated cells
  int64_t tcc = 0;  // total cell count
  bool degenerate = false;  // tcc == 0
  PRF1 bio_micro;
  std::map<std::string, PRF1> per_label;  // cell-level, per label name
  PRF1 re;

  std::string to_json() const;  // canonical fixed key order
};

// CA = CCD / TCC over aligned label sequences; -1 in pred marks a cell the
// model skipped, which counts as incorrect.
double cell_accuracy(const std::vector<int>& pred, const std::vector<int>& gold, int64_t* ccd = nullptr,
                     int64_t* tcc = nullptr, bool* degenerate = nullptr);

// (document, head, tail) keyed pair sets.
using PairKey = std::tuple<std::string, int64_t, int64_t>;
PRF1 re_prf1(const std::set<PairKey>& pred, const std::set<PairKey>& gold);

// Exact-span micro P/R/F1 over BIO tag sequences. An I-X with no live B-X run
// opens a new span (lenient repair; counted in *repairs when given).
PRF1 bio_micro_f1(const std::vector<std::vector<int64_t>>& pred,
                  const std::vector<std::vector<int64_t>>& gold, const LabelSet& labels,
                  int64_t* repairs = nullptr);

std::vector<std::tuple<int64_t, int64_t, int>> extract_spans(const std::vector<int64_t>& tags,
                                                             const LabelSet& labels,
                                                             int64_t* repairs = nullptr);

}  // namespace xfp
