#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "xformparser/corpus.hpp"

namespace xfp {

// Controls the synthetic key-value form generator. Text pools are disjoint
// per label so entity classes are learnable from text; layout carries the
// relation signal (answers follow their question in reading order, with
// one-to-many chains and distractor cells in between).
struct SynSpec {
  uint64_t seed = 7;
  int64_t num_docs = 1;
  int64_t rows_min = 3, rows_max = 6;  // grid rows per page
  int64_t cols_min = 3, cols_max = 7;  // cell slots per row
  double one_to_many_frac = 0.15;      // questions with more than one answer
  double other_frac = 0.08;            // distractor cells between units
  double unique_token_frac = 0.0;      // answers carrying a serial-style token
  int64_t page_w = 1224, page_h = 1584;
  std::string label_set = "xfund";  // xfund | indform
  std::string lang = "en";
  std::string split = "train";
  std::map<std::string, std::vector<std::string>> pools;  // empty -> default_pools

  static std::map<std::string, std::vector<std::string>> default_pools(const std::string& label_set);
  void check() const;  // throws on invalid knobs
};

std::vector<Document> generate(const SynSpec& spec);

struct CorpusStats {
  std::map<std::string, int64_t> label_counts;           // per label name
  std::map<std::string, int64_t> relation_histogram;     // one-to-one/two/three/many
  int64_t total_docs = 0;
  int64_t total_cells = 0;
  int64_t total_relations = 0;
};

CorpusStats corpus_stats(const std::vector<Document>& docs);

std::string stats_to_json(const CorpusStats& stats);

}  // namespace xfp
