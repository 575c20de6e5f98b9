#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "xformparser/corpus.hpp"

namespace xfp {

// One document's worth of a prediction file.
struct VizDoc {
  std::string doc_id;
  std::map<int64_t, std::string> labels;  // cell id -> predicted label (lowercase, may be empty)
  std::vector<std::tuple<int64_t, int64_t, double>> relations;  // head, tail, prob
};

std::vector<VizDoc> parse_predictions(const std::string& json);

// One rectangle per cell at its page box, stroke keyed by predicted label,
// one arrow per predicted relation from head box center to tail box center.
std::string render_svg(const Document& doc, const VizDoc& pred);

// digraph with one node per cell and one edge per predicted relation.
std::string render_dot(const Document& doc, const VizDoc& pred);

}  // namespace xfp
