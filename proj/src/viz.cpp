#include "xformparser/viz.hpp"

#include <sstream>

#include "json.hpp"

namespace xfp {

namespace {

const char* label_color(const std::string& label) {
  if (label == "question") return "#e06c00";
  if (label == "answer") return "#1f77b4";
  if (label == "header") return "#2ca02c";
  if (label == "single") return "#9467bd";
  if (label == "answernum") return "#d62728";
  if (label == "other") return "#888888";
  return "#bbbbbb";
}

void check_ids(const Document& doc, const VizDoc& pred) {
  for (const auto& [cid, label] : pred.labels) {
    if (!doc.cell_by_id(cid))
      throw Error(ErrKind::Referential, "prediction references unknown cell id " +
                                            std::to_string(cid) + " in document " + doc.id);
  }
  for (const auto& [h, t, p] : pred.relations) {
    if (!doc.cell_by_id(h))
      throw Error(ErrKind::Referential, "prediction references unknown cell id " + std::to_string(h) +
                                            " in document " + doc.id);
    if (!doc.cell_by_id(t))
      throw Error(ErrKind::Referential, "prediction references unknown cell id " + std::to_string(t) +
                                            " in document " + doc.id);
  }
}

std::string dot_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out;
}

}  // namespace

std::vector<VizDoc> parse_predictions(const std::string& json) {
  nlohmann::ordered_json root;
  try {
    root = nlohmann::ordered_json::parse(json);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrKind::Parse, std::string("predictions: ") + e.what());
  }
  if (!root.is_object() || !root.contains("documents") || !root["documents"].is_array())
    throw Error(ErrKind::Schema, "predictions: missing 'documents' array");
  std::vector<VizDoc> out;
  for (const auto& jd : root["documents"]) {
    VizDoc vd;
    if (!jd.contains("id")) throw Error(ErrKind::Schema, "predictions: document without 'id'");
    vd.doc_id = jd["id"].is_string() ? jd["id"].get<std::string>()
                                     : std::to_string(jd["id"].get<int64_t>());
    if (jd.contains("cells"))
      for (const auto& jc : jd["cells"]) {
        int64_t cid = jc.at("id").get<int64_t>();
        std::string label = jc.contains("label") && jc["label"].is_string()
                                ? jc["label"].get<std::string>()
                                : "";
        vd.labels[cid] = label;
      }
    if (jd.contains("relations"))
      for (const auto& jr : jd["relations"]) {
        double prob = jr.contains("prob") ? jr["prob"].get<double>() : 1.0;
        vd.relations.push_back({jr.at("head").get<int64_t>(), jr.at("tail").get<int64_t>(), prob});
      }
    out.push_back(std::move(vd));
  }
  return out;
}

std::string render_svg(const Document& doc, const VizDoc& pred) {
  check_ids(doc, pred);
  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << doc.img.width << "\" height=\""
     << doc.img.height << "\" viewBox=\"0 0 " << doc.img.width << " " << doc.img.height << "\">\n";
  os << "  <defs>\n"
     << "    <marker id=\"arrow\" viewBox=\"0 0 8 8\" refX=\"7\" refY=\"4\" markerWidth=\"7\" "
        "markerHeight=\"7\" orient=\"auto\">\n"
     << "      <path d=\"M0,0 L8,4 L0,8 z\" fill=\"#e06c00\"/>\n"
     << "    </marker>\n"
     << "  </defs>\n";
  for (const auto& cell : doc.cells) {
    std::string label;
    auto it = pred.labels.find(cell.id);
    if (it != pred.labels.end()) label = it->second;
    os << "  <rect x=\"" << cell.bbox.x0 << "\" y=\"" << cell.bbox.y0 << "\" width=\""
       << (cell.bbox.x1 - cell.bbox.x0) << "\" height=\"" << (cell.bbox.y1 - cell.bbox.y0)
       << "\" fill=\"none\" stroke=\"" << label_color(label) << "\" stroke-width=\"2\"/>\n";
  }
  for (const auto& [h, t, prob] : pred.relations) {
    const Cell* hc = doc.cell_by_id(h);
    const Cell* tc = doc.cell_by_id(t);
    double x1 = (hc->bbox.x0 + hc->bbox.x1) / 2.0;
    double y1 = (hc->bbox.y0 + hc->bbox.y1) / 2.0;
    double x2 = (tc->bbox.x0 + tc->bbox.x1) / 2.0;
    double y2 = (tc->bbox.y0 + tc->bbox.y1) / 2.0;
    os << "  <line x1=\"" << x1 << "\" y1=\"" << y1 << "\" x2=\"" << x2 << "\" y2=\"" << y2
       << "\" stroke=\"#e06c00\" stroke-width=\"1.5\" marker-end=\"url(#arrow)\"/>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::string render_dot(const Document& doc, const VizDoc& pred) {
  check_ids(doc, pred);
  std::ostringstream os;
  os << "digraph form {\n";
  os << "  rankdir=LR;\n";
  for (const auto& cell : doc.cells) {
    std::string label;
    auto it = pred.labels.find(cell.id);
    if (it != pred.labels.end()) label = it->second;
    std::string text = cell.text.size() > 24 ? cell.text.substr(0, 24) + "..." : cell.text;
    os << "  n" << cell.id << " [label=\"" << dot_escape(text) << "\\n(" << dot_escape(label)
       << ")\" color=\"" << label_color(label) << "\"];\n";
  }
  for (const auto& [h, t, prob] : pred.relations)
    os << "  n" << h << " -> n" << t << ";\n";
  os << "}\n";
  return os.str();
}

}  // namespace xfp
