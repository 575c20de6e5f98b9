#include "xformparser/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"

namespace xfp {

using ordered_json = nlohmann::ordered_json;

const char* err_kind_name(ErrKind kind) {
  switch (kind) {
    case ErrKind::Usage: return "usage";
    case ErrKind::Io: return "io";
    case ErrKind::Parse: return "parse";
    case ErrKind::Schema: return "schema";
    case ErrKind::Referential: return "referential";
    case ErrKind::Validation: return "validation";
    case ErrKind::Contract: return "contract";
    case ErrKind::Format: return "format";
    case ErrKind::Diverged: return "diverged";
    case ErrKind::Internal: return "internal";
  }
  return "unknown";
}

const Cell* Document::cell_by_id(int64_t id) const {
  for (const auto& c : cells)
    if (c.id == id) return &c;
  return nullptr;
}

namespace {

std::string to_upper(std::string s) {
  for (char& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

std::string to_lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

}  // namespace

LabelSet::LabelSet(std::string name, std::vector<std::string> names,
                   std::vector<std::string> head_capable, std::vector<std::string> tail_capable,
                   std::string outside)
    : name_(std::move(name)),
      names_(std::move(names)),
      heads_(std::move(head_capable)),
      tails_(std::move(tail_capable)),
      outside_(std::move(outside)) {
  if (names_.empty()) throw Error(ErrKind::Contract, "LabelSet: names must be non-empty");
  std::set<std::string> seen(names_.begin(), names_.end());
  if (seen.size() != names_.size()) throw Error(ErrKind::Contract, "LabelSet: duplicate label names");
  outside_idx_ = index_of(outside_);
  if (outside_idx_ < 0) throw Error(ErrKind::Contract, "LabelSet: outside label not in names");
}

LabelSet LabelSet::xfund() {
  return LabelSet("xfund", {"HEADER", "QUESTION", "ANSWER", "OTHER"}, {"QUESTION"}, {"ANSWER"},
                  "OTHER");
}

LabelSet LabelSet::indform() {
  // OTHER carries the BIO tag O; SINGLE and ANSWERNUM are ordinary span classes.
  return LabelSet("indform", {"SINGLE", "QUESTION", "ANSWER", "ANSWERNUM", "OTHER"}, {"QUESTION"},
                  {"ANSWER", "ANSWERNUM"}, "OTHER");
}

LabelSet LabelSet::by_name(const std::string& name) {
  if (name == "xfund") return xfund();
  if (name == "indform") return indform();
  throw Error(ErrKind::Usage, "unknown label set '" + name + "' (expected xfund or indform)");
}

int LabelSet::index_of(const std::string& label) const {
  for (size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == label) return static_cast<int>(i);
  return -1;
}

bool LabelSet::head_capable(const std::string& label) const {
  return std::find(heads_.begin(), heads_.end(), label) != heads_.end();
}

bool LabelSet::tail_capable(const std::string& label) const {
  return std::find(tails_.begin(), tails_.end(), label) != tails_.end();
}

int LabelSet::bio_tag(int label_idx, bool first_token) const {
  if (label_idx == outside_idx_) return 0;
  int k = 0;
  for (int i = 0; i < label_idx; ++i)
    if (i != outside_idx_) ++k;
  return 1 + 2 * k + (first_token ? 0 : 1);
}

int LabelSet::label_of_bio(int tag) const {
  if (tag == 0) return outside_idx_;
  int k = (tag - 1) / 2;
  int seen = 0;
  for (int i = 0; i < num_labels(); ++i) {
    if (i == outside_idx_) continue;
    if (seen == k) return i;
    ++seen;
  }
  throw Error(ErrKind::Contract, "label_of_bio: tag out of range " + std::to_string(tag));
}

std::string LabelSet::bio_tag_name(int tag) const {
  if (tag == 0) return "O";
  return std::string(bio_is_begin(tag) ? "B-" : "I-") + names_[static_cast<size_t>(label_of_bio(tag))];
}

int64_t Vocab::id_of(const std::string& tok) const {
  auto it = ids.find(tok);
  return it == ids.end() ? kUnk : it->second;
}

void Vocab::rebuild_index() {
  ids.clear();
  for (size_t i = 0; i < tokens.size(); ++i) ids[tokens[i]] = static_cast<int64_t>(i);
}

namespace {

int64_t require_int(const ordered_json& j, const std::string& key, const std::string& where) {
  if (!j.contains(key))
    throw Error(ErrKind::Schema, where + ": missing '" + key + "'");
  const auto& v = j.at(key);
  if (!v.is_number_integer())
    throw Error(ErrKind::Schema, where + ": '" + key + "' must be an integer");
  return v.get<int64_t>();
}

std::string require_string(const ordered_json& j, const std::string& key, const std::string& where) {
  if (!j.contains(key))
    throw Error(ErrKind::Schema, where + ": missing '" + key + "'");
  const auto& v = j.at(key);
  if (!v.is_string())
    throw Error(ErrKind::Schema, where + ": '" + key + "' must be a string");
  return v.get<std::string>();
}

std::string id_to_string(const ordered_json& v, const std::string& where) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<int64_t>());
  throw Error(ErrKind::Schema, where + ": 'id' must be a string or integer");
}

BBox read_box(const ordered_json& v, const std::string& where, std::vector<std::string>* notes) {
  if (!v.is_array() || v.size() != 4)
    throw Error(ErrKind::Schema, where + ": 'box' must be a 4-int array");
  int64_t c[4];
  for (size_t i = 0; i < 4; ++i) {
    if (!v[i].is_number_integer())
      throw Error(ErrKind::Schema, where + ": 'box' must be a 4-int array");
    c[i] = v[i].get<int64_t>();
  }
  BBox b{c[0], c[1], c[2], c[3]};
  bool fixed = false;
  for (int64_t* p : {&b.x0, &b.y0, &b.x1, &b.y1}) {
    if (*p < 0) {
      *p = 0;
      fixed = true;
    }
  }
  if (b.x1 < b.x0) {
    std::swap(b.x0, b.x1);
    fixed = true;
  }
  if (b.y1 < b.y0) {
    std::swap(b.y0, b.y1);
    fixed = true;
  }
  if (fixed && notes) notes->push_back(where + ": box coordinates clamped/reordered");
  return b;
}

void read_linking(const ordered_json& v, const std::string& where, std::vector<Relation>* out) {
  if (!v.is_array())
    throw Error(ErrKind::Schema, where + ": 'linking' must be an array of [head,tail] pairs");
  for (const auto& pair : v) {
    if (!pair.is_array() || pair.size() != 2 || !pair[0].is_number_integer() ||
        !pair[1].is_number_integer())
      throw Error(ErrKind::Schema, where + ": 'linking' must be an array of [head,tail] pairs");
    out->push_back(Relation{pair[0].get<int64_t>(), pair[1].get<int64_t>()});
  }
}

}  // namespace

std::vector<Document> parse_dataset(std::string_view json_bytes, const LabelSet* labels,
                                    std::vector<std::string>* notes) {
  ordered_json root;
  try {
    root = ordered_json::parse(json_bytes);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrKind::Parse, "JSON parse error at byte " + std::to_string(e.byte) + ": " + e.what());
  }
  if (!root.is_object()) throw Error(ErrKind::Schema, "top level must be an object");
  if (!root.contains("documents") || !root.at("documents").is_array())
    throw Error(ErrKind::Schema, "top level: missing 'documents' array");

  std::string lang = root.contains("lang") && root["lang"].is_string() ? root["lang"].get<std::string>() : "en";
  std::string split = root.contains("split") && root["split"].is_string() ? root["split"].get<std::string>() : "train";

  std::vector<Document> docs;
  size_t doc_idx = 0;
  for (const auto& jd : root.at("documents")) {
    std::string dwhere = "document " + std::to_string(doc_idx);
    if (!jd.is_object()) throw Error(ErrKind::Schema, dwhere + ": must be an object");
    Document doc;
    doc.lang = lang;
    doc.split = split;
    doc.id = jd.contains("id") ? id_to_string(jd.at("id"), dwhere) : std::to_string(doc_idx);
    if (!doc.id.empty()) dwhere += " (" + doc.id + ")";

    const ordered_json* jcells = nullptr;
    if (jd.contains("cells") && jd.at("cells").is_array()) jcells = &jd.at("cells");
    else if (jd.contains("document") && jd.at("document").is_array()) jcells = &jd.at("document");
    if (!jcells) throw Error(ErrKind::Schema, dwhere + ": missing 'cells' array");

    if (!jd.contains("img") || !jd.at("img").is_object())
      throw Error(ErrKind::Schema, dwhere + ": missing 'img' object");
    const auto& jimg = jd.at("img");
    doc.img.fname = require_string(jimg, "fname", dwhere + " img");
    doc.img.width = require_int(jimg, "width", dwhere + " img");
    doc.img.height = require_int(jimg, "height", dwhere + " img");
    if (doc.img.width <= 0 || doc.img.height <= 0)
      throw Error(ErrKind::Schema, dwhere + ": img dimensions must be positive");

    std::vector<Relation> raw_relations;
    std::set<int64_t> ids_seen;
    size_t cell_idx = 0;
    for (const auto& jc : *jcells) {
      std::string cwhere = dwhere + " cell " + std::to_string(cell_idx);
      if (!jc.is_object()) throw Error(ErrKind::Schema, cwhere + ": must be an object");
      Cell cell;
      cell.id = require_int(jc, "id", cwhere);
      if (cell.id < 0) throw Error(ErrKind::Schema, cwhere + ": 'id' must be non-negative");
      if (!ids_seen.insert(cell.id).second)
        throw Error(ErrKind::Schema, cwhere + ": duplicate cell id " + std::to_string(cell.id));
      cell.text = require_string(jc, "text", cwhere);
      std::string raw_label = require_string(jc, "label", cwhere);
      cell.label = to_upper(raw_label);
      if (labels && labels->index_of(cell.label) < 0)
        throw Error(ErrKind::Schema, cwhere + ": unknown label '" + raw_label + "'");
      if (!jc.contains("box")) throw Error(ErrKind::Schema, cwhere + ": missing 'box'");
      cell.bbox = read_box(jc.at("box"), cwhere, notes);
      if (jc.contains("linking")) read_linking(jc.at("linking"), cwhere, &raw_relations);
      doc.cells.push_back(std::move(cell));
      ++cell_idx;
    }
    // Document-level relation list variant.
    for (const char* key : {"relations", "linking"}) {
      if (jd.contains(key) && jd.at(key).is_array())
        read_linking(jd.at(key), dwhere, &raw_relations);
    }

    std::sort(doc.cells.begin(), doc.cells.end(), [](const Cell& a, const Cell& b) { return a.id < b.id; });

    // Dedupe (the same pair is commonly listed on both endpoint cells) and
    // canonicalize order.
    std::set<std::pair<int64_t, int64_t>> uniq;
    for (const auto& r : raw_relations) {
      if (r.head_id == r.tail_id)
        throw Error(ErrKind::Schema, dwhere + ": linking pair [" + std::to_string(r.head_id) + "," +
                                         std::to_string(r.tail_id) + "] links a cell to itself");
      if (!ids_seen.count(r.head_id) || !ids_seen.count(r.tail_id))
        throw Error(ErrKind::Referential,
                    dwhere + ": linking refers to unknown cell id " +
                        std::to_string(ids_seen.count(r.head_id) ? r.tail_id : r.head_id));
      uniq.insert({r.head_id, r.tail_id});
    }
    for (const auto& [h, t] : uniq) doc.relations.push_back(Relation{h, t});
    docs.push_back(std::move(doc));
    ++doc_idx;
  }
  return docs;
}

std::string serialize_dataset(const std::vector<Document>& docs, const std::string& lang_hint,
                              const std::string& split_hint) {
  std::string lang = !lang_hint.empty() ? lang_hint : (docs.empty() ? "en" : docs[0].lang);
  std::string split = !split_hint.empty() ? split_hint : (docs.empty() ? "train" : docs[0].split);
  ordered_json root;
  root["lang"] = lang;
  root["version"] = "0.1";
  root["split"] = split;
  root["documents"] = ordered_json::array();
  for (const auto& doc : docs) {
    ordered_json jd;
    jd["id"] = doc.id;
    jd["cells"] = ordered_json::array();
    std::map<int64_t, std::vector<std::pair<int64_t, int64_t>>> by_head;
    for (const auto& r : doc.relations) by_head[r.head_id].push_back({r.head_id, r.tail_id});
    for (const auto& cell : doc.cells) {
      ordered_json jc;
      jc["box"] = {cell.bbox.x0, cell.bbox.y0, cell.bbox.x1, cell.bbox.y1};
      jc["text"] = cell.text;
      jc["label"] = to_lower(cell.label);
      jc["id"] = cell.id;
      ordered_json linking = ordered_json::array();
      auto it = by_head.find(cell.id);
      if (it != by_head.end()) {
        std::sort(it->second.begin(), it->second.end());
        for (const auto& [h, t] : it->second) linking.push_back({h, t});
      }
      jc["linking"] = std::move(linking);
      jd["cells"].push_back(std::move(jc));
    }
    ordered_json jimg;
    jimg["fname"] = doc.img.fname;
    jimg["width"] = doc.img.width;
    jimg["height"] = doc.img.height;
    jd["img"] = std::move(jimg);
    root["documents"].push_back(std::move(jd));
  }
  return root.dump(2) + "\n";
}

std::vector<Violation> validate(const Document& doc, const LabelSet& labels) {
  std::vector<Violation> out;
  auto add = [&](const std::string& code, const std::string& where, const std::string& detail) {
    out.push_back(Violation{code, where, detail});
  };

  if (doc.img.width <= 0 || doc.img.height <= 0)
    add("BadPageDim", "img", "page dimensions must be positive");

  std::set<int64_t> ids;
  for (size_t i = 0; i < doc.cells.size(); ++i) {
    const Cell& c = doc.cells[i];
    std::string where = "cell " + std::to_string(i);
    if (!ids.insert(c.id).second) add("DuplicateCellId", where, "id " + std::to_string(c.id));
    if (i > 0 && doc.cells[i - 1].id > c.id)
      add("CellsUnordered", where, "cells must be in ascending id order");
    if (labels.index_of(c.label) < 0) add("UnknownLabel", where, "label '" + c.label + "'");
    if (c.bbox.x0 < 0 || c.bbox.y0 < 0 || c.bbox.x1 < 0 || c.bbox.y1 < 0)
      add("BoxNegative", where, "box has negative coordinates");
    if (c.bbox.x1 < c.bbox.x0 || c.bbox.y1 < c.bbox.y0)
      add("BoxInverted", where, "box corners are inverted");
  }

  for (size_t i = 0; i < doc.relations.size(); ++i) {
    const Relation& r = doc.relations[i];
    std::string where = "relation " + std::to_string(i);
    if (r.head_id == r.tail_id) {
      add("SelfLink", where, "head equals tail (" + std::to_string(r.head_id) + ")");
      continue;
    }
    const Cell* head = doc.cell_by_id(r.head_id);
    const Cell* tail = doc.cell_by_id(r.tail_id);
    if (!head) add("DanglingId", where, "head id " + std::to_string(r.head_id) + " not found");
    if (!tail) add("DanglingId", where, "tail id " + std::to_string(r.tail_id) + " not found");
    if (head && labels.index_of(head->label) >= 0 && !labels.head_capable(head->label))
      add("HeadNotCapable", where, "label '" + head->label + "' cannot head a relation");
    if (tail && labels.index_of(tail->label) >= 0 && !labels.tail_capable(tail->label))
      add("TailNotCapable", where, "label '" + tail->label + "' cannot tail a relation");
  }
  return out;
}

NormBox normalize_bbox(const BBox& b, int64_t page_w, int64_t page_h,
                       std::vector<std::string>* notes) {
  if (page_w <= 0 || page_h <= 0)
    throw Error(ErrKind::Contract, "normalize_bbox: page dimensions must be positive");
  auto bucket = [&](double v, int64_t extent, const char* what) {
    int64_t r = static_cast<int64_t>(std::llround(1000.0 * v / static_cast<double>(extent)));
    if (r < 0) {
      if (notes) notes->push_back(std::string("normalize_bbox: ") + what + " clamped to 0");
      return static_cast<int64_t>(0);
    }
    if (r > 1000) {
      if (notes) notes->push_back(std::string("normalize_bbox: ") + what + " clamped to 1000");
      return static_cast<int64_t>(1000);
    }
    return r;
  };
  NormBox nb;
  nb.x = bucket(static_cast<double>(b.x0), page_w, "x");
  nb.y = bucket(static_cast<double>(b.y0), page_h, "y");
  nb.w = bucket(static_cast<double>(b.x1 - b.x0), page_w, "w");
  nb.h = bucket(static_cast<double>(b.y1 - b.y0), page_h, "h");
  return nb;
}

std::vector<std::string> split_text(const std::string& text) {
  std::vector<std::string> out;
  size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i >= text.size()) break;
    size_t j = i;
    bool ascii = true;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) {
      if (static_cast<unsigned char>(text[j]) >= 0x80) ascii = false;
      ++j;
    }
    std::string chunk = text.substr(i, j - i);
    if (ascii) {
      out.push_back(std::move(chunk));
    } else {
      // Split into single UTF-8 code points.
      size_t k = 0;
      while (k < chunk.size()) {
        unsigned char c = static_cast<unsigned char>(chunk[k]);
        size_t len = c < 0x80 ? 1 : (c >> 5) == 0x6 ? 2 : (c >> 4) == 0xe ? 3 : (c >> 3) == 0x1e ? 4 : 1;
        len = std::min(len, chunk.size() - k);
        out.push_back(chunk.substr(k, len));
        k += len;
      }
    }
    i = j;
  }
  return out;
}

TokenizedDocument tokenize(const Document& doc, const Vocab& vocab, const LabelSet& labels,
                           int64_t max_len) {
  TokenizedDocument td;
  bool truncated = false;
  for (const Cell& cell : doc.cells) {
    if (truncated) break;
    int label_idx = labels.index_of(cell.label);
    if (label_idx < 0)
      throw Error(ErrKind::Schema, "tokenize: unknown label '" + cell.label + "' on cell " +
                                       std::to_string(cell.id));
    std::vector<std::string> toks = split_text(cell.text);
    if (td.num_tokens() + static_cast<int64_t>(toks.size()) > max_len) {
      td.warnings.push_back("document " + doc.id + ": truncated at cell " + std::to_string(cell.id) +
                            " (max sequence length " + std::to_string(max_len) + ")");
      truncated = true;
      break;
    }
    NormBox nb = normalize_bbox(cell.bbox, doc.img.width, doc.img.height, nullptr);
    bool first = true;
    for (auto& tok : toks) {
      td.token_ids.push_back(vocab.id_of(tok));
      td.token_texts.push_back(tok);
      td.token_cell.push_back(cell.id);
      td.bio_tags.push_back(labels.bio_tag(label_idx, first));
      td.boxes.push_back(nb);
      td.positions.push_back(td.num_tokens() - 1);
      first = false;
    }
    td.kept_cell_ids.push_back(cell.id);
  }
  return td;
}

Vocab build_vocab(const std::vector<Document>& docs, int64_t min_count) {
  if (min_count < 1) throw Error(ErrKind::Contract, "build_vocab: min_count must be >= 1");
  std::map<std::string, int64_t> counts;
  for (const auto& doc : docs)
    for (const auto& cell : doc.cells)
      for (auto& tok : split_text(cell.text)) ++counts[tok];

  std::vector<std::pair<std::string, int64_t>> items(counts.begin(), counts.end());
  std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  Vocab v;
  v.tokens = {"[PAD]", "[UNK]", "[CLS]", "[SEP]"};
  for (auto& [tok, cnt] : items)
    if (cnt >= min_count) v.tokens.push_back(tok);
  v.rebuild_index();
  return v;
}

LabelSet detect_label_set(const std::vector<Document>& docs) {
  for (const auto& doc : docs)
    for (const auto& cell : doc.cells)
      if (cell.label == "SINGLE" || cell.label == "ANSWERNUM") return LabelSet::indform();
  return LabelSet::xfund();
}

}  // namespace xfp
