#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "xformparser/common.hpp"

namespace xfp {

// Pixel box, origin at the page top-left.
struct BBox {
  int64_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;
};

struct Cell {
  int64_t id = 0;
  std::string text;
  BBox bbox;
  std::string label;                  // canonical upper-case name
  std::optional<BBox> visual_region;  // hook for real image crops; unset -> bbox
};

// Stored as (head = question entity, tail = answer entity), matching the
// linking order of the dataset format.
struct Relation {
  int64_t head_id = 0;
  int64_t tail_id = 0;
  bool operator==(const Relation&) const = default;
};

struct PageImage {
  std::string fname;
  int64_t width = 0;
  int64_t height = 0;
};

struct Document {
  std::string id;
  std::string lang = "en";
  std::string split = "train";
  std::vector<Cell> cells;  // ascending id == reading order
  std::vector<Relation> relations;
  PageImage img;

  const Cell* cell_by_id(int64_t id) const;
};

// Label inventory plus which classes may act as relation heads/tails and
// which one maps to the BIO tag O.
class LabelSet {
 public:
  LabelSet(std::string name, std::vector<std::string> names, std::vector<std::string> head_capable,
           std::vector<std::string> tail_capable, std::string outside);

  static LabelSet xfund();
  static LabelSet indform();
  static LabelSet by_name(const std::string& name);  // "xfund" | "indform"

  const std::string& name() const { return name_; }
  const std::vector<std::string>& names() const { return names_; }
  int num_labels() const { return static_cast<int>(names_.size()); }
  int index_of(const std::string& label) const;  // -1 when unknown
  const std::string& label_name(int idx) const { return names_[static_cast<size_t>(idx)]; }
  bool head_capable(const std::string& label) const;
  bool tail_capable(const std::string& label) const;
  const std::string& outside() const { return outside_; }
  int outside_index() const { return outside_idx_; }

  // BIO tag space: O = 0, then B-X/I-X per non-outside label in names order.
  int num_bio_tags() const { return 1 + 2 * (num_labels() - 1); }
  int bio_tag(int label_idx, bool first_token) const;
  int label_of_bio(int tag) const;
  std::string bio_tag_name(int tag) const;
  bool bio_is_begin(int tag) const { return tag > 0 && (tag & 1) == 1; }
  bool bio_is_inside(int tag) const { return tag > 0 && (tag & 1) == 0; }

 private:
  std::string name_;
  std::vector<std::string> names_;
  std::vector<std::string> heads_;
  std::vector<std::string> tails_;
  std::string outside_;
  int outside_idx_ = -1;
};

struct Violation {
  std::string code;    // SelfLink, DanglingId, DuplicateCellId, UnknownLabel, ...
  std::string where;   // "cell 3", "relation 0", "img", ...
  std::string detail;
};

struct Vocab {
  static constexpr int64_t kPad = 0, kUnk = 1, kCls = 2, kSep = 3;
  std::vector<std::string> tokens;  // index == id, specials first
  std::unordered_map<std::string, int64_t> ids;

  int64_t size() const { return static_cast<int64_t>(tokens.size()); }
  int64_t id_of(const std::string& tok) const;
  void rebuild_index();
};

struct NormBox {
  int64_t x = 0, y = 0, w = 0, h = 0;  // each in 0..1000
};

struct TokenizedDocument {
  std::vector<int64_t> token_ids;
  std::vector<std::string> token_texts;
  std::vector<int64_t> token_cell;  // owning cell id
  std::vector<int64_t> bio_tags;
  std::vector<NormBox> boxes;       // the owning cell's normalized box
  std::vector<int64_t> positions;   // 0..n-1
  std::vector<int64_t> kept_cell_ids;
  std::vector<std::string> warnings;

  int64_t num_tokens() const { return static_cast<int64_t>(token_ids.size()); }
};

// ---- operations ----

// Parses the dataset JSON (lang/version/split/documents). Structural problems
// throw; box coordinates are clamped/reordered with a note appended to
// *notes. When labels is given, label names are checked against it.
std::vector<Document> parse_dataset(std::string_view json_bytes, const LabelSet* labels = nullptr,
                                    std::vector<std::string>* notes = nullptr);

// Inverse of parse_dataset; key order is fixed (lang, version, split,
// documents) and linking is emitted on the head cell.
std::string serialize_dataset(const std::vector<Document>& docs,
                              const std::string& lang_hint = "",
                              const std::string& split_hint = "");

std::vector<Violation> validate(const Document& doc, const LabelSet& labels);

NormBox normalize_bbox(const BBox& b, int64_t page_w, int64_t page_h,
                       std::vector<std::string>* notes = nullptr);

// Whitespace split, then any chunk containing a non-ASCII byte is split into
// single UTF-8 code points.
std::vector<std::string> split_text(const std::string& text);

TokenizedDocument tokenize(const Document& doc, const Vocab& vocab, const LabelSet& labels,
                           int64_t max_len = 512);

Vocab build_vocab(const std::vector<Document>& docs, int64_t min_count = 1);

// xfund unless SINGLE/ANSWERNUM labels are present.
LabelSet detect_label_set(const std::vector<Document>& docs);

}  // namespace xfp
