#include "xformparser/syngen.hpp"

#include <algorithm>

#include "json.hpp"
#include "xformparser/rng.hpp"

namespace xfp {

namespace {

constexpr uint64_t kDocStream = 0x5947;  // per-document seed stream tag

struct Unit {
  int64_t answers = 1;  // chain length; 1 unless the head is one-to-many
};

std::string sample_text(rng::Xoshiro256& g, const std::vector<std::string>& pool, int64_t lo,
                        int64_t hi) {
  int64_t n = g.range(lo, hi);
  std::string out;
  for (int64_t i = 0; i < n; ++i) {
    if (i) out += ' ';
    out += pool[static_cast<size_t>(g.below(pool.size()))];
  }
  return out;
}

// Serial-style value ("k7x42"): never repeats across the corpus, so held-out
// documents see it as an unknown token.
std::string serial_token(rng::Xoshiro256& g) {
  static const char alphabet[] = "abcdefghijklmnopqrstuvwxyz0123456789";
  std::string out;
  int64_t len = g.range(4, 7);
  for (int64_t i = 0; i < len; ++i) out += alphabet[g.below(sizeof(alphabet) - 1)];
  return out;
}

}  // namespace

std::map<std::string, std::vector<std::string>> SynSpec::default_pools(const std::string& label_set) {
  std::map<std::string, std::vector<std::string>> p;
  p["QUESTION"] = {"name",  "date",    "phone",  "address", "city",   "state",  "total",
                   "email", "title",   "amount", "company", "country", "zip",   "status",
                   "manager", "account", "order", "invoice", "tax",    "branch"};
  p["ANSWER"] = {"alice", "bob",   "carol",  "david",    "emma",  "frank",  "grace", "henry",
                 "iris",  "jack",  "acme",   "globex",   "north", "south",  "east",  "west",
                 "main",  "oak",   "elm",    "park",     "2019",  "2020",   "2021",  "2022",
                 "2023",  "march", "june",   "october",  "blue",  "green"};
  p["OTHER"] = {"page", "confidential", "draft", "internal", "continued", "appendix"};
  if (label_set == "indform") {
    p["SINGLE"] = {"approved", "rejected", "pending", "complete", "verified", "archived"};
    p["ANSWERNUM"] = {"100", "2048", "73", "901", "5500", "12", "360", "88", "4070", "625"};
  } else {
    p["HEADER"] = {"employee", "record", "form", "annual", "report", "summary", "intake",
                   "registration", "survey", "audit"};
  }
  return p;
}

void SynSpec::check() const {
  if (num_docs < 1) throw Error(ErrKind::Usage, "syngen: num_docs must be >= 1");
  if (one_to_many_frac < 0.0 || one_to_many_frac > 1.0)
    throw Error(ErrKind::Usage, "syngen: one-to-many fraction must be in [0,1]");
  if (other_frac < 0.0 || other_frac > 1.0)
    throw Error(ErrKind::Usage, "syngen: other fraction must be in [0,1]");
  if (unique_token_frac < 0.0 || unique_token_frac > 1.0)
    throw Error(ErrKind::Usage, "syngen: unique token fraction must be in [0,1]");
  if (rows_min < 1 || rows_max < rows_min || cols_min < 1 || cols_max < cols_min)
    throw Error(ErrKind::Usage, "syngen: invalid grid ranges");
  if (page_w < 100 || page_h < 100) throw Error(ErrKind::Usage, "syngen: page too small");
  if (label_set != "xfund" && label_set != "indform")
    throw Error(ErrKind::Usage, "syngen: label set must be xfund or indform");
  for (const auto& [label, pool] : pools)
    if (pool.empty()) throw Error(ErrKind::Usage, "syngen: empty pool for label " + label);
}

std::vector<Document> generate(const SynSpec& spec) {
  spec.check();
  auto pools = spec.pools.empty() ? SynSpec::default_pools(spec.label_set) : spec.pools;
  auto pool = [&](const std::string& label) -> const std::vector<std::string>& {
    auto it = pools.find(label);
    if (it == pools.end() || it->second.empty())
      throw Error(ErrKind::Usage, "syngen: missing pool for label " + label);
    return it->second;
  };
  const bool indform = spec.label_set == "indform";

  std::vector<Document> docs;
  docs.reserve(static_cast<size_t>(spec.num_docs));
  for (int64_t di = 0; di < spec.num_docs; ++di) {
    rng::Xoshiro256 g(rng::derive(spec.seed, kDocStream, static_cast<uint64_t>(di)));
    Document doc;
    doc.id = spec.label_set + "_" + spec.split + "_" + std::to_string(di);
    doc.lang = spec.lang;
    doc.split = spec.split;
    doc.img.fname = doc.id + ".png";
    doc.img.width = spec.page_w;
    doc.img.height = spec.page_h;

    int64_t rows = g.range(spec.rows_min, spec.rows_max);
    int64_t cols = g.range(spec.cols_min, spec.cols_max);
    const int64_t margin = 60;
    const int64_t top = 96;
    const int64_t row_h = 56;
    const int64_t row_gap = 20;
    int64_t slot_w = (spec.page_w - 2 * margin) / cols;

    // Plan the question units up front so the one-to-many rate tracks the
    // spec regardless of how rows fill up.
    std::vector<Unit> units;
    for (int64_t i = 0; i < rows * cols; ++i) {
      Unit u;
      if (g.bernoulli(spec.one_to_many_frac)) u.answers = g.bernoulli(0.8) ? 2 : 3;
      units.push_back(u);
    }

    int64_t next_id = 0;
    auto place_cell = [&](const std::string& label, const std::string& text, int64_t row,
                          int64_t slot) {
      int64_t sx = margin + slot * slot_w;
      int64_t sy = top + row * (row_h + row_gap);
      BBox b;
      b.x0 = sx + g.range(2, 10);
      int64_t w = static_cast<int64_t>(static_cast<double>(slot_w) * g.uniform(0.55, 0.9));
      b.x1 = std::min(b.x0 + std::max<int64_t>(w, 24), sx + slot_w - 2);
      b.y0 = sy + g.range(0, 8);
      b.y1 = b.y0 + g.range(26, 40);
      Cell c;
      c.id = next_id++;
      c.text = text;
      c.bbox = b;
      c.label = label;
      doc.cells.push_back(std::move(c));
      return doc.cells.back().id;
    };

    // Header band (xfund only); occupies its own space above the grid.
    if (!indform && g.bernoulli(0.8)) {
      int64_t hw = g.range(260, 520);
      Cell c;
      c.id = next_id++;
      c.text = sample_text(g, pool("HEADER"), 1, 3);
      c.bbox = BBox{margin + g.range(0, 120), 24, 0, 0};
      c.bbox.x1 = c.bbox.x0 + hw;
      c.bbox.y1 = c.bbox.y0 + g.range(30, 44);
      c.label = "HEADER";
      doc.cells.push_back(std::move(c));
    }

    size_t unit_idx = 0;
    int64_t units_placed = 0;
    auto place_other = [&](int64_t r, int64_t slot) {
      std::string label = "OTHER";
      if (indform && g.bernoulli(0.5)) label = "SINGLE";
      place_cell(label, sample_text(g, pool(label), 1, 2), r, slot);
    };
    for (int64_t r = 0; r < rows; ++r) {
      int64_t slot = 0;
      while (slot < cols) {
        if (unit_idx >= units.size()) {
          if (g.bernoulli(spec.other_frac)) {
            place_other(r, slot++);
            continue;
          }
          break;
        }
        Unit u = units[unit_idx];
        if (cols >= 2 && u.answers > cols - 1) u.answers = cols - 1;  // chain capped by row width
        int64_t need = 1 + u.answers;
        // Distractor cells break strict alternation, but never starve a unit.
        if (slot + 1 + need <= cols && g.bernoulli(spec.other_frac)) place_other(r, slot++);
        if (slot + need > cols) {
          // row remainder sometimes gets a distractor before wrapping
          if (slot < cols && g.bernoulli(spec.other_frac)) place_other(r, slot++);
          break;
        }
        ++unit_idx;
        int64_t qid = place_cell("QUESTION", sample_text(g, pool("QUESTION"), 1, 2), r, slot);
        ++slot;
        for (int64_t a = 0; a < u.answers; ++a) {
          std::string label = "ANSWER";
          if (indform && g.bernoulli(0.25)) label = "ANSWERNUM";
          std::string text = sample_text(g, pool(label), 1, 3);
          if (spec.unique_token_frac > 0.0 && g.bernoulli(spec.unique_token_frac))
            text += " " + serial_token(g);
          int64_t aid = place_cell(label, text, r, slot);
          ++slot;
          doc.relations.push_back(Relation{qid, aid});
        }
        ++units_placed;
      }
    }
    if (units_placed == 0)
      throw Error(ErrKind::Usage, "syngen: grid " + std::to_string(rows) + "x" + std::to_string(cols) +
                                      " too small for a question-answer pair");
    std::sort(doc.relations.begin(), doc.relations.end(), [](const Relation& a, const Relation& b) {
      return a.head_id != b.head_id ? a.head_id < b.head_id : a.tail_id < b.tail_id;
    });
    docs.push_back(std::move(doc));
  }
  return docs;
}

CorpusStats corpus_stats(const std::vector<Document>& docs) {
  CorpusStats s;
  s.total_docs = static_cast<int64_t>(docs.size());
  for (const auto& doc : docs) {
    s.total_cells += static_cast<int64_t>(doc.cells.size());
    for (const auto& c : doc.cells) ++s.label_counts[c.label];
    std::map<int64_t, int64_t> per_head;
    for (const auto& r : doc.relations) ++per_head[r.head_id];
    for (const auto& [head, n] : per_head) {
      const char* bucket = n == 1 ? "one-to-one" : n == 2 ? "one-to-two" : n == 3 ? "one-to-three"
                                                                                  : "one-to-many";
      s.relation_histogram[bucket] += n;  // counts relations, so totals reconcile
      s.total_relations += n;
    }
  }
  return s;
}

std::string stats_to_json(const CorpusStats& s) {
  nlohmann::ordered_json j;
  j["docs"] = s.total_docs;
  j["cells"] = s.total_cells;
  j["relations"] = s.total_relations;
  j["label_counts"] = nlohmann::ordered_json::object();
  for (const auto& [k, v] : s.label_counts) j["label_counts"][k] = v;
  j["relation_histogram"] = nlohmann::ordered_json::object();
  for (const char* k : {"one-to-one", "one-to-two", "one-to-three", "one-to-many"}) {
    auto it = s.relation_histogram.find(k);
    j["relation_histogram"][k] = it == s.relation_histogram.end() ? 0 : it->second;
  }
  return j.dump(2) + "\n";
}

}  // namespace xfp
