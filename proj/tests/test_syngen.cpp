#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <map>

#include "doctest.h"
#include "xformparser/syngen.hpp"

using namespace xfp;

TEST_CASE("identical spec yields byte-identical serialized datasets") {
  SynSpec spec;
  spec.seed = 7;
  spec.num_docs = 5;
  std::string a = serialize_dataset(generate(spec));
  std::string b = serialize_dataset(generate(spec));
  CHECK(a == b);
  CHECK(!a.empty());
}

TEST_CASE("one-to-many fraction zero means every head links exactly once") {
  SynSpec spec;
  spec.seed = 11;
  spec.num_docs = 20;
  spec.one_to_many_frac = 0.0;
  auto docs = generate(spec);
  for (const auto& doc : docs) {
    std::map<int64_t, int> per_head;
    for (const auto& r : doc.relations) ++per_head[r.head_id];
    for (const auto& cell : doc.cells) {
      if (cell.label != "QUESTION") continue;
      CHECK(per_head[cell.id] == 1);
    }
  }
}

TEST_CASE("a 1x1 grid cannot host a question-answer pair") {
  SynSpec spec;
  spec.seed = 3;
  spec.num_docs = 1;
  spec.rows_min = spec.rows_max = 1;
  spec.cols_min = spec.cols_max = 1;
  spec.other_frac = 0.0;
  try {
    generate(spec);
    FAIL("expected a generation error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrKind::Usage);
    CHECK(std::string(e.what()).find("too small") != std::string::npos);
  }
}

TEST_CASE("corpus_stats counts the three-cell fixture by hand") {
  Document d;
  d.id = "fix";
  d.img = {"fix.png", 300, 100};
  d.cells = {Cell{0, "name", BBox{10, 20, 110, 40}, "QUESTION", {}},
             Cell{1, "alice", BBox{120, 20, 200, 40}, "ANSWER", {}},
             Cell{2, "page", BBox{10, 60, 80, 80}, "OTHER", {}}};
  d.relations = {Relation{0, 1}};
  CorpusStats s = corpus_stats({d});
  CHECK(s.label_counts.at("QUESTION") == 1);
  CHECK(s.label_counts.at("ANSWER") == 1);
  CHECK(s.label_counts.at("OTHER") == 1);
  CHECK(s.relation_histogram.at("one-to-one") == 1);
  CHECK(s.total_relations == 1);
}

TEST_CASE("corpus_stats of an empty dataset is all zeros") {
  CorpusStats s = corpus_stats({});
  CHECK(s.total_docs == 0);
  CHECK(s.total_cells == 0);
  CHECK(s.total_relations == 0);
  CHECK(s.relation_histogram.empty());
}

TEST_CASE("histogram total equals the relation count on generated data") {
  SynSpec spec;
  spec.seed = 21;
  spec.num_docs = 30;
  spec.one_to_many_frac = 0.3;
  auto docs = generate(spec);
  CorpusStats s = corpus_stats(docs);
  int64_t hist_total = 0;
  for (const auto& [k, v] : s.relation_histogram) hist_total += v;
  int64_t rel_total = 0;
  for (const auto& d : docs) rel_total += static_cast<int64_t>(d.relations.size());
  CHECK(hist_total == rel_total);
  CHECK(s.total_relations == rel_total);
}

TEST_CASE("every generated document passes validate with zero violations") {
  for (const char* ls : {"xfund", "indform"}) {
    SynSpec spec;
    spec.seed = 77;
    spec.num_docs = 40;
    spec.label_set = ls;
    auto docs = generate(spec);
    LabelSet labels = LabelSet::by_name(ls);
    for (const auto& doc : docs) {
      auto v = validate(doc, labels);
      if (!v.empty()) {
        CAPTURE(doc.id);
        CAPTURE(v[0].code);
        CAPTURE(v[0].detail);
      }
      CHECK(v.empty());
    }
  }
}

TEST_CASE("questions sit left of or above their answers, boxes never overlap") {
  SynSpec spec;
  spec.seed = 5;
  spec.num_docs = 15;
  auto docs = generate(spec);
  for (const auto& doc : docs) {
    for (const auto& r : doc.relations) {
      const Cell* h = doc.cell_by_id(r.head_id);
      const Cell* t = doc.cell_by_id(r.tail_id);
      bool left_of = h->bbox.x1 <= t->bbox.x0;
      bool above = h->bbox.y1 <= t->bbox.y0;
      CHECK((left_of || above));
    }
    for (size_t i = 0; i < doc.cells.size(); ++i)
      for (size_t j = i + 1; j < doc.cells.size(); ++j) {
        const BBox& a = doc.cells[i].bbox;
        const BBox& b = doc.cells[j].bbox;
        bool disjoint = a.x1 <= b.x0 || b.x1 <= a.x0 || a.y1 <= b.y0 || b.y1 <= a.y0;
        CHECK(disjoint);
      }
  }
}

TEST_CASE("observed one-to-many fraction tracks the spec within 0.05") {
  SynSpec spec;
  spec.seed = 7;
  spec.num_docs = 120;
  spec.one_to_many_frac = 0.15;
  auto docs = generate(spec);
  int64_t heads = 0, multi = 0, relations = 0;
  for (const auto& doc : docs) {
    std::map<int64_t, int> per_head;
    for (const auto& r : doc.relations) ++per_head[r.head_id];
    for (const auto& [h, n] : per_head) {
      ++heads;
      if (n > 1) ++multi;
      relations += n;
    }
  }
  REQUIRE(relations >= 500);
  double observed = static_cast<double>(multi) / static_cast<double>(heads);
  CHECK(std::abs(observed - 0.15) <= 0.05);
}

TEST_CASE("indform documents carry the indform label inventory") {
  SynSpec spec;
  spec.seed = 13;
  spec.num_docs = 25;
  spec.label_set = "indform";
  auto docs = generate(spec);
  CorpusStats s = corpus_stats(docs);
  CHECK(s.label_counts.count("QUESTION"));
  CHECK(s.label_counts.count("ANSWER"));
  CHECK(s.label_counts.count("ANSWERNUM"));
  CHECK(!s.label_counts.count("HEADER"));
}
