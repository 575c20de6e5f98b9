#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdio>
#include <filesystem>

#include "doctest.h"
#include "xformparser/encoder.hpp"

using namespace xfp;
using namespace xfp::ad;

namespace {

// Hand-built token sequence; ids/boxes/positions are free to violate the
// corpus derivation so the encoder contracts can be probed directly.
TokenizedDocument make_td(std::vector<int64_t> ids, std::vector<NormBox> boxes,
                          std::vector<int64_t> positions) {
  TokenizedDocument td;
  td.token_ids = ids;
  td.boxes = boxes;
  td.positions = positions;
  for (size_t i = 0; i < ids.size(); ++i) {
    td.token_texts.push_back("t" + std::to_string(i));
    td.token_cell.push_back(static_cast<int64_t>(i));
    td.bio_tags.push_back(0);
    td.kept_cell_ids.push_back(static_cast<int64_t>(i));
  }
  return td;
}

struct Fixture {
  EncoderConfig cfg;
  ParameterStore store;
  rng::Xoshiro256 init{12345};
  ToyEncoder enc;

  explicit Fixture(int64_t d_model = 16, int64_t layers = 1, int64_t heads = 2)
      : cfg([&] {
          EncoderConfig c;
          c.d_model = d_model;
          c.layers = layers;
          c.heads = heads;
          c.max_len = 32;
          c.dropout = 0.0;
          return c;
        }()),
        enc(cfg, 50, store, init) {}
};

}  // namespace

TEST_CASE("identical text/box/position tokens embed identically") {
  Fixture f;
  NormBox nb{100, 200, 50, 30};
  TokenizedDocument td = make_td({7, 7}, {nb, nb}, {3, 3});
  Tape t;
  Var e = f.enc.embed(t, td);
  const Array& v = t.val(e);
  REQUIRE(v.rows() == 2);
  for (int64_t j = 0; j < v.cols(); ++j) CHECK(v.at(0, j) == v.at(1, j));
}

TEST_CASE("explicit zero visual features equal the no-provider default") {
  Fixture f;
  TokenizedDocument td = make_td({1, 2, 3}, {{0, 0, 10, 10}, {5, 5, 10, 10}, {9, 9, 2, 2}}, {0, 1, 2});
  Tape t1, t2;
  Var a = f.enc.embed(t1, td, Array({3, f.cfg.visual_dim}));
  Var b = f.enc.embed(t2, td);
  CHECK(t1.val(a).data == t2.val(b).data);
}

TEST_CASE("changing only the w bucket shifts the row by the w-table delta") {
  Fixture f;
  NormBox nb{10, 20, 30, 40};
  NormBox nb2{10, 20, 77, 40};  // only w differs
  TokenizedDocument td1 = make_td({5, 6}, {nb, nb}, {0, 1});
  TokenizedDocument td2 = make_td({5, 6}, {nb, nb2}, {0, 1});
  Tape t1, t2;
  const Array& e1 = t1.val(f.enc.embed(t1, td1));
  const Array& e2 = t2.val(f.enc.embed(t2, td2));
  const Parameter* wtab = f.store.find("enc.pos2d.w");
  REQUIRE(wtab);
  for (int64_t j = 0; j < e1.cols(); ++j) {
    CHECK(e1.at(0, j) == e2.at(0, j));  // untouched row unchanged
    double delta = wtab->value.at(77, j) - wtab->value.at(30, j);
    CHECK(e2.at(1, j) - e1.at(1, j) == doctest::Approx(delta).epsilon(1e-12));
  }
}

TEST_CASE("single-token document encodes to a single row") {
  Fixture f;
  TokenizedDocument td = make_td({4}, {{1, 2, 3, 4}}, {0});
  Tape t;
  Var h = f.enc.encode(t, td, visual_features(
                                  [] {
                                    Document d;
                                    d.img = {"x.png", 100, 100};
                                    d.cells = {Cell{0, "a", BBox{1, 2, 3, 4}, "OTHER", {}}};
                                    return d;
                                  }(),
                                  td, 8),
                       nullptr);
  CHECK(t.val(h).rows() == 1);
  CHECK(t.val(h).cols() == f.cfg.d_model);
}

TEST_CASE("with the 1-D position table zeroed, encode is permutation-equivariant") {
  Fixture f(16, 2, 2);
  f.store.find("enc.pos1d")->value.fill(0.0);
  NormBox b1{10, 10, 40, 20}, b2{500, 300, 80, 25};
  TokenizedDocument fwd = make_td({8, 9}, {b1, b2}, {0, 1});
  TokenizedDocument rev = make_td({9, 8}, {b2, b1}, {0, 1});
  Array vis1({2, 8}), vis2({2, 8});
  for (int64_t j = 0; j < 8; ++j) {
    vis1.at(0, j) = 0.1 * static_cast<double>(j);
    vis1.at(1, j) = 0.7 - 0.05 * static_cast<double>(j);
    vis2.at(0, j) = vis1.at(1, j);
    vis2.at(1, j) = vis1.at(0, j);
  }
  Tape t1, t2;
  const Array& h1 = t1.val(f.enc.encode(t1, fwd, vis1, nullptr));
  const Array& h2 = t2.val(f.enc.encode(t2, rev, vis2, nullptr));
  for (int64_t j = 0; j < h1.cols(); ++j) {
    CHECK(h1.at(0, j) == doctest::Approx(h2.at(1, j)).epsilon(1e-12));
    CHECK(h1.at(1, j) == doctest::Approx(h2.at(0, j)).epsilon(1e-12));
  }
}

TEST_CASE("eval-mode encode is bit-identical across runs") {
  Fixture f;
  TokenizedDocument td = make_td({1, 2, 3, 4}, {{0, 0, 5, 5}, {1, 1, 5, 5}, {2, 2, 5, 5}, {3, 3, 5, 5}},
                                 {0, 1, 2, 3});
  Array vis({4, 8});
  for (int64_t i = 0; i < vis.numel(); ++i) vis.at(i) = 0.01 * static_cast<double>(i);
  Tape t1, t2;
  CHECK(t1.val(f.enc.encode(t1, td, vis, nullptr)).data ==
        t2.val(f.enc.encode(t2, td, vis, nullptr)).data);
}

TEST_CASE("over-length input is a contract error at the encoder") {
  Fixture f;
  std::vector<int64_t> ids(40, 1);
  std::vector<NormBox> boxes(40, NormBox{0, 0, 1, 1});
  std::vector<int64_t> pos(40);
  for (int i = 0; i < 40; ++i) pos[static_cast<size_t>(i)] = i;
  TokenizedDocument td = make_td(ids, boxes, pos);
  Tape t;
  CHECK_THROWS_AS(f.enc.embed(t, td), Error);
}

TEST_CASE("visual_features: full-page box on a square page") {
  Document d;
  d.img = {"p.png", 400, 400};
  d.cells = {Cell{0, "x", BBox{0, 0, 400, 400}, "OTHER", {}}};
  Vocab v = build_vocab({d}, 1);
  TokenizedDocument td = tokenize(d, v, LabelSet::xfund());
  Array feats = visual_features(d, td, 8);
  REQUIRE(feats.rows() == 1);
  CHECK(feats.at(0, 0) == doctest::Approx(0.5));  // center x
  CHECK(feats.at(0, 1) == doctest::Approx(0.5));  // center y
  CHECK(feats.at(0, 4) == doctest::Approx(1.0));  // aspect
  CHECK(feats.at(0, 5) == doctest::Approx(1.0));  // area
}

TEST_CASE("visual_features: equal boxes give equal rows; zero-area boxes degrade to zero") {
  Document d;
  d.img = {"p.png", 200, 100};
  d.cells = {Cell{0, "a", BBox{10, 10, 50, 30}, "OTHER", {}},
             Cell{1, "b", BBox{10, 10, 50, 30}, "OTHER", {}},
             Cell{2, "c", BBox{60, 60, 60, 60}, "OTHER", {}}};
  Vocab v = build_vocab({d}, 1);
  TokenizedDocument td = tokenize(d, v, LabelSet::xfund());
  Array feats = visual_features(d, td, 8);
  REQUIRE(feats.rows() == 3);
  for (int64_t j = 0; j < 8; ++j) CHECK(feats.at(0, j) == feats.at(1, j));
  CHECK(feats.at(2, 4) == 0.0);  // aspect
  CHECK(feats.at(2, 5) == 0.0);  // area
}

TEST_CASE("each 2-D lookup table receives gradient when its bucket varies") {
  Fixture f;
  TokenizedDocument td = make_td({1, 2, 3}, {{10, 20, 30, 40}, {50, 60, 70, 80}, {90, 15, 25, 35}},
                                 {0, 1, 2});
  f.store.zero_grads();
  Tape t;
  Var h = f.enc.encode(t, td, Array({3, 8}), nullptr);
  Var loss = cross_entropy(t, h, {0, 1, 2}, Reduction::Mean);
  t.backward(loss);
  for (const char* name : {"enc.pos2d.x", "enc.pos2d.y", "enc.pos2d.w", "enc.pos2d.h"}) {
    const Parameter* p = f.store.find(name);
    REQUIRE(p);
    double sum = 0.0;
    for (double g : p->grad.data) sum += std::abs(g);
    CHECK(sum > 0.0);
  }
}

TEST_CASE("toy encoder passes grad_check below 1e-4") {
  Fixture f(16, 2, 2);
  TokenizedDocument td = make_td({1, 5, 9, 2}, {{10, 20, 30, 40}, {50, 60, 70, 80}, {90, 15, 25, 35},
                                                {200, 300, 100, 50}},
                                 {0, 1, 2, 3});
  Array vis({4, 8});
  rng::Xoshiro256 g(3);
  for (auto& x : vis.data) x = g.uniform(0.0, 1.0);
  auto loss = [&](bool with_grad) {
    Tape t;
    Var h = f.enc.encode(t, td, vis, nullptr);
    Var l = cross_entropy(t, h, {0, 1, 2, 3}, Reduction::Mean);
    if (with_grad) t.backward(l);
    return t.val(l).data[0];
  };
  auto params = f.store.all();
  CHECK(grad_check(loss, params, 1e-4, 2024, 60) < 1e-4);
}

TEST_CASE("precomputed states: zero matrix round trip") {
  std::string bytes = PrecomputedStates::to_bytes({{"doc0", Array({3, 4})}});
  PrecomputedStates st = PrecomputedStates::from_bytes(bytes);
  const Array* m = st.find("doc0");
  REQUIRE(m);
  CHECK(m->rows() == 3);
  CHECK(m->cols() == 4);
  for (int64_t i = 0; i < m->numel(); ++i) CHECK(m->at(i) == 0.0);
}

TEST_CASE("precomputed states: random write-then-read is exact at 32-bit") {
  Array m({5, 6});
  rng::Xoshiro256 g(8);
  for (auto& v : m.data) v = g.uniform(-2.0, 2.0);
  quantize_f32(m);
  std::string bytes = PrecomputedStates::to_bytes({{"a", m}, {"b", m}});
  PrecomputedStates st = PrecomputedStates::from_bytes(bytes);
  CHECK(st.size() == 2);
  CHECK(st.find("a")->data == m.data);
  std::string bytes2 = PrecomputedStates::to_bytes({{"a", *st.find("a")}, {"b", *st.find("b")}});
  CHECK(bytes == bytes2);
}

TEST_CASE("precomputed states: corrupt files fail with an offset") {
  // bad magic
  try {
    PrecomputedStates::from_bytes("XXXXXjunk");
    FAIL("expected format error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrKind::Format);
  }
  // declared 5 tokens, payload holds only 4 rows
  Array m({4, 2});
  std::string bytes = PrecomputedStates::to_bytes({{"d", m}});
  bytes[5 + 4 + 2 + 1] = 5;  // token-count byte (little-endian u32 after magic+count+idlen+id)
  try {
    PrecomputedStates::from_bytes(bytes);
    FAIL("expected format error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrKind::Format);
    CHECK(std::string(e.what()).find("offset") != std::string::npos);
  }
  // dim mismatch against the model dimension
  try {
    PrecomputedStates::from_bytes(PrecomputedStates::to_bytes({{"d", Array({2, 3})}}), 16);
    FAIL("expected format error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrKind::Format);
    CHECK(std::string(e.what()).find("does not match") != std::string::npos);
  }
}

TEST_CASE("precomputed states: file save/load round trip") {
  Array m({2, 3});
  m.at(0) = 1.5;
  m.at(5) = -2.25;
  std::string path = (std::filesystem::temp_directory_path() / "xfp_states_test.bin").string();
  PrecomputedStates::save(path, {{"doc", m}});
  PrecomputedStates st = PrecomputedStates::load(path);
  CHECK(st.find("doc")->data == m.data);
  std::remove(path.c_str());
}
