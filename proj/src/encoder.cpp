#include "xformparser/encoder.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace xfp {

using ad::Parameter;
using ad::Tape;
using ad::Var;

void EncoderConfig::check() const {
  if (d_model < 1 || heads < 1 || d_model % heads != 0)
    throw Error(ErrKind::Contract, "encoder config: d_model must be divisible by heads");
  if (layers < 1 || ffn_mult < 1 || max_len < 1 || visual_dim < 1)
    throw Error(ErrKind::Contract, "encoder config: invalid dimensions");
  if (coord_buckets != 1001)
    throw Error(ErrKind::Contract, "encoder config: coordinate buckets must cover 0..1000");
}

ad::Array visual_features(const Document& doc, const TokenizedDocument& td, int64_t dim) {
  if (dim < 8) throw Error(ErrKind::Contract, "visual_features: dim must be >= 8");
  double pw = static_cast<double>(doc.img.width);
  double ph = static_cast<double>(doc.img.height);
  ad::Array out({td.num_tokens(), dim});
  std::map<int64_t, const Cell*> by_id;
  for (const auto& c : doc.cells) by_id[c.id] = &c;
  for (int64_t i = 0; i < td.num_tokens(); ++i) {
    const Cell* c = by_id.at(td.token_cell[static_cast<size_t>(i)]);
    const BBox& b = c->visual_region ? *c->visual_region : c->bbox;
    double w = static_cast<double>(b.x1 - b.x0) / pw;
    double h = static_cast<double>(b.y1 - b.y0) / ph;
    double area = w * h;
    out.at(i, 0) = (static_cast<double>(b.x0 + b.x1) / 2.0) / pw;  // center x
    out.at(i, 1) = (static_cast<double>(b.y0 + b.y1) / 2.0) / ph;  // center y
    out.at(i, 2) = w;
    out.at(i, 3) = h;
    out.at(i, 4) = area > 0.0 ? w / h : 0.0;  // aspect, 0 for degenerate boxes
    out.at(i, 5) = area;
    out.at(i, 6) = static_cast<double>(b.x0) / pw;  // left margin
    out.at(i, 7) = static_cast<double>(b.y0) / ph;  // top margin
  }
  return out;
}

ToyEncoder::ToyEncoder(const EncoderConfig& cfg, int64_t vocab_size, ad::ParameterStore& store,
                       rng::Xoshiro256& init)
    : cfg_(cfg) {
  cfg_.check();
  int64_t d = cfg_.d_model;
  auto table = [&](const std::string& name, int64_t rows, int64_t cols) {
    Parameter& p = store.create(name, {rows, cols});
    ad::glorot_init(p.value, rows, cols, init);
    return &p;
  };
  auto weight = [&](const std::string& name, int64_t out, int64_t in) {
    Parameter& p = store.create(name, {out, in});
    ad::glorot_init(p.value, in, out, init);
    return &p;
  };
  auto zeros = [&](const std::string& name, int64_t n) { return &store.create(name, {n}); };
  auto ones = [&](const std::string& name, int64_t n) {
    Parameter& p = store.create(name, {n});
    p.value.fill(1.0);
    return &p;
  };

  tok_emb_ = table("enc.tok_emb", vocab_size, d);
  vis_w_ = weight("enc.vis_proj.w", d, cfg_.visual_dim);
  vis_b_ = zeros("enc.vis_proj.b", d);
  in_w_ = weight("enc.in_proj.w", d, 2 * d);
  in_b_ = zeros("enc.in_proj.b", d);
  pos1d_ = table("enc.pos1d", cfg_.max_len, d);
  pos_x_ = table("enc.pos2d.x", cfg_.coord_buckets, d);
  pos_y_ = table("enc.pos2d.y", cfg_.coord_buckets, d);
  pos_w_ = table("enc.pos2d.w", cfg_.coord_buckets, d);
  pos_h_ = table("enc.pos2d.h", cfg_.coord_buckets, d);
  for (int64_t l = 0; l < cfg_.layers; ++l) {
    std::string pre = "enc.layer" + std::to_string(l) + ".";
    Layer lay;
    lay.ln1_g = ones(pre + "ln1.g", d);
    lay.ln1_b = zeros(pre + "ln1.b", d);
    lay.wq = weight(pre + "attn.wq", d, d);
    lay.bq = zeros(pre + "attn.bq", d);
    // no key bias: a per-row constant logit shift is invisible to softmax
    lay.wk = weight(pre + "attn.wk", d, d);
    lay.wv = weight(pre + "attn.wv", d, d);
    lay.bv = zeros(pre + "attn.bv", d);
    lay.wo = weight(pre + "attn.wo", d, d);
    lay.bo = zeros(pre + "attn.bo", d);
    lay.ln2_g = ones(pre + "ln2.g", d);
    lay.ln2_b = zeros(pre + "ln2.b", d);
    lay.ff1_w = weight(pre + "ffn.w1", cfg_.ffn_mult * d, d);
    lay.ff1_b = zeros(pre + "ffn.b1", cfg_.ffn_mult * d);
    lay.ff2_w = weight(pre + "ffn.w2", d, cfg_.ffn_mult * d);
    lay.ff2_b = zeros(pre + "ffn.b2", d);
    layers_.push_back(lay);
  }
  ln_f_g_ = ones("enc.ln_f.g", d);
  ln_f_b_ = zeros("enc.ln_f.b", d);
}

Var ToyEncoder::embed(Tape& t, const TokenizedDocument& td, const ad::Array& visual) const {
  int64_t n = td.num_tokens();
  if (n == 0) throw Error(ErrKind::Contract, "encoder: empty token sequence");
  if (n > cfg_.max_len)
    throw Error(ErrKind::Contract, "encoder: sequence length " + std::to_string(n) +
                                       " exceeds capacity " + std::to_string(cfg_.max_len));
  if (visual.rows() != n || visual.cols() != cfg_.visual_dim)
    throw Error(ErrKind::Contract, "encoder: visual features must be " + std::to_string(n) + "x" +
                                       std::to_string(cfg_.visual_dim));

  std::vector<int64_t> xb(static_cast<size_t>(n)), yb(static_cast<size_t>(n)),
      wb(static_cast<size_t>(n)), hb(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    const NormBox& nb = td.boxes[static_cast<size_t>(i)];
    for (int64_t v : {nb.x, nb.y, nb.w, nb.h})
      if (v < 0 || v >= cfg_.coord_buckets)
        throw Error(ErrKind::Contract, "encoder: coordinate bucket out of range");
    xb[static_cast<size_t>(i)] = nb.x;
    yb[static_cast<size_t>(i)] = nb.y;
    wb[static_cast<size_t>(i)] = nb.w;
    hb[static_cast<size_t>(i)] = nb.h;
  }

  Var text = ad::select_rows(t, t.leaf(*tok_emb_), td.token_ids);
  Var vis = ad::affine(t, t.input(visual), t.leaf(*vis_w_), t.leaf(*vis_b_));
  std::vector<Var> tv = {text, vis};
  Var fused = ad::affine(t, ad::concat_cols(t, tv), t.leaf(*in_w_), t.leaf(*in_b_));
  Var p1 = ad::select_rows(t, t.leaf(*pos1d_), td.positions);
  Var px = ad::select_rows(t, t.leaf(*pos_x_), xb);
  Var py = ad::select_rows(t, t.leaf(*pos_y_), yb);
  Var pw = ad::select_rows(t, t.leaf(*pos_w_), wb);
  Var ph = ad::select_rows(t, t.leaf(*pos_h_), hb);
  std::vector<Var> parts = {fused, p1, px, py, pw, ph};
  return ad::add_list(t, parts);
}

Var ToyEncoder::embed(Tape& t, const TokenizedDocument& td) const {
  return embed(t, td, ad::Array({td.num_tokens(), cfg_.visual_dim}));
}

Var ToyEncoder::encode(Tape& t, const TokenizedDocument& td, const ad::Array& visual,
                       rng::Xoshiro256* dropout_rng) const {
  Var x = embed(t, td, visual);
  int64_t d = cfg_.d_model;
  int64_t dk = d / cfg_.heads;
  double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));
  for (const Layer& lay : layers_) {
    Var xn = ad::layer_norm(t, x, t.leaf(*lay.ln1_g), t.leaf(*lay.ln1_b));
    Var q = ad::affine(t, xn, t.leaf(*lay.wq), t.leaf(*lay.bq));
    Var k = ad::matmul_nt(t, xn, t.leaf(*lay.wk));
    Var v = ad::affine(t, xn, t.leaf(*lay.wv), t.leaf(*lay.bv));
    std::vector<Var> head_outs;
    for (int64_t h = 0; h < cfg_.heads; ++h) {
      Var qh = ad::slice_cols(t, q, h * dk, dk);
      Var kh = ad::slice_cols(t, k, h * dk, dk);
      Var vh = ad::slice_cols(t, v, h * dk, dk);
      Var scores = ad::scale(t, ad::matmul_nt(t, qh, kh), inv_sqrt_dk);
      Var probs = ad::softmax(t, scores);
      head_outs.push_back(ad::matmul(t, probs, vh));
    }
    Var attn = ad::affine(t, ad::concat_cols(t, head_outs), t.leaf(*lay.wo), t.leaf(*lay.bo));
    x = ad::add(t, x, attn);
    Var xn2 = ad::layer_norm(t, x, t.leaf(*lay.ln2_g), t.leaf(*lay.ln2_b));
    Var f1 = ad::relu_(t, ad::affine(t, xn2, t.leaf(*lay.ff1_w), t.leaf(*lay.ff1_b)));
    Var f2 = ad::affine(t, f1, t.leaf(*lay.ff2_w), t.leaf(*lay.ff2_b));
    x = ad::add(t, x, f2);
    x = ad::dropout(t, x, cfg_.dropout, dropout_rng);
  }
  return ad::layer_norm(t, x, t.leaf(*ln_f_g_), t.leaf(*ln_f_b_));
}

// ---- precomputed states ----

namespace {

void put_u16(std::string& s, uint16_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& s, uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& s, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(s, bits);
}

struct Reader {
  const std::string& buf;
  size_t pos = 0;

  [[noreturn]] void fail(const std::string& what) const {
    throw Error(ErrKind::Format, "precomputed states: " + what + " at offset " + std::to_string(pos));
  }
  void need(size_t n) const {
    if (pos + n > buf.size()) fail("truncated payload");
  }
  uint16_t u16() {
    need(2);
    uint16_t v = static_cast<uint8_t>(buf[pos]) | (static_cast<uint16_t>(static_cast<uint8_t>(buf[pos + 1])) << 8);
    pos += 2;
    return v;
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(buf[pos + static_cast<size_t>(i)])) << (8 * i);
    pos += 4;
    return v;
  }
  float f32() {
    uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::string bytes(size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

constexpr char kMagic[] = "XFPH1";

}  // namespace

PrecomputedStates PrecomputedStates::from_bytes(const std::string& bytes, int64_t expected_dim) {
  Reader r{bytes};
  if (r.bytes(5) != kMagic) {
    r.pos = 0;
    r.fail("bad magic (expected XFPH1)");
  }
  uint32_t ndocs = r.u32();
  PrecomputedStates out;
  for (uint32_t i = 0; i < ndocs; ++i) {
    uint16_t idlen = r.u16();
    std::string id = r.bytes(idlen);
    uint32_t tokens = r.u32();
    uint32_t dim = r.u32();
    if (dim == 0) r.fail("zero hidden dim for document " + id);
    if (expected_dim >= 0 && static_cast<int64_t>(dim) != expected_dim)
      r.fail("hidden dim " + std::to_string(dim) + " for document " + id + " does not match expected " +
             std::to_string(expected_dim));
    if (out.dim_ == 0) out.dim_ = static_cast<int64_t>(dim);
    if (out.dim_ != static_cast<int64_t>(dim)) r.fail("inconsistent hidden dims across documents");
    ad::Array m({static_cast<int64_t>(tokens), static_cast<int64_t>(dim)});
    for (int64_t k = 0; k < m.numel(); ++k) m.at(k) = static_cast<double>(r.f32());
    if (out.states_.count(id)) r.fail("duplicate document id " + id);
    out.states_.emplace(std::move(id), std::move(m));
  }
  if (r.pos != bytes.size()) r.fail("trailing bytes");
  return out;
}

PrecomputedStates PrecomputedStates::load(const std::string& path, int64_t expected_dim) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrKind::Io, "cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return from_bytes(bytes, expected_dim);
}

std::string PrecomputedStates::to_bytes(const std::vector<std::pair<std::string, ad::Array>>& states) {
  std::string s;
  s += kMagic;
  put_u32(s, static_cast<uint32_t>(states.size()));
  for (const auto& [id, m] : states) {
    if (id.size() > 0xffff) throw Error(ErrKind::Contract, "document id too long for state file");
    put_u16(s, static_cast<uint16_t>(id.size()));
    s += id;
    put_u32(s, static_cast<uint32_t>(m.rows()));
    put_u32(s, static_cast<uint32_t>(m.cols()));
    for (int64_t i = 0; i < m.numel(); ++i) put_f32(s, static_cast<float>(m.at(i)));
  }
  return s;
}

void PrecomputedStates::save(const std::string& path,
                             const std::vector<std::pair<std::string, ad::Array>>& states) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrKind::Io, "cannot write " + path);
  std::string bytes = to_bytes(states);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrKind::Io, "short write to " + path);
}

const ad::Array* PrecomputedStates::find(const std::string& doc_id) const {
  auto it = states_.find(doc_id);
  return it == states_.end() ? nullptr : &it->second;
}

}  // namespace xfp
