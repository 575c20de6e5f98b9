#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "xformparser/autodiff.hpp"
#include "xformparser/corpus.hpp"

namespace xfp {

struct EncoderConfig {
  int64_t d_model = 64;
  int64_t layers = 2;
  int64_t heads = 4;
  int64_t ffn_mult = 4;
  int64_t max_len = 512;
  int64_t coord_buckets = 1001;  // bucket ids 0..1000
  int64_t visual_dim = 8;
  double dropout = 0.1;

  void check() const;
};

// Default visual provider: box-derived statistics per token, in cell box
// order (center x/y, width, height, aspect, area, left margin, top margin).
// A custom provider can substitute real image-crop features.
using VisualProvider =
    std::function<ad::Array(const Document&, const TokenizedDocument&, int64_t dim)>;

ad::Array visual_features(const Document& doc, const TokenizedDocument& td, int64_t dim = 8);

// Token-level transformer encoder producing H (tokens x d_model).
class ToyEncoder {
 public:
  ToyEncoder(const EncoderConfig& cfg, int64_t vocab_size, ad::ParameterStore& store,
             rng::Xoshiro256& init);

  // concat(text, projected visual) -> d_model, + 1-D position + the sum of
  // the four coordinate bucket lookups. Without a provider the visual
  // features are zeros.
  ad::Var embed(ad::Tape& t, const TokenizedDocument& td, const ad::Array& visual) const;
  ad::Var embed(ad::Tape& t, const TokenizedDocument& td) const;

  ad::Var encode(ad::Tape& t, const TokenizedDocument& td, const ad::Array& visual,
                 rng::Xoshiro256* dropout_rng) const;

  const EncoderConfig& config() const { return cfg_; }

 private:
  EncoderConfig cfg_;
  ad::Parameter* tok_emb_;
  ad::Parameter* vis_w_;
  ad::Parameter* vis_b_;
  ad::Parameter* in_w_;
  ad::Parameter* in_b_;
  ad::Parameter* pos1d_;
  ad::Parameter* pos_x_;
  ad::Parameter* pos_y_;
  ad::Parameter* pos_w_;
  ad::Parameter* pos_h_;
  struct Layer {
    ad::Parameter *ln1_g, *ln1_b, *wq, *bq, *wk, *wv, *bv, *wo, *bo;
    ad::Parameter *ln2_g, *ln2_b, *ff1_w, *ff1_b, *ff2_w, *ff2_b;
  };
  std::vector<Layer> layers_;
  ad::Parameter* ln_f_g_;
  ad::Parameter* ln_f_b_;
};

// Precomputed per-token hidden states keyed by document id.
// File layout (little-endian): magic "XFPH1", u32 doc count; per document:
// u16 id length + UTF-8 id, u32 token count, u32 hidden dim, then
// tokens*dim float32 values, row-major.
class PrecomputedStates {
 public:
  static PrecomputedStates load(const std::string& path, int64_t expected_dim = -1);
  static PrecomputedStates from_bytes(const std::string& bytes, int64_t expected_dim = -1);
  static std::string to_bytes(const std::vector<std::pair<std::string, ad::Array>>& states);
  static void save(const std::string& path,
                   const std::vector<std::pair<std::string, ad::Array>>& states);

  const ad::Array* find(const std::string& doc_id) const;
  int64_t dim() const { return dim_; }
  size_t size() const { return states_.size(); }

 private:
  std::map<std::string, ad::Array> states_;
  int64_t dim_ = 0;
};

}  // namespace xfp
