#include "xformparser/metrics.hpp"

#include <algorithm>

#include "json.hpp"

namespace xfp {

using ordered_json = nlohmann::ordered_json;

PRF1 prf1_from_counts(int64_t tp, int64_t fp, int64_t fn) {
  PRF1 r;
  r.tp = tp;
  r.fp = fp;
  r.fn = fn;
  r.precision = (tp + fp) == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
  r.recall = (tp + fn) == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
  if (tp + fp == 0 && tp + fn == 0) {
    r.f1 = 1.0;
  } else if (r.precision + r.recall == 0.0) {
    r.f1 = 0.0;
  } else {
    r.f1 = 2.0 * r.precision * r.recall / (r.precision + r.recall);
  }
  return r;
}

double cell_accuracy(const std::vector<int>& pred, const std::vector<int>& gold, int64_t* ccd_out,
                     int64_t* tcc_out, bool* degenerate_out) {
  if (pred.size() != gold.size())
    throw Error(ErrKind::Contract, "cell_accuracy: prediction and gold lengths differ");
  int64_t tcc = static_cast<int64_t>(gold.size());
  int64_t ccd = 0;
  for (size_t i = 0; i < gold.size(); ++i)
    if (pred[i] >= 0 && pred[i] == gold[i]) ++ccd;
  if (ccd_out) *ccd_out = ccd;
  if (tcc_out) *tcc_out = tcc;
  if (degenerate_out) *degenerate_out = tcc == 0;
  return tcc == 0 ? 1.0 : static_cast<double>(ccd) / static_cast<double>(tcc);
}

PRF1 re_prf1(const std::set<PairKey>& pred, const std::set<PairKey>& gold) {
  int64_t tp = 0;
  for (const auto& p : pred)
    if (gold.count(p)) ++tp;
  int64_t fp = static_cast<int64_t>(pred.size()) - tp;
  int64_t fn = static_cast<int64_t>(gold.size()) - tp;
  return prf1_from_counts(tp, fp, fn);
}

std::vector<std::tuple<int64_t, int64_t, int>> extract_spans(const std::vector<int64_t>& tags,
                                                             const LabelSet& labels,
                                                             int64_t* repairs) {
  std::vector<std::tuple<int64_t, int64_t, int>> spans;
  int64_t start = -1;
  int cls = -1;
  auto close = [&](int64_t end) {
    if (start >= 0) spans.push_back({start, end, cls});
    start = -1;
    cls = -1;
  };
  for (int64_t i = 0; i < static_cast<int64_t>(tags.size()); ++i) {
    int tag = static_cast<int>(tags[static_cast<size_t>(i)]);
    if (tag == 0) {
      close(i);
      continue;
    }
    int label = labels.label_of_bio(tag);
    if (labels.bio_is_begin(tag)) {
      close(i);
      start = i;
      cls = label;
    } else {  // I-X
      if (start >= 0 && cls == label) continue;
      close(i);  // orphan I-X opens a new span
      if (repairs) ++*repairs;
      start = i;
      cls = label;
    }
  }
  close(static_cast<int64_t>(tags.size()));
  return spans;
}

PRF1 bio_micro_f1(const std::vector<std::vector<int64_t>>& pred,
                  const std::vector<std::vector<int64_t>>& gold, const LabelSet& labels,
                  int64_t* repairs) {
  if (pred.size() != gold.size())
    throw Error(ErrKind::Contract, "bio_micro_f1: sequence counts differ");
  int64_t tp = 0, fp = 0, fn = 0;
  for (size_t d = 0; d < pred.size(); ++d) {
    if (pred[d].size() != gold[d].size())
      throw Error(ErrKind::Contract, "bio_micro_f1: sequence " + std::to_string(d) + " lengths differ");
    auto ps = extract_spans(pred[d], labels, repairs);
    auto gs = extract_spans(gold[d], labels, nullptr);
    std::set<std::tuple<int64_t, int64_t, int>> gset(gs.begin(), gs.end());
    for (const auto& s : ps) {
      if (gset.count(s)) {
        ++tp;
        gset.erase(s);
      } else {
        ++fp;
      }
    }
    fn += static_cast<int64_t>(gset.size());
  }
  return prf1_from_counts(tp, fp, fn);
}

namespace {
ordered_json prf1_json(const PRF1& p) {
  ordered_json j;
  j["tp"] = p.tp;
  j["fp"] = p.fp;
  j["fn"] = p.fn;
  j["precision"] = p.precision;
  j["recall"] = p.recall;
  j["f1"] = p.f1;
  return j;
}
}  // namespace

std::string MetricsReport::to_json() const {
  ordered_json j;
  ordered_json ser;
  ser["cell_accuracy"] = cell_accuracy;
  ser["ccd"] = ccd;
  ser["tcc"] = tcc;
  ser["degenerate"] = degenerate;
  ser["bio_micro"] = prf1_json(bio_micro);
  ordered_json pl = ordered_json::object();
  for (const auto& [name, p] : per_label) pl[name] = prf1_json(p);
  ser["per_label"] = std::move(pl);
  j["ser"] = std::move(ser);
  j["re"] = prf1_json(re);
  return j.dump(2) + "\n";
}

}  // namespace xfp
