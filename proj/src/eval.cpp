#include "patchalign/eval.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include "patchalign/adapter.hpp"
#include "patchalign/training.hpp"

namespace fs = std::filesystem;

namespace patchalign {

int MetricsReport::correct_of(const std::string& kind) const {
  int n = 0;
  for (const auto& p : per_set)
    if ((kind.empty() || p.kind == kind) && p.predicted == p.golden) ++n;
  return n;
}

int MetricsReport::total_of(const std::string& kind) const {
  int n = 0;
  for (const auto& p : per_set)
    if (kind.empty() || p.kind == kind) ++n;
  return n;
}

real MetricsReport::accuracy_all() const {
  return total() == 0 ? 0.0 : static_cast<real>(correct_of("")) / total();
}
real MetricsReport::accuracy_video() const {
  int t = total_of("video");
  return t == 0 ? 0.0 : static_cast<real>(correct_of("video")) / t;
}
real MetricsReport::accuracy_static() const {
  int t = total_of("static");
  return t == 0 ? 0.0 : static_cast<real>(correct_of("static")) / t;
}

real MetricsReport::mask_overlap_mean() const {
  real sum = 0.0;
  int n = 0;
  for (const auto& p : per_set)
    if (p.overlap >= 0.0) {
      sum += p.overlap;
      ++n;
    }
  return n == 0 ? -1.0 : sum / n;
}

std::string MetricsReport::serialize() const {
  std::ostringstream os;
  os << "mode=" << mode << "\n";
  os << "seed=" << seed << "\n";
  os << strformat("config_fingerprint=%016llx\n",
                  static_cast<unsigned long long>(config_fingerprint));
  os << "sets=" << total() << "\n";
  os << strformat("accuracy_all=%.6f\n", accuracy_all());
  os << strformat("accuracy_video=%.6f\n", accuracy_video());
  os << strformat("accuracy_static=%.6f\n", accuracy_static());
  os << strformat("mask_overlap_mean=%.6f\n", mask_overlap_mean());
  for (const auto& p : per_set) {
    os << "set id=" << p.id << " kind=" << p.kind << " golden=" << p.golden
       << " predicted=" << p.predicted;
    os << " order=";
    for (size_t k = 0; k < p.scores.size(); ++k) os << (k ? "," : "") << k;
    os << " scores=";
    for (size_t k = 0; k < p.scores.size(); ++k)
      os << (k ? "," : "") << strformat("%.6f", p.scores[k]);
    if (p.overlap >= 0.0) os << strformat(" overlap=%.6f", p.overlap);
    os << "\n";
  }
  return os.str();
}

real overlap_fraction(const MaskMatrix& mask, const std::vector<int>& cue_patches) {
  if (cue_patches.empty()) return -1.0;
  int hit = 0;
  for (int p : cue_patches) {
    if (p < 0 || p >= mask.patches()) fail(ErrorKind::data, "cue patch index out of range");
    hit += mask.masked[p] != 0;
  }
  return static_cast<real>(hit) / static_cast<real>(cue_patches.size());
}

namespace {

MaskMatrix mask_for_golden_pair(const Model& model, const CandidateSet& set) {
  Tensor txt = model.encode_text(set.query);
  auto enc = model.encode_image(set.images[set.golden]);
  auto fused = model.fuse(txt, set.query, enc.final);
  // Deterministic reduction for reporting: random_token falls back to the
  // mean so reports stay seed-stable.
  TokenReduce reduce = model.config().train.reduce;
  if (reduce == TokenReduce::random_token) reduce = TokenReduce::mean_tokens;
  auto salience = aggregate_attention(fused.record, reduce);
  return select_mask(salience, model.config().train.mask_ratio);
}

MetricsReport eval_common(const Model& model, const Dataset& data, bool finetuned) {
  MetricsReport rep;
  rep.mode = finetuned ? "finetuned" : "zeroshot";
  rep.config_fingerprint = model.config().fingerprint();
  rep.seed = model.config().train.seed;
  for (const CandidateSet& set : data.sets) {
    Tensor txt = model.encode_text(set.query);
    const int M = static_cast<int>(set.images.size());
    SetPrediction p;
    p.id = set.id;
    p.kind = set.kind;
    p.golden = set.golden;
    if (finetuned) {
      std::vector<Tensor> pooled;
      for (int k = 0; k < M; ++k) {
        auto enc = model.encode_image(set.images[k]);
        auto fused = model.fuse(txt, set.query, enc.final);
        pooled.push_back(model.pooled(fused.states));
      }
      p.scores = model.candidate_logits(pooled).value();
    } else {
      for (int k = 0; k < M; ++k) {
        auto enc = model.encode_image(set.images[k]);
        auto fused = model.fuse(txt, set.query, enc.final);
        auto e = model.itm_logits(fused.states).value();
        p.scores.push_back(softmax_values(e)[0]);  // match probability
      }
    }
    p.predicted = predict(p.scores);
    if (!set.cue_patches.empty())
      p.overlap = overlap_fraction(mask_for_golden_pair(model, set), set.cue_patches);
    rep.per_set.push_back(std::move(p));
  }
  return rep;
}

}  // namespace

MetricsReport eval_zero_shot(const Model& model, const Dataset& data) {
  return eval_common(model, data, false);
}

MetricsReport eval_finetuned(const Model& model, const Dataset& data) {
  return eval_common(model, data, true);
}

void write_report(const std::string& path, const MetricsReport& report) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::io, "cannot write report: " + path);
  out << report.serialize();
}

std::vector<GridRow> sensitivity_grid(const std::string& axis,
                                      const std::vector<std::string>& values,
                                      const Settings& base, const Dataset& train_data,
                                      const Dataset& eval_data, std::ostream* progress) {
  std::vector<GridRow> rows;
  for (const std::string& value : values) {
    GridRow row;
    row.value = value;
    Settings s = base;
    try {
      if (axis == "mask_ratio") {
        s.train.mask_ratio = std::stod(value);
      } else if (axis == "delta") {
        s.adapter.delta = std::stoi(value);
      } else if (axis == "insertion_layers") {
        std::vector<int> layers;
        std::stringstream ss(value);
        std::string item;
        while (std::getline(ss, item, ','))
          if (!item.empty()) layers.push_back(std::stoi(item));
        s.adapter.layers = layers;
      } else {
        fail(ErrorKind::usage, "unknown grid axis: " + axis);
      }
      s.validate();
      if (s.train.mask_ratio < 0.0 || s.train.mask_ratio > 1.0)
        fail(ErrorKind::config, "mask ratio outside [0,1]");

      Model model(s, s.train.seed);
      Trainer trainer(model, s);
      Rng rng(Rng::mix(s.train.seed, 0x747261696eull));
      trainer.run_stage(0, train_data, rng, nullptr);
      trainer.run_stage(1, train_data, rng, nullptr);
      MetricsReport rep = eval_zero_shot(model, eval_data);
      row.ok = true;
      row.acc_all = rep.accuracy_all();
      row.acc_video = rep.accuracy_video();
      row.acc_static = rep.accuracy_static();
      row.param_count = s.adapter.enabled ? adapter_param_count(s.model, s.adapter) : 0;
    } catch (const Error& e) {
      row.ok = false;
      row.note = e.what();
    }
    if (progress)
      (*progress) << "grid " << axis << "=" << value
                  << (row.ok ? strformat(" acc_all=%.6f", row.acc_all)
                             : " skipped: " + row.note)
                  << "\n";
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string format_grid_table(const std::string& axis, const std::vector<GridRow>& rows) {
  std::ostringstream os;
  os << "axis=" << axis << "\n";
  os << "value\taccuracy_all\taccuracy_video\taccuracy_static\tadapter_params\n";
  for (const GridRow& r : rows) {
    if (r.ok)
      os << r.value << "\t" << strformat("%.6f", r.acc_all) << "\t"
         << strformat("%.6f", r.acc_video) << "\t" << strformat("%.6f", r.acc_static)
         << "\t" << r.param_count << "\n";
    else
      os << r.value << "\tskipped: " << r.note << "\n";
  }
  return os.str();
}

MaskDumpResult mask_dump(const Model& model, const Dataset& data, int count,
                         const std::string& out_dir) {
  fs::create_directories(out_dir);
  MaskDumpResult result;
  const int patch = model.config().model.patch_size;
  const int gw = model.config().model.grid_w();
  int n = std::min<int>(count, static_cast<int>(data.sets.size()));
  std::ofstream summary(fs::path(out_dir) / "summary.txt");
  for (int i = 0; i < n; ++i) {
    const CandidateSet& set = data.sets[i];
    MaskMatrix mask = mask_for_golden_pair(model, set);
    Image img = set.images[set.golden];
    for (int p : mask.masked_idx) {
      int gy = p / gw, gx = p % gw;
      for (int y = 0; y < patch; ++y)
        for (int x = 0; x < patch; ++x)
          for (int ch = 0; ch < img.c; ++ch)
            img.at(gy * patch + y, gx * patch + x, ch) = 0.0;
    }
    std::string img_path = (fs::path(out_dir) / (set.id + "_masked.ppm")).string();
    write_ppm(img_path, img);
    std::ofstream side(fs::path(out_dir) / (set.id + "_mask.txt"));
    for (size_t j = 0; j < mask.masked_idx.size(); ++j)
      side << (j ? " " : "") << mask.masked_idx[j];
    side << "\n";
    result.files.push_back(img_path);
    real ov = overlap_fraction(mask, set.cue_patches);
    summary << "set id=" << set.id;
    if (ov >= 0.0) {
      result.overlaps.push_back(ov);
      summary << strformat(" overlap=%.6f", ov);
    }
    summary << "\n";
  }
  if (!result.overlaps.empty()) {
    real mean = 0.0;
    for (real v : result.overlaps) mean += v;
    mean /= static_cast<real>(result.overlaps.size());
    summary << strformat("overlap_mean=%.6f\n", mean);
  }
  return result;
}

}  // namespace patchalign
