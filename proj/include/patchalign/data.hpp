#pragma once

#include <map>
#include <string>
#include <vector>

#include "patchalign/config.hpp"
#include "patchalign/image.hpp"
#include "patchalign/model.hpp"

namespace patchalign {

// Binary portable pixmap (P6, 8-bit RGB). Lossless for images whose channel
// values sit on the k/255 grid, which the generator guarantees.
void write_ppm(const std::string& path, const Image& img);
Image read_ppm(const std::string& path);

struct SetRecord {
  std::string set_id;
  std::vector<std::string> images;  // paths relative to the dataset root
  std::vector<int> tokens;
  std::string text;  // optional
  int golden = 0;
  std::string kind;  // "video" | "static"
  std::vector<int> cue_patches;  // optional: golden-image patches the cue occupies
  std::string category;          // optional user annotation hook
};

struct CandidateSet {
  std::string id;
  std::vector<Image> images;
  Tokens query;
  int golden = 0;
  std::string kind;
  std::vector<int> cue_patches;
};

struct Dataset {
  std::vector<SetRecord> records;
  std::vector<CandidateSet> sets;
  int candidates() const { return sets.empty() ? 0 : static_cast<int>(sets[0].images.size()); }
};

// Closed token vocabulary for the synthetic benchmark. Ids 0..3 are
// pad/bos/eos/unk; the rest cover cue kinds, grid rows/cols, colors, counts.
struct TokenVocab {
  int grid_h = 4, grid_w = 4;
  static constexpr int pad = 0, bos = 1, eos = 2, unk = 3;
  int kind_id(const std::string& kind) const;
  int row_id(int r) const { return 8 + r; }
  int col_id(int c) const { return 8 + grid_h + c; }
  int color_id(int k) const { return 8 + grid_h + grid_w + k; }
  int count_id(int n) const { return 8 + grid_h + grid_w + 8 + (n - 1); }  // n in 1..3
  int required_vocab() const { return 8 + grid_h + grid_w + 8 + 3; }
  std::map<std::string, int> word_map() const;  // injective word -> id
};

struct GeneratedInstance {
  CandidateSet set;
  SetRecord record;  // image paths filled in by write_dataset
};

// Deterministic per (seed, index): the instance RNG is derived from both, so
// generation order never matters.
GeneratedInstance generate_instance(const Settings& cfg, uint64_t seed, int index);

Dataset generate_dataset(const Settings& cfg, uint64_t seed, int count);

void write_dataset(const Dataset& ds, const std::string& root);
Dataset read_dataset(const std::string& root);

// External directory layout: one subdirectory per set holding <k>.ppm
// (k = 0..M-1), query.txt, golden.txt and optionally kind.txt. The token map
// file has "word id" lines; unknown words map to unk.
Dataset read_external_dataset(const std::string& root, const std::string& token_map_path);

// Direct predicate check used by the generator's uniqueness audit and by
// tests: does this image satisfy the query encoded in `tokens`?
bool satisfies_query(const Image& img, const std::vector<int>& tokens, int patch_size,
                     const TokenVocab& vocab);

}  // namespace patchalign
