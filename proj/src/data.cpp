#include "patchalign/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace patchalign {

void write_ppm(const std::string& path, const Image& img) {
  if (img.c != 3) fail(ErrorKind::io, "P6 requires 3 channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::io, "cannot write " + path);
  out << "P6\n" << img.w << " " << img.h << "\n255\n";
  std::vector<unsigned char> bytes(img.px.size());
  for (size_t i = 0; i < img.px.size(); ++i) {
    real v = std::min(std::max(img.px[i], 0.0), 1.0);
    bytes[i] = static_cast<unsigned char>(std::lround(v * 255.0));
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  if (!out) fail(ErrorKind::io, "short write to " + path);
}

Image read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open " + path);
  std::string magic;
  in >> magic;
  if (magic != "P6") fail(ErrorKind::io, path + ": not a P6 pixmap");
  auto next_int = [&]() {
    // skip whitespace and '#' comments
    int ch = in.get();
    while (ch == ' ' || ch == '\t' || ch == '\r' || ch == '\n' || ch == '#') {
      if (ch == '#')
        while (ch != '\n' && ch != EOF) ch = in.get();
      ch = in.get();
    }
    int v = 0;
    bool any = false;
    while (ch >= '0' && ch <= '9') {
      v = v * 10 + (ch - '0');
      any = true;
      ch = in.get();
    }
    if (!any) fail(ErrorKind::io, path + ": malformed header");
    return v;
  };
  int w = next_int();
  int h = next_int();
  int maxval = next_int();
  if (maxval != 255) fail(ErrorKind::io, path + ": only 8-bit pixmaps supported");
  Image img(h, w, 3);
  std::vector<unsigned char> bytes(static_cast<size_t>(h) * w * 3);
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (in.gcount() != static_cast<std::streamsize>(bytes.size()))
    fail(ErrorKind::io, path + ": truncated pixel data");
  for (size_t i = 0; i < bytes.size(); ++i) img.px[i] = bytes[i] / 255.0;
  return img;
}

int TokenVocab::kind_id(const std::string& kind) const {
  if (kind == "patch_recolor") return 4;
  if (kind == "patch_blur_stripe") return 5;
  if (kind == "object_count") return 6;
  if (kind == "position_shift") return 7;
  fail(ErrorKind::data, "unknown cue kind: " + kind);
}

std::map<std::string, int> TokenVocab::word_map() const {
  std::map<std::string, int> m;
  m["<pad>"] = pad;
  m["<bos>"] = bos;
  m["<eos>"] = eos;
  m["<unk>"] = unk;
  m["recolor"] = 4;
  m["blur"] = 5;
  m["count"] = 6;
  m["marker"] = 7;
  for (int r = 0; r < grid_h; ++r) m["row" + std::to_string(r)] = row_id(r);
  for (int c = 0; c < grid_w; ++c) m["col" + std::to_string(c)] = col_id(c);
  static const char* color_names[8] = {"red",     "green", "blue",  "yellow",
                                       "magenta", "cyan",  "white", "dark"};
  for (int k = 0; k < 8; ++k) m[color_names[k]] = color_id(k);
  for (int n = 1; n <= 3; ++n) m["num" + std::to_string(n)] = count_id(n);
  return m;
}

namespace {

// Saturated palette, far from the base-scene range [0.25, 0.75].
const real kPalette[8][3] = {
    {0.95, 0.05, 0.05}, {0.05, 0.95, 0.05}, {0.05, 0.05, 0.95}, {0.95, 0.95, 0.05},
    {0.95, 0.05, 0.95}, {0.05, 0.95, 0.95}, {0.95, 0.95, 0.95}, {0.05, 0.05, 0.05}};

const char* kColorNames[8] = {"red",     "green", "blue",  "yellow",
                              "magenta", "cyan",  "white", "dark"};

struct ScenePhase {
  real fx[3], fy[3], phase[3];
};

ScenePhase draw_scene(Rng& rng) {
  ScenePhase s;
  for (int ch = 0; ch < 3; ++ch) {
    s.fx[ch] = rng.uniform(0.5, 1.5);
    s.fy[ch] = rng.uniform(0.5, 1.5);
    s.phase[ch] = rng.uniform(0.0, 1.0);
  }
  return s;
}

void render_base(Image& img, const ScenePhase& s, real drift, real noise, Rng& rng) {
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      for (int ch = 0; ch < 3; ++ch) {
        real t = s.fx[ch] * x / img.w + s.fy[ch] * y / img.h + s.phase[ch] + drift;
        real v = 0.5 + 0.22 * std::sin(2.0 * M_PI * t);
        v += rng.uniform(-noise, noise);
        img.at(y, x, ch) = std::min(std::max(v, 0.25), 0.75);
      }
}

void quantize(Image& img) {
  for (real& v : img.px) v = std::lround(std::min(std::max(v, 0.0), 1.0) * 255.0) / 255.0;
}

struct Cue {
  std::string kind;
  int row = 0, col = 0;  // patch grid position
  int color = 0;         // palette index (recolor)
  int count = 1;         // object_count
};

void paint_cue(Image& img, const Cue& cue, int patch, real noise, Rng& rng) {
  const int y0 = cue.row * patch, x0 = cue.col * patch;
  if (cue.kind == "patch_recolor") {
    for (int y = 0; y < patch; ++y)
      for (int x = 0; x < patch; ++x)
        for (int ch = 0; ch < 3; ++ch)
          img.at(y0 + y, x0 + x, ch) =
              std::min(std::max(kPalette[cue.color][ch] + rng.uniform(-noise, noise), 0.0), 1.0);
  } else if (cue.kind == "patch_blur_stripe") {
    // Two adjacent patches flattened to their joint mean color.
    real mean[3] = {0, 0, 0};
    int n = 0;
    for (int dx = 0; dx < 2 * patch; ++dx)
      for (int y = 0; y < patch; ++y) {
        for (int ch = 0; ch < 3; ++ch) mean[ch] += img.at(y0 + y, x0 + dx, ch);
        ++n;
      }
    for (int ch = 0; ch < 3; ++ch) mean[ch] /= n;
    for (int dx = 0; dx < 2 * patch; ++dx)
      for (int y = 0; y < patch; ++y)
        for (int ch = 0; ch < 3; ++ch) img.at(y0 + y, x0 + dx, ch) = mean[ch];
  } else if (cue.kind == "object_count") {
    // cue.count single bright pixels at fixed offsets inside one patch.
    static const int offs[3][2] = {{0, 0}, {0, 2}, {2, 2}};
    for (int i = 0; i < cue.count; ++i)
      for (int ch = 0; ch < 3; ++ch)
        img.at(y0 + offs[i][0], x0 + offs[i][1], ch) = 0.95;
  } else if (cue.kind == "position_shift") {
    // Bright 2x2 marker block in the patch corner.
    for (int y = 0; y < 2; ++y)
      for (int x = 0; x < 2; ++x)
        for (int ch = 0; ch < 3; ++ch) img.at(y0 + y, x0 + x, ch) = 0.95;
  } else {
    fail(ErrorKind::data, "unknown cue kind: " + cue.kind);
  }
}

struct PatchStats {
  real mean[3];
  real stddev;  // pooled over channels
};

PatchStats patch_stats(const Image& img, int prow, int pcol, int patch) {
  PatchStats st{{0, 0, 0}, 0};
  const int y0 = prow * patch, x0 = pcol * patch;
  int n = patch * patch;
  for (int y = 0; y < patch; ++y)
    for (int x = 0; x < patch; ++x)
      for (int ch = 0; ch < 3; ++ch) st.mean[ch] += img.at(y0 + y, x0 + x, ch);
  for (int ch = 0; ch < 3; ++ch) st.mean[ch] /= n;
  real var = 0.0;
  for (int y = 0; y < patch; ++y)
    for (int x = 0; x < patch; ++x)
      for (int ch = 0; ch < 3; ++ch) {
        real d = img.at(y0 + y, x0 + x, ch) - st.mean[ch];
        var += d * d;
      }
  st.stddev = std::sqrt(var / (3.0 * n));
  return st;
}

int count_bright(const Image& img, int prow, int pcol, int patch) {
  int n = 0;
  const int y0 = prow * patch, x0 = pcol * patch;
  for (int y = 0; y < patch; ++y)
    for (int x = 0; x < patch; ++x) {
      bool bright = true;
      for (int ch = 0; ch < 3; ++ch) bright = bright && img.at(y0 + y, x0 + x, ch) > 0.85;
      n += bright;
    }
  return n;
}

struct ParsedQuery {
  std::string kind;
  int row = 0, col = 0, color = 0, count = 1;
};

ParsedQuery parse_query(const std::vector<int>& tokens, const TokenVocab& v) {
  ParsedQuery q;
  if (tokens.size() < 4 || tokens[0] != TokenVocab::bos)
    fail(ErrorKind::data, "malformed query tokens");
  int kind_tok = tokens[1];
  switch (kind_tok) {
    case 4: q.kind = "patch_recolor"; break;
    case 5: q.kind = "patch_blur_stripe"; break;
    case 6: q.kind = "object_count"; break;
    case 7: q.kind = "position_shift"; break;
    default: fail(ErrorKind::data, "query has no cue kind token");
  }
  q.row = tokens[2] - v.row_id(0);
  q.col = tokens[3] - v.col_id(0);
  if (q.row < 0 || q.row >= v.grid_h || q.col < 0 || q.col >= v.grid_w)
    fail(ErrorKind::data, "query position tokens out of range");
  if (q.kind == "patch_recolor") {
    q.color = tokens.at(4) - v.color_id(0);
    if (q.color < 0 || q.color >= 8) fail(ErrorKind::data, "query color token out of range");
  } else if (q.kind == "object_count") {
    q.count = tokens.at(4) - v.count_id(1) + 1;
    if (q.count < 1 || q.count > 3) fail(ErrorKind::data, "query count token out of range");
  }
  return q;
}

}  // namespace

bool satisfies_query(const Image& img, const std::vector<int>& tokens, int patch_size,
                     const TokenVocab& vocab) {
  ParsedQuery q = parse_query(tokens, vocab);
  if (q.kind == "patch_blur_stripe" && (q.col + 2) * patch_size > img.w) return false;
  if (q.kind == "patch_recolor") {
    PatchStats st = patch_stats(img, q.row, q.col, patch_size);
    for (int ch = 0; ch < 3; ++ch)
      if (std::abs(st.mean[ch] - kPalette[q.color][ch]) > 0.12) return false;
    return st.stddev < 0.05;
  }
  if (q.kind == "patch_blur_stripe") {
    PatchStats a = patch_stats(img, q.row, q.col, patch_size);
    PatchStats b = patch_stats(img, q.row, q.col + 1, patch_size);
    return a.stddev < 0.006 && b.stddev < 0.006;
  }
  if (q.kind == "object_count")
    return count_bright(img, q.row, q.col, patch_size) == q.count;
  if (q.kind == "position_shift")
    return count_bright(img, q.row, q.col, patch_size) >= 4;
  return false;
}

namespace {

Cue draw_cue(const std::string& kind, const TokenVocab& v, Rng& rng) {
  Cue c;
  c.kind = kind;
  c.row = rng.below(v.grid_h);
  c.col = kind == "patch_blur_stripe" ? rng.below(v.grid_w - 1) : rng.below(v.grid_w);
  c.color = rng.below(8);
  c.count = 1 + rng.below(3);
  return c;
}

bool same_target(const Cue& a, const Cue& b) {
  if (a.row != b.row || a.col != b.col) return false;
  if (a.kind == "patch_recolor") return a.color == b.color;
  if (a.kind == "object_count") return a.count == b.count;
  return true;
}

std::vector<int> tokens_for(const Cue& c, const TokenVocab& v) {
  std::vector<int> t{TokenVocab::bos, v.kind_id(c.kind), v.row_id(c.row), v.col_id(c.col)};
  if (c.kind == "patch_recolor") t.push_back(v.color_id(c.color));
  if (c.kind == "object_count") t.push_back(v.count_id(c.count));
  t.push_back(TokenVocab::eos);
  return t;
}

std::string text_for(const Cue& c) {
  std::string kind_word = c.kind == "patch_recolor"     ? "recolor"
                          : c.kind == "patch_blur_stripe" ? "blur"
                          : c.kind == "object_count"      ? "count"
                                                          : "marker";
  std::string s = kind_word + " row" + std::to_string(c.row) + " col" + std::to_string(c.col);
  if (c.kind == "patch_recolor") s += std::string(" ") + kColorNames[c.color];
  if (c.kind == "object_count") s += " num" + std::to_string(c.count);
  return s;
}

}  // namespace

GeneratedInstance generate_instance(const Settings& cfg, uint64_t seed, int index) {
  const ModelConfig& m = cfg.model;
  TokenVocab vocab{m.grid_h(), m.grid_w()};
  if (m.text_vocab < vocab.required_vocab())
    fail(ErrorKind::config, strformat("vocab %d too small for this grid (need %d)",
                                      m.text_vocab, vocab.required_vocab()));
  if (static_cast<int>(tokens_for(Cue{"patch_recolor", 0, 0, 0, 1}, vocab).size()) >
      m.max_tokens)
    fail(ErrorKind::config, "max_tokens too small for generated queries");
  for (const std::string& kind : cfg.data.cue_kinds) {
    if (kind == "object_count" && m.patch_size < 4)
      fail(ErrorKind::config, "object_count cues need patch_size >= 4");
    if (kind == "position_shift" && m.patch_size < 2)
      fail(ErrorKind::config, "position_shift cues need patch_size >= 2");
    if (kind == "patch_blur_stripe" && m.grid_w() < 2)
      fail(ErrorKind::config, "patch_blur_stripe cues need a grid at least 2 wide");
  }
  const int M = cfg.data.candidates;
  Rng rng(Rng::mix(seed, static_cast<uint64_t>(index)));

  for (int attempt = 0; attempt < 32; ++attempt) {
    bool video = rng.uniform() < cfg.data.video_fraction;
    int golden = rng.below(M);
    const std::string& kind =
        cfg.data.cue_kinds[rng.below(static_cast<int>(cfg.data.cue_kinds.size()))];
    Cue target = draw_cue(kind, vocab, rng);

    ScenePhase shared = draw_scene(rng);
    CandidateSet set;
    set.id = strformat("set%06d", index);
    set.kind = video ? "video" : "static";
    set.golden = golden;
    for (int k = 0; k < M; ++k) {
      Image img(m.image_height, m.image_width, m.channels);
      ScenePhase scene = video ? shared : draw_scene(rng);
      real drift = video ? 0.03 * k : 0.0;
      render_base(img, scene, drift, cfg.data.noise, rng);
      if (k == golden) {
        paint_cue(img, target, m.patch_size, cfg.data.noise, rng);
      } else {
        // Mismatched cue most of the time, occasionally no cue at all.
        if (rng.uniform() < 0.75) {
          Cue d = draw_cue(kind, vocab, rng);
          for (int guard = 0; guard < 64 && same_target(target, d); ++guard)
            d = draw_cue(kind, vocab, rng);
          if (!same_target(target, d)) paint_cue(img, d, m.patch_size, cfg.data.noise, rng);
        }
      }
      quantize(img);
      set.images.push_back(std::move(img));
    }
    std::vector<int> toks = tokens_for(target, vocab);
    set.query = Tokens::of(toks);

    int satisfied = 0;
    bool golden_ok = false;
    for (int k = 0; k < M; ++k) {
      bool s = satisfies_query(set.images[k], toks, m.patch_size, vocab);
      satisfied += s;
      if (k == golden) golden_ok = s;
    }
    if (satisfied != 1 || !golden_ok) continue;  // resample

    set.cue_patches.push_back(target.row * vocab.grid_w + target.col);
    if (target.kind == "patch_blur_stripe")
      set.cue_patches.push_back(target.row * vocab.grid_w + target.col + 1);

    GeneratedInstance out;
    out.record.set_id = set.id;
    out.record.tokens = toks;
    out.record.text = text_for(target);
    out.record.golden = golden;
    out.record.kind = set.kind;
    out.record.cue_patches = set.cue_patches;
    out.set = std::move(set);
    return out;
  }
  fail(ErrorKind::data,
       strformat("instance %d: no unique satisfier after 32 attempts", index));
}

Dataset generate_dataset(const Settings& cfg, uint64_t seed, int count) {
  Dataset ds;
  for (int i = 0; i < count; ++i) {
    GeneratedInstance gi = generate_instance(cfg, seed, i);
    ds.records.push_back(std::move(gi.record));
    ds.sets.push_back(std::move(gi.set));
  }
  return ds;
}

void write_dataset(const Dataset& ds, const std::string& root) {
  fs::create_directories(fs::path(root) / "sets");
  std::ofstream mf(fs::path(root) / "manifest.jsonl");
  if (!mf) fail(ErrorKind::io, "cannot write manifest under " + root);
  for (size_t i = 0; i < ds.sets.size(); ++i) {
    const CandidateSet& set = ds.sets[i];
    SetRecord rec = ds.records[i];
    fs::create_directories(fs::path(root) / "sets" / set.id);
    rec.images.clear();
    for (size_t k = 0; k < set.images.size(); ++k) {
      std::string rel = "sets/" + set.id + "/" + std::to_string(k) + ".ppm";
      write_ppm((fs::path(root) / rel).string(), set.images[k]);
      rec.images.push_back(rel);
    }
    json j;
    j["set_id"] = rec.set_id;
    j["images"] = rec.images;
    j["tokens"] = rec.tokens;
    if (!rec.text.empty()) j["text"] = rec.text;
    j["golden"] = rec.golden;
    j["kind"] = rec.kind;
    if (!rec.cue_patches.empty()) j["cue_patches"] = rec.cue_patches;
    if (!rec.category.empty()) j["category"] = rec.category;
    mf << j.dump() << "\n";
  }
}

Dataset read_dataset(const std::string& root) {
  std::ifstream mf(fs::path(root) / "manifest.jsonl");
  if (!mf) fail(ErrorKind::io, "cannot open manifest under " + root);
  Dataset ds;
  std::string line;
  int line_no = 0;
  while (std::getline(mf, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      fail(ErrorKind::data, strformat("manifest line %d: %s", line_no, e.what()));
    }
    SetRecord rec;
    try {
      rec.set_id = j.at("set_id").get<std::string>();
      rec.images = j.at("images").get<std::vector<std::string>>();
      rec.tokens = j.at("tokens").get<std::vector<int>>();
      rec.golden = j.at("golden").get<int>();
      rec.kind = j.at("kind").get<std::string>();
      if (j.contains("text")) rec.text = j["text"].get<std::string>();
      if (j.contains("cue_patches"))
        rec.cue_patches = j["cue_patches"].get<std::vector<int>>();
      if (j.contains("category")) rec.category = j["category"].get<std::string>();
    } catch (const json::exception& e) {
      fail(ErrorKind::data, strformat("manifest line %d: %s", line_no, e.what()));
    }
    if (rec.kind != "video" && rec.kind != "static")
      fail(ErrorKind::data, rec.set_id + ": kind must be video or static");
    if (rec.golden < 0 || rec.golden >= static_cast<int>(rec.images.size()))
      fail(ErrorKind::data,
           strformat("%s: golden index %d out of range for %zu images",
                     rec.set_id.c_str(), rec.golden, rec.images.size()));
    CandidateSet set;
    set.id = rec.set_id;
    set.kind = rec.kind;
    set.golden = rec.golden;
    set.cue_patches = rec.cue_patches;
    set.query = Tokens::of(rec.tokens);
    for (const std::string& rel : rec.images) {
      fs::path p = fs::path(root) / rel;
      if (!fs::exists(p)) fail(ErrorKind::data, rec.set_id + ": missing image " + rel);
      set.images.push_back(read_ppm(p.string()));
    }
    for (size_t k = 1; k < set.images.size(); ++k)
      if (set.images[k].h != set.images[0].h || set.images[k].w != set.images[0].w)
        fail(ErrorKind::data, rec.set_id + ": candidate images disagree on dimensions");
    ds.records.push_back(std::move(rec));
    ds.sets.push_back(std::move(set));
  }
  return ds;
}

Dataset read_external_dataset(const std::string& root, const std::string& token_map_path) {
  std::ifstream tm(token_map_path);
  if (!tm) fail(ErrorKind::io, "cannot open token map: " + token_map_path);
  std::map<std::string, int> word_to_id;
  std::string word;
  int id;
  while (tm >> word >> id) word_to_id[word] = id;

  std::vector<fs::path> set_dirs;
  for (const auto& entry : fs::directory_iterator(root))
    if (entry.is_directory()) set_dirs.push_back(entry.path());
  std::sort(set_dirs.begin(), set_dirs.end());
  if (set_dirs.empty()) fail(ErrorKind::data, "no set directories under " + root);

  Dataset ds;
  for (const fs::path& dir : set_dirs) {
    SetRecord rec;
    rec.set_id = dir.filename().string();
    std::vector<fs::path> imgs;
    for (const auto& entry : fs::directory_iterator(dir))
      if (entry.path().extension() == ".ppm") imgs.push_back(entry.path());
    std::sort(imgs.begin(), imgs.end(), [](const fs::path& a, const fs::path& b) {
      return std::stoi(a.stem().string()) < std::stoi(b.stem().string());
    });
    if (imgs.empty()) fail(ErrorKind::data, rec.set_id + ": no .ppm candidates");

    std::ifstream qf(dir / "query.txt");
    if (!qf) fail(ErrorKind::data, rec.set_id + ": missing query.txt");
    std::stringstream qs;
    qs << qf.rdbuf();
    rec.text = qs.str();
    std::vector<int> toks{TokenVocab::bos};
    std::stringstream ws(rec.text);
    while (ws >> word) {
      std::transform(word.begin(), word.end(), word.begin(),
                     [](unsigned char ch) { return std::tolower(ch); });
      auto it = word_to_id.find(word);
      toks.push_back(it == word_to_id.end() ? TokenVocab::unk : it->second);
    }
    toks.push_back(TokenVocab::eos);
    rec.tokens = toks;

    std::ifstream gf(dir / "golden.txt");
    if (!gf || !(gf >> rec.golden))
      fail(ErrorKind::data, rec.set_id + ": missing or malformed golden.txt");
    if (rec.golden < 0 || rec.golden >= static_cast<int>(imgs.size()))
      fail(ErrorKind::data, rec.set_id + ": golden index out of range");
    rec.kind = "static";
    std::ifstream kf(dir / "kind.txt");
    if (kf) kf >> rec.kind;
    if (rec.kind != "video" && rec.kind != "static")
      fail(ErrorKind::data, rec.set_id + ": kind must be video or static");

    CandidateSet set;
    set.id = rec.set_id;
    set.kind = rec.kind;
    set.golden = rec.golden;
    set.query = Tokens::of(rec.tokens);
    for (const fs::path& p : imgs) {
      rec.images.push_back(fs::relative(p, root).string());
      set.images.push_back(read_ppm(p.string()));
    }
    ds.records.push_back(std::move(rec));
    ds.sets.push_back(std::move(set));
  }
  return ds;
}

}  // namespace patchalign
