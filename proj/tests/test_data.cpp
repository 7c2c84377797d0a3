#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "patchalign/data.hpp"

using namespace patchalign;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir(const std::string& name) {
    path = fs::temp_directory_path() / ("patchalign_test_" + name);
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

Settings gen_settings() {
  Settings s;
  s.data.candidates = 4;
  return s;
}

}  // namespace

TEST_CASE("ppm round-trips are pixel exact") {
  TempDir tmp("ppm");
  Rng rng(1);
  Image img(12, 8, 3);
  for (real& v : img.px) v = rng.below(256) / 255.0;  // byte-grid values
  std::string path = (tmp.path / "a.ppm").string();
  write_ppm(path, img);
  Image back = read_ppm(path);
  CHECK(back.h == 12);
  CHECK(back.w == 8);
  CHECK(back.px == img.px);

  CHECK_THROWS_AS(read_ppm((tmp.path / "missing.ppm").string()), Error);
  std::ofstream bad(tmp.path / "bad.ppm", std::ios::binary);
  bad << "P5\n1 1\n255\n";
  bad.close();
  CHECK_THROWS_AS(read_ppm((tmp.path / "bad.ppm").string()), Error);
}

TEST_CASE("generated instances have exactly one satisfying candidate") {
  Settings s = gen_settings();
  TokenVocab vocab{s.model.grid_h(), s.model.grid_w()};
  for (int i = 0; i < 200; ++i) {
    GeneratedInstance gi = generate_instance(s, 99, i);
    int satisfied = 0;
    for (int k = 0; k < s.data.candidates; ++k)
      satisfied += satisfies_query(gi.set.images[k], gi.record.tokens,
                                   s.model.patch_size, vocab);
    CHECK(satisfied == 1);
    CHECK(satisfies_query(gi.set.images[gi.set.golden], gi.record.tokens,
                          s.model.patch_size, vocab));
    // Cue locality: at most 2 patches.
    CHECK(gi.set.cue_patches.size() >= 1);
    CHECK(gi.set.cue_patches.size() <= 2);
  }
}

TEST_CASE("generation is deterministic per (seed, index) and order independent") {
  Settings s = gen_settings();
  GeneratedInstance a = generate_instance(s, 7, 3);
  GeneratedInstance b = generate_instance(s, 7, 3);
  REQUIRE(a.set.images.size() == b.set.images.size());
  for (size_t k = 0; k < a.set.images.size(); ++k)
    CHECK(a.set.images[k].px == b.set.images[k].px);
  CHECK(a.record.tokens == b.record.tokens);
  CHECK(a.set.golden == b.set.golden);

  // Different index, different seed -> different content (overwhelmingly).
  GeneratedInstance c = generate_instance(s, 7, 4);
  CHECK(a.set.images[0].px != c.set.images[0].px);
}

TEST_CASE("kind split tracks the configured ratio") {
  Settings s = gen_settings();
  s.data.video_fraction = 0.5;
  int video = 0;
  const int n = 200;
  for (int i = 0; i < n; ++i) {
    GeneratedInstance gi = generate_instance(s, 5, i);
    CHECK((gi.set.kind == "video" || gi.set.kind == "static"));
    video += gi.set.kind == "video";
  }
  CHECK(video > n / 4);
  CHECK(video < 3 * n / 4);

  s.data.video_fraction = 0.0;
  for (int i = 0; i < 20; ++i)
    CHECK(generate_instance(s, 5, i).set.kind == "static");
}

TEST_CASE("dataset write/read round-trips bit-exactly") {
  Settings s = gen_settings();
  TempDir tmp("roundtrip");
  Dataset ds = generate_dataset(s, 3, 10);
  write_dataset(ds, tmp.path.string());
  Dataset back = read_dataset(tmp.path.string());
  REQUIRE(back.sets.size() == 10);
  for (size_t i = 0; i < 10; ++i) {
    CHECK(back.sets[i].id == ds.sets[i].id);
    CHECK(back.sets[i].golden == ds.sets[i].golden);
    CHECK(back.sets[i].kind == ds.sets[i].kind);
    CHECK(back.sets[i].query.ids == ds.sets[i].query.ids);
    CHECK(back.sets[i].cue_patches == ds.sets[i].cue_patches);
    for (size_t k = 0; k < back.sets[i].images.size(); ++k)
      CHECK(back.sets[i].images[k].px == ds.sets[i].images[k].px);
  }
}

TEST_CASE("manifest validation names the offending record") {
  TempDir tmp("badmanifest");
  std::ofstream mf(tmp.path / "manifest.jsonl");
  mf << R"({"set_id":"broken0","images":["a.ppm"],"tokens":[1,4,8,12,2],"golden":1,"kind":"video"})"
     << "\n";
  mf.close();
  // golden == M (out of range) must be rejected.
  CHECK_THROWS_WITH_AS(read_dataset(tmp.path.string()),
                       doctest::Contains("broken0"), Error);

  std::ofstream mf2(tmp.path / "manifest.jsonl");
  mf2 << R"({"set_id":"broken1","images":["a.ppm"],"tokens":[1,2],"golden":0,"kind":"video"})"
      << "\n";
  mf2.close();
  // referenced file does not exist
  CHECK_THROWS_WITH_AS(read_dataset(tmp.path.string()),
                       doctest::Contains("broken1"), Error);

  std::ofstream mf3(tmp.path / "manifest.jsonl");
  mf3 << "{not json}\n";
  mf3.close();
  CHECK_THROWS_AS(read_dataset(tmp.path.string()), Error);
}

TEST_CASE("external-layout ingestion with a supplied token map") {
  Settings s = gen_settings();
  TempDir tmp("external");
  // Hand-built two-set fixture: <set>/<k>.ppm + query.txt + golden.txt.
  TokenVocab vocab{s.model.grid_h(), s.model.grid_w()};
  auto words = vocab.word_map();
  std::ofstream tmap(tmp.path / "tokens.txt");
  for (const auto& [w, id] : words) tmap << w << " " << id << "\n";
  tmap.close();

  Rng rng(9);
  for (int si = 0; si < 2; ++si) {
    fs::path dir = tmp.path / ("fixture" + std::to_string(si));
    fs::create_directories(dir);
    for (int k = 0; k < 10; ++k) {
      Image img(16, 16, 3);
      for (real& v : img.px) v = rng.below(256) / 255.0;
      write_ppm((dir / (std::to_string(k) + ".ppm")).string(), img);
    }
    std::ofstream q(dir / "query.txt");
    q << (si == 0 ? "recolor row1 col2 red" : "marker row0 col3 mystery");
    q.close();
    std::ofstream g(dir / "golden.txt");
    g << (si == 0 ? 4 : 7);
    g.close();
    if (si == 1) {
      std::ofstream k(dir / "kind.txt");
      k << "video";
    }
  }

  Dataset ds = read_external_dataset(tmp.path.string(), (tmp.path / "tokens.txt").string());
  REQUIRE(ds.sets.size() == 2);
  CHECK(ds.sets[0].images.size() == 10);
  CHECK(ds.sets[0].golden == 4);
  CHECK(ds.sets[0].kind == "static");
  CHECK(ds.sets[1].kind == "video");
  // bos + 4 words + eos, with the unknown word mapped to <unk>.
  CHECK(ds.sets[0].query.ids ==
        std::vector<int>{TokenVocab::bos, words["recolor"], words["row1"], words["col2"],
                         words["red"], TokenVocab::eos});
  CHECK(ds.sets[1].query.ids[4] == TokenVocab::unk);

  CHECK_THROWS_AS(read_external_dataset(tmp.path.string(), "nope.txt"), Error);
}

TEST_CASE("vocab map is injective and covers the grid") {
  TokenVocab v{4, 4};
  auto m = v.word_map();
  std::set<int> ids;
  for (const auto& [w, id] : m) ids.insert(id);
  CHECK(ids.size() == m.size());
  CHECK(v.required_vocab() == 27);
  CHECK(*ids.rbegin() < 27);
}
