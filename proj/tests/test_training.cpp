#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "patchalign/eval.hpp"
#include "patchalign/training.hpp"

using namespace patchalign;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir(const std::string& name) {
    path = fs::temp_directory_path() / ("patchalign_train_" + name);
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

Settings train_settings() {
  Settings s;
  s.model.vit_width = 16;
  s.model.vit_heads = 4;
  s.model.vit_depth = 2;
  s.model.text_depth = 1;
  s.model.fusion_depth = 1;
  s.adapter.layers = {1, 2};
  s.adapter.delta = 2;
  s.decoder.depth = 1;
  s.decoder.heads = 4;
  s.inter.depth = 1;
  s.inter.heads = 4;
  s.data.candidates = 4;
  s.data.sets = 8;
  s.train.batch_pairs = 4;
  s.train.batch_sets = 2;
  s.train.warmup_steps = 0;
  for (int st = 0; st < 4; ++st) s.train.epochs[st] = 1;
  return s;
}

std::map<std::string, uint64_t> group_checksums(const Model& m) {
  std::map<std::string, uint64_t> out;
  for (const std::string& g : m.params().groups())
    out[g] = m.params().group_checksum(g);
  return out;
}

}  // namespace

TEST_CASE("adam: zero gradients and zero decay are a fixed point") {
  std::vector<real> p{1.0, -2.0, 3.0};
  std::vector<real> g{0.0, 0.0, 0.0}, m, v;
  AdamConfig cfg;
  cfg.weight_decay = 0.0;
  adam_update(p, g, m, v, 1, 0.1, cfg);
  CHECK(p == std::vector<real>{1.0, -2.0, 3.0});
}

TEST_CASE("adam: two steps match the hand-run scalar recursion") {
  // One scalar parameter, lr 0.1, betas (0.9, 0.999), eps 1e-8.
  std::vector<real> p{0.5}, m, v;
  AdamConfig cfg;
  cfg.weight_decay = 0.0;
  real g1 = 0.3, g2 = -0.2;
  adam_update(p, {g1}, m, v, 1, 0.1, cfg);
  real hm = 0.1 * g1;  // (1-beta1) g
  real hv = 0.001 * g1 * g1;
  real mhat = hm / (1 - 0.9);
  real vhat = hv / (1 - 0.999);
  real expect = 0.5 - 0.1 * mhat / (std::sqrt(vhat) + 1e-8);
  CHECK(p[0] == doctest::Approx(expect).epsilon(1e-12));
  adam_update(p, {g2}, m, v, 2, 0.1, cfg);
  hm = 0.9 * hm + 0.1 * g2;
  hv = 0.999 * hv + 0.001 * g2 * g2;
  mhat = hm / (1 - 0.9 * 0.9);
  vhat = hv / (1 - 0.999 * 0.999);
  expect = expect - 0.1 * mhat / (std::sqrt(vhat) + 1e-8);
  CHECK(p[0] == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("warmup schedule boundary values") {
  // Step 0 sits at the floor; the base rate is reached exactly at
  // warmup_steps.
  CHECK(warmup_lr(3e-4, 1e-6, 3000, 0) == doctest::Approx(1e-6));
  CHECK(warmup_lr(3e-4, 1e-6, 3000, 1500) ==
        doctest::Approx(1e-6 + (3e-4 - 1e-6) * 0.5));
  CHECK(warmup_lr(3e-4, 1e-6, 3000, 3000) == doctest::Approx(3e-4));
  CHECK(warmup_lr(3e-4, 1e-6, 3000, 9000) == doctest::Approx(3e-4));
  CHECK(warmup_lr(3e-4, 1e-6, 0, 0) == doctest::Approx(3e-4));
}

TEST_CASE("non-finite gradients abort with the tensor name") {
  Settings s = train_settings();
  Model model(s, 1);
  model.params().set_trainable({"scorer"});
  Tensor w = model.params().get("scorer.head.w");
  w.node()->ensure_grad();
  w.grad()[0] = std::nan("");
  OptimizerState st;
  std::map<std::string, real> lr{{"scorer", 1e-3}};
  CHECK_THROWS_WITH_AS(optimizer_step(model.params(), st, lr, AdamConfig{}, 1.0),
                       doctest::Contains("scorer.head.w"), Error);
}

TEST_CASE("stage 1 trains exactly the adapter, decoder and mask embedding") {
  Settings s = train_settings();
  Dataset data = generate_dataset(s, 21, 8);
  Model model(s, 2);
  Trainer trainer(model, s);
  trainer.begin_stage(1);
  auto before = group_checksums(model);

  Rng rng(3);
  // A couple of steps so the zero-initialized up-projection starts moving.
  trainer.pair_step(1, data, {0, 1, 2, 3}, rng, 0, 0);
  trainer.pair_step(1, data, {4, 5, 6, 7}, rng, 1, 0);
  auto after = group_checksums(model);

  for (const std::string& frozen : {"vit", "text", "fusion", "scorer", "intercontext"})
    CHECK(before.at(frozen) == after.at(frozen));
  for (const std::string& moved : {"adapter", "decoder", "mask_embed"})
    CHECK(before.at(moved) != after.at(moved));
}

TEST_CASE("adapter scalar count equals the scalars receiving gradient in stage 1") {
  Settings s = train_settings();
  Dataset data = generate_dataset(s, 22, 8);
  Model model(s, 4);
  Trainer trainer(model, s);
  trainer.begin_stage(1);
  Rng rng(5);
  // After one step the up-projection is nonzero, so gradient reaches the
  // down-projections too.
  trainer.pair_step(1, data, {0, 1, 2, 3}, rng, 0, 0);
  trainer.pair_step(1, data, {4, 5, 6, 7}, rng, 1, 0);
  // Inspect the gradients left by the last backward pass.
  long long with_grad = 0;
  for (const auto& [name, t] : model.params().items()) {
    if (ParameterStore::group_of(name) != "adapter") continue;
    for (real g : t.grad()) with_grad += g != 0.0;
  }
  CHECK(with_grad == adapter_param_count(s.model, s.adapter));
}

TEST_CASE("a repeated stage-1 batch descends within 20 steps") {
  Settings s = train_settings();
  Dataset data = generate_dataset(s, 23, 4);
  Model model(s, 6);
  Trainer trainer(model, s);
  trainer.begin_stage(1);
  Rng rng(7);
  std::vector<int> batch{0, 1, 2, 3};
  real start = trainer.pair_step(1, data, batch, rng, 0, 0).total;
  real loss = start;
  for (int step = 1; step < 20; ++step)
    loss = trainer.pair_step(1, data, batch, rng, step, 0).total;
  INFO("start=" << start << " end=" << loss);
  CHECK(loss < start);
}

TEST_CASE("checkpoints: save -> load -> save is byte-identical") {
  TempDir tmp("ckpt");
  Settings s = train_settings();
  Model model(s, 8);
  Rng rng(9);
  std::string p1 = (tmp.path / "a.ckpt").string();
  std::string p2 = (tmp.path / "b.ckpt").string();
  save_checkpoint(p1, model, 1, rng);

  Model model2(s, 999);  // different init, overwritten by the load
  Rng rng2(0);
  int stage = load_checkpoint(p1, model2, &rng2);
  CHECK(stage == 1);
  CHECK(rng2.serialize() == rng.serialize());
  save_checkpoint(p2, model2, stage, rng2);

  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  std::stringstream b1, b2;
  b1 << f1.rdbuf();
  b2 << f2.rdbuf();
  CHECK(b1.str() == b2.str());
  CHECK(peek_checkpoint_stage(p1) == 1);
}

TEST_CASE("checkpoint shape validation names the tensor") {
  TempDir tmp("ckptshape");
  Settings s = train_settings();
  Model model(s, 10);
  Rng rng(11);
  std::string path = (tmp.path / "c.ckpt").string();
  save_checkpoint(path, model, 2, rng);

  // Loading into a model with a different downsampling rate fails on the
  // adapter's up-projection width.
  Settings s4 = s;
  s4.adapter.delta = 4;
  Model other(s4, 10);
  CHECK_THROWS_WITH_AS(load_checkpoint(path, other, nullptr),
                       doctest::Contains("adapter."), Error);

  // A corrupted header is rejected.
  std::ofstream bad(tmp.path / "bad.ckpt", std::ios::binary);
  bad << "NOTACKPT\n";
  bad.close();
  CHECK_THROWS_AS(load_checkpoint((tmp.path / "bad.ckpt").string(), model, nullptr), Error);

  // Editing a shape in the header is caught.
  std::ifstream in(path, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  in.close();
  std::string text = buf.str();
  auto pos = text.find("vit.pos 16 16");
  REQUIRE(pos != std::string::npos);
  text.replace(pos, 13, "vit.pos 16 17");
  std::ofstream out(tmp.path / "edited.ckpt", std::ios::binary);
  out << text;
  out.close();
  CHECK_THROWS_WITH_AS(load_checkpoint((tmp.path / "edited.ckpt").string(), model, nullptr),
                       doctest::Contains("vit.pos"), Error);
}

TEST_CASE("full stage runs are deterministic and honor the freeze audit") {
  TempDir tmp("determinism");
  Settings s = train_settings();
  Dataset data = generate_dataset(s, 31, 8);

  auto run_pipeline = [&](const std::string& name) {
    Model model(s, Rng::mix(s.train.seed, 0x696e6974ull));
    Rng rng(Rng::mix(s.train.seed, 0x747261696eull));
    Trainer trainer(model, s);
    std::ostringstream log;
    trainer.run_stage(0, data, rng, &log);
    trainer.run_stage(1, data, rng, &log);
    std::string path = (tmp.path / name).string();
    save_checkpoint(path, model, 1, rng);
    return std::pair<std::string, std::string>(path, log.str());
  };
  auto [p1, log1] = run_pipeline("run1.ckpt");
  auto [p2, log2] = run_pipeline("run2.ckpt");
  CHECK(log1 == log2);
  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  std::stringstream b1, b2;
  b1 << f1.rdbuf();
  b2 << f2.rdbuf();
  CHECK(b1.str() == b2.str());

  // The log carries the pinned field layout.
  CHECK(log1.find("stage=0") != std::string::npos);
  CHECK(log1.find("itm=") != std::string::npos);
  CHECK(log1.find("tmim=") != std::string::npos);
  CHECK(log1.find("lr=") != std::string::npos);
  CHECK(log1.find("frozen_checksum=") != std::string::npos);
}

TEST_CASE("stage 2 and 3 respect their freeze policies") {
  Settings s = train_settings();
  Dataset data = generate_dataset(s, 33, 4);
  Model model(s, 12);
  Trainer trainer(model, s);
  Rng rng(13);
  // Give the zero-initialized heads some mass so gradients actually flow
  // into the encoders below them.
  for (const std::string& name : {"scorer.head.w", "intercontext.head.w"}) {
    Tensor w = model.params().get(name);
    for (real& v : w.value()) v = rng.normal(0, 0.3);
  }

  trainer.begin_stage(2);
  auto before = group_checksums(model);
  trainer.set_step(2, data, {0, 1}, rng, 0, 0);
  auto after = group_checksums(model);
  CHECK(before.at("decoder") == after.at("decoder"));
  CHECK(before.at("mask_embed") == after.at("mask_embed"));
  CHECK(before.at("intercontext") == after.at("intercontext"));
  CHECK(before.at("vit") != after.at("vit"));
  CHECK(before.at("scorer") != after.at("scorer"));

  trainer.begin_stage(3);
  before = group_checksums(model);
  trainer.set_step(3, data, {2, 3}, rng, 0, 0);
  after = group_checksums(model);
  for (const std::string& g : {"vit", "text", "fusion", "scorer", "adapter", "decoder",
                               "mask_embed"})
    CHECK(before.at(g) == after.at(g));
  CHECK(before.at("intercontext") != after.at("intercontext"));
}
