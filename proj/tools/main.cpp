#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "patchalign/data.hpp"
#include "patchalign/eval.hpp"
#include "patchalign/model.hpp"
#include "patchalign/training.hpp"

namespace fs = std::filesystem;
using namespace patchalign;

namespace {

constexpr uint64_t kInitSalt = 0x696e6974ull;   // parameter init stream
constexpr uint64_t kTrainSalt = 0x747261696eull; // training stream

Settings load_settings(const std::string& config_path, bool seed_given, uint64_t seed) {
  Settings s = config_path.empty() ? Settings{} : Settings::load_file(config_path);
  if (seed_given) s.train.seed = seed;
  s.validate();
  return s;
}

Dataset load_data(const std::string& dir, const std::string& token_map) {
  return token_map.empty() ? read_dataset(dir) : read_external_dataset(dir, token_map);
}

std::vector<std::string> split_values(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ';'))
    if (!item.empty()) out.push_back(item);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"contrastive image retrieval with adapter-based text-guided masking"};
  app.require_subcommand(1);

  std::string config_path, out_dir = ".";
  uint64_t seed = 0;
  bool seed_given = false;
  app.add_option("--config", config_path, "key=value configuration file");
  auto* seed_opt = app.add_option("--seed", seed, "override the configured seed");
  app.add_option("--out", out_dir, "output directory");

  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  int gen_sets = -1;
  gen->add_option("--sets", gen_sets, "number of candidate sets (default from config)");

  auto* train = app.add_subcommand("train", "run one training stage");
  int stage = -1;
  std::string data_dir, init_ckpt, token_map;
  train->add_option("--stage", stage, "training stage 0..3")->required();
  train->add_option("--data", data_dir, "dataset directory")->required();
  train->add_option("--init", init_ckpt, "checkpoint to start from");
  train->add_option("--token-map", token_map, "treat --data as an external-layout dataset");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string eval_mode = "zeroshot", eval_ckpt;
  eval->add_option("--mode", eval_mode, "zeroshot | finetuned");
  eval->add_option("--data", data_dir, "dataset directory")->required();
  eval->add_option("--ckpt", eval_ckpt, "checkpoint path")->required();
  eval->add_option("--token-map", token_map, "treat --data as an external-layout dataset");

  auto* grid = app.add_subcommand("grid", "sensitivity sweep over one axis");
  std::string axis, values_arg, eval_dir;
  grid->add_option("--axis", axis, "mask_ratio | insertion_layers | delta")->required();
  grid->add_option("--values", values_arg, "semicolon-separated values")->required();
  grid->add_option("--data", data_dir, "training dataset directory")->required();
  grid->add_option("--eval-data", eval_dir, "held-out dataset (default: --data)");

  auto* maskdump = app.add_subcommand("maskdump", "dump text-guided masks as images");
  int dump_count = 8;
  maskdump->add_option("--data", data_dir, "dataset directory")->required();
  maskdump->add_option("--ckpt", eval_ckpt, "checkpoint path")->required();
  maskdump->add_option("--count", dump_count, "number of sets to dump");

  CLI11_PARSE(app, argc, argv);
  seed_given = seed_opt->count() > 0;

  try {
    Settings cfg = load_settings(config_path, seed_given, seed);
    fs::create_directories(out_dir);

    if (gen->parsed()) {
      int count = gen_sets > 0 ? gen_sets : cfg.data.sets;
      Dataset ds = generate_dataset(cfg, cfg.train.seed, count);
      write_dataset(ds, out_dir);
      std::cout << "wrote " << count << " sets to " << out_dir << "\n";
      return 0;
    }

    if (train->parsed()) {
      if (stage < 0 || stage > 3) fail(ErrorKind::usage, "stage must be 0..3");
      Dataset ds = load_data(data_dir, token_map);
      Model model(cfg, Rng::mix(cfg.train.seed, kInitSalt));
      Rng rng(Rng::mix(cfg.train.seed, kTrainSalt));
      if (!init_ckpt.empty()) {
        load_checkpoint(init_ckpt, model, &rng);
      } else if (stage > 0) {
        fail(ErrorKind::usage, "stages 1..3 need --init with an earlier checkpoint");
      }
      std::string log_path = (fs::path(out_dir) / strformat("train_stage%d.log", stage)).string();
      std::ofstream log(log_path);
      if (!log) fail(ErrorKind::io, "cannot write log: " + log_path);
      Trainer trainer(model, cfg);
      trainer.run_stage(stage, ds, rng, &log);
      std::string ckpt_path = (fs::path(out_dir) / strformat("stage%d.ckpt", stage)).string();
      save_checkpoint(ckpt_path, model, stage, rng);
      std::cout << "stage " << stage << " done: " << ckpt_path << "\n";
      return 0;
    }

    if (eval->parsed()) {
      Dataset ds = load_data(data_dir, token_map);
      Model model(cfg, Rng::mix(cfg.train.seed, kInitSalt));
      int ckpt_stage = load_checkpoint(eval_ckpt, model, nullptr);
      MetricsReport rep;
      if (eval_mode == "zeroshot") {
        if (ckpt_stage < 1)
          fail(ErrorKind::usage, "zero-shot evaluation needs a stage >= 1 checkpoint");
        rep = eval_zero_shot(model, ds);
      } else if (eval_mode == "finetuned") {
        if (ckpt_stage < 3)
          fail(ErrorKind::usage, "fine-tuned evaluation needs the stage 3 checkpoint");
        rep = eval_finetuned(model, ds);
      } else {
        fail(ErrorKind::usage, "mode must be zeroshot or finetuned");
      }
      std::string path = (fs::path(out_dir) / ("report_" + eval_mode + ".txt")).string();
      write_report(path, rep);
      std::cout << strformat("accuracy_all=%.6f accuracy_video=%.6f accuracy_static=%.6f\n",
                             rep.accuracy_all(), rep.accuracy_video(), rep.accuracy_static());
      std::cout << "report: " << path << "\n";
      return 0;
    }

    if (grid->parsed()) {
      Dataset train_ds = read_dataset(data_dir);
      Dataset eval_ds = eval_dir.empty() ? train_ds : read_dataset(eval_dir);
      auto rows = sensitivity_grid(axis, split_values(values_arg), cfg, train_ds, eval_ds,
                                   &std::cout);
      std::string table = format_grid_table(axis, rows);
      std::string path = (fs::path(out_dir) / ("grid_" + axis + ".txt")).string();
      std::ofstream out(path, std::ios::binary);
      out << table;
      std::cout << table;
      std::cout << "table: " << path << "\n";
      return 0;
    }

    if (maskdump->parsed()) {
      Dataset ds = read_dataset(data_dir);
      Model model(cfg, Rng::mix(cfg.train.seed, kInitSalt));
      int ckpt_stage = load_checkpoint(eval_ckpt, model, nullptr);
      if (ckpt_stage < 1) fail(ErrorKind::usage, "maskdump needs a stage >= 1 checkpoint");
      auto result = mask_dump(model, ds, dump_count, out_dir);
      std::cout << "dumped " << result.files.size() << " masked images to " << out_dir << "\n";
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error[" << e.category() << "]: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
