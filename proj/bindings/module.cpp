#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "patchalign/adapter.hpp"
#include "patchalign/data.hpp"
#include "patchalign/eval.hpp"
#include "patchalign/model.hpp"
#include "patchalign/training.hpp"

namespace py = pybind11;
using namespace patchalign;

namespace {

Image image_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 3) throw py::value_error("image must be h x w x c");
  Image img(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)),
            static_cast<int>(a.shape(2)));
  std::copy(a.data(), a.data() + a.size(), img.px.begin());
  return img;
}

py::array_t<double> array_from_image(const Image& img) {
  py::array_t<double> a({img.h, img.w, img.c});
  std::copy(img.px.begin(), img.px.end(), a.mutable_data());
  return a;
}

py::array_t<double> array_from_tensor(const Tensor& t) {
  py::array_t<double> a({t.rows(), t.cols()});
  std::copy(t.value().begin(), t.value().end(), a.mutable_data());
  return a;
}

Settings settings_from_text(const std::string& text) {
  Settings s = text.empty() ? Settings{} : Settings::parse_text(text);
  s.validate();
  return s;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "contrastive image retrieval with adapter-based text-guided masking";

  py::register_exception<Error>(m, "PatchalignError");

  py::class_<Settings>(m, "Settings")
      .def(py::init([](const std::string& text) { return settings_from_text(text); }),
           py::arg("text") = "")
      .def_static("from_file", &Settings::load_file)
      .def("serialize", &Settings::serialize)
      .def("fingerprint", &Settings::fingerprint);

  py::class_<MaskMatrix>(m, "MaskMatrix")
      .def_readonly("mu", &MaskMatrix::mu)
      .def_readonly("pi", &MaskMatrix::pi)
      .def_readonly("masked_idx", &MaskMatrix::masked_idx)
      .def_readonly("visible_idx", &MaskMatrix::visible_idx);

  m.def("mask_count", &mask_count, py::arg("pi"), py::arg("patches"));
  m.def(
      "select_mask",
      [](const std::vector<double>& salience, double pi) { return select_mask(salience, pi); },
      py::arg("salience"), py::arg("pi"));

  m.def("adapter_param_count", [](const Settings& s) {
    return adapter_param_count(s.model, s.adapter);
  });

  m.def("itm_loss_value", [](const std::vector<std::pair<std::vector<double>, int>>& pairs) {
    std::vector<Tensor> logits;
    std::vector<int> labels;
    for (const auto& [lv, q] : pairs) {
      if (lv.size() != 2) throw py::value_error("each logit entry must have 2 values");
      logits.push_back(Tensor::from_data(1, 2, lv));
      labels.push_back(q);
    }
    return itm_loss(logits, labels).item();
  });

  m.def("cosine_similarity", &cosine_similarity);
  m.def("mine_hard_negatives",
        [](const std::vector<std::vector<double>>& img,
           const std::vector<std::vector<double>>& txt) {
          std::vector<std::pair<int, int>> out;
          for (const Pair& p : mine_hard_negatives(img, txt)) out.emplace_back(p.image, p.text);
          return out;
        });

  py::class_<Model>(m, "Model")
      .def(py::init([](const Settings& s, uint64_t seed) { return new Model(s, seed); }),
           py::arg("settings"), py::arg("init_seed"))
      .def("encode_image",
           [](const Model& model, const py::array_t<double>& image) {
             return array_from_tensor(model.encode_image(image_from_array(image)).final);
           })
      .def("encode_text",
           [](const Model& model, const std::vector<int>& ids) {
             return array_from_tensor(model.encode_text(Tokens::of(ids)));
           })
      .def("itm_match_probability",
           [](const Model& model, const py::array_t<double>& image,
              const std::vector<int>& ids) {
             Tokens toks = Tokens::of(ids);
             Tensor txt = model.encode_text(toks);
             auto fused = model.fuse(txt, toks, model.encode_image(image_from_array(image)).final);
             return softmax_values(model.itm_logits(fused.states).value())[0];
           })
      .def("cross_attention_salience",
           [](const Model& model, const py::array_t<double>& image,
              const std::vector<int>& ids) {
             Tokens toks = Tokens::of(ids);
             Tensor txt = model.encode_text(toks);
             auto fused = model.fuse(txt, toks, model.encode_image(image_from_array(image)).final);
             return aggregate_attention(fused.record, TokenReduce::mean_tokens);
           });

  m.def("generate_dataset",
        [](const Settings& s, uint64_t seed, int count, const std::string& out_dir) {
          write_dataset(generate_dataset(s, seed, count), out_dir);
        });
  m.def("read_manifest_ids", [](const std::string& root) {
    std::vector<std::string> ids;
    for (const auto& set : read_dataset(root).sets) ids.push_back(set.id);
    return ids;
  });
  m.def("write_ppm", [](const std::string& path, const py::array_t<double>& image) {
    write_ppm(path, image_from_array(image));
  });
  m.def("read_ppm", [](const std::string& path) { return array_from_image(read_ppm(path)); });

  m.def(
      "run_stage",
      [](const Settings& s, int stage, const std::string& data_dir,
         const std::string& init_ckpt, const std::string& out_ckpt) {
        Dataset ds = read_dataset(data_dir);
        Model model(s, Rng::mix(s.train.seed, 0x696e6974ull));
        Rng rng(Rng::mix(s.train.seed, 0x747261696eull));
        if (!init_ckpt.empty()) load_checkpoint(init_ckpt, model, &rng);
        Trainer trainer(model, s);
        trainer.run_stage(stage, ds, rng, nullptr);
        save_checkpoint(out_ckpt, model, stage, rng);
      },
      py::arg("settings"), py::arg("stage"), py::arg("data_dir"), py::arg("init_ckpt"),
      py::arg("out_ckpt"));

  m.def(
      "evaluate",
      [](const Settings& s, const std::string& data_dir, const std::string& ckpt,
         const std::string& mode) {
        Dataset ds = read_dataset(data_dir);
        Model model(s, Rng::mix(s.train.seed, 0x696e6974ull));
        load_checkpoint(ckpt, model, nullptr);
        MetricsReport rep =
            mode == "finetuned" ? eval_finetuned(model, ds) : eval_zero_shot(model, ds);
        py::dict out;
        out["accuracy_all"] = rep.accuracy_all();
        out["accuracy_video"] = rep.accuracy_video();
        out["accuracy_static"] = rep.accuracy_static();
        out["report"] = rep.serialize();
        return out;
      },
      py::arg("settings"), py::arg("data_dir"), py::arg("ckpt"), py::arg("mode") = "zeroshot");
}
