// Python bindings for the main operations: data generation, tokenization,
// model training, online adaptation, answering and evaluation.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <random>

#include "cmt/config.hpp"
#include "cmt/corpus.hpp"
#include "cmt/error.hpp"
#include "cmt/eval.hpp"
#include "cmt/pipeline.hpp"

namespace py = pybind11;
using namespace cmt;

namespace {

py::dict record_to_dict(const QARecord& r) {
  py::dict d;
  d["doc_id"] = r.doc_id;
  d["document"] = r.document;
  d["question"] = r.question;
  d["answer"] = r.answer;
  d["split"] = to_string(r.split);
  d["relevant"] = r.relevant;
  return d;
}

QARecord record_from_dict(const py::dict& d) {
  QARecord r;
  r.doc_id = d["doc_id"].cast<std::uint64_t>();
  r.document = d["document"].cast<std::string>();
  if (d.contains("question")) r.question = d["question"].cast<std::string>();
  if (d.contains("answer")) r.answer = d["answer"].cast<std::string>();
  if (d.contains("split")) r.split = split_from_string(d["split"].cast<std::string>());
  r.relevant = d.contains("relevant") ? d["relevant"].cast<bool>() : !r.question.empty();
  return r;
}

std::vector<QARecord> records_from(const py::list& xs) {
  std::vector<QARecord> out;
  for (const auto& x : xs) out.push_back(record_from_dict(x.cast<py::dict>()));
  return out;
}

py::list records_to(const std::vector<QARecord>& rs) {
  py::list out;
  for (const auto& r : rs) out.append(record_to_dict(r));
  return out;
}

Tensor<float> tensor_from(const py::array_t<float, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2) throw ShapeError("expected a 2-d array");
  Tensor<float> t({static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1))});
  std::copy(a.data(), a.data() + a.size(), t.data());
  return t;
}

py::array_t<float> array_from(const Tensor<float>& t) {
  py::array_t<float> a({t.rows(), t.cols()});
  std::copy(t.data(), t.data() + t.size(), a.mutable_data());
  return a;
}

py::dict report_to_dict(const QAReport& r) {
  py::dict d;
  d["em"] = r.em;
  d["f1"] = r.f1;
  d["n"] = r.n;
  py::list rows;
  for (const auto& p : r.rows) {
    py::dict row;
    row["doc_id"] = p.doc_id;
    row["question"] = p.question;
    row["gold"] = p.gold;
    row["prediction"] = p.prediction;
    row["em"] = p.em;
    row["f1"] = p.f1;
    rows.append(row);
  }
  d["rows"] = rows;
  return d;
}

InferenceOptions inference_options(const Config& cfg, std::optional<int> window, std::optional<bool> topk_filter) {
  InferenceOptions o = InferenceOptions::from(cfg.train);
  if (window) o.window = *window;
  if (topk_filter) o.topk_filter = *topk_filter;
  return o;
}

}  // namespace

PYBIND11_MODULE(_cmt, m) {
  m.doc() = "Compressed memory for frozen language models";

  static py::exception<Error> error(m, "Error", PyExc_RuntimeError);
  py::register_exception<ShapeError>(m, "ShapeError", error.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", error.ptr());
  py::register_exception<FormatError>(m, "FormatError", error.ptr());
  py::register_exception<InvalidArgument>(m, "InvalidArgument", error.ptr());

  py::class_<Config>(m, "Config")
      .def(py::init<>())
      .def("set", &Config::set)
      .def("get", &Config::get)
      .def("to_text", &Config::to_text)
      .def_static("from_text", &Config::from_text)
      .def_static("load", &Config::load)
      .def("save", &Config::save);

  py::class_<Tokenizer>(m, "Tokenizer")
      .def(py::init<>())
      .def("encode", &Tokenizer::encode)
      .def("decode", &Tokenizer::decode)
      .def_property_readonly("vocab_size", &Tokenizer::vocab_size);

  m.def(
      "gen_synthetic",
      [](std::uint64_t seed, int train, int valid, int test, int facts_per_doc) {
        return records_to(gen_synthetic(seed, SplitCounts{train, valid, test}, facts_per_doc));
      },
      py::arg("seed"), py::arg("train") = 0, py::arg("valid") = 0, py::arg("test") = 0, py::arg("facts_per_doc") = 1);
  m.def(
      "gen_irrelevant", [](std::uint64_t seed, int n) { return records_to(gen_irrelevant(seed, n)); }, py::arg("seed"),
      py::arg("n"));
  m.def("load_corpus", [](const std::string& path) { return records_to(load_corpus(path)); });
  m.def("save_corpus", [](const py::list& rs, const std::string& path) { save_corpus(records_from(rs), path); });

  m.def("normalize_answer", &normalize_answer);
  m.def("em_f1", [](const std::string& p, const std::string& g) {
    const auto r = em_f1(p, g);
    return py::make_tuple(r.em, r.f1);
  });
  m.def(
      "rope_rotate",
      [](const std::vector<float>& x, std::size_t head_dim, std::size_t pos) { return rope_rotate(x, head_dim, pos); },
      py::arg("x"), py::arg("head_dim"), py::arg("pos"));
  m.def(
      "memory_aware_adjust",
      [](const py::array_t<float, py::array::c_style | py::array::forcecast>& mem,
         const py::array_t<float, py::array::c_style | py::array::forcecast>& plain, float alpha) {
        return array_from(memory_aware_adjust(tensor_from(mem), tensor_from(plain), alpha));
      },
      py::arg("logits_mem"), py::arg("logits_plain"), py::arg("alpha"));

  py::class_<MemoryBank>(m, "MemoryBank")
      .def(py::init<std::size_t, std::size_t>(), py::arg("k"), py::arg("d"))
      .def("__len__", &MemoryBank::size)
      .def_property_readonly("k", &MemoryBank::k)
      .def_property_readonly("d", &MemoryBank::d)
      .def_property_readonly("doc_ids",
                             [](const MemoryBank& b) {
                               std::vector<std::uint64_t> ids;
                               for (const auto& e : b) ids.push_back(e.doc_id);
                               return ids;
                             })
      .def("matrix", [](const MemoryBank& b, std::size_t i) { return array_from(b[i].matrix); })
      .def("pooled", [](const MemoryBank& b, std::size_t i) { return array_from(b[i].pooled); })
      .def("topk_select",
           [](const MemoryBank& b, const std::vector<float>& q, std::size_t window) {
             return b.topk_select(q, window);
           })
      .def("serialize", [](const MemoryBank& b) { return py::bytes(b.serialize()); })
      .def_static("deserialize", [](const py::bytes& s) { return MemoryBank::deserialize(std::string(s)); })
      .def("save", &MemoryBank::save)
      .def_static("load", &MemoryBank::load);

  py::class_<CmtModel>(m, "Model")
      .def(py::init([](const Config& cfg, std::uint64_t seed) {
             Config c = cfg;
             c.model.vocab_size = Tokenizer().vocab_size();
             auto model = std::make_unique<CmtModel>(c.model);
             std::mt19937_64 rng(seed);
             model->init_base(rng);
             std::mt19937_64 mrng(seed);
             model->init_memory(mrng, c.train.init_compressor_from_base);
             return model;
           }),
           py::arg("config"), py::arg("seed"))
      .def_static("load", [](const std::string& path) { return std::make_unique<CmtModel>(CmtModel::load(path)); })
      .def("save", &CmtModel::save)
      .def("serialize", [](CmtModel& model) { return py::bytes(model.serialize()); })
      .def("base_sha256", [](CmtModel& model) { return params_sha256(model.base_params()); })
      .def("memory_sha256", [](CmtModel& model) { return params_sha256(model.memory_params()); })
      .def(
          "pretrain_base",
          [](CmtModel& model, const Config& cfg) {
            py::gil_scoped_release release;
            return pretrain_base(model, Tokenizer(), cfg.train).losses;
          },
          py::arg("config"))
      .def(
          "learn",
          [](CmtModel& model, const py::list& train, const py::list& valid, const Config& cfg) {
            const auto tr = records_from(train), va = records_from(valid);
            LearningResult r;
            {
              py::gil_scoped_release release;
              r = learning_phase(model, Tokenizer(), tr, va, cfg.train);
            }
            py::dict d;
            d["epoch_losses"] = r.epoch_losses;
            d["initial_loss"] = r.initial_loss;
            d["best_valid_f1"] = r.best_valid_f1;
            d["best_step"] = r.best_step;
            d["base_sha_before"] = r.base_sha_before;
            d["base_sha_after"] = r.base_sha_after;
            return d;
          },
          py::arg("train"), py::arg("valid"), py::arg("config"))
      .def(
          "adapt",
          [](CmtModel& model, const py::list& stream) {
            return online_adapt(documents_of(records_from(stream)), model, Tokenizer());
          },
          py::arg("stream"))
      .def(
          "answer",
          [](CmtModel& model, const std::string& query, const MemoryBank& bank, const Config& cfg,
             std::optional<int> window, std::optional<bool> topk_filter) {
            const auto r = answer(query, bank, model, Tokenizer(), inference_options(cfg, window, topk_filter));
            return py::make_tuple(r.text, r.selected);
          },
          py::arg("query"), py::arg("bank"), py::arg("config") = Config{}, py::arg("window") = py::none(),
          py::arg("topk_filter") = py::none())
      .def(
          "eval_qa",
          [](CmtModel& model, const MemoryBank& bank, const py::list& qa, const Config& cfg, std::optional<int> window,
             std::optional<bool> topk_filter) {
            return report_to_dict(
                eval_qa(bank, model, Tokenizer(), records_from(qa), inference_options(cfg, window, topk_filter)));
          },
          py::arg("bank"), py::arg("qa"), py::arg("config") = Config{}, py::arg("window") = py::none(),
          py::arg("topk_filter") = py::none())
      .def(
          "eval_no_memory",
          [](CmtModel& model, const py::list& qa, int max_new) {
            return report_to_dict(eval_no_memory(model, Tokenizer(), records_from(qa), max_new));
          },
          py::arg("qa"), py::arg("max_new") = 8);
}
