#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "qan/cli.hpp"
#include "qan/corpus.hpp"
#include "qan/error.hpp"
#include "qan/llm.hpp"
#include "qan/metrics.hpp"
#include "qan/text.hpp"

namespace py = pybind11;
using namespace qan;

namespace {

py::dict thread_dict(const data::QAThread& t) {
  py::list answers;
  for (const auto& a : t.answers) {
    py::dict d;
    d["id"] = a.id;
    d["text"] = a.text;
    d["tokens"] = a.tokens;
    d["gold"] = std::string(data::label_name(a.gold));
    answers.append(d);
  }
  py::dict d;
  d["id"] = t.id;
  d["subject"] = t.subject;
  d["body"] = t.body;
  d["subject_tokens"] = t.subject_tokens;
  d["body_tokens"] = t.body_tokens;
  d["answers"] = answers;
  return d;
}

data::QAThread thread_from(const py::dict& d) {
  std::vector<std::pair<std::string, std::string>> answers;
  std::vector<data::Label> golds;
  for (const auto& item : d["answers"]) {
    const auto a = item.cast<py::dict>();
    answers.emplace_back(a["id"].cast<std::string>(), a["text"].cast<std::string>());
    golds.push_back(data::parse_label(a["gold"].cast<std::string>()));
  }
  return data::make_thread(d["id"].cast<std::string>(), d["subject"].cast<std::string>(),
                           d["body"].cast<std::string>(), answers, golds);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Bindings for the qanbench C++ core";

  py::register_exception<Error>(m, "QanError");

  m.def("preprocess", [](const std::string& s) { return data::preprocess(s); }, py::arg("text"));
  m.def("porter_stem", [](const std::string& s) { return data::porter_stem(s); }, py::arg("word"));

  m.def(
      "read_corpus",
      [](const std::filesystem::path& path, const std::string& format) {
        py::list out;
        for (const auto& t : data::parse_corpus(path, data::parse_format(format))) out.append(thread_dict(t));
        return out;
      },
      py::arg("path"), py::arg("format") = "canonical-jsonl");
  m.def(
      "corpus_stats",
      [](const std::filesystem::path& path, const std::string& format) {
        const auto s = data::corpus_stats(data::parse_corpus(path, data::parse_format(format)));
        py::dict d;
        d["questions"] = s.questions;
        d["answers"] = s.answers;
        d["mean_subject_length"] = s.mean_subject_length;
        d["mean_body_length"] = s.mean_body_length;
        d["mean_answer_length"] = s.mean_answer_length;
        return d;
      },
      py::arg("path"), py::arg("format") = "canonical-jsonl");

  // records: (question_id, answer_id, p_good, p_potential, p_bad, gold)
  m.def(
      "map_score",
      [](const std::vector<std::tuple<std::string, std::string, double, double, double, std::string>>& rows)
          -> std::optional<double> {
        std::vector<metrics::PredictionRecord> records;
        for (const auto& [q, a, g, p, b, gold] : rows) {
          metrics::PredictionRecord r;
          r.question_id = q;
          r.answer_id = a;
          r.distribution.p = {g, p, b};
          r.gold = data::parse_label(gold);
          records.push_back(std::move(r));
        }
        return metrics::map_score(records);
      },
      py::arg("records"));

  m.def(
      "build_prompt",
      [](const std::filesystem::path& templates, int id, const py::dict& thread,
         std::optional<std::string> knowledge) {
        return llm::build_prompt(llm::load_template(templates, id), thread_from(thread), knowledge);
      },
      py::arg("templates"), py::arg("template_id"), py::arg("thread"), py::arg("knowledge") = py::none());
  m.def("parse_selection", &llm::parse_selection, py::arg("completion"), py::arg("n_options"));
  m.def("sha256_hex", [](const std::string& s) { return llm::sha256_hex(s); }, py::arg("data"));

  m.def(
      "run_cli",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "qan");
        std::vector<const char*> argv;
        for (const auto& a : args) argv.push_back(a.c_str());
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = cli::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Run the qan tool in-process; returns (exit_code, stdout, stderr).");
}
