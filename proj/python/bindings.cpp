#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "cli.hpp"
#include "nepgpt/corpus.hpp"
#include "nepgpt/error.hpp"
#include "nepgpt/eval.hpp"
#include "nepgpt/model.hpp"
#include "nepgpt/shards.hpp"
#include "nepgpt/tokenizer.hpp"
#include "nepgpt/trainer.hpp"

namespace py = pybind11;
using namespace nepgpt;

namespace {

corpus::DigitPolicy digit_policy(const std::string& name) {
  if (name == "keep") return corpus::DigitPolicy::kKeepAscii;
  if (name == "map") return corpus::DigitPolicy::kMapToDevanagari;
  if (name == "drop") return corpus::DigitPolicy::kDrop;
  throw Error(ErrorCode::kConfigInvalid, "digits must be keep, map or drop");
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Nepali GPT-2 toolkit core";
  m.attr("__version__") = NEPGPT_VERSION;

  static py::exception<Error> error(m, "NepgptError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object exc = py::handle(error.ptr())(e.what());
      exc.attr("code") = std::string(error_code_name(e.code()));
      exc.attr("exit_code") = static_cast<int>(e.error_class());
      PyErr_SetObject(error.ptr(), exc.ptr());
    }
  });

  m.def(
      "clean_text",
      [](const std::string& raw, const std::string& digits) {
        corpus::CleanConfig cfg;
        cfg.digit_policy = digit_policy(digits);
        return corpus::clean_text(raw, cfg);
      },
      py::arg("raw"), py::arg("digits") = "map");
  m.def(
      "is_permitted",
      [](std::uint32_t cp, const std::string& digits) {
        corpus::CleanConfig cfg;
        cfg.digit_policy = digit_policy(digits);
        return corpus::is_permitted(static_cast<char32_t>(cp), cfg);
      },
      py::arg("codepoint"), py::arg("digits") = "map");

  py::class_<tokenizer::BpeVocab>(m, "Vocab")
      .def("__len__", &tokenizer::BpeVocab::size)
      .def("piece", [](const tokenizer::BpeVocab& v, tokenizer::TokenId id) {
        return v.piece(id);
      })
      .def("merges", &tokenizer::BpeVocab::merges)
      .def(
          "encode",
          [](const tokenizer::BpeVocab& v, const std::string& text, bool bos,
             bool eos) { return tokenizer::encode(text, v, bos, eos); },
          py::arg("text"), py::arg("add_bos") = false, py::arg("add_eos") = false)
      .def("decode",
           [](const tokenizer::BpeVocab& v,
              const std::vector<tokenizer::TokenId>& ids) {
             return tokenizer::decode(ids, v);
           })
      .def("segment",
           [](const tokenizer::BpeVocab& v, const std::string& text) {
             return tokenizer::segment(text, v);
           })
      .def("save", [](const tokenizer::BpeVocab& v,
                      const std::filesystem::path& path) {
        tokenizer::save_vocab(v, path);
      })
      .def("to_bytes", [](const tokenizer::BpeVocab& v) {
        return py::bytes(tokenizer::serialize_vocab(v));
      });
  m.def(
      "train_bpe",
      [](const std::vector<std::string>& lines, std::size_t vocab_size,
         double coverage, std::uint64_t seed) {
        tokenizer::TokenizerConfig cfg;
        cfg.vocab_size = vocab_size;
        cfg.character_coverage = coverage;
        return tokenizer::train_bpe(std::span<const std::string>(lines), cfg, seed);
      },
      py::arg("lines"), py::arg("vocab_size") = 16384,
      py::arg("coverage") = 0.9995, py::arg("seed") = 0);
  m.def("load_vocab", &tokenizer::load_vocab, py::arg("path"));

  m.def(
      "write_shards",
      [](const std::vector<tokenizer::TokenId>& ids, std::uint64_t shard_tokens,
         const std::filesystem::path& out_dir, std::uint32_t vocab_size) {
        std::vector<std::filesystem::path> paths;
        for (const auto& f : shards::write_shards(ids, shard_tokens, out_dir,
                                                  vocab_size)) {
          paths.push_back(f.path);
        }
        return paths;
      },
      py::arg("ids"), py::arg("shard_tokens"), py::arg("out_dir"),
      py::arg("vocab_size"));
  m.def("read_shard", &shards::read_shard, py::arg("path"));
  m.def(
      "verify_shard",
      [](const std::filesystem::path& path) {
        return shards::verify_shard(path).token_count;
      },
      py::arg("path"));
  m.def("list_shards", &shards::list_shards, py::arg("dir"));

  m.def(
      "param_count",
      [](std::size_t n_layer, std::size_t n_head, std::size_t d_model,
         std::size_t vocab_size, std::size_t seq_len, bool tie_embeddings) {
        model::GptConfig cfg;
        cfg.n_layer = n_layer;
        cfg.n_head = n_head;
        cfg.d_model = d_model;
        cfg.vocab_size = vocab_size;
        cfg.seq_len = seq_len;
        cfg.tie_embeddings = tie_embeddings;
        return model::param_count(cfg);
      },
      py::arg("n_layer") = 12, py::arg("n_head") = 12, py::arg("d_model") = 768,
      py::arg("vocab_size") = 16384, py::arg("seq_len") = 1024,
      py::arg("tie_embeddings") = true);
  m.def(
      "lr_at",
      [](std::uint64_t step, double max_lr, double min_lr,
         std::uint64_t warmup_steps, std::uint64_t total_steps) {
        trainer::LrSchedule s{max_lr, min_lr, warmup_steps, total_steps};
        return trainer::lr_at(step, s);
      },
      py::arg("step"), py::arg("max_lr") = 6e-4, py::arg("min_lr") = 6e-5,
      py::arg("warmup_steps") = 715, py::arg("total_steps") = 3300);
  m.def("perplexity", &eval::perplexity, py::arg("loss"));

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = cli::dispatch(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"),
      "Runs one CLI subcommand; returns (exit_code, stdout, stderr).");
}
