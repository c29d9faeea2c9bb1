#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>

#include "dslm/checkpoint.hpp"
#include "dslm/evaluation.hpp"
#include "dslm/generation.hpp"
#include "dslm/minhash.hpp"
#include "dslm/pipeline.hpp"
#include "dslm/tokenizer.hpp"

namespace py = pybind11;
using namespace dslm;

namespace {

py::dict prf_dict(const Prf& p) {
    py::dict d;
    d["precision"] = p.precision;
    d["recall"] = p.recall;
    d["f1"] = p.f1;
    return d;
}

}  // namespace

PYBIND11_MODULE(_dslm, m) {
    m.attr("__version__") = kVersion;

    py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
    py::register_exception<IoError>(m, "IoError", PyExc_OSError);

    py::class_<Tokenizer>(m, "Tokenizer")
        .def(py::init<>())
        .def_static("train", &Tokenizer::train, py::arg("corpus"), py::arg("vocab_size"), py::arg("seed") = 0)
        .def_static("load", &Tokenizer::load, py::arg("path"))
        .def_static("from_json", [](const std::string& s) { return Tokenizer::from_json(json::parse(s)); })
        .def("to_json", [](const Tokenizer& t) { return t.to_json().dump(); })
        .def("save", &Tokenizer::save, py::arg("path"))
        .def("encode", &Tokenizer::encode, py::arg("text"), py::arg("add_bos") = false)
        .def("decode", [](const Tokenizer& t, const std::vector<int>& ids) { return py::bytes(t.decode(ids)); })
        .def("decode_str", [](const Tokenizer& t, const std::vector<int>& ids) { return sanitize_utf8(t.decode(ids)); })
        .def("count", &Tokenizer::count)
        .def_property_readonly("vocab_size", &Tokenizer::vocab_size)
        .def_property_readonly("merges", &Tokenizer::merges)
        .def("__eq__", &Tokenizer::operator==)
        .def_readonly_static("BOS", &Tokenizer::kBos)
        .def_readonly_static("EOS", &Tokenizer::kEos)
        .def_readonly_static("PAD", &Tokenizer::kPad);

    py::class_<DecodeParams>(m, "DecodeParams")
        .def(py::init<>())
        .def_readwrite("max_new_tokens", &DecodeParams::max_new_tokens)
        .def_readwrite("temperature", &DecodeParams::temperature)
        .def_readwrite("seed", &DecodeParams::seed)
        .def_readwrite("stop", &DecodeParams::stop)
        .def_readwrite("stop_at_eos", &DecodeParams::stop_at_eos);

    py::class_<TransformerLM>(m, "Model")
        .def(py::init([](const std::string& checkpoint, const std::string& tokenizer) {
                 return std::make_unique<TransformerLM>(
                     TransformerLM::from_checkpoint(Tokenizer::load(tokenizer), load_checkpoint(checkpoint)));
             }),
             py::arg("checkpoint"), py::arg("tokenizer"))
        .def_property_readonly("vocab_size", &TransformerLM::vocab_size)
        .def_property_readonly("context_length", &TransformerLM::context_length)
        .def(
            "generate",
            [](const TransformerLM& lm, const std::string& prompt, const DecodeParams& d) {
                py::gil_scoped_release release;
                return sanitize_utf8(LmTextGenerator(lm).complete(prompt, d));
            },
            py::arg("prompt"), py::arg("decode") = DecodeParams{})
        .def(
            "logits",
            [](const TransformerLM& lm, const std::vector<int>& ids) {
                const auto z = lm.logits(ids);
                std::vector<std::vector<double>> out(z.rows);
                for (std::size_t r = 0; r < z.rows; ++r) out[r].assign(z.row(r), z.row(r) + z.cols);
                return out;
            },
            py::arg("ids"))
        .def(
            "sequence_log_prob",
            [](const TransformerLM& lm, const std::vector<int>& context, const std::vector<int>& target) {
                return sequence_log_prob(lm, context, target);
            },
            py::arg("context"), py::arg("target"));

    m.def("word_shingles", &word_shingles, py::arg("text"), py::arg("n") = 3);
    m.def(
        "minhash_signature",
        [](const std::string& text, int k, int shingle_n, std::uint64_t seed) {
            return minhash_signature(text, k, shingle_n, seed).values;
        },
        py::arg("text"), py::arg("k") = 128, py::arg("shingle_n") = 3, py::arg("seed") = 1);
    m.def(
        "minhash_similarity",
        [](const std::vector<std::uint64_t>& a, const std::vector<std::uint64_t>& b) {
            return MinHashSignature{a, 3}.similarity(MinHashSignature{b, 3});
        },
        py::arg("a"), py::arg("b"));

    m.def(
        "extract_choice",
        [](const std::string& s) -> std::optional<std::string> {
            const auto c = extract_choice(s);
            if (!c) return std::nullopt;
            return std::string(1, *c);
        },
        py::arg("generated"));
    m.def("normalize_answer", &normalize_answer, py::arg("text"));
    m.def("qa_match", &qa_match, py::arg("generated"), py::arg("gold"));
    m.def(
        "rouge_n", [](const std::string& c, const std::string& r, int n) { return prf_dict(rouge_n(c, r, n)); },
        py::arg("candidate"), py::arg("reference"), py::arg("n"));
    m.def(
        "rouge_l", [](const std::string& c, const std::string& r) { return prf_dict(rouge_l(c, r)); },
        py::arg("candidate"), py::arg("reference"));
    m.def("bleu", &bleu, py::arg("candidate"), py::arg("reference"), py::arg("max_n") = 4);

    m.def(
        "validate_config",
        [](const std::string& config_json) { return PipelineConfig::from_json(json::parse(config_json)).to_json().dump(); },
        py::arg("config_json"), "Validates a pipeline config and returns it with defaults filled in.");
    m.def(
        "config_hash", [](const std::string& config_json) { return config_hash(ordered_json::parse(config_json)); },
        py::arg("config_json"));
}
