// Python bindings for the main operations: corpus generation and I/O,
// backbone construction and pretraining, adapter banks and composition
// plans, joint training, transfer, and the evaluation metrics.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "styleadapt/adapters.hpp"
#include "styleadapt/auxmodels.hpp"
#include "styleadapt/backbone.hpp"
#include "styleadapt/composition.hpp"
#include "styleadapt/corpus.hpp"
#include "styleadapt/errors.hpp"
#include "styleadapt/evaluation.hpp"
#include "styleadapt/pipeline.hpp"
#include "styleadapt/training.hpp"

#include <sstream>

namespace py = pybind11;
using namespace styleadapt;

namespace {

py::dict aggregate_to_dict(const EvalReport& report) {
    py::dict d;
    py::dict acc;
    for (const auto& [attr, a] : report.acc_by_attribute) acc[py::str(attr)] = a;
    d["acc_by_attribute"] = acc;
    py::dict streams;
    for (const auto& [value, a] : report.acc_by_stream) streams[py::str(value)] = a;
    d["acc_by_stream"] = streams;
    if (report.joint_accuracy >= 0.0) d["joint_accuracy"] = report.joint_accuracy;
    d["bs"] = report.bs_mean;
    d["ppl"] = report.ppl_mean;
    d["g"] = report.g;
    d["pairs"] = report.pair_count;
    d["plan"] = report.plan_text;
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "adapter-based multi-attribute text style transfer";

    py::register_exception<ConfigError>(m, "ConfigError");
    py::register_exception<DataError>(m, "DataError");
    py::register_exception<StageOrderError>(m, "StageOrderError");
    py::register_exception<NumericError>(m, "NumericError");
    py::register_exception<ContractError>(m, "ContractError");

    // ---- corpus -----------------------------------------------------------
    py::class_<AttributeSchema>(m, "AttributeSchema")
        .def("attribute_of_value", &AttributeSchema::attribute_of_value)
        .def("attributes", [](const AttributeSchema& s) {
            py::list out;
            for (const auto& a : s.attributes) {
                out.append(py::make_tuple(a.name, a.values));
            }
            return out;
        });
    m.def("default_schema", &default_schema);
    m.def("default_schema_with_adjectives", &default_schema_with_adjectives);

    py::class_<LabeledSentence>(m, "LabeledSentence")
        .def_readonly("tokens", &LabeledSentence::tokens)
        .def_readonly("labels", &LabeledSentence::labels)
        .def("text", &LabeledSentence::text);

    py::class_<CorpusSplit>(m, "CorpusSplit")
        .def_readonly("train", &CorpusSplit::train)
        .def_readonly("dev", &CorpusSplit::dev)
        .def_readonly("test", &CorpusSplit::test)
        .def_readonly("schema", &CorpusSplit::schema)
        .def("max_sentence_tokens", &CorpusSplit::max_sentence_tokens);

    py::class_<TemplateBank>(m, "TemplateBank")
        .def_static("builtin", &TemplateBank::builtin)
        .def_static("load_json", &TemplateBank::load_json)
        .def("word_list", &TemplateBank::word_list);

    m.def("generate_synthetic_corpus", &generate_synthetic_corpus, py::arg("schema"),
          py::arg("bank"), py::arg("count"), py::arg("seed"));
    m.def("save_corpus", [](const CorpusSplit& corpus, const std::string& dir,
                            const std::string& format) {
        save_corpus(corpus, dir, corpus_format_from_string(format));
    });
    m.def("load_corpus", [](const std::string& dir, const std::string& format) {
        return load_corpus(dir, corpus_format_from_string(format));
    });

    py::class_<Vocabulary>(m, "Vocabulary")
        .def("size", &Vocabulary::size)
        .def("encode", &Vocabulary::encode)
        .def("decode", &Vocabulary::decode)
        .def("hash", &Vocabulary::hash)
        .def("contains", &Vocabulary::contains);
    m.def("build_vocabulary", &build_vocabulary, py::arg("corpus"), py::arg("min_count") = 1);
    m.def("tokenize", &tokenize);

    // ---- backbone and adapters --------------------------------------------
    py::class_<BackboneConfig>(m, "BackboneConfig")
        .def(py::init<>())
        .def_readwrite("encoder_layers", &BackboneConfig::encoder_layers)
        .def_readwrite("decoder_layers", &BackboneConfig::decoder_layers)
        .def_readwrite("hidden_dim", &BackboneConfig::hidden_dim)
        .def_readwrite("heads", &BackboneConfig::heads)
        .def_readwrite("ffn_dim", &BackboneConfig::ffn_dim)
        .def_readwrite("max_len", &BackboneConfig::max_len)
        .def_readwrite("vocab_size", &BackboneConfig::vocab_size)
        .def("param_count", &BackboneConfig::param_count);

    py::class_<BackboneModel>(m, "BackboneModel")
        .def("param_count", &BackboneModel::param_count)
        .def("checksum", &BackboneModel::checksum)
        .def("frozen", &BackboneModel::frozen)
        .def("set_frozen", &BackboneModel::set_frozen);
    m.def("build_backbone", &build_backbone, py::arg("config"), py::arg("seed"));

    py::class_<BackbonePretrainConfig>(m, "BackbonePretrainConfig")
        .def(py::init<>())
        .def_readwrite("epochs", &BackbonePretrainConfig::epochs)
        .def_readwrite("batch_size", &BackbonePretrainConfig::batch_size)
        .def_readwrite("lr", &BackbonePretrainConfig::lr);
    m.def(
        "pretrain_backbone",
        [](BackboneModel& model, const CorpusSplit& corpus, const Vocabulary& vocab,
           const BackbonePretrainConfig& config, std::uint64_t seed) {
            PretrainStats stats = pretrain_backbone(model, corpus, vocab, config, seed);
            py::dict d;
            d["final_train_loss"] = stats.final_train_loss;
            d["dev_token_accuracy"] = stats.dev_token_accuracy;
            return d;
        },
        py::arg("model"), py::arg("corpus"), py::arg("vocab"), py::arg("config"), py::arg("seed"));

    m.def(
        "count_adapter_params",
        [](int bottleneck_dim, int hidden_dim, int num_layers) {
            AdapterConfig c;
            c.bottleneck_dim = bottleneck_dim;
            c.hidden_dim = hidden_dim;
            c.num_layers = num_layers;
            return count_adapter_params(c);
        },
        py::arg("bottleneck_dim"), py::arg("hidden_dim"), py::arg("num_layers"));

    // ---- composition -------------------------------------------------------
    py::class_<CompositionPlan>(m, "CompositionPlan")
        .def_static("parse", &CompositionPlan::parse)
        .def("__str__", &CompositionPlan::to_string)
        .def("to_string", &CompositionPlan::to_string)
        .def("validate", &CompositionPlan::validate)
        .def("referenced_values", &CompositionPlan::referenced_values);

    // ---- metrics ------------------------------------------------------------
    m.def("g_score", &g_score, py::arg("acc_percent"), py::arg("bs"), py::arg("ppl"));
    m.def(
        "content_score",
        [](const BackboneModel& encoder, const std::vector<int>& source,
           const std::vector<int>& output) {
            return content_score(encoder_embedder(encoder), source, output);
        },
        py::arg("encoder"), py::arg("source_ids"), py::arg("output_ids"));

    // ---- pipeline ------------------------------------------------------------
    py::class_<RunConfig>(m, "RunConfig")
        .def_static("load", &RunConfig::load)
        .def_readwrite("seed", &RunConfig::seed)
        .def_readwrite("workdir", &RunConfig::workdir)
        .def_readwrite("plan", &RunConfig::plan);

    py::class_<ParamReportData>(m, "ParamReportData")
        .def_readonly("per_adapter", &ParamReportData::per_adapter)
        .def_readonly("bank_count", &ParamReportData::bank_count)
        .def_readonly("trainable_total", &ParamReportData::trainable_total)
        .def_readonly("frozen_backbone", &ParamReportData::frozen_backbone)
        .def_readonly("percent_of_frozen", &ParamReportData::percent_of_frozen)
        .def_readonly("percent_of_reference", &ParamReportData::percent_of_reference);

    py::class_<Pipeline>(m, "Pipeline")
        .def(py::init<RunConfig, std::string>(), py::arg("config"), py::arg("workdir"))
        .def("corpus_dir", &Pipeline::corpus_dir)
        .def("backbone_path", &Pipeline::backbone_path)
        .def("adapters_path", &Pipeline::adapters_path)
        .def("report_jsonl_path", &Pipeline::report_jsonl_path)
        .def("report_csv_path", &Pipeline::report_csv_path)
        .def("gen_data", [](Pipeline& p) { return p.gen_data(); })
        .def("pretrain_aux",
             [](Pipeline& p) {
                 PretrainStats stats = p.pretrain_aux();
                 py::dict d;
                 d["final_train_loss"] = stats.final_train_loss;
                 d["dev_token_accuracy"] = stats.dev_token_accuracy;
                 return d;
             })
        .def("train_adapters",
             [](Pipeline& p) {
                 TrainResult r = p.train_adapters();
                 py::dict d;
                 d["epochs"] = r.epoch_losses.size();
                 d["backbone_checksum_unchanged"] =
                     r.backbone_checksum_before == r.backbone_checksum_after;
                 d["adapters_changed"] = r.adapter_checksum_before != r.adapter_checksum_after;
                 if (!r.epoch_losses.empty()) {
                     d["final_l_rec"] = r.epoch_losses.back().l_rec;
                     d["final_l_cls_estimate"] = r.epoch_losses.back().l_cls_estimate;
                 }
                 return d;
             })
        .def(
            "evaluate",
            [](Pipeline& p, const std::string& plan) {
                return aggregate_to_dict(p.run_evaluation(plan));
            },
            py::arg("plan") = "")
        .def(
            "transfer",
            [](Pipeline& p, const std::string& text, const std::string& plan,
               const std::string& directive) {
                Vocabulary vocab;
                p.load_backbone(&vocab);
                auto outputs = p.transfer(text, plan, directive);
                py::list out;
                for (const auto& o : outputs) {
                    py::dict d;
                    py::dict asg;
                    for (const auto& [attr, value] : o.assignment) asg[py::str(attr)] = value;
                    d["assignment"] = asg;
                    std::ostringstream text_out;
                    auto tokens = vocab.decode(o.token_ids);
                    for (std::size_t i = 0; i < tokens.size(); ++i) {
                        if (i) text_out << ' ';
                        text_out << tokens[i];
                    }
                    d["output"] = text_out.str();
                    out.append(d);
                }
                return out;
            },
            py::arg("text"), py::arg("plan") = "", py::arg("directive") = "")
        .def("param_report", &Pipeline::param_report);

    m.def("resolve_workdir", &resolve_workdir, py::arg("cli_flag"), py::arg("config"));
}
