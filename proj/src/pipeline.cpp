#include "styleadapt/pipeline.hpp"

#include "styleadapt/errors.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>

namespace styleadapt {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// RunConfig
// ---------------------------------------------------------------------------

namespace {

void require_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError("config/section", where + " must be an object");
    for (const auto& [key, value] : j.items()) {
        if (!allowed.count(key)) {
            throw ConfigError("config/unknown-key", "unknown key '" + where + "." + key + "'");
        }
    }
}

std::uint64_t derive_seed(std::uint64_t seed, const std::string& tag) {
    return seed ^ (fnv1a64(tag) * 0x9E3779B97F4A7C15ull + 0x632BE59BD9B4E019ull);
}

}  // namespace

RunConfig RunConfig::from_json(const json& j, const std::string& origin) {
    require_keys(j, {"seed", "workdir", "corpus", "backbone", "adapters", "classifier", "lm",
                     "training", "evaluation", "plan"},
                 origin);
    if (!j.contains("seed")) {
        throw ConfigError("config/seed", origin + ": 'seed' is mandatory");
    }
    RunConfig c;
    c.seed = j.at("seed").get<std::uint64_t>();
    c.workdir = j.value("workdir", "");
    if (j.contains("corpus")) {
        const auto& s = j["corpus"];
        require_keys(s, {"count", "format", "templates", "adjective_attribute", "min_count"},
                     origin + ".corpus");
        c.corpus_count = s.value("count", c.corpus_count);
        c.corpus_format = s.value("format", c.corpus_format);
        c.templates_path = s.value("templates", c.templates_path);
        c.adjective_attribute = s.value("adjective_attribute", c.adjective_attribute);
        c.vocab_min_count = s.value("min_count", c.vocab_min_count);
    }
    if (j.contains("backbone")) {
        const auto& s = j["backbone"];
        require_keys(s,
                     {"encoder_layers", "decoder_layers", "hidden_dim", "heads", "ffn_dim",
                      "max_len", "vocab_size", "pretrain"},
                     origin + ".backbone");
        c.backbone.encoder_layers = s.value("encoder_layers", c.backbone.encoder_layers);
        c.backbone.decoder_layers = s.value("decoder_layers", c.backbone.decoder_layers);
        c.backbone.hidden_dim = s.value("hidden_dim", c.backbone.hidden_dim);
        c.backbone.heads = s.value("heads", c.backbone.heads);
        c.backbone.ffn_dim = s.value("ffn_dim", c.backbone.ffn_dim);
        c.backbone.max_len = s.value("max_len", 0);
        c.backbone.vocab_size = s.value("vocab_size", 0);
        if (s.contains("pretrain")) {
            require_keys(s["pretrain"],
                         {"epochs", "batch_size", "lr", "replace_prob", "drop_prob",
                          "clean_fraction", "label_smoothing", "clip_norm"},
                         origin + ".backbone.pretrain");
            c.backbone_pretrain = BackbonePretrainConfig::from_json(s["pretrain"]);
        }
    }
    if (j.contains("adapters")) {
        const auto& s = j["adapters"];
        require_keys(s, {"bottleneck_dim", "random_up_init", "reference_backbone_params"},
                     origin + ".adapters");
        c.adapter_bottleneck = s.value("bottleneck_dim", c.adapter_bottleneck);
        c.adapter_random_up_init = s.value("random_up_init", c.adapter_random_up_init);
        c.reference_backbone_params =
            s.value("reference_backbone_params", c.reference_backbone_params);
    }
    if (j.contains("classifier")) {
        require_keys(j["classifier"],
                     {"embed_dim", "filter_widths", "filters_per_width", "epochs", "batch_size",
                      "lr", "clip_norm"},
                     origin + ".classifier");
        c.classifier = ClassifierConfig::from_json(j["classifier"]);
    }
    if (j.contains("lm")) {
        require_keys(j["lm"],
                     {"layers", "hidden_dim", "heads", "ffn_dim", "max_len", "epochs",
                      "batch_size", "lr", "clip_norm"},
                     origin + ".lm");
        c.lm = LmConfig::from_json(j["lm"]);
    }
    if (j.contains("training")) {
        require_keys(j["training"],
                     {"lambda", "lr", "batch_size", "epochs", "samples_per_stream",
                      "baseline_decay", "use_baseline", "clip_norm", "max_sample_len",
                      "probe_size", "seed"},
                     origin + ".training");
        c.training = TrainingConfig::from_json(j["training"]);
    }
    if (j.contains("evaluation")) {
        require_keys(j["evaluation"], {"token_weighted_ppl", "max_new_tokens", "batch_size"},
                     origin + ".evaluation");
        c.evaluation = EvalConfig::from_json(j["evaluation"]);
    }
    c.plan = j.value("plan", c.plan);
    if (c.training.seed == 0) c.training.seed = derive_seed(c.seed, "training");
    c.validate();
    return c;
}

RunConfig RunConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config/missing-file", "cannot open config '" + path + "'");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config/bad-json", path + ": " + e.what());
    }
    return from_json(j, path);
}

void RunConfig::validate() const {
    if (corpus_count < 1) throw ConfigError("config/corpus-count", "corpus count must be positive");
    corpus_format_from_string(corpus_format);
    if (!templates_path.empty() && !fs::exists(templates_path)) {
        throw ConfigError("config/missing-path",
                          "template bank '" + templates_path + "' does not exist");
    }
    if (adapter_bottleneck < 1) {
        throw ConfigError("config/adapter-bottleneck", "adapter bottleneck must be >= 1");
    }
    training.validate();
    CompositionPlan::parse(plan);  // syntax only; schema checks happen at use
}

std::string resolve_workdir(const std::string& cli_flag, const RunConfig& config) {
    if (!cli_flag.empty()) return cli_flag;
    if (const char* env = std::getenv("STYLEADAPT_WORKDIR"); env && *env) return env;
    if (!config.workdir.empty()) return config.workdir;
    throw ConfigError("config/workdir",
                      "no working directory: set 'workdir' in the config, --workdir, or "
                      "STYLEADAPT_WORKDIR");
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

Pipeline::Pipeline(RunConfig config, std::string workdir)
    : config_(std::move(config)), workdir_(std::move(workdir)) {
    if (workdir_.empty()) throw ConfigError("config/workdir", "empty working directory");
}

std::string Pipeline::corpus_dir() const { return (fs::path(workdir_) / "corpus").string(); }
std::string Pipeline::backbone_path() const {
    return (fs::path(workdir_) / "backbone.ckpt").string();
}
std::string Pipeline::classifier_path(const std::string& attribute,
                                      const std::string& role) const {
    return (fs::path(workdir_) / ("classifier_" + attribute + "." + role + ".ckpt")).string();
}
std::string Pipeline::lm_path() const { return (fs::path(workdir_) / "lm.ckpt").string(); }
std::string Pipeline::adapters_path() const {
    return (fs::path(workdir_) / "adapters.ckpt").string();
}
std::string Pipeline::train_log_path() const {
    return (fs::path(workdir_) / "train_log.jsonl").string();
}
std::string Pipeline::report_jsonl_path() const {
    return (fs::path(workdir_) / "report.jsonl").string();
}
std::string Pipeline::report_csv_path() const {
    return (fs::path(workdir_) / "report.csv").string();
}

CorpusSplit Pipeline::gen_data(std::ostream* progress) {
    AttributeSchema schema =
        config_.adjective_attribute ? default_schema_with_adjectives() : default_schema();
    TemplateBank bank = config_.templates_path.empty()
                            ? TemplateBank::builtin()
                            : TemplateBank::load_json(config_.templates_path);
    CorpusSplit corpus =
        generate_synthetic_corpus(schema, bank, config_.corpus_count, config_.seed);
    save_corpus(corpus, corpus_dir(), corpus_format_from_string(config_.corpus_format));
    if (progress) {
        (*progress) << "corpus: train " << corpus.train.size() << " dev " << corpus.dev.size()
                    << " test " << corpus.test.size() << " -> " << corpus_dir() << "\n";
    }
    return corpus;
}

CorpusSplit Pipeline::load_corpus_artifact() const {
    if (!fs::exists(fs::path(corpus_dir()) / "schema.json")) {
        throw StageOrderError("stage/missing-corpus",
                              "no corpus at '" + corpus_dir() + "'; run gen-data first");
    }
    return load_corpus(corpus_dir(), corpus_format_from_string(config_.corpus_format));
}

Vocabulary Pipeline::build_vocab(const CorpusSplit& corpus) const {
    return build_vocabulary(corpus, config_.vocab_min_count);
}

BackboneConfig Pipeline::resolved_backbone_config(const CorpusSplit& corpus,
                                                  int vocab_size) const {
    BackboneConfig bc = config_.backbone;
    bc.vocab_size = bc.vocab_size > 0 ? bc.vocab_size : vocab_size;
    long longest = corpus.max_sentence_tokens();
    if (bc.max_len == 0) {
        bc.max_len = static_cast<int>(longest) + 4;
    } else if (bc.max_len < longest + 2) {
        throw ConfigError("backbone/max-len",
                          "max_len " + std::to_string(bc.max_len) +
                              " is too small for the corpus (longest sentence " +
                              std::to_string(longest) + " tokens)");
    }
    bc.validate();
    return bc;
}

AdapterConfig Pipeline::adapter_config(const BackboneConfig& backbone) const {
    AdapterConfig ac;
    ac.bottleneck_dim = config_.adapter_bottleneck;
    ac.hidden_dim = backbone.hidden_dim;
    ac.num_layers = backbone.total_layers();
    ac.random_up_init = config_.adapter_random_up_init;
    return ac;
}

PretrainStats Pipeline::pretrain_aux(std::ostream* progress) {
    CorpusSplit corpus = load_corpus_artifact();
    Vocabulary vocab = build_vocab(corpus);
    BackboneConfig bc = resolved_backbone_config(corpus, vocab.size());

    BackboneModel backbone = build_backbone(bc, derive_seed(config_.seed, "backbone"));
    PretrainStats stats = pretrain_backbone(backbone, corpus, vocab, config_.backbone_pretrain,
                                            derive_seed(config_.seed, "backbone-pretrain"),
                                            progress);
    Checkpoint ckpt = backbone.to_checkpoint(vocab);
    ckpt.config["pretrain_stats"] = ordered_json{{"final_train_loss", stats.final_train_loss},
                                                 {"dev_token_accuracy", stats.dev_token_accuracy}};
    ckpt.config["schema"] = [&] {
        ordered_json attrs = ordered_json::array();
        for (const auto& a : corpus.schema.attributes) {
            attrs.push_back(ordered_json{{"name", a.name}, {"values", a.values}});
        }
        return ordered_json{{"attributes", attrs}};
    }();
    ckpt.save(backbone_path());

    for (const auto& attr : corpus.schema.attributes) {
        for (const std::string role : {"guide", "eval"}) {
            AttributeClassifier cls =
                train_classifier(corpus, attr.name, config_.classifier, vocab,
                                 derive_seed(config_.seed, "classifier/" + role + "/" + attr.name),
                                 progress);
            Checkpoint cc = cls.to_checkpoint(vocab);
            cc.config["role"] = role;
            cc.save(classifier_path(attr.name, role));
        }
    }

    LmConfig lm_cfg = config_.lm;
    if (lm_cfg.max_len < bc.max_len) lm_cfg.max_len = bc.max_len;
    FluencyLM lm = train_fluency_lm(corpus, lm_cfg, vocab, derive_seed(config_.seed, "lm"),
                                    progress);
    lm.to_checkpoint(vocab).save(lm_path());
    return stats;
}

BackboneModel Pipeline::load_backbone(Vocabulary* vocab_out) const {
    Checkpoint ckpt = Checkpoint::load(backbone_path(), "backbone");
    BackboneModel model = BackboneModel::from_checkpoint(ckpt);
    if (vocab_out) {
        Vocabulary v;
        v.id_to_token = ckpt.vocab;
        for (std::size_t i = 0; i < v.id_to_token.size(); ++i) {
            v.token_to_id[v.id_to_token[i]] = static_cast<int>(i);
        }
        *vocab_out = v;
    }
    return model;
}

namespace {

AttributeSchema schema_from_ckpt(const Checkpoint& ckpt) {
    AttributeSchema schema;
    for (const auto& a : ckpt.config.at("schema").at("attributes")) {
        schema.attributes.push_back(
            {a.at("name").get<std::string>(), a.at("values").get<std::vector<std::string>>()});
    }
    schema.validate();
    return schema;
}

std::map<std::string, AttributeClassifier> load_classifiers(const Pipeline& p,
                                                            const AttributeSchema& schema,
                                                            const std::string& role,
                                                            const Vocabulary& vocab) {
    std::map<std::string, AttributeClassifier> out;
    for (const auto& attr : schema.attributes) {
        Checkpoint ckpt = Checkpoint::load(p.classifier_path(attr.name, role), "classifier");
        AttributeClassifier cls = AttributeClassifier::from_checkpoint(ckpt);
        if (cls.vocab_hash != vocab.hash()) {
            throw DataError("vocab/hash-mismatch", "classifier '" + attr.name + "' (" + role +
                                                       ") disagrees with the corpus vocabulary");
        }
        cls.set_frozen(true);
        out.emplace(attr.name, std::move(cls));
    }
    return out;
}

}  // namespace

TrainResult Pipeline::train_adapters(std::ostream* progress) {
    CorpusSplit corpus = load_corpus_artifact();
    Vocabulary vocab = build_vocab(corpus);

    Checkpoint bc = Checkpoint::load(backbone_path(), "backbone");
    if (bc.vocab_hash != vocab.hash()) {
        throw DataError("vocab/hash-mismatch",
                        "backbone checkpoint disagrees with the corpus vocabulary");
    }
    BackboneModel backbone = BackboneModel::from_checkpoint(bc);
    backbone.set_frozen(true);

    CompositionPlan plan = CompositionPlan::parse(config_.plan);
    plan.validate(corpus.schema);
    if (plan.mode != CompositionPlan::Mode::Parallel) {
        throw ConfigError("plan/stack-in-train",
                          "Stack plans are inference-only; configure a Parallel plan for training");
    }

    AdapterConfig ac = adapter_config(backbone.config);
    std::vector<AdapterBank> banks;
    for (const auto& value : plan.parallel_values) {
        banks.push_back(build_adapter_bank(ac, value, derive_seed(config_.seed, "bank/" + value)));
    }
    AdaptedModel model = inject_adapters(backbone, std::move(banks), plan, corpus.schema);

    auto classifiers = load_classifiers(*this, corpus.schema, "guide", vocab);

    std::ofstream log(train_log_path());
    TrainResult result = train(model, corpus, classifiers, config_.training, vocab, &log,
                               progress);

    Checkpoint out = banks_to_checkpoint(model.banks(), ac, vocab.id_to_token, vocab.hash());
    out.config["schema"] = bc.config.at("schema");
    out.config["plan"] = plan.to_string();
    out.save(adapters_path());
    return result;
}

EvalReport Pipeline::run_evaluation(const std::string& plan_override, std::ostream* progress) {
    CorpusSplit corpus = load_corpus_artifact();
    Vocabulary vocab = build_vocab(corpus);
    BackboneModel backbone = load_backbone();
    backbone.set_frozen(true);

    Checkpoint ack = Checkpoint::load(adapters_path(), "adapters");
    if (ack.vocab_hash != vocab.hash()) {
        throw DataError("vocab/hash-mismatch",
                        "adapter checkpoint disagrees with the corpus vocabulary");
    }
    AdapterConfig ac;
    std::vector<AdapterBank> banks = banks_from_checkpoint(ack, &ac);

    CompositionPlan plan =
        CompositionPlan::parse(plan_override.empty() ? config_.plan : plan_override);
    plan.validate(corpus.schema);
    AdaptedModel model = inject_adapters(backbone, std::move(banks), plan, corpus.schema);

    auto classifiers = load_classifiers(*this, corpus.schema, "eval", vocab);
    FluencyLM lm = FluencyLM::from_checkpoint(Checkpoint::load(lm_path(), "lm"));
    if (lm.vocab_hash != vocab.hash()) {
        throw DataError("vocab/hash-mismatch", "LM checkpoint disagrees with the vocabulary");
    }
    lm.set_frozen(true);

    EvalReport report =
        evaluate(model, corpus, classifiers, lm, backbone, vocab, config_.evaluation);
    report.save_jsonl(report_jsonl_path());
    std::vector<std::string> attr_order;
    for (const auto& a : corpus.schema.attributes) attr_order.push_back(a.name);
    report.save_csv(report_csv_path(), attr_order);
    if (progress) {
        (*progress) << "report -> " << report_jsonl_path() << " (" << report.pair_count
                    << " pairs)\n";
    }
    return report;
}

std::vector<TaggedOutput> Pipeline::transfer(const std::string& input_text,
                                             const std::string& plan_override,
                                             const std::string& directive_text) {
    Vocabulary vocab;
    BackboneModel backbone = load_backbone(&vocab);
    backbone.set_frozen(true);

    Checkpoint ack = Checkpoint::load(adapters_path(), "adapters");
    if (ack.vocab_hash != vocab.hash()) {
        throw DataError("vocab/hash-mismatch",
                        "adapter checkpoint disagrees with the backbone vocabulary");
    }
    AttributeSchema schema = schema_from_ckpt(ack);
    std::vector<AdapterBank> banks = banks_from_checkpoint(ack, nullptr);

    CompositionPlan plan =
        CompositionPlan::parse(plan_override.empty() ? config_.plan : plan_override);
    plan.validate(schema);
    AdaptedModel model = inject_adapters(backbone, std::move(banks), plan, schema);

    std::vector<std::string> tokens = tokenize(input_text);
    if (tokens.empty()) throw DataError("transfer/empty-input", "empty input sentence");
    std::vector<int> ids = vocab.encode(tokens);
    ids.push_back(Vocabulary::kEos);

    std::optional<TransferDirective> directive;
    if (!directive_text.empty()) directive = TransferDirective::parse(directive_text, schema);
    if (plan.mode == CompositionPlan::Mode::Stack && !directive) {
        throw ConfigError("directive/required", "Stack transfer needs --directive");
    }
    std::vector<StreamSpec> streams = model.streams_for(directive);
    Rng rng(config_.seed);
    return streams_to_outputs(model, {ids}, streams, DecodeMode::Greedy,
                              backbone.config.max_len - 1, rng);
}

ordered_json ParamReportData::to_json() const {
    ordered_json j{{"per_adapter", per_adapter},
                   {"bank_count", bank_count},
                   {"trainable_total", trainable_total},
                   {"frozen_backbone", frozen_backbone},
                   {"percent_of_frozen", percent_of_frozen}};
    if (reference_backbone_params > 0) {
        j["reference_backbone_params"] = reference_backbone_params;
        j["percent_of_reference"] = percent_of_reference;
    }
    return j;
}

ParamReportData Pipeline::param_report() const {
    BackboneConfig bc = config_.backbone;
    if (bc.vocab_size <= 0 || bc.max_len <= 0) {
        CorpusSplit corpus = load_corpus_artifact();
        Vocabulary vocab = build_vocab(corpus);
        bc = resolved_backbone_config(corpus, vocab.size());
    }
    bc.validate();

    CompositionPlan plan = CompositionPlan::parse(config_.plan);
    AdapterConfig ac = adapter_config(bc);

    ParamReportData data;
    data.per_adapter = count_adapter_params(ac);
    data.bank_count = static_cast<long>(plan.referenced_values().size());
    data.trainable_total = data.per_adapter * data.bank_count;
    data.frozen_backbone = bc.param_count();
    data.percent_of_frozen =
        100.0 * static_cast<double>(data.per_adapter) / static_cast<double>(data.frozen_backbone);
    data.reference_backbone_params = config_.reference_backbone_params;
    if (data.reference_backbone_params > 0) {
        data.percent_of_reference = 100.0 * static_cast<double>(data.per_adapter) /
                                    static_cast<double>(data.reference_backbone_params);
    }
    return data;
}

}  // namespace styleadapt
