#pragma once

#include "styleadapt/adapters.hpp"
#include "styleadapt/auxmodels.hpp"
#include "styleadapt/backbone.hpp"
#include "styleadapt/composition.hpp"
#include "styleadapt/corpus.hpp"
#include "styleadapt/evaluation.hpp"
#include "styleadapt/training.hpp"

#include <optional>
#include <ostream>
#include <string>

namespace styleadapt {

// Sectioned run configuration. Unknown keys are rejected; `seed` is
// mandatory; referenced input paths must exist at validation time.
struct RunConfig {
    std::uint64_t seed = 0;
    std::string workdir;

    // corpus section
    long corpus_count = 5000;
    std::string corpus_format = "jsonl";
    std::string templates_path;  // empty -> built-in bank
    bool adjective_attribute = false;
    int vocab_min_count = 1;

    BackboneConfig backbone;  // vocab_size/max_len 0 -> derived from the corpus
    BackbonePretrainConfig backbone_pretrain;

    int adapter_bottleneck = 32;
    bool adapter_random_up_init = false;
    long reference_backbone_params = 0;  // optional param-report comparison point

    ClassifierConfig classifier;
    LmConfig lm;
    TrainingConfig training;
    EvalConfig evaluation;
    std::string plan = "Parallel(future,past,present,passive,active)";

    static RunConfig load(const std::string& path);
    static RunConfig from_json(const nlohmann::json& j, const std::string& origin);
    void validate() const;
};

// Resolution order for the artifact root: explicit flag, then the
// STYLEADAPT_WORKDIR environment variable, then the config's workdir.
std::string resolve_workdir(const std::string& cli_flag, const RunConfig& config);

struct ParamReportData {
    long per_adapter = 0;
    long bank_count = 0;
    long trainable_total = 0;
    long frozen_backbone = 0;
    double percent_of_frozen = 0.0;
    long reference_backbone_params = 0;
    double percent_of_reference = 0.0;

    nlohmann::ordered_json to_json() const;
};

// Stage orchestration over a working directory of artifacts:
//   corpus/ -> backbone.ckpt + classifiers + lm.ckpt -> adapters.ckpt -> report
class Pipeline {
public:
    Pipeline(RunConfig config, std::string workdir);

    const RunConfig& config() const { return config_; }
    const std::string& workdir() const { return workdir_; }

    std::string corpus_dir() const;
    std::string backbone_path() const;
    std::string classifier_path(const std::string& attribute, const std::string& role) const;
    std::string lm_path() const;
    std::string adapters_path() const;
    std::string train_log_path() const;
    std::string report_jsonl_path() const;
    std::string report_csv_path() const;

    // Stages. Each loads its inputs from the working directory and persists
    // its outputs there; missing upstream artifacts raise stage-order errors.
    CorpusSplit gen_data(std::ostream* progress = nullptr);
    PretrainStats pretrain_aux(std::ostream* progress = nullptr);
    TrainResult train_adapters(std::ostream* progress = nullptr);
    EvalReport run_evaluation(const std::string& plan_override = "",
                              std::ostream* progress = nullptr);
    std::vector<TaggedOutput> transfer(const std::string& input_text,
                                       const std::string& plan_override,
                                       const std::string& directive_text);
    ParamReportData param_report() const;

    // Artifact loading helpers (throw StageOrderError when absent).
    CorpusSplit load_corpus_artifact() const;
    Vocabulary build_vocab(const CorpusSplit& corpus) const;
    BackboneModel load_backbone(Vocabulary* vocab_out = nullptr) const;

private:
    RunConfig config_;
    std::string workdir_;

    BackboneConfig resolved_backbone_config(const CorpusSplit& corpus, int vocab_size) const;
    AdapterConfig adapter_config(const BackboneConfig& backbone) const;
};

}  // namespace styleadapt
