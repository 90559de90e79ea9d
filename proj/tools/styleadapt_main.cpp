// Command-line front end: corpus generation, auxiliary pretraining, adapter
// training, transfer, evaluation, and parameter reporting over a working
// directory of checkpoints.
//
// Exit codes: 0 success, 2 config/input error, 3 stage-order error,
// 4 runtime numerical or contract error.

#include "styleadapt/errors.hpp"
#include "styleadapt/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

using namespace styleadapt;
using ordered_json = nlohmann::ordered_json;

namespace {

struct CommonArgs {
    std::string config_path;
    std::string workdir_flag;
    std::optional<std::uint64_t> seed_override;
};

Pipeline make_pipeline(const CommonArgs& args) {
    RunConfig config = RunConfig::load(args.config_path);
    if (args.seed_override) config.seed = *args.seed_override;
    return Pipeline(config, resolve_workdir(args.workdir_flag, config));
}

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("-c,--config", args.config_path, "run configuration (JSON)")
        ->required();
    cmd->add_option("--workdir", args.workdir_flag, "artifact root (overrides config and env)");
    cmd->add_option("--seed", args.seed_override, "seed override");
}

std::string format_thousands(long v) {
    std::string raw = std::to_string(v);
    std::string out;
    int count = 0;
    for (auto it = raw.rbegin(); it != raw.rend(); ++it) {
        if (count && count % 3 == 0) out += ',';
        out += *it;
        ++count;
    }
    return {out.rbegin(), out.rend()};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"adapter-based multi-attribute text style transfer"};
    app.require_subcommand(1);

    CommonArgs args;
    std::string transfer_input, transfer_plan, transfer_directive, eval_plan;

    CLI::App* gen = app.add_subcommand("gen-data", "generate the synthetic corpus");
    add_common(gen, args);
    CLI::App* pre = app.add_subcommand("pretrain-aux",
                                       "pretrain the frozen backbone, classifiers, and LM");
    add_common(pre, args);
    CLI::App* trn = app.add_subcommand("train", "train adapter banks (Parallel plan)");
    add_common(trn, args);
    CLI::App* tra = app.add_subcommand("transfer", "rewrite one sentence through a plan");
    add_common(tra, args);
    tra->add_option("-i,--input", transfer_input, "input sentence")->required();
    tra->add_option("--plan", transfer_plan, "plan override, e.g. Stack(Parallel(...),...)");
    tra->add_option("--directive", transfer_directive, "targets, e.g. tense=future,voice=passive");
    CLI::App* eva = app.add_subcommand("evaluate", "run the automatic evaluation protocol");
    add_common(eva, args);
    eva->add_option("--plan", eval_plan, "plan override for evaluation");
    CLI::App* par = app.add_subcommand("param-report", "trainable vs frozen parameter accounting");
    add_common(par, args);

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            Pipeline p = make_pipeline(args);
            CorpusSplit corpus = p.gen_data(&std::cerr);
            ordered_json out{{"corpus_dir", p.corpus_dir()},
                             {"train", corpus.train.size()},
                             {"dev", corpus.dev.size()},
                             {"test", corpus.test.size()}};
            std::cout << out.dump() << "\n";
        } else if (pre->parsed()) {
            Pipeline p = make_pipeline(args);
            PretrainStats stats = p.pretrain_aux(&std::cerr);
            ordered_json out{{"backbone", p.backbone_path()},
                             {"pretrain_dev_token_accuracy", stats.dev_token_accuracy},
                             {"pretrain_final_loss", stats.final_train_loss}};
            std::cout << out.dump() << "\n";
        } else if (trn->parsed()) {
            Pipeline p = make_pipeline(args);
            TrainResult result = p.train_adapters(&std::cerr);
            ordered_json out{{"adapters", p.adapters_path()},
                             {"train_log", p.train_log_path()},
                             {"epochs", result.epoch_losses.size()}};
            if (!result.epoch_losses.empty()) {
                const auto& last = result.epoch_losses.back();
                out["final"] = ordered_json{{"l_rec", last.l_rec},
                                            {"l_cls", last.l_cls},
                                            {"l", last.l},
                                            {"l_cls_estimate", last.l_cls_estimate}};
            }
            out["backbone_checksum_unchanged"] =
                result.backbone_checksum_before == result.backbone_checksum_after;
            std::cout << out.dump() << "\n";
        } else if (tra->parsed()) {
            Pipeline p = make_pipeline(args);
            auto outputs = p.transfer(transfer_input, transfer_plan, transfer_directive);
            Vocabulary vocab;
            p.load_backbone(&vocab);
            for (const auto& out : outputs) {
                ordered_json assignment = ordered_json::object();
                for (const auto& [attr, value] : out.assignment) assignment[attr] = value;
                std::string text;
                for (const auto& t : vocab.decode(out.token_ids)) {
                    if (!text.empty()) text += ' ';
                    text += t;
                }
                std::cout << ordered_json{{"assignment", assignment}, {"output", text}}.dump()
                          << "\n";
            }
        } else if (eva->parsed()) {
            Pipeline p = make_pipeline(args);
            EvalReport report = p.run_evaluation(eval_plan, &std::cerr);
            std::cout << ordered_json{{"report", p.report_jsonl_path()},
                                      {"csv", p.report_csv_path()},
                                      {"aggregate", report.aggregate_json()}}
                             .dump()
                      << "\n";
        } else if (par->parsed()) {
            Pipeline p = make_pipeline(args);
            ParamReportData data = p.param_report();
            std::cout << data.to_json().dump() << "\n";
            std::cerr << "trainable " << format_thousands(data.trainable_total) << " ("
                      << data.bank_count << " x " << format_thousands(data.per_adapter)
                      << " per adapter)";
            if (data.reference_backbone_params > 0) {
                char buf[64];
                std::snprintf(buf, sizeof(buf), "%.2f", data.percent_of_reference);
                std::cerr << "; " << buf << "% of reference "
                          << format_thousands(data.reference_backbone_params);
            }
            std::cerr << "\n";
        }
        return 0;
    } catch (const Error& e) {
        std::cerr << "error[" << e.code() << "]: " << e.what() << "\n";
        return e.exit_code();
    } catch (const std::exception& e) {
        std::cerr << "error[internal]: " << e.what() << "\n";
        return 4;
    }
}
