#include "styleadapt/training.hpp"

#include "styleadapt/errors.hpp"
#include "styleadapt/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace styleadapt {

using ordered_json = nlohmann::ordered_json;

void TrainingConfig::validate() const {
    if (lambda_weight < 0.0 || lambda_weight > 1.0) {
        throw ConfigError("config/lambda-range", "lambda must lie in [0,1], got " +
                                                     std::to_string(lambda_weight));
    }
    if (samples_per_stream < 1) {
        throw ConfigError("config/samples", "samples_per_stream must be >= 1");
    }
    if (batch_size < 1 || epochs < 0 || lr <= 0.0) {
        throw ConfigError("config/training", "invalid batch size, epochs, or learning rate");
    }
    if (baseline_decay < 0.0 || baseline_decay >= 1.0) {
        throw ConfigError("config/baseline", "baseline decay must lie in [0,1)");
    }
}

ordered_json TrainingConfig::to_json() const {
    return ordered_json{{"lambda", lambda_weight},
                        {"lr", lr},
                        {"batch_size", batch_size},
                        {"epochs", epochs},
                        {"samples_per_stream", samples_per_stream},
                        {"baseline_decay", baseline_decay},
                        {"use_baseline", use_baseline},
                        {"clip_norm", clip_norm},
                        {"max_sample_len", max_sample_len},
                        {"probe_size", probe_size},
                        {"seed", seed}};
}

TrainingConfig TrainingConfig::from_json(const nlohmann::json& j) {
    TrainingConfig c;
    c.lambda_weight = j.value("lambda", c.lambda_weight);
    c.lr = j.value("lr", c.lr);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.samples_per_stream = j.value("samples_per_stream", c.samples_per_stream);
    c.baseline_decay = j.value("baseline_decay", c.baseline_decay);
    c.use_baseline = j.value("use_baseline", c.use_baseline);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
    c.max_sample_len = j.value("max_sample_len", c.max_sample_len);
    c.probe_size = j.value("probe_size", c.probe_size);
    c.seed = j.value("seed", c.seed);
    return c;
}

// ---------------------------------------------------------------------------
// Helpers
// ---------------------------------------------------------------------------

namespace {

std::vector<int> encoder_row(const std::vector<int>& ids) {
    std::vector<int> row = ids;
    row.push_back(Vocabulary::kEos);
    return row;
}

// Pulls whole sequences (by stream-major index) out of a replicated encoder
// state, preserving the graph connection when grads are enabled.
HiddenStates gather_sequences(const HiddenStates& enc, const std::vector<long>& seq_indices) {
    std::vector<Tensor> parts;
    parts.reserve(seq_indices.size());
    Matrix mask(static_cast<long>(seq_indices.size()), enc.time);
    for (std::size_t i = 0; i < seq_indices.size(); ++i) {
        long s = seq_indices[i];
        parts.push_back(slice_rows(enc.states, s * enc.time, enc.time));
        mask.row(static_cast<long>(i)) = enc.mask.row(s);
    }
    HiddenStates out;
    out.states = parts.size() == 1 ? parts.front() : vconcat(parts);
    out.mask = std::move(mask);
    out.batch = static_cast<long>(seq_indices.size());
    out.time = enc.time;
    return out;
}

void require_vocab_match(const AttributeClassifier& classifier, const Vocabulary& vocab) {
    if (classifier.vocab_hash != vocab.hash()) {
        throw DataError("vocab/hash-mismatch", "classifier '" + classifier.attribute +
                                                   "' was trained on a different vocabulary");
    }
}

double neutral_reward(const AttributeClassifier& classifier) {
    return std::log(1.0 / static_cast<double>(classifier.values.size()));
}

double sample_reward(const AttributeClassifier& classifier, const std::vector<int>& tokens,
                     int value_idx) {
    // A sample that terminated immediately has no content for the classifier;
    // score it with the uninformative prior.
    if (tokens.empty()) return neutral_reward(classifier);
    return classifier.log_prob(tokens, value_idx);
}

std::string hex64(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << v;
    return os.str();
}

}  // namespace

// ---------------------------------------------------------------------------
// Loss operations
// ---------------------------------------------------------------------------

Tensor reconstruction_loss(const AdaptedModel& model, const StreamSpec& stream,
                           const LabeledSentence& sentence, const Vocabulary& vocab) {
    for (const auto& [attr, value] : stream.assignment) {
        auto it = sentence.labels.find(attr);
        if (it == sentence.labels.end() || it->second != value) {
            throw ContractError("train/stream-mismatch",
                                "reconstruction loss applied to a non-matching stream (" + attr +
                                    "=" + value + ")");
        }
    }
    std::vector<StreamSpec> single{stream};
    std::vector<int> ids = vocab.encode(sentence.tokens);
    HiddenStates enc = model.encode_streams({encoder_row(ids)}, single);
    return model.sequence_nll_streams(enc, {ids}, /*mean_per_token=*/true, single);
}

double joint_loss(double l_rec, double l_cls, double lambda_weight) {
    if (lambda_weight < 0.0 || lambda_weight > 1.0) {
        throw ConfigError("config/lambda-range", "lambda must lie in [0,1]");
    }
    return (1.0 - lambda_weight) * l_rec + lambda_weight * l_cls;
}

Tensor reinforce_surrogate(const AdaptedModel& model, const StreamSpec& stream,
                           const std::vector<std::vector<int>>& encoder_rows,
                           const std::vector<SampledSequence>& samples,
                           const std::vector<double>& advantages, const Vocabulary& vocab) {
    (void)vocab;
    if (samples.size() != encoder_rows.size() || samples.size() != advantages.size()) {
        throw ContractError("train/surrogate", "samples, rows, and advantages must align");
    }
    std::vector<StreamSpec> single{stream};
    HiddenStates enc = model.encode_streams(encoder_rows, single);
    std::vector<std::vector<int>> targets;
    std::vector<bool> with_eos;
    targets.reserve(samples.size());
    for (const auto& s : samples) {
        targets.push_back(s.token_ids);
        with_eos.push_back(s.ended_with_eos);
    }
    Tensor nll = model.sequence_nll_streams(enc, targets, /*mean_per_token=*/false, single,
                                            &with_eos);
    Matrix w(static_cast<long>(advantages.size()), 1);
    for (std::size_t i = 0; i < advantages.size(); ++i) w(static_cast<long>(i), 0) = advantages[i];
    return weighted_sum(nll, w);
}

ClassificationLoss classification_loss(const AdaptedModel& model, const StreamSpec& stream,
                                       const AttributeClassifier& classifier,
                                       const LabeledSentence& sentence, const Vocabulary& vocab,
                                       const TrainingConfig& config, Rng& rng, double baseline) {
    config.validate();
    require_vocab_match(classifier, vocab);
    if (stream.assignment.size() != 1) {
        throw ContractError("train/stream-shape", "classification loss expects a single-attribute "
                                                  "stream");
    }
    const auto& [attr, target_value] = *stream.assignment.begin();
    if (classifier.attribute != attr) {
        throw ContractError("train/classifier-attribute",
                            "classifier is for '" + classifier.attribute + "', stream is '" + attr +
                                "'");
    }
    auto it = sentence.labels.find(attr);
    if (it == sentence.labels.end() || it->second == target_value) {
        throw ContractError("train/stream-mismatch",
                            "classification loss applies to transfer streams only");
    }
    int value_idx = classifier.value_index(target_value);
    int steps = config.max_sample_len > 0
                    ? config.max_sample_len
                    : model.backbone().config.max_len - 1;

    std::vector<int> ids = vocab.encode(sentence.tokens);
    std::vector<std::vector<int>> rows(static_cast<std::size_t>(config.samples_per_stream),
                                       encoder_row(ids));
    std::vector<StreamSpec> single{stream};

    std::vector<GeneratedSequence> generated;
    {
        NoGradGuard no_grad;
        HiddenStates enc = model.encode_streams(rows, single);
        generated = model.generate_streams(enc, DecodeMode::Sample, steps, rng, single);
    }

    ClassificationLoss out;
    std::vector<double> advantages;
    double reward_sum = 0.0;
    for (std::size_t i = 0; i < generated.size(); ++i) {
        SampledSequence s;
        s.token_ids = generated[i].tokens;
        s.step_logprobs = generated[i].step_logprobs;
        s.ended_with_eos = generated[i].ended_with_eos;
        double r = sample_reward(classifier, s.token_ids, value_idx);
        reward_sum += r;
        advantages.push_back((r - baseline) / static_cast<double>(generated.size()));
        out.samples.push_back(std::move(s));
    }
    out.mean_reward = reward_sum / static_cast<double>(generated.size());
    out.surrogate = reinforce_surrogate(model, stream, rows, out.samples, advantages, vocab);
    return out;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

TrainResult train(AdaptedModel& model, const CorpusSplit& corpus,
                  const std::map<std::string, AttributeClassifier>& classifiers,
                  const TrainingConfig& config, const Vocabulary& vocab, std::ostream* train_log,
                  std::ostream* progress) {
    config.validate();
    if (model.plan().mode != CompositionPlan::Mode::Parallel) {
        throw ConfigError("plan/stack-in-train",
                          "Stack plans are inference-only; training needs a Parallel plan");
    }
    if (!model.backbone().frozen()) {
        throw ContractError("train/unfrozen-backbone", "backbone must be frozen before training");
    }
    if (corpus.train.empty()) throw DataError("corpus/empty-split", "training needs train data");

    const AttributeSchema& schema = model.schema();
    std::vector<StreamSpec> streams = model.parallel_streams();
    long k_streams = static_cast<long>(streams.size());

    // Training requires one stream per attribute value so that every sample
    // has a matching stream for every attribute.
    for (const auto& attr : schema.attributes) {
        for (const auto& v : attr.values) {
            bool covered = false;
            for (const auto& s : streams) {
                auto it = s.assignment.find(attr.name);
                covered |= (it != s.assignment.end() && it->second == v);
            }
            if (!covered) {
                throw ConfigError("plan/coverage-train",
                                  "training plan must cover value '" + v + "' of '" + attr.name +
                                      "'");
            }
        }
        if (!classifiers.count(attr.name)) {
            throw ConfigError("train/missing-classifier",
                              "no guidance classifier for attribute '" + attr.name + "'");
        }
        require_vocab_match(classifiers.at(attr.name), vocab);
    }

    // Per-stream metadata.
    struct StreamInfo {
        std::string attr, value;
        const AttributeClassifier* classifier;
        int value_idx;
    };
    std::vector<StreamInfo> info;
    for (const auto& s : streams) {
        const auto& [attr, value] = *s.assignment.begin();
        const auto& cls = classifiers.at(attr);
        info.push_back({attr, value, &cls, cls.value_index(value)});
    }

    std::vector<std::vector<int>> ids;
    ids.reserve(corpus.train.size());
    for (const auto& s : corpus.train) ids.push_back(vocab.encode(s.tokens));

    int steps_cap = config.max_sample_len > 0 ? config.max_sample_len
                                              : model.backbone().config.max_len - 1;
    Rng rng = Rng(config.seed).derive("adapter-train");
    AdamOptimizer opt(model.adapter_parameters(), config.lr, config.clip_norm);

    std::vector<double> baseline(static_cast<std::size_t>(k_streams), 0.0);
    std::vector<bool> baseline_init(static_cast<std::size_t>(k_streams), false);

    TrainResult result;
    result.backbone_checksum_before = model.backbone().checksum();
    result.adapter_checksum_before = model.adapter_checksum();

    // Fixed probe set for per-stream transfer accuracy logging.
    const auto& probe_source = corpus.dev.empty() ? corpus.train : corpus.dev;
    long probe_n = std::min<long>(config.probe_size, static_cast<long>(probe_source.size()));
    std::vector<std::vector<int>> probe_rows;
    std::vector<const LabeledSentence*> probe_sentences;
    for (long i = 0; i < probe_n; ++i) {
        probe_sentences.push_back(&probe_source[static_cast<std::size_t>(i)]);
        probe_rows.push_back(encoder_row(vocab.encode(probe_source[static_cast<std::size_t>(i)].tokens)));
    }

    std::vector<std::size_t> order(ids.size());
    std::iota(order.begin(), order.end(), 0);
    double lambda = config.lambda_weight;

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        rng.shuffle(order);
        LossBreakdown epoch_sum;
        std::map<std::string, double> stream_rec_sum, stream_cls_sum;
        std::map<std::string, long> stream_rec_n, stream_cls_n;
        long steps_in_epoch = 0;

        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(config.batch_size)) {
            std::size_t end =
                std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
            long b_size = static_cast<long>(end - start);
            std::vector<std::size_t> batch(order.begin() + static_cast<long>(start),
                                           order.begin() + static_cast<long>(end));

            std::vector<std::vector<int>> rows;
            rows.reserve(batch.size());
            for (std::size_t i : batch) rows.push_back(encoder_row(ids[i]));
            HiddenStates enc = model.encode_streams(rows, streams);

            std::vector<Tensor> rec_terms, cls_terms;
            LossBreakdown step_record;
            double reward_sum = 0.0;
            long reward_n = 0;

            for (long k = 0; k < k_streams; ++k) {
                const StreamInfo& si = info[static_cast<std::size_t>(k)];
                std::vector<StreamSpec> single{streams[static_cast<std::size_t>(k)]};
                std::vector<long> match_seq, transfer_pos;
                for (long p = 0; p < b_size; ++p) {
                    const auto& label =
                        corpus.train[batch[static_cast<std::size_t>(p)]].labels.at(si.attr);
                    if (label == si.value) {
                        match_seq.push_back(k * b_size + p);
                    } else {
                        transfer_pos.push_back(p);
                    }
                }

                if (lambda < 1.0 && !match_seq.empty()) {
                    HiddenStates enc_m = gather_sequences(enc, match_seq);
                    std::vector<std::vector<int>> targets;
                    for (long s : match_seq) {
                        targets.push_back(ids[batch[static_cast<std::size_t>(s - k * b_size)]]);
                    }
                    Tensor nll = model.sequence_nll_streams(enc_m, targets, true, single);
                    Tensor rec = weighted_sum(
                        nll, Matrix::Constant(nll->rows(), 1,
                                              1.0 / static_cast<double>(nll->rows())));
                    stream_rec_sum[si.value] += rec->scalar();
                    stream_rec_n[si.value] += 1;
                    rec_terms.push_back(std::move(rec));
                }

                if (lambda > 0.0 && !transfer_pos.empty()) {
                    int s_per = config.samples_per_stream;
                    std::vector<long> rep_seq;
                    for (long p : transfer_pos) {
                        for (int s = 0; s < s_per; ++s) rep_seq.push_back(k * b_size + p);
                    }
                    std::vector<GeneratedSequence> generated;
                    {
                        NoGradGuard no_grad;
                        HiddenStates enc_s = gather_sequences(enc, rep_seq);
                        generated = model.generate_streams(enc_s, DecodeMode::Sample, steps_cap,
                                                           rng, single);
                    }
                    std::vector<double> rewards(generated.size());
                    double mean_r = 0.0;
                    for (std::size_t j = 0; j < generated.size(); ++j) {
                        rewards[j] = sample_reward(*si.classifier, generated[j].tokens,
                                                   si.value_idx);
                        mean_r += rewards[j];
                    }
                    mean_r /= static_cast<double>(generated.size());
                    reward_sum += mean_r * static_cast<double>(generated.size());
                    reward_n += static_cast<long>(generated.size());

                    double b = 0.0;
                    if (config.use_baseline) {
                        // EMA over individual rewards; seeded with the first
                        // batch's mean so early advantages start centered.
                        auto ku = static_cast<std::size_t>(k);
                        if (!baseline_init[ku]) {
                            baseline[ku] = mean_r;
                            baseline_init[ku] = true;
                        } else {
                            for (double r : rewards) {
                                baseline[ku] = config.baseline_decay * baseline[ku] +
                                               (1.0 - config.baseline_decay) * r;
                            }
                        }
                        b = baseline[ku];
                    }

                    HiddenStates enc_g = gather_sequences(enc, rep_seq);
                    std::vector<std::vector<int>> targets;
                    std::vector<bool> with_eos;
                    Matrix adv(static_cast<long>(generated.size()), 1);
                    for (std::size_t j = 0; j < generated.size(); ++j) {
                        targets.push_back(generated[j].tokens);
                        with_eos.push_back(generated[j].ended_with_eos);
                        adv(static_cast<long>(j), 0) =
                            (rewards[j] - b) / static_cast<double>(generated.size());
                    }
                    Tensor nll = model.sequence_nll_streams(enc_g, targets, false, single,
                                                            &with_eos);
                    Tensor surrogate = weighted_sum(nll, adv);
                    stream_cls_sum[si.value] += surrogate->scalar();
                    stream_cls_n[si.value] += 1;
                    cls_terms.push_back(std::move(surrogate));
                }
            }

            auto mean_terms = [](std::vector<Tensor>& terms) -> Tensor {
                if (terms.empty()) return constant(Matrix::Zero(1, 1));
                Tensor all = terms.size() == 1 ? terms.front() : vconcat(terms);
                return weighted_sum(all, Matrix::Constant(all->rows(), 1,
                                                          1.0 / static_cast<double>(all->rows())));
            };
            Tensor l_rec = mean_terms(rec_terms);
            Tensor l_cls = mean_terms(cls_terms);
            Tensor loss = add(scale(l_rec, 1.0 - lambda), scale(l_cls, lambda));

            opt.zero_grad();
            backward(loss);
            opt.step();

            step_record.l_rec = l_rec->scalar();
            step_record.l_cls = l_cls->scalar();
            step_record.l = joint_loss(step_record.l_rec, step_record.l_cls, lambda);
            step_record.l_cls_estimate =
                reward_n > 0 ? -reward_sum / static_cast<double>(reward_n) : 0.0;

            if (train_log) {
                ordered_json rec{{"type", "step"},
                                 {"epoch", epoch},
                                 {"step", steps_in_epoch},
                                 {"l_rec", step_record.l_rec},
                                 {"l_cls", step_record.l_cls},
                                 {"l", step_record.l},
                                 {"l_cls_estimate", step_record.l_cls_estimate}};
                (*train_log) << rec.dump() << "\n";
            }
            epoch_sum.l_rec += step_record.l_rec;
            epoch_sum.l_cls += step_record.l_cls;
            epoch_sum.l_cls_estimate += step_record.l_cls_estimate;
            ++steps_in_epoch;
        }

        LossBreakdown epoch_record;
        epoch_record.l_rec = epoch_sum.l_rec / static_cast<double>(steps_in_epoch);
        epoch_record.l_cls = epoch_sum.l_cls / static_cast<double>(steps_in_epoch);
        epoch_record.l_cls_estimate =
            epoch_sum.l_cls_estimate / static_cast<double>(steps_in_epoch);
        epoch_record.l = joint_loss(epoch_record.l_rec, epoch_record.l_cls, lambda);
        for (const auto& [v, sum] : stream_rec_sum) {
            epoch_record.stream_rec[v] = sum / static_cast<double>(stream_rec_n[v]);
        }
        for (const auto& [v, sum] : stream_cls_sum) {
            epoch_record.stream_cls[v] = sum / static_cast<double>(stream_cls_n[v]);
        }
        result.epoch_losses.push_back(epoch_record);

        // Probe: greedy transfer accuracy and content score on the fixed dev probe.
        std::map<std::string, double> probe_acc;
        double probe_bs = 0.0;
        if (probe_n > 0) {
            Rng probe_rng(0);
            auto outputs = streams_to_outputs(model, probe_rows, streams, DecodeMode::Greedy,
                                              steps_cap, probe_rng);
            TokenEmbedder embed = encoder_embedder(model.backbone());
            std::map<std::string, long> hit, tot;
            double bs_sum = 0.0;
            long bs_n = 0;
            for (const auto& out : outputs) {
                const auto& [attr, value] = *out.assignment.begin();
                const auto& sent = *probe_sentences[static_cast<std::size_t>(out.input_index)];
                if (sent.labels.at(attr) == value) continue;  // matching stream, not a transfer
                ++tot[value];
                ++bs_n;
                if (!out.token_ids.empty()) {
                    const auto& cls = classifiers.at(attr);
                    Eigen::VectorXd probs = cls.classify(out.token_ids);
                    int arg;
                    probs.maxCoeff(&arg);
                    if (cls.values[static_cast<std::size_t>(arg)] == value) ++hit[value];
                    bs_sum += content_score(embed, vocab.encode(sent.tokens), out.token_ids);
                }
            }
            for (const auto& [v, t] : tot) {
                probe_acc[v] = t > 0 ? static_cast<double>(hit[v]) / static_cast<double>(t) : 0.0;
            }
            probe_bs = bs_n > 0 ? bs_sum / static_cast<double>(bs_n) : 0.0;
        }
        result.epoch_probe_accuracy.push_back(probe_acc);
        result.epoch_probe_content.push_back(probe_bs);

        std::uint64_t backbone_now = model.backbone().checksum();
        if (backbone_now != result.backbone_checksum_before) {
            throw ContractError("train/backbone-mutated",
                                "backbone parameters changed during adapter training");
        }
        if (train_log) {
            ordered_json rec{{"type", "epoch"},
                             {"epoch", epoch},
                             {"step", steps_in_epoch - 1},
                             {"l_rec", epoch_record.l_rec},
                             {"l_cls", epoch_record.l_cls},
                             {"l", epoch_record.l},
                             {"l_cls_estimate", epoch_record.l_cls_estimate},
                             {"backbone_checksum", hex64(backbone_now)}};
            ordered_json acc = ordered_json::object();
            for (const auto& [v, a] : probe_acc) acc[v] = a;
            rec["probe_accuracy"] = acc;
            rec["probe_content"] = probe_bs;
            (*train_log) << rec.dump() << "\n";
        }
        if (progress) {
            (*progress) << "epoch " << epoch + 1 << "/" << config.epochs << " L_rec "
                        << std::setprecision(4) << epoch_record.l_rec << " L_cls_est "
                        << epoch_record.l_cls_estimate << " probe";
            for (const auto& [v, a] : probe_acc) (*progress) << " " << v << "=" << a;
            (*progress) << " bs=" << probe_bs;
            (*progress) << "\n";
        }
    }

    result.backbone_checksum_after = model.backbone().checksum();
    result.adapter_checksum_after = model.adapter_checksum();
    return result;
}

}  // namespace styleadapt
