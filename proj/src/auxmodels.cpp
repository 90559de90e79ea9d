#include "styleadapt/auxmodels.hpp"

#include "styleadapt/backbone.hpp"
#include "styleadapt/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace styleadapt {

using ordered_json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Classifier
// ---------------------------------------------------------------------------

ordered_json ClassifierConfig::to_json() const {
    return ordered_json{{"embed_dim", embed_dim},
                        {"filter_widths", filter_widths},
                        {"filters_per_width", filters_per_width},
                        {"epochs", epochs},
                        {"batch_size", batch_size},
                        {"lr", lr},
                        {"clip_norm", clip_norm}};
}

ClassifierConfig ClassifierConfig::from_json(const nlohmann::json& j) {
    ClassifierConfig c;
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.filter_widths = j.value("filter_widths", c.filter_widths);
    c.filters_per_width = j.value("filters_per_width", c.filters_per_width);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr = j.value("lr", c.lr);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
    return c;
}

AttributeClassifier build_classifier(const ClassifierConfig& config, const std::string& attribute,
                                     const std::vector<std::string>& values, int vocab_size,
                                     std::uint64_t seed) {
    if (values.size() < 2) throw ConfigError("classifier/values", "need at least 2 values");
    if (config.filter_widths.empty()) {
        throw ConfigError("classifier/filters", "need at least one filter width");
    }
    AttributeClassifier cls;
    cls.attribute = attribute;
    cls.values = values;
    cls.config = config;
    Rng rng = Rng(seed).derive("classifier/" + attribute);
    cls.embedding = parameter(init_normal(vocab_size, config.embed_dim, 0.1, rng),
                              "cls/" + attribute + "/embedding");
    for (int w : config.filter_widths) {
        cls.conv_w.push_back(parameter(init_xavier(w * config.embed_dim, config.filters_per_width,
                                                   rng),
                                       "cls/" + attribute + "/conv" + std::to_string(w) + "_w"));
        cls.conv_b.push_back(parameter(Matrix::Zero(1, config.filters_per_width),
                                       "cls/" + attribute + "/conv" + std::to_string(w) + "_b"));
    }
    long feat = static_cast<long>(config.filter_widths.size()) * config.filters_per_width;
    cls.head_w = parameter(init_xavier(feat, static_cast<long>(values.size()), rng),
                           "cls/" + attribute + "/head_w");
    cls.head_b = parameter(Matrix::Zero(1, static_cast<long>(values.size())),
                           "cls/" + attribute + "/head_b");
    return cls;
}

std::vector<Tensor> AttributeClassifier::parameters() const {
    std::vector<Tensor> out{embedding};
    for (std::size_t i = 0; i < conv_w.size(); ++i) {
        out.push_back(conv_w[i]);
        out.push_back(conv_b[i]);
    }
    out.push_back(head_w);
    out.push_back(head_b);
    return out;
}

std::uint64_t AttributeClassifier::checksum() const { return params_checksum(parameters()); }

void AttributeClassifier::set_frozen(bool frozen) {
    for (const auto& p : parameters()) p->requires_grad = !frozen;
}

int AttributeClassifier::value_index(const std::string& value) const {
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (values[i] == value) return static_cast<int>(i);
    }
    throw ContractError("classifier/value", "'" + value + "' is not a value of '" + attribute + "'");
}

Tensor AttributeClassifier::logits(const std::vector<int>& token_ids) const {
    if (token_ids.empty()) {
        throw DataError("classifier/empty-input", "cannot classify an empty token sequence");
    }
    int max_width = *std::max_element(config.filter_widths.begin(), config.filter_widths.end());
    std::vector<int> ids = token_ids;
    while (static_cast<int>(ids.size()) < max_width) ids.push_back(Vocabulary::kPad);
    Tensor emb = styleadapt::embedding(embedding, ids);
    std::vector<Tensor> pooled;
    for (std::size_t wi = 0; wi < config.filter_widths.size(); ++wi) {
        Tensor windows = window_concat(emb, config.filter_widths[wi]);
        pooled.push_back(col_max(relu(linear(windows, conv_w[wi], conv_b[wi]))));
    }
    return linear(hconcat(pooled), head_w, head_b);
}

Eigen::VectorXd AttributeClassifier::classify(const std::vector<int>& token_ids) const {
    NoGradGuard no_grad;
    Tensor l = logits(token_ids);
    return softmax_vector(l->val.row(0).transpose());
}

double AttributeClassifier::log_prob(const std::vector<int>& token_ids, int value_idx) const {
    NoGradGuard no_grad;
    Tensor l = logits(token_ids);
    Eigen::VectorXd logp = log_softmax_vector(l->val.row(0).transpose());
    return logp(value_idx);
}

Checkpoint AttributeClassifier::to_checkpoint(const Vocabulary& vocab) const {
    Checkpoint ckpt;
    ckpt.kind = "classifier";
    ckpt.config = config.to_json();
    ckpt.config["attribute"] = attribute;
    ckpt.config["values"] = values;
    ckpt.config["held_out_accuracy"] = held_out_accuracy;
    ckpt.vocab = vocab.id_to_token;
    ckpt.vocab_hash = vocab.hash();
    for (const auto& p : parameters()) ckpt.add(p->name, p->val);
    return ckpt;
}

AttributeClassifier AttributeClassifier::from_checkpoint(const Checkpoint& ckpt) {
    ClassifierConfig config = ClassifierConfig::from_json(ckpt.config);
    AttributeClassifier cls = build_classifier(
        config, ckpt.config.at("attribute").get<std::string>(),
        ckpt.config.at("values").get<std::vector<std::string>>(),
        static_cast<int>(ckpt.vocab.size()), 0);
    for (const auto& p : cls.parameters()) p->val = ckpt.get(p->name);
    cls.vocab_hash = ckpt.vocab_hash;
    cls.held_out_accuracy = ckpt.config.value("held_out_accuracy", 0.0);
    return cls;
}

AttributeClassifier train_classifier(const CorpusSplit& corpus, const std::string& attribute,
                                     const ClassifierConfig& config, const Vocabulary& vocab,
                                     std::uint64_t seed, std::ostream* log) {
    const auto& attr = corpus.schema.attribute(attribute);
    std::set<std::string> seen;
    for (const auto& s : corpus.train) seen.insert(s.labels.at(attribute));
    if (seen.size() != attr.values.size()) {
        throw DataError("classifier/coverage",
                        "train split covers " + std::to_string(seen.size()) + " of " +
                            std::to_string(attr.values.size()) + " values of '" + attribute + "'");
    }

    AttributeClassifier cls = build_classifier(config, attribute, attr.values, vocab.size(), seed);
    cls.vocab_hash = vocab.hash();
    AdamOptimizer opt(cls.parameters(), config.lr, config.clip_norm);
    Rng rng = Rng(seed).derive("classifier-train/" + attribute);

    std::vector<std::pair<std::vector<int>, int>> data;
    data.reserve(corpus.train.size());
    for (const auto& s : corpus.train) {
        data.emplace_back(vocab.encode(s.tokens), cls.value_index(s.labels.at(attribute)));
    }
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(config.batch_size)) {
            std::size_t end =
                std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
            std::vector<Tensor> losses;
            for (std::size_t i = start; i < end; ++i) {
                const auto& [ids, label] = data[order[i]];
                losses.push_back(nll_rows(cls.logits(ids), {label}));
            }
            Tensor batch = vconcat(losses);
            Tensor loss = weighted_sum(
                batch, Matrix::Constant(batch->rows(), 1, 1.0 / static_cast<double>(batch->rows())));
            opt.zero_grad();
            backward(loss);
            opt.step();
            epoch_loss += loss->scalar() * static_cast<double>(end - start);
        }
        if (log) {
            *log << "classifier[" << attribute << "] epoch " << epoch + 1 << "/" << config.epochs
                 << " loss " << epoch_loss / static_cast<double>(order.size()) << "\n";
        }
    }

    const auto& held_out = corpus.dev.empty() ? corpus.test : corpus.dev;
    long correct = 0;
    for (const auto& s : held_out) {
        Eigen::VectorXd probs = cls.classify(vocab.encode(s.tokens));
        int pred;
        probs.maxCoeff(&pred);
        if (cls.values[static_cast<std::size_t>(pred)] == s.labels.at(attribute)) ++correct;
    }
    cls.held_out_accuracy =
        held_out.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(held_out.size());
    if (log) {
        *log << "classifier[" << attribute << "] held-out accuracy " << cls.held_out_accuracy
             << "\n";
    }
    cls.set_frozen(true);
    return cls;
}

// ---------------------------------------------------------------------------
// Fluency LM
// ---------------------------------------------------------------------------

ordered_json LmConfig::to_json() const {
    return ordered_json{{"layers", layers},   {"hidden_dim", hidden_dim},
                        {"heads", heads},     {"ffn_dim", ffn_dim},
                        {"max_len", max_len}, {"epochs", epochs},
                        {"batch_size", batch_size}, {"lr", lr},
                        {"clip_norm", clip_norm}};
}

LmConfig LmConfig::from_json(const nlohmann::json& j) {
    LmConfig c;
    c.layers = j.value("layers", c.layers);
    c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
    c.heads = j.value("heads", c.heads);
    c.ffn_dim = j.value("ffn_dim", c.ffn_dim);
    c.max_len = j.value("max_len", c.max_len);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr = j.value("lr", c.lr);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
    return c;
}

FluencyLM build_fluency_lm(const LmConfig& config, int vocab_size, std::uint64_t seed) {
    if (config.hidden_dim % config.heads != 0) {
        throw ConfigError("lm/heads", "heads must divide hidden_dim");
    }
    FluencyLM lm;
    lm.config = config;
    lm.vocab_size = vocab_size;
    Rng rng = Rng(seed).derive("fluency-lm");
    long d = config.hidden_dim, f = config.ffn_dim;
    lm.embedding = parameter(init_normal(vocab_size, d, 1.0 / std::sqrt(static_cast<double>(d)),
                                         rng),
                             "lm/embedding");
    lm.positional = sinusoidal_positions(config.max_len, d);
    for (int i = 0; i < config.layers; ++i) {
        std::string p = "lm/layer" + std::to_string(i);
        LmLayerParams layer;
        layer.ln1_g = parameter(Matrix::Ones(1, d), p + "/ln1_g");
        layer.ln1_b = parameter(Matrix::Zero(1, d), p + "/ln1_b");
        layer.wq = parameter(init_xavier(d, d, rng), p + "/wq");
        layer.bq = parameter(Matrix::Zero(1, d), p + "/bq");
        layer.wk = parameter(init_xavier(d, d, rng), p + "/wk");
        layer.bk = parameter(Matrix::Zero(1, d), p + "/bk");
        layer.wv = parameter(init_xavier(d, d, rng), p + "/wv");
        layer.bv = parameter(Matrix::Zero(1, d), p + "/bv");
        layer.wo = parameter(init_xavier(d, d, rng), p + "/wo");
        layer.bo = parameter(Matrix::Zero(1, d), p + "/bo");
        layer.ln2_g = parameter(Matrix::Ones(1, d), p + "/ln2_g");
        layer.ln2_b = parameter(Matrix::Zero(1, d), p + "/ln2_b");
        layer.ffn_w1 = parameter(init_xavier(d, f, rng), p + "/ffn_w1");
        layer.ffn_b1 = parameter(Matrix::Zero(1, f), p + "/ffn_b1");
        layer.ffn_w2 = parameter(init_xavier(f, d, rng), p + "/ffn_w2");
        layer.ffn_b2 = parameter(Matrix::Zero(1, d), p + "/ffn_b2");
        lm.layers.push_back(std::move(layer));
    }
    lm.final_ln_g = parameter(Matrix::Ones(1, d), "lm/final_ln_g");
    lm.final_ln_b = parameter(Matrix::Zero(1, d), "lm/final_ln_b");
    lm.out_w = parameter(init_xavier(d, vocab_size, rng), "lm/out_w");
    lm.out_b = parameter(Matrix::Zero(1, vocab_size), "lm/out_b");
    return lm;
}

std::vector<Tensor> FluencyLM::parameters() const {
    std::vector<Tensor> out{embedding};
    for (const auto& l : layers) {
        out.insert(out.end(), {l.ln1_g, l.ln1_b, l.wq, l.bq, l.wk, l.bk, l.wv, l.bv, l.wo, l.bo,
                               l.ln2_g, l.ln2_b, l.ffn_w1, l.ffn_b1, l.ffn_w2, l.ffn_b2});
    }
    out.insert(out.end(), {final_ln_g, final_ln_b, out_w, out_b});
    return out;
}

std::uint64_t FluencyLM::checksum() const { return params_checksum(parameters()); }

void FluencyLM::set_frozen(bool frozen) {
    for (const auto& p : parameters()) p->requires_grad = !frozen;
}

namespace {

// Causal forward over a batch of <bos>-prefixed rows; returns logits.
Tensor lm_forward(const FluencyLM& lm, const std::vector<std::vector<int>>& prefixes, long& time) {
    long batch = static_cast<long>(prefixes.size());
    time = 0;
    for (const auto& p : prefixes) {
        if (static_cast<int>(p.size()) > lm.config.max_len) {
            throw ContractError("lm/length", "sequence exceeds LM max_len");
        }
        time = std::max(time, static_cast<long>(p.size()));
    }
    std::vector<int> flat(static_cast<std::size_t>(batch * time), Vocabulary::kPad);
    Matrix mask = Matrix::Zero(batch, time);
    for (long b = 0; b < batch; ++b) {
        const auto& p = prefixes[static_cast<std::size_t>(b)];
        for (long t = 0; t < static_cast<long>(p.size()); ++t) {
            flat[static_cast<std::size_t>(b * time + t)] = p[static_cast<std::size_t>(t)];
            mask(b, t) = 1.0;
        }
    }
    long d = lm.config.hidden_dim;
    Tensor h = embedding(lm.embedding, flat);
    h = scale(h, std::sqrt(static_cast<double>(d)));
    Matrix pos(batch * time, d);
    for (long b = 0; b < batch; ++b) pos.middleRows(b * time, time) = lm.positional.topRows(time);
    h = add(h, constant(std::move(pos)));
    for (const auto& layer : lm.layers) {
        Tensor a = layer_norm(h, layer.ln1_g, layer.ln1_b);
        Tensor q = linear(a, layer.wq, layer.bq);
        Tensor k = linear(a, layer.wk, layer.bk);
        Tensor v = linear(a, layer.wv, layer.bv);
        Tensor o = attention(q, k, v, batch, time, time, lm.config.heads, true, mask);
        h = add(h, linear(o, layer.wo, layer.bo));
        Tensor f = layer_norm(h, layer.ln2_g, layer.ln2_b);
        h = add(h, linear(relu(linear(f, layer.ffn_w1, layer.ffn_b1)), layer.ffn_w2, layer.ffn_b2));
    }
    h = layer_norm(h, lm.final_ln_g, lm.final_ln_b);
    return linear(h, lm.out_w, lm.out_b);
}

}  // namespace

std::pair<double, long> FluencyLM::sequence_nll(const std::vector<int>& token_ids) const {
    NoGradGuard no_grad;
    std::vector<int> prefix{Vocabulary::kBos};
    prefix.insert(prefix.end(), token_ids.begin(), token_ids.end());
    long time = 0;
    Tensor logits = lm_forward(*this, {prefix}, time);
    double nll = 0.0;
    long n = static_cast<long>(token_ids.size()) + 1;  // content tokens + <eos>
    for (long i = 0; i < n; ++i) {
        int gold = i < static_cast<long>(token_ids.size())
                       ? token_ids[static_cast<std::size_t>(i)]
                       : Vocabulary::kEos;
        Eigen::VectorXd logp = log_softmax_vector(logits->val.row(i).transpose());
        nll -= logp(gold);
    }
    return {nll, n};
}

double FluencyLM::perplexity(const std::vector<int>& token_ids) const {
    if (token_ids.empty()) {
        throw DataError("lm/empty-input", "perplexity of an empty token sequence");
    }
    auto [nll, n] = sequence_nll(token_ids);
    return std::exp(nll / static_cast<double>(n));
}

Checkpoint FluencyLM::to_checkpoint(const Vocabulary& vocab) const {
    Checkpoint ckpt;
    ckpt.kind = "lm";
    ckpt.config = config.to_json();
    ckpt.vocab = vocab.id_to_token;
    ckpt.vocab_hash = vocab.hash();
    for (const auto& p : parameters()) ckpt.add(p->name, p->val);
    return ckpt;
}

FluencyLM FluencyLM::from_checkpoint(const Checkpoint& ckpt) {
    LmConfig config = LmConfig::from_json(ckpt.config);
    FluencyLM lm = build_fluency_lm(config, static_cast<int>(ckpt.vocab.size()), 0);
    for (const auto& p : lm.parameters()) p->val = ckpt.get(p->name);
    lm.vocab_hash = ckpt.vocab_hash;
    return lm;
}

FluencyLM train_fluency_lm(const CorpusSplit& corpus, const LmConfig& config,
                           const Vocabulary& vocab, std::uint64_t seed, std::ostream* log) {
    if (corpus.train.empty()) throw DataError("corpus/empty-split", "LM training needs train data");
    FluencyLM lm = build_fluency_lm(config, vocab.size(), seed);
    lm.vocab_hash = vocab.hash();
    AdamOptimizer opt(lm.parameters(), config.lr, config.clip_norm);
    Rng rng = Rng(seed).derive("lm-train");

    std::vector<std::vector<int>> data;
    data.reserve(corpus.train.size());
    for (const auto& s : corpus.train) data.push_back(vocab.encode(s.tokens));
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        long tokens = 0;
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(config.batch_size)) {
            std::size_t end =
                std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
            std::vector<std::vector<int>> prefixes;
            for (std::size_t i = start; i < end; ++i) {
                std::vector<int> p{Vocabulary::kBos};
                p.insert(p.end(), data[order[i]].begin(), data[order[i]].end());
                prefixes.push_back(std::move(p));
            }
            long time = 0;
            Tensor logits = lm_forward(lm, prefixes, time);
            long batch = static_cast<long>(prefixes.size());
            std::vector<int> targets(static_cast<std::size_t>(batch * time), Vocabulary::kPad);
            std::vector<bool> ignore(static_cast<std::size_t>(batch * time), true);
            long n_targets = 0;
            for (long b = 0; b < batch; ++b) {
                const auto& ids = data[order[start + static_cast<std::size_t>(b)]];
                for (long i = 0; i <= static_cast<long>(ids.size()); ++i) {
                    targets[static_cast<std::size_t>(b * time + i)] =
                        i < static_cast<long>(ids.size()) ? ids[static_cast<std::size_t>(i)]
                                                          : Vocabulary::kEos;
                    ignore[static_cast<std::size_t>(b * time + i)] = false;
                    ++n_targets;
                }
            }
            Tensor nll = nll_rows(logits, targets, 0.0, &ignore);
            Tensor loss = weighted_sum(
                nll, Matrix::Constant(nll->rows(), 1, 1.0 / static_cast<double>(n_targets)));
            opt.zero_grad();
            backward(loss);
            opt.step();
            epoch_loss += loss->scalar() * static_cast<double>(n_targets);
            tokens += n_targets;
        }
        if (log) {
            *log << "lm epoch " << epoch + 1 << "/" << config.epochs << " loss "
                 << epoch_loss / static_cast<double>(tokens) << "\n";
        }
    }
    lm.set_frozen(true);
    return lm;
}

}  // namespace styleadapt
