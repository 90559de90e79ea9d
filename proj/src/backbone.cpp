#include "styleadapt/backbone.hpp"

#include "styleadapt/errors.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>

namespace styleadapt {

using ordered_json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

void BackboneConfig::validate() const {
    if (encoder_layers < 1 || decoder_layers < 1) {
        throw ConfigError("backbone/layers", "layer counts must be positive");
    }
    if (hidden_dim < 1 || ffn_dim < 1 || max_len < 2 || vocab_size < 5) {
        throw ConfigError("backbone/dims", "invalid backbone dimensions");
    }
    if (heads < 1 || hidden_dim % heads != 0) {
        throw ConfigError("backbone/heads", "heads must divide hidden_dim (" +
                                                std::to_string(heads) + " vs " +
                                                std::to_string(hidden_dim) + ")");
    }
}

long BackboneConfig::param_count() const {
    long d = hidden_dim, f = ffn_dim, v = vocab_size;
    long enc = 4 * d * d + 2 * d * f + 9 * d + f;
    long dec = 8 * d * d + 2 * d * f + 15 * d + f;
    return v * d                        // embedding
           + encoder_layers * enc       //
           + decoder_layers * dec       //
           + 4 * d                      // final norms
           + d * v + v;                 // output projection
}

ordered_json BackboneConfig::to_json() const {
    return ordered_json{{"encoder_layers", encoder_layers}, {"decoder_layers", decoder_layers},
                        {"hidden_dim", hidden_dim},         {"heads", heads},
                        {"ffn_dim", ffn_dim},               {"max_len", max_len},
                        {"vocab_size", vocab_size}};
}

BackboneConfig BackboneConfig::from_json(const nlohmann::json& j) {
    BackboneConfig c;
    c.encoder_layers = j.at("encoder_layers").get<int>();
    c.decoder_layers = j.at("decoder_layers").get<int>();
    c.hidden_dim = j.at("hidden_dim").get<int>();
    c.heads = j.at("heads").get<int>();
    c.ffn_dim = j.at("ffn_dim").get<int>();
    c.max_len = j.at("max_len").get<int>();
    c.vocab_size = j.at("vocab_size").get<int>();
    return c;
}

ordered_json BackbonePretrainConfig::to_json() const {
    return ordered_json{{"epochs", epochs},
                        {"batch_size", batch_size},
                        {"lr", lr},
                        {"replace_prob", replace_prob},
                        {"drop_prob", drop_prob},
                        {"clean_fraction", clean_fraction},
                        {"label_smoothing", label_smoothing},
                        {"clip_norm", clip_norm}};
}

BackbonePretrainConfig BackbonePretrainConfig::from_json(const nlohmann::json& j) {
    BackbonePretrainConfig c;
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr = j.value("lr", c.lr);
    c.replace_prob = j.value("replace_prob", c.replace_prob);
    c.drop_prob = j.value("drop_prob", c.drop_prob);
    c.clean_fraction = j.value("clean_fraction", c.clean_fraction);
    c.label_smoothing = j.value("label_smoothing", c.label_smoothing);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
    return c;
}

Matrix sinusoidal_positions(long max_len, long dim) {
    Matrix pos(max_len, dim);
    for (long t = 0; t < max_len; ++t) {
        for (long i = 0; i < dim; i += 2) {
            double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(dim));
            pos(t, i) = std::sin(static_cast<double>(t) * freq);
            if (i + 1 < dim) pos(t, i + 1) = std::cos(static_cast<double>(t) * freq);
        }
    }
    return pos;
}

// ---------------------------------------------------------------------------
// Construction
// ---------------------------------------------------------------------------

namespace {

AttentionParams make_attention(const std::string& prefix, long d, Rng& rng) {
    AttentionParams a;
    a.wq = parameter(init_xavier(d, d, rng), prefix + "/wq");
    a.bq = parameter(Matrix::Zero(1, d), prefix + "/bq");
    a.wk = parameter(init_xavier(d, d, rng), prefix + "/wk");
    a.bk = parameter(Matrix::Zero(1, d), prefix + "/bk");
    a.wv = parameter(init_xavier(d, d, rng), prefix + "/wv");
    a.bv = parameter(Matrix::Zero(1, d), prefix + "/bv");
    a.wo = parameter(init_xavier(d, d, rng), prefix + "/wo");
    a.bo = parameter(Matrix::Zero(1, d), prefix + "/bo");
    return a;
}

void collect(const AttentionParams& a, std::vector<Tensor>& out) {
    out.insert(out.end(), {a.wq, a.bq, a.wk, a.bk, a.wv, a.bv, a.wo, a.bo});
}

Tensor ln_gamma(const std::string& name, long d) { return parameter(Matrix::Ones(1, d), name); }
Tensor ln_beta(const std::string& name, long d) { return parameter(Matrix::Zero(1, d), name); }

}  // namespace

BackboneModel build_backbone(const BackboneConfig& config, std::uint64_t seed) {
    config.validate();
    BackboneModel m;
    m.config = config;
    Rng rng = Rng(seed).derive("backbone");
    long d = config.hidden_dim, f = config.ffn_dim, v = config.vocab_size;

    m.embedding = parameter(init_normal(v, d, 1.0 / std::sqrt(static_cast<double>(d)), rng),
                            "embedding");
    m.positional = sinusoidal_positions(config.max_len, d);

    for (int i = 0; i < config.encoder_layers; ++i) {
        std::string p = "enc" + std::to_string(i);
        EncoderLayerParams layer;
        layer.ln1_g = ln_gamma(p + "/ln1_g", d);
        layer.ln1_b = ln_beta(p + "/ln1_b", d);
        layer.attn = make_attention(p + "/attn", d, rng);
        layer.ln2_g = ln_gamma(p + "/ln2_g", d);
        layer.ln2_b = ln_beta(p + "/ln2_b", d);
        layer.ffn_w1 = parameter(init_xavier(d, f, rng), p + "/ffn_w1");
        layer.ffn_b1 = parameter(Matrix::Zero(1, f), p + "/ffn_b1");
        layer.ffn_w2 = parameter(init_xavier(f, d, rng), p + "/ffn_w2");
        layer.ffn_b2 = parameter(Matrix::Zero(1, d), p + "/ffn_b2");
        m.encoder_layers.push_back(std::move(layer));
    }
    for (int i = 0; i < config.decoder_layers; ++i) {
        std::string p = "dec" + std::to_string(i);
        DecoderLayerParams layer;
        layer.ln1_g = ln_gamma(p + "/ln1_g", d);
        layer.ln1_b = ln_beta(p + "/ln1_b", d);
        layer.self_attn = make_attention(p + "/self", d, rng);
        layer.ln2_g = ln_gamma(p + "/ln2_g", d);
        layer.ln2_b = ln_beta(p + "/ln2_b", d);
        layer.cross_attn = make_attention(p + "/cross", d, rng);
        layer.ln3_g = ln_gamma(p + "/ln3_g", d);
        layer.ln3_b = ln_beta(p + "/ln3_b", d);
        layer.ffn_w1 = parameter(init_xavier(d, f, rng), p + "/ffn_w1");
        layer.ffn_b1 = parameter(Matrix::Zero(1, f), p + "/ffn_b1");
        layer.ffn_w2 = parameter(init_xavier(f, d, rng), p + "/ffn_w2");
        layer.ffn_b2 = parameter(Matrix::Zero(1, d), p + "/ffn_b2");
        m.decoder_layers.push_back(std::move(layer));
    }
    m.enc_ln_g = ln_gamma("enc_ln_g", d);
    m.enc_ln_b = ln_beta("enc_ln_b", d);
    m.dec_ln_g = ln_gamma("dec_ln_g", d);
    m.dec_ln_b = ln_beta("dec_ln_b", d);
    m.out_w = parameter(init_xavier(d, v, rng), "out_w");
    m.out_b = parameter(Matrix::Zero(1, v), "out_b");
    return m;
}

std::vector<Tensor> BackboneModel::parameters() const {
    std::vector<Tensor> out{embedding};
    for (const auto& l : encoder_layers) {
        out.insert(out.end(), {l.ln1_g, l.ln1_b});
        collect(l.attn, out);
        out.insert(out.end(), {l.ln2_g, l.ln2_b, l.ffn_w1, l.ffn_b1, l.ffn_w2, l.ffn_b2});
    }
    for (const auto& l : decoder_layers) {
        out.insert(out.end(), {l.ln1_g, l.ln1_b});
        collect(l.self_attn, out);
        out.insert(out.end(), {l.ln2_g, l.ln2_b});
        collect(l.cross_attn, out);
        out.insert(out.end(), {l.ln3_g, l.ln3_b, l.ffn_w1, l.ffn_b1, l.ffn_w2, l.ffn_b2});
    }
    out.insert(out.end(), {enc_ln_g, enc_ln_b, dec_ln_g, dec_ln_b, out_w, out_b});
    return out;
}

long BackboneModel::param_count() const {
    long n = 0;
    for (const auto& p : parameters()) n += p->val.size();
    return n;
}

void BackboneModel::set_frozen(bool frozen) {
    frozen_ = frozen;
    for (const auto& p : parameters()) p->requires_grad = !frozen;
}

std::uint64_t BackboneModel::checksum() const { return params_checksum(parameters()); }

Checkpoint BackboneModel::to_checkpoint(const Vocabulary& vocab) const {
    Checkpoint ckpt;
    ckpt.kind = "backbone";
    ckpt.config = config.to_json();
    ckpt.vocab = vocab.id_to_token;
    ckpt.vocab_hash = vocab.hash();
    for (const auto& p : parameters()) ckpt.add(p->name, p->val);
    return ckpt;
}

BackboneModel BackboneModel::from_checkpoint(const Checkpoint& ckpt) {
    BackboneConfig config = BackboneConfig::from_json(ckpt.config);
    BackboneModel m = build_backbone(config, 0);
    for (const auto& p : m.parameters()) p->val = ckpt.get(p->name);
    return m;
}

// ---------------------------------------------------------------------------
// Forward passes
// ---------------------------------------------------------------------------

namespace {

struct PaddedBatch {
    std::vector<int> flat_ids;  // batch * time
    Matrix mask;                // batch x time
    long batch = 0;
    long time = 0;
};

PaddedBatch pad_rows(const std::vector<std::vector<int>>& rows, int vocab_size, int max_len,
                     const char* what) {
    if (rows.empty()) throw ContractError("backbone/empty-batch", std::string(what) + ": empty batch");
    long batch = static_cast<long>(rows.size());
    long time = 0;
    for (const auto& r : rows) {
        if (r.empty()) throw ContractError("backbone/empty-row", std::string(what) + ": empty row");
        if (static_cast<int>(r.size()) > max_len) {
            throw ContractError("backbone/length",
                                std::string(what) + ": sequence length " +
                                    std::to_string(r.size()) + " exceeds max_len " +
                                    std::to_string(max_len));
        }
        time = std::max(time, static_cast<long>(r.size()));
    }
    PaddedBatch out;
    out.batch = batch;
    out.time = time;
    out.flat_ids.assign(static_cast<std::size_t>(batch * time), Vocabulary::kPad);
    out.mask = Matrix::Zero(batch, time);
    for (long b = 0; b < batch; ++b) {
        const auto& r = rows[static_cast<std::size_t>(b)];
        for (long t = 0; t < static_cast<long>(r.size()); ++t) {
            int id = r[static_cast<std::size_t>(t)];
            if (id < 0 || id >= vocab_size) {
                throw ContractError("backbone/vocab", std::string(what) + ": token id out of range");
            }
            out.flat_ids[static_cast<std::size_t>(b * time + t)] = id;
            out.mask(b, t) = (id == Vocabulary::kPad) ? 0.0 : 1.0;
        }
    }
    return out;
}

Tensor embed(const BackboneModel& m, const PaddedBatch& batch) {
    Tensor e = embedding(m.embedding, batch.flat_ids);
    e = scale(e, std::sqrt(static_cast<double>(m.config.hidden_dim)));
    Matrix pos(batch.batch * batch.time, m.config.hidden_dim);
    for (long b = 0; b < batch.batch; ++b) {
        pos.middleRows(b * batch.time, batch.time) = m.positional.topRows(batch.time);
    }
    return add(e, constant(std::move(pos)));
}

Tensor attention_block(const AttentionParams& p, const Tensor& x_q, const Tensor& x_kv, long batch,
                       long t_q, long t_kv, int heads, bool causal, const Matrix& key_mask) {
    Tensor q = linear(x_q, p.wq, p.bq);
    Tensor k = linear(x_kv, p.wk, p.bk);
    Tensor v = linear(x_kv, p.wv, p.bv);
    Tensor o = attention(q, k, v, batch, t_q, t_kv, heads, causal, key_mask);
    return linear(o, p.wo, p.bo);
}

Tensor ffn_block(const Tensor& x, const Tensor& w1, const Tensor& b1, const Tensor& w2,
                 const Tensor& b2) {
    return linear(relu(linear(x, w1, b1)), w2, b2);
}

}  // namespace

HiddenStates encode(const BackboneModel& model, const std::vector<std::vector<int>>& rows,
                    const LayerHook& hook) {
    PaddedBatch batch = pad_rows(rows, model.config.vocab_size, model.config.max_len, "encode");
    Tensor h = embed(model, batch);
    long b = batch.batch;
    Matrix mask = batch.mask;
    for (int li = 0; li < model.config.encoder_layers; ++li) {
        const auto& layer = model.encoder_layers[static_cast<std::size_t>(li)];
        Tensor a = layer_norm(h, layer.ln1_g, layer.ln1_b);
        h = add(h, attention_block(layer.attn, a, a, b, batch.time, batch.time,
                                   model.config.heads, false, mask));
        Tensor f = layer_norm(h, layer.ln2_g, layer.ln2_b);
        h = add(h, ffn_block(f, layer.ffn_w1, layer.ffn_b1, layer.ffn_w2, layer.ffn_b2));
        if (hook) {
            h = hook(li, h, b, mask);
            if (h->rows() != b * batch.time || mask.rows() != b) {
                throw ContractError("backbone/hook", "layer hook left inconsistent shapes");
            }
        }
    }
    h = layer_norm(h, model.enc_ln_g, model.enc_ln_b);
    check_finite(h->val, "encoder states");
    return HiddenStates{h, mask, b, batch.time};
}

Tensor decode(const BackboneModel& model, const HiddenStates& enc,
              const std::vector<std::vector<int>>& prefixes, const LayerHook& hook,
              long* out_time) {
    for (const auto& p : prefixes) {
        if (p.empty() || p.front() != Vocabulary::kBos) {
            throw ContractError("backbone/prefix", "decoder prefix must begin with <bos>");
        }
    }
    PaddedBatch batch = pad_rows(prefixes, model.config.vocab_size, model.config.max_len, "decode");
    if (batch.batch != enc.batch) {
        throw ContractError("backbone/batch", "decoder batch does not match encoder streams");
    }
    Tensor h = embed(model, batch);
    long b = batch.batch;
    Matrix mask = batch.mask;
    for (int li = 0; li < model.config.decoder_layers; ++li) {
        const auto& layer = model.decoder_layers[static_cast<std::size_t>(li)];
        Tensor a = layer_norm(h, layer.ln1_g, layer.ln1_b);
        h = add(h, attention_block(layer.self_attn, a, a, b, batch.time, batch.time,
                                   model.config.heads, true, mask));
        Tensor c = layer_norm(h, layer.ln2_g, layer.ln2_b);
        h = add(h, attention_block(layer.cross_attn, c, enc.states, b, batch.time, enc.time,
                                   model.config.heads, false, enc.mask));
        Tensor f = layer_norm(h, layer.ln3_g, layer.ln3_b);
        h = add(h, ffn_block(f, layer.ffn_w1, layer.ffn_b1, layer.ffn_w2, layer.ffn_b2));
        if (hook) {
            long b_before = b;
            h = hook(model.config.encoder_layers + li, h, b, mask);
            if (b != b_before) {
                throw ContractError("backbone/hook", "decoder hooks cannot change stream count");
            }
        }
    }
    h = layer_norm(h, model.dec_ln_g, model.dec_ln_b);
    Tensor logits = linear(h, model.out_w, model.out_b);
    if (out_time) *out_time = batch.time;
    return logits;
}

std::vector<GeneratedSequence> generate(const BackboneModel& model, const HiddenStates& enc,
                                        DecodeMode mode, int max_new_tokens, Rng& rng,
                                        const LayerHook& hook) {
    NoGradGuard no_grad;
    long batch = enc.batch;
    int steps = std::min(max_new_tokens, model.config.max_len - 1);
    if (steps < 1) throw ContractError("backbone/length", "generate: no room for new tokens");

    std::vector<std::vector<int>> prefixes(static_cast<std::size_t>(batch),
                                           std::vector<int>{Vocabulary::kBos});
    std::vector<GeneratedSequence> out(static_cast<std::size_t>(batch));
    std::vector<bool> done(static_cast<std::size_t>(batch), false);

    for (int step = 0; step < steps; ++step) {
        long time = 0;
        Tensor logits = decode(model, enc, prefixes, hook, &time);
        bool all_done = true;
        for (long b = 0; b < batch; ++b) {
            auto& seq = out[static_cast<std::size_t>(b)];
            auto& prefix = prefixes[static_cast<std::size_t>(b)];
            if (done[static_cast<std::size_t>(b)]) {
                prefix.push_back(Vocabulary::kPad);
                continue;
            }
            long row = b * time + static_cast<long>(prefix.size()) - 1;
            Eigen::VectorXd logp = log_softmax_vector(logits->val.row(row).transpose());
            int next;
            if (mode == DecodeMode::Greedy) {
                logp.maxCoeff(&next);
            } else {
                next = rng.categorical(logp.array().exp().matrix());
            }
            seq.step_logprobs.push_back(logp(next));
            if (next == Vocabulary::kEos) {
                seq.ended_with_eos = true;
                done[static_cast<std::size_t>(b)] = true;
            } else {
                seq.tokens.push_back(next);
            }
            prefix.push_back(next);
            if (!done[static_cast<std::size_t>(b)]) all_done = false;
        }
        if (all_done) break;
    }
    return out;
}

Tensor sequence_nll(const BackboneModel& model, const HiddenStates& enc,
                    const std::vector<std::vector<int>>& targets, bool mean_per_token,
                    const LayerHook& hook, double label_smoothing,
                    const std::vector<bool>* include_eos) {
    long batch = enc.batch;
    if (static_cast<long>(targets.size()) != batch) {
        throw ContractError("backbone/batch", "sequence_nll: target count mismatch");
    }
    if (include_eos && static_cast<long>(include_eos->size()) != batch) {
        throw ContractError("backbone/batch", "sequence_nll: include_eos mismatch");
    }
    auto with_eos = [&](long b) { return !include_eos || (*include_eos)[static_cast<std::size_t>(b)]; };
    std::vector<std::vector<int>> prefixes;
    prefixes.reserve(targets.size());
    for (const auto& t : targets) {
        std::vector<int> p{Vocabulary::kBos};
        p.insert(p.end(), t.begin(), t.end());
        prefixes.push_back(std::move(p));
    }
    long time = 0;
    Tensor logits = decode(model, enc, prefixes, hook, &time);

    // Position (b, t) predicts target[t]; the final real position predicts <eos>.
    std::vector<int> flat_targets(static_cast<std::size_t>(batch * time), Vocabulary::kPad);
    std::vector<bool> ignore(static_cast<std::size_t>(batch * time), true);
    for (long b = 0; b < batch; ++b) {
        const auto& t = targets[static_cast<std::size_t>(b)];
        long n_pos = static_cast<long>(t.size()) + (with_eos(b) ? 1 : 0);
        for (long i = 0; i < n_pos; ++i) {
            flat_targets[static_cast<std::size_t>(b * time + i)] =
                i < static_cast<long>(t.size()) ? t[static_cast<std::size_t>(i)]
                                                : Vocabulary::kEos;
            ignore[static_cast<std::size_t>(b * time + i)] = false;
        }
        if (n_pos == 0) {
            throw ContractError("backbone/empty-target", "sequence_nll: empty target row");
        }
    }
    Tensor nll = nll_rows(logits, flat_targets, label_smoothing, &ignore);

    // Fold the per-position values into one scalar per sequence.
    std::vector<Tensor> rows;
    rows.reserve(static_cast<std::size_t>(batch));
    for (long b = 0; b < batch; ++b) {
        long n_pos =
            static_cast<long>(targets[static_cast<std::size_t>(b)].size()) + (with_eos(b) ? 1 : 0);
        Tensor row = slice_rows(nll, b * time, n_pos);
        Matrix w = Matrix::Ones(n_pos, 1);
        if (mean_per_token) w /= static_cast<double>(n_pos);
        rows.push_back(weighted_sum(row, w));
    }
    return vconcat(rows);
}

// ---------------------------------------------------------------------------
// Pretraining
// ---------------------------------------------------------------------------

namespace {

std::vector<int> corrupt_tokens(const std::vector<int>& ids, const BackbonePretrainConfig& cfg,
                                int vocab_size, Rng& rng) {
    if (cfg.clean_fraction > 0.0 && rng.uniform() < cfg.clean_fraction) return ids;
    std::vector<int> out;
    out.reserve(ids.size());
    for (int id : ids) {
        double u = rng.uniform();
        if (u < cfg.drop_prob) continue;
        if (u < cfg.drop_prob + cfg.replace_prob) {
            out.push_back(rng.uniform_int(4, vocab_size - 1));  // skip reserved ids
        } else {
            out.push_back(id);
        }
    }
    if (out.empty()) out = ids;
    return out;
}

}  // namespace

PretrainStats pretrain_backbone(BackboneModel& model, const CorpusSplit& corpus,
                                const Vocabulary& vocab, const BackbonePretrainConfig& config,
                                std::uint64_t seed, std::ostream* log) {
    if (model.frozen()) throw ContractError("backbone/frozen", "cannot pretrain a frozen backbone");
    if (corpus.train.empty()) throw DataError("corpus/empty-split", "pretraining needs train data");

    std::vector<std::vector<int>> train_ids;
    train_ids.reserve(corpus.train.size());
    for (const auto& s : corpus.train) train_ids.push_back(vocab.encode(s.tokens));

    Rng rng = Rng(seed).derive("backbone-pretrain");
    AdamOptimizer opt(model.parameters(), config.lr, config.clip_norm);

    std::vector<std::size_t> order(train_ids.size());
    std::iota(order.begin(), order.end(), 0);

    double last_epoch_loss = 0.0;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        long seen = 0;
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(config.batch_size)) {
            std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
            std::vector<std::vector<int>> inputs, targets;
            for (std::size_t i = start; i < end; ++i) {
                const auto& ids = train_ids[order[i]];
                auto corrupted = corrupt_tokens(ids, config, vocab.size(), rng);
                corrupted.push_back(Vocabulary::kEos);
                inputs.push_back(std::move(corrupted));
                targets.push_back(ids);
            }
            HiddenStates enc = encode(model, inputs);
            Tensor nll = sequence_nll(model, enc, targets, /*mean_per_token=*/true, nullptr,
                                      config.label_smoothing);
            Tensor loss = weighted_sum(
                nll, Matrix::Constant(nll->rows(), 1, 1.0 / static_cast<double>(nll->rows())));
            opt.zero_grad();
            backward(loss);
            opt.step();
            epoch_loss += loss->scalar() * static_cast<double>(end - start);
            seen += static_cast<long>(end - start);
        }
        last_epoch_loss = epoch_loss / static_cast<double>(seen);
        if (log) {
            *log << "pretrain epoch " << epoch + 1 << "/" << config.epochs << " loss "
                 << last_epoch_loss << "\n";
        }
    }

    // Dev teacher-forced token accuracy on clean input.
    PretrainStats stats;
    stats.final_train_loss = last_epoch_loss;
    const auto& dev = corpus.dev.empty() ? corpus.train : corpus.dev;
    long correct = 0, total = 0;
    {
        NoGradGuard no_grad;
        for (std::size_t start = 0; start < dev.size(); start += 64) {
            std::size_t end = std::min(dev.size(), start + 64);
            std::vector<std::vector<int>> inputs, targets;
            for (std::size_t i = start; i < end; ++i) {
                auto ids = vocab.encode(dev[i].tokens);
                auto with_eos = ids;
                with_eos.push_back(Vocabulary::kEos);
                inputs.push_back(std::move(with_eos));
                targets.push_back(std::move(ids));
            }
            HiddenStates enc = encode(model, inputs);
            std::vector<std::vector<int>> prefixes;
            for (const auto& t : targets) {
                std::vector<int> p{Vocabulary::kBos};
                p.insert(p.end(), t.begin(), t.end());
                prefixes.push_back(std::move(p));
            }
            long time = 0;
            Tensor logits = decode(model, enc, prefixes, nullptr, &time);
            for (long b = 0; b < enc.batch; ++b) {
                const auto& t = targets[static_cast<std::size_t>(b)];
                for (long i = 0; i <= static_cast<long>(t.size()); ++i) {
                    int gold = i < static_cast<long>(t.size()) ? t[static_cast<std::size_t>(i)]
                                                               : Vocabulary::kEos;
                    int pred;
                    logits->val.row(b * time + i).maxCoeff(&pred);
                    correct += (pred == gold) ? 1 : 0;
                    ++total;
                }
            }
        }
    }
    stats.dev_token_accuracy = total > 0 ? static_cast<double>(correct) / static_cast<double>(total)
                                         : 0.0;
    return stats;
}

}  // namespace styleadapt
