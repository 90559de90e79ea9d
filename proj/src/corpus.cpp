#include "styleadapt/corpus.hpp"

#include "styleadapt/errors.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace styleadapt {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// AttributeSchema
// ---------------------------------------------------------------------------

void AttributeSchema::validate() const {
    std::set<std::string> names;
    for (const auto& attr : attributes) {
        if (attr.name.empty()) throw ConfigError("schema/attribute-name", "empty attribute name");
        if (!names.insert(attr.name).second) {
            throw ConfigError("schema/attribute-name", "duplicate attribute '" + attr.name + "'");
        }
        if (attr.values.size() < 2) {
            throw ConfigError("schema/value-count",
                              "attribute '" + attr.name + "' needs at least 2 values");
        }
        std::set<std::string> vals;
        for (const auto& v : attr.values) {
            if (v.empty() || !vals.insert(v).second) {
                throw ConfigError("schema/value-name",
                                  "empty or duplicate value in attribute '" + attr.name + "'");
            }
        }
    }
}

int AttributeSchema::attribute_index(const std::string& name) const {
    for (std::size_t i = 0; i < attributes.size(); ++i) {
        if (attributes[i].name == name) return static_cast<int>(i);
    }
    return -1;
}

const AttributeSchema::Attribute& AttributeSchema::attribute(const std::string& name) const {
    int i = attribute_index(name);
    if (i < 0) throw ConfigError("schema/unknown-attribute", "unknown attribute '" + name + "'");
    return attributes[static_cast<std::size_t>(i)];
}

bool AttributeSchema::has_value(const std::string& attr, const std::string& value) const {
    int i = attribute_index(attr);
    if (i < 0) return false;
    const auto& vals = attributes[static_cast<std::size_t>(i)].values;
    return std::find(vals.begin(), vals.end(), value) != vals.end();
}

std::string AttributeSchema::attribute_of_value(const std::string& value) const {
    std::string owner;
    for (const auto& attr : attributes) {
        if (std::find(attr.values.begin(), attr.values.end(), value) != attr.values.end()) {
            if (!owner.empty()) {
                throw ConfigError("schema/ambiguous-value",
                                  "value '" + value + "' belongs to both '" + owner + "' and '" +
                                      attr.name + "'");
            }
            owner = attr.name;
        }
    }
    if (owner.empty()) {
        throw ConfigError("schema/unknown-value", "value '" + value + "' not in schema");
    }
    return owner;
}

bool AttributeSchema::operator==(const AttributeSchema& other) const {
    if (attributes.size() != other.attributes.size()) return false;
    for (std::size_t i = 0; i < attributes.size(); ++i) {
        if (attributes[i].name != other.attributes[i].name ||
            attributes[i].values != other.attributes[i].values) {
            return false;
        }
    }
    return true;
}

AttributeSchema default_schema() {
    return AttributeSchema{{
        {"tense", {"future", "past", "present"}},
        {"voice", {"passive", "active"}},
    }};
}

AttributeSchema default_schema_with_adjectives() {
    AttributeSchema s = default_schema();
    s.attributes.push_back({"adjectives", {"kept", "removed"}});
    return s;
}

// ---------------------------------------------------------------------------
// Sentences and corpus
// ---------------------------------------------------------------------------

std::string LabeledSentence::text() const {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) out += ' ';
        out += tokens[i];
    }
    return out;
}

void CorpusSplit::validate() const {
    schema.validate();
    auto check = [&](const std::vector<LabeledSentence>& sents, const char* split) {
        for (const auto& s : sents) {
            if (s.tokens.empty()) {
                throw DataError("corpus/empty-sentence",
                                std::string(split) + " split contains an empty sentence");
            }
            for (const auto& attr : schema.attributes) {
                auto it = s.labels.find(attr.name);
                if (it == s.labels.end()) {
                    throw DataError("corpus/missing-label", "sentence '" + s.text() +
                                                                "' lacks label for '" + attr.name +
                                                                "'");
                }
                if (!schema.has_value(attr.name, it->second)) {
                    throw DataError("corpus/unknown-label",
                                    "label '" + it->second + "' not a value of '" + attr.name + "'");
                }
            }
            if (s.labels.size() != schema.attributes.size()) {
                throw DataError("corpus/extra-label",
                                "sentence '" + s.text() + "' carries a label outside the schema");
            }
        }
    };
    check(train, "train");
    check(dev, "dev");
    check(test, "test");
}

long CorpusSplit::max_sentence_tokens() const {
    long mx = 0;
    for (const auto* split : {&train, &dev, &test}) {
        for (const auto& s : *split) mx = std::max(mx, static_cast<long>(s.tokens.size()));
    }
    return mx;
}

// ---------------------------------------------------------------------------
// Vocabulary
// ---------------------------------------------------------------------------

int Vocabulary::id(const std::string& token) const {
    auto it = token_to_id.find(token);
    return it == token_to_id.end() ? kUnk : it->second;
}

std::vector<int> Vocabulary::encode(const std::vector<std::string>& tokens) const {
    std::vector<int> ids;
    ids.reserve(tokens.size());
    for (const auto& t : tokens) ids.push_back(id(t));
    return ids;
}

std::vector<std::string> Vocabulary::decode(const std::vector<int>& ids) const {
    std::vector<std::string> tokens;
    tokens.reserve(ids.size());
    for (int i : ids) {
        if (i < 0 || i >= size()) throw ContractError("vocab/id-range", "token id out of range");
        tokens.push_back(id_to_token[static_cast<std::size_t>(i)]);
    }
    return tokens;
}

std::uint64_t Vocabulary::hash() const {
    std::uint64_t h = 14695981039346656037ull;
    for (const auto& t : id_to_token) {
        h = fnv1a64(t.data(), t.size(), h);
        h = fnv1a64("\n", 1, h);
    }
    return h;
}

std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> tokens;
    std::string cur;
    for (char c : text) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!cur.empty()) {
                tokens.push_back(cur);
                cur.clear();
            }
        } else {
            cur += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        }
    }
    if (!cur.empty()) tokens.push_back(cur);
    return tokens;
}

Vocabulary build_vocabulary(const CorpusSplit& corpus, int min_count) {
    if (corpus.train.empty()) {
        throw DataError("corpus/empty-split", "build_vocabulary needs a non-empty train split");
    }
    std::map<std::string, long> counts;
    for (const auto& s : corpus.train) {
        for (const auto& t : s.tokens) ++counts[t];
    }
    Vocabulary v;
    v.id_to_token = {"<pad>", "<bos>", "<eos>", "<unk>"};
    for (const auto& [token, n] : counts) {
        if (n >= min_count) v.id_to_token.push_back(token);
    }
    for (std::size_t i = 0; i < v.id_to_token.size(); ++i) {
        v.token_to_id[v.id_to_token[i]] = static_cast<int>(i);
    }
    return v;
}

// ---------------------------------------------------------------------------
// Template grammar
// ---------------------------------------------------------------------------

TemplateBank TemplateBank::builtin() {
    auto t = [](std::string name, std::string subj, VerbForms verb, std::string obj) {
        SentenceTemplate s;
        s.name = std::move(name);
        s.subject = std::move(subj);
        s.verb = std::move(verb);
        s.object = std::move(obj);
        s.subject_adjectives = {"new", "old", "busy", "fine"};
        s.object_adjectives = {"new", "old", "long", "fine"};
        s.adverbs = {"today", "carefully", "twice", "promptly"};
        return s;
    };
    TemplateBank bank;
    bank.templates = {
        t("committee-review", "committee", {"review", "reviews", "reviewed", "reviewed"}, "report"),
        t("editor-write", "editor", {"write", "writes", "wrote", "written"}, "essay"),
        t("manager-approve", "manager", {"approve", "approves", "approved", "approved"}, "budget"),
        t("student-read", "student", {"read", "reads", "read", "read"}, "novel"),
        t("engineer-design", "engineer", {"design", "designs", "designed", "designed"}, "bridge"),
        t("teacher-explain", "teacher", {"explain", "explains", "explained", "explained"}, "lesson"),
        t("chef-prepare", "chef", {"prepare", "prepares", "prepared", "prepared"}, "meal"),
        t("artist-paint", "artist", {"paint", "paints", "painted", "painted"}, "mural"),
        t("clerk-file", "clerk", {"file", "files", "filed", "filed"}, "document"),
        t("director-sign", "director", {"sign", "signs", "signed", "signed"}, "contract"),
        t("farmer-plant", "farmer", {"plant", "plants", "planted", "planted"}, "orchard"),
        t("scientist-test", "scientist", {"test", "tests", "tested", "tested"}, "sample"),
        t("lawyer-draft", "lawyer", {"draft", "drafts", "drafted", "drafted"}, "agreement"),
        t("librarian-catalog", "librarian", {"catalog", "catalogs", "cataloged", "cataloged"},
          "archive"),
        t("mechanic-repair", "mechanic", {"repair", "repairs", "repaired", "repaired"}, "engine"),
        t("analyst-examine", "analyst", {"examine", "examines", "examined", "examined"}, "ledger"),
        t("tailor-mend", "tailor", {"mend", "mends", "mended", "mended"}, "jacket"),
        t("gardener-prune", "gardener", {"prune", "prunes", "pruned", "pruned"}, "hedge"),
        t("curator-restore", "curator", {"restore", "restores", "restored", "restored"},
          "painting"),
        t("auditor-inspect", "auditor", {"inspect", "inspects", "inspected", "inspected"},
          "warehouse"),
    };
    return bank;
}

TemplateBank TemplateBank::load_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("corpus/missing-file", "cannot open template bank '" + path + "'");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw DataError("corpus/bad-json", "template bank '" + path + "': " + e.what());
    }
    TemplateBank bank;
    for (const auto& jt : j.at("templates")) {
        SentenceTemplate t;
        t.name = jt.at("name").get<std::string>();
        t.subject = jt.at("subject").get<std::string>();
        t.object = jt.at("object").get<std::string>();
        const auto& v = jt.at("verb");
        t.verb = {v.value("base", ""), v.value("third", ""), v.value("past", ""),
                  v.value("participle", "")};
        t.subject_adjectives = jt.value("subject_adjectives", std::vector<std::string>{});
        t.object_adjectives = jt.value("object_adjectives", std::vector<std::string>{});
        t.adverbs = jt.value("adverbs", std::vector<std::string>{});
        bank.templates.push_back(std::move(t));
    }
    return bank;
}

std::vector<std::string> TemplateBank::word_list() const {
    std::set<std::string> words{"the", "is", "was", "will", "be", "by"};
    for (const auto& t : templates) {
        words.insert(t.subject);
        words.insert(t.object);
        for (const auto& w : {t.verb.base, t.verb.third, t.verb.past, t.verb.participle}) {
            if (!w.empty()) words.insert(w);
        }
        for (const auto& a : t.subject_adjectives) words.insert(a);
        for (const auto& a : t.object_adjectives) words.insert(a);
        for (const auto& a : t.adverbs) words.insert(a);
    }
    return {words.begin(), words.end()};
}

namespace {

std::string combo_key(const AttributeSchema& schema,
                      const std::map<std::string, std::string>& labels) {
    std::string key;
    for (const auto& attr : schema.attributes) {
        if (!key.empty()) key += "__";
        key += labels.at(attr.name);
    }
    return key;
}

void require_combination(const SentenceTemplate& t, const AttributeSchema& schema,
                         const std::map<std::string, std::string>& labels) {
    const std::string& tense = labels.at("tense");
    const std::string& voice = labels.at("voice");
    auto missing = [&](const std::string& what) {
        throw DataError("corpus/schema-coverage",
                        "template '" + t.name + "' cannot realize combination (" +
                            combo_key(schema, labels) + "): missing " + what);
    };
    if (voice == "active") {
        if (tense == "future" && t.verb.base.empty()) missing("verb base form");
        if (tense == "past" && t.verb.past.empty()) missing("verb past form");
        if (tense == "present" && t.verb.third.empty()) missing("verb third-person form");
    } else {
        if (t.verb.participle.empty()) missing("verb participle form");
    }
    auto adj_it = labels.find("adjectives");
    if (adj_it != labels.end() && adj_it->second == "kept") {
        if (t.subject_adjectives.empty()) missing("subject adjectives");
        if (t.object_adjectives.empty()) missing("object adjectives");
    }
}

}  // namespace

std::vector<std::string> realize_template(const SentenceTemplate& tmpl,
                                          const AttributeSchema& schema,
                                          const std::map<std::string, std::string>& labels,
                                          const TemplateVariant& variant) {
    require_combination(tmpl, schema, labels);
    const std::string& tense = labels.at("tense");
    const std::string& voice = labels.at("voice");

    bool adjectives_allowed = true;
    auto adj_it = labels.find("adjectives");
    if (adj_it != labels.end()) adjectives_allowed = (adj_it->second == "kept");

    auto noun_phrase = [&](const std::string& noun, const std::vector<std::string>& adjs,
                           int adj_idx) {
        std::vector<std::string> np{"the"};
        if (adjectives_allowed && adj_idx >= 0) {
            if (adj_idx >= static_cast<int>(adjs.size())) {
                throw ContractError("corpus/variant", "adjective index out of range");
            }
            np.push_back(adjs[static_cast<std::size_t>(adj_idx)]);
        }
        np.push_back(noun);
        return np;
    };

    int subj_adj = variant.subject_adj;
    int obj_adj = variant.object_adj;
    if (adj_it != labels.end() && adjectives_allowed) {
        // kept-variant sentences always realize both adjective slots
        if (subj_adj < 0) subj_adj = 0;
        if (obj_adj < 0) obj_adj = 0;
    }

    std::vector<std::string> out;
    if (voice == "active") {
        auto subj = noun_phrase(tmpl.subject, tmpl.subject_adjectives, subj_adj);
        auto obj = noun_phrase(tmpl.object, tmpl.object_adjectives, obj_adj);
        out.insert(out.end(), subj.begin(), subj.end());
        if (tense == "future") {
            out.push_back("will");
            out.push_back(tmpl.verb.base);
        } else if (tense == "past") {
            out.push_back(tmpl.verb.past);
        } else {
            out.push_back(tmpl.verb.third);
        }
        out.insert(out.end(), obj.begin(), obj.end());
    } else {
        auto subj = noun_phrase(tmpl.subject, tmpl.subject_adjectives, subj_adj);
        auto obj = noun_phrase(tmpl.object, tmpl.object_adjectives, obj_adj);
        out.insert(out.end(), obj.begin(), obj.end());
        if (tense == "future") {
            out.push_back("will");
            out.push_back("be");
        } else if (tense == "past") {
            out.push_back("was");
        } else {
            out.push_back("is");
        }
        out.push_back(tmpl.verb.participle);
        out.push_back("by");
        out.insert(out.end(), subj.begin(), subj.end());
    }
    if (variant.adverb >= 0) {
        if (variant.adverb >= static_cast<int>(tmpl.adverbs.size())) {
            throw ContractError("corpus/variant", "adverb index out of range");
        }
        out.push_back(tmpl.adverbs[static_cast<std::size_t>(variant.adverb)]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Corpus generation
// ---------------------------------------------------------------------------

namespace {

struct Candidate {
    int template_idx;
    TemplateVariant variant;
};

std::vector<std::map<std::string, std::string>> enumerate_combinations(
    const AttributeSchema& schema) {
    std::vector<std::map<std::string, std::string>> combos{{}};
    for (const auto& attr : schema.attributes) {
        std::vector<std::map<std::string, std::string>> next;
        for (const auto& base : combos) {
            for (const auto& v : attr.values) {
                auto c = base;
                c[attr.name] = v;
                next.push_back(std::move(c));
            }
        }
        combos = std::move(next);
    }
    return combos;
}

std::vector<TemplateVariant> enumerate_variants(const SentenceTemplate& t, bool force_adjectives,
                                                bool allow_adjectives) {
    std::vector<int> subj_opts, obj_opts, adv_opts;
    if (force_adjectives) {
        for (int i = 0; i < static_cast<int>(t.subject_adjectives.size()); ++i)
            subj_opts.push_back(i);
        for (int i = 0; i < static_cast<int>(t.object_adjectives.size()); ++i)
            obj_opts.push_back(i);
    } else {
        subj_opts.push_back(-1);
        obj_opts.push_back(-1);
        if (allow_adjectives) {
            for (int i = 0; i < static_cast<int>(t.subject_adjectives.size()); ++i)
                subj_opts.push_back(i);
            for (int i = 0; i < static_cast<int>(t.object_adjectives.size()); ++i)
                obj_opts.push_back(i);
        }
    }
    adv_opts.push_back(-1);
    for (int i = 0; i < static_cast<int>(t.adverbs.size()); ++i) adv_opts.push_back(i);
    std::vector<TemplateVariant> out;
    for (int sa : subj_opts) {
        for (int oa : obj_opts) {
            for (int av : adv_opts) out.push_back({sa, oa, av});
        }
    }
    return out;
}

// Round-robin over templates so every template contributes to every
// combination whenever the quota allows (count >= template count implies
// full template coverage, which in turn keeps the vocabulary complete).
std::vector<Candidate> sample_candidates(const TemplateBank& bank, bool force_adjectives,
                                         bool allow_adjectives, long quota, Rng& rng) {
    std::vector<std::vector<TemplateVariant>> per_template;
    long capacity = 0;
    for (const auto& t : bank.templates) {
        auto variants = enumerate_variants(t, force_adjectives, allow_adjectives);
        rng.shuffle(variants);
        capacity += static_cast<long>(variants.size());
        per_template.push_back(std::move(variants));
    }
    if (quota > capacity) return {};
    std::vector<Candidate> out;
    std::vector<std::size_t> cursor(per_template.size(), 0);
    while (static_cast<long>(out.size()) < quota) {
        bool progressed = false;
        for (std::size_t ti = 0; ti < per_template.size(); ++ti) {
            if (static_cast<long>(out.size()) == quota) break;
            if (cursor[ti] < per_template[ti].size()) {
                out.push_back({static_cast<int>(ti), per_template[ti][cursor[ti]++]});
                progressed = true;
            }
        }
        if (!progressed) break;
    }
    return out;
}

}  // namespace

CorpusSplit generate_synthetic_corpus(const AttributeSchema& schema, const TemplateBank& bank,
                                      long count, std::uint64_t seed) {
    schema.validate();
    if (schema.attribute_index("tense") < 0 || schema.attribute_index("voice") < 0) {
        throw ConfigError("corpus/schema", "grammar requires tense and voice attributes");
    }
    for (const auto& attr : schema.attributes) {
        if (attr.name != "tense" && attr.name != "voice" && attr.name != "adjectives") {
            throw ConfigError("corpus/schema",
                              "grammar cannot realize attribute '" + attr.name + "'");
        }
    }
    if (bank.templates.empty()) throw ConfigError("corpus/templates", "empty template bank");
    if (count < static_cast<long>(bank.templates.size())) {
        throw ConfigError("corpus/count", "count must be >= number of templates");
    }
    bool has_adj_attr = schema.attribute_index("adjectives") >= 0;

    auto combos = enumerate_combinations(schema);
    long n_combos = static_cast<long>(combos.size());

    // Coverage check up front so a defective bank fails before generation.
    for (const auto& t : bank.templates) {
        for (const auto& combo : combos) require_combination(t, schema, combo);
    }

    Rng master(seed);
    CorpusSplit corpus;
    corpus.schema = schema;

    long base_quota = count / n_combos;
    long remainder = count % n_combos;

    for (long ci = 0; ci < n_combos; ++ci) {
        const auto& combo = combos[static_cast<std::size_t>(ci)];
        long quota = base_quota + (ci < remainder ? 1 : 0);
        if (quota == 0) continue;

        bool kept = has_adj_attr && combo.at("adjectives") == "kept";
        Rng rng = master.derive("combo/" + combo_key(schema, combo));
        auto candidates = sample_candidates(bank, /*force_adjectives=*/kept,
                                            /*allow_adjectives=*/!has_adj_attr, quota, rng);
        if (candidates.empty() && quota > 0) {
            throw ConfigError("corpus/capacity",
                              "combination " + combo_key(schema, combo) +
                                  " cannot realize " + std::to_string(quota) +
                                  " distinct sentences");
        }

        std::vector<LabeledSentence> sentences;
        std::set<std::string> seen;
        for (const auto& cand : candidates) {
            LabeledSentence s;
            s.tokens = realize_template(bank.templates[static_cast<std::size_t>(cand.template_idx)],
                                        schema, combo, cand.variant);
            s.labels = combo;
            if (seen.insert(s.text()).second) sentences.push_back(std::move(s));
        }
        if (static_cast<long>(sentences.size()) < quota) {
            throw ConfigError("corpus/capacity", "combination " + combo_key(schema, combo) +
                                                     " cannot realize enough distinct sentences");
        }

        // Stratified 90/5/5 split within each combination.
        long n = quota;
        long n_dev = n * 5 / 100;
        long n_test = n * 5 / 100;
        long n_train = n - n_dev - n_test;
        for (long i = 0; i < n; ++i) {
            if (i < n_train) {
                corpus.train.push_back(sentences[static_cast<std::size_t>(i)]);
            } else if (i < n_train + n_dev) {
                corpus.dev.push_back(sentences[static_cast<std::size_t>(i)]);
            } else {
                corpus.test.push_back(sentences[static_cast<std::size_t>(i)]);
            }
        }
    }

    Rng shuffle_rng = master.derive("shuffle");
    shuffle_rng.shuffle(corpus.train);
    shuffle_rng.shuffle(corpus.dev);
    shuffle_rng.shuffle(corpus.test);
    corpus.validate();
    return corpus;
}

// ---------------------------------------------------------------------------
// Corpus I/O
// ---------------------------------------------------------------------------

CorpusFormat corpus_format_from_string(const std::string& s) {
    if (s == "jsonl") return CorpusFormat::Jsonl;
    if (s == "tsv" || s == "tsv-paired-directories") return CorpusFormat::TsvPairedDirs;
    throw ConfigError("corpus/format", "unknown corpus format '" + s + "'");
}

namespace {

constexpr const char* kSplitNames[] = {"train", "dev", "test"};

ordered_json schema_to_json(const AttributeSchema& schema) {
    ordered_json j;
    j["attributes"] = ordered_json::array();
    for (const auto& attr : schema.attributes) {
        ordered_json ja;
        ja["name"] = attr.name;
        ja["values"] = attr.values;
        j["attributes"].push_back(ja);
    }
    return j;
}

AttributeSchema schema_from_json(const json& j) {
    AttributeSchema schema;
    for (const auto& ja : j.at("attributes")) {
        AttributeSchema::Attribute attr;
        attr.name = ja.at("name").get<std::string>();
        attr.values = ja.at("values").get<std::vector<std::string>>();
        schema.attributes.push_back(std::move(attr));
    }
    schema.validate();
    return schema;
}

void write_schema(const AttributeSchema& schema, const fs::path& dir) {
    std::ofstream out(dir / "schema.json");
    out << schema_to_json(schema).dump(2) << "\n";
}

AttributeSchema read_schema(const fs::path& dir) {
    std::ifstream in(dir / "schema.json");
    if (!in) {
        throw DataError("corpus/missing-file",
                        "missing schema.json in corpus directory '" + dir.string() + "'");
    }
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw DataError("corpus/bad-json", std::string("schema.json: ") + e.what());
    }
    return schema_from_json(j);
}

void save_jsonl_split(const std::vector<LabeledSentence>& sents, const AttributeSchema& schema,
                      const fs::path& path) {
    std::ofstream out(path);
    for (const auto& s : sents) {
        ordered_json j;
        j["text"] = s.text();
        ordered_json labels;
        for (const auto& attr : schema.attributes) labels[attr.name] = s.labels.at(attr.name);
        j["labels"] = labels;
        out << j.dump() << "\n";
    }
}

std::vector<LabeledSentence> load_jsonl_split(const AttributeSchema& schema, const fs::path& path) {
    std::vector<LabeledSentence> out;
    std::ifstream in(path);
    if (!in) return out;
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw DataError("corpus/bad-json", path.string() + ":" + std::to_string(line_no) +
                                                   ": " + e.what());
        }
        LabeledSentence s;
        s.tokens = tokenize(j.at("text").get<std::string>());
        if (s.tokens.empty()) {
            throw DataError("corpus/empty-sentence",
                            path.string() + ":" + std::to_string(line_no) + ": empty text");
        }
        for (const auto& [attr, value] : j.at("labels").items()) {
            if (schema.attribute_index(attr) < 0) {
                throw DataError("corpus/unknown-label",
                                path.string() + ":" + std::to_string(line_no) +
                                    ": unknown attribute '" + attr + "'");
            }
            std::string v = value.get<std::string>();
            if (!schema.has_value(attr, v)) {
                throw DataError("corpus/unknown-label",
                                path.string() + ":" + std::to_string(line_no) + ": value '" + v +
                                    "' not in attribute '" + attr + "'");
            }
            s.labels[attr] = v;
        }
        for (const auto& attr : schema.attributes) {
            if (!s.labels.count(attr.name)) {
                throw DataError("corpus/missing-label",
                                path.string() + ":" + std::to_string(line_no) +
                                    ": missing label '" + attr.name + "'");
            }
        }
        out.push_back(std::move(s));
    }
    return out;
}

std::map<std::string, std::string> labels_from_combo_key(const AttributeSchema& schema,
                                                         const std::string& stem,
                                                         const std::string& file) {
    std::vector<std::string> parts;
    std::string cur;
    for (std::size_t i = 0; i < stem.size(); ++i) {
        if (i + 1 < stem.size() && stem[i] == '_' && stem[i + 1] == '_') {
            parts.push_back(cur);
            cur.clear();
            ++i;
        } else {
            cur += stem[i];
        }
    }
    parts.push_back(cur);
    if (parts.size() != schema.attributes.size()) {
        throw DataError("corpus/unknown-label",
                        "file '" + file + "' does not name one value per schema attribute");
    }
    std::map<std::string, std::string> labels;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        const auto& attr = schema.attributes[i];
        if (!schema.has_value(attr.name, parts[i])) {
            throw DataError("corpus/unknown-label", "file '" + file + "': value '" + parts[i] +
                                                        "' not in attribute '" + attr.name + "'");
        }
        labels[attr.name] = parts[i];
    }
    return labels;
}

void save_tsv_split(const std::vector<LabeledSentence>& sents, const AttributeSchema& schema,
                    const fs::path& dir) {
    fs::create_directories(dir);
    std::map<std::string, std::vector<const LabeledSentence*>> by_combo;
    for (const auto& s : sents) by_combo[combo_key(schema, s.labels)].push_back(&s);
    for (const auto& [key, group] : by_combo) {
        std::ofstream out(dir / (key + ".tsv"));
        for (const auto* s : group) out << s->text() << "\n";
    }
}

std::vector<LabeledSentence> load_tsv_split(const AttributeSchema& schema, const fs::path& dir) {
    std::vector<LabeledSentence> out;
    if (!fs::exists(dir)) return out;
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.path().extension() == ".tsv") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& file : files) {
        auto labels = labels_from_combo_key(schema, file.stem().string(), file.string());
        std::ifstream in(file);
        std::string line;
        long line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            auto tokens = tokenize(line);
            if (tokens.empty()) {
                throw DataError("corpus/empty-sentence",
                                file.string() + ":" + std::to_string(line_no) + ": empty line");
            }
            out.push_back({std::move(tokens), labels});
        }
    }
    return out;
}

}  // namespace

void save_corpus(const CorpusSplit& corpus, const std::string& dir, CorpusFormat format) {
    fs::create_directories(dir);
    write_schema(corpus.schema, dir);
    const std::vector<LabeledSentence>* splits[] = {&corpus.train, &corpus.dev, &corpus.test};
    for (int i = 0; i < 3; ++i) {
        if (format == CorpusFormat::Jsonl) {
            save_jsonl_split(*splits[i], corpus.schema,
                             fs::path(dir) / (std::string(kSplitNames[i]) + ".jsonl"));
        } else {
            save_tsv_split(*splits[i], corpus.schema, fs::path(dir) / kSplitNames[i]);
        }
    }
}

CorpusSplit load_corpus(const std::string& dir, CorpusFormat format) {
    CorpusSplit corpus;
    corpus.schema = read_schema(dir);
    std::vector<LabeledSentence>* splits[] = {&corpus.train, &corpus.dev, &corpus.test};
    for (int i = 0; i < 3; ++i) {
        if (format == CorpusFormat::Jsonl) {
            *splits[i] = load_jsonl_split(corpus.schema,
                                          fs::path(dir) / (std::string(kSplitNames[i]) + ".jsonl"));
        } else {
            *splits[i] = load_tsv_split(corpus.schema, fs::path(dir) / kSplitNames[i]);
        }
    }
    if (corpus.train.empty()) {
        throw DataError("corpus/empty-split", "train split in '" + dir + "' is empty");
    }
    corpus.validate();
    return corpus;
}

}  // namespace styleadapt
