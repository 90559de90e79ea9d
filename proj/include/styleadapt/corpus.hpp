#pragma once

#include "styleadapt/tensor.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

namespace styleadapt {

// ---------------------------------------------------------------------------
// Attribute schema: ordered attributes, each with an ordered value set. The
// order is load-bearing: it fixes stream ordering in every composition plan
// and the combination order in generated corpora.
// ---------------------------------------------------------------------------
struct AttributeSchema {
    struct Attribute {
        std::string name;
        std::vector<std::string> values;
    };
    std::vector<Attribute> attributes;

    void validate() const;
    int attribute_index(const std::string& name) const;  // -1 when absent
    const Attribute& attribute(const std::string& name) const;
    bool has_value(const std::string& attr, const std::string& value) const;

    // Resolves a bare value name to its attribute. Throws on unknown or
    // ambiguous names (plan strings reference values without qualification).
    std::string attribute_of_value(const std::string& value) const;

    bool operator==(const AttributeSchema& other) const;
};

// The tense x voice schema realized by the built-in grammar.
AttributeSchema default_schema();
// Same plus the optional adjective-presence attribute.
AttributeSchema default_schema_with_adjectives();

struct LabeledSentence {
    std::vector<std::string> tokens;
    std::map<std::string, std::string> labels;  // attribute -> value

    std::string text() const;
    bool operator==(const LabeledSentence& other) const = default;
};

struct CorpusSplit {
    AttributeSchema schema;
    std::vector<LabeledSentence> train, dev, test;

    // Checks the per-sentence label invariants against the schema.
    void validate() const;
    long max_sentence_tokens() const;
};

// ---------------------------------------------------------------------------
// Vocabulary: dense token ids with the four reserved entries first.
// ---------------------------------------------------------------------------
struct Vocabulary {
    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kEos = 2;
    static constexpr int kUnk = 3;

    std::vector<std::string> id_to_token;
    std::unordered_map<std::string, int> token_to_id;

    int size() const { return static_cast<int>(id_to_token.size()); }
    bool contains(const std::string& token) const { return token_to_id.count(token) > 0; }
    int id(const std::string& token) const;  // kUnk fallback
    std::vector<int> encode(const std::vector<std::string>& tokens) const;
    std::vector<std::string> decode(const std::vector<int>& ids) const;
    std::uint64_t hash() const;
};

// ---------------------------------------------------------------------------
// Template grammar: each template is a transitive clause that every
// (tense, voice) combination can realize via the verb-form table.
// ---------------------------------------------------------------------------
struct VerbForms {
    std::string base;        // review
    std::string third;       // reviews
    std::string past;        // reviewed
    std::string participle;  // reviewed
};

struct SentenceTemplate {
    std::string name;
    std::string subject;  // singular noun, "the" is prepended
    VerbForms verb;
    std::string object;
    std::vector<std::string> subject_adjectives;
    std::vector<std::string> object_adjectives;
    std::vector<std::string> adverbs;
};

struct TemplateBank {
    std::vector<SentenceTemplate> templates;

    static TemplateBank builtin();
    static TemplateBank load_json(const std::string& path);

    // Every surface form the bank can emit, sorted and deduplicated.
    std::vector<std::string> word_list() const;
};

// One surface variant of a template: optional adjective/adverb slot choices
// (-1 means the slot is empty).
struct TemplateVariant {
    int subject_adj = -1;
    int object_adj = -1;
    int adverb = -1;
};

// Deterministic expansion of one template under one label assignment.
// `labels` must assign tense and voice; the optional "adjectives" attribute
// selects whether the adjective slots are realized.
std::vector<std::string> realize_template(const SentenceTemplate& tmpl,
                                          const AttributeSchema& schema,
                                          const std::map<std::string, std::string>& labels,
                                          const TemplateVariant& variant);

// Grammar-backed corpus generation: `count` sentences, label combinations
// within +-1 of uniform, distinct surface strings, stratified 90/5/5 split,
// fully deterministic in `seed`.
CorpusSplit generate_synthetic_corpus(const AttributeSchema& schema, const TemplateBank& bank,
                                      long count, std::uint64_t seed);

enum class CorpusFormat { Jsonl, TsvPairedDirs };
CorpusFormat corpus_format_from_string(const std::string& s);

void save_corpus(const CorpusSplit& corpus, const std::string& dir, CorpusFormat format);
CorpusSplit load_corpus(const std::string& dir, CorpusFormat format);

Vocabulary build_vocabulary(const CorpusSplit& corpus, int min_count);

// Lowercase whitespace tokenization (the project-wide tokenizer).
std::vector<std::string> tokenize(const std::string& text);

}  // namespace styleadapt
