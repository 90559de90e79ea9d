#include "doctest.h"

#include "styleadapt/composition.hpp"
#include "styleadapt/errors.hpp"

#include <set>

using namespace styleadapt;

namespace {

struct Fixture {
    AttributeSchema schema = default_schema();
    BackboneConfig cfg;
    BackboneModel backbone;
    AdapterConfig acfg;

    Fixture() {
        cfg.encoder_layers = 2;
        cfg.decoder_layers = 2;
        cfg.hidden_dim = 16;
        cfg.heads = 4;
        cfg.ffn_dim = 24;
        cfg.max_len = 12;
        cfg.vocab_size = 13;
        backbone = build_backbone(cfg, 77);
        backbone.set_frozen(true);
        acfg.bottleneck_dim = 4;
        acfg.hidden_dim = 16;
        acfg.num_layers = 4;
    }

    std::vector<AdapterBank> banks(bool random_up = false, std::uint64_t seed = 100) const {
        AdapterConfig c = acfg;
        c.random_up_init = random_up;
        std::vector<AdapterBank> out;
        int i = 0;
        for (const auto& v : {"future", "past", "present", "passive", "active"}) {
            out.push_back(build_adapter_bank(c, v, seed + static_cast<std::uint64_t>(i++)));
        }
        return out;
    }

    CompositionPlan parallel_plan() const {
        return CompositionPlan::parse("Parallel(future,past,present,passive,active)");
    }
    CompositionPlan stack_plan() const {
        return CompositionPlan::parse("Stack(Parallel(future,past,present),Parallel(passive,active))");
    }
};

}  // namespace

TEST_CASE("plan parsing, printing, and errors") {
    CompositionPlan p = CompositionPlan::parse(" Parallel( Future, past ,present,passive,active ) ");
    CHECK(p.mode == CompositionPlan::Mode::Parallel);
    CHECK(p.parallel_values ==
          std::vector<std::string>{"future", "past", "present", "passive", "active"});
    CHECK(p.to_string() == "Parallel(future,past,present,passive,active)");

    CompositionPlan s =
        CompositionPlan::parse("Stack(Parallel(future,past,present),Parallel(passive,active))");
    CHECK(s.mode == CompositionPlan::Mode::Stack);
    REQUIRE(s.stack_groups.size() == 2);
    CHECK(s.to_string() == "Stack(Parallel(future,past,present),Parallel(passive,active))");

    for (const char* bad : {"Parallel(future", "Serial(a,b)", "Stack(past,active)",
                            "Parallel(a,,b)", "Parallel(a) tail"}) {
        INFO(bad);
        try {
            CompositionPlan::parse(bad);
            FAIL_CHECK("expected parse error");
        } catch (const ConfigError& e) {
            CHECK(std::string(e.code()) == "plan/parse");
            CHECK(std::string(e.what()).find("position") != std::string::npos);
        }
    }
}

TEST_CASE("plan validation against the schema") {
    AttributeSchema schema = default_schema();
    CHECK_NOTHROW(CompositionPlan::parse("Parallel(future,past)").validate(schema));
    CHECK_THROWS_AS(CompositionPlan::parse("Parallel(future,future)").validate(schema),
                    ConfigError);
    CHECK_THROWS_AS(CompositionPlan::parse("Parallel(sideways)").validate(schema), ConfigError);
    // Stack groups must cover an attribute's full value set, once each.
    CHECK_NOTHROW(
        CompositionPlan::parse("Stack(Parallel(future,past,present),Parallel(passive,active))")
            .validate(schema));
    CHECK_THROWS_AS(
        CompositionPlan::parse("Stack(Parallel(future,past),Parallel(passive,active))")
            .validate(schema),
        ConfigError);
    CHECK_THROWS_AS(CompositionPlan::parse("Stack(Parallel(future,past,passive))").validate(schema),
                    ConfigError);
    CHECK_THROWS_AS(
        CompositionPlan::parse(
            "Stack(Parallel(future,past,present),Parallel(future,past,present))")
            .validate(schema),
        ConfigError);
}

TEST_CASE("directive parsing and validation") {
    AttributeSchema schema = default_schema();
    TransferDirective d = TransferDirective::parse("tense=future, voice=passive", schema);
    CHECK(d.targets.at("tense") == "future");
    CHECK(d.targets.at("voice") == "passive");
    CHECK_THROWS_AS((void)TransferDirective::parse("tense=blue", schema), ConfigError);
    CHECK_THROWS_AS((void)TransferDirective::parse("mood=subjunctive", schema), ConfigError);
    CHECK_THROWS_AS((void)TransferDirective::parse("tense", schema), ConfigError);
    CHECK_THROWS_AS((void)TransferDirective::parse("tense=past,tense=future", schema), ConfigError);
}

TEST_CASE("replication ordering: stream-major rows at layer 0") {
    Fixture f;
    auto banks = f.banks();
    // Tag each bank's layer-0 up-bias so its streams carry a distinct shift.
    for (std::size_t k = 0; k < banks.size(); ++k) {
        banks[k].layers[0].b_up->val.setConstant(static_cast<double>(k + 1));
    }
    std::vector<StreamSpec> streams;
    for (std::size_t k = 0; k < banks.size(); ++k) {
        StreamSpec s;
        s.bank_chain = {static_cast<int>(k)};
        streams.push_back(s);
    }
    long b = 2, t = 3, d = 16;
    Rng rng(3);
    Matrix base = init_normal(b * t, d, 1.0, rng);
    StreamState input;
    input.states = constant(base);
    input.mask = Matrix::Ones(b, t);
    input.streams = 1;
    input.batch = b;
    input.time = t;

    StreamState out = route_layer(streams, banks, 0, input);
    CHECK(out.streams == 5);
    CHECK(out.states->rows() == 5 * b * t);
    CHECK(out.mask.rows() == 5 * b);
    for (long k = 0; k < 5; ++k) {
        // Stream k holds both inputs in order, shifted by its bank's bias.
        Matrix expected = base.array() + static_cast<double>(k + 1);
        CHECK((out.states->val.middleRows(k * b * t, b * t) - expected).norm() == 0.0);
    }
}

TEST_CASE("parallel_forward distributes streams to matching banks after layer 0") {
    Fixture f;
    auto banks = f.banks();
    for (std::size_t k = 0; k < banks.size(); ++k) {
        banks[k].layers[2].b_up->val.setConstant(10.0 * static_cast<double>(k + 1));
    }
    long b = 1, t = 2, d = 16;
    Matrix base = Matrix::Zero(5 * b * t, d);
    StreamState input;
    input.states = constant(base);
    input.mask = Matrix::Ones(5 * b, t);
    input.streams = 5;
    input.batch = b;
    input.time = t;
    StreamState out = parallel_forward(2, input, banks);
    for (long k = 0; k < 5; ++k) {
        CHECK(out.states->val(k * t, 0) == doctest::Approx(10.0 * (k + 1)).epsilon(1e-12));
    }
    // Stream/bank count mismatch is a routing error.
    StreamState bad = input;
    bad.streams = 4;
    bad.states = constant(Matrix::Zero(4 * b * t, d));
    bad.mask = Matrix::Ones(4 * b, t);
    CHECK_THROWS_AS((void)parallel_forward(2, bad, banks), ContractError);
}

TEST_CASE("inject_adapters wiring checks") {
    Fixture f;
    auto banks = f.banks();
    CHECK_NOTHROW(inject_adapters(f.backbone, banks, f.parallel_plan(), f.schema));

    auto short_banks = f.banks();
    short_banks[1].layers.pop_back();
    CHECK_THROWS_AS(inject_adapters(f.backbone, short_banks, f.parallel_plan(), f.schema),
                    ContractError);

    auto missing = f.banks();
    missing.erase(missing.begin());  // drop "future"
    CHECK_THROWS_AS(inject_adapters(f.backbone, missing, f.parallel_plan(), f.schema),
                    ContractError);

    AdapterConfig wrong = f.acfg;
    wrong.hidden_dim = 8;
    auto bad_dim = f.banks();
    bad_dim[0] = build_adapter_bank(wrong, "future", 1);
    CHECK_THROWS_AS(inject_adapters(f.backbone, bad_dim, f.parallel_plan(), f.schema),
                    ContractError);
}

TEST_CASE("trainable parameter report equals the closed form") {
    Fixture f;
    AdaptedModel model = inject_adapters(f.backbone, f.banks(), f.parallel_plan(), f.schema);
    CHECK(model.trainable_param_count() == 5 * count_adapter_params(f.acfg));
}

TEST_CASE("zero-up banks and the empty plan reproduce the bare backbone") {
    Fixture f;
    std::vector<std::vector<int>> rows{{4, 5, 6, 2}, {7, 8, 2}};
    HiddenStates bare = encode(f.backbone, rows);

    AdaptedModel model = inject_adapters(f.backbone, f.banks(), f.parallel_plan(), f.schema);
    auto streams = model.parallel_streams();
    HiddenStates adapted = model.encode_streams(rows, streams);
    CHECK(adapted.batch == 10);
    for (long k = 0; k < 5; ++k) {
        CHECK((adapted.states->val.middleRows(k * bare.states->rows(), bare.states->rows()) -
               bare.states->val)
                  .norm() == 0.0);
    }

    AdaptedModel empty = inject_adapters(f.backbone, {}, CompositionPlan::parse("Parallel()"),
                                         f.schema);
    auto empty_streams = empty.parallel_streams();
    REQUIRE(empty_streams.size() == 1);
    HiddenStates pass = empty.encode_streams(rows, empty_streams);
    CHECK((pass.states->val - bare.states->val).norm() == 0.0);

    // Randomly initialized banks whose up-projections are zeroed afterwards
    // also collapse to the backbone.
    auto banks = f.banks(/*random_up=*/true);
    for (auto& bank : banks) {
        for (auto& layer : bank.layers) {
            layer.w_up->val.setZero();
            layer.b_up->val.setZero();
        }
    }
    AdaptedModel zeroed = inject_adapters(f.backbone, std::move(banks), f.parallel_plan(), f.schema);
    HiddenStates z = zeroed.encode_streams(rows, zeroed.parallel_streams());
    for (long k = 0; k < 5; ++k) {
        CHECK((z.states->val.middleRows(k * bare.states->rows(), bare.states->rows()) -
               bare.states->val)
                  .norm() == 0.0);
    }
}

TEST_CASE("stream isolation: perturbing one bank leaves other streams bit-identical") {
    Fixture f;
    std::vector<std::vector<int>> rows{{4, 5, 6, 2}, {7, 8, 2}};
    Rng rng(5);

    for (int k_count = 2; k_count <= 5; ++k_count) {
        auto all = f.banks(/*random_up=*/true);
        std::vector<AdapterBank> banks(all.begin(), all.begin() + k_count);
        std::vector<std::string> values;
        for (const auto& b : banks) values.push_back(b.value);
        CompositionPlan plan;
        plan.mode = CompositionPlan::Mode::Parallel;
        plan.parallel_values = values;

        AdaptedModel model = inject_adapters(f.backbone, banks, plan, f.schema);
        auto streams = model.parallel_streams();
        HiddenStates before = model.encode_streams(rows, streams);

        int victim = rng.uniform_int(0, k_count - 1);
        banks[static_cast<std::size_t>(victim)].layers[1].w_down->val(0, 0) += 0.5;
        banks[static_cast<std::size_t>(victim)].layers[3].w_up->val(1, 2) -= 0.25;
        AdaptedModel perturbed = inject_adapters(f.backbone, banks, plan, f.schema);
        HiddenStates after = perturbed.encode_streams(rows, perturbed.parallel_streams());

        long rows_per_stream = before.states->rows() / k_count;
        for (int k = 0; k < k_count; ++k) {
            Matrix diff = after.states->val.middleRows(k * rows_per_stream, rows_per_stream) -
                          before.states->val.middleRows(k * rows_per_stream, rows_per_stream);
            if (k == victim) {
                CHECK(diff.norm() > 0.0);
            } else {
                CHECK(diff.norm() == 0.0);  // bit-identical
            }
        }
    }
}

TEST_CASE("stack streams: targeted path, all combinations, and consistency") {
    Fixture f;
    AdaptedModel model = inject_adapters(f.backbone, f.banks(/*random_up=*/true), f.stack_plan(),
                                         f.schema);

    TransferDirective d;
    d.targets = {{"tense", "future"}, {"voice", "passive"}};
    auto targeted = model.stack_streams(d);
    REQUIRE(targeted.size() == 1);
    CHECK(targeted[0].assignment.at("tense") == "future");
    CHECK(targeted[0].assignment.at("voice") == "passive");
    REQUIRE(targeted[0].bank_chain.size() == 2);
    CHECK(model.banks()[static_cast<std::size_t>(targeted[0].bank_chain[0])].value == "future");
    CHECK(model.banks()[static_cast<std::size_t>(targeted[0].bank_chain[1])].value == "passive");

    auto all = model.stack_all_combinations();
    REQUIRE(all.size() == 6);  // 3 x 2, lexicographic by group order
    CHECK(all[0].assignment.at("tense") == "future");
    CHECK(all[0].assignment.at("voice") == "passive");
    CHECK(all[1].assignment.at("voice") == "active");
    CHECK(all[2].assignment.at("tense") == "past");
    CHECK(all[5].assignment.at("tense") == "present");
    CHECK(all[5].assignment.at("voice") == "active");

    // The targeted stream equals the matching row of all-combinations mode.
    std::vector<std::vector<int>> rows{{4, 5, 6, 2}};
    HiddenStates t_enc = model.encode_streams(rows, targeted);
    HiddenStates a_enc = model.encode_streams(rows, all);
    long seq_rows = t_enc.states->rows();
    CHECK((t_enc.states->val - a_enc.states->val.topRows(seq_rows)).lpNorm<Eigen::Infinity>() <
          1e-12);

    TransferDirective bad;
    bad.targets = {{"tense", "future"}};
    CHECK_THROWS_AS((void)model.stack_streams(bad), ConfigError);  // voice unassigned

    AttributeSchema wider = f.schema;
    wider.attributes.push_back({"mood", {"plain", "fancy"}});
    TransferDirective extra;
    extra.targets = {{"tense", "future"}, {"voice", "passive"}, {"mood", "fancy"}};
    AdaptedModel wide_model = inject_adapters(f.backbone, f.banks(), f.stack_plan(), wider);
    CHECK_THROWS_AS((void)wide_model.stack_streams(extra), ConfigError);
}

TEST_CASE("stack of a single group behaves like the parallel plan") {
    Fixture f;
    auto banks3 = f.banks(/*random_up=*/true);
    banks3.resize(3);  // future, past, present

    CompositionPlan stack1 = CompositionPlan::parse("Stack(Parallel(future,past,present))");
    CompositionPlan par = CompositionPlan::parse("Parallel(future,past,present)");
    AdaptedModel stacked = inject_adapters(f.backbone, banks3, stack1, f.schema);
    AdaptedModel parallel = inject_adapters(f.backbone, banks3, par, f.schema);

    std::vector<std::vector<int>> rows{{4, 5, 2}, {6, 7, 2}};
    HiddenStates s = stacked.encode_streams(rows, stacked.stack_all_combinations());
    HiddenStates p = parallel.encode_streams(rows, parallel.parallel_streams());
    CHECK((s.states->val - p.states->val).lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_CASE("streams_to_outputs tags every stream and keeps order stable") {
    Fixture f;
    AdaptedModel model = inject_adapters(f.backbone, f.banks(), f.parallel_plan(), f.schema);
    auto streams = model.parallel_streams();
    Rng rng(1);
    auto outputs =
        streams_to_outputs(model, {{4, 5, 6, 2}}, streams, DecodeMode::Greedy, 8, rng);
    REQUIRE(outputs.size() == 5);
    CHECK(outputs[0].assignment.at("tense") == "future");
    CHECK(outputs[3].assignment.at("voice") == "passive");

    // Zero adapters: all streams emit the same greedy sentence.
    for (std::size_t k = 1; k < outputs.size(); ++k) {
        CHECK(outputs[k].token_ids == outputs[0].token_ids);
    }

    auto outputs2 =
        streams_to_outputs(model, {{4, 5, 6, 2}}, streams, DecodeMode::Greedy, 8, rng);
    for (std::size_t k = 0; k < outputs.size(); ++k) {
        CHECK(outputs2[k].assignment == outputs[k].assignment);
        CHECK(outputs2[k].token_ids == outputs[k].token_ids);
    }

    // Targeted Stack transfer produces exactly one tagged output.
    AdaptedModel stacked = inject_adapters(f.backbone, f.banks(), f.stack_plan(), f.schema);
    TransferDirective d;
    d.targets = {{"tense", "future"}, {"voice", "passive"}};
    auto one = streams_to_outputs(stacked, {{4, 5, 6, 2}}, stacked.stack_streams(d),
                                  DecodeMode::Greedy, 8, rng);
    CHECK(one.size() == 1);
    CHECK(one[0].assignment.size() == 2);
}

TEST_CASE("training-direction guards") {
    Fixture f;
    AdaptedModel stacked = inject_adapters(f.backbone, f.banks(), f.stack_plan(), f.schema);
    CHECK_THROWS_AS((void)stacked.parallel_streams(), ContractError);
    AdaptedModel par = inject_adapters(f.backbone, f.banks(), f.parallel_plan(), f.schema);
    TransferDirective d;
    d.targets = {{"tense", "future"}};
    CHECK_THROWS_AS((void)par.stack_streams(d), ContractError);
}
