#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "gemlab/errors.hpp"
#include "gemlab/harness.hpp"
#include "gemlab/metrics.hpp"
#include "gemlab/report.hpp"
#include "../oracles.hpp"

using namespace gemlab;
using nlohmann::json;

namespace {

json tiny_config() {
    return json::parse(R"({
      "name": "tiny", "seed": 4, "output_dir": "unused",
      "task": {"family": "dirichlet", "vocab_size": 6, "num_contexts": 4, "response_len": 2,
               "samples_per_context": 6, "concentration": 0.5, "num_correct": 2, "window": 2},
      "losses": [{"name": "ce", "kind": "CE"}, {"name": "gem", "kind": "GEM", "beta": 0.7}],
      "optimizer": {"kind": "sgd", "lr": 0.5},
      "train": {"epochs": 2, "batch_size": 2},
      "eval": {"num_samples": 8, "pass_k": [1, 2, 4, 8],
               "decode": {"temperature": 1.0, "top_k": 0, "top_p": 1.0, "max_len": 3},
               "reward": "verifier", "self_bleu_max_n": 2, "ngram_n": 1}
    })");
}

}  // namespace

TEST_CASE("config parsing rejects unknown fields and bad values") {
    const auto ok = ExperimentConfig::from_json(tiny_config());
    CHECK(ok.losses.size() == 2);
    CHECK(ok.losses[1].spec == LossSpec::gem(0.7));
    CHECK(ok.task.window == 2);

    auto typo = tiny_config();
    typo["task"]["vocab_sise"] = 6;
    CHECK_THROWS_AS(ExperimentConfig::from_json(typo), ConfigError);
    auto top = tiny_config();
    top["epochs"] = 3;
    CHECK_THROWS_AS(ExperimentConfig::from_json(top), ConfigError);
    auto loss = tiny_config();
    loss["losses"][1]["betta"] = 0.5;
    CHECK_THROWS_AS(ExperimentConfig::from_json(loss), ConfigError);
    auto range = tiny_config();
    range["losses"][1]["beta"] = 1.5;
    CHECK_THROWS_AS(ExperimentConfig::from_json(range), ConfigError);
    auto type = tiny_config();
    type["seed"] = "four";
    CHECK_THROWS_AS(ExperimentConfig::from_json(type), ConfigError);
    auto dup = tiny_config();
    dup["losses"][1]["name"] = "ce";
    CHECK_THROWS_AS(ExperimentConfig::from_json(dup), ConfigError);
    auto unlimited = tiny_config();
    unlimited["task"]["window"] = nullptr;
    CHECK(ExperimentConfig::from_json(unlimited).task.window == kUnlimitedWindow);
}

TEST_CASE("config json round-trip and hash") {
    const auto a = ExperimentConfig::from_json(tiny_config());
    const auto b = ExperimentConfig::from_json(a.to_json());
    CHECK(a.to_json() == b.to_json());
    CHECK(a.hash() == b.hash());
    auto c = tiny_config();
    c["seed"] = 5;
    CHECK(ExperimentConfig::from_json(c).hash() != a.hash());
}

TEST_CASE("shipped configs load") {
    for (const char* name : {"standard.json", "multi_answer.json", "grid.json", "exact.json"}) {
        CHECK_NOTHROW(ExperimentConfig::load(std::filesystem::path(GEMLAB_SOURCE_DIR) / "configs" / name));
    }
}

TEST_CASE("generate_task is deterministic and consistent") {
    const auto cfg = ExperimentConfig::from_json(tiny_config());
    const auto a = generate_task(cfg.task, 11);
    const auto b = generate_task(cfg.task, 11);
    CHECK(a.corpus.sequences == b.corpus.sequences);
    CHECK(a.corpus.sequences.size() == 4 * 6);
    CHECK(a.prompts.size() == 4);
    CHECK(std::set(a.prompts.begin(), a.prompts.end()).size() == 4);
    for (const auto& [key, row] : a.truth.rows) {
        CHECK(b.truth.rows.at(key) == row);
        CHECK(truth_row(cfg.task, 11, key) == row);
        for (double v : row.vec()) CHECK(v > 0.0);
        CHECK(a.truth.correct.at(key).size() == 2);
    }
    const auto c = generate_task(cfg.task, 12);
    CHECK(c.corpus.sequences != a.corpus.sequences);
}

TEST_CASE("generate_task limits") {
    auto spec = ExperimentConfig::from_json(tiny_config()).task;
    spec.samples_per_context = 0;
    const auto empty = generate_task(spec, 1);
    CHECK(empty.corpus.sequences.empty());
    CHECK(empty.truth.rows.size() >= 4);

    spec.samples_per_context = 1;
    spec.concentration = 1e6;
    const auto flat = generate_task(spec, 1);
    for (const auto& [key, row] : flat.truth.rows)
        CHECK(oracle::max_abs_diff(row.vec(), std::vector<double>(6, 1.0 / 6)) < 5e-3);

    spec.vocab_size = 2;
    CHECK_THROWS_AS(spec.validate(), ConfigError);
}

TEST_CASE("multi-answer truth puts 1 - noise on the correct set") {
    auto spec = ExperimentConfig::from_json(tiny_config()).task;
    spec.family = TaskFamily::MULTI_ANSWER;
    spec.noise = 0.2;
    const auto t = generate_task(spec, 3);
    for (const auto& [key, row] : t.truth.rows) {
        double in = 0;
        for (TokenId j : t.truth.correct.at(key)) {
            CHECK(j != 5);
            in += row[static_cast<std::size_t>(j)];
        }
        CHECK(in == doctest::Approx(0.8).epsilon(1e-12));
    }
}

TEST_CASE("rewards are pure functions of the sequence") {
    const auto cfg = ExperimentConfig::from_json(tiny_config());
    const auto task = generate_task(cfg.task, 2);
    const auto& prompt = task.prompts[0];
    const auto key = ContextKey::from_prefix(prompt, {}, cfg.task.window);
    const auto& good = task.truth.correct.at(key);
    TokenSequence hit{prompt, {good[0]}};
    CHECK(reward(RewardId::VERIFIER, task, hit) == 1.0);
    TokenId miss_tok = 0;
    while (std::find(good.begin(), good.end(), miss_tok) != good.end()) ++miss_tok;
    TokenSequence miss{prompt, {miss_tok}};
    CHECK(reward(RewardId::VERIFIER, task, miss) == 0.0);
    CHECK(reward(RewardId::TRUTH_LOGLIK, task, hit) ==
          doctest::Approx(std::log(task.truth.rows.at(key)[static_cast<std::size_t>(good[0])])));
    CHECK(reward(RewardId::VERIFIER, task, hit) == reward(RewardId::VERIFIER, task, hit));
}

TEST_CASE("power_normalize and equilibrium_beta") {
    CHECK(oracle::max_abs_diff(power_normalize(ProbVector({0.8, 0.2, 0.0}), 0.5).vec(), {2.0 / 3, 1.0 / 3, 0.0}) < 1e-15);
    CHECK(equilibrium_beta(LossSpec::ce()) == 1.0);
    CHECK(equilibrium_beta(LossSpec::gem(0.3)) == 0.3);
    CHECK(equilibrium_beta(LossSpec::ce_entropy(0.1)) == 0.0);
}

TEST_CASE("run_experiment: one record per cell, deterministic, thread-independent") {
    const auto cfg = ExperimentConfig::from_json(tiny_config());
    const auto a = run_experiment(cfg, 1, std::nullopt, false);
    const auto b = run_experiment(cfg, 3, std::nullopt, false);
    REQUIRE(a.records.size() == 2);
    CHECK(a.records[0].cell == "ce");
    CHECK(a.records[1].cell == "gem");
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(a.records[i].status == "ok");
        CHECK(a.records[i].final_metrics == b.records[i].final_metrics);
        CHECK(a.records[i].curves == b.records[i].curves);
        CHECK(a.records[i].steps == b.records[i].steps);
        CHECK(a.records[i].config_hash == cfg.hash());
        CHECK(a.records[i].final_metrics.contains("entropy"));
        CHECK(a.records[i].final_metrics.contains("pass@8"));
        CHECK(a.records[i].final_metrics.at("self_bleu_smoothing_epsilon") == kBleuSmoothingEpsilon);
        const auto& curve = a.records[i].curves.at("pass_at_k");
        for (std::size_t k = 1; k < curve.size(); ++k) CHECK(curve[k] >= curve[k - 1]);
    }
    const auto only = run_experiment(cfg, 1, std::string("gem"), false);
    REQUIRE(only.records.size() == 1);
    CHECK(only.records[0].final_metrics == a.records[1].final_metrics);
}

TEST_CASE("a failing cell is recorded, not thrown") {
    auto doc = tiny_config();
    doc["task"]["samples_per_context"] = 0;
    const auto cfg = ExperimentConfig::from_json(doc);
    const auto task = generate_task(cfg.task, cfg.seed);
    const auto out = run_cell(cfg, task, cfg.losses[0]);
    CHECK(out.record.status == "failed");
    CHECK_FALSE(out.record.error.empty());
    CHECK_FALSE(out.model.has_value());
}

TEST_CASE("run_experiment writes the per-cell layout") {
    auto doc = tiny_config();
    const auto dir = std::filesystem::temp_directory_path() / "gemlab_harness_test";
    std::filesystem::remove_all(dir);
    doc["output_dir"] = dir.string();
    const auto cfg = ExperimentConfig::from_json(doc);
    const auto res = run_experiment(cfg, 2);
    CHECK(res.directory == dir / cfg.hash());
    for (const char* cell : {"ce", "gem"}) {
        for (const char* f : {"run.jsonl", "model.json", "metrics.csv"})
            CHECK(std::filesystem::exists(res.directory / cell / f));
    }
    CHECK(std::filesystem::exists(res.directory / "records.jsonl"));
    std::ifstream in(res.directory / "gem" / "model.json");
    const auto model = TabularModel::from_json(json::parse(in));
    CHECK(model.vocab_size() == 6);
    std::filesystem::remove_all(dir);
}

TEST_CASE("record json round-trip") {
    RunRecord r;
    r.cell = "gem";
    r.loss = "GEM(beta=0.7,LINEAR)";
    r.seed = 99;
    r.steps.push_back({3, 1, 0.25, 0.5, 1.5, 0.1});
    r.batch_order_digests = {"abc"};
    r.final_metrics = {{"entropy", 0.1 + 0.2}};
    r.curves = {{"pass_at_k", {0.1, 0.2}}};
    const auto back = RunRecord::from_json(r.to_json());
    CHECK(back.to_json() == r.to_json());
    CHECK(back.final_metrics.at("entropy") == 0.1 + 0.2);
}

TEST_CASE("csv emit/parse round-trips") {
    CsvTable t{{"a", "b,c", "q\"uote"}, {{"1", "x\ny", ""}, {"-0.5", "\"", "plain"}}};
    CHECK(parse_csv(emit_csv(t)) == t);

    std::mt19937_64 rng(71);
    const std::string alphabet = "ab,\"\n 1.";
    std::uniform_int_distribution<std::size_t> ch(0, alphabet.size() - 1), len(0, 6);
    for (int i = 0; i < 500; ++i) {
        CsvTable r;
        const std::size_t cols = 1 + static_cast<std::size_t>(i % 4);
        auto field = [&] {
            std::string s;
            for (std::size_t n = len(rng); n > 0; --n) s += alphabet[ch(rng)];
            return s;
        };
        for (std::size_t c = 0; c < cols; ++c) r.header.push_back(field() + "h");
        for (int row = 0; row < 3; ++row) {
            std::vector<std::string> v;
            for (std::size_t c = 0; c < cols; ++c) v.push_back(field());
            r.rows.push_back(v);
        }
        REQUIRE(parse_csv(emit_csv(r)) == r);
    }
}

TEST_CASE("format_double round-trips") {
    std::mt19937_64 rng(72);
    std::uniform_real_distribution<double> d(-1e6, 1e6);
    for (int i = 0; i < 10000; ++i) {
        const double v = d(rng) * std::pow(10.0, static_cast<double>(i % 40) - 20.0);
        REQUIRE(parse_double(format_double(v)) == v);
    }
    CHECK(format_double(0.5) == "0.5");
}

TEST_CASE("report tables") {
    RunRecord r;
    r.cell = "gem";
    r.loss = "GEM";
    r.final_metrics = {{"entropy", 1.5}, {"accuracy", 0.25}};
    r.curves = {{"pass_at_k", {0.2, 0.4}}, {"pass_at_k_k", {1, 2}}};
    const auto m = metrics_table(r);
    CHECK(m.header == std::vector<std::string>{"run", "metric", "value"});
    REQUIRE(m.rows.size() == 2);
    CHECK(m.rows[0] == std::vector<std::string>{"gem", "accuracy", "0.25"});

    const std::vector<RunRecord> recs = {r};
    CHECK(report_table(recs, ReportKind::SUMMARY_CSV).rows.size() == 2);
    CHECK_NOTHROW(report_table(recs, ReportKind::PASS_AT_K_CURVE));
    auto bad = r;
    bad.curves["pass_at_k"] = {0.4, 0.2};
    const std::vector<RunRecord> bads = {bad};
    CHECK_THROWS_AS(report_table(bads, ReportKind::PASS_AT_K_CURVE), PreconditionError);
    CHECK_THROWS(report_table(std::vector<RunRecord>{}, ReportKind::SUMMARY_CSV));
    CHECK(parse_report_kind("distance-curve") == ReportKind::DISTANCE_CURVE);

    const auto dir = std::filesystem::temp_directory_path() / "gemlab_report_test";
    const auto files = report(recs, ReportKind::PASS_AT_K_CURVE, dir, true);
    CHECK(std::filesystem::exists(files.csv));
    REQUIRE(files.svg.has_value());
    std::ifstream svg(*files.svg);
    std::string head;
    std::getline(svg, head);
    CHECK(head.find("<svg") != std::string::npos);
    std::filesystem::remove_all(dir);
}

TEST_CASE("config hash ignores the output directory") {
    auto a = tiny_config();
    auto b = tiny_config();
    b["output_dir"] = "/somewhere/else";
    CHECK(ExperimentConfig::from_json(a).hash() == ExperimentConfig::from_json(b).hash());
}
