// Acceptance suite: runs every release criterion at its stated tolerance and
// prints one PASS/FAIL line per criterion. Exits nonzero if any fail.

#include <chrono>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "icueval/finetune.hpp"
#include "icueval/runner.hpp"
#include "icueval/scenarios.hpp"
#include "icueval/scoring.hpp"
#include "icueval/timeline.hpp"

#include "../support/baselines.hpp"
#include "../support/demo_config.hpp"
#include "../support/fixtures.hpp"
#include "../support/oracles.hpp"
#include "../support/stub_server.hpp"

#ifndef ICUEVAL_CLI_PATH
#error "acceptance needs ICUEVAL_CLI_PATH"
#endif

using namespace icueval;

namespace {

int g_failures = 0;

void criterion(const std::string& name, const std::function<void()>& body) {
    try {
        body();
        std::cout << "PASS: " << name << "\n";
    } catch (const std::exception& e) {
        ++g_failures;
        std::cout << "FAIL: " << name << " -- " << e.what() << "\n";
    }
}

void require(bool condition, const std::string& message) {
    if (!condition) throw std::runtime_error(message);
}

int run_cli(const std::vector<std::string>& args, const std::string& log_path) {
    std::string command = std::string(ICUEVAL_CLI_PATH);
    for (const auto& a : args) command += " '" + a + "'";
    command += " >" + log_path + " 2>&1";
    int status = std::system(command.c_str());
    if (status == -1) throw std::runtime_error("cannot launch CLI");
    return WEXITSTATUS(status);
}

std::vector<std::string> user_texts(const PromptBundle& bundle) {
    std::vector<std::string> texts;
    for (const auto& m : bundle.messages) {
        if (m.role == Role::user) texts.push_back(to_lower(m.content));
    }
    return texts;
}

bool any_contains(const std::vector<std::string>& texts, const std::string& needle_lower) {
    for (const auto& t : texts) {
        if (t.find(needle_lower) != std::string::npos) return true;
    }
    return false;
}

void check_aggregates(const json& aggregates) {
    require(aggregates.size() == 5, "expected five aggregate blocks");
    for (const auto& block : aggregates) {
        const std::string scenario = block.at("scenario").get<std::string>();
        require(block.at("trials").get<int>() == 5, scenario + ": expected 5 trials");
        require(block.at("refusals").get<int>() == 0, scenario + ": unexpected refusal");
        require(block.at("errors").get<int>() == 0, scenario + ": unexpected trial error");
        if (scenario == "what-if" || scenario == "so-what") {
            require(block.at("mean_similarity").get<double>() == 0.65,
                    scenario + ": mean_similarity != 0.65");
        } else if (scenario == "why-not") {
            require(block.at("positive_rate").get<double>() == 0.6,
                    "why-not: positive_rate != 0.6");
            require(block.at("undetermined").get<int>() == 1, "why-not: undetermined != 1");
        } else if (scenario == "how-about") {
            require(block.at("mean_similarity").get<double>() == 0.6,
                    "how-about: mean_similarity != 0.6");
        } else if (scenario == "discharge-prediction") {
            const auto& m = block.at("metrics");
            require(m.at("accuracy").get<double>() == 0.6, "prediction: accuracy != 0.6");
            require(m.at("precision_alive").get<double>() == 2.0 / 3.0,
                    "prediction: precision@Alive != 2/3");
            require(m.at("recall_alive").get<double>() == 2.0 / 3.0,
                    "prediction: recall@Alive != 2/3");
            require(m.at("precision_expired").get<double>() == 1.0,
                    "prediction: precision@Expired != 1.0");
            require(m.at("recall_expired").get<double>() == 0.5,
                    "prediction: recall@Expired != 0.5");
            require(m.at("unknown_count").get<int>() == 1, "prediction: unknown_count != 1");
        } else {
            throw std::runtime_error("unexpected scenario " + scenario);
        }
    }
}

} // namespace

int main() {
    const std::string data_dir = testsupport::fixture_data_dir();

    criterion(
        "reference figures ship as labeled display constants, not oracle targets (property "
        "suites below substitute for them)",
        [&] {
            auto blocks = testsupport::reported_baseline_blocks();
            require(blocks.size() == 15, "expected 15 baseline blocks (3 systems x 5 tasks)");
            testsupport::TempDir tmp("acc_baseline");
            RunArtifact artifact;
            artifact.aggregates = blocks;
            artifact.provenance = json::object();
            emit_report(artifact, {ReportFormat::markdown}, tmp.str());
            auto md = testsupport::read_file(tmp.str() + "/report.md");
            require(md.find("| gpt-4 | what-if | mean_similarity | 0.8852 |") != std::string::npos,
                    "baseline row missing from the rendered report");
            require(testsupport::kReportedHowAboutAbstract == 0.665 &&
                        testsupport::kReportedHowAboutDetail == 0.675,
                    "both reported how-about figures must be kept");
        });

    criterion("greedy plan similarity equals exhaustive optimal matching on 1000 random pairs "
              "(<= 6 items) in under 10 s",
              [&] {
                  auto start = std::chrono::steady_clock::now();
                  std::mt19937_64 rng(20260811);
                  for (int round = 0; round < 1000; ++round) {
                      auto predicted = testsupport::random_plan(rng, 6);
                      auto truth = testsupport::random_plan(rng, 6);
                      double got = plan_similarity(predicted, truth).score;
                      double want = testsupport::optimal_similarity(predicted, truth);
                      if (got != want) {
                          std::ostringstream msg;
                          msg << "mismatch at round " << round << ": greedy " << got
                              << " vs optimal " << want;
                          throw std::runtime_error(msg.str());
                      }
                  }
                  auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
                                     std::chrono::steady_clock::now() - start)
                                     .count();
                  require(elapsed < 10000, "oracle comparison exceeded 10 s");
              });

    criterion("plan similarity algebra holds over 10,000 generated cases", [&] {
        std::mt19937_64 rng(424242);
        for (int round = 0; round < 10000; ++round) {
            auto a = testsupport::random_plan(rng, 8);
            auto b = testsupport::random_plan(rng, 8);
            auto report = plan_similarity(a, b);
            require(report.score >= 0.0 && report.score <= 1.0, "score out of [0,1]");
            require(report.exact_matches + report.parent_matches <= std::min(a.size(), b.size()),
                    "match count exceeds the smaller plan");
            require(plan_similarity(b, a).score == report.score, "asymmetric score");
            if (!a.empty()) require(plan_similarity(a, a).score == 1.0, "identity not 1.0");
            auto a2 = a;
            auto b2 = b;
            deterministic_shuffle(a2, rng);
            deterministic_shuffle(b2, rng);
            require(plan_similarity(a2, b2).score == report.score, "not permutation invariant");
            if (!a.empty() && !b.empty() && report.exact_matches == 0 &&
                report.parent_matches == 0) {
                require(report.score == 0.0, "disjoint plans must score 0");
            }
        }
    });

    criterion("windowed vital statistics match the sort-and-scan oracle to 1e-9", [&] {
        std::mt19937_64 rng(31337);
        auto compare = [&](const std::vector<VitalSample>& samples, TimeWindow window) {
            auto got = aggregate_vitals(samples, window);
            auto want = testsupport::oracle_vitals(samples, window);
            require(got.sample_count == want.sample_count, "sample_count mismatch");
            for (auto pick :
                 {&VitalSummary::sao2, &VitalSummary::heartrate, &VitalSummary::respiration}) {
                const auto& g = got.*pick;
                const auto& w = want.*pick;
                require(g.count == w.count, "count mismatch");
                if (g.count == 0) continue;
                require(std::abs(g.mean - w.mean) <= 1e-9, "mean beyond 1e-9");
                require(std::abs(g.median - w.median) <= 1e-9, "median beyond 1e-9");
                require(g.max == w.max && g.min == w.min, "extrema mismatch");
            }
        };
        // Edge cases: empty window, single sample, even-count median.
        compare({}, TimeWindow{0, 10});
        {
            VitalSample s;
            s.stay_id = StayId{1};
            s.offset_min = 5;
            s.heartrate = 105.0;
            compare({s}, TimeWindow{0, 10});
            VitalSample s2 = s;
            s2.offset_min = 6;
            s2.heartrate = 100.0;
            compare({s, s2}, TimeWindow{0, 10});
        }
        for (int round = 0; round < 2000; ++round) {
            auto samples = testsupport::random_vitals(rng, rng() % 60);
            int start = static_cast<int>(rng() % 300) - 60;
            TimeWindow window{start, start + 1 + static_cast<int>(rng() % 250)};
            compare(samples, window);
        }
    });

    criterion("classification metrics reproduce the hand-computed confusions", [&] {
        using P = std::pair<DischargeStatus, DischargeStatus>;
        const auto A = DischargeStatus::alive;
        const auto E = DischargeStatus::expired;
        {
            std::vector<P> pairs;
            for (int i = 0; i < 5; ++i) pairs.emplace_back(A, A);
            for (int i = 0; i < 5; ++i) pairs.emplace_back(A, E);
            auto m = classification_metrics(pairs);
            require(m.precision_alive == 0.5, "all-Alive precision@Alive != 0.5");
            require(m.recall_alive == 1.0, "all-Alive recall@Alive != 1.0");
            require(m.recall_expired == 0.0, "all-Alive recall@Expired != 0.0");
            require(!m.precision_expired_defined, "precision@Expired must be undefined");
        }
        {
            std::vector<P> pairs = {{A, A}, {A, A}, {A, A}, {E, E}, {E, E},
                                    {A, A}, {E, E}, {A, E}, {E, A}, {A, E}};
            auto m = classification_metrics(pairs);
            require(m.accuracy == 0.7, "7-of-10 accuracy != 0.7");
            require(m.correct == 7, "7-of-10 correct != 7");
        }
    });

    // The hermetic end-to-end run: record against a local stub through the
    // CLI, replay twice, compare bytes, check the hand-computed aggregates.
    testsupport::TempDir e2e("acc_e2e");
    criterion("hermetic end-to-end replay: five scenarios, byte-identical artifacts, golden "
              "aggregates, under 60 s",
              [&] {
                  testsupport::StubServer server;
                  server.start();
                  const std::string store = e2e.str() + "/store.jsonl";
                  const std::string config_path = e2e.str() + "/config.json";
                  testsupport::write_file(config_path,
                                          testsupport::demo_config_json(data_dir, store, "record",
                                                                        server.endpoint_url()));
                  int rc = run_cli({"run", "--config", config_path, "--out", e2e.str() + "/rec"},
                                   e2e.str() + "/rec.log");
                  require(rc == 0, "record run exited " + std::to_string(rc));
                  server.stop();

                  auto replay = [&](const std::string& out) {
                      auto start = std::chrono::steady_clock::now();
                      int code = run_cli({"run", "--config", config_path, "--mode", "replay",
                                          "--out", out},
                                         out + ".log");
                      auto seconds = std::chrono::duration_cast<std::chrono::seconds>(
                                         std::chrono::steady_clock::now() - start)
                                         .count();
                      require(code == 0, "replay run exited " + std::to_string(code));
                      require(seconds < 60, "replay exceeded 60 s");
                  };
                  replay(e2e.str() + "/a");
                  replay(e2e.str() + "/b");

                  for (const char* name :
                       {"trials.jsonl", "ground_truth.jsonl", "aggregates.json", "provenance.json",
                        "report.md", "trials.csv", "plotdata.json"}) {
                      auto a = testsupport::read_file(e2e.str() + "/a/" + name);
                      auto b = testsupport::read_file(e2e.str() + "/b/" + name);
                      require(a == b, std::string(name) + " differs between replay runs");
                  }
                  auto aggregates =
                      json::parse(testsupport::read_file(e2e.str() + "/a/aggregates.json"));
                  check_aggregates(aggregates);
              });

    criterion("no bundle leaks its ground truth into user-visible text, corpus-wide", [&] {
        const auto& records = testsupport::fixture_records();
        ScenarioContext ctx;
        ctx.presetting = build_presetting(default_fewshot_exemplars());
        std::size_t checked = 0;

        for (const auto& record : records) {
            // what-if at the acceptance split
            try {
                auto [bundle, truth] = build_what_if(ctx, record, 300);
                auto texts = user_texts(bundle);
                for (const auto& item : truth.items) {
                    require(!any_contains(texts, item.canonical()),
                            "what-if leak in stay " + std::to_string(record.stay.stay_id.value));
                }
                ++checked;
            } catch (const Error&) {
            }
            // so-what over the whole stay
            try {
                TimeWindow window{-100000, 1000000};
                auto [bundle, truth] = build_so_what(ctx, record, window);
                auto texts = user_texts(bundle);
                require(!any_contains(texts, "diagnosis:"),
                        "so-what shows a diagnosis clause in stay " +
                            std::to_string(record.stay.stay_id.value));
                for (const auto& path : truth.paths) {
                    require(!any_contains(texts, to_lower(path)),
                            "so-what leak in stay " + std::to_string(record.stay.stay_id.value));
                }
                ++checked;
            } catch (const Error&) {
            }
        }
        // how-about across the configured disease pairing
        auto pairs = pair_similar_diseases(records, "Bleeding, lower GI", "Bleeding, upper GI");
        for (const auto& [source, target] : pairs) {
            auto [bundle, truth] = build_how_about(ctx, source, target);
            auto texts = user_texts(bundle);
            for (const auto& item : truth.items) {
                require(!any_contains(texts, item.canonical()),
                        "how-about leak from source " +
                            std::to_string(source.stay.stay_id.value));
            }
            ++checked;
        }
        // prediction and fine-tune: the label text never sits in the user turn
        for (const auto& record : records) {
            try {
                auto [bundle, truth] = build_discharge_prediction(ctx, record);
                auto texts = user_texts(bundle);
                require(!any_contains(texts, "status: alive.") &&
                            !any_contains(texts, "status: expired."),
                        "prediction leak in stay " + std::to_string(record.stay.stay_id.value));
                auto sample = build_sample(record);
                require(sample.messages[1].content.find(sample.messages[2].content) ==
                            std::string::npos,
                        "fine-tune label inside the user turn for stay " +
                            std::to_string(record.stay.stay_id.value));
                ++checked;
            } catch (const Error&) {
            }
        }
        require(checked >= 200, "leak scan covered too little of the corpus: " +
                                    std::to_string(checked));
    });

    criterion("balanced fine-tune export: 100 schema-valid lines, byte-stable, disjoint from "
              "the declared test set",
              [&] {
                  testsupport::TempDir tmp("acc_ft");
                  const std::set<std::int64_t> test_ids = {440001, 440002, 440003, 440004, 761802};
                  const auto& records = testsupport::fixture_records();
                  auto path = tmp.str() + "/train.jsonl";
                  auto manifest = export_dataset(records, 50, 21, path, test_ids);
                  require(manifest.alive_count == 50 && manifest.expired_count == 50,
                          "export is not 50/50");
                  auto first = testsupport::read_file(path);
                  require(std::count(first.begin(), first.end(), '\n') == 100,
                          "export is not 100 lines");
                  require(!first.empty() && first.back() == '\n', "missing trailing newline");
                  std::istringstream lines(first);
                  std::string line;
                  std::set<std::int64_t> seen;
                  while (std::getline(lines, line)) {
                      auto sample = parse_sample(line); // throws if schema-invalid
                      require(serialize_sample(sample) == line, "line does not round-trip");
                      require(!test_ids.count(sample.stay_id.value),
                              "test stay leaked into the export");
                      require(seen.insert(sample.stay_id.value).second, "duplicate stay");
                  }
                  export_dataset(records, 50, 21, path, test_ids);
                  require(testsupport::read_file(path) == first,
                          "re-export is not byte-identical");
              });

    criterion("narrative golden: the reference stay renders the exact layout tokens", [&] {
        const auto& record = testsupport::fixture_record(761802);
        auto body = prediction_body(record);
        auto expected = testsupport::read_file(testsupport::golden_path("narrative_761802.txt"));
        require(body == expected, "narrative differs from the golden file");
        for (const char* token :
             {"(offset: 16)", "(Offset: 227)",
              "sao2: 98.62162162162163(mean) 99.0(median) 100.0(max) 96.0(min)",
              "heartrate: 103.29807692307692(mean) 104.0(median) 132.0(max) 80.0(min)"}) {
            require(body.find(token) != std::string::npos,
                    std::string("missing token ") + token);
        }
        auto sample = build_sample(record);
        require(sample.messages[2].content == std::string("status: Alive."),
                "assistant label is not the canonical string");
    });

    if (g_failures > 0) {
        std::cout << g_failures << " criterion(s) failed\n";
        return 1;
    }
    std::cout << "all acceptance criteria passed\n";
    return 0;
}
