// Acceptance checks. Prints one PASS/FAIL/SKIP line per criterion and exits
// non-zero if any check fails.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <sstream>

#include "clear/analysis.hpp"
#include "clear/cli.hpp"
#include "clear/error.hpp"
#include "clear/prompt_kit.hpp"
#include "clear/run_config.hpp"
#include "clear/search_engine.hpp"
#include "clear/task_suite.hpp"
#include "generators.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace clear;
namespace fs = std::filesystem;

namespace {

struct Result {
  bool ok = true;
  std::string detail;
};

int failures = 0;

void report(int n, const std::string& name, const Result& r) {
  std::cout << (r.ok ? "PASS" : "FAIL") << " [" << n << "] " << name;
  if (!r.detail.empty()) std::cout << ": " << r.detail;
  std::cout << "\n";
  if (!r.ok) ++failures;
}

void check(Result& r, bool cond, const std::string& what) {
  if (!cond && r.ok) {
    r.ok = false;
    r.detail = what;
  }
}

Gateway scored_gateway(testing::ScoreScript s) {
  return Gateway(std::make_unique<testing::FnBackend>(testing::scored_responder(std::move(s))));
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// [1] completion calls per case equal 4d.
Result call_count() {
  Result r;
  const auto roles = testing::roles();
  const auto task = testing::marker_task();
  double slowest = 0;
  for (SearchMode mode : {SearchMode::chain, SearchMode::best_first}) {
    for (int d = 1; d <= 5; ++d) {
      auto gw = scored_gateway({{50, 60, 70, 80, 90, 95}, {40, 50, 60, 70, 80, 85}});
      SearchConfig cfg;
      cfg.mode = mode;
      cfg.d = d;
      auto start = std::chrono::steady_clock::now();
      run_search(gw, roles, task, "n0", cfg);
      slowest = std::max(slowest, std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
      auto calls = gw.ledger().totals().calls;
      check(r, calls == 4 * d,
            std::string(to_string(mode)) + " d=" + std::to_string(d) + " made " +
                std::to_string(calls) + " calls");
    }
  }

  // d = 3 through the benchmark runner: 12 calls per case.
  std::vector<TaskSpec> specs;
  for (int i = 0; i < 5; ++i) {
    TaskSpec s;
    s.id = "c" + std::to_string(i);
    s.kind = TaskKind::constrained_generation;
    s.instruction = "outline";
    s.prompt_set = testing::marker_prompts();
    s.metric = default_metric(TaskKind::constrained_generation);
    s.concepts = ConceptSet({"drum"});
    s.root_text = "n0";
    specs.push_back(s);
  }
  // The responder numbers children with one counter, so each case gets its own gateway.
  std::int64_t total = 0;
  for (const auto& s : specs) {
    auto one = scored_gateway({{50, 60, 70, 80}, {40, 50, 60, 70}});
    BenchmarkEndpoints endpoints;
    endpoints.expert = testing::roles().expert;
    endpoints.amateur = testing::roles().amateur;
    auto rep = run_benchmark({s}, SearchConfig{}, endpoints, one);
    check(r, rep.cases[0].result.ledger_slice.totals().calls == 12, "case " + s.id + " did not make 12 calls");
    total += one.ledger().totals().calls;
  }
  check(r, total == 12 * static_cast<std::int64_t>(specs.size()), "12N law broken");
  check(r, slowest < 1.0, "a case took " + std::to_string(slowest) + " s");
  if (r.ok) {
    std::ostringstream d;
    d << "4d for d=1..5 in both modes, 12 per case at d=3, slowest " << slowest * 1000 << " ms";
    r.detail = d.str();
  }
  return r;
}

// [2] best-first parents against the brute-force oracle.
Result best_first_oracle() {
  Result r;
  std::mt19937_64 rng(2024);
  const auto roles = testing::roles();
  const auto task = testing::marker_task();
  int trials = 0, mismatches = 0;
  for (int t = 0; t < 400; ++t) {
    int d = 1 + static_cast<int>(rng() % 6);
    int variant = static_cast<int>(rng() % 4);
    testing::ScoreScript s;
    for (int i = 0; i <= d; ++i) {
      s.expert.push_back(static_cast<int>(rng() % 101));
      s.amateur.push_back(static_cast<int>(rng() % 101));
    }
    auto gw = scored_gateway(s);
    SearchConfig cfg;
    cfg.mode = SearchMode::best_first;
    cfg.d = d;
    cfg.heuristic = static_cast<HeuristicVariant>(variant);
    auto outcome = run_search(gw, roles, task, "n0", cfg);
    std::vector<int> got;
    for (auto id : outcome.selected_parents) got.push_back(static_cast<int>(id.value));
    if (got != oracle::best_first_parents(s.expert, s.amateur, d, variant)) ++mismatches;
    ++trials;
  }
  check(r, mismatches == 0, std::to_string(mismatches) + " mismatches");
  r.detail = std::to_string(trials) + " random scripts, d<=6, " + std::to_string(mismatches) +
             " mismatches";
  return r;
}

// [3] heuristic and cost formulas on hand-computed triples.
Result formulas() {
  Result r;
  struct Row {
    HeuristicVariant v;
    int ve, va;
    double h;
  };
  using H = HeuristicVariant;
  const std::vector<Row> rows{
      {H::expert_weighted, 100, 0, -50}, {H::expert_weighted, 0, 0, 100},
      {H::expert_weighted, 60, 90, 100}, {H::expert_weighted, 40, 90, 70},
      {H::expert_weighted, 80, 100, 80}, {H::expert_weighted, 20, 100, 30},
      {H::equal_weighting, 80, 80, 100}, {H::equal_weighting, 100, 0, 0},
      {H::equal_weighting, 30, 70, 60},  {H::equal_weighting, 70, 30, 60},
      {H::equal_weighting, 0, 100, 0},   {H::expert_only, 100, 5, 0},
      {H::expert_only, 0, 5, 100},       {H::expert_only, 37, 99, 63},
      {H::amateur_only, 5, 100, 0},      {H::amateur_only, 5, 0, 100},
      {H::amateur_only, 99, 41, 59},     {H::expert_weighted, 1, 0, 98.5},
      {H::expert_weighted, 67, 0, -0.5}, {H::equal_weighting, 55, 56, 99},
  };
  for (const auto& row : rows) {
    double h = heuristic_h(row.v, row.ve, row.va);
    check(r, h == row.h,
          std::string(to_string(row.v)) + "(" + std::to_string(row.ve) + "," +
              std::to_string(row.va) + ") = " + std::to_string(h));
  }
  struct G {
    int v0, ve, va;
    double g;
  };
  const std::vector<G> gs{{80, 80, 80, 0}, {80, 90, 70, 20}, {0, 100, 100, 200}, {50, 20, 90, 70}};
  for (const auto& row : gs) check(r, cost_g(row.v0, row.ve, row.va) == row.g, "cost_g");
  auto e = make_frontier_entry(NodeId{0}, 80, 60, 90, H::expert_weighted);
  check(r, e.f == 30 + 100 - std::fabs(1.5 * 60 - 90), "f = g + h");
  r.detail = std::to_string(rows.size()) + " h triples, " + std::to_string(gs.size()) +
             " g triples, expert_weighted(100,0) = " +
             std::to_string(static_cast<int>(heuristic_h(H::expert_weighted, 100, 0)));
  return r;
}

// [4] feedback parser round trip and malformed corpus.
Result parser() {
  Result r;
  std::mt19937_64 rng(4);
  int n = 0;
  for (; n < 1000; ++n) {
    int s = static_cast<int>(rng() % 101);
    std::string reason = gen::reason(rng);
    auto fb = parse_feedback(gen::feedback_line(rng, s, reason), FeedbackSource::expert, true);
    check(r, fb.score == s && fb.reason == reason, "round trip failed for '" + reason + "'");
  }
  auto sentinel = parse_feedback("[100][reason] Answer is fully correct.", FeedbackSource::expert, true);
  check(r, sentinel.score == 100 && sentinel.reason == "Answer is fully correct.", "sentinel");
  auto corpus = gen::malformed_corpus();
  int rejected = 0;
  for (const auto& raw : corpus) {
    try {
      parse_feedback(raw, FeedbackSource::expert, true);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::MalformedFeedback) ++rejected;
    }
  }
  check(r, rejected == static_cast<int>(corpus.size()),
        std::to_string(corpus.size() - rejected) + " malformed entries not rejected");
  r.detail = std::to_string(n) + " generated strings plus sentinel; " + std::to_string(rejected) +
             "/" + std::to_string(corpus.size()) + " malformed entries rejected";
  return r;
}

// [5] coverage against the oracle and the street scene fixture.
Result coverage_check() {
  Result r;
  std::mt19937_64 rng(5);
  int mismatches = 0;
  for (int i = 0; i < 200; ++i) {
    std::string text = gen::coverage_text(rng);
    auto phrases = gen::concept_phrases(rng);
    if (coverage(text, ConceptSet(phrases)) != oracle::coverage(text, phrases, 2)) ++mismatches;
  }
  check(r, mismatches == 0, std::to_string(mismatches) + " oracle mismatches");
  auto scene = testing::street_scene();
  ConceptSet concepts(scene.concepts);
  double refined = coverage(scene.refined, concepts);
  double draft = coverage(scene.draft, concepts);
  auto missing = missing_concepts(scene.draft, concepts, Matcher::word_boundary_stem);
  check(r, refined == 1.0, "refined text scores " + std::to_string(refined));
  check(r, draft < 1.0, "draft text scores 1.0");
  check(r, missing == std::vector<std::string>{"clip"}, "draft misses something besides clip");
  std::ostringstream d;
  d << "200 random instances, " << mismatches << " mismatches; street scene refined " << refined
    << ", draft " << draft << " missing " << (missing.empty() ? "nothing" : missing.front());
  r.detail = d.str();
  return r;
}

// [6] cosine similarity.
Result cosine_check() {
  Result r;
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(-5, 5), scale(0.01, 100);
  double worst = 0;
  for (int i = 0; i < 100; ++i) {
    std::size_t dim = 1 + rng() % 256;
    std::vector<double> a(dim), b(dim);
    for (auto& x : a) x = u(rng);
    for (auto& x : b) x = u(rng);
    double c = cosine(a, b);
    worst = std::max(worst, std::fabs(c - oracle::cosine(a, b)));
    check(r, c == cosine(b, a), "asymmetric");
    double k = std::ldexp(1.0, static_cast<int>(rng() % 16) - 8);
    auto ka = a;
    for (auto& x : ka) x *= k;
    check(r, cosine(ka, b) == c, "scale changed the value");
    auto sa = a;
    double s = scale(rng);
    for (auto& x : sa) x *= s;
    check(r, std::fabs(cosine(sa, b) - c) <= 1e-12, "arbitrary scale drifted");
  }
  check(r, worst <= 1e-9, "max deviation " + std::to_string(worst));
  std::ostringstream d;
  d << "100 pairs, max deviation " << worst << ", symmetric, power-of-two scale exact";
  if (r.ok) r.detail = d.str();
  return r;
}

fs::path demo_copy(const std::string& name) {
  auto dir = testing::temp_dir(name);
  for (const char* f : {"scripted.json", "script.json", "commongen.jsonl"}) {
    fs::copy_file(fs::path(CLEAR_DEMO_DIR) / f, dir / f);
  }
  return dir;
}

// [7] deterministic reports.
Result determinism() {
  Result r;
  auto dir = demo_copy("acceptance_det");
  RunOptions o{dir / "scripted.json", {}};
  o.overrides.out = dir / "out";
  std::ostringstream sink;
  std::vector<std::string> reports;
  for (int parallel : {1, 1, 3}) {
    o.overrides.parallel = parallel;
    int code = cmd_run(o, sink, sink);
    check(r, code == kExitOk, "run exited " + std::to_string(code) + ": " + sink.str());
    reports.push_back(slurp(dir / "out" / "report.json"));
  }
  check(r, !reports[0].empty() && reports[0] == reports[1], "two identical runs differ");
  auto a = nlohmann::json::parse(reports[1]);
  auto b = nlohmann::json::parse(reports[2]);
  a.erase("config");
  b.erase("config");
  check(r, a == b, "parallel run differs beyond the config echo");
  if (r.ok) r.detail = "identical bytes across repeated runs; same results with 3 workers";
  return r;
}

// [8] cost accounting.
Result cost_check() {
  Result r;
  auto prices = PriceTable::from_json(nlohmann::json::parse(
      R"({"expert": {"input": "5", "output": "15"}, "amateur": {"input": "0.5", "output": "1.5"}})"));
  UsageLedger fixture;
  fixture.add("expert", UsageRow{1, 0, 0, 4900, 2500});
  auto fx = cost_report(fixture, prices);
  check(r, fx.total.to_string() == "0.062", "fixture total " + fx.total.to_string());

  std::mt19937_64 rng(8);
  const std::vector<std::string> list{"5", "15", "0.5", "1.5", "2.5", "10", "0.000001", "37.123456"};
  for (int i = 0; i < 300; ++i) {
    const auto& pi = list[rng() % list.size()];
    const auto& po = list[rng() % list.size()];
    auto t = PriceTable::from_json({{"expert", {{"input", pi}, {"output", po}}}});
    std::int64_t in = static_cast<std::int64_t>(rng() % 50'000'000);
    std::int64_t out = static_cast<std::int64_t>(rng() % 50'000'000);
    std::int64_t k = 1 + static_cast<std::int64_t>(rng() % 100);
    UsageLedger l1, lk;
    l1.add("expert", UsageRow{1, 0, 0, in, out});
    lk.add("expert", UsageRow{1, 0, 0, in * k, out * k});
    auto c1 = cost_report(l1, t).total;
    auto ck = cost_report(lk, t).total;
    check(r, oracle::Decimal(c1.to_string()) == oracle::cost(in, pi) + oracle::cost(out, po),
          "decimal mismatch at " + std::to_string(in) + "/" + std::to_string(out));
    check(r, ck.pico() == c1.pico() * k, "not linear");
  }
  if (r.ok) r.detail = "fixture 4.9k/2.5k at 5/15 = " + fx.total.to_string() +
                       "; 300 random tallies exact and linear";
  return r;
}

// [9] early stop on a perfect root.
Result early_stop() {
  Result r;
  auto gw = Gateway(std::make_unique<testing::FnBackend>(
      [](const ModelEndpoint&, std::string_view) { return std::string("[100][reason] Answer is fully correct."); }));
  SearchConfig cfg;
  for (SearchMode mode : {SearchMode::chain, SearchMode::best_first}) {
    cfg.mode = mode;
    auto before = gw.ledger().totals().calls;
    auto outcome = run_search(gw, testing::roles(), testing::marker_task(TaskKind::math), "#### 4", cfg);
    auto calls = gw.ledger().totals().calls - before;
    check(r, outcome.early_stopped, "no early stop");
    check(r, calls == 2, std::string(to_string(mode)) + " made " + std::to_string(calls) + " calls");
    check(r, outcome.tree.size() == 1, "tree has " + std::to_string(outcome.tree.size()) + " nodes");
  }
  if (r.ok) r.detail = "2 calls and 1 node in both modes";
  return r;
}

// [10] live smoke test against a configured provider: d=2 chain over the
// configured dataset, then one extra expert evaluation of each final node.
void live_smoke() {
  const char* path = std::getenv("CLEAR_LIVE_CONFIG");
  if (path == nullptr || *path == '\0') {
    std::cout << "SKIP [10] live smoke test: set CLEAR_LIVE_CONFIG to a config file to run it\n";
    return;
  }
  Result r;
  try {
    RunOptions o{path, {}};
    o.overrides.d = 2;
    o.overrides.mode = SearchMode::chain;
    o.overrides.out = testing::temp_dir("live");
    std::ostringstream out, err;
    int code = cmd_run(o, out, err);
    check(r, code == kExitOk, "run exited " + std::to_string(code) + ": " + err.str());

    auto doc = nlohmann::json::parse(slurp(*o.overrides.out / "report.json"));
    for (const char* key : {"schema_version", "config", "aggregate", "cases", "ledger"}) {
      check(r, doc.contains(key), std::string("report lacks ") + key);
    }
    for (const auto& c : doc["cases"]) {
      for (const char* key : {"case_id", "status", "final_text", "metric_value", "usage"}) {
        check(r, c.contains(key), std::string("case row lacks ") + key);
      }
    }

    RunConfig cfg = RunConfig::load(path);
    Gateway gw = make_gateway(cfg);
    auto prompts = builtin_prompt_set(cfg.task);
    std::map<std::string, std::string> instructions;
    for (const auto& spec : load_dataset(cfg.resolve(cfg.dataset), cfg.task)) {
      instructions[spec.id] = spec.instruction;
    }
    std::map<std::string, int> root_score;
    std::map<std::string, std::string> final_text;
    std::ifstream trees(*o.overrides.out / "trees.jsonl");
    for (std::string line; std::getline(trees, line);) {
      auto n = nlohmann::json::parse(line);
      auto id = n["case_id"].get<std::string>();
      if (n["id"] == 0 && n["expert"].is_object()) root_score[id] = n["expert"]["score"].get<int>();
      final_text[id] = n["text"].get<std::string>();
    }
    int improved = 0;
    for (const auto& [id, text] : final_text) {
      if (!root_score.count(id)) continue;
      auto reply = gw.complete(cfg.endpoint("expert"),
                               render_evaluate_prompt(prompts, instructions.at(id), text),
                               CallPurpose::evaluate);
      auto fb = parse_feedback(reply.text, FeedbackSource::expert, true);
      if (*fb.score > root_score[id]) ++improved;
    }
    check(r, improved >= 1, "no item improved its expert score");
    if (r.ok) {
      r.detail = std::to_string(improved) + " of " + std::to_string(final_text.size()) +
                 " items improved; report has the expected fields";
    }
  } catch (const std::exception& e) {
    check(r, false, std::string("threw ") + e.what());
  }
  report(10, "live smoke test", r);
}

Result guarded(Result (*fn)()) {
  try {
    return fn();
  } catch (const std::exception& e) {
    return Result{false, std::string("threw ") + e.what()};
  }
}

}  // namespace

int main() {
  report(1, "call count 4d", guarded(call_count));
  report(2, "best-first matches oracle", guarded(best_first_oracle));
  report(3, "heuristic formulas", guarded(formulas));
  report(4, "feedback parser", guarded(parser));
  report(5, "coverage metric", guarded(coverage_check));
  report(6, "cosine similarity", guarded(cosine_check));
  report(7, "deterministic reports", guarded(determinism));
  report(8, "cost accounting", guarded(cost_check));
  report(9, "early stop", guarded(early_stop));
  live_smoke();
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " failed") << "\n";
  return failures == 0 ? 0 : 1;
}
