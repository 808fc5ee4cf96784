#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "clear/cli.hpp"
#include "clear/error.hpp"

namespace clear {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr const char* kReportFile = "report.json";
constexpr const char* kTreesFile = "trees.jsonl";
constexpr const char* kTraceFile = "trace.jsonl";
constexpr const char* kLedgerFile = "ledger.json";
constexpr const char* kMetaFile = "run_meta.json";

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::ConfigError, "output_dir: cannot write " + path.string());
  out << text;
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::InsufficientData, "missing " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::ParseError, path.string() + ": " + e.what());
  }
}

TaskPromptSet prompt_set_for(const RunConfig& cfg) {
  return cfg.prompts ? load_prompt_set(cfg.resolve(*cfg.prompts)) : builtin_prompt_set(cfg.task);
}

fs::path output_dir_of(const RunConfig& cfg) { return cfg.resolve(cfg.output_dir); }

RunConfig load_config(const fs::path& path, const Overrides& overrides, bool need_dataset) {
  RunConfig cfg = RunConfig::load(path);
  apply_overrides(cfg, overrides);
  cfg.validate(need_dataset);
  return cfg;
}

std::string trace_lines(const std::string& case_id, const std::vector<CallTrace>& root_calls,
                        const SearchOutcome* outcome) {
  std::string text;
  if (!root_calls.empty()) {
    json calls = json::array();
    for (const auto& c : root_calls) calls.push_back(to_json(c));
    text += json{{"case_id", case_id}, {"iteration", 0}, {"calls", calls}}.dump() + "\n";
  }
  if (outcome != nullptr) {
    for (const auto& it : outcome->trace) {
      json j = to_json(it);
      j["case_id"] = case_id;
      text += j.dump() + "\n";
    }
  }
  return text;
}

int report_error(std::ostream& err, const Error& e) {
  err << "error: " << e.what() << "\n";
  return kExitFatal;
}

}  // namespace

json build_report(const RunConfig& cfg, const BenchmarkReport& report) {
  json cases = json::array();
  for (const auto& rec : report.cases) cases.push_back(to_json(rec.result));
  json doc{{"schema_version", kConfigSchemaVersion},
           {"config", cfg.to_json()},
           {"same_model_contrast", cfg.same_model_contrast()},
           {"aggregate", to_json(report.aggregate)},
           {"cases", cases},
           {"ledger", report.ledger.to_json()}};
  if (!cfg.prices.prices.empty()) {
    try {
      doc["cost"] = cost_report(report.ledger, cfg.prices, report.aggregate.n_cases).to_json();
    } catch (const Error& e) {
      doc["cost"] = json{{"error", e.what()}};
    }
  }
  return doc;
}

int cmd_run(const RunOptions& options, std::ostream& out, std::ostream& err) {
  try {
    RunConfig cfg = load_config(options.config, options.overrides, true);

    DatasetOptions ds;
    ds.top_k = cfg.top_k;
    ds.prompts = prompt_set_for(cfg);
    ds.metric = cfg.metric;
    auto specs = load_dataset(cfg.resolve(cfg.dataset), cfg.task, ds);

    Gateway gateway = make_gateway(cfg);
    auto scorer = make_toxicity_scorer(cfg);
    BenchmarkOptions bench;
    bench.parallel_cases = cfg.parallel_cases;
    bench.toxicity = scorer.get();

    BenchmarkReport report =
        run_benchmark(specs, cfg.search, benchmark_endpoints(cfg), gateway, bench);

    const fs::path dir = output_dir_of(cfg);
    fs::create_directories(dir);

    std::string trees;
    std::string traces;
    for (const auto& rec : report.cases) {
      const std::string& id = rec.result.case_id;
      if (rec.outcome) {
        for (const auto& node : rec.outcome->tree.nodes()) {
          json j = rec.outcome->tree.node_record(node.id);
          j["case_id"] = id;
          trees += j.dump() + "\n";
        }
      }
      traces += trace_lines(id, rec.root_calls, rec.outcome ? &*rec.outcome : nullptr);
    }

    write_text(dir / kReportFile, build_report(cfg, report).dump(2) + "\n");
    write_text(dir / kTreesFile, trees);
    write_text(dir / kTraceFile, traces);
    write_text(dir / kLedgerFile, report.ledger.to_json().dump(2) + "\n");
    write_text(dir / kMetaFile,
               json{{"config", fs::absolute(options.config).lexically_normal().string()}}.dump(2) +
                   "\n");

    const auto& agg = report.aggregate;
    out << "cases " << agg.n_cases << ", scored " << agg.n_scored << ", unscored "
        << agg.n_unscored << ", failed " << agg.n_failed << "\n";
    out << to_string(agg.metric) << " mean " << agg.metric_mean << "\n";
    out << "report " << (dir / kReportFile).string() << "\n";
    for (const auto& rec : report.cases) {
      if (!rec.result.error.empty()) {
        err << "case " << rec.result.case_id << ": " << rec.result.error << "\n";
      }
    }
    return report.partial_failure() ? kExitPartial : kExitOk;
  } catch (const Error& e) {
    return report_error(err, e);
  }
}

int cmd_refine(const RefineOptions& options, std::ostream& out, std::ostream& err) {
  try {
    RunConfig cfg = load_config(options.config, options.overrides, false);

    std::string instruction = options.instruction;
    if (options.instruction_file) {
      std::ifstream in(*options.instruction_file);
      if (!in) {
        throw Error(ErrorKind::ConfigError,
                    "instruction file not found: " + options.instruction_file->string());
      }
      std::ostringstream buf;
      buf << in.rdbuf();
      instruction = buf.str();
    }
    if (instruction.empty()) throw Error(ErrorKind::ConfigError, "instruction is empty");

    Gateway gateway = make_gateway(cfg);
    SearchTask task{cfg.task, instruction, prompt_set_for(cfg)};
    EngineRoles roles = benchmark_endpoints(cfg).roles_for(cfg.task);

    std::vector<CallTrace> root_calls;
    std::string root = options.root_text ? *options.root_text
                                         : generate_root(gateway, roles, task, &root_calls);
    SearchOutcome outcome = run_search(gateway, roles, task, root, cfg.search);

    const fs::path dir = output_dir_of(cfg);
    fs::create_directories(dir);
    write_text(dir / kTraceFile, trace_lines("refine", root_calls, &outcome));
    std::ostringstream tree;
    outcome.tree.write_jsonl(tree);
    write_text(dir / kTreesFile, tree.str());

    out << outcome.tree.node(outcome.final_node).output_text << "\n";
    err << "final node " << outcome.final_node.value << ", iterations " << outcome.iterations_used
        << (outcome.early_stopped ? " (early stop)" : "") << ", calls "
        << gateway.ledger().totals().calls << "\n";
    return kExitOk;
  } catch (const Error& e) {
    return report_error(err, e);
  }
}

int cmd_analyze(const AnalyzeOptions& options, std::ostream& out, std::ostream& err) {
  try {
    if (!options.similarity && !options.cost) {
      throw Error(ErrorKind::ConfigError, "analyze needs --similarity and/or --cost");
    }
    const fs::path dir = options.run_dir;
    const fs::path report_path = dir / kReportFile;
    if (!fs::is_regular_file(report_path)) {
      throw Error(ErrorKind::InsufficientData, "no run found in " + dir.string());
    }
    json report = read_json(report_path);

    fs::path config_path;
    if (options.config) {
      config_path = *options.config;
    } else {
      config_path = read_json(dir / kMetaFile).at("config").get<std::string>();
    }
    RunConfig cfg = RunConfig::load(config_path);

    if (options.similarity) {
      std::map<std::string, std::vector<json>> by_case;
      std::ifstream in(dir / kTreesFile);
      std::string line;
      std::size_t line_no = 0;
      while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
          j = json::parse(line);
        } catch (const json::parse_error& e) {
          throw Error(ErrorKind::ParseError,
                      std::string(kTreesFile) + " line " + std::to_string(line_no) + ": " + e.what());
        }
        by_case[j.value("case_id", std::string())].push_back(std::move(j));
      }
      std::vector<RefinementTree> trees;
      for (const auto& [id, records] : by_case) trees.push_back(RefinementTree::from_records(records));
      if (trees.empty()) throw Error(ErrorKind::InsufficientData, "no trees in " + dir.string());

      Gateway gateway = make_gateway(cfg);
      SimilarityReport sim = feedback_similarity(trees, gateway, cfg.endpoint("embedder"));
      report["similarity"] = sim.to_json();
      for (const auto& [pair, value] : sim.pair_means) out << pair << " " << value << "\n";
    }

    if (options.cost) {
      UsageLedger ledger = UsageLedger::from_json(read_json(dir / kLedgerFile));
      std::optional<std::size_t> n_cases;
      if (report.contains("aggregate")) n_cases = report["aggregate"].value("n_cases", std::size_t{0});
      CostSummary cost = cost_report(ledger, cfg.prices, n_cases);
      report["cost"] = cost.to_json();
      out << "total cost " << cost.total.to_string() << "\n";
      if (auto mean = cost.per_case_mean()) out << "per case " << mean->to_string() << "\n";
    }

    write_text(report_path, report.dump(2) + "\n");
    return kExitOk;
  } catch (const Error& e) {
    return report_error(err, e);
  } catch (const json::exception& e) {
    err << "error: ParseError: " << e.what() << "\n";
    return kExitFatal;
  }
}

}  // namespace clear
