#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "clear/cli.hpp"
#include "clear/error.hpp"

namespace {

void add_overrides(CLI::App* cmd, clear::Overrides& o, std::string& mode, std::string& heuristic,
                   std::string& cache_dir, std::string& out) {
  cmd->add_option("--d", o.d, "refinement iterations");
  cmd->add_option("--mode", mode, "chain or best-first");
  cmd->add_option("--heuristic", heuristic,
                  "equal-weighting, expert-weighted, expert-only or amateur-only");
  cmd->add_option("--parallel", o.parallel, "benchmark cases run at once");
  cmd->add_option("--seed", o.seed, "seed for the scripted backend");
  cmd->add_flag("--allow-same-model", o.allow_same_model,
                "permit identical expert and amateur endpoints");
  cmd->add_option("--cache-dir", cache_dir, "response cache directory");
  cmd->add_option("--out", out, "output directory");
}

void finish_overrides(clear::Overrides& o, const std::string& mode, const std::string& heuristic,
                      const std::string& cache_dir, const std::string& out) {
  if (!mode.empty()) o.mode = clear::search_mode_from_string(mode);
  if (!heuristic.empty()) o.heuristic = clear::heuristic_from_string(heuristic);
  if (!cache_dir.empty()) o.cache_dir = cache_dir;
  if (!out.empty()) o.out = out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Contrastive expert/amateur feedback refinement"};
  app.require_subcommand(1);

  clear::RunOptions run;
  clear::RefineOptions refine;
  clear::AnalyzeOptions analyze;
  std::string mode, heuristic, cache_dir, out;
  std::string instruction_file, root_text, analyze_config;

  auto* run_cmd = app.add_subcommand("run", "benchmark a dataset");
  std::string run_config;
  run_cmd->add_option("--config", run_config, "run configuration (JSON)")->required();
  add_overrides(run_cmd, run.overrides, mode, heuristic, cache_dir, out);

  auto* refine_cmd = app.add_subcommand("refine", "refine a single instruction");
  std::string refine_config;
  refine_cmd->add_option("--config", refine_config, "run configuration (JSON)")->required();
  refine_cmd->add_option("instruction", refine.instruction, "instruction text");
  refine_cmd->add_option("--file", instruction_file, "read the instruction from a file");
  refine_cmd->add_option("--root", root_text, "initial output instead of generating one");
  add_overrides(refine_cmd, refine.overrides, mode, heuristic, cache_dir, out);

  auto* analyze_cmd = app.add_subcommand("analyze", "similarity and cost over a finished run");
  std::string run_dir;
  analyze_cmd->add_option("run_dir", run_dir, "output directory of a run")->required();
  analyze_cmd->add_flag("--similarity", analyze.similarity, "feedback embedding similarity");
  analyze_cmd->add_flag("--cost", analyze.cost, "token cost from the price table");
  analyze_cmd->add_option("--config", analyze_config, "configuration to use instead of the recorded one");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run_cmd) {
      run.config = run_config;
      finish_overrides(run.overrides, mode, heuristic, cache_dir, out);
      return clear::cmd_run(run, std::cout, std::cerr);
    }
    if (*refine_cmd) {
      refine.config = refine_config;
      if (!instruction_file.empty()) refine.instruction_file = instruction_file;
      if (!root_text.empty()) refine.root_text = root_text;
      finish_overrides(refine.overrides, mode, heuristic, cache_dir, out);
      return clear::cmd_refine(refine, std::cout, std::cerr);
    }
    analyze.run_dir = run_dir;
    if (!analyze_config.empty()) analyze.config = analyze_config;
    return clear::cmd_analyze(analyze, std::cout, std::cerr);
  } catch (const clear::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return clear::kExitFatal;
  }
}
