#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include <nlohmann/json.hpp>

#include "clear/model_gateway.hpp"
#include "clear/prompt_kit.hpp"
#include "clear/search_engine.hpp"

namespace testing {

/// Backend answering through a callback; records every prompt it sees.
class FnBackend final : public clear::ModelBackend {
 public:
  using Fn = std::function<std::string(const clear::ModelEndpoint&, std::string_view)>;

  explicit FnBackend(Fn fn) : fn_(std::move(fn)) {}

  clear::CompletionResult complete(const clear::ModelEndpoint& endpoint, std::string_view prompt,
                                   const clear::SamplingParams& params) override {
    {
      std::lock_guard lock(mutex_);
      prompts_.emplace_back(prompt);
      temperatures_.push_back(params.temperature);
    }
    clear::CompletionResult r;
    r.text = fn_(endpoint, prompt);
    r.input_tokens = clear::estimate_tokens(prompt);
    r.output_tokens = clear::estimate_tokens(r.text);
    r.estimated = true;
    r.endpoint_name = endpoint.name;
    return r;
  }

  std::vector<double> embed(const clear::ModelEndpoint&, std::string_view) override {
    return {1.0};
  }

  std::unique_ptr<clear::ModelBackend> fork() const override {
    return std::make_unique<FnBackend>(fn_);
  }

  std::vector<std::string> prompts() const {
    std::lock_guard lock(mutex_);
    return prompts_;
  }
  std::vector<double> temperatures() const {
    std::lock_guard lock(mutex_);
    return temperatures_;
  }

 private:
  Fn fn_;
  mutable std::mutex mutex_;
  std::vector<std::string> prompts_;
  std::vector<double> temperatures_;
};

inline clear::ModelEndpoint endpoint(const std::string& name, clear::EndpointRole role) {
  clear::ModelEndpoint e;
  e.name = name;
  e.base_url = "scripted:" + name;
  e.model_id = name + "-model";
  e.role = role;
  return e;
}

inline clear::EngineRoles roles() {
  auto expert = endpoint("expert", clear::EndpointRole::expert);
  auto amateur = endpoint("amateur", clear::EndpointRole::amateur);
  return clear::EngineRoles{expert, amateur, expert, expert};
}

/// Marker templates that make each call kind easy to recognise.
inline clear::TaskPromptSet marker_prompts() {
  clear::TaskPromptSet set;
  set.task_kind = clear::TaskKind::custom;
  set.templates[0] = {clear::PromptKind::evaluate, "EVAL {task} <<{response}>>"};
  set.templates[1] = {clear::PromptKind::filter, "FILTER {Expert} || {Amateur}"};
  set.templates[2] = {clear::PromptKind::generate_child,
                      "CHILD {task}\nHISTORY {history}\nLATEST <<{response}>>\nADVICE {feedback}"};
  set.templates[3] = {clear::PromptKind::generate_root, "ROOT {task}"};
  return set;
}

inline clear::SearchTask marker_task(clear::TaskKind kind = clear::TaskKind::custom) {
  return clear::SearchTask{kind, "do the thing", marker_prompts()};
}

inline bool starts_with(std::string_view s, std::string_view prefix) {
  return s.substr(0, prefix.size()) == prefix;
}

/// Text between "<<" and ">>" after the EVAL marker.
inline std::string evaluated_text(std::string_view prompt) {
  auto a = prompt.find("<<");
  auto b = prompt.rfind(">>");
  return std::string(prompt.substr(a + 2, b - a - 2));
}

/// Scores per node, keyed by node text "n<k>". Children are numbered in
/// creation order, so the k-th generate call yields "n<k>".
struct ScoreScript {
  std::vector<int> expert;
  std::vector<int> amateur;
};

inline FnBackend::Fn scored_responder(ScoreScript scores) {
  auto counter = std::make_shared<std::atomic<int>>(0);
  return [scores, counter](const clear::ModelEndpoint& e, std::string_view prompt) -> std::string {
    if (starts_with(prompt, "FILTER")) return "[reason] merged advice";
    if (starts_with(prompt, "CHILD")) return "n" + std::to_string(++*counter);
    if (starts_with(prompt, "ROOT")) return "n0";
    std::size_t k = std::stoul(evaluated_text(prompt).substr(1));
    int s = e.role == clear::EndpointRole::expert ? scores.expert.at(k) : scores.amateur.at(k);
    return "[" + std::to_string(s) + "] [reason] note for n" + std::to_string(k);
  };
}

inline std::filesystem::path temp_dir(const std::string& name) {
  static std::atomic<int> serial{0};
  auto dir = std::filesystem::temp_directory_path() /
             ("clear_test_" + std::to_string(::getpid()) + "_" + name + "_" +
              std::to_string(serial++));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

/// Street scene example: 23 concepts, a draft missing "clip" and a refined text.
struct StreetScene {
  std::vector<std::string> concepts;
  std::string draft;
  std::string refined;
};

inline StreetScene street_scene() {
  std::ifstream in(CLEAR_TEST_DATA_DIR "/street_scene.json");
  auto doc = nlohmann::json::parse(in);
  return {doc.at("concepts").get<std::vector<std::string>>(), doc.at("draft").get<std::string>(),
          doc.at("refined").get<std::string>()};
}

inline std::string write_file(const std::filesystem::path& path, const std::string& body) {
  std::ofstream(path) << body;
  return path.string();
}

}  // namespace testing
