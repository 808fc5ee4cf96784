#include <fstream>
#include <random>

#include <doctest.h>

#include "clear/error.hpp"
#include "clear/prompt_kit.hpp"
#include "clear/refinement_graph.hpp"
#include "generators.hpp"

using namespace clear;

namespace {

bool contains(std::string_view hay, std::string_view needle) {
  return hay.find(needle) != std::string_view::npos;
}

std::size_t count(std::string_view hay, std::string_view needle) {
  std::size_t n = 0;
  for (auto p = hay.find(needle); p != std::string_view::npos; p = hay.find(needle, p + 1)) ++n;
  return n;
}

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::ParseError;
}

Feedback filtered(std::string reason) {
  return Feedback{FeedbackSource::filtered, std::nullopt, reason, "[reason] " + reason};
}

RefinementTree chain(int depth) {
  auto tree = RefinementTree::create_root("text0");
  NodeId cur = tree.root();
  for (int i = 1; i <= depth; ++i) {
    tree.attach_feedback(cur, Feedback{FeedbackSource::expert, 50, "e", "[50] [reason] e"});
    tree.attach_feedback(cur, Feedback{FeedbackSource::amateur, 40, "a", "[40] [reason] a"});
    tree.attach_feedback(cur, filtered("advice" + std::to_string(i - 1)));
    cur = tree.add_child(cur, "text" + std::to_string(i));
  }
  return tree;
}

}  // namespace

TEST_SUITE("prompt_kit") {
  TEST_CASE("built-in sets validate and keep the reply format clauses") {
    for (TaskKind k : {TaskKind::constrained_generation, TaskKind::story_outline, TaskKind::math,
                       TaskKind::toxicity}) {
      auto set = builtin_prompt_set(k);
      for (const auto& t : set.templates) CHECK_NOTHROW(t.validate());
      CHECK(contains(set.get(PromptKind::filter).body, "focus slightly more on the expert"));
      CHECK(contains(set.get(PromptKind::filter).body, "Format: [reason]xxxx (MAX 50 words.)"));
    }
    CHECK(contains(builtin_prompt_set(TaskKind::constrained_generation).get(PromptKind::evaluate).body,
                   "[0-100 based on coverage]"));
    CHECK(contains(builtin_prompt_set(TaskKind::story_outline).get(PromptKind::evaluate).body,
                   "[0-100 based on interestingness]"));
    CHECK(contains(builtin_prompt_set(TaskKind::toxicity).get(PromptKind::evaluate).body,
                   "[0-100 where 0 is the most toxic]"));
    CHECK(kind_of([] { builtin_prompt_set(TaskKind::custom); }) == ErrorKind::ConfigError);
  }

  TEST_CASE("evaluate prompt for math") {
    auto set = builtin_prompt_set(TaskKind::math);
    auto p = render_evaluate_prompt(set, "2+2?", "5");
    CHECK(contains(p, "The task: 2+2?"));
    CHECK(contains(p, "Example response: 5"));
    CHECK(contains(p, "[0-100 based on accuracy]"));
    CHECK(contains(p, "[100][reason] Answer is fully correct."));
    CHECK(render_evaluate_prompt(set, "2+2?", "5") == p);
  }

  TEST_CASE("substituted values are not expanded again") {
    auto set = builtin_prompt_set(TaskKind::math);
    auto p = render_evaluate_prompt(set, "the task", "I wrote {task} and {response}");
    CHECK(contains(p, "I wrote {task} and {response}"));
    CHECK(count(p, "the task") == 1);
  }

  TEST_CASE("templates with missing or repeated placeholders are rejected") {
    auto set = builtin_prompt_set(TaskKind::math);
    set.templates[0].body = "The task: {task}";
    CHECK(kind_of([&] { render_evaluate_prompt(set, "t", "r"); }) == ErrorKind::MissingPlaceholder);
    set.templates[0].body = "{task} {response} {response}";
    CHECK(kind_of([&] { render_evaluate_prompt(set, "t", "r"); }) == ErrorKind::MissingPlaceholder);
    PromptTemplate filter{PromptKind::filter, "{Expert} only"};
    CHECK(kind_of([&] { filter.validate(); }) == ErrorKind::MissingPlaceholder);
  }

  TEST_CASE("filter prompt binds both raw replies") {
    auto set = builtin_prompt_set(TaskKind::constrained_generation);
    Feedback e{FeedbackSource::expert, 80, "good", "[80][reason] good"};
    Feedback a{FeedbackSource::amateur, 60, "ok", "[60][reason] ok"};
    auto p = render_filter_prompt(set, e, a);
    CHECK(contains(p, "Expert:[80][reason] good. Amateur:[60][reason] ok"));

    auto same = render_filter_prompt(set, e, Feedback{FeedbackSource::amateur, 80, "good", e.raw});
    CHECK(count(same, "[80][reason] good") == 2);

    Feedback empty{FeedbackSource::amateur, 60, "", "[60][reason]"};
    CHECK(kind_of([&] { render_filter_prompt(set, e, empty); }) == ErrorKind::PreconditionViolation);
  }

  TEST_CASE("child prompt history blocks") {
    auto set = builtin_prompt_set(TaskKind::constrained_generation);

    SUBCASE("root parent has no earlier attempts") {
      auto tree = chain(1);
      const auto& root = tree.node(tree.root());
      auto p = render_child_prompt(set, "make a sentence", root, *root.filtered_feedback,
                                   tree.ancestry(root.id));
      CHECK(contains(p, "Latest response: text0"));
      CHECK(contains(p, "Earlier attempts:\nNone."));
      CHECK(contains(p, "Feedback: advice0"));
      CHECK(count(p, "Attempt ") == 0);
    }

    SUBCASE("depth-3 parent lists the path root first") {
      auto tree = chain(4);
      NodeId parent{3};
      const auto& node = tree.node(parent);
      auto path = tree.ancestry(parent);
      REQUIRE(path.size() == 4);
      auto p = render_child_prompt(set, "make a sentence", node, *node.filtered_feedback, path);
      CHECK(count(p, "Attempt ") == 3);
      auto a1 = p.find("Attempt 1:\ntext0");
      auto a2 = p.find("Attempt 2:\ntext1");
      auto a3 = p.find("Attempt 3:\ntext2");
      REQUIRE(a1 != std::string::npos);
      CHECK(a1 < a2);
      CHECK(a2 < a3);
      CHECK(contains(p, "Latest response: text3"));
      CHECK(contains(p, "Feedback: advice3"));
    }

    SUBCASE("history_limit 1 keeps only the parent") {
      auto tree = chain(4);
      const auto& node = tree.node(NodeId{3});
      auto p = render_child_prompt(set, "make a sentence", node, *node.filtered_feedback,
                                   tree.ancestry(node.id), 1);
      CHECK(count(p, "Attempt ") == 0);
      CHECK(contains(p, "Latest response: text3"));
      CHECK_FALSE(contains(p, "text0"));
    }

    SUBCASE("history_limit 2 keeps the parent and its parent") {
      auto tree = chain(4);
      const auto& node = tree.node(NodeId{3});
      auto p = render_child_prompt(set, "make a sentence", node, *node.filtered_feedback,
                                   tree.ancestry(node.id), 2);
      CHECK(count(p, "Attempt ") == 1);
      CHECK(contains(p, "Attempt 1:\ntext2\nFeedback: advice2"));
    }
  }

  TEST_CASE("parse_feedback examples") {
    auto a = parse_feedback("[31] [reason] too few concepts covered", FeedbackSource::expert, true);
    CHECK(a.score == 31);
    CHECK(a.reason == "too few concepts covered");

    auto b = parse_feedback("[100][reason] Answer is fully correct.", FeedbackSource::expert, true);
    CHECK(b.score == 100);
    CHECK(b.reason == "Answer is fully correct.");
    CHECK(b.raw == "[100][reason] Answer is fully correct.");

    CHECK(kind_of([] { parse_feedback("great job overall", FeedbackSource::expert, true); }) ==
          ErrorKind::MalformedFeedback);

    auto c = parse_feedback("[reason] contrasted advice here", FeedbackSource::filtered, false);
    CHECK_FALSE(c.score.has_value());
    CHECK(c.reason == "contrasted advice here");
  }

  TEST_CASE("parse_feedback details") {
    auto echo = parse_feedback("[0-100 based on coverage] [42] [reason] ok", FeedbackSource::expert, true);
    CHECK(echo.score == 42);
    auto upper = parse_feedback("[7] [Reason] fine", FeedbackSource::amateur, true);
    CHECK(upper.score == 7);
    CHECK(upper.reason == "fine");
    auto padded = parse_feedback("  [ 9 ]   [reason]   spaced out  \n", FeedbackSource::expert, true);
    CHECK(padded.score == 9);
    CHECK(padded.reason == "spaced out");
    CHECK(parse_feedback("[007] [reason] x", FeedbackSource::expert, true).score == 7);
    CHECK(kind_of([] { parse_feedback("[101] [reason] x", FeedbackSource::expert, true); }) ==
          ErrorKind::ScoreOutOfRange);
    CHECK(kind_of([] { parse_feedback("[99999999999999] [reason] x", FeedbackSource::expert, true); }) ==
          ErrorKind::ScoreOutOfRange);
    CHECK(kind_of([] { parse_feedback("", FeedbackSource::expert, true); }) ==
          ErrorKind::MalformedFeedback);
    try {
      parse_feedback("no marker here", FeedbackSource::expert, true);
    } catch (const Error& e) {
      CHECK(contains(e.what(), "no marker here"));
    }
  }

  TEST_CASE("round trip over generated score and reason pairs") {
    std::mt19937_64 rng(11);
    for (int i = 0; i < 2000; ++i) {
      int s = static_cast<int>(rng() % 101);
      std::string r = gen::reason(rng);
      std::string text = gen::feedback_line(rng, s, r);
      auto parsed = parse_feedback(text, FeedbackSource::expert, true);
      REQUIRE(parsed.score == s);
      REQUIRE(parsed.reason == r);
    }
  }

  TEST_CASE("malformed corpus is rejected without crashing") {
    auto entries = gen::malformed_corpus();
    REQUIRE(entries.size() >= 20);
    for (const auto& raw : entries) {
      CAPTURE(raw);
      CHECK(kind_of([&] { parse_feedback(raw, FeedbackSource::expert, true); }) ==
            ErrorKind::MalformedFeedback);
    }
  }

  TEST_CASE("arbitrary bytes give a value or a typed error") {
    std::mt19937_64 rng(5);
    const std::string alphabet = "[]0123456789-reason REASON\n\t.x";
    for (int i = 0; i < 5000; ++i) {
      std::string raw;
      std::size_t len = rng() % 40;
      for (std::size_t k = 0; k < len; ++k) {
        raw += (rng() % 8 == 0) ? static_cast<char>(rng() % 256) : alphabet[rng() % alphabet.size()];
      }
      try {
        auto fb = parse_feedback(raw, FeedbackSource::expert, rng() % 2 == 0);
        CHECK_FALSE(fb.reason.empty());
        if (fb.score) CHECK((*fb.score >= 0 && *fb.score <= 100));
      } catch (const Error& e) {
        CHECK((e.kind() == ErrorKind::MalformedFeedback || e.kind() == ErrorKind::ScoreOutOfRange));
      }
    }
  }

  TEST_CASE("prompt set documents") {
    auto set = builtin_prompt_set(TaskKind::math);
    auto back = prompt_set_from_json(to_json(set));
    for (std::size_t i = 0; i < 4; ++i) CHECK(back.templates[i].body == set.templates[i].body);
    auto doc = to_json(set);
    doc.erase("filter");
    CHECK(kind_of([&] { prompt_set_from_json(doc); }) == ErrorKind::SchemaError);
  }

  TEST_CASE("word count") {
    CHECK(word_count("") == 0);
    CHECK(word_count("  one two\tthree\n") == 3);
  }
}
