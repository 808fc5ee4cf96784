#include "clear/refinement_graph.hpp"

#include <algorithm>
#include <istream>
#include <ostream>
#include <string>

#include "clear/error.hpp"

namespace clear {

using nlohmann::json;

std::string_view to_string(FeedbackSource source) {
  switch (source) {
    case FeedbackSource::expert: return "expert";
    case FeedbackSource::amateur: return "amateur";
    case FeedbackSource::filtered: return "filtered";
  }
  return "expert";
}

FeedbackSource feedback_source_from_string(std::string_view text) {
  if (text == "expert") return FeedbackSource::expert;
  if (text == "amateur") return FeedbackSource::amateur;
  if (text == "filtered") return FeedbackSource::filtered;
  throw Error(ErrorKind::SchemaError, "unknown feedback source '" + std::string(text) + "'");
}

void Feedback::validate() const {
  if (reason.empty()) {
    throw Error(ErrorKind::PreconditionViolation,
                std::string(to_string(source)) + " feedback has an empty reason");
  }
  if (score && (*score < 0 || *score > 100)) {
    throw Error(ErrorKind::ScoreOutOfRange, "score " + std::to_string(*score) + " outside [0, 100]");
  }
}

bool RefinementNode::has_scores() const {
  return expert_feedback && expert_feedback->score && amateur_feedback &&
         amateur_feedback->score;
}

RefinementTree RefinementTree::create_root(std::string output_text) {
  if (output_text.empty()) {
    throw Error(ErrorKind::EmptyOutput, "root output text is empty");
  }
  RefinementTree tree;
  RefinementNode root;
  root.id = NodeId{0};
  root.depth = 0;
  root.output_text = std::move(output_text);
  tree.nodes_.push_back(std::move(root));
  return tree;
}

RefinementNode& RefinementTree::mutable_node(NodeId id) {
  if (!contains(id)) {
    throw Error(ErrorKind::UnknownNode, "node " + std::to_string(id.value) + " does not exist");
  }
  return nodes_[id.value];
}

const RefinementNode& RefinementTree::node(NodeId id) const {
  if (!contains(id)) {
    throw Error(ErrorKind::UnknownNode, "node " + std::to_string(id.value) + " does not exist");
  }
  return nodes_[id.value];
}

void RefinementTree::attach_feedback(NodeId id, Feedback fb) {
  RefinementNode& n = mutable_node(id);
  fb.validate();

  std::optional<Feedback>* slot = nullptr;
  switch (fb.source) {
    case FeedbackSource::expert: slot = &n.expert_feedback; break;
    case FeedbackSource::amateur: slot = &n.amateur_feedback; break;
    case FeedbackSource::filtered: slot = &n.filtered_feedback; break;
  }
  if (slot->has_value()) {
    throw Error(ErrorKind::SlotOccupied, std::string(to_string(fb.source)) +
                                             " feedback already attached to node " +
                                             std::to_string(id.value));
  }
  if (fb.source == FeedbackSource::filtered && (!n.expert_feedback || !n.amateur_feedback)) {
    throw Error(ErrorKind::OrderViolation,
                "filtered feedback requires expert and amateur feedback on node " +
                    std::to_string(id.value));
  }
  if (id == root() && fb.source == FeedbackSource::expert && fb.score) {
    root_expert_score_ = fb.score;
  }
  *slot = std::move(fb);
}

NodeId RefinementTree::add_child(NodeId parent, std::string output_text) {
  const RefinementNode& p = node(parent);
  if (!p.filtered_feedback) {
    throw Error(ErrorKind::ParentNotEvaluated,
                "node " + std::to_string(parent.value) + " has no filtered feedback");
  }
  if (output_text.empty()) {
    throw Error(ErrorKind::EmptyOutput, "child output text is empty");
  }
  RefinementNode child;
  child.id = NodeId{static_cast<std::uint32_t>(nodes_.size())};
  child.parent = parent;
  child.depth = p.depth + 1;
  child.output_text = std::move(output_text);
  nodes_.push_back(std::move(child));
  return nodes_.back().id;
}

std::vector<AncestryEntry> RefinementTree::ancestry(NodeId id) const {
  std::vector<AncestryEntry> path;
  const RefinementNode* current = &node(id);
  while (true) {
    path.push_back({current->output_text, current->filtered_feedback});
    if (!current->parent) break;
    current = &nodes_[current->parent->value];
  }
  std::reverse(path.begin(), path.end());
  return path;
}

json to_json(const Feedback& fb) {
  json j;
  j["source"] = to_string(fb.source);
  j["score"] = fb.score ? json(*fb.score) : json(nullptr);
  j["reason"] = fb.reason;
  j["raw"] = fb.raw;
  return j;
}

Feedback feedback_from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorKind::SchemaError, "feedback record is not an object");
  for (const char* field : {"source", "reason", "raw"}) {
    if (!j.contains(field)) {
      throw Error(ErrorKind::SchemaError, std::string("feedback record missing '") + field + "'");
    }
  }
  Feedback fb;
  fb.source = feedback_source_from_string(j.at("source").get<std::string>());
  if (j.contains("score") && !j.at("score").is_null()) fb.score = j.at("score").get<int>();
  fb.reason = j.at("reason").get<std::string>();
  fb.raw = j.at("raw").get<std::string>();
  return fb;
}

namespace {

json optional_feedback(const std::optional<Feedback>& fb) {
  return fb ? to_json(*fb) : json(nullptr);
}

}  // namespace

json RefinementTree::node_record(NodeId id) const {
  const RefinementNode& n = node(id);
  json j;
  j["id"] = n.id.value;
  j["parent"] = n.parent ? json(n.parent->value) : json(nullptr);
  j["depth"] = n.depth;
  j["text"] = n.output_text;
  j["expert"] = optional_feedback(n.expert_feedback);
  j["amateur"] = optional_feedback(n.amateur_feedback);
  j["filtered"] = optional_feedback(n.filtered_feedback);
  return j;
}

void RefinementTree::write_jsonl(std::ostream& out) const {
  for (const auto& n : nodes_) out << node_record(n.id).dump() << '\n';
}

RefinementTree RefinementTree::from_records(const std::vector<json>& records) {
  if (records.empty()) throw Error(ErrorKind::SchemaError, "tree has no nodes");
  std::vector<const json*> ordered;
  for (const auto& r : records) {
    for (const char* field : {"id", "parent", "depth", "text"}) {
      if (!r.contains(field)) {
        throw Error(ErrorKind::SchemaError, std::string("node record missing '") + field + "'");
      }
    }
    ordered.push_back(&r);
  }
  std::sort(ordered.begin(), ordered.end(), [](const json* a, const json* b) {
    return a->at("id").get<std::uint32_t>() < b->at("id").get<std::uint32_t>();
  });

  // Replaying through the public operations re-checks every invariant.
  auto attach_all = [](RefinementTree& tree, NodeId id, const json& r) {
    for (const char* slot : {"expert", "amateur", "filtered"}) {
      if (r.contains(slot) && !r.at(slot).is_null()) {
        tree.attach_feedback(id, feedback_from_json(r.at(slot)));
      }
    }
  };

  const json& root = *ordered.front();
  if (root.at("id").get<std::uint32_t>() != 0 || !root.at("parent").is_null()) {
    throw Error(ErrorKind::SchemaError, "first node must be the root with id 0");
  }
  RefinementTree tree = create_root(root.at("text").get<std::string>());
  attach_all(tree, tree.root(), root);
  for (std::size_t i = 1; i < ordered.size(); ++i) {
    const json& r = *ordered[i];
    if (r.at("id").get<std::uint32_t>() != i) {
      throw Error(ErrorKind::SchemaError, "node ids are not contiguous at " + std::to_string(i));
    }
    if (r.at("parent").is_null()) {
      throw Error(ErrorKind::SchemaError, "node " + std::to_string(i) + " has no parent");
    }
    NodeId id = tree.add_child(NodeId{r.at("parent").get<std::uint32_t>()},
                               r.at("text").get<std::string>());
    if (tree.node(id).depth != r.at("depth").get<int>()) {
      throw Error(ErrorKind::SchemaError, "depth mismatch on node " + std::to_string(i));
    }
    attach_all(tree, id, r);
  }
  return tree;
}

RefinementTree RefinementTree::read_jsonl(std::istream& in) {
  std::vector<json> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      records.push_back(json::parse(line));
    } catch (const json::parse_error& e) {
      throw Error(ErrorKind::ParseError, "line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return from_records(records);
}

}  // namespace clear
