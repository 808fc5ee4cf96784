#pragma once

#include <compare>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace clear {

/// Creation index of a node inside one tree. Parents always have a smaller id
/// than their children, so the tree is acyclic by construction.
struct NodeId {
  std::uint32_t value = 0;

  friend auto operator<=>(const NodeId&, const NodeId&) = default;
};

enum class FeedbackSource { expert, amateur, filtered };

std::string_view to_string(FeedbackSource source);
FeedbackSource feedback_source_from_string(std::string_view text);

/// A parsed evaluation. `raw` keeps the reply exactly as the model produced it.
struct Feedback {
  FeedbackSource source = FeedbackSource::expert;
  std::optional<int> score;
  std::string reason;
  std::string raw;

  /// Throws PreconditionViolation / ScoreOutOfRange when the value breaks the
  /// feedback invariants (non-empty reason, score within [0, 100]).
  void validate() const;

  friend bool operator==(const Feedback&, const Feedback&) = default;
};

struct RefinementNode {
  NodeId id;
  std::optional<NodeId> parent;
  int depth = 0;
  std::string output_text;
  std::optional<Feedback> expert_feedback;
  std::optional<Feedback> amateur_feedback;
  std::optional<Feedback> filtered_feedback;

  bool fully_evaluated() const { return filtered_feedback.has_value(); }
  bool has_scores() const;

  friend bool operator==(const RefinementNode&, const RefinementNode&) = default;
};

struct AncestryEntry {
  std::string output_text;
  std::optional<Feedback> filtered_feedback;
};

class RefinementTree {
 public:
  static RefinementTree create_root(std::string output_text);

  void attach_feedback(NodeId node, Feedback fb);
  NodeId add_child(NodeId parent, std::string output_text);

  /// Root-to-node path, oldest first.
  std::vector<AncestryEntry> ancestry(NodeId node) const;

  const RefinementNode& node(NodeId id) const;
  bool contains(NodeId id) const { return id.value < nodes_.size(); }
  const std::vector<RefinementNode>& nodes() const { return nodes_; }
  std::size_t size() const { return nodes_.size(); }
  NodeId root() const { return NodeId{0}; }
  NodeId last_created() const {
    return NodeId{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }
  std::optional<int> root_expert_score() const { return root_expert_score_; }

  /// One JSON object per node, newline separated.
  void write_jsonl(std::ostream& out) const;
  static RefinementTree read_jsonl(std::istream& in);

  nlohmann::json node_record(NodeId id) const;
  static RefinementTree from_records(const std::vector<nlohmann::json>& records);

  friend bool operator==(const RefinementTree&, const RefinementTree&) = default;

 private:
  RefinementTree() = default;
  RefinementNode& mutable_node(NodeId id);

  std::vector<RefinementNode> nodes_;
  std::optional<int> root_expert_score_;
};

nlohmann::json to_json(const Feedback& fb);
Feedback feedback_from_json(const nlohmann::json& j);

}  // namespace clear
