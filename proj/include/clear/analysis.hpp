#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "clear/model_gateway.hpp"
#include "clear/refinement_graph.hpp"

namespace clear {

/// dot(a, b) / (|a| |b|). Throws DimensionMismatch or ZeroVector.
double cosine(std::span<const double> a, std::span<const double> b);

struct SimilarityReport {
  // keys: "expert-amateur", "expert-filtered", "amateur-filtered"
  std::map<std::string, double> pair_means;
  std::size_t n_cases = 0;  // complete nodes averaged over
  std::size_t n_trees = 0;

  nlohmann::json to_json() const;
};

using EmbedFn = std::function<std::vector<double>(std::string_view)>;

/// Averages the three pairwise cosines of every node that carries expert,
/// amateur, and filtered feedback. Each distinct reason text is embedded once.
/// Per-node values are summed in sorted order, so the means do not depend on
/// the order of `trees`.
SimilarityReport feedback_similarity(std::span<const RefinementTree> trees, const EmbedFn& embed);
SimilarityReport feedback_similarity(std::span<const RefinementTree> trees, Gateway& gateway,
                                     const ModelEndpoint& embedder);

/// Exact currency amount in units of 1e-12.
class Money {
 public:
  constexpr Money() = default;
  static constexpr Money from_pico(std::int64_t pico) { return Money(pico); }

  std::int64_t pico() const { return pico_; }
  /// Plain decimal, trailing zeros trimmed: "0.062".
  std::string to_string() const;
  double to_double() const { return static_cast<double>(pico_) / 1e12; }

  Money& operator+=(Money other);
  friend Money operator+(Money a, Money b) { return a += b; }
  friend bool operator==(Money, Money) = default;

 private:
  constexpr explicit Money(std::int64_t pico) : pico_(pico) {}
  std::int64_t pico_ = 0;
};

/// Price per one million tokens, held exactly as integer micro-units.
struct Price {
  std::int64_t input_micro = 0;
  std::int64_t output_micro = 0;
};

/// Parses a non-negative decimal with at most six fractional digits into
/// micro-units ("5" -> 5000000, "0.15" -> 150000).
std::int64_t parse_decimal_micro(std::string_view text);

struct PriceTable {
  std::map<std::string, Price> prices;

  /// {"expert": {"input": 5.0, "output": 15.0}, ...}; numbers or strings.
  static PriceTable from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

/// tokens * price / 1e6, exact.
Money token_cost(std::int64_t tokens, std::int64_t price_micro_per_million);

struct EndpointCost {
  std::string endpoint;
  std::int64_t input_tokens = 0;
  std::int64_t output_tokens = 0;
  Money input_cost;
  Money output_cost;
  Money total;
};

struct CostSummary {
  std::vector<EndpointCost> rows;
  Money total;
  std::optional<std::size_t> case_count;

  /// Mean cost per case, rounded half-up to the nearest 1e-12.
  std::optional<Money> per_case_mean() const;
  nlohmann::json to_json() const;
};

CostSummary cost_report(const UsageLedger& ledger, const PriceTable& prices,
                        std::optional<std::size_t> case_count = std::nullopt);

}  // namespace clear
