#include "clear/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "clear/error.hpp"

namespace clear {

using nlohmann::json;

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw Error(ErrorKind::DimensionMismatch, "vectors of dimension " + std::to_string(a.size()) +
                                                  " and " + std::to_string(b.size()));
  }
  double dot = 0.0;
  double na = 0.0;
  double nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw Error(ErrorKind::ZeroVector, "cosine of a zero vector");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

json SimilarityReport::to_json() const {
  return json{{"pair_means", pair_means},
              {"n_cases", n_cases},
              {"n_trees", n_trees},
              {"scope", "all nodes with expert, amateur and filtered feedback"},
              {"text", "feedback reason"}};
}

SimilarityReport feedback_similarity(std::span<const RefinementTree> trees, const EmbedFn& embed) {
  std::map<std::string, std::vector<double>> vectors;
  auto vec = [&](const std::string& text) -> const std::vector<double>& {
    auto it = vectors.find(text);
    if (it == vectors.end()) it = vectors.emplace(text, embed(text)).first;
    return it->second;
  };

  std::vector<double> ea, ef, af;
  for (const auto& tree : trees) {
    for (const auto& n : tree.nodes()) {
      if (!n.expert_feedback || !n.amateur_feedback || !n.filtered_feedback) continue;
      const auto& e = vec(n.expert_feedback->reason);
      const auto& a = vec(n.amateur_feedback->reason);
      const auto& f = vec(n.filtered_feedback->reason);
      ea.push_back(cosine(e, a));
      ef.push_back(cosine(e, f));
      af.push_back(cosine(a, f));
    }
  }
  if (ea.empty()) {
    throw Error(ErrorKind::InsufficientData, "no node carries all three feedback texts");
  }

  auto mean = [](std::vector<double> values) {
    std::sort(values.begin(), values.end());
    double sum = 0.0;
    for (double v : values) sum += v;
    return sum / static_cast<double>(values.size());
  };
  SimilarityReport report;
  report.n_cases = ea.size();
  report.n_trees = trees.size();
  report.pair_means["expert-amateur"] = mean(ea);
  report.pair_means["expert-filtered"] = mean(ef);
  report.pair_means["amateur-filtered"] = mean(af);
  return report;
}

SimilarityReport feedback_similarity(std::span<const RefinementTree> trees, Gateway& gateway,
                                     const ModelEndpoint& embedder) {
  return feedback_similarity(
      trees, [&](std::string_view text) { return gateway.embed(embedder, text); });
}

// --- money ---------------------------------------------------------------------

namespace {

constexpr std::int64_t kPicoPerUnit = 1'000'000'000'000;

std::int64_t checked(__int128 value) {
  if (value > std::numeric_limits<std::int64_t>::max() ||
      value < std::numeric_limits<std::int64_t>::min()) {
    throw Error(ErrorKind::ConfigError, "cost exceeds the representable range");
  }
  return static_cast<std::int64_t>(value);
}

}  // namespace

std::string Money::to_string() const {
  std::int64_t v = pico_;
  std::string sign = v < 0 ? "-" : "";
  auto magnitude = static_cast<unsigned long long>(v < 0 ? -static_cast<__int128>(v) : v);
  std::string whole = std::to_string(magnitude / kPicoPerUnit);
  std::string frac = std::to_string(magnitude % kPicoPerUnit);
  frac.insert(0, 12 - frac.size(), '0');
  while (frac.size() > 1 && frac.back() == '0') frac.pop_back();
  return sign + whole + "." + frac;
}

Money& Money::operator+=(Money other) {
  pico_ = checked(static_cast<__int128>(pico_) + other.pico_);
  return *this;
}

std::int64_t parse_decimal_micro(std::string_view text) {
  auto bad = [&] {
    return Error(ErrorKind::ConfigError, "price '" + std::string(text) + "' is not a decimal");
  };
  if (text.empty()) throw bad();
  std::size_t dot = text.find('.');
  std::string_view whole = text.substr(0, dot);
  std::string_view frac = dot == std::string_view::npos ? std::string_view() : text.substr(dot + 1);
  // Trailing zeros beyond six places carry no value ("5.0000000").
  while (frac.size() > 6 && frac.back() == '0') frac.remove_suffix(1);
  if (whole.empty() || frac.size() > 6) throw bad();
  if (dot != std::string_view::npos && frac.empty() && text.back() != '.') throw bad();
  __int128 value = 0;
  for (char c : whole) {
    if (c < '0' || c > '9') throw bad();
    value = value * 10 + (c - '0');
  }
  for (std::size_t i = 0; i < 6; ++i) {
    char c = i < frac.size() ? frac[i] : '0';
    if (c < '0' || c > '9') throw bad();
    value = value * 10 + (c - '0');
  }
  return checked(value);
}

PriceTable PriceTable::from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorKind::ConfigError, "prices is not an object");
  auto micro = [](const json& v, const std::string& where) {
    if (v.is_string()) return parse_decimal_micro(v.get<std::string>());
    if (v.is_number_integer() || v.is_number_unsigned()) {
      if (v.get<std::int64_t>() < 0) throw Error(ErrorKind::ConfigError, where + " is negative");
      return parse_decimal_micro(v.dump());
    }
    if (v.is_number_float()) {
      if (v.get<double>() < 0) throw Error(ErrorKind::ConfigError, where + " is negative");
      return parse_decimal_micro(v.dump());
    }
    throw Error(ErrorKind::ConfigError, where + " must be a number");
  };
  PriceTable table;
  for (const auto& [name, p] : j.items()) {
    const std::string where = "prices." + name;
    if (!p.contains("input") || !p.contains("output")) {
      throw Error(ErrorKind::ConfigError, where + " needs 'input' and 'output'");
    }
    table.prices[name] = Price{micro(p.at("input"), where + ".input"),
                               micro(p.at("output"), where + ".output")};
  }
  return table;
}

json PriceTable::to_json() const {
  json j = json::object();
  for (const auto& [name, p] : prices) {
    j[name] = {{"input", Money::from_pico(p.input_micro * 1'000'000).to_string()},
               {"output", Money::from_pico(p.output_micro * 1'000'000).to_string()}};
  }
  return j;
}

Money token_cost(std::int64_t tokens, std::int64_t price_micro_per_million) {
  // tokens * (price_micro * 1e-6) / 1e6 currency == tokens * price_micro pico.
  return Money::from_pico(checked(static_cast<__int128>(tokens) * price_micro_per_million));
}

std::optional<Money> CostSummary::per_case_mean() const {
  if (!case_count || *case_count == 0) return std::nullopt;
  __int128 n = static_cast<__int128>(*case_count);
  __int128 t = total.pico();
  __int128 q = (t >= 0 ? t + n / 2 : t - n / 2) / n;
  return Money::from_pico(checked(q));
}

json CostSummary::to_json() const {
  json rows_json = json::array();
  for (const auto& r : rows) {
    rows_json.push_back(json{{"endpoint", r.endpoint},
                             {"input_tokens", r.input_tokens},
                             {"output_tokens", r.output_tokens},
                             {"input_cost", r.input_cost.to_string()},
                             {"output_cost", r.output_cost.to_string()},
                             {"total", r.total.to_string()}});
  }
  json j{{"rows", rows_json}, {"total", total.to_string()}, {"unit", "currency per price table"}};
  if (auto mean = per_case_mean()) {
    j["case_count"] = *case_count;
    j["per_case_mean"] = mean->to_string();
  }
  return j;
}

CostSummary cost_report(const UsageLedger& ledger, const PriceTable& prices,
                        std::optional<std::size_t> case_count) {
  CostSummary summary;
  summary.case_count = case_count;
  for (const auto& [name, row] : ledger.rows()) {
    auto it = prices.prices.find(name);
    if (it == prices.prices.end()) {
      throw Error(ErrorKind::UnpricedEndpoint, "endpoint '" + name + "' has no price");
    }
    EndpointCost c;
    c.endpoint = name;
    c.input_tokens = row.input_tokens;
    c.output_tokens = row.output_tokens;
    c.input_cost = token_cost(row.input_tokens, it->second.input_micro);
    c.output_cost = token_cost(row.output_tokens, it->second.output_micro);
    c.total = c.input_cost + c.output_cost;
    summary.total += c.total;
    summary.rows.push_back(std::move(c));
  }
  return summary;
}

}  // namespace clear
