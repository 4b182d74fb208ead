#pragma once

// Learning-rule DSL. A rule is written as
//
//   dw = 2*y1*(x2 - x1) + 2*x1 - 2*x2
//
// and canonicalized into a sum of products sum_k C_k prod_l F_kl by
// distributing products over sums and folding constants. Variables:
//   x0, y0   pre/post spike indicator of the current step
//   x1, x2   pre-synaptic traces
//   y1, y2   post-synaptic traces
//   w        current effective weight
//
// Grammar (whitespace insignificant):
//   rule   := "dw" "=" expr
//   expr   := term (("+" | "-") term)*
//   term   := unary ("*" unary)*
//   unary  := ("+" | "-") unary | factor
//   factor := number | var | "(" expr ")"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sgp/error.hpp"
#include "sgp/trace.hpp"

namespace sgp {

// Declaration order is the lexicographic order of the names.
enum class RuleVar : unsigned char { w, x0, x1, x2, y0, y1, y2 };

inline constexpr std::array<std::string_view, 7> kRuleVarNames{"w", "x0", "x1", "x2", "y0", "y1", "y2"};

inline std::string_view name_of(RuleVar v) { return kRuleVarNames[static_cast<std::size_t>(v)]; }

inline std::optional<RuleVar> rule_var_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kRuleVarNames.size(); ++i)
    if (kRuleVarNames[i] == name) return static_cast<RuleVar>(i);
  return std::nullopt;
}

/// A factor evaluates to value(var) + offset.
struct FactorRef {
  RuleVar var;
  double offset = 0.0;
  friend bool operator==(const FactorRef&, const FactorRef&) = default;
};

struct Product {
  double constant = 0.0;
  std::vector<FactorRef> factors;
  friend bool operator==(const Product&, const Product&) = default;
};

struct SumOfProductsRule {
  std::vector<Product> products;
  friend bool operator==(const SumOfProductsRule&, const SumOfProductsRule&) = default;
};

namespace detail {

// Polynomial over rule variables: sorted monomial -> coefficient.
using Monomial = std::vector<RuleVar>;
using Polynomial = std::map<Monomial, double>;

inline Polynomial poly_add(Polynomial a, const Polynomial& b, double sign) {
  for (const auto& [m, c] : b) a[m] += sign * c;
  return a;
}

inline Polynomial poly_mul(const Polynomial& a, const Polynomial& b) {
  Polynomial out;
  for (const auto& [ma, ca] : a) {
    for (const auto& [mb, cb] : b) {
      Monomial m;
      m.reserve(ma.size() + mb.size());
      std::ranges::merge(ma, mb, std::back_inserter(m));
      out[m] += ca * cb;
    }
  }
  return out;
}

class RuleParser {
 public:
  explicit RuleParser(std::string_view text) : text_(text) {}

  Polynomial parse_rule() {
    skip_ws();
    if (pos_ == text_.size()) throw EmptyRuleError("empty rule");
    expect_word("dw");
    skip_ws();
    if (!consume('=')) throw RuleSyntaxError("expected '='", pos_);
    skip_ws();
    if (pos_ == text_.size()) throw EmptyRuleError("rule has no right-hand side");
    Polynomial p = parse_expr();
    skip_ws();
    if (pos_ != text_.size()) throw RuleSyntaxError("unexpected character '" + std::string(1, text_[pos_]) + "'", pos_);
    return p;
  }

 private:
  Polynomial parse_expr() {
    Polynomial acc = parse_term();
    for (;;) {
      skip_ws();
      if (consume('+')) {
        acc = poly_add(std::move(acc), parse_term(), 1.0);
      } else if (consume('-')) {
        acc = poly_add(std::move(acc), parse_term(), -1.0);
      } else {
        return acc;
      }
    }
  }

  Polynomial parse_term() {
    Polynomial acc = parse_unary();
    for (;;) {
      skip_ws();
      if (!consume('*')) return acc;
      acc = poly_mul(acc, parse_unary());
    }
  }

  Polynomial parse_unary() {
    skip_ws();
    if (consume('-')) return poly_mul(Polynomial{{Monomial{}, -1.0}}, parse_unary());
    if (consume('+')) return parse_unary();
    return parse_factor();
  }

  Polynomial parse_factor() {
    skip_ws();
    if (pos_ == text_.size()) throw RuleSyntaxError("unexpected end of rule", pos_);
    const char c = text_[pos_];
    if (c == '(') {
      ++pos_;
      Polynomial inner = parse_expr();
      skip_ws();
      if (!consume(')')) throw RuleSyntaxError("expected ')'", pos_);
      return inner;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
      double value = 0.0;
      const char* first = text_.data() + pos_;
      const auto [ptr, ec] = std::from_chars(first, text_.data() + text_.size(), value);
      if (ec != std::errc{}) throw RuleSyntaxError("malformed number", pos_);
      pos_ += static_cast<std::size_t>(ptr - first);
      return Polynomial{{Monomial{}, value}};
    }
    if (std::isalpha(static_cast<unsigned char>(c))) {
      const std::size_t start = pos_;
      while (pos_ < text_.size() && std::isalnum(static_cast<unsigned char>(text_[pos_]))) ++pos_;
      const std::string_view word = text_.substr(start, pos_ - start);
      const auto var = rule_var_from_name(word);
      if (!var) throw UnknownVariableError("unknown variable '" + std::string(word) + "'", start);
      return Polynomial{{Monomial{*var}, 1.0}};
    }
    throw RuleSyntaxError("unexpected character '" + std::string(1, c) + "'", pos_);
  }

  void expect_word(std::string_view w) {
    if (text_.substr(pos_, w.size()) != w) throw RuleSyntaxError("rule must start with 'dw'", pos_);
    pos_ += w.size();
  }

  bool consume(char c) {
    if (pos_ < text_.size() && text_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

inline std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  // Shorter form when it round-trips.
  char shortbuf[40];
  std::snprintf(shortbuf, sizeof shortbuf, "%.15g", v);
  return std::strtod(shortbuf, nullptr) == v ? shortbuf : buf;
}

}  // namespace detail

inline SumOfProductsRule parse_rule(std::string_view text) {
  const detail::Polynomial poly = detail::RuleParser(text).parse_rule();
  SumOfProductsRule rule;
  // std::map iteration gives the lexicographic order of factor names.
  for (const auto& [monomial, c] : poly) {
    if (c == 0.0) continue;
    Product p{.constant = c};
    for (RuleVar v : monomial) p.factors.push_back(FactorRef{v});
    rule.products.push_back(std::move(p));
  }
  if (rule.products.empty()) throw EmptyRuleError("rule folds to zero");
  return rule;
}

/// Pretty-prints a rule in the DSL; parse_rule(to_string(r)) == r for canonical r.
inline std::string to_string(const SumOfProductsRule& rule) {
  std::string out = "dw =";
  bool first = true;
  for (const Product& p : rule.products) {
    const double mag = std::abs(p.constant);
    out += first ? (p.constant < 0 ? " -" : " ") : (p.constant < 0 ? " - " : " + ");
    first = false;
    std::string body;
    if (mag != 1.0 || p.factors.empty()) body = detail::format_number(mag);
    for (const FactorRef& f : p.factors) {
      if (!body.empty()) body += "*";
      if (f.offset == 0.0) {
        body += name_of(f.var);
      } else {
        body += "(" + std::string(name_of(f.var)) + (f.offset < 0 ? " - " : " + ") +
                detail::format_number(std::abs(f.offset)) + ")";
      }
    }
    out += body;
  }
  return out;
}

inline double factor_value(RuleVar v, const TraceView& t, double w) {
  switch (v) {
    case RuleVar::w: return w;
    case RuleVar::x0: return t.x0;
    case RuleVar::x1: return t.x1;
    case RuleVar::x2: return t.x2;
    case RuleVar::y0: return t.y0;
    case RuleVar::y1: return t.y1;
    case RuleVar::y2: return t.y2;
  }
  return 0.0;
}

inline double evaluate_rule(const SumOfProductsRule& rule, const TraceView& traces, double w) {
  double total = 0.0;
  for (const Product& p : rule.products) {
    double term = p.constant;
    for (const FactorRef& f : p.factors) term *= factor_value(f.var, traces, w) + f.offset;
    total += term;
  }
  return total;
}

inline bool rule_uses(const SumOfProductsRule& rule, RuleVar v) {
  for (const Product& p : rule.products)
    for (const FactorRef& f : p.factors)
      if (f.var == v) return true;
  return false;
}

/// Substitutes every "{b}" in a rule template with the calibrated baseline.
inline std::string instantiate_rule_template(std::string text, double baseline) {
  const std::string token = "{b}";
  const std::string value = "(" + detail::format_number(baseline) + ")";
  for (std::size_t at = text.find(token); at != std::string::npos; at = text.find(token, at + value.size()))
    text.replace(at, token.size(), value);
  return text;
}

}  // namespace sgp
