#pragma once

// Tiny arithmetic expressions of (s, x) for config-defined clocks and test functions.
//
//   expr   := cmp
//   cmp    := sum (("<" | "<=" | ">" | ">=") sum)?
//   sum    := prod (("+" | "-") prod)*
//   prod   := unary (("*" | "/") unary)*
//   unary  := "-" unary | power
//   power  := atom ("^" unary)?
//   atom   := number | name | name "(" expr ("," expr)* ")" | "(" expr ")"
//
// Names: s, x (first coordinate), y, z, r (Euclidean norm), pi.
// Functions: abs sqrt exp log pow min max.

#include <cctype>
#include <cmath>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

#include "superproc/common.hpp"
#include "superproc/errors.hpp"

namespace superproc {

class Expression {
public:
  static Expression parse(const std::string& text) {
    Parser p{text, 0};
    auto node = p.cmp();
    p.skip();
    if (p.pos != text.size()) throw ConfigError("unexpected '" + text.substr(p.pos) + "' in expression: " + text);
    Expression e;
    e.root_ = std::move(node);
    e.text_ = text;
    return e;
  }

  double operator()(double s, const Point& x) const { return root_->eval(s, x); }
  const std::string& text() const { return text_; }
  bool uses_time() const { return root_->uses_time(); }

  SpaceTimeFn as_space_time() const {
    auto root = root_;
    return [root](double s, const Point& x) { return root->eval(s, x); };
  }
  SpaceFn as_space() const {
    auto root = root_;
    return [root](const Point& x) { return root->eval(0.0, x); };
  }

private:
  struct Node {
    enum class Kind { Number, Var, Unary, Binary, Call } kind = Kind::Number;
    double value = 0.0;
    std::string name;  // variable, operator or function
    std::vector<std::shared_ptr<Node>> args;

    double eval(double s, const Point& x) const {
      switch (kind) {
      case Kind::Number: return value;
      case Kind::Var:
        if (name == "s") return s;
        if (name == "x") return x[0];
        if (name == "y") return x[1];
        if (name == "z") return x[2];
        if (name == "r") return norm(x);
        return std::numbers::pi;
      case Kind::Unary: return -args[0]->eval(s, x);
      case Kind::Binary: {
        const double a = args[0]->eval(s, x);
        const double b = args[1]->eval(s, x);
        if (name == "+") return a + b;
        if (name == "-") return a - b;
        if (name == "*") return a * b;
        if (name == "/") return a / b;
        if (name == "^") return std::pow(a, b);
        if (name == "<") return a < b ? 1.0 : 0.0;
        if (name == "<=") return a <= b ? 1.0 : 0.0;
        if (name == ">") return a > b ? 1.0 : 0.0;
        return a >= b ? 1.0 : 0.0;
      }
      case Kind::Call: {
        const double a = args[0]->eval(s, x);
        if (name == "abs") return std::abs(a);
        if (name == "sqrt") return std::sqrt(a);
        if (name == "exp") return std::exp(a);
        if (name == "log") return std::log(a);
        const double b = args[1]->eval(s, x);
        if (name == "pow") return std::pow(a, b);
        if (name == "min") return std::min(a, b);
        return std::max(a, b);
      }
      }
      return 0.0;
    }

    bool uses_time() const {
      if (kind == Kind::Var) return name == "s";
      for (const auto& a : args)
        if (a->uses_time()) return true;
      return false;
    }
  };
  using NodePtr = std::shared_ptr<Node>;

  struct Parser {
    const std::string& src;
    std::size_t pos;

    void skip() {
      while (pos < src.size() && std::isspace(static_cast<unsigned char>(src[pos]))) ++pos;
    }
    bool accept(const std::string& tok) {
      skip();
      if (src.compare(pos, tok.size(), tok) == 0) {
        pos += tok.size();
        return true;
      }
      return false;
    }
    [[noreturn]] void fail(const std::string& what) const {
      throw ConfigError(what + " at offset " + std::to_string(pos) + " in expression: " + src);
    }
    static NodePtr binary(std::string op, NodePtr a, NodePtr b) {
      auto n = std::make_shared<Node>();
      n->kind = Node::Kind::Binary;
      n->name = std::move(op);
      n->args = {std::move(a), std::move(b)};
      return n;
    }

    NodePtr cmp() {
      auto lhs = sum();
      for (const char* op : {"<=", ">=", "<", ">"})
        if (accept(op)) return binary(op, lhs, sum());
      return lhs;
    }
    NodePtr sum() {
      auto lhs = prod();
      for (;;) {
        if (accept("+")) lhs = binary("+", lhs, prod());
        else if (accept("-")) lhs = binary("-", lhs, prod());
        else return lhs;
      }
    }
    NodePtr prod() {
      auto lhs = unary();
      for (;;) {
        if (accept("*")) lhs = binary("*", lhs, unary());
        else if (accept("/")) lhs = binary("/", lhs, unary());
        else return lhs;
      }
    }
    NodePtr unary() {
      if (accept("-")) {
        auto n = std::make_shared<Node>();
        n->kind = Node::Kind::Unary;
        n->args = {unary()};
        return n;
      }
      auto base = atom();
      if (accept("^")) return binary("^", base, unary());
      return base;
    }
    NodePtr atom() {
      skip();
      if (pos >= src.size()) fail("unexpected end");
      if (accept("(")) {
        auto e = cmp();
        if (!accept(")")) fail("missing ')'");
        return e;
      }
      const char c = src[pos];
      if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
        std::size_t used = 0;
        double v = 0.0;
        try {
          v = std::stod(src.substr(pos), &used);
        } catch (const std::exception&) {
          fail("bad number");
        }
        pos += used;
        auto n = std::make_shared<Node>();
        n->value = v;
        return n;
      }
      if (std::isalpha(static_cast<unsigned char>(c))) {
        std::size_t end = pos;
        while (end < src.size() && (std::isalnum(static_cast<unsigned char>(src[end])) || src[end] == '_')) ++end;
        std::string name = src.substr(pos, end - pos);
        pos = end;
        if (accept("(")) {
          static const std::vector<std::pair<std::string, int>> fns{{"abs", 1}, {"sqrt", 1}, {"exp", 1}, {"log", 1},
                                                                    {"pow", 2}, {"min", 2},  {"max", 2}};
          int arity = -1;
          for (const auto& [fn, k] : fns)
            if (fn == name) arity = k;
          if (arity < 0) fail("unknown function '" + name + "'");
          auto n = std::make_shared<Node>();
          n->kind = Node::Kind::Call;
          n->name = name;
          n->args.push_back(cmp());
          while (accept(",")) n->args.push_back(cmp());
          if (!accept(")")) fail("missing ')'");
          if (static_cast<int>(n->args.size()) != arity) fail("wrong number of arguments to '" + name + "'");
          return n;
        }
        if (name != "s" && name != "x" && name != "y" && name != "z" && name != "r" && name != "pi")
          fail("unknown variable '" + name + "'");
        auto n = std::make_shared<Node>();
        n->kind = Node::Kind::Var;
        n->name = name;
        return n;
      }
      fail(std::string("unexpected '") + c + "'");
    }
  };

  std::shared_ptr<Node> root_;
  std::string text_;
};

} // namespace superproc
