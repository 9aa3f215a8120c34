#pragma once

// Scalar expression language for model functions g(v; theta), constraint
// functions h_k(theta) and instrument functions f(v).
//
// Grammar (whitespace is ignored):
//
//   expr    := term (('+' | '-') term)*
//   term    := unary (('*' | '/') unary)*
//   unary   := ('-' | '+') unary | power
//   power   := primary ('^' unary)?          right-associative
//   primary := number | identifier | func '(' expr ')' | '(' expr ')'
//   func    := 'exp' | 'log' | 'mean'
//
// Identifiers match [a-zA-Z][a-zA-Z0-9_]* and must be declared either as a
// parameter or as a covariate. Outside mean(.) a covariate refers to the
// current data row; mean(e) averages e over all n rows and is row-invariant.
//
// Derivatives are forward-mode: every node carries a value plus its partial
// derivatives with respect to all declared parameters.

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "feastest/error.hpp"

namespace feastest::expr {

enum class Op {
  Constant,
  Param,
  Covariate,
  Neg,
  Add,
  Sub,
  Mul,
  Div,
  Pow,
  Exp,
  Log,
  Mean
};

struct Node;
using NodePtr = std::shared_ptr<const Node>;

struct Node {
  Op op = Op::Constant;
  double value = 0.0;  // Constant
  int index = -1;      // Param / Covariate slot
  NodePtr lhs;         // unary operand or left operand
  NodePtr rhs;
  std::size_t position = 0;  // byte offset in the source text
};

// Immutable parsed expression together with its symbol declarations.
class ExprAst {
 public:
  ExprAst() = default;
  ExprAst(NodePtr root, std::vector<std::string> params,
          std::vector<std::string> covariates)
      : root_(std::move(root)),
        params_(std::move(params)),
        covariates_(std::move(covariates)) {}

  const NodePtr& root() const noexcept { return root_; }
  const std::vector<std::string>& parameters() const noexcept {
    return params_;
  }
  const std::vector<std::string>& covariates() const noexcept {
    return covariates_;
  }

 private:
  NodePtr root_;
  std::vector<std::string> params_;
  std::vector<std::string> covariates_;
};

// Covariate data, n rows by k declared covariates (columns in declaration
// order).
using DataMatrix = Eigen::MatrixXd;

struct Bindings {
  std::vector<double> params;         // in declaration order
  const DataMatrix* data = nullptr;   // required by covariates and mean()
  std::optional<Eigen::Index> row;    // current row for bare covariates

  static Bindings from_names(const ExprAst& ast,
                             const std::map<std::string, double>& values,
                             const DataMatrix* data = nullptr,
                             std::optional<Eigen::Index> row = std::nullopt);
};

namespace detail {

inline bool is_ident_start(char c) {
  return std::isalpha(static_cast<unsigned char>(c)) != 0;
}
inline bool is_ident_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '_';
}

inline bool is_reserved(std::string_view name) {
  return name == "exp" || name == "log" || name == "mean";
}

inline void validate_names(const std::vector<std::string>& params,
                           const std::vector<std::string>& covariates) {
  std::set<std::string> seen;
  auto check = [&](const std::string& name) {
    if (name.empty() || !is_ident_start(name[0]) ||
        !std::all_of(name.begin(), name.end(), is_ident_char))
      throw InvalidArgument("'" + name + "' is not a valid identifier");
    if (is_reserved(name))
      throw InvalidArgument("'" + name + "' is a reserved function name");
    if (!seen.insert(name).second)
      throw InvalidArgument("symbol '" + name + "' declared twice");
  };
  for (const auto& p : params) check(p);
  for (const auto& c : covariates) check(c);
}

// Value of a subtree that references no parameter and no covariate.
inline std::optional<double> constant_value(const Node& n) {
  auto un = [&](auto f) -> std::optional<double> {
    auto a = constant_value(*n.lhs);
    if (!a) return std::nullopt;
    return f(*a);
  };
  auto bin = [&](auto f) -> std::optional<double> {
    auto a = constant_value(*n.lhs);
    auto b = constant_value(*n.rhs);
    if (!a || !b) return std::nullopt;
    return f(*a, *b);
  };
  switch (n.op) {
    case Op::Constant: return n.value;
    case Op::Param:
    case Op::Covariate: return std::nullopt;
    case Op::Neg: return un([](double a) { return -a; });
    case Op::Add: return bin([](double a, double b) { return a + b; });
    case Op::Sub: return bin([](double a, double b) { return a - b; });
    case Op::Mul: return bin([](double a, double b) { return a * b; });
    case Op::Div: return bin([](double a, double b) { return a / b; });
    case Op::Pow: return bin([](double a, double b) { return std::pow(a, b); });
    case Op::Exp: return un([](double a) { return std::exp(a); });
    case Op::Log: return un([](double a) { return std::log(a); });
    case Op::Mean: return constant_value(*n.lhs);
  }
  return std::nullopt;
}

class Parser {
 public:
  Parser(std::string_view text, const std::vector<std::string>& params,
         const std::vector<std::string>& covariates)
      : text_(text), params_(params), covariates_(covariates) {}

  NodePtr parse() {
    skip_space();
    if (pos_ >= text_.size()) throw ParseError("empty expression", pos_);
    NodePtr e = expr();
    skip_space();
    if (pos_ < text_.size())
      throw ParseError(std::string("unexpected '") + text_[pos_] + "'", pos_);
    return e;
  }

 private:
  void skip_space() {
    while (pos_ < text_.size() &&
           std::isspace(static_cast<unsigned char>(text_[pos_])))
      ++pos_;
  }

  bool accept(char c) {
    skip_space();
    if (pos_ < text_.size() && text_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  void expect(char c) {
    if (!accept(c)) {
      if (pos_ >= text_.size())
        throw ParseError(std::string("expected '") + c + "' but input ended",
                         pos_);
      throw ParseError(std::string("expected '") + c + "'", pos_);
    }
  }

  static NodePtr make(Op op, std::size_t pos, NodePtr lhs = nullptr,
                      NodePtr rhs = nullptr) {
    auto n = std::make_shared<Node>();
    n->op = op;
    n->position = pos;
    n->lhs = std::move(lhs);
    n->rhs = std::move(rhs);
    return n;
  }

  NodePtr expr() {
    NodePtr left = term();
    for (;;) {
      skip_space();
      const std::size_t at = pos_;
      if (accept('+'))
        left = make(Op::Add, at, left, term());
      else if (accept('-'))
        left = make(Op::Sub, at, left, term());
      else
        return left;
    }
  }

  NodePtr term() {
    NodePtr left = unary();
    for (;;) {
      skip_space();
      const std::size_t at = pos_;
      if (accept('*')) {
        left = make(Op::Mul, at, left, unary());
      } else if (accept('/')) {
        NodePtr right = unary();
        if (auto c = constant_value(*right); c && *c == 0.0)
          throw ParseError("division by a constant zero", at);
        left = make(Op::Div, at, left, right);
      } else {
        return left;
      }
    }
  }

  NodePtr unary() {
    skip_space();
    const std::size_t at = pos_;
    if (accept('-')) return make(Op::Neg, at, unary());
    if (accept('+')) return unary();
    return power();
  }

  NodePtr power() {
    NodePtr base = primary();
    skip_space();
    const std::size_t at = pos_;
    if (accept('^')) return make(Op::Pow, at, base, unary());
    return base;
  }

  NodePtr primary() {
    skip_space();
    const std::size_t at = pos_;
    if (pos_ >= text_.size()) throw ParseError("unexpected end of input", pos_);
    const char c = text_[pos_];
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return number();
    if (is_ident_start(c)) return identifier();
    if (accept('(')) {
      NodePtr inner = expr();
      expect(')');
      return inner;
    }
    throw ParseError(std::string("unexpected '") + c + "'", at);
  }

  NodePtr number() {
    const std::size_t at = pos_;
    std::size_t end = pos_;
    while (end < text_.size() &&
           (std::isdigit(static_cast<unsigned char>(text_[end])) ||
            text_[end] == '.'))
      ++end;
    if (end < text_.size() && (text_[end] == 'e' || text_[end] == 'E')) {
      std::size_t exp_end = end + 1;
      if (exp_end < text_.size() &&
          (text_[exp_end] == '+' || text_[exp_end] == '-'))
        ++exp_end;
      if (exp_end < text_.size() &&
          std::isdigit(static_cast<unsigned char>(text_[exp_end]))) {
        while (exp_end < text_.size() &&
               std::isdigit(static_cast<unsigned char>(text_[exp_end])))
          ++exp_end;
        end = exp_end;
      }
    }
    const std::string literal(text_.substr(at, end - at));
    std::istringstream in(literal);
    in.imbue(std::locale::classic());
    double v = 0.0;
    in >> v;
    if (!in || in.peek() != std::char_traits<char>::eof())
      throw ParseError("malformed number '" + literal + "'", at);
    pos_ = end;
    auto n = std::make_shared<Node>();
    n->op = Op::Constant;
    n->value = v;
    n->position = at;
    return n;
  }

  NodePtr identifier() {
    const std::size_t at = pos_;
    std::size_t end = pos_;
    while (end < text_.size() && is_ident_char(text_[end])) ++end;
    const std::string name(text_.substr(at, end - at));
    pos_ = end;
    skip_space();
    const bool call = pos_ < text_.size() && text_[pos_] == '(';
    if (is_reserved(name)) {
      if (!call) throw ParseError("function '" + name + "' needs '('", pos_);
      expect('(');
      NodePtr arg = expr();
      expect(')');
      if (name == "exp") return make(Op::Exp, at, arg);
      if (name == "log") {
        if (auto c = constant_value(*arg); c && !(*c > 0.0))
          throw ParseError("log of a non-positive constant", at);
        return make(Op::Log, at, arg);
      }
      return make(Op::Mean, at, arg);
    }
    if (call) throw ParseError("unknown function '" + name + "'", at);
    auto n = std::make_shared<Node>();
    n->position = at;
    if (auto it = std::find(params_.begin(), params_.end(), name);
        it != params_.end()) {
      n->op = Op::Param;
      n->index = static_cast<int>(it - params_.begin());
      return n;
    }
    if (auto it = std::find(covariates_.begin(), covariates_.end(), name);
        it != covariates_.end()) {
      n->op = Op::Covariate;
      n->index = static_cast<int>(it - covariates_.begin());
      return n;
    }
    throw UndeclaredSymbol(name, at);
  }

  std::string_view text_;
  const std::vector<std::string>& params_;
  const std::vector<std::string>& covariates_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline ExprAst parse_expression(std::string_view text,
                                std::vector<std::string> declared_params,
                                std::vector<std::string> declared_covariates) {
  detail::validate_names(declared_params, declared_covariates);
  detail::Parser parser(text, declared_params, declared_covariates);
  NodePtr root = parser.parse();
  return ExprAst(std::move(root), std::move(declared_params),
                 std::move(declared_covariates));
}

// Re-parsable text form. Binary operations are fully parenthesized.
inline std::string to_string(const ExprAst& ast) {
  std::ostringstream out;
  out.imbue(std::locale::classic());
  out.precision(17);
  auto emit = [&](auto&& self, const Node& n) -> void {
    switch (n.op) {
      case Op::Constant:
        if (n.value < 0 || std::signbit(n.value))
          out << "(-" << -n.value << ")";
        else
          out << n.value;
        return;
      case Op::Param: out << ast.parameters()[n.index]; return;
      case Op::Covariate: out << ast.covariates()[n.index]; return;
      case Op::Neg:
        out << "(-";
        self(self, *n.lhs);
        out << ")";
        return;
      case Op::Exp:
      case Op::Log:
      case Op::Mean:
        out << (n.op == Op::Exp ? "exp(" : n.op == Op::Log ? "log(" : "mean(");
        self(self, *n.lhs);
        out << ")";
        return;
      default: break;
    }
    const char* sym = n.op == Op::Add   ? " + "
                      : n.op == Op::Sub ? " - "
                      : n.op == Op::Mul ? " * "
                      : n.op == Op::Div ? " / "
                                        : " ^ ";
    out << "(";
    self(self, *n.lhs);
    out << sym;
    self(self, *n.rhs);
    out << ")";
  };
  emit(emit, *ast.root());
  return out.str();
}

// True when the expression is affine in the parameters for every fixed data
// row (covariates and mean() of parameter-free terms count as constants).
inline bool is_affine_in_params(const ExprAst& ast) {
  struct Degree {
    bool affine;
    bool constant;
  };
  auto visit = [](auto&& self, const Node& n) -> Degree {
    switch (n.op) {
      case Op::Constant:
      case Op::Covariate: return {true, true};
      case Op::Param: return {true, false};
      case Op::Neg: return self(self, *n.lhs);
      case Op::Mean: return self(self, *n.lhs);
      case Op::Add:
      case Op::Sub: {
        const Degree a = self(self, *n.lhs), b = self(self, *n.rhs);
        return {a.affine && b.affine, a.constant && b.constant};
      }
      case Op::Mul: {
        const Degree a = self(self, *n.lhs), b = self(self, *n.rhs);
        return {a.affine && b.affine && (a.constant || b.constant),
                a.constant && b.constant};
      }
      case Op::Div: {
        const Degree a = self(self, *n.lhs), b = self(self, *n.rhs);
        return {a.affine && b.constant, a.constant && b.constant};
      }
      case Op::Pow: {
        const Degree a = self(self, *n.lhs), b = self(self, *n.rhs);
        const bool c = a.constant && b.constant;
        return {c, c};
      }
      case Op::Exp:
      case Op::Log: {
        const Degree a = self(self, *n.lhs);
        return {a.constant, a.constant};
      }
    }
    return {false, false};
  };
  return visit(visit, *ast.root()).affine;
}

// Several expressions over the same declarations, compiled into one DAG with
// common subexpressions merged. Immutable after construction; evaluation is
// reentrant.
class Program {
 public:
  explicit Program(const std::vector<ExprAst>& exprs) {
    if (exprs.empty()) throw InvalidArgument("Program needs an expression");
    params_ = exprs.front().parameters();
    covariates_ = exprs.front().covariates();
    for (const auto& e : exprs) {
      if (e.parameters() != params_ || e.covariates() != covariates_)
        throw InvalidArgument(
            "expressions in one program must share declarations");
      outputs_.push_back(intern(*e.root()));
    }
    build_cones();
  }

  explicit Program(const ExprAst& expr) : Program(std::vector<ExprAst>{expr}) {}

  std::size_t num_params() const noexcept { return params_.size(); }
  std::size_t num_outputs() const noexcept { return outputs_.size(); }
  const std::vector<std::string>& parameters() const noexcept {
    return params_;
  }
  bool output_uses_row(std::size_t k) const {
    return instrs_[outputs_[k]].row_dependent;
  }
  bool uses_data() const noexcept { return uses_data_; }

  // All outputs at a single point (optionally at a given row). `jacobian`,
  // when non-null, is resized to outputs x params.
  void evaluate(std::span<const double> theta, const DataMatrix* data,
                std::optional<Eigen::Index> row, Eigen::VectorXd& values,
                Eigen::MatrixXd* jacobian) const {
    Workspace ws(*this, theta, data, jacobian != nullptr);
    ws.compute_means();
    values.resize(static_cast<Eigen::Index>(outputs_.size()));
    if (jacobian) jacobian->resize(values.size(), ws.dim);
    for (std::size_t k = 0; k < outputs_.size(); ++k) {
      const Cone& cone = output_cones_[k];
      for (int id : cone.invariant) ws.eval(id, std::nullopt);
      for (int id : cone.per_row) ws.eval(id, row);
      const double* v = ws.slot(outputs_[k]);
      values[static_cast<Eigen::Index>(k)] = v[0];
      if (jacobian)
        for (int j = 0; j < ws.dim; ++j)
          (*jacobian)(static_cast<Eigen::Index>(k), j) = v[1 + j];
    }
  }

  // Output k at every data row. `jacobian`, when non-null, is n x params.
  void evaluate_rows(std::size_t k, std::span<const double> theta,
                     const DataMatrix& data, Eigen::VectorXd& values,
                     Eigen::MatrixXd* jacobian) const {
    Workspace ws(*this, theta, &data, jacobian != nullptr);
    ws.compute_means();
    const Eigen::Index n = data.rows();
    values.resize(n);
    if (jacobian) jacobian->resize(n, ws.dim);
    const Cone& cone = output_cones_[k];
    for (int id : cone.invariant) ws.eval(id, std::nullopt);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (int id : cone.per_row) ws.eval(id, i);
      const double* v = ws.slot(outputs_[k]);
      values[i] = v[0];
      if (jacobian)
        for (int j = 0; j < ws.dim; ++j) (*jacobian)(i, j) = v[1 + j];
    }
  }

 private:
  struct Instr {
    Op op;
    int a = -1;
    int b = -1;
    double value = 0.0;
    int index = -1;
    bool row_dependent = false;
  };
  struct Cone {
    std::vector<int> invariant;
    std::vector<int> per_row;
  };

  int intern(const Node& n) {
    Instr ins;
    ins.op = n.op;
    ins.value = n.value;
    ins.index = n.index;
    if (n.lhs) ins.a = intern(*n.lhs);
    if (n.rhs) ins.b = intern(*n.rhs);
    if (n.op == Op::Covariate) {
      ins.row_dependent = true;
      uses_data_ = true;
    } else if (n.op == Op::Mean) {
      ins.row_dependent = false;
      uses_data_ = true;
    } else {
      ins.row_dependent = (ins.a >= 0 && instrs_[ins.a].row_dependent) ||
                          (ins.b >= 0 && instrs_[ins.b].row_dependent);
    }
    const Key key{static_cast<int>(ins.op), ins.a, ins.b,
                  std::bit_cast<std::uint64_t>(ins.value), ins.index};
    if (auto it = index_.find(key); it != index_.end()) return it->second;
    const int id = static_cast<int>(instrs_.size());
    instrs_.push_back(ins);
    index_.emplace(key, id);
    if (ins.op == Op::Mean) means_.push_back(id);
    return id;
  }

  // Nodes needed to evaluate `root`, with already-computed mean nodes as
  // leaves, in increasing id (topological) order.
  Cone cone_of(int root) const {
    std::vector<char> mark(instrs_.size(), 0);
    std::vector<int> stack{root};
    while (!stack.empty()) {
      const int id = stack.back();
      stack.pop_back();
      if (mark[id]) continue;
      mark[id] = 1;
      const Instr& ins = instrs_[id];
      if (ins.op == Op::Mean) continue;
      if (ins.a >= 0) stack.push_back(ins.a);
      if (ins.b >= 0) stack.push_back(ins.b);
    }
    Cone cone;
    for (std::size_t id = 0; id < instrs_.size(); ++id) {
      if (!mark[id]) continue;
      if (instrs_[id].op == Op::Mean) continue;  // computed up front
      (instrs_[id].row_dependent ? cone.per_row : cone.invariant)
          .push_back(static_cast<int>(id));
    }
    return cone;
  }

  void build_cones() {
    for (int m : means_) mean_cones_.push_back(cone_of(instrs_[m].a));
    for (int out : outputs_) output_cones_.push_back(cone_of(out));
  }

  struct Key {
    int op, a, b;
    std::uint64_t bits;
    int index;
    bool operator==(const Key&) const = default;
  };
  struct KeyHash {
    std::size_t operator()(const Key& k) const noexcept {
      std::uint64_t h = static_cast<std::uint64_t>(k.op);
      for (std::uint64_t v :
           {static_cast<std::uint64_t>(k.a), static_cast<std::uint64_t>(k.b),
            k.bits, static_cast<std::uint64_t>(k.index)})
        h = (h ^ v) * 0x100000001B3ull + 0x9E3779B97F4A7C15ull;
      return static_cast<std::size_t>(h);
    }
  };

  // Dual-number scratch space for one evaluation call.
  struct Workspace {
    Workspace(const Program& prog, std::span<const double> theta,
              const DataMatrix* data, bool grads)
        : p(prog),
          theta(theta),
          data(data),
          dim(grads ? static_cast<int>(prog.params_.size()) : 0),
          stride(1 + dim),
          buf(prog.instrs_.size() * static_cast<std::size_t>(stride), 0.0) {
      if (theta.size() != prog.params_.size())
        throw InvalidArgument("expected " +
                              std::to_string(prog.params_.size()) +
                              " parameter values, got " +
                              std::to_string(theta.size()));
      if (data && data->cols() != static_cast<Eigen::Index>(
                                      prog.covariates_.size()))
        throw InvalidArgument("data has " + std::to_string(data->cols()) +
                              " columns but " +
                              std::to_string(prog.covariates_.size()) +
                              " covariates are declared");
    }

    double* slot(int id) { return buf.data() + std::size_t(id) * stride; }

    void compute_means() {
      for (std::size_t m = 0; m < p.means_.size(); ++m) {
        const int id = p.means_[m];
        const Cone& cone = p.mean_cones_[m];
        if (!data || data->rows() == 0)
          throw DomainError("mean() needs covariate data");
        for (int c : cone.invariant) eval(c, std::nullopt);
        double* out = slot(id);
        std::fill(out, out + stride, 0.0);
        const int arg = p.instrs_[id].a;
        const Eigen::Index n = data->rows();
        for (Eigen::Index i = 0; i < n; ++i) {
          for (int c : cone.per_row) eval(c, i);
          const double* v = slot(arg);
          for (int j = 0; j < stride; ++j) out[j] += v[j];
        }
        for (int j = 0; j < stride; ++j) out[j] /= static_cast<double>(n);
      }
    }

    void eval(int id, std::optional<Eigen::Index> row) {
      const Instr& ins = p.instrs_[id];
      double* r = slot(id);
      const double* a = ins.a >= 0 ? slot(ins.a) : nullptr;
      const double* b = ins.b >= 0 ? slot(ins.b) : nullptr;
      switch (ins.op) {
        case Op::Constant:
          r[0] = ins.value;
          std::fill(r + 1, r + stride, 0.0);
          return;
        case Op::Param:
          r[0] = theta[ins.index];
          std::fill(r + 1, r + stride, 0.0);
          if (dim) r[1 + ins.index] = 1.0;
          return;
        case Op::Covariate:
          if (!data) throw DomainError("covariate used without data");
          if (!row)
            throw DomainError("covariate '" + p.covariates_[ins.index] +
                              "' used outside mean() with no current row");
          r[0] = (*data)(*row, ins.index);
          std::fill(r + 1, r + stride, 0.0);
          return;
        case Op::Neg:
          for (int j = 0; j < stride; ++j) r[j] = -a[j];
          return;
        case Op::Add:
          for (int j = 0; j < stride; ++j) r[j] = a[j] + b[j];
          return;
        case Op::Sub:
          for (int j = 0; j < stride; ++j) r[j] = a[j] - b[j];
          return;
        case Op::Mul: {
          const double av = a[0], bv = b[0];
          for (int j = 1; j < stride; ++j) r[j] = a[j] * bv + av * b[j];
          r[0] = av * bv;
          return;
        }
        case Op::Div: {
          const double av = a[0], bv = b[0];
          if (bv == 0.0) throw DomainError("division by zero");
          const double q = av / bv;
          for (int j = 1; j < stride; ++j) r[j] = (a[j] - q * b[j]) / bv;
          r[0] = q;
          return;
        }
        case Op::Pow: pow(r, a, b); return;
        case Op::Exp: {
          const double e = std::exp(a[0]);
          if (!std::isfinite(e)) throw DomainError("exp overflow");
          for (int j = 1; j < stride; ++j) r[j] = e * a[j];
          r[0] = e;
          return;
        }
        case Op::Log: {
          if (!(a[0] > 0.0))
            throw DomainError("log of non-positive value");
          const double x = a[0];
          for (int j = 1; j < stride; ++j) r[j] = a[j] / x;
          r[0] = std::log(x);
          return;
        }
        case Op::Mean: return;  // filled by compute_means
      }
    }

    void pow(double* r, const double* a, const double* b) const {
      const double x = a[0], y = b[0];
      const double v = std::pow(x, y);
      if (!std::isfinite(v)) throw DomainError("pow result is not finite");
      bool dx = false, dy = false;
      for (int j = 1; j < stride; ++j) {
        dx = dx || a[j] != 0.0;
        dy = dy || b[j] != 0.0;
      }
      double cx = 0.0, cy = 0.0;
      if (dx) {
        cx = y * std::pow(x, y - 1.0);
        if (!std::isfinite(cx))
          throw DomainError("pow is not differentiable at base 0");
      }
      if (dy) {
        if (!(x > 0.0))
          throw DomainError(
              "pow with parameter-dependent exponent needs a positive base");
        cy = v * std::log(x);
      }
      for (int j = 1; j < stride; ++j) r[j] = cx * a[j] + cy * b[j];
      r[0] = v;
    }

    const Program& p;
    std::span<const double> theta;
    const DataMatrix* data;
    int dim;
    int stride;
    std::vector<double> buf;
  };

  std::vector<std::string> params_;
  std::vector<std::string> covariates_;
  std::vector<Instr> instrs_;
  std::vector<int> outputs_;
  std::vector<int> means_;
  std::vector<Cone> mean_cones_;
  std::vector<Cone> output_cones_;
  std::unordered_map<Key, int, KeyHash> index_;
  bool uses_data_ = false;
};

inline Bindings Bindings::from_names(const ExprAst& ast,
                                     const std::map<std::string, double>& values,
                                     const DataMatrix* data,
                                     std::optional<Eigen::Index> row) {
  Bindings b;
  b.data = data;
  b.row = row;
  for (const auto& name : ast.parameters()) {
    auto it = values.find(name);
    if (it == values.end())
      throw InvalidArgument("no value bound for parameter '" + name + "'");
    b.params.push_back(it->second);
  }
  for (const auto& [name, _] : values)
    if (std::find(ast.parameters().begin(), ast.parameters().end(), name) ==
        ast.parameters().end())
      throw InvalidArgument("'" + name + "' is not a declared parameter");
  return b;
}

inline double eval(const ExprAst& ast, const Bindings& b) {
  Program prog(ast);
  Eigen::VectorXd v;
  prog.evaluate(b.params, b.data, b.row, v, nullptr);
  if (!std::isfinite(v[0])) throw DomainError("expression value is not finite");
  return v[0];
}

// Exact forward-mode partial derivatives, ordered as `wrt`.
inline std::vector<double> grad(const ExprAst& ast, const Bindings& b,
                                const std::vector<std::string>& wrt) {
  Program prog(ast);
  Eigen::VectorXd v;
  Eigen::MatrixXd jac;
  prog.evaluate(b.params, b.data, b.row, v, &jac);
  std::vector<double> out;
  out.reserve(wrt.size());
  for (const auto& name : wrt) {
    auto it = std::find(ast.parameters().begin(), ast.parameters().end(), name);
    if (it == ast.parameters().end())
      throw InvalidArgument("'" + name + "' is not a declared parameter");
    const double d = jac(0, it - ast.parameters().begin());
    if (!std::isfinite(d))
      throw DomainError("derivative with respect to '" + name +
                        "' is not finite");
    out.push_back(d);
  }
  return out;
}

}  // namespace feastest::expr
