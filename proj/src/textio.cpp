#include "fcqa/textio.hpp"

#include <cctype>
#include <sstream>

namespace fcqa {

namespace {

enum class Tok { Ident, Quoted, Int, LParen, RParen, LBrack, RBrack, Comma,
                 Dot, Slash, Leq, Arrow, Query, Turnstile, End };

struct Token {
  Tok kind;
  std::string text;
  int line, col;
};

class Lexer {
 public:
  explicit Lexer(const std::string& text) : m_text(text) {}

  Token next() {
    skip_ws();
    int line = m_line, col = m_col;
    if (m_pos >= m_text.size()) return {Tok::End, "", line, col};
    char c = m_text[m_pos];
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_' || c == '~') {
      std::string s;
      while (m_pos < m_text.size() && (std::isalnum(static_cast<unsigned char>(m_text[m_pos])) ||
             m_text[m_pos] == '_' || m_text[m_pos] == '~' || m_text[m_pos] == '\'' ||
             m_text[m_pos] == '@' || m_text[m_pos] == ':'))
        s += advance();
      return {Tok::Ident, s, line, col};
    }
    if (std::isdigit(static_cast<unsigned char>(c))) {
      std::string s;
      while (m_pos < m_text.size() && std::isdigit(static_cast<unsigned char>(m_text[m_pos])))
        s += advance();
      return {Tok::Int, s, line, col};
    }
    switch (c) {
      case '"': {
        advance();
        std::string s;
        while (m_pos < m_text.size() && m_text[m_pos] != '"') s += advance();
        if (m_pos >= m_text.size()) throw ParseError(line, col, "unterminated string");
        advance();
        return {Tok::Quoted, s, line, col};
      }
      case '(': advance(); return {Tok::LParen, "(", line, col};
      case ')': advance(); return {Tok::RParen, ")", line, col};
      case '[': advance(); return {Tok::LBrack, "[", line, col};
      case ']': advance(); return {Tok::RBrack, "]", line, col};
      case ',': advance(); return {Tok::Comma, ",", line, col};
      case '.': advance(); return {Tok::Dot, ".", line, col};
      case '/': advance(); return {Tok::Slash, "/", line, col};
      case '?': advance(); return {Tok::Query, "?", line, col};
      case '<':
        advance();
        if (m_pos < m_text.size() && m_text[m_pos] == '=') {
          advance();
          return {Tok::Leq, "<=", line, col};
        }
        throw ParseError(line, col, "expected '<='");
      case '-':
        advance();
        if (m_pos < m_text.size() && m_text[m_pos] == '>') {
          advance();
          return {Tok::Arrow, "->", line, col};
        }
        throw ParseError(line, col, "expected '->'");
      case ':':
        advance();
        if (m_pos < m_text.size() && m_text[m_pos] == '-') {
          advance();
          return {Tok::Turnstile, ":-", line, col};
        }
        throw ParseError(line, col, "expected ':-'");
      default:
        throw ParseError(line, col, std::string("unexpected character '") + c + "'");
    }
  }

 private:
  char advance() {
    char c = m_text[m_pos++];
    if (c == '\n') {
      ++m_line;
      m_col = 1;
    } else {
      ++m_col;
    }
    return c;
  }
  void skip_ws() {
    while (m_pos < m_text.size()) {
      char c = m_text[m_pos];
      if (c == '#') {
        while (m_pos < m_text.size() && m_text[m_pos] != '\n') advance();
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        advance();
      } else {
        break;
      }
    }
  }
  const std::string& m_text;
  std::size_t m_pos = 0;
  int m_line = 1, m_col = 1;
};

class Parser {
 public:
  explicit Parser(const std::string& text) : m_lex(text) { m_tok = m_lex.next(); }

  Problem parse() {
    Problem p;
    while (m_tok.kind != Tok::End) {
      if (m_tok.kind == Tok::Ident && m_tok.text == "rel" ) parse_rel(p);
      else if (m_tok.kind == Tok::Ident && m_tok.text == "uid") parse_uid(p);
      else if (m_tok.kind == Tok::Ident && m_tok.text == "fd") parse_fd(p);
      else if (m_tok.kind == Tok::Query) parse_query(p);
      else if (m_tok.kind == Tok::Ident) parse_fact(p);
      else fail("expected a declaration");
    }
    return p;
  }

 private:
  [[noreturn]] void fail(const std::string& msg) {
    throw ParseError(m_tok.line, m_tok.col, msg);
  }
  Token eat(Tok k, const std::string& what) {
    if (m_tok.kind != k) fail("expected " + what);
    Token t = m_tok;
    m_tok = m_lex.next();
    return t;
  }
  int eat_int() {
    Token t = eat(Tok::Int, "an integer");
    return std::stoi(t.text);
  }

  Position parse_position() {
    Token name = eat(Tok::Ident, "a relation name");
    eat(Tok::LBrack, "'['");
    int idx = eat_int();
    eat(Tok::RBrack, "']'");
    Position pos{name.text, idx};
    check(name, [&](const Problem& p) { p.schema.check_position(pos); });
    return pos;
  }

  template <typename F>
  void check(const Token& at, F f) {
    try {
      f(*m_problem);
    } catch (const ParseError&) {
      throw;
    } catch (const UsageError& e) {
      throw ParseError(at.line, at.col, e.what());
    }
  }

  void parse_rel(Problem& p) {
    m_problem = &p;
    Token kw = m_tok;
    m_tok = m_lex.next();
    Token name = eat(Tok::Ident, "a relation name");
    eat(Tok::Slash, "'/'");
    int arity = eat_int();
    eat(Tok::Dot, "'.'");
    check(kw, [&](const Problem&) { p.schema.add_relation(name.text, arity); });
  }

  void parse_uid(Problem& p) {
    m_problem = &p;
    Token kw = m_tok;
    m_tok = m_lex.next();
    Position from = parse_position();
    eat(Tok::Leq, "'<='");
    Position to = parse_position();
    eat(Tok::Dot, "'.'");
    check(kw, [&](const Problem&) { p.deps.uids.insert(make_uid(from, to)); });
  }

  void parse_fd(Problem& p) {
    m_problem = &p;
    Token kw = m_tok;
    m_tok = m_lex.next();
    Token name = eat(Tok::Ident, "a relation name");
    eat(Tok::LBrack, "'['");
    std::set<int> lhs;
    lhs.insert(eat_int());
    while (m_tok.kind == Tok::Comma) {
      m_tok = m_lex.next();
      lhs.insert(eat_int());
    }
    eat(Tok::RBrack, "']'");
    eat(Tok::Arrow, "'->'");
    Token name2 = eat(Tok::Ident, "a relation name");
    if (name2.text != name.text)
      throw ParseError(name2.line, name2.col, "FD must stay on one relation");
    eat(Tok::LBrack, "'['");
    int rhs = eat_int();
    eat(Tok::RBrack, "']'");
    eat(Tok::Dot, "'.'");
    check(kw, [&](const Problem&) {
      Fd f = make_fd(name.text, lhs, rhs);
      validate(p.schema, f);
      p.deps.fds.insert(f);
    });
  }

  void parse_fact(Problem& p) {
    m_problem = &p;
    Token name = eat(Tok::Ident, "a relation name");
    eat(Tok::LParen, "'('");
    std::vector<Elem> args;
    if (m_tok.kind != Tok::RParen) {
      args.push_back(parse_const());
      while (m_tok.kind == Tok::Comma) {
        m_tok = m_lex.next();
        args.push_back(parse_const());
      }
    }
    eat(Tok::RParen, "')'");
    eat(Tok::Dot, "'.'");
    Fact f{name.text, args};
    check(name, [&](const Problem&) {
      validate(p.schema, f);
      p.instance.add(f);
    });
  }

  Elem parse_const() {
    if (m_tok.kind == Tok::Quoted || m_tok.kind == Tok::Ident ||
        m_tok.kind == Tok::Int) {
      std::string s = m_tok.text;
      m_tok = m_lex.next();
      return s;
    }
    fail("expected a constant");
  }

  void parse_query(Problem& p) {
    m_problem = &p;
    Token q = m_tok;
    m_tok = m_lex.next();
    eat(Tok::Turnstile, "':-'");
    CQ cq;
    cq.atoms.push_back(parse_atom());
    while (m_tok.kind == Tok::Comma) {
      m_tok = m_lex.next();
      cq.atoms.push_back(parse_atom());
    }
    eat(Tok::Dot, "'.'");
    check(q, [&](const Problem&) { validate(p.schema, cq); });
    p.queries.push_back(cq);
  }

  CQAtom parse_atom() {
    Token name = eat(Tok::Ident, "a relation name");
    eat(Tok::LParen, "'('");
    CQAtom atom{name.text, {}};
    if (m_tok.kind != Tok::RParen) {
      atom.args.push_back(parse_term());
      while (m_tok.kind == Tok::Comma) {
        m_tok = m_lex.next();
        atom.args.push_back(parse_term());
      }
    }
    eat(Tok::RParen, "')'");
    return atom;
  }

  // Lowercase identifiers are variables; quoted or capitalized are constants.
  Term parse_term() {
    if (m_tok.kind == Tok::Quoted) {
      Term t{m_tok.text, false};
      m_tok = m_lex.next();
      return t;
    }
    if (m_tok.kind == Tok::Ident || m_tok.kind == Tok::Int) {
      bool var = m_tok.kind == Tok::Ident &&
                 std::islower(static_cast<unsigned char>(m_tok.text[0]));
      Term t{m_tok.text, var};
      m_tok = m_lex.next();
      return t;
    }
    fail("expected a term");
  }

  Lexer m_lex;
  Token m_tok;
  Problem* m_problem = nullptr;
};

}  // namespace

Problem parse_problem(const std::string& text) { return Parser(text).parse(); }

std::string serialize_instance(const Instance& I) {
  std::string out;
  for (const auto& f : I.facts()) {
    out += f.rel + "(";
    for (std::size_t i = 0; i < f.args.size(); ++i) {
      if (i) out += ", ";
      out += f.args[i];
    }
    out += ") .\n";
  }
  return out;
}

std::string serialize_schema(const Schema& s) {
  std::string out;
  for (const auto& [r, n] : s.relations())
    out += "rel " + r + "/" + std::to_string(n) + " .\n";
  return out;
}

std::string serialize_deps(const DependencySet& d) {
  std::string out;
  for (const auto& u : d.uids)
    out += "uid " + to_string(u.from) + " <= " + to_string(u.to) + " .\n";
  for (const auto& f : d.fds) {
    out += "fd " + f.rel + "[";
    bool first = true;
    for (int i : f.lhs) {
      if (!first) out += ",";
      first = false;
      out += std::to_string(i);
    }
    out += "] -> " + f.rel + "[" + std::to_string(f.rhs) + "] .\n";
  }
  return out;
}

std::string serialize_problem(const Problem& p) {
  std::string out = serialize_schema(p.schema);
  out += serialize_deps(p.deps);
  out += serialize_instance(p.instance);
  for (const auto& q : p.queries) {
    out += "? :- ";
    for (std::size_t i = 0; i < q.atoms.size(); ++i) {
      if (i) out += ", ";
      out += q.atoms[i].rel + "(";
      for (std::size_t j = 0; j < q.atoms[i].args.size(); ++j) {
        if (j) out += ", ";
        const Term& t = q.atoms[i].args[j];
        out += t.is_var ? t.text : "\"" + t.text + "\"";
      }
      out += ")";
    }
    out += " .\n";
  }
  return out;
}

}  // namespace fcqa
