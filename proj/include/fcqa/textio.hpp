#pragma once

#include <string>

#include "fcqa/core.hpp"

namespace fcqa {

struct Problem {
  Schema schema;
  DependencySet deps;
  Instance instance;
  std::vector<CQ> queries;
};

// Syntax error with input coordinates.
struct ParseError : UsageError {
  int line;
  int col;
  ParseError(int line, int col, const std::string& msg)
      : UsageError("line " + std::to_string(line) + ", col " +
                   std::to_string(col) + ": " + msg),
        line(line),
        col(col) {}
};

Problem parse_problem(const std::string& text);

// Deterministic: facts sorted by relation then args; "R(a, b) .\n" per fact.
std::string serialize_instance(const Instance& I);
std::string serialize_schema(const Schema& s);
std::string serialize_deps(const DependencySet& d);
std::string serialize_problem(const Problem& p);

}  // namespace fcqa
