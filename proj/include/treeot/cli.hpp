#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "treeot/solver.hpp"

namespace treeot::cli {

using Json = nlohmann::json;

constexpr int kSchemaVersion = 1;
constexpr const char* kVersion = "1.0.0";

enum ExitCode : int { kOk = 0, kInputError = 1, kNumericalError = 2, kNotConverged = 3 };

// Malformed or inconsistent input; `where` names the line or field.
class InputError : public std::runtime_error {
 public:
  InputError(const std::string& where, const std::string& what)
      : std::runtime_error(where.empty() ? what : where + ": " + what) {}
};

struct ProblemFile {
  TreeOTProblem problem;  // epsilon holds the first entry of `epsilons`
  std::vector<double> epsilons;
  std::string mode = "multi";
  double tol = 1e-8;
  int max_sweeps = 10000;
  std::optional<LogDomainMode> log_domain;
  std::uint64_t seed = 0;
  std::optional<Node> root;
  std::vector<Edge> extra_plans;  // pair projections requested beyond the edges
  std::vector<Edge> stochastic_edges;  // costs given as -eps log A
  std::string hash;
};

// The file's problem at another epsilon; costs given through a stochastic
// matrix are rescaled so the kernel stays that matrix.
TreeOTProblem problem_at(const ProblemFile& file, double epsilon);

std::string fnv1a_hex(const std::string& bytes);

// Parses JSON text, mapping syntax errors to line and column.
Json parse_json(const std::string& text, const std::string& source);

ProblemFile parse_problem(const std::string& text, const std::string& source = "problem");

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& contents);

LogDomainMode parse_log_domain(const std::string& name);
std::string log_domain_name(LogDomainMode mode);

Json to_json(const Vector& v);
Json to_json(const Matrix& m);
Vector vector_from_json(const Json& j, const std::string& where);
Matrix matrix_from_json(const Json& j, const std::string& where);

// Shortest decimal that reads back to the same double.
std::string format_double(double x);

// Deterministic serialization used for every output file.
std::string dump(const Json& doc);

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace treeot::cli
