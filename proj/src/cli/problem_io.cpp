#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "treeot/cli.hpp"

namespace treeot::cli {

namespace {

std::string field(const std::string& parent, const std::string& key) { return parent + "/" + key; }
std::string field(const std::string& parent, size_t index) {
  return parent + "/" + std::to_string(index);
}

const Json& require(const Json& obj, const std::string& key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key)) throw InputError(where, "missing field '" + key + "'");
  return obj.at(key);
}

double as_number(const Json& j, const std::string& where) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    if (s == "inf" || s == "Infinity") return std::numeric_limits<double>::infinity();
  }
  throw InputError(where, "expected a number");
}

int as_int(const Json& j, const std::string& where) {
  if (!j.is_number_integer()) throw InputError(where, "expected an integer");
  return j.get<int>();
}

std::vector<Vector> points_from_json(const Json& j, const std::string& where) {
  if (!j.is_array() || j.empty()) throw InputError(where, "expected a nonempty array of points");
  std::vector<Vector> pts;
  for (size_t i = 0; i < j.size(); ++i) {
    const Json& p = j[i];
    if (p.is_number()) {
      pts.push_back(Vector::Constant(1, p.get<double>()));
    } else {
      pts.push_back(vector_from_json(p, field(where, i)));
    }
    if (pts.back().size() != pts.front().size()) throw InputError(field(where, i), "point dimension differs");
  }
  return pts;
}

std::vector<Vector> lattice(int rows, int cols) {
  std::vector<Vector> pts;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      Vector p(2);
      p << (cols > 1 ? static_cast<double>(c) / (cols - 1) : 0.0),
          (rows > 1 ? static_cast<double>(r) / (rows - 1) : 0.0);
      pts.push_back(p);
    }
  }
  return pts;
}

}  // namespace

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return std::string("fnv1a64:") + buf;
}

Json parse_json(const std::string& text, const std::string& source) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    size_t line = 1, col = 1;
    for (size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw InputError(source + ":" + std::to_string(line) + ":" + std::to_string(col),
                     "malformed JSON");
  }
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError(path, "cannot open file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError(path, "cannot write file");
  out << contents;
}

LogDomainMode parse_log_domain(const std::string& name) {
  if (name == "auto") return LogDomainMode::Auto;
  if (name == "on") return LogDomainMode::On;
  if (name == "off") return LogDomainMode::Off;
  throw InputError("log_domain", "expected auto, on or off");
}

std::string log_domain_name(LogDomainMode mode) {
  switch (mode) {
    case LogDomainMode::Auto: return "auto";
    case LogDomainMode::On: return "on";
    case LogDomainMode::Off: return "off";
  }
  return "auto";
}

std::string format_double(double x) {
  if (std::isnan(x)) return "NaN";
  if (std::isinf(x)) return x > 0 ? "Infinity" : "-Infinity";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

Json to_json(const Vector& v) {
  Json a = Json::array();
  for (double x : v) a.push_back(x);
  return a;
}

Json to_json(const Matrix& m) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) a.push_back(to_json(Vector(m.row(i).transpose())));
  return a;
}

Vector vector_from_json(const Json& j, const std::string& where) {
  if (!j.is_array() || j.empty()) throw InputError(where, "expected a nonempty array of numbers");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = as_number(j[i], field(where, i));
  return v;
}

Matrix matrix_from_json(const Json& j, const std::string& where) {
  if (!j.is_array() || j.empty()) throw InputError(where, "expected a nonempty array of rows");
  const Vector first = vector_from_json(j[0], field(where, size_t{0}));
  Matrix m(static_cast<Eigen::Index>(j.size()), first.size());
  for (size_t i = 0; i < j.size(); ++i) {
    const Vector row = vector_from_json(j[i], field(where, i));
    if (row.size() != first.size()) throw InputError(field(where, i), "ragged matrix row");
    m.row(static_cast<Eigen::Index>(i)) = row.transpose();
  }
  return m;
}

std::string dump(const Json& doc) {
  // NaN and infinities are not JSON; they never appear in converged output,
  // but partial logs may carry them.
  return doc.dump(2, ' ', false, Json::error_handler_t::replace) + "\n";
}

ProblemFile parse_problem(const std::string& text, const std::string& source) {
  const Json doc = parse_json(text, source);
  ProblemFile pf;
  pf.hash = fnv1a_hex(text);
  if (!doc.is_object()) throw InputError(source, "top level must be an object");
  if (doc.contains("schema_version") && doc["schema_version"] != kSchemaVersion) {
    throw InputError("/schema_version", "unsupported schema version");
  }

  // Nodes: labels 1..J with optional size and state locations.
  const Json& nodes = require(doc, "nodes", "");
  if (!nodes.is_array() || nodes.empty()) throw InputError("/nodes", "expected a nonempty array");
  const int count = static_cast<int>(nodes.size());
  std::vector<int> sizes(count + 1, 0);
  std::vector<std::vector<Vector>> points(count + 1);
  std::set<int> seen;
  for (size_t i = 0; i < nodes.size(); ++i) {
    const std::string where = field("/nodes", i);
    const Json& nd = nodes[i];
    const int label = as_int(require(nd, "label", where), field(where, "label"));
    if (label < 1 || label > count) {
      throw InputError(field(where, "label"), "labels must be 1.." + std::to_string(count));
    }
    if (!seen.insert(label).second) throw InputError(field(where, "label"), "duplicate label");
    if (nd.contains("points")) {
      points[label] = points_from_json(nd["points"], field(where, "points"));
    } else if (nd.contains("line")) {
      const Json& ln = nd["line"];
      const int n = as_int(require(ln, "n", field(where, "line")), field(where, "line/n"));
      if (n < 1) throw InputError(field(where, "line/n"), "must be positive");
      const double lo = ln.contains("lo") ? as_number(ln["lo"], field(where, "line/lo")) : 0.0;
      const double hi = ln.contains("hi") ? as_number(ln["hi"], field(where, "line/hi")) : 1.0;
      points[label] = line_grid(n, lo, hi);
    } else if (nd.contains("lattice")) {
      const Json& lt = nd["lattice"];
      const int rows = as_int(require(lt, "rows", field(where, "lattice")), field(where, "lattice/rows"));
      const int cols = as_int(require(lt, "cols", field(where, "lattice")), field(where, "lattice/cols"));
      if (rows < 1 || cols < 1) throw InputError(field(where, "lattice"), "must be positive");
      points[label] = lattice(rows, cols);
    }
    if (!points[label].empty()) sizes[label] = static_cast<int>(points[label].size());
    if (nd.contains("size")) {
      const int n = as_int(nd["size"], field(where, "size"));
      if (n < 1) throw InputError(field(where, "size"), "must be positive");
      if (sizes[label] != 0 && sizes[label] != n) {
        throw InputError(field(where, "size"), "disagrees with the number of points");
      }
      sizes[label] = n;
    }
  }

  // Edges and their costs.
  const Json& edges = require(doc, "edges", "");
  if (!edges.is_array()) throw InputError("/edges", "expected an array");
  std::vector<Edge> edge_list;
  EdgeMatrices costs;
  std::vector<std::pair<size_t, Matrix>> stochastic;  // edge index, A
  for (size_t i = 0; i < edges.size(); ++i) {
    const std::string where = field("/edges", i);
    const Json& ed = edges[i];
    const Json& ends = require(ed, "nodes", where);
    if (!ends.is_array() || ends.size() != 2) throw InputError(field(where, "nodes"), "expected two labels");
    const Node a = as_int(ends[0], field(where, "nodes/0"));
    const Node b = as_int(ends[1], field(where, "nodes/1"));
    for (Node x : {a, b}) {
      if (x < 1 || x > count) throw InputError(field(where, "nodes"), "unknown node " + std::to_string(x));
    }
    edge_list.push_back({a, b});
    const Json& cost = require(ed, "cost", where);
    Matrix c;
    if (cost.is_string()) {
      const std::string kind = cost.get<std::string>();
      if (kind == "euclidean") {
        if (points[a].empty() || points[b].empty()) {
          throw InputError(field(where, "cost"), "euclidean cost needs points on both nodes");
        }
        if (points[a].front().size() != points[b].front().size()) {
          throw InputError(field(where, "cost"), "point dimensions differ between the nodes");
        }
        c = euclidean_cost(points[a], points[b]);
      } else if (kind == "neg_log_stochastic") {
        stochastic.push_back({i, matrix_from_json(require(ed, "matrix", where), field(where, "matrix"))});
        continue;
      } else {
        throw InputError(field(where, "cost"), "unknown cost kind '" + kind + "'");
      }
    } else {
      c = matrix_from_json(cost, field(where, "cost"));
    }
    if (costs.count({a, b}) || costs.count({b, a})) throw InputError(where, "duplicate edge");
    costs[{a, b}] = std::move(c);
  }

  // Epsilon: a number or a list.
  const Json& eps = require(doc, "epsilon", "");
  if (eps.is_array()) {
    if (eps.empty()) throw InputError("/epsilon", "empty list");
    for (size_t i = 0; i < eps.size(); ++i) pf.epsilons.push_back(as_number(eps[i], field("/epsilon", i)));
  } else {
    pf.epsilons.push_back(as_number(eps, "/epsilon"));
  }
  for (double e : pf.epsilons) {
    if (!(e > 0.0) || !std::isfinite(e)) throw InputError("/epsilon", "must be positive and finite");
  }

  // C = -eps log A for the first epsilon; the kernel is A for every epsilon,
  // so the matrix is stored and rescaled when epsilon changes.
  for (auto& [i, a] : stochastic) {
    const Edge e = edge_list[i];
    if ((a.array() < 0.0).any()) throw InputError(field(field("/edges", i), "matrix"), "negative entry");
    if (costs.count(e) || costs.count({e.second, e.first})) throw InputError(field("/edges", i), "duplicate edge");
    costs[e] = Matrix(-log_of(a));  // unit-epsilon cost, scaled below
  }

  const Json& marg = doc.contains("marginals") ? doc["marginals"] : Json::object();
  if (!marg.is_object()) throw InputError("/marginals", "expected an object keyed by label");
  for (const auto& [key, val] : marg.items()) {
    int label = 0;
    auto res = std::from_chars(key.data(), key.data() + key.size(), label);
    if (res.ec != std::errc() || res.ptr != key.data() + key.size() || label < 1 || label > count) {
      throw InputError(field("/marginals", key), "unknown node label");
    }
    if (val.is_object()) {
      // {"gaussian": {"center": c, "width": w}, "normalize": bool} on 1-D points.
      const std::string where = field("/marginals", key);
      const Json& g = require(val, "gaussian", where);
      if (points[label].empty() || points[label].front().size() != 1) {
        throw InputError(where, "gaussian marginal needs one-dimensional points on the node");
      }
      const double center = as_number(require(g, "center", field(where, "gaussian")), field(where, "gaussian/center"));
      const double width = as_number(require(g, "width", field(where, "gaussian")), field(where, "gaussian/width"));
      if (!(width > 0.0)) throw InputError(field(where, "gaussian/width"), "must be positive");
      Vector mu(static_cast<Eigen::Index>(points[label].size()));
      for (Eigen::Index i = 0; i < mu.size(); ++i) {
        const double z = (points[label][i][0] - center) / width;
        mu[i] = std::exp(-z * z);
      }
      if (val.contains("normalize") && val["normalize"].is_boolean() && val["normalize"].get<bool>()) {
        mu /= mu.sum();
      }
      pf.problem.constraints[label] = mu;
    } else {
      pf.problem.constraints[label] = vector_from_json(val, field("/marginals", key));
    }
    if (sizes[label] != 0 && pf.problem.constraints[label].size() != sizes[label]) {
      throw InputError(field("/marginals", key), "length disagrees with the node size");
    }
  }

  if (doc.contains("mode")) {
    if (!doc["mode"].is_string()) throw InputError("/mode", "expected a string");
    pf.mode = doc["mode"].get<std::string>();
    if (pf.mode != "multi" && pf.mode != "pairwise" && pf.mode != "bridge") {
      throw InputError("/mode", "expected multi, pairwise or bridge");
    }
  }
  if (doc.contains("options")) {
    const Json& opt = doc["options"];
    if (!opt.is_object()) throw InputError("/options", "expected an object");
    if (opt.contains("tol")) pf.tol = as_number(opt["tol"], "/options/tol");
    if (opt.contains("max_sweeps")) pf.max_sweeps = as_int(opt["max_sweeps"], "/options/max_sweeps");
    if (opt.contains("log_domain")) {
      if (!opt["log_domain"].is_string()) throw InputError("/options/log_domain", "expected a string");
      try {
        pf.log_domain = parse_log_domain(opt["log_domain"].get<std::string>());
      } catch (const InputError&) {
        throw InputError("/options/log_domain", "expected auto, on or off");
      }
    }
    if (opt.contains("seed")) {
      if (!opt["seed"].is_number_unsigned()) throw InputError("/options/seed", "expected a nonnegative integer");
      pf.seed = opt["seed"].get<std::uint64_t>();
    }
  }
  if (!(pf.tol > 0.0)) throw InputError("/options/tol", "must be positive");
  if (pf.max_sweeps < 1) throw InputError("/options/max_sweeps", "must be positive");
  if (doc.contains("root")) pf.root = as_int(doc["root"], "/root");
  if (doc.contains("plans")) {
    const Json& pl = doc["plans"];
    if (!pl.is_array()) throw InputError("/plans", "expected an array of label pairs");
    for (size_t i = 0; i < pl.size(); ++i) {
      if (!pl[i].is_array() || pl[i].size() != 2) throw InputError(field("/plans", i), "expected two labels");
      const Node a = as_int(pl[i][0], field("/plans", i));
      const Node b = as_int(pl[i][1], field("/plans", i));
      if (a < 1 || a > count || b < 1 || b > count || a == b) {
        throw InputError(field("/plans", i), "expected two distinct known labels");
      }
      pf.extra_plans.push_back({a, b});
    }
  }

  try {
    pf.problem.tree = validate_tree(count, edge_list);
  } catch (const Error& e) {
    throw InputError("/edges", e.what());
  }
  pf.problem.edge_costs = std::move(costs);
  pf.problem.epsilon = pf.epsilons.front();
  // Stochastic-matrix edges were stored at unit epsilon.
  for (auto& [i, a] : stochastic) {
    pf.problem.edge_costs[edge_list[i]] *= pf.problem.epsilon;
    pf.stochastic_edges.push_back(edge_list[i]);
  }
  for (Node j = 1; j <= count; ++j) {
    if (pf.problem.tree.degree(j) == 0 && !pf.problem.constraints.count(j)) {
      throw InputError("/marginals", "isolated node " + std::to_string(j) + " needs a marginal");
    }
  }
  return pf;
}

TreeOTProblem problem_at(const ProblemFile& file, double epsilon) {
  TreeOTProblem p = file.problem;
  for (const Edge& e : file.stochastic_edges) p.edge_costs[e] *= epsilon / file.problem.epsilon;
  p.epsilon = epsilon;
  return p;
}

}  // namespace treeot::cli
