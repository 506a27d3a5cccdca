#include "mixedcq/model.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mixedcq/errors.hpp"

namespace mixedcq::model {

using json = nlohmann::ordered_json;

bool Box::unconstrained() const {
  for (double v : lower)
    if (std::isfinite(v)) return false;
  for (double v : upper)
    if (std::isfinite(v)) return false;
  return true;
}

bool Box::inside(const Vec& u, double tol) const {
  for (std::size_t j = 0; j < u.size(); ++j)
    if (u[j] < lower[j] - tol || u[j] > upper[j] + tol) return false;
  return true;
}

double Box::distance(const Vec& u) const {
  double d2 = 0.0;
  for (std::size_t j = 0; j < u.size(); ++j) {
    double gap = 0.0;
    if (u[j] < lower[j]) gap = lower[j] - u[j];
    if (u[j] > upper[j]) gap = u[j] - upper[j];
    d2 += gap * gap;
  }
  return std::sqrt(d2);
}

Vec Box::clamp(const Vec& u) const {
  Vec v(u);
  for (std::size_t j = 0; j < v.size(); ++j) v[j] = std::min(std::max(v[j], lower[j]), upper[j]);
  return v;
}

bool ProblemSpec::smooth_g() const {
  for (const ExprAst& e : g)
    if (!expr::is_smooth(e)) return false;
  return true;
}

bool ProblemSpec::smooth_phi() const {
  for (const ExprAst& e : phi)
    if (!expr::is_smooth(e)) return false;
  return true;
}

bool ProblemSpec::every_final_coordinate_free() const {
  for (const EndpointMark& mk : e1)
    if (mk.fixed) return false;
  return true;
}

namespace {

double bound_from_json(const json& v, const std::string& path) {
  if (v.is_null()) return num::kInf;  // unbounded by omission
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) {
    std::string s = v.get<std::string>();
    if (s == "inf" || s == "+inf") return num::kInf;
    if (s == "-inf") return -num::kInf;
  }
  throw ValidationError(path, "expected a number, \"inf\", \"-inf\" or null");
}

json bound_to_json(double v) {
  if (v == num::kInf) return "inf";
  if (v == -num::kInf) return "-inf";
  return v;
}

EndpointMark mark_from_json(const json& v, const std::string& path) {
  if (v.is_string() && v.get<std::string>() == "free") return {false, 0.0};
  if (v.is_object() && v.contains("fixed") && v["fixed"].is_number())
    return {true, v["fixed"].get<double>()};
  throw ValidationError(path, "expected \"free\" or {\"fixed\": value}");
}

json mark_to_json(const EndpointMark& mk) {
  if (!mk.fixed) return "free";
  return json{{"fixed", mk.value}};
}

const json& need(const json& j, const char* key, const std::string& ctx) {
  if (!j.contains(key)) throw ValidationError(ctx + key, "missing key");
  return j.at(key);
}

ExprAst parse_field(const json& v, expr::Dims dims, const std::string& path) {
  if (!v.is_string()) throw ValidationError(path, "expected an expression string");
  try {
    return expr::parse_expression(v.get<std::string>(), dims);
  } catch (const ParseError& err) {
    throw ValidationError(path, err.what());
  }
}

}  // namespace

ProblemSpec load_problem(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const nlohmann::json::parse_error& err) {
    throw ValidationError("<root>", std::string("invalid JSON: ") + err.what());
  }

  ProblemSpec ps;
  ps.n = need(j, "n", "").get<int>();
  ps.m = need(j, "m", "").get<int>();
  ps.l = need(j, "l", "").get<int>();
  ps.s = need(j, "s", "").get<int>();
  ps.t0 = need(j, "t0", "").get<double>();
  ps.t1 = need(j, "t1", "").get<double>();
  if (ps.n < 1) throw ValidationError("n", "state dimension must be positive");
  if (ps.m < 1) throw ValidationError("m", "control dimension must be positive");
  if (ps.l < 0 || ps.s < 0) throw ValidationError("l", "constraint counts must be nonnegative");
  if (!(ps.t0 < ps.t1)) throw ValidationError("t0", "t0 must be strictly below t1");

  expr::Dims dims{ps.n, ps.m};
  ps.F = parse_field(need(j, "F", ""), dims, "F");
  ps.f = parse_field(need(j, "f", ""), {2 * ps.n, 0}, "f");

  const json& jphi = need(j, "phi", "");
  if (!jphi.is_array() || static_cast<int>(jphi.size()) != ps.n)
    throw ValidationError("phi", "expected an array of n expressions");
  for (int i = 0; i < ps.n; ++i)
    ps.phi.push_back(parse_field(jphi[i], dims, "phi[" + std::to_string(i) + "]"));

  const json& jg = need(j, "g", "");
  if (!jg.is_array() || static_cast<int>(jg.size()) != ps.l)
    throw ValidationError("g", "expected an array of l expressions");
  for (int i = 0; i < ps.l; ++i)
    ps.g.push_back(parse_field(jg[i], dims, "g[" + std::to_string(i) + "]"));

  const json& jh = need(j, "h", "");
  if (!jh.is_array() || static_cast<int>(jh.size()) != ps.s)
    throw ValidationError("h", "expected an array of s expressions");
  for (int i = 0; i < ps.s; ++i) {
    std::string path = "h[" + std::to_string(i) + "]";
    ps.h.push_back(parse_field(jh[i], dims, path));
    if (!expr::is_smooth(ps.h.back())) throw ValidationError(path, "h must be smooth");
  }

  const json& ju = need(j, "U", "");
  const json& jlo = need(ju, "lower", "U.");
  const json& jup = need(ju, "upper", "U.");
  if (!jlo.is_array() || static_cast<int>(jlo.size()) != ps.m ||
      !jup.is_array() || static_cast<int>(jup.size()) != ps.m)
    throw ValidationError("U", "lower/upper must be arrays of length m");
  for (int jx = 0; jx < ps.m; ++jx) {
    ps.U.lower.push_back(bound_from_json(jlo[jx], "U.lower[" + std::to_string(jx) + "]"));
    ps.U.upper.push_back(bound_from_json(jup[jx], "U.upper[" + std::to_string(jx) + "]"));
    if (ps.U.lower[jx] > ps.U.upper[jx])
      throw ValidationError("U.lower[" + std::to_string(jx) + "]", "lower bound exceeds upper bound");
  }

  const json& je = need(j, "E", "");
  const json& jx0 = need(je, "x0", "E.");
  const json& jx1 = need(je, "x1", "E.");
  if (!jx0.is_array() || static_cast<int>(jx0.size()) != ps.n ||
      !jx1.is_array() || static_cast<int>(jx1.size()) != ps.n)
    throw ValidationError("E", "x0/x1 must be arrays of length n");
  for (int i = 0; i < ps.n; ++i) {
    ps.e0.push_back(mark_from_json(jx0[i], "E.x0[" + std::to_string(i) + "]"));
    ps.e1.push_back(mark_from_json(jx1[i], "E.x1[" + std::to_string(i) + "]"));
  }

  const json& jr = need(j, "R", "");
  if (jr.is_string() && jr.get<std::string>() == "inf") {
    ps.R.infinite = true;
  } else if (jr.is_number()) {
    ps.R.infinite = false;
    ps.R.value = jr.get<double>();
    if (!(ps.R.value > 0.0)) throw ValidationError("R", "radius must be positive");
  } else {
    throw ValidationError("R", "expected \"inf\" or a positive number");
  }
  return ps;
}

ProblemSpec load_problem_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return load_problem(ss.str());
}

std::string problem_to_json(const ProblemSpec& ps) {
  json j;
  j["n"] = ps.n;
  j["m"] = ps.m;
  j["l"] = ps.l;
  j["s"] = ps.s;
  j["t0"] = ps.t0;
  j["t1"] = ps.t1;
  j["F"] = expr::to_string(ps.F);
  j["f"] = expr::to_string(ps.f);
  j["phi"] = json::array();
  for (const ExprAst& e : ps.phi) j["phi"].push_back(expr::to_string(e));
  j["g"] = json::array();
  for (const ExprAst& e : ps.g) j["g"].push_back(expr::to_string(e));
  j["h"] = json::array();
  for (const ExprAst& e : ps.h) j["h"].push_back(expr::to_string(e));
  j["U"] = json::object();
  j["U"]["lower"] = json::array();
  j["U"]["upper"] = json::array();
  for (int jx = 0; jx < ps.m; ++jx) {
    j["U"]["lower"].push_back(bound_to_json(ps.U.lower[jx]));
    j["U"]["upper"].push_back(bound_to_json(ps.U.upper[jx]));
  }
  j["E"] = json::object();
  j["E"]["x0"] = json::array();
  j["E"]["x1"] = json::array();
  for (int i = 0; i < ps.n; ++i) {
    j["E"]["x0"].push_back(mark_to_json(ps.e0[i]));
    j["E"]["x1"].push_back(mark_to_json(ps.e1[i]));
  }
  j["R"] = ps.R.infinite ? json("inf") : json(ps.R.value);
  return j.dump(2);
}

Trajectory load_trajectory(const std::string& json_text, const ProblemSpec& ps) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const nlohmann::json::parse_error& err) {
    throw ValidationError("<root>", std::string("invalid JSON: ") + err.what());
  }
  Trajectory traj;
  const json& jgrid = need(j, "grid", "");
  const json& jx = need(j, "x", "");
  const json& ju = need(j, "u", "");
  if (!jgrid.is_array() || jgrid.size() < 2) throw ValidationError("grid", "expected at least two times");
  for (const auto& v : jgrid) traj.grid.push_back(v.get<double>());
  for (const auto& row : jx) traj.x.push_back(row.get<Vec>());
  for (const auto& row : ju) traj.u.push_back(row.get<Vec>());
  validate_trajectory(ps, traj);
  return traj;
}

Trajectory load_trajectory_file(const std::string& path, const ProblemSpec& ps) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return load_trajectory(ss.str(), ps);
}

std::string trajectory_to_json(const Trajectory& traj) {
  json j;
  j["grid"] = traj.grid;
  j["x"] = traj.x;
  j["u"] = traj.u;
  return j.dump(2);
}

std::string multipliers_to_json(const MultiplierArc& arc) {
  json j;
  j["lambda0"] = arc.lambda0;
  j["p"] = arc.p;
  j["lam"] = arc.lam;
  j["varpi"] = arc.varpi;
  j["xi0"] = arc.xi0;
  j["xi1"] = arc.xi1;
  return j.dump(2);
}

void validate_trajectory(const ProblemSpec& ps, const Trajectory& traj) {
  const int N = static_cast<int>(traj.grid.size()) - 1;
  if (N < 1) throw ValidationError("grid", "need at least one segment");
  double span = ps.t1 - ps.t0;
  if (std::abs(traj.grid.front() - ps.t0) > 1e-9 * std::max(1.0, std::abs(span)))
    throw ValidationError("grid", "grid must start at t0");
  if (std::abs(traj.grid.back() - ps.t1) > 1e-9 * std::max(1.0, std::abs(span)))
    throw ValidationError("grid", "grid must end at t1");
  for (int k = 0; k < N; ++k)
    if (!(traj.grid[k] < traj.grid[k + 1]))
      throw ValidationError("grid[" + std::to_string(k + 1) + "]", "grid must be strictly increasing");
  if (static_cast<int>(traj.x.size()) != N + 1)
    throw ValidationError("x", "expected N+1 state samples");
  if (static_cast<int>(traj.u.size()) != N)
    throw ValidationError("u", "expected N control samples");
  for (int k = 0; k <= N; ++k)
    if (static_cast<int>(traj.x[k].size()) != ps.n)
      throw ValidationError("x[" + std::to_string(k) + "]", "state dimension mismatch");
  for (int k = 0; k < N; ++k)
    if (static_cast<int>(traj.u[k].size()) != ps.m)
      throw ValidationError("u[" + std::to_string(k) + "]", "control dimension mismatch");
}

double feasibility_residual(const ProblemSpec& ps, const EvalPoint& z) {
  double gmax = 0.0;
  for (const ExprAst& gi : ps.g) gmax = std::max(gmax, expr::evaluate(gi, z));
  double h2 = 0.0;
  for (const ExprAst& hj : ps.h) {
    double v = expr::evaluate(hj, z);
    h2 += v * v;
  }
  return gmax + std::sqrt(h2) + ps.U.distance(z.u);
}

EvalPoint node_point(const ProblemSpec& ps, const Trajectory& traj, int k) {
  (void)ps;
  EvalPoint p;
  int N = traj.segments();
  p.t = traj.grid[k];
  p.x = traj.x[k];
  p.u = traj.u[std::min(k, N - 1)];
  return p;
}

}  // namespace mixedcq::model
