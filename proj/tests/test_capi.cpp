#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <string>

#include <json.hpp>

#include "mixedcq.h"

using json = nlohmann::json;

namespace {

std::string fixture(const std::string& name) {
  return std::string(FIXTURE_DIR) + "/" + name;
}

struct Str {
  char* s = nullptr;
  ~Str() { mcq_string_free(s); }
};

std::string analytic_candidateB(int N) {
  json t;
  double h = 1.0 / N, x = 0.0;
  for (int k = 0; k <= N; ++k) {
    t["grid"].push_back(k * h);
    t["x"].push_back(std::vector<double>{x});
    if (k < N) {
      t["u"].push_back(std::vector<double>{x + 1.0});
      x += h * (x + 1.0);
    }
  }
  return t.dump();
}

}  // namespace

TEST_CASE("problem handles: load, serialize, free") {
  mcq_problem* ps = nullptr;
  REQUIRE(mcq_problem_from_file(fixture("exampleA.json").c_str(), &ps) == MCQ_OK);
  Str js;
  REQUIRE(mcq_problem_to_json(ps, &js.s) == MCQ_OK);
  json j = json::parse(js.s);
  CHECK(j["n"] == 1);
  CHECK(j["phi"][0] == "u1");
  mcq_problem_free(ps);
}

TEST_CASE("error codes and last_error") {
  mcq_problem* ps = nullptr;
  CHECK(mcq_problem_from_file("/nonexistent/path.json", &ps) == MCQ_ERR_IO);
  CHECK(std::string(mcq_last_error()).find("cannot open") != std::string::npos);
  CHECK(mcq_problem_from_json("{\"n\": 1}", &ps) == MCQ_ERR_VALIDATE);
  CHECK(mcq_problem_from_json(nullptr, &ps) == MCQ_ERR_BADARG);

  std::string bad_h = R"json({
    "n": 1, "m": 1, "l": 0, "s": 1, "t0": 0.0, "t1": 1.0,
    "F": "0", "f": "0", "phi": ["u1"], "g": [], "h": ["abs(u1)"],
    "U": {"lower": ["-inf"], "upper": ["inf"]},
    "E": {"x0": ["free"], "x1": ["free"]},
    "R": "inf"
  })json";
  CHECK(mcq_problem_from_json(bad_h.c_str(), &ps) == MCQ_ERR_VALIDATE);
}

TEST_CASE("trajectory handle validates against the problem") {
  mcq_problem* ps = nullptr;
  REQUIRE(mcq_problem_from_file(fixture("exampleB.json").c_str(), &ps) == MCQ_OK);
  mcq_trajectory* traj = nullptr;
  std::string good = analytic_candidateB(8);
  REQUIRE(mcq_trajectory_from_json(ps, good.c_str(), &traj) == MCQ_OK);
  Str js;
  CHECK(mcq_trajectory_to_json(traj, &js.s) == MCQ_OK);
  mcq_trajectory_free(traj);

  std::string bad = R"({"grid": [0.0, 1.0], "x": [[0.0]], "u": [[0.0]]})";
  CHECK(mcq_trajectory_from_json(ps, bad.c_str(), &traj) == MCQ_ERR_VALIDATE);
  mcq_problem_free(ps);
}

TEST_CASE("analyze_cq reports are byte-identical for identical config and seed") {
  mcq_problem* ps = nullptr;
  REQUIRE(mcq_problem_from_file(fixture("section2_example.json").c_str(), &ps) == MCQ_OK);
  Str r1, r2;
  const char* opts = R"({"seed": 7, "samples": 16})";
  REQUIRE(mcq_analyze_cq(ps, nullptr, opts, &r1.s) == MCQ_OK);
  REQUIRE(mcq_analyze_cq(ps, nullptr, opts, &r2.s) == MCQ_OK);
  CHECK(std::string(r1.s) == std::string(r2.s));

  json rep = json::parse(r1.s);
  bool saw_nnamcq = false, saw_wbcq = false;
  for (const auto& v : rep["verdicts"]) {
    if (v["kind"] == "NNAMCQ") {
      saw_nnamcq = true;
      CHECK(v["holds"] == false);
      CHECK(v.contains("witness"));
    }
    if (v["kind"] == "WBCQ") {
      saw_wbcq = true;
      CHECK(v["holds"] == true);
    }
  }
  CHECK(saw_nnamcq);
  CHECK(saw_wbcq);
  CHECK(rep["calmness"]["holds"] == true);
  CHECK(rep["gamma_pseudo_lipschitz"]["certified"] == true);
  mcq_problem_free(ps);
}

TEST_CASE("solve and verify through the C surface") {
  mcq_problem* ps = nullptr;
  REQUIRE(mcq_problem_from_file(fixture("exampleA.json").c_str(), &ps) == MCQ_OK);
  mcq_trajectory* traj = nullptr;
  Str report;
  int converged = 0;
  REQUIRE(mcq_solve(ps, 200, nullptr, &traj, &report.s, &converged) == MCQ_OK);
  CHECK(converged == 1);

  Str cert;
  int pass = 0;
  REQUIRE(mcq_verify(ps, traj, nullptr, &cert.s, &pass) == MCQ_OK);
  CHECK(pass == 1);
  json cj = json::parse(cert.s);
  CHECK(cj["lambda0"] == 1.0);
  mcq_trajectory_free(traj);
  mcq_problem_free(ps);
}

TEST_CASE("estimate_setmap through the C surface") {
  mcq_problem* ps = nullptr;
  REQUIRE(mcq_problem_from_file(fixture("exampleB.json").c_str(), &ps) == MCQ_OK);
  mcq_trajectory* traj = nullptr;
  std::string cand = analytic_candidateB(16);
  REQUIRE(mcq_trajectory_from_json(ps, cand.c_str(), &traj) == MCQ_OK);
  Str report;
  const char* opts = R"({"eps": 0.05, "radius_const": 1.0, "seed": 3})";
  REQUIRE(mcq_estimate_setmap(ps, traj, opts, &report.s) == MCQ_OK);
  json j = json::parse(report.s);
  CHECK(j["bounded_slope"]["bounded"] == true);
  CHECK(j["tempered_growth"]["holds"] == true);
  CHECK(j["cluster_points"].size() >= 17);
  mcq_trajectory_free(traj);
  mcq_problem_free(ps);
}

TEST_CASE("audit through the C surface") {
  Str report;
  int violations = -1;
  REQUIRE(mcq_audit(7, 10, &report.s, &violations) == MCQ_OK);
  CHECK(violations == 0);
  json j = json::parse(report.s);
  CHECK(j["count"] == 10);
  CHECK(j["violations"].empty());

  // count 0 gives an empty, well-formed report.
  Str empty;
  REQUIRE(mcq_audit(7, 0, &empty.s, &violations) == MCQ_OK);
  CHECK(violations == 0);
}
