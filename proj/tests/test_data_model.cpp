#include <doctest.h>

#include <random>
#include <sstream>

#include "stratify/data_model.hpp"
#include "stratify/errors.hpp"
#include "support.hpp"

using namespace stratify;

namespace {

Schema two_covariate_schema(std::size_t arms) {
  Schema s;
  s.treatment = "arm";
  s.outcome = "y";
  s.arms = arms;
  s.covariates = {{"age", CovariateKind::continuous, 0, {}}, {"sex", CovariateKind::discrete, 0, {}}};
  return s;
}

Dataset parse_text(const std::string& text, const Schema& schema) {
  std::istringstream in(text);
  return parse_dataset(csv::parse(in, "test.csv"), schema, "test.csv");
}

}  // namespace

TEST_CASE("three-row file with one continuous and one binary covariate") {
  const Dataset ds = parse_text("arm,y,age,sex\n1,2.5,40,F\n2,3.0,51,M\n1,1.5,33,F\n", two_covariate_schema(2));
  CHECK(ds.size() == 3);
  CHECK(ds.p1() == 1);
  CHECK(ds.p2() == 1);
  CHECK(ds.categories[0] == 2);
  CHECK(ds.continuous(1, 0) == 51.0);
  CHECK(ds.discrete(0, 0) == 1);
  CHECK(ds.discrete(1, 0) == 2);
  CHECK(ds.treatment == std::vector<int>{1, 2, 1});
}

TEST_CASE("treatment outside 1..K names the row and column") {
  try {
    parse_text("arm,y,age,sex\n1,2.5,40,F\n4,3.0,51,M\n", two_covariate_schema(3));
    FAIL("expected a data error");
  } catch (const DataError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("row 2") != std::string::npos);
    CHECK(msg.find("'arm'") != std::string::npos);
  }
}

TEST_CASE("missing and unparseable cells are data errors") {
  CHECK_THROWS_AS(parse_text("arm,y,age,sex\n1,,40,F\n", two_covariate_schema(2)), DataError);
  CHECK_THROWS_AS(parse_text("arm,y,age,sex\n1,2,NA,F\n", two_covariate_schema(2)), DataError);
  CHECK_THROWS_AS(parse_text("arm,y,age,sex\n1,2,abc,F\n", two_covariate_schema(2)), DataError);
  CHECK_THROWS_AS(parse_text("arm,y,age\n1,2,3\n", two_covariate_schema(2)), DataError);
  CHECK_THROWS_AS(parse_text("arm,y,age,sex\n1.5,2,3,F\n", two_covariate_schema(2)), DataError);
}

TEST_CASE("three labels give three categories with a stable encoding") {
  Schema s;
  s.treatment = "arm";
  s.outcome = "y";
  s.arms = 2;
  s.covariates = {{"g", CovariateKind::discrete, 0, {}}};
  const std::string text = "arm,y,g\n1,0,c\n2,1,a\n1,2,b\n2,3,a\n";
  const Dataset a = parse_text(text, s);
  const Dataset b = parse_text(text, s);
  CHECK(a.categories[0] == 3);
  CHECK(a.encodings[0].labels == std::vector<std::string>{"a", "b", "c"});
  CHECK(a.discrete(0, 0) == 3);
  CHECK(a.discrete(1, 0) == 1);
  CHECK(a.encodings[0].labels == b.encodings[0].labels);
}

TEST_CASE("numeric labels are ordered numerically") {
  Schema s;
  s.treatment = "arm";
  s.outcome = "y";
  s.arms = 1;
  s.covariates = {{"g", CovariateKind::discrete, 0, {}}};
  const Dataset ds = parse_text("arm,y,g\n1,0,10\n1,1,2\n1,2,0\n", s);
  CHECK(ds.encodings[0].labels == std::vector<std::string>{"0", "2", "10"});
}

TEST_CASE("schema validation") {
  Schema s = two_covariate_schema(2);
  CHECK_NOTHROW(s.validate());
  s.covariates.push_back({"age", CovariateKind::continuous, 0, {}});
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = two_covariate_schema(2);
  s.covariates[1].categories = 1;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = two_covariate_schema(2);
  s.covariates.clear();
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = two_covariate_schema(2);
  s.benefit = "g";
  CHECK_THROWS_AS(s.validate(), ConfigError);
}

TEST_CASE("schema JSON round trip") {
  Schema s = two_covariate_schema(3);
  s.covariates[1].levels = {"F", "M"};
  s.covariates[1].categories = 2;
  s.tradeoff = 1.5;
  const Schema back = schema_from_json(schema_to_json(s));
  CHECK(schema_to_json(back) == schema_to_json(s));
}

TEST_CASE("utility transform") {
  CHECK(compute_utility(10.0, 2.0, {3.0}) == 4.0);
  CHECK(compute_utility(7.25, 9.0, {0.0}) == 7.25);
  CHECK(compute_utility(7.25, 0.0, {2.0}) == 7.25);
}

TEST_CASE("benefit and risk columns build the utility outcome") {
  Schema s;
  s.treatment = "arm";
  s.benefit = "g";
  s.risk = "r";
  s.tradeoff = 3.0;
  s.arms = 2;
  s.covariates = {{"x", CovariateKind::continuous, 0, {}}};
  const Dataset ds = parse_text("arm,g,r,x\n1,10,2,0\n2,5,1,1\n", s);
  CHECK(ds.outcome == std::vector<double>{4.0, 2.0});
}

TEST_CASE("column summaries") {
  Dataset ds;
  ds.arms = 1;
  ds.treatment = {1, 1, 1, 1};
  ds.outcome = {0, 0, 0, 0};
  ds.continuous_names = {"x"};
  ds.continuous.resize(4, 1);
  ds.continuous << 1, 2, 3, 2;
  ds.discrete_names = {"b", "t"};
  ds.categories = {2, 3};
  ds.discrete.resize(4, 2);
  ds.discrete << 1, 1, 1, 1, 2, 1, 2, 2;
  ds.encodings = {{"b", {"1", "2"}}, {"t", {"1", "2", "3"}}};
  const EmpiricalReference ref = summarize_columns(ds);
  CHECK(ref.means[0] == 2.0);
  CHECK(ref.proportions[0] == std::vector<double>{0.5, 0.5});
  CHECK(ref.proportions[1] == std::vector<double>{0.75, 0.25, 0.0});
}

TEST_CASE("column mean of (1, 2, 3)") {
  Dataset ds;
  ds.arms = 1;
  ds.treatment = {1, 1, 1};
  ds.outcome = {0, 0, 0};
  ds.continuous_names = {"x"};
  ds.continuous.resize(3, 1);
  ds.continuous << 1, 2, 3;
  ds.discrete.resize(3, 0);
  CHECK(summarize_columns(ds).means[0] == 2.0);
}

TEST_CASE("category proportions sum to one on random data") {
  std::mt19937_64 g(11);
  for (int rep = 0; rep < 50; ++rep) {
    const std::size_t n = 1 + g() % 97;
    Dataset ds = testing::random_dataset(g, n, 2, 1, 3);
    for (const auto& p : summarize_columns(ds).proportions) {
      double total = 0.0;
      for (double v : p) total += v;
      CHECK(total == doctest::Approx(1.0).epsilon(1e-15));
    }
  }
}

TEST_CASE("write then load reproduces the data set") {
  std::mt19937_64 g(5);
  testing::TempDir dir;
  for (int rep = 0; rep < 20; ++rep) {
    const Dataset ds = testing::random_dataset(g, 5 + g() % 40, 1 + g() % 4, g() % 3, 1 + g() % 2);
    write_dataset(ds, dir / "d.csv");
    save_schema(dataset_schema(ds), dir / "s.json");
    const Dataset back = load_dataset(dir / "d.csv", load_schema(dir / "s.json"));
    CHECK(back == ds);
  }
}
