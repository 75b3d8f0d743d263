#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <random>
#include <sstream>

#include "dte/panel.hpp"

using namespace dte;

namespace {

std::string csv(std::initializer_list<const char*> lines) {
  std::string out;
  for (const char* l : lines) {
    out += l;
    out += '\n';
  }
  return out;
}

PanelDataset parse(const std::string& text, const PanelSchema& schema = {}) {
  std::istringstream in(text);
  return load_panel(in, schema);
}

}  // namespace

TEST_CASE("pattern parsing and validation") {
  CHECK(Pattern::parse("101").bits() == std::vector<int>{1, 0, 1});
  CHECK(Pattern::parse("1,0,1") == Pattern::parse("101"));
  CHECK(Pattern::parse("110101").size() == 6);
  CHECK(Pattern::parse("011").str() == "011");
  CHECK_THROWS_AS(Pattern::parse("10"), ConfigError);
  CHECK_THROWS_AS(Pattern::parse("1021"), ConfigError);
  CHECK_THROWS_AS(Pattern({1, 2, 0}), ConfigError);
}

TEST_CASE("complete panel ingests every record") {
  auto data = parse(csv({"id,period,treatment,outcome",
                         "a,1,0,1.0", "a,2,0,1.1", "a,3,1,1.2",
                         "b,1,0,2.0", "b,2,1,2.1", "b,3,1,2.2",
                         "c,1,1,3.0", "c,2,1,3.1", "c,3,1,3.2"}));
  CHECK(data.records().size() == 9);
  CHECK(data.dropped_rows() == 0);
  CHECK(data.periods() == std::vector<long>{1, 2, 3});
}

TEST_CASE("unit missing a period is dropped from that window") {
  auto data = parse(csv({"id,period,treatment,outcome",
                         "a,1,0,1.0", "a,3,1,1.2",
                         "b,1,0,2.0", "b,2,1,2.1", "b,3,1,2.2"}));
  std::size_t dropped = 0;
  auto units = data.balanced_units({1, 2, 3}, &dropped);
  CHECK(units == std::vector<std::string>{"b"});
  CHECK(dropped == 1);
}

TEST_CASE("rows with empty treatment or outcome are dropped and counted") {
  auto data = parse(csv({"id,period,treatment,outcome",
                         "a,1,,1.0", "a,2,0,", "b,1,1,5.0"}));
  CHECK(data.records().size() == 1);
  CHECK(data.dropped_rows() == 2);
}

TEST_CASE("ingestion errors carry line numbers and reasons") {
  CHECK_THROWS_WITH(parse(csv({"id,period,treatment,outcome", "a,1,2,1.0"})),
                    Catch::Matchers::ContainsSubstring("line 2") &&
                        Catch::Matchers::ContainsSubstring("non-binary"));
  CHECK_THROWS_AS(parse(csv({"id,period,treatment,outcome", "a,x,1,1.0"})),
                  DataError);
  CHECK_THROWS_AS(parse(csv({"id,period,treatment,outcome", "a,1,1"})),
                  DataError);
  CHECK_THROWS_AS(
      parse(csv({"id,period,treatment,outcome", "a,1,1,2.0", "a,1,1,2.0"})),
      DataError);
  CHECK_THROWS_AS(parse(csv({"id,period,value", "a,1,2"})), DataError);
}

TEST_CASE("schema remaps column names and extra columns become covariates") {
  PanelSchema s;
  s.unit_column = "pid";
  s.outcome_column = "bmi";
  auto data = parse(csv({"pid,period,treatment,bmi,sex",
                         "a,1,0,21.5,f", "a,2,1,22.0,f"}),
                    s);
  REQUIRE(data.records().size() == 2);
  CHECK(data.records()[0].covariates.at("sex") == "f");
  CHECK(data.records()[0].outcome == 21.5);
}

TEST_CASE("classification partitions balanced units") {
  auto data = parse(csv({"id,period,treatment,outcome",
                         "a,1,1,1.0", "a,2,1,1.1", "a,3,1,1.2",
                         "b,1,1,2.0", "b,2,0,2.1", "b,3,1,2.2",
                         "c,1,1,3.0", "c,2,1,3.1", "c,3,0,3.2"}));
  GroupIndex index(data, {1, 2, 3});
  CHECK(index.n_units() == 3);
  CHECK(index.group_size(Pattern::parse("111")) == 1);
  CHECK(index.group_size(Pattern::parse("101")) == 1);
  CHECK(index.group_size(Pattern::parse("110")) == 1);
  CHECK(index.proportion(Pattern::parse("111")) == Catch::Approx(1.0 / 3.0));
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& [p, units] : index.groups()) {
    total += index.proportion(p);
    n += units.size();
  }
  CHECK(total == Catch::Approx(1.0));
  CHECK(n == index.n_units());
}

TEST_CASE("six-period window classifies by the full pattern") {
  std::string text = "id,period,treatment,outcome\n";
  for (int p = 1; p <= 6; ++p)
    text += "a," + std::to_string(p) + "," + ((p <= 3) ? "1" : "0") + ",1.0\n";
  auto data = parse(text);
  GroupIndex index(data, {1, 2, 3, 4, 5, 6});
  CHECK(index.group_size(Pattern::parse("111000")) == 1);
}

TEST_CASE("all units in one pattern concentrate the proportions") {
  auto data = parse(csv({"id,period,treatment,outcome",
                         "a,1,0,1.0", "a,2,0,1.1", "a,3,0,1.2",
                         "b,1,0,2.0", "b,2,0,2.1", "b,3,0,2.2"}));
  GroupIndex index(data, {1, 2, 3});
  CHECK(index.proportion(Pattern::parse("000")) == 1.0);
  CHECK(index.proportion(Pattern::parse("111")) == 0.0);
}

TEST_CASE("group matrix extraction, filtering and minimum size") {
  auto data = parse(csv({"id,period,treatment,outcome,sex",
                         "a,1,1,1.0,f", "a,2,1,1.1,f", "a,3,1,1.2,f",
                         "b,1,1,2.0,m", "b,2,1,2.1,m", "b,3,1,2.2,m"}));
  GroupIndex index(data, {1, 2, 3});
  auto m = group_matrix(data, index, Pattern::parse("111"), {}, 1);
  REQUIRE(m.size() == 2);
  CHECK(m[0] == std::vector<double>{1.0, 1.1, 1.2});
  CHECK(column(m, 2) == std::vector<double>{1.2, 2.2});

  GroupFilter f;
  f.covariate_cells["sex"] = "f";
  auto mf = group_matrix(data, index, Pattern::parse("111"), f, 1);
  REQUIRE(mf.size() == 1);
  CHECK(mf[0][0] == 1.0);

  f.covariate_cells["sex"] = "x";
  CHECK_THROWS_AS(group_matrix(data, index, Pattern::parse("111"), f, 1),
                  InsufficientDataError);
  CHECK_THROWS_AS(group_matrix(data, index, Pattern::parse("111"), {}, 20),
                  InsufficientDataError);
  CHECK_THROWS_AS(group_matrix(data, index, Pattern::parse("000"), {}, 1),
                  InsufficientDataError);
}

TEST_CASE("outcome trimming filter drops units outside the interval") {
  auto data = parse(csv({"id,period,treatment,outcome",
                         "a,1,1,18.0", "a,2,1,19.0", "a,3,1,20.0",
                         "b,1,1,10.0", "b,2,1,19.0", "b,3,1,20.0"}));
  GroupIndex index(data, {1, 2, 3});
  GroupFilter f;
  f.outcome_min = 17.5;
  f.outcome_max = 42.0;
  auto m = group_matrix(data, index, Pattern::parse("111"), f, 1);
  CHECK(m.size() == 1);
}

TEST_CASE("row order does not affect grouping or matrices") {
  std::vector<std::string> rows;
  std::mt19937 rng(7);
  for (int u = 0; u < 30; ++u)
    for (int p = 1; p <= 3; ++p)
      rows.push_back("u" + std::to_string(u) + "," + std::to_string(p) + "," +
                     std::to_string((u + p) % 2) + "," +
                     std::to_string(u * 10 + p));
  auto build = [&]() {
    std::string text = "id,period,treatment,outcome\n";
    for (const auto& r : rows) text += r + "\n";
    auto data = parse(text);
    GroupIndex index(data, {1, 2, 3});
    std::vector<std::vector<std::vector<double>>> out;
    for (const auto& [p, units] : index.groups())
      out.push_back(group_matrix(data, index, p, {}, 1));
    return out;
  };
  auto before = build();
  std::shuffle(rows.begin(), rows.end(), rng);
  CHECK(build() == before);
}
