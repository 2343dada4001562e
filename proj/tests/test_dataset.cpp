#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>

#include "doctest.h"
#include "dtr/dataset.hpp"
#include "dtr/rng.hpp"
#include "oracles.hpp"

namespace {

dtr::Dataset five_stage_shell() {
  dtr::Dataset data;
  data.p = 2;
  data.k = 3;
  data.stage_boundaries = {0.0, 0.5, 1.0, 1.5, 2.0};
  return data;
}

dtr::Trajectory make_subject(const dtr::Dataset& data, const std::string& id,
                             double time, int event) {
  dtr::Trajectory subj;
  subj.id = id;
  subj.time = time;
  subj.event = event;
  subj.stages.resize(data.stage_of(time));
  for (auto& stage : subj.stages) {
    stage.x.assign(data.p, 0.25);
    stage.treatment = 1;
  }
  return subj;
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() /
           ("dtr_test_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string& name) const {
    return (path / name).string();
  }
};

void write(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
}

}  // namespace

TEST_CASE("stage_of maps times to stage start intervals") {
  const dtr::Dataset data = five_stage_shell();
  CHECK(data.stage_of(0.0) == 1);
  CHECK(data.stage_of(0.49) == 1);
  CHECK(data.stage_of(0.5) == 2);
  CHECK(data.stage_of(1.4) == 3);
  CHECK(data.stage_of(1.99) == 4);
  CHECK(data.stage_of(2.0) == 5);
  CHECK(data.stage_of(2.1) == 5);
  CHECK(data.stage_of(50.0) == 5);
}

TEST_CASE("validate accepts a well-formed dataset") {
  dtr::Dataset data = five_stage_shell();
  data.subjects.push_back(make_subject(data, "a", 0.3, 1));
  data.subjects.push_back(make_subject(data, "b", 1.7, 0));
  CHECK_NOTHROW(data.validate());
}

TEST_CASE("validate rejects structural violations") {
  dtr::Dataset base = five_stage_shell();
  base.subjects.push_back(make_subject(base, "a", 0.8, 1));

  SUBCASE("wrong stage count") {
    dtr::Dataset data = base;
    data.subjects[0].stages.pop_back();
    CHECK_THROWS_WITH_AS(data.validate(),
                         doctest::Contains("expected 2 stage records"),
                         std::runtime_error);
  }
  SUBCASE("duplicate ids") {
    dtr::Dataset data = base;
    data.subjects.push_back(make_subject(data, "a", 0.3, 0));
    CHECK_THROWS_AS(data.validate(), std::runtime_error);
  }
  SUBCASE("treatment out of range") {
    dtr::Dataset data = base;
    data.subjects[0].stages[0].treatment = 4;
    CHECK_THROWS_AS(data.validate(), std::runtime_error);
  }
  SUBCASE("treatment zero") {
    dtr::Dataset data = base;
    data.subjects[0].stages[1].treatment = 0;
    CHECK_THROWS_AS(data.validate(), std::runtime_error);
  }
  SUBCASE("covariate length") {
    dtr::Dataset data = base;
    data.subjects[0].stages[0].x.push_back(1.0);
    CHECK_THROWS_AS(data.validate(), std::runtime_error);
  }
  SUBCASE("event flag") {
    dtr::Dataset data = base;
    data.subjects[0].event = 2;
    CHECK_THROWS_AS(data.validate(), std::runtime_error);
  }
  SUBCASE("boundaries must start at zero") {
    dtr::Dataset data = base;
    data.stage_boundaries[0] = 0.1;
    CHECK_THROWS_AS(data.validate(), std::runtime_error);
  }
  SUBCASE("boundaries must increase") {
    dtr::Dataset data = base;
    data.stage_boundaries[2] = 0.5;
    CHECK_THROWS_AS(data.validate(), std::runtime_error);
  }
}

TEST_CASE("time grid holds distinct failures below t_g plus t_g") {
  dtr::Dataset data;
  data.p = 1;
  data.k = 2;
  data.stage_boundaries = {0.0, 0.5};
  auto add = [&](const std::string& id, double t, int e) {
    data.subjects.push_back(make_subject(data, id, t, e));
  };
  add("a", 0.3, 1);
  add("b", 0.3, 1);  // tie collapses to one grid point
  add("c", 0.7, 1);
  add("d", 0.9, 0);  // censored times never enter
  add("e", 0.75, 0);

  const dtr::TimeGrid grid = dtr::build_time_grid(data, 0.8);
  REQUIRE(grid.g() == 3);
  CHECK(grid.points[0] == 0.3);
  CHECK(grid.points[1] == 0.7);
  CHECK(grid.points[2] == 0.8);
  CHECK(grid.stage[0] == 1);
  CHECK(grid.stage[1] == 2);
  CHECK(grid.stage[2] == 2);
  CHECK(grid.weight_stage(1) == 1);  // t_0 = 0 sits in stage 1
  CHECK(grid.weight_stage(2) == 1);  // m(0.3)
  CHECK(grid.weight_stage(3) == 2);  // m(0.7)

  SUBCASE("failure exactly at t_g is not duplicated") {
    const dtr::TimeGrid g2 = dtr::build_time_grid(data, 0.7);
    REQUIRE(g2.g() == 2);
    CHECK(g2.points[0] == 0.3);
    CHECK(g2.points[1] == 0.7);
  }
  SUBCASE("horizon must be positive and within reach") {
    CHECK_THROWS_AS(dtr::build_time_grid(data, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(dtr::build_time_grid(data, -1.0), std::invalid_argument);
    CHECK_NOTHROW(dtr::build_time_grid(data, 1.0));
    CHECK_THROWS_AS(dtr::build_time_grid(data, 1.01), std::invalid_argument);
  }
}

TEST_CASE("history vector stacks covariate blocks then past treatments") {
  dtr::Dataset data;
  data.p = 2;
  data.k = 3;
  data.stage_boundaries = {0.0, 0.5, 1.0};
  dtr::Trajectory subj = make_subject(data, "a", 1.2, 1);
  subj.stages[0].x = {1.0, 2.0};
  subj.stages[1].x = {3.0, 4.0};
  subj.stages[2].x = {5.0, 6.0};
  subj.stages[0].treatment = 2;
  subj.stages[1].treatment = 3;

  CHECK(dtr::history_dim(1, 2) == 2);
  CHECK(dtr::history_dim(3, 2) == 8);
  CHECK(dtr::history_vector(subj, 1, 2) == std::vector<double>{1.0, 2.0});
  CHECK(dtr::history_vector(subj, 2, 2) ==
        std::vector<double>{1.0, 2.0, 3.0, 4.0, 2.0});
  CHECK(dtr::history_vector(subj, 3, 2) ==
        std::vector<double>{1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 2.0, 3.0});
  CHECK_THROWS_AS(dtr::history_vector(subj, 4, 2), std::invalid_argument);
}

TEST_CASE("subset keeps the requested subjects in order") {
  dtr::Rng rng(5);
  const dtr::Dataset data = oracle::random_censored_dataset(
      rng, 20, 2, 3, {0.0, 0.5, 1.0}, 1.5);
  const dtr::Dataset sub = dtr::subset(data, {7, 2, 11});
  REQUIRE(sub.n() == 3);
  CHECK(sub.p == data.p);
  CHECK(sub.k == data.k);
  CHECK(sub.stage_boundaries == data.stage_boundaries);
  CHECK(sub.subjects[0].id == data.subjects[7].id);
  CHECK(sub.subjects[1].id == data.subjects[2].id);
  CHECK(sub.subjects[2].time == data.subjects[11].time);
}

TEST_CASE("long CSV round trip is exact") {
  dtr::Rng rng(17);
  const dtr::Dataset data = oracle::random_censored_dataset(
      rng, 40, 3, 3, {0.0, 0.5, 1.0, 1.5}, 2.0);
  const TempDir dir("csv");
  dtr::write_long_csv(data, dir.file("subjects.csv"), dir.file("stages.csv"));
  dtr::DatasetSchema schema;
  schema.k = data.k;
  schema.stage_boundaries = data.stage_boundaries;
  const dtr::Dataset back =
      dtr::load_long_csv(dir.file("subjects.csv"), dir.file("stages.csv"), schema);
  REQUIRE(back.n() == data.n());
  for (int i = 0; i < data.n(); ++i) {
    CHECK(back.subjects[i].id == data.subjects[i].id);
    CHECK(back.subjects[i].time == data.subjects[i].time);
    CHECK(back.subjects[i].event == data.subjects[i].event);
    REQUIRE(back.subjects[i].stages.size() == data.subjects[i].stages.size());
    for (std::size_t m = 0; m < data.subjects[i].stages.size(); ++m) {
      CHECK(back.subjects[i].stages[m].treatment ==
            data.subjects[i].stages[m].treatment);
      CHECK(back.subjects[i].stages[m].x == data.subjects[i].stages[m].x);
    }
  }
}

TEST_CASE("long CSV loader rejects malformed input") {
  const TempDir dir("bad");
  dtr::DatasetSchema schema;
  schema.k = 2;
  schema.stage_boundaries = {0.0, 0.5};

  SUBCASE("missing stage record") {
    write(dir.file("s.csv"), "id,time,event\na,0.7,1\n");
    write(dir.file("g.csv"), "id,stage,treatment,x1\na,2,1,0.5\n");
    CHECK_THROWS_WITH_AS(
        dtr::load_long_csv(dir.file("s.csv"), dir.file("g.csv"), schema),
        doctest::Contains("missing stage"), std::runtime_error);
  }
  SUBCASE("stage recorded after exit") {
    write(dir.file("s.csv"), "id,time,event\na,0.3,1\n");
    write(dir.file("g.csv"),
          "id,stage,treatment,x1\na,1,1,0.5\na,2,1,0.5\n");
    CHECK_THROWS_AS(
        dtr::load_long_csv(dir.file("s.csv"), dir.file("g.csv"), schema),
        std::runtime_error);
  }
  SUBCASE("orphan id in the stages file") {
    write(dir.file("s.csv"), "id,time,event\na,0.3,1\n");
    write(dir.file("g.csv"), "id,stage,treatment,x1\na,1,1,0.5\nzz,1,1,0.5\n");
    CHECK_THROWS_AS(
        dtr::load_long_csv(dir.file("s.csv"), dir.file("g.csv"), schema),
        std::runtime_error);
  }
  SUBCASE("bad header") {
    write(dir.file("s.csv"), "id,time\na,0.3\n");
    write(dir.file("g.csv"), "id,stage,treatment,x1\na,1,1,0.5\n");
    CHECK_THROWS_AS(
        dtr::load_long_csv(dir.file("s.csv"), dir.file("g.csv"), schema),
        std::runtime_error);
  }
  SUBCASE("non-numeric field") {
    write(dir.file("s.csv"), "id,time,event\na,zebra,1\n");
    write(dir.file("g.csv"), "id,stage,treatment,x1\na,1,1,0.5\n");
    CHECK_THROWS_AS(
        dtr::load_long_csv(dir.file("s.csv"), dir.file("g.csv"), schema),
        std::runtime_error);
  }
  SUBCASE("duplicate stage row") {
    write(dir.file("s.csv"), "id,time,event\na,0.3,1\n");
    write(dir.file("g.csv"),
          "id,stage,treatment,x1\na,1,1,0.5\na,1,2,0.5\n");
    CHECK_THROWS_AS(
        dtr::load_long_csv(dir.file("s.csv"), dir.file("g.csv"), schema),
        std::runtime_error);
  }
}
