#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <set>

#include "arci/data.hpp"

using namespace arci;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name, const std::string& content) : path(name) {
    std::ofstream out(path);
    out << content;
  }
  ~TempFile() { std::remove(path.c_str()); }
};

SynthConfig small_synth(std::uint64_t seed) {
  SynthConfig cfg;
  cfg.n_patients = 30;
  cfg.vocab_size = 32;
  cfg.n_intents = 2;
  cfg.visits_min = 2;
  cfg.visits_max = 4;
  cfg.codes_min = 2;
  cfg.codes_max = 4;
  cfg.sharpness = 0.8;
  cfg.noise_rate = 0.1;
  cfg.seed = seed;
  return cfg;
}

bool same_records(const std::vector<PatientRecord>& a, const std::vector<PatientRecord>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].patient_id != b[i].patient_id || a[i].visits != b[i].visits ||
        a[i].target != b[i].target)
      return false;
  }
  return true;
}

}  // namespace

TEST_CASE("load_jsonl parses records and builds the vocabulary") {
  TempFile f("t_load.jsonl",
             R"({"patient_id":"p1","visits":[["A04A","P01A"],["R05C"]],"target":["R02A"]})"
             "\n"
             R"({"patient_id":"p2","visits":[["A04A"]],"target":["P01A"]})"
             "\n");
  Dataset ds = load_jsonl(f.path);
  REQUIRE(ds.records.size() == 2);
  CHECK(ds.records[0].visits.size() == 2);
  CHECK(ds.records[0].target.size() == 1);
  // lexicographic ids over inputs and targets
  CHECK(ds.vocab.codes == std::vector<std::string>{"A04A", "P01A", "R02A", "R05C"});
  CHECK(ds.records[0].visits[0] == std::vector<int>{0, 1});
  // shared codes share ids deterministically
  Dataset again = load_jsonl(f.path);
  CHECK(same_records(ds.records, again.records));
}

TEST_CASE("load_jsonl edge cases and errors") {
  TempFile empty("t_empty.jsonl", "");
  Dataset ds = load_jsonl(empty.path);
  CHECK(ds.records.empty());
  CHECK(ds.vocab.size() == 0);

  TempFile bad("t_bad.jsonl",
               R"({"patient_id":"p1","visits":[["A"]],"target":["B"]})"
               "\nnot json\n");
  CHECK_THROWS_WITH_AS(load_jsonl(bad.path), doctest::Contains(":2"), std::runtime_error);

  TempFile dup("t_dup.jsonl",
               R"({"patient_id":"p1","visits":[["A"]],"target":["B"]})"
               "\n"
               R"({"patient_id":"p1","visits":[["A"]],"target":["B"]})"
               "\n");
  CHECK_THROWS_WITH_AS(load_jsonl(dup.path), doctest::Contains("duplicate"), std::runtime_error);

  CHECK_THROWS_AS(load_jsonl("t_does_not_exist.jsonl"), std::runtime_error);
}

TEST_CASE("round trip through emit_jsonl") {
  Dataset ds = generate_synthetic(small_synth(3));
  emit_jsonl("t_rt.jsonl", ds.records, ds.vocab);
  Dataset back = load_jsonl("t_rt.jsonl");
  CHECK(same_records(ds.records, back.records));
  std::remove("t_rt.jsonl");
}

TEST_CASE("preprocess filters repeats and truncates windows") {
  PatientRecord rec;
  rec.patient_id = "p1";
  rec.visits = {{0, 1}, {1, 2}};
  rec.target = {0, 2, 3};

  auto non_rep = preprocess({rec}, FilterMode::kNonRepetitive, 4);
  REQUIRE(non_rep.records.size() == 1);
  CHECK(non_rep.records[0].target == std::vector<int>{3});

  auto rep = preprocess({rec}, FilterMode::kRepetitive, 4);
  CHECK(rep.records[0].target == std::vector<int>{0, 2, 3});

  PatientRecord longrec;
  longrec.patient_id = "p2";
  longrec.visits = {{0}, {1}, {2}, {3}, {4}, {5}};
  longrec.target = {6};
  auto truncated = preprocess({longrec}, FilterMode::kNonRepetitive, 4);
  REQUIRE(truncated.records.size() == 1);
  CHECK(truncated.records[0].visits == std::vector<std::vector<int>>{{2}, {3}, {4}, {5}});

  // record whose target empties is dropped and counted
  PatientRecord gone;
  gone.patient_id = "p3";
  gone.visits = {{0, 1}};
  gone.target = {0, 1};
  auto dropped = preprocess({gone}, FilterMode::kNonRepetitive, 4);
  CHECK(dropped.records.empty());
  CHECK(dropped.dropped == 1);
}

TEST_CASE("non-repetitive postcondition holds on random synthetic data") {
  Dataset ds = generate_synthetic(small_synth(11));
  auto out = preprocess(ds.records, FilterMode::kNonRepetitive, 3);
  for (const auto& rec : out.records) {
    std::set<int> seen;
    for (const auto& visit : rec.visits) seen.insert(visit.begin(), visit.end());
    CHECK(!rec.target.empty());
    for (int id : rec.target) CHECK(seen.count(id) == 0);
  }
}

TEST_CASE("synthetic generation is deterministic") {
  Dataset a = generate_synthetic(small_synth(7));
  Dataset b = generate_synthetic(small_synth(7));
  CHECK(same_records(a.records, b.records));
  CHECK(!a.records.empty());
}

TEST_CASE("single noiseless intent stays inside its block") {
  SynthConfig cfg = small_synth(5);
  cfg.n_intents = 1;
  cfg.noise_rate = 0.0;
  Dataset ds = generate_synthetic(cfg);
  for (const auto& rec : ds.records) {
    for (const auto& visit : rec.visits) {
      for (int id : visit) CHECK(id < cfg.vocab_size);  // single block = whole vocab
    }
  }

  // with 2 intents and zero noise, a patient's codes stay in active blocks:
  // at minimum every code lies in some intent block (no stray noise codes)
  cfg = small_synth(6);
  cfg.noise_rate = 0.0;
  cfg.vocab_size = 33;  // one leftover noise-only code
  Dataset ds2 = generate_synthetic(cfg);
  const int block = cfg.vocab_size / cfg.n_intents;
  for (const auto& rec : ds2.records) {
    for (const auto& visit : rec.visits) {
      for (int id : visit) CHECK(id < block * cfg.n_intents);
    }
  }
}

TEST_CASE("synthetic sizes land within the configured ranges") {
  SynthConfig cfg;
  cfg.n_patients = 1000;
  cfg.vocab_size = 64;
  cfg.n_intents = 4;
  cfg.visits_min = 2;
  cfg.visits_max = 5;
  cfg.codes_min = 3;
  cfg.codes_max = 6;
  cfg.noise_rate = 0.15;
  cfg.seed = 99;
  Dataset ds = generate_synthetic(cfg);
  CHECK(ds.records.size() == 1000);
  double codes = 0, visits = 0;
  for (const auto& rec : ds.records) {
    visits += static_cast<double>(rec.visits.size());
    for (const auto& visit : rec.visits) codes += static_cast<double>(visit.size());
  }
  const double avg_codes = codes / visits;
  const double avg_visits = visits / static_cast<double>(ds.records.size());
  CHECK(avg_codes >= cfg.codes_min);
  CHECK(avg_codes <= cfg.codes_max);
  CHECK(avg_visits >= cfg.visits_min);
  CHECK(avg_visits <= cfg.visits_max);
}

TEST_CASE("synthetic config validation") {
  SynthConfig cfg = small_synth(1);
  cfg.vocab_size = 7;  // 7/2 < 4 codes per intent
  CHECK_THROWS_AS(generate_synthetic(cfg), std::invalid_argument);
  cfg = small_synth(1);
  cfg.noise_rate = 1.5;
  CHECK_THROWS_AS(generate_synthetic(cfg), std::invalid_argument);
}

TEST_CASE("make_batches pads and masks") {
  PatientRecord a;
  a.patient_id = "a";
  a.visits = {{0, 1}, {2, 3, 4}};
  a.target = {5};
  PatientRecord b;
  b.patient_id = "b";
  b.visits = {{1}};
  b.target = {0};

  auto batches = make_batches({a, b}, 2, 6, 0);
  REQUIRE(batches.size() == 1);
  const Batch& batch = batches[0];
  CHECK(batch.codes.shape == Shape{2, 2, 3});  // L_B from the 3-code visit

  // locate record a's row (shuffle may reorder)
  int row_a = batch.record_indices[0] == 0 ? 0 : 1;
  int row_b = 1 - row_a;
  // 2-code visit mask row is [1, 1, 0]
  CHECK(batch.code_mask.values()[(row_a * 2 + 0) * 3 + 0] == 1.0);
  CHECK(batch.code_mask.values()[(row_a * 2 + 0) * 3 + 1] == 1.0);
  CHECK(batch.code_mask.values()[(row_a * 2 + 0) * 3 + 2] == 0.0);
  // T=1 patient: visit_mask [1, 0]
  CHECK(batch.visit_mask.values()[row_b * 2 + 0] == 1.0);
  CHECK(batch.visit_mask.values()[row_b * 2 + 1] == 0.0);
  // pad slots hold -1
  CHECK(batch.codes.ids[(row_b * 2 + 1) * 3 + 0] == -1);
  // target rows
  CHECK(batch.targets.values()[row_a * 6 + 5] == 1.0);
  CHECK(batch.targets.values()[row_b * 6 + 0] == 1.0);
}

TEST_CASE("make_batches keeps the short tail batch") {
  Dataset ds = generate_synthetic(small_synth(21));
  std::vector<PatientRecord> ten(ds.records.begin(), ds.records.begin() + 10);
  auto batches = make_batches(ten, 4, 32, 1);
  REQUIRE(batches.size() == 3);
  CHECK(batches[0].size() == 4);
  CHECK(batches[1].size() == 4);
  CHECK(batches[2].size() == 2);
}

TEST_CASE("batches reconstruct the ragged structure exactly") {
  Dataset ds = generate_synthetic(small_synth(31));
  auto batches = make_batches(ds.records, 7, 32, 17);
  int rows = 0;
  for (const auto& batch : batches) {
    const auto& shape = batch.codes.shape;
    for (int r = 0; r < shape[0]; ++r) {
      const auto& rec = ds.records[static_cast<std::size_t>(batch.record_indices[r])];
      ++rows;
      std::vector<std::vector<int>> rebuilt;
      for (int t = 0; t < shape[1]; ++t) {
        if (batch.visit_mask.values()[r * shape[1] + t] == 0.0) continue;
        std::vector<int> visit;
        for (int l = 0; l < shape[2]; ++l) {
          const std::size_t at = (static_cast<std::size_t>(r) * shape[1] + t) * shape[2] + l;
          if (batch.code_mask.values()[at] == 1.0) visit.push_back(batch.codes.ids[at]);
        }
        rebuilt.push_back(std::move(visit));
      }
      CHECK(rebuilt == rec.visits);
    }
  }
  CHECK(rows == static_cast<int>(ds.records.size()));
}

TEST_CASE("split_folds is seeded, disjoint, and exhaustive") {
  Dataset ds = generate_synthetic(small_synth(41));
  std::vector<PatientRecord> ten(ds.records.begin(), ds.records.begin() + 10);
  auto folds = split_folds(ten, 0.8, 7, 4);
  REQUIRE(folds.size() == 7);
  for (const auto& fold : folds) {
    CHECK(fold.train.size() == 8);
    CHECK(fold.test.size() == 2);
    std::set<std::string> ids;
    for (const auto& r : fold.train) ids.insert(r.patient_id);
    for (const auto& r : fold.test) ids.insert(r.patient_id);
    CHECK(ids.size() == 10);  // disjoint and exhaustive
  }
  auto again = split_folds(ten, 0.8, 7, 4);
  for (int f = 0; f < 7; ++f) {
    CHECK(same_records(folds[f].train, again[f].train));
    CHECK(same_records(folds[f].test, again[f].test));
  }
}
