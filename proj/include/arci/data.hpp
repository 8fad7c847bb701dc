#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "arci/tensor.hpp"

namespace arci {

/// Bijective code <-> dense id mapping. Ids follow lexicographic code order.
struct Vocabulary {
  std::vector<std::string> codes;   // id -> code
  std::map<std::string, int> index;  // code -> id

  int size() const { return static_cast<int>(codes.size()); }
  int id_of(const std::string& code) const;
  static Vocabulary build(const std::vector<std::string>& all_codes);
};

/// One training example: input visits (oldest to newest) and the label set
/// for the following visit. Code sets are sorted, duplicate-free id lists.
struct PatientRecord {
  std::string patient_id;
  std::vector<std::vector<int>> visits;
  std::vector<int> target;
};

struct Dataset {
  std::vector<PatientRecord> records;
  Vocabulary vocab;
};

// One patient object per line:
//   {"patient_id": str, "visits": [[code, ...], ...], "target": [code, ...]}
// Vocabulary is built over inputs and targets unless one is supplied.
// Malformed lines raise with their line number; duplicate patient ids raise.
Dataset load_jsonl(const std::string& path, std::optional<Vocabulary> vocab = std::nullopt);
void emit_jsonl(const std::string& path, const std::vector<PatientRecord>& records,
                const Vocabulary& vocab);

enum class FilterMode { kNonRepetitive, kRepetitive };

struct PreprocessResult {
  std::vector<PatientRecord> records;
  int dropped = 0;
};

// Keeps the t_max most recent visits; in non-repetitive mode removes target
// codes already present in any retained input visit. Records left with no
// visits or an empty target are dropped and counted, never raised.
PreprocessResult preprocess(std::vector<PatientRecord> records, FilterMode mode, int t_max);

/// Planted multi-intent generator. Each intent owns a disjoint code block
/// with a cyclic Markov chain over it; patients activate a random subset of
/// intents, visits interleave one chain draw per active intent plus uniform
/// noise, and targets are next-step draws restricted to unseen codes.
struct SynthConfig {
  int n_patients = 0;
  int vocab_size = 0;
  int n_intents = 0;
  int visits_min = 0, visits_max = 0;
  int codes_min = 0, codes_max = 0;
  double sharpness = 0.8;   // chain mass on the successor code
  double noise_rate = 0.0;  // chance a filler slot is a uniform code
  std::uint64_t seed = 0;

  void validate() const;
  static SynthConfig from_json_file(const std::string& path);
};

Dataset generate_synthetic(const SynthConfig& cfg);

/// Padded mini-batch. L is the largest visit size within the batch; T the
/// largest visit count. Pad slots hold code id -1 and mask 0.
struct Batch {
  IndexGrid codes;    // [B, T, L]
  Tensor code_mask;   // [B, T, L]
  Tensor visit_mask;  // [B, T]
  Tensor targets;     // [B, H]
  std::vector<int> record_indices;  // rows -> positions in the source list

  int size() const { return codes.shape[0]; }
};

std::vector<Batch> make_batches(const std::vector<PatientRecord>& records, int batch_size,
                                int vocab_size, std::uint64_t shuffle_seed);

struct Fold {
  std::vector<PatientRecord> train;
  std::vector<PatientRecord> test;
};

// n_repeats independent seeded shuffles, each split train_frac/rest.
std::vector<Fold> split_folds(const std::vector<PatientRecord>& records, double train_frac,
                              int n_repeats, std::uint64_t seed);

}  // namespace arci
