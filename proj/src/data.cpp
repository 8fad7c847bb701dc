#include "arci/data.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>

namespace arci {

using nlohmann::json;

namespace {

std::vector<int> sorted_unique(std::vector<int> ids) {
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  // splitmix64 finalizer over seed ^ salt
  std::uint64_t z = seed ^ (salt + 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

int Vocabulary::id_of(const std::string& code) const {
  auto it = index.find(code);
  if (it == index.end()) throw std::invalid_argument("unknown code '" + code + "'");
  return it->second;
}

Vocabulary Vocabulary::build(const std::vector<std::string>& all_codes) {
  Vocabulary v;
  std::set<std::string> uniq(all_codes.begin(), all_codes.end());
  v.codes.assign(uniq.begin(), uniq.end());
  for (int i = 0; i < static_cast<int>(v.codes.size()); ++i) v.index[v.codes[i]] = i;
  return v;
}

Dataset load_jsonl(const std::string& path, std::optional<Vocabulary> vocab) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);

  struct RawRecord {
    std::string patient_id;
    std::vector<std::vector<std::string>> visits;
    std::vector<std::string> target;
  };
  std::vector<RawRecord> raw;
  std::set<std::string> seen_ids;
  std::vector<std::string> all_codes;

  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json obj;
    try {
      obj = json::parse(line);
      RawRecord r;
      r.patient_id = obj.at("patient_id").get<std::string>();
      for (const auto& visit : obj.at("visits")) {
        r.visits.push_back(visit.get<std::vector<std::string>>());
      }
      r.target = obj.at("target").get<std::vector<std::string>>();
      raw.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    const auto& r = raw.back();
    if (!seen_ids.insert(r.patient_id).second) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": duplicate patient_id '" +
                               r.patient_id + "'");
    }
    for (const auto& visit : r.visits) all_codes.insert(all_codes.end(), visit.begin(), visit.end());
    all_codes.insert(all_codes.end(), r.target.begin(), r.target.end());
  }

  Dataset ds;
  ds.vocab = vocab ? std::move(*vocab) : Vocabulary::build(all_codes);
  for (const auto& r : raw) {
    PatientRecord rec;
    rec.patient_id = r.patient_id;
    for (const auto& visit : r.visits) {
      std::vector<int> ids;
      for (const auto& code : visit) ids.push_back(ds.vocab.id_of(code));
      rec.visits.push_back(sorted_unique(std::move(ids)));
    }
    std::vector<int> tids;
    for (const auto& code : r.target) tids.push_back(ds.vocab.id_of(code));
    rec.target = sorted_unique(std::move(tids));
    ds.records.push_back(std::move(rec));
  }
  return ds;
}

void emit_jsonl(const std::string& path, const std::vector<PatientRecord>& records,
                const Vocabulary& vocab) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (const auto& rec : records) {
    json obj;
    obj["patient_id"] = rec.patient_id;
    json visits = json::array();
    for (const auto& visit : rec.visits) {
      json codes = json::array();
      for (int id : visit) codes.push_back(vocab.codes.at(id));
      visits.push_back(std::move(codes));
    }
    obj["visits"] = std::move(visits);
    json target = json::array();
    for (int id : rec.target) target.push_back(vocab.codes.at(id));
    obj["target"] = std::move(target);
    out << obj.dump() << "\n";
  }
}

PreprocessResult preprocess(std::vector<PatientRecord> records, FilterMode mode, int t_max) {
  if (t_max < 1) throw std::invalid_argument("t_max must be >= 1");
  PreprocessResult result;
  for (auto& rec : records) {
    // empty visits carry no information
    std::erase_if(rec.visits, [](const std::vector<int>& v) { return v.empty(); });
    if (rec.visits.size() > static_cast<std::size_t>(t_max)) {
      rec.visits.erase(rec.visits.begin(), rec.visits.end() - t_max);
    }
    if (mode == FilterMode::kNonRepetitive) {
      std::set<int> seen;
      for (const auto& visit : rec.visits) seen.insert(visit.begin(), visit.end());
      std::erase_if(rec.target, [&seen](int id) { return seen.count(id) > 0; });
    }
    if (rec.visits.empty() || rec.target.empty()) {
      ++result.dropped;
      continue;
    }
    result.records.push_back(std::move(rec));
  }
  return result;
}

void SynthConfig::validate() const {
  if (n_patients <= 0 || vocab_size <= 0 || n_intents <= 0) {
    throw std::invalid_argument("synthetic config counts must be positive");
  }
  if (visits_min <= 0 || visits_max < visits_min || codes_min <= 0 || codes_max < codes_min) {
    throw std::invalid_argument("synthetic config ranges are invalid");
  }
  if (noise_rate < 0.0 || noise_rate > 1.0) {
    throw std::invalid_argument("noise_rate must lie in [0, 1]");
  }
  if (vocab_size / n_intents < 4) {
    throw std::invalid_argument("vocabulary too small: each intent needs at least 4 codes");
  }
}

SynthConfig SynthConfig::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  json obj = json::parse(in);
  SynthConfig cfg;
  const std::set<std::string> known = {"n_patients", "vocab_size", "n_intents", "visits_min",
                                       "visits_max", "codes_min",  "codes_max", "sharpness",
                                       "noise_rate", "seed"};
  for (const auto& [key, _] : obj.items()) {
    if (!known.count(key)) throw std::invalid_argument("unknown synthetic config key '" + key + "'");
  }
  cfg.n_patients = obj.at("n_patients").get<int>();
  cfg.vocab_size = obj.at("vocab_size").get<int>();
  cfg.n_intents = obj.at("n_intents").get<int>();
  cfg.visits_min = obj.at("visits_min").get<int>();
  cfg.visits_max = obj.at("visits_max").get<int>();
  cfg.codes_min = obj.at("codes_min").get<int>();
  cfg.codes_max = obj.at("codes_max").get<int>();
  if (obj.contains("sharpness")) cfg.sharpness = obj.at("sharpness").get<double>();
  if (obj.contains("noise_rate")) cfg.noise_rate = obj.at("noise_rate").get<double>();
  if (obj.contains("seed")) cfg.seed = obj.at("seed").get<std::uint64_t>();
  cfg.validate();
  return cfg;
}

namespace {

// Cyclic chain over one intent's code block: mass `sharpness` on the next
// code in the block, the rest spread uniformly.
struct IntentChain {
  int block_start = 0;
  int block_size = 0;
  int state = 0;  // offset within the block

  int draw(double sharpness, Rng& rng) {
    int next;
    if (rng.uniform() < sharpness) {
      next = (state + 1) % block_size;
    } else {
      next = rng.index(block_size);
    }
    state = next;
    return block_start + next;
  }

  // next-step distribution from the current state, restricted to `allowed`
  std::optional<int> draw_restricted(double sharpness, Rng& rng, const std::set<int>& used) const {
    std::vector<int> candidates;
    std::vector<double> weights;
    for (int off = 0; off < block_size; ++off) {
      const int code = block_start + off;
      if (used.count(code)) continue;
      double w = (1.0 - sharpness) / block_size;
      if (off == (state + 1) % block_size) w += sharpness;
      candidates.push_back(code);
      weights.push_back(w);
    }
    if (candidates.empty()) return std::nullopt;
    double total = 0;
    for (double w : weights) total += w;
    double u = rng.uniform() * total;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      u -= weights[i];
      if (u <= 0) return candidates[i];
    }
    return candidates.back();
  }
};

}  // namespace

Dataset generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  Dataset ds;
  int width = 1;
  for (int v = cfg.vocab_size - 1; v >= 10; v /= 10) ++width;
  for (int i = 0; i < cfg.vocab_size; ++i) {
    std::string num = std::to_string(i);
    ds.vocab.codes.push_back("C" + std::string(width - num.size(), '0') + num);
    ds.vocab.index[ds.vocab.codes.back()] = i;
  }

  Rng rng(cfg.seed);
  const int block = cfg.vocab_size / cfg.n_intents;
  int id_width = 1;
  for (int v = cfg.n_patients - 1; v >= 10; v /= 10) ++id_width;

  for (int p = 0; p < cfg.n_patients; ++p) {
    // activate a random nonempty subset of intents
    const int n_active = 1 + rng.index(cfg.n_intents);
    std::vector<int> intent_ids(cfg.n_intents);
    for (int i = 0; i < cfg.n_intents; ++i) intent_ids[i] = i;
    rng.shuffle(intent_ids);
    intent_ids.resize(n_active);
    std::sort(intent_ids.begin(), intent_ids.end());

    std::vector<IntentChain> chains;
    for (int i : intent_ids) {
      chains.push_back({i * block, block, rng.index(block)});
    }

    PatientRecord rec;
    std::string num = std::to_string(p);
    rec.patient_id = "p" + std::string(id_width - num.size(), '0') + num;

    const int n_visits = cfg.visits_min + rng.index(cfg.visits_max - cfg.visits_min + 1);
    std::set<int> used;
    for (int t = 0; t < n_visits; ++t) {
      const int want = cfg.codes_min + rng.index(cfg.codes_max - cfg.codes_min + 1);
      std::set<int> visit;
      for (auto& chain : chains) visit.insert(chain.draw(cfg.sharpness, rng));
      int attempts = 0;
      while (static_cast<int>(visit.size()) < want && attempts < 10 * want) {
        ++attempts;
        if (rng.uniform() < cfg.noise_rate) {
          visit.insert(rng.index(cfg.vocab_size));
        } else {
          visit.insert(chains[static_cast<std::size_t>(rng.index(n_active))].draw(cfg.sharpness, rng));
        }
      }
      rec.visits.emplace_back(visit.begin(), visit.end());
      used.insert(visit.begin(), visit.end());
    }

    // next-step draws avoiding already prescribed codes, one per intent
    std::set<int> target;
    for (const auto& chain : chains) {
      if (auto code = chain.draw_restricted(cfg.sharpness, rng, used)) target.insert(*code);
    }
    if (target.empty()) {
      for (int c = 0; c < cfg.vocab_size && target.empty(); ++c) {
        if (!used.count(c)) target.insert(c);
      }
    }
    if (target.empty()) continue;  // patient consumed the whole vocabulary
    rec.target.assign(target.begin(), target.end());
    ds.records.push_back(std::move(rec));
  }
  return ds;
}

std::vector<Batch> make_batches(const std::vector<PatientRecord>& records, int batch_size,
                                int vocab_size, std::uint64_t shuffle_seed) {
  if (records.empty()) throw std::invalid_argument("make_batches needs at least one record");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");

  std::vector<int> order(records.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  Rng rng(shuffle_seed);
  rng.shuffle(order);

  std::vector<Batch> batches;
  for (std::size_t begin = 0; begin < order.size(); begin += batch_size) {
    const std::size_t end = std::min(order.size(), begin + batch_size);
    const int b = static_cast<int>(end - begin);
    int t_b = 1, l_b = 1;
    for (std::size_t i = begin; i < end; ++i) {
      const auto& rec = records[static_cast<std::size_t>(order[i])];
      t_b = std::max(t_b, static_cast<int>(rec.visits.size()));
      for (const auto& visit : rec.visits) l_b = std::max(l_b, static_cast<int>(visit.size()));
    }

    Batch batch;
    batch.codes.shape = {b, t_b, l_b};
    batch.codes.ids.assign(static_cast<std::size_t>(b) * t_b * l_b, -1);
    std::vector<double> cmask(batch.codes.ids.size(), 0.0);
    std::vector<double> vmask(static_cast<std::size_t>(b) * t_b, 0.0);
    std::vector<double> targets(static_cast<std::size_t>(b) * vocab_size, 0.0);

    for (int row = 0; row < b; ++row) {
      const auto& rec = records[static_cast<std::size_t>(order[begin + row])];
      batch.record_indices.push_back(order[begin + row]);
      if (rec.target.empty()) {
        throw std::invalid_argument("record '" + rec.patient_id + "' has an empty target");
      }
      for (std::size_t t = 0; t < rec.visits.size(); ++t) {
        vmask[static_cast<std::size_t>(row) * t_b + t] = 1.0;
        for (std::size_t l = 0; l < rec.visits[t].size(); ++l) {
          const std::size_t at = (static_cast<std::size_t>(row) * t_b + t) * l_b + l;
          batch.codes.ids[at] = rec.visits[t][l];
          cmask[at] = 1.0;
        }
      }
      for (int id : rec.target) {
        if (id < 0 || id >= vocab_size) {
          throw std::invalid_argument("target id " + std::to_string(id) + " outside vocabulary");
        }
        targets[static_cast<std::size_t>(row) * vocab_size + id] = 1.0;
      }
    }
    batch.code_mask = Tensor::from({b, t_b, l_b}, std::move(cmask));
    batch.visit_mask = Tensor::from({b, t_b}, std::move(vmask));
    batch.targets = Tensor::from({b, vocab_size}, std::move(targets));
    batches.push_back(std::move(batch));
  }
  return batches;
}

std::vector<Fold> split_folds(const std::vector<PatientRecord>& records, double train_frac,
                              int n_repeats, std::uint64_t seed) {
  if (records.size() < 2) throw std::invalid_argument("need at least 2 records to split");
  if (train_frac <= 0.0 || train_frac >= 1.0) throw std::invalid_argument("train_frac must be in (0, 1)");

  std::vector<Fold> folds;
  for (int f = 0; f < n_repeats; ++f) {
    std::vector<int> order(records.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(f)));
    rng.shuffle(order);

    auto n_train = static_cast<std::size_t>(std::llround(train_frac * static_cast<double>(order.size())));
    n_train = std::clamp<std::size_t>(n_train, 1, order.size() - 1);

    Fold fold;
    for (std::size_t i = 0; i < order.size(); ++i) {
      const auto& rec = records[static_cast<std::size_t>(order[i])];
      (i < n_train ? fold.train : fold.test).push_back(rec);
    }
    folds.push_back(std::move(fold));
  }
  return folds;
}

}  // namespace arci
