#include "arci/model.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>

namespace arci {

using nlohmann::json;

std::string to_string(AblationMode mode) {
  switch (mode) {
    case AblationMode::kFull: return "full";
    case AblationMode::kNoIntent: return "no_intent";
    case AblationMode::kIntentNoCl: return "intent_no_cl";
  }
  throw std::logic_error("bad ablation mode");
}

AblationMode ablation_mode_from_string(const std::string& name) {
  if (name == "full") return AblationMode::kFull;
  if (name == "no_intent") return AblationMode::kNoIntent;
  if (name == "intent_no_cl") return AblationMode::kIntentNoCl;
  throw std::invalid_argument("mode must be full, no_intent, or intent_no_cl; got '" + name + "'");
}

void ModelConfig::validate() const {
  if (d <= 0 || heads <= 0 || d % heads != 0) {
    throw std::invalid_argument("d must be positive and divisible by heads");
  }
  if (tau <= 0.0) throw std::invalid_argument("tau must be positive");
  if (gamma < 0.0 || lambda < 0.0) throw std::invalid_argument("loss weights must be >= 0");
  if (batch_size < 1 || t_max < 1 || epochs < 0 || n_folds < 1) {
    throw std::invalid_argument("batch_size, t_max, n_folds must be >= 1 and epochs >= 0");
  }
  if (learning_rate <= 0.0) throw std::invalid_argument("learning_rate must be positive");
  if (train_frac <= 0.0 || train_frac >= 1.0) throw std::invalid_argument("train_frac must be in (0, 1)");
}

namespace {

json config_to_json(const ModelConfig& c) {
  json obj;
  obj["d"] = c.d;
  obj["heads"] = c.heads;
  obj["tau"] = c.tau;
  obj["gamma"] = c.gamma;
  obj["lambda"] = c.lambda;
  obj["batch_size"] = c.batch_size;
  obj["t_max"] = c.t_max;
  obj["epochs"] = c.epochs;
  obj["learning_rate"] = c.learning_rate;
  obj["seed"] = c.seed;
  obj["mode"] = to_string(c.mode);
  obj["repetitive"] = c.repetitive;
  obj["linear_bias"] = c.linear_bias;
  obj["n_folds"] = c.n_folds;
  obj["train_frac"] = c.train_frac;
  obj["train_data"] = c.train_data;
  obj["ddi_graph"] = c.ddi_graph;
  obj["vocab"] = c.vocab_path;
  obj["report_out"] = c.report_out;
  obj["params_out"] = c.params_out;
  return obj;
}

ModelConfig config_from_json(const json& obj) {
  static const std::set<std::string> known = {
      "d",          "heads",      "tau",        "gamma",      "lambda",
      "batch_size", "t_max",      "epochs",     "learning_rate", "seed",
      "mode",       "repetitive", "linear_bias", "n_folds",   "train_frac",
      "train_data", "ddi_graph",  "vocab",      "report_out", "params_out"};
  for (const auto& [key, _] : obj.items()) {
    if (!known.count(key)) throw std::invalid_argument("unknown config key '" + key + "'");
  }
  ModelConfig c;
  if (obj.contains("d")) c.d = obj.at("d").get<int>();
  if (obj.contains("heads")) c.heads = obj.at("heads").get<int>();
  if (obj.contains("tau")) c.tau = obj.at("tau").get<double>();
  if (obj.contains("gamma")) c.gamma = obj.at("gamma").get<double>();
  if (obj.contains("lambda")) c.lambda = obj.at("lambda").get<double>();
  if (obj.contains("batch_size")) c.batch_size = obj.at("batch_size").get<int>();
  if (obj.contains("t_max")) c.t_max = obj.at("t_max").get<int>();
  if (obj.contains("epochs")) c.epochs = obj.at("epochs").get<int>();
  if (obj.contains("learning_rate")) c.learning_rate = obj.at("learning_rate").get<double>();
  if (obj.contains("seed")) c.seed = obj.at("seed").get<std::uint64_t>();
  if (obj.contains("mode")) c.mode = ablation_mode_from_string(obj.at("mode").get<std::string>());
  if (obj.contains("repetitive")) c.repetitive = obj.at("repetitive").get<bool>();
  if (obj.contains("linear_bias")) c.linear_bias = obj.at("linear_bias").get<bool>();
  if (obj.contains("n_folds")) c.n_folds = obj.at("n_folds").get<int>();
  if (obj.contains("train_frac")) c.train_frac = obj.at("train_frac").get<double>();
  if (obj.contains("train_data")) c.train_data = obj.at("train_data").get<std::string>();
  if (obj.contains("ddi_graph")) c.ddi_graph = obj.at("ddi_graph").get<std::string>();
  if (obj.contains("vocab")) c.vocab_path = obj.at("vocab").get<std::string>();
  if (obj.contains("report_out")) c.report_out = obj.at("report_out").get<std::string>();
  if (obj.contains("params_out")) c.params_out = obj.at("params_out").get<std::string>();
  c.validate();
  return c;
}

}  // namespace

std::string ModelConfig::to_json_string(int indent) const {
  return config_to_json(*this).dump(indent);
}

ModelConfig ModelConfig::from_json_string(const std::string& text) {
  return config_from_json(json::parse(text));
}

ModelConfig ModelConfig::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return config_from_json(json::parse(in));
}

namespace {

Tensor uniform_fanin(int rows, int cols, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
  std::vector<double> v(static_cast<std::size_t>(rows) * cols);
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return Tensor::from({rows, cols}, std::move(v)).set_requires_grad();
}

void append_gru(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix,
                const GruParams& gru) {
  out.emplace_back(prefix + ".W_z", gru.w_update);
  out.emplace_back(prefix + ".W_r", gru.w_reset);
  out.emplace_back(prefix + ".W_h", gru.w_cand);
  out.emplace_back(prefix + ".U_z", gru.u_update);
  out.emplace_back(prefix + ".U_r", gru.u_reset);
  out.emplace_back(prefix + ".U_h", gru.u_cand);
  out.emplace_back(prefix + ".b_z", gru.b_update);
  out.emplace_back(prefix + ".b_r", gru.b_reset);
  out.emplace_back(prefix + ".b_h", gru.b_cand);
}

}  // namespace

ModelParams ModelParams::init(const ModelConfig& config, int vocab_size, Rng& rng) {
  config.validate();
  if (vocab_size < 1) throw std::invalid_argument("vocab_size must be >= 1");
  const int d = config.d, dh = config.head_dim();

  ModelParams p;
  {
    std::vector<double> emb(static_cast<std::size_t>(vocab_size + 1) * d);
    for (auto& x : emb) x = rng.normal(0.0, 0.02);
    p.visit.embedding = Tensor::from({vocab_size + 1, d}, std::move(emb)).set_requires_grad();
  }
  p.visit.heads = config.heads;
  p.visit.w_query = uniform_fanin(d, d, rng);
  p.visit.w_key = uniform_fanin(d, d, rng);
  p.visit.w_value = uniform_fanin(d, d, rng);

  p.cross.heads = config.heads;
  p.cross.w_query = uniform_fanin(d, d, rng);
  p.cross.w_key = uniform_fanin(d, d, rng);
  p.cross.w_value = uniform_fanin(d, d, rng);
  p.cross.w_temporal = uniform_fanin(2 * dh, dh, rng);

  p.intent.t_max = config.t_max;
  for (int j = 0; j < config.heads; ++j) p.intent.w_intent.push_back(uniform_fanin(d, dh, rng));
  p.intent.w_contrast = uniform_fanin(config.t_max * dh, dh, rng);

  p.agg.gru_visit = GruParams::init(d, rng);
  p.agg.gru_intent = GruParams::init(d, rng);
  p.agg.w_visit_score = uniform_fanin(d, 1, rng);
  p.agg.w_intent_score = uniform_fanin(d, 1, rng);
  p.agg.w_fuse = uniform_fanin(2 * d, d, rng);
  p.agg.w_output = uniform_fanin(d, vocab_size, rng);
  if (config.linear_bias) {
    p.agg.b_visit_score = Tensor::zeros({1}).set_requires_grad();
    p.agg.b_intent_score = Tensor::zeros({1}).set_requires_grad();
    p.agg.b_fuse = Tensor::zeros({d}).set_requires_grad();
    p.agg.b_output = Tensor::zeros({vocab_size}).set_requires_grad();
  }
  return p;
}

std::vector<std::pair<std::string, Tensor>> ModelParams::named() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("embedding", visit.embedding);
  out.emplace_back("W_q", visit.w_query);
  out.emplace_back("W_k", visit.w_key);
  out.emplace_back("W_v", visit.w_value);
  out.emplace_back("W_q_hat", cross.w_query);
  out.emplace_back("W_k_hat", cross.w_key);
  out.emplace_back("W_v_hat", cross.w_value);
  out.emplace_back("W_T", cross.w_temporal);
  for (std::size_t j = 0; j < intent.w_intent.size(); ++j) {
    out.emplace_back("W_I_" + std::to_string(j + 1), intent.w_intent[j]);
  }
  out.emplace_back("W_CL", intent.w_contrast);
  append_gru(out, "GRU_I", agg.gru_visit);
  append_gru(out, "GRU_I_hat", agg.gru_intent);
  out.emplace_back("W_a", agg.w_visit_score);
  out.emplace_back("W_b", agg.w_intent_score);
  out.emplace_back("W_IP", agg.w_fuse);
  out.emplace_back("W_output", agg.w_output);
  if (agg.b_visit_score.defined()) {
    out.emplace_back("b_a", agg.b_visit_score);
    out.emplace_back("b_b", agg.b_intent_score);
    out.emplace_back("b_IP", agg.b_fuse);
    out.emplace_back("b_output", agg.b_output);
  }
  return out;
}

std::vector<Tensor> ModelParams::all() const {
  std::vector<Tensor> out;
  for (auto& [_, t] : named()) out.push_back(t);
  return out;
}

std::vector<Tensor> ModelParams::intent_branch() const {
  std::vector<Tensor> out(intent.w_intent);
  out.push_back(intent.w_contrast);
  for (auto& t : agg.gru_intent.parameters()) out.push_back(t);
  out.push_back(agg.w_intent_score);
  if (agg.b_intent_score.defined()) out.push_back(agg.b_intent_score);
  return out;
}

void ModelParams::discard_pad_row_grad() {
  auto node = visit.embedding.node();
  if (node->grad.empty()) return;
  const int d = visit.embedding.dim(1);
  const std::size_t pad_offset = static_cast<std::size_t>(visit.embedding.dim(0) - 1) * d;
  for (int j = 0; j < d; ++j) node->grad[pad_offset + j] = 0.0;
}

ModelOutput model_forward(const Batch& batch, const ModelParams& params, const ModelConfig& config,
                          const ForwardOptions& options) {
  const bool with_intents = config.mode != AblationMode::kNoIntent;
  const bool with_contrastive = config.mode == AblationMode::kFull && config.gamma != 0.0;
  const bool build_views = options.want_views || with_contrastive;

  Tensor P = embed(batch.codes, params.visit);
  std::vector<Tensor> visit_heads = encode_visits(P, batch.code_mask, params.visit);
  CrossVisitOutput cross =
      encode_sequence(visit_heads, batch.code_mask, params.cross, options.capture_attention);

  ModelOutput out;
  out.attention = std::move(cross.capture);

  const int b = batch.codes.shape[0];
  Tensor fused_visits = fuse_and_pool(cross.fused, batch.code_mask);  // [B, T, d]
  InstanceAttention visit_att = instance_attention(fused_visits, batch.visit_mask,
                                                   params.agg.gru_visit, params.agg.w_visit_score,
                                                   params.agg.b_visit_score);
  out.alpha = visit_att.weights;

  std::vector<Tensor> intents;
  if (with_intents || build_views) intents = intent_project(P, batch.code_mask, params.intent);

  Tensor y_intent;
  if (with_intents) {
    Tensor intent_seq = concat(intents, -1);  // [B, T, d]
    InstanceAttention intent_att =
        instance_attention(intent_seq, batch.visit_mask, params.agg.gru_intent,
                           params.agg.w_intent_score, params.agg.b_intent_score);
    out.beta = intent_att.weights;
    y_intent = intent_att.pooled;
  } else {
    y_intent = Tensor::zeros({b, config.d});
  }

  if (build_views) {
    for (int j = 0; j < config.heads; ++j) {
      out.views.intent.push_back(flatten_project(intents[static_cast<std::size_t>(j)],
                                                 batch.visit_mask, params.intent.w_contrast,
                                                 config.t_max));
      out.views.visit.push_back(flatten_project(
          pool_heads(visit_heads[static_cast<std::size_t>(j)], batch.code_mask), batch.visit_mask,
          params.intent.w_contrast, config.t_max));
      out.views.cross.push_back(flatten_project(
          pool_heads(cross.temporal[static_cast<std::size_t>(j)], batch.code_mask),
          batch.visit_mask, params.intent.w_contrast, config.t_max));
    }
  }
  if (with_contrastive) out.contrastive = contrastive_loss(out.views, config.tau);

  out.scores = predict(visit_att.pooled, y_intent, params.agg);
  return out;
}

}  // namespace arci
