#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "arci/aggregator.hpp"
#include "arci/cross_visit.hpp"
#include "arci/data.hpp"
#include "arci/intents.hpp"
#include "arci/tensor.hpp"
#include "arci/visit_encoder.hpp"

namespace arci {

enum class AblationMode { kFull, kNoIntent, kIntentNoCl };

std::string to_string(AblationMode mode);
AblationMode ablation_mode_from_string(const std::string& name);

struct ModelConfig {
  int d = 256;
  int heads = 4;  // also the number of intents
  double tau = 0.05;
  double gamma = 0.2;
  double lambda = 0.05;
  int batch_size = 128;
  int t_max = 4;
  int epochs = 100;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  AblationMode mode = AblationMode::kFull;
  bool repetitive = false;
  bool linear_bias = false;
  int n_folds = 7;
  double train_frac = 0.8;
  std::string train_data;
  std::string ddi_graph;
  std::string vocab_path;
  std::string report_out;
  std::string params_out;

  int head_dim() const { return d / heads; }
  void validate() const;
  std::string to_json_string(int indent = -1) const;
  static ModelConfig from_json_string(const std::string& text);  // unknown keys rejected
  static ModelConfig from_json_file(const std::string& path);
};

/// Every learnable array, grouped by module. Checkpoint names follow named().
struct ModelParams {
  VisitEncoderParams visit;
  CrossVisitParams cross;
  IntentParams intent;
  AggregatorParams agg;

  static ModelParams init(const ModelConfig& config, int vocab_size, Rng& rng);

  std::vector<std::pair<std::string, Tensor>> named() const;
  std::vector<Tensor> all() const;
  std::vector<Tensor> intent_branch() const;  // intent projections, W_CL, GRU over intents, W_b
  int vocab_size() const { return visit.embedding.dim(0) - 1; }

  // The reserved pad row is looked up for pad slots but never trained.
  void discard_pad_row_grad();
};

struct ForwardOptions {
  bool capture_attention = false;
  bool want_views = false;
};

struct ModelOutput {
  Tensor scores;       // [B, H] raw
  Tensor contrastive;  // scalar; defined only when the loss is active
  Tensor alpha;        // [B, T] visit-instance weights
  Tensor beta;         // [B, T]; undefined in no-intent mode
  ContrastViews views;          // filled when requested or when contrastive is active
  AttentionCapture attention;   // filled when requested
};

ModelOutput model_forward(const Batch& batch, const ModelParams& params, const ModelConfig& config,
                          const ForwardOptions& options = {});

}  // namespace arci
