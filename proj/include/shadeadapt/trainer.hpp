#pragma once

#include "shadeadapt/config.hpp"
#include "shadeadapt/dataset.hpp"
#include "shadeadapt/freeze.hpp"
#include "shadeadapt/losses.hpp"
#include "shadeadapt/model.hpp"

#include <torch/torch.h>

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace shadeadapt {

/// A model built from a config with its freeze policy applied. Weights no
/// file provides are drawn from `base_seed`, so rebuilding from the same
/// config gives the same frozen weights.
struct Pipeline {
  RunConfig cfg;
  ShadowModel model{nullptr};
  FreezePolicy policy;
};

Pipeline build_pipeline(const RunConfig& cfg);

struct StepRecord {
  int64_t step = 0;
  double coarse_loss = 0.0;
  double final_loss = 0.0;
  double lr = 0.0;
  int64_t epoch = 0;
};

struct EpochRecord {
  int64_t epoch = 0;
  double train_ber = 0.0;
  std::optional<double> eval_ber;
};

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr int64_t kCheckpointVersion = 1;

/// Writes the trainable groups' parameters and buffers, the config text,
/// epoch and history.
void save_checkpoint(const std::filesystem::path& path, const Pipeline& pipeline, int64_t epoch,
                     const std::vector<EpochRecord>& history);

struct LoadedCheckpoint {
  Pipeline pipeline;
  int64_t epoch = 0;
  std::vector<EpochRecord> history;
};

/// Rebuilds the pipeline from the stored config and restores the stored
/// tensors. With `expected`, architecture keys that differ raise LoadError
/// naming them.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path,
                                 const RunConfig* expected = nullptr);

// ---------------------------------------------------------------------------
// Training

/// Batch tensors built from prepared samples.
struct Batch {
  torch::Tensor images;  // (B, 3, S, S)
  torch::Tensor masks;   // (B, S, S) float {0, 1}
  std::vector<std::string> ids;
};

Batch make_batch(const std::vector<ModelInput>& inputs);

struct StepResult {
  double coarse_loss = 0.0;
  double final_loss = 0.0;
  torch::Tensor final_probs;  // (B, S, S), detached
};

/// Owns the pipeline and optimizer; one call to step() is one update.
class Trainer {
 public:
  explicit Trainer(const RunConfig& cfg);
  explicit Trainer(Pipeline pipeline);

  StepResult step(const Batch& batch);

  Pipeline& pipeline() { return pipeline_; }
  int64_t steps_taken() const { return steps_; }
  int64_t epoch() const { return epoch_; }
  void set_epoch(int64_t e) { epoch_ = e; }

 private:
  Pipeline pipeline_;
  std::unique_ptr<torch::optim::Adam> optimizer_;
  int64_t steps_ = 0;
  int64_t epoch_ = 0;
};

struct TrainOptions {
  bool write_files = true;
  std::ostream* log = nullptr;
};

struct TrainResult {
  std::filesystem::path run_dir;
  std::filesystem::path last_checkpoint;
  std::filesystem::path best_checkpoint;
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
  Pipeline pipeline;
};

/// Run directory layout: config.txt, metrics.csv, epochs.csv,
/// checkpoints/{last,best}.ckpt, reports/.
TrainResult train(const RunConfig& cfg, const TrainOptions& opts = {});

// ---------------------------------------------------------------------------
// Inference and evaluation

struct InferenceResult {
  torch::Tensor mask;    // (H, W) uint8 {0, 1} at the input's resolution
  torch::Tensor probs;   // (H, W) float
  torch::Tensor coarse;  // (m, m) float; undefined without prompts
  PromptSet prompts;
};

/// image: (3, H, W) float in [0, 1].
InferenceResult infer(Pipeline& pipeline, const torch::Tensor& image);

struct EvalRow {
  std::string id;
  BerReport report;
};

struct EvalResult {
  std::vector<EvalRow> rows;
  BerReport summary;
  int64_t degenerate_images = 0;
};

/// BER against each ground truth at its original resolution.
EvalResult evaluate(Pipeline& pipeline, const Dataset& data);

/// The eval split of the config's profile, or nullopt when the config says
/// none or the split's directories do not exist.
std::optional<Dataset> load_eval_split(const RunConfig& cfg);

}  // namespace shadeadapt
