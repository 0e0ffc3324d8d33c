#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "laver/config.hpp"
#include "laver/ema.hpp"
#include "laver/geometry.hpp"
#include "laver/masking.hpp"
#include "laver/model.hpp"
#include "laver/objectives.hpp"
#include "laver/rng.hpp"
#include "laver/synth.hpp"

namespace laver {

struct AdamState {
  ModelParams m, v;
  std::int64_t t = 0;
};

AdamState init_adam(const ModelConfig& config);

/// Linear warmup over ceil(warmup_ratio · total) steps, then cosine decay to 0.
/// `step` is 0-based.
double lr_at(const OptimizerConfig& cfg, std::int64_t step, std::int64_t total);

/// One bias-corrected Adam update with decoupled weight decay.
void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state,
               const OptimizerConfig& cfg, double lr);

/// Losses and gradients of one batch. Inactive terms stay exactly zero.
struct BatchLosses {
  double lm = 0.0, mim = 0.0, ga = 0.0, cga = 0.0, total = 0.0;
  double accuracy = 0.0;  // argmax answer accuracy of the LM forward
  std::size_t masked_tokens = 0;
  ModelParams grads;
};

/// Image tokens followed by the embedded prompt, in mixed-layout order.
Tensor sample_tokens(const ModelParams& params, const Sample& s);

/// Sequence layout of one training sample: the image grid followed by the prompt.
std::vector<SegmentSpec> sample_segments(const ModelConfig& config, std::size_t prompt_len);

/// LM forward on the mixed layout for every sample, plus (when any visual
/// term is active) the packed masked student forward against the unmasked
/// teacher forward. MIM is normalized by the masked-token count of the whole
/// batch; GA/CGA are per image and averaged over the batch. Gradients are
/// skipped when `with_grads` is false.
BatchLosses compute_losses(const TrainConfig& config, const ModelParams& student,
                           const ModelParams* teacher, const std::vector<Sample>& batch,
                           const std::vector<MaskPlan>& plans, ActiveTerms terms,
                           const AttentionLayout& mixed, bool with_grads = true);

struct StepRecord {
  std::int64_t step = 0;  // optimizer steps completed
  double lm = 0.0, mim = 0.0, ga = 0.0, cga = 0.0, total = 0.0;
  double accuracy = 0.0;
  double mask_ratio = 0.0;
  std::size_t masked_tokens = 0;
  double ema_decay = 0.0;
  double lr = 0.0;
  bool teacher_updated = false;
};

/// Raised when a step produces a non-finite loss; carries that step's record.
class TrainingAborted : public std::runtime_error {
 public:
  TrainingAborted(const std::string& what, StepRecord record)
      : std::runtime_error(what), record_(record) {}
  const StepRecord& record() const noexcept { return record_; }

 private:
  StepRecord record_;
};

struct TrainState {
  TrainConfig config;
  ModelParams params;
  std::optional<TeacherState> teacher;  // absent in baseline mode
  AdamState adam;
  Rng data_rng;
  Rng mask_rng;
  std::int64_t step = 0;
  AttentionLayout mixed;
};

TrainState init_state(const TrainConfig& config);

/// One optimizer step on `batch`, followed by the teacher's maybe_update.
StepRecord train_step(TrainState& state, const std::vector<Sample>& batch);

struct ProbeReport {
  std::vector<double> cosine;     // L+1 entries, input embedding first
  std::vector<double> attention;  // L entries, answer-predicting query
  double accuracy = 0.0;

  double deep_cosine() const { return cosine.empty() ? 0.0 : cosine.back(); }
  double mean_attention() const;
};

/// Averages the homogenization and attention-allocation profiles and the
/// answer accuracy over a probe set.
ProbeReport evaluate_probe(const ModelParams& params, const std::vector<Sample>& probe,
                           const AttentionLayout& mixed);
/// Answer accuracy only, without capturing traces.
double evaluate_accuracy(const ModelParams& params, const std::vector<Sample>& samples,
                         const AttentionLayout& mixed);

struct TrainSummary {
  std::int64_t steps = 0;
  ProbeReport probe;
  double eval_accuracy = 0.0;
  std::filesystem::path metrics_path;
  std::filesystem::path checkpoint_path;
};

/// Runs `steps` train steps, writing metrics.jsonl, checkpoint.lvck and
/// summary.json into out_dir. `on_log` sees each metric line as it is written.
TrainSummary run_training(const TrainConfig& config, const std::filesystem::path& out_dir,
                          const std::function<void(const std::string&)>& on_log = {});

}  // namespace laver
