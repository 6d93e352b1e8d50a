#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ddtr/config.hpp"
#include "ddtr/metrics.hpp"
#include "ddtr/model.hpp"
#include "ddtr/synthetic.hpp"

namespace ddtr {

/// Class whose detections are scored by the metric suite.
inline constexpr int kEvalClass = 1;

/// Non-finite training loss.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(std::size_t step, const std::string& what)
      : std::runtime_error("training diverged at step " + std::to_string(step) + ": " + what), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

struct DataSplits {
  std::vector<AnnotatedImage> train;
  std::vector<AnnotatedImage> eval;
};

/// Synthetic splits (eval split drawn with dataset.seed + 1) or the train/ and
/// eval/ subdirectories of cfg.dataset_path.
DataSplits load_splits(const ExperimentConfig& cfg);

struct LossRecord {
  std::size_t step = 0;
  double learning_rate = 0.0;
  double total = 0.0;
  double classification = 0.0;
  double localization = 0.0;
};

struct TrainResult {
  std::unique_ptr<DeformableDetr> model;
  std::vector<LossRecord> trace;
  std::size_t drop_step = 0;
};

/// AdamW over the set loss of every decoder layer (plus the encoder proposals
/// for pure/mixed queries), normalized by the batch's object count.
TrainResult train(const ExperimentConfig& cfg, std::uint64_t seed, const std::vector<AnnotatedImage>& data);

/// Total training loss of one batch, recorded on the active tape.
struct BatchLoss {
  Tensor total;
  double classification = 0.0;
  double localization = 0.0;
};
BatchLoss batch_loss(const DeformableDetr& model, std::span<const Tensor> images,
                     std::span<const std::vector<GroundTruth>> targets);

/// Image tensor at the model's working resolution.
Tensor prepare_image(const AnnotatedImage& image, double resolution_scale);

struct ImagePredictions {
  std::string image;
  /// Final-layer class probabilities [N×C] and boxes [N×4].
  RowMatrix scores;
  RowMatrix boxes;
};

std::vector<ImagePredictions> predict_all(const DeformableDetr& model, const std::vector<AnnotatedImage>& images);

/// Lesions are ground truths of kEvalClass; each query contributes one
/// detection scored by its kEvalClass probability.
EvalSet build_eval_set(const std::vector<AnnotatedImage>& images, const std::vector<ImagePredictions>& predictions);

/// One JSONL line per image; one detection entry per query and class.
std::string predictions_jsonl(const std::vector<ImagePredictions>& predictions);

struct Evaluation {
  MetricValues metrics;
  std::vector<ImagePredictions> predictions;
};
Evaluation evaluate(const DeformableDetr& model, const std::vector<AnnotatedImage>& images);

/// Serial forward+backward seconds per image, minimum over repeats.
double measure_step_seconds(const DeformableDetr& model, const std::vector<AnnotatedImage>& images,
                            std::size_t image_count = 4, std::size_t repeats = 10);

enum class Axis { Resolution, EncoderLayers, FeatureLevels, NumQueries, Decoding };
std::string to_string(Axis axis);
Axis parse_axis(const std::string& s);

struct GridCell {
  std::string label;
  double x = 0.0;
  ExperimentConfig config;
};

/// The configurations of one ablation axis applied to the base config.
std::vector<GridCell> ablation_grid(Axis axis, const ExperimentConfig& base);

struct ResultRow {
  std::string axis;
  std::string label;
  double x = 0.0;
  ExperimentConfig config;
  std::string digest;
  std::vector<MetricValues> per_seed;
  MetricReport report;
  std::size_t params = 0;
  std::size_t madds = 0;
  /// Forward+backward seconds per image (see measure_step_seconds).
  double seconds = 0.0;
};

/// Trains and evaluates every seed of one configuration.
ResultRow run_cell(const GridCell& cell, const std::string& axis, const DataSplits& data, std::size_t jobs);

std::vector<ResultRow> ablate(Axis axis, const ExperimentConfig& base, const DataSplits& data, std::size_t jobs);

/// Parallel job count: DDTR_JOBS when set, otherwise 1.
std::size_t job_count();

/// Runs tasks[0..n) on up to `jobs` threads; rethrows the first failure.
void run_parallel(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& task);

struct SearchTrial {
  std::size_t index = 0;
  ExperimentConfig config;
  MetricValue fauc;
};

struct SearchResult {
  std::vector<SearchTrial> leaderboard;  // descending FAUC, ties by index
  ExperimentConfig best;
};

/// One random draw of the searched hyperparameters applied to base.
ExperimentConfig sample_hyperparameters(const ExperimentConfig& base, Rng& rng);

/// Random search; each trial trains with the first seed of its config.
SearchResult hp_search(std::size_t trials, const ExperimentConfig& base, const DataSplits& data, std::uint64_t seed,
                       std::size_t jobs);

}  // namespace ddtr
