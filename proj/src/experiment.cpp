#include "ddtr/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <limits>
#include <mutex>
#include <thread>

#include <json.hpp>

#include "ddtr/dataset_io.hpp"
#include "ddtr/ops.hpp"
#include "ddtr/random.hpp"

namespace ddtr {

namespace {

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;
constexpr std::uint64_t kBatchStream = 0x7472616e;
constexpr std::uint64_t kSearchStream = 0x73656172;

struct AdamState {
  std::vector<double> m, v;
};

std::size_t count_tokens(const ModelConfig& m, std::size_t height, std::size_t width) {
  std::size_t h = static_cast<std::size_t>(std::lround(static_cast<double>(height) * m.resolution_scale));
  std::size_t w = static_cast<std::size_t>(std::lround(static_cast<double>(width) * m.resolution_scale));
  std::size_t t = 0;
  for (int level : m.feature_levels) {
    const std::size_t s = kLevelStride[static_cast<std::size_t>(level) - 1];
    t += ((h + s - 1) / s) * ((w + s - 1) / s);
  }
  return t;
}

std::string format_scale(double s) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", s);
  return buf;
}

}  // namespace

DataSplits load_splits(const ExperimentConfig& cfg) {
  DataSplits splits;
  if (cfg.dataset_path) {
    const std::filesystem::path root(*cfg.dataset_path);
    splits.train = read_dataset(root / "train");
    splits.eval = read_dataset(root / "eval");
    return splits;
  }
  splits.train = generate(cfg.dataset, cfg.train_images);
  DatasetSpec held_out = cfg.dataset;
  held_out.seed = cfg.dataset.seed + 1;
  splits.eval = generate(held_out, cfg.eval_images);
  return splits;
}

Tensor prepare_image(const AnnotatedImage& image, double resolution_scale) {
  const RowMatrix scaled = resize_pixels(image.pixels, resolution_scale);
  Tensor x({1, static_cast<std::size_t>(scaled.rows()), static_cast<std::size_t>(scaled.cols())});
  std::copy(scaled.data(), scaled.data() + scaled.size(), x.data().begin());
  return x;
}

BatchLoss batch_loss(const DeformableDetr& model, std::span<const Tensor> images,
                     std::span<const std::vector<GroundTruth>> targets) {
  if (images.size() != targets.size() || images.empty()) {
    throw std::invalid_argument("batch_loss: need one target list per image");
  }
  std::size_t objects = 0;
  for (const auto& t : targets) objects += t.size();
  const double norm = 1.0 / static_cast<double>(std::max<std::size_t>(1, objects));
  const LossWeights& w = model.config().loss;

  BatchLoss out;
  std::vector<Tensor> parts;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Predictions pred = model.forward_scaled(images[i]);
    SetLoss l = set_loss(pred.layers, targets[i], w);
    parts.push_back(l.total);
    out.classification += l.classification;
    out.localization += l.localization;
    if (pred.proposals) {
      SetLoss p = set_loss(std::span<const HeadOutput>(&*pred.proposals, 1), targets[i], w);
      parts.push_back(p.total);
      out.classification += p.classification;
      out.localization += p.localization;
    }
  }
  Tensor total = parts.front();
  for (std::size_t i = 1; i < parts.size(); ++i) total = add(total, parts[i]);
  out.total = scale(total, norm);
  out.classification *= norm;
  out.localization *= norm;
  return out;
}

TrainResult train(const ExperimentConfig& cfg, std::uint64_t seed, const std::vector<AnnotatedImage>& data) {
  cfg.validate();
  if (data.empty()) throw std::invalid_argument("train: no training images");
  const TrainingConfig& t = cfg.training;
  TrainResult result;
  result.model = std::make_unique<DeformableDetr>(cfg.model, seed);
  result.drop_step = t.drop_step();
  auto& params = result.model->parameters().items();

  std::vector<AdamState> state(params.size());
  for (std::size_t p = 0; p < params.size(); ++p) {
    state[p].m.assign(params[p].tensor.size(), 0.0);
    state[p].v.assign(params[p].tensor.size(), 0.0);
  }
  Rng rng(mix_seed(seed, kBatchStream));
  std::vector<Tensor> images(t.batch_size);
  std::vector<std::vector<GroundTruth>> targets(t.batch_size);

  for (std::size_t step = 0; step < t.steps; ++step) {
    for (std::size_t b = 0; b < t.batch_size; ++b) {
      const AnnotatedImage& img = data[rng.index(data.size())];
      images[b] = prepare_image(img, cfg.model.resolution_scale);
      targets[b] = img.objects;
    }
    Tape tape;
    BatchLoss loss;
    {
      Tape::Scope scope(tape);
      loss = batch_loss(*result.model, images, targets);
    }
    const double total = loss.total.item();
    if (!std::isfinite(total)) throw DivergenceError(step, "loss is " + std::to_string(total));
    tape.backward(loss.total);

    double sq = 0.0;
    for (const auto& p : params) {
      if (!p.tensor.has_grad()) continue;
      for (double g : p.tensor.grad()) sq += g * g;
    }
    if (!std::isfinite(sq)) throw DivergenceError(step, "non-finite gradient");
    const double norm = std::sqrt(sq);
    const double clip = t.grad_clip > 0.0 && norm > t.grad_clip ? t.grad_clip / norm : 1.0;

    const double lr = t.learning_rate * (step >= result.drop_step ? t.lr_drop_factor : 1.0);
    const double k = static_cast<double>(step + 1);
    const double bc1 = 1.0 - std::pow(kAdamBeta1, k);
    const double bc2 = 1.0 - std::pow(kAdamBeta2, k);
    for (std::size_t p = 0; p < params.size(); ++p) {
      const double plr = params[p].backbone ? lr * t.backbone_lr_scale : lr;
      auto data_p = params[p].tensor.data();
      const bool has = params[p].tensor.has_grad();
      const std::span<const double> g = has ? params[p].tensor.grad() : std::span<const double>();
      auto& m = state[p].m;
      auto& v = state[p].v;
      for (std::size_t i = 0; i < data_p.size(); ++i) {
        const double gi = has ? g[i] * clip : 0.0;
        m[i] = kAdamBeta1 * m[i] + (1.0 - kAdamBeta1) * gi;
        v[i] = kAdamBeta2 * v[i] + (1.0 - kAdamBeta2) * gi * gi;
        data_p[i] *= 1.0 - plr * t.weight_decay;
        data_p[i] -= plr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + kAdamEps);
      }
    }
    tape.clear();
    result.trace.push_back(LossRecord{step, lr, total, loss.classification, loss.localization});
  }
  return result;
}

std::vector<ImagePredictions> predict_all(const DeformableDetr& model, const std::vector<AnnotatedImage>& images) {
  std::vector<ImagePredictions> out;
  out.reserve(images.size());
  for (const auto& img : images) {
    const Predictions pred = model.forward_scaled(prepare_image(img, model.config().resolution_scale));
    const HeadOutput& last = pred.final();
    ImagePredictions p;
    p.image = img.name;
    p.scores = last.logits.matrix().unaryExpr([](double z) { return 1.0 / (1.0 + std::exp(-z)); });
    p.boxes = last.boxes.matrix();
    out.push_back(std::move(p));
  }
  return out;
}

EvalSet build_eval_set(const std::vector<AnnotatedImage>& images, const std::vector<ImagePredictions>& predictions) {
  if (images.size() != predictions.size()) throw std::invalid_argument("build_eval_set: image and prediction counts differ");
  EvalSet evals;
  for (std::size_t i = 0; i < images.size(); ++i) {
    ImageEval e;
    for (const auto& o : images[i].objects) {
      if (o.cls == kEvalClass) e.lesions.push_back(o.box);
    }
    const auto& p = predictions[i];
    if (p.scores.cols() < kEvalClass) throw ShapeError("build_eval_set: predictions lack the evaluated class");
    for (Eigen::Index q = 0; q < p.scores.rows(); ++q) {
      e.detections.push_back(Detection{Boxd(p.boxes(q, 0), p.boxes(q, 1), p.boxes(q, 2), p.boxes(q, 3)),
                                       p.scores(q, kEvalClass - 1)});
    }
    evals.push_back(std::move(e));
  }
  return evals;
}

std::string predictions_jsonl(const std::vector<ImagePredictions>& predictions) {
  using nlohmann::json;
  std::string out;
  for (const auto& p : predictions) {
    json dets = json::array();
    for (Eigen::Index q = 0; q < p.scores.rows(); ++q) {
      for (Eigen::Index c = 0; c < p.scores.cols(); ++c) {
        dets.push_back({{"class", c + 1},
                        {"box", {p.boxes(q, 0), p.boxes(q, 1), p.boxes(q, 2), p.boxes(q, 3)}},
                        {"score", p.scores(q, c)}});
      }
    }
    out += json{{"image", p.image}, {"detections", dets}}.dump();
    out += '\n';
  }
  return out;
}

Evaluation evaluate(const DeformableDetr& model, const std::vector<AnnotatedImage>& images) {
  Evaluation e;
  e.predictions = predict_all(model, images);
  e.metrics = evaluate_metrics(build_eval_set(images, e.predictions));
  return e;
}

double measure_step_seconds(const DeformableDetr& model, const std::vector<AnnotatedImage>& images,
                            std::size_t image_count, std::size_t repeats) {
  const std::size_t n = std::min(image_count, images.size());
  if (n == 0 || repeats == 0) throw std::invalid_argument("measure_step_seconds: nothing to time");
  std::vector<Tensor> x;
  std::vector<std::vector<GroundTruth>> gt;
  for (std::size_t i = 0; i < n; ++i) {
    x.push_back(prepare_image(images[i], model.config().resolution_scale));
    gt.push_back(images[i].objects);
  }
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < repeats; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    Tape tape;
    {
      Tape::Scope scope(tape);
      const BatchLoss l = batch_loss(model, x, gt);
      tape.backward(l.total);
    }
    tape.clear();
    const auto t1 = std::chrono::steady_clock::now();
    best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
  }
  return best / static_cast<double>(n);
}

std::string to_string(Axis axis) {
  switch (axis) {
    case Axis::Resolution: return "resolution";
    case Axis::EncoderLayers: return "encoder_layers";
    case Axis::FeatureLevels: return "feature_levels";
    case Axis::NumQueries: return "num_queries";
    case Axis::Decoding: return "decoding";
  }
  return "resolution";
}

Axis parse_axis(const std::string& s) {
  for (Axis a : {Axis::Resolution, Axis::EncoderLayers, Axis::FeatureLevels, Axis::NumQueries, Axis::Decoding}) {
    if (to_string(a) == s) return a;
  }
  throw ConfigError("unknown ablation axis '" + s +
                    "' (expected resolution, encoder_layers, feature_levels, num_queries or decoding)");
}

std::vector<GridCell> ablation_grid(Axis axis, const ExperimentConfig& base) {
  std::vector<GridCell> cells;
  auto push = [&](std::string label, double x, auto&& edit) {
    GridCell c{std::move(label), x, base};
    edit(c.config.model);
    cells.push_back(std::move(c));
  };
  switch (axis) {
    case Axis::Resolution:
      for (double s : {0.25, 0.5, 0.75, 1.0}) push(format_scale(s), s, [&](ModelConfig& m) { m.resolution_scale = s; });
      if (!base.dataset_path) {
        const std::size_t lo = std::min(base.dataset.height, base.dataset.width);
        if (std::lround(static_cast<double>(lo) * 0.25) < static_cast<long>(kMinImageExtent)) {
          throw ConfigError("resolution axis needs images of at least " + std::to_string(4 * kMinImageExtent) +
                            " pixels per side; dataset is " + std::to_string(base.dataset.height) + "×" +
                            std::to_string(base.dataset.width));
        }
      }
      break;
    case Axis::EncoderLayers:
      for (std::size_t l : {0, 1, 3, 6}) {
        push(std::to_string(l), static_cast<double>(l), [&](ModelConfig& m) { m.encoder_layers = l; });
      }
      break;
    case Axis::FeatureLevels: {
      const std::vector<std::pair<std::string, std::vector<int>>> sets{
          {"all", {1, 2, 3, 4}}, {"1", {1}}, {"2", {2}}, {"3", {3}}};
      for (std::size_t i = 0; i < sets.size(); ++i) {
        push(sets[i].first, static_cast<double>(i), [&](ModelConfig& m) { m.feature_levels = sets[i].second; });
      }
      break;
    }
    case Axis::NumQueries:
      for (std::size_t n : {5, 10, 25, 50, 100, 200, 400, 800}) {
        push(std::to_string(n), static_cast<double>(n), [&](ModelConfig& m) { m.num_queries = n; });
      }
      break;
    case Axis::Decoding: {
      const std::vector<std::pair<QueryInit, bool>> rows{{QueryInit::Static, false},
                                                         {QueryInit::Pure, false},
                                                         {QueryInit::Mixed, false},
                                                         {QueryInit::Static, true},
                                                         {QueryInit::Pure, true}};
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const std::string label = to_string(rows[i].first) + (rows[i].second ? "+ibbr" : "");
        push(label, static_cast<double>(i), [&](ModelConfig& m) {
          m.query_init = rows[i].first;
          m.ibbr = rows[i].second;
        });
      }
      if (!base.dataset_path) {
        const std::size_t t = count_tokens(base.model, base.dataset.height, base.dataset.width);
        if (base.model.num_queries > t) {
          throw ConfigError("decoding axis: pure/mixed rows select " + std::to_string(base.model.num_queries) +
                            " queries from only " + std::to_string(t) + " encoder tokens");
        }
      }
      break;
    }
  }
  for (auto& c : cells) c.config.validate();
  return cells;
}

std::size_t job_count() {
  const char* env = std::getenv("DDTR_JOBS");
  if (!env || !*env) return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 1) throw ConfigError(std::string("DDTR_JOBS must be a positive integer, got '") + env + "'");
  return static_cast<std::size_t>(v);
}

void run_parallel(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& task) {
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) task(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::size_t error_index = n;
  std::mutex mu;
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n || failed.load()) return;
      try {
        task(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (i < error_index) {
          error = std::current_exception();
          error_index = i;
        }
        failed.store(true);
      }
    }
  };
  std::vector<std::thread> threads;
  for (std::size_t t = 0; t < std::min(jobs, n); ++t) threads.emplace_back(worker);
  for (auto& th : threads) th.join();
  if (error) std::rethrow_exception(error);
}

ResultRow run_cell(const GridCell& cell, const std::string& axis, const DataSplits& data, std::size_t jobs) {
  if (data.train.empty() || data.eval.empty()) throw std::invalid_argument("run_cell: empty train or eval split");
  ResultRow row;
  row.axis = axis;
  row.label = cell.label;
  row.x = cell.x;
  row.config = cell.config;
  row.digest = config_digest(cell.config);
  const auto& seeds = cell.config.seeds;
  row.per_seed.resize(seeds.size());
  std::unique_ptr<DeformableDetr> first;
  run_parallel(seeds.size(), jobs, [&](std::size_t i) {
    TrainResult r = train(cell.config, seeds[i], data.train);
    row.per_seed[i] = evaluate(*r.model, data.eval).metrics;
    if (i == 0) first = std::move(r.model);
  });
  row.report = aggregate(row.per_seed);
  const auto& px = data.train.front().pixels;
  const ModelCost cost = count_params_and_flops(cell.config.model, static_cast<std::size_t>(px.rows()),
                                                static_cast<std::size_t>(px.cols()));
  row.params = cost.params;
  row.madds = cost.madds;
  row.seconds = measure_step_seconds(*first, data.eval);
  return row;
}

std::vector<ResultRow> ablate(Axis axis, const ExperimentConfig& base, const DataSplits& data, std::size_t jobs) {
  std::vector<ResultRow> rows;
  for (const auto& cell : ablation_grid(axis, base)) rows.push_back(run_cell(cell, to_string(axis), data, jobs));
  return rows;
}

ExperimentConfig sample_hyperparameters(const ExperimentConfig& base, Rng& rng) {
  ExperimentConfig c = base;
  c.training.learning_rate = std::pow(10.0, rng.uniform(-5.5, -3.0));
  c.training.weight_decay = std::pow(10.0, rng.uniform(-6.0, -3.0));
  c.training.backbone_lr_scale = rng.uniform(0.01, 1.0);
  c.model.num_queries = 10 + rng.index(191);
  c.model.loss.focal_alpha = rng.uniform();
  c.model.loss.focal_gamma = rng.uniform(0.0, 3.0);
  c.model.loss.cls = rng.uniform();
  c.model.loss.l1 = rng.uniform();
  c.model.loss.giou = rng.uniform();
  return c;
}

SearchResult hp_search(std::size_t trials, const ExperimentConfig& base, const DataSplits& data, std::uint64_t seed,
                       std::size_t jobs) {
  if (trials == 0) throw ConfigError("search: trials must be at least 1");
  Rng rng(mix_seed(seed, kSearchStream));
  std::vector<SearchTrial> board(trials);
  for (std::size_t i = 0; i < trials; ++i) board[i] = SearchTrial{i, sample_hyperparameters(base, rng), std::nullopt};
  run_parallel(trials, jobs, [&](std::size_t i) {
    TrainResult r = train(board[i].config, board[i].config.seeds.front(), data.train);
    board[i].fauc = evaluate(*r.model, data.eval).metrics.fauc;
  });
  std::stable_sort(board.begin(), board.end(), [](const SearchTrial& a, const SearchTrial& b) {
    const double fa = a.fauc.value_or(-1.0), fb = b.fauc.value_or(-1.0);
    if (fa != fb) return fa > fb;
    return a.index < b.index;
  });
  SearchResult result;
  result.best = board.front().config;
  result.leaderboard = std::move(board);
  return result;
}

}  // namespace ddtr
