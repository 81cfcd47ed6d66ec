#pragma once

#include <chrono>
#include <filesystem>

#include "dynstg/data.hpp"
#include "dynstg/distill.hpp"
#include "dynstg/grad_check.hpp"
#include "dynstg/metrics.hpp"
#include "dynstg/model.hpp"
#include "dynstg/optim.hpp"

namespace dynstg {

// ---------------------------------------------------------------------------
// Run configuration. Defaults follow the published training protocol:
// Adam, lr 0.001, weight decay 1e-4, batch 32, 200 teacher / 100 student
// epochs, 5 folds. The "ci" profile shrinks the epoch budget for quick runs.

struct OptimizerSettings {
  double learning_rate = 0.001;
  double weight_decay = 1e-4;
  std::size_t batch_size = 32;
};

struct DataSettings {
  std::string path;  // empty -> synthesize
  SynthSpec synth;
  std::size_t target_frames = 0;  // 0 keeps ingested lengths as-is
  bool augment = true;
  double augment_scale = 1.03;

  bool use_synth() const { return path.empty(); }
};

struct ModelSettings {
  std::size_t graph_out = 8;
  std::size_t state_dim = 8;
  std::size_t num_classes = 2;
  std::size_t regions = 4;
};

struct RunConfig {
  DataSettings data;
  std::optional<SkeletonTopology> topology;  // default: chain over the data's joints
  ModelSettings model;
  DistillConfig distill;
  OptimizerSettings optimizer;
  std::size_t epochs_teacher = 200;
  std::size_t epochs_student = 100;
  std::size_t folds = 5;
  std::uint64_t seed = 0;
  std::string out_dir = "out";

  void apply_profile(const std::string& profile) {
    if (profile == "paper") return;  // the documented defaults
    if (profile == "ci") {
      epochs_teacher = 30;
      epochs_student = 15;
      return;
    }
    throw ConfigError("unknown profile '" + profile + "' (expected paper or ci)");
  }

  void validate() const {
    if (optimizer.batch_size == 0) throw ConfigError("run config: batch_size must be >= 1");
    if (folds < 2) throw ConfigError("run config: folds must be >= 2");
    distill.validate();
  }
};

inline nlohmann::json run_config_to_json(const RunConfig& c) {
  nlohmann::json data;
  if (c.data.use_synth()) {
    data["synth"] = {{"classes", c.data.synth.classes},
                     {"per_class", c.data.synth.per_class},
                     {"frames", c.data.synth.frames},
                     {"joints", c.data.synth.joints}};
  } else {
    data["path"] = c.data.path;
    data["target_frames"] = c.data.target_frames;
  }
  data["augment"] = {{"enabled", c.data.augment}, {"scale", c.data.augment_scale}};
  nlohmann::json j{
      {"data", data},
      {"model",
       {{"graph_out", c.model.graph_out},
        {"state_dim", c.model.state_dim},
        {"num_classes", c.model.num_classes},
        {"regions", c.model.regions}}},
      {"distill",
       {{"kd_temperature", c.distill.kd_temperature},
        {"tau", c.distill.tau},
        {"alpha", c.distill.alpha},
        {"beta", c.distill.beta},
        {"gamma", c.distill.gamma},
        {"memory_capacity", c.distill.memory_capacity}}},
      {"optimizer",
       {{"learning_rate", c.optimizer.learning_rate},
        {"weight_decay", c.optimizer.weight_decay},
        {"batch_size", c.optimizer.batch_size}}},
      {"epochs_teacher", c.epochs_teacher},
      {"epochs_student", c.epochs_student},
      {"folds", c.folds},
      {"seed", c.seed},
      {"out_dir", c.out_dir}};
  if (c.topology) j["topology"] = topology_to_json(*c.topology);
  return j;
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  if (j.contains("data")) {
    const auto& d = j.at("data");
    if (d.contains("path")) c.data.path = d.at("path").get<std::string>();
    if (d.contains("target_frames"))
      c.data.target_frames = d.at("target_frames").get<std::size_t>();
    if (d.contains("synth")) {
      const auto& s = d.at("synth");
      c.data.synth.classes = s.value("classes", c.data.synth.classes);
      c.data.synth.per_class = s.value("per_class", c.data.synth.per_class);
      c.data.synth.frames = s.value("frames", c.data.synth.frames);
      c.data.synth.joints = s.value("joints", c.data.synth.joints);
    }
    if (d.contains("augment")) {
      c.data.augment = d.at("augment").value("enabled", c.data.augment);
      c.data.augment_scale = d.at("augment").value("scale", c.data.augment_scale);
    }
  }
  if (j.contains("topology")) c.topology = topology_from_json(j.at("topology"));
  if (j.contains("model")) {
    const auto& m = j.at("model");
    c.model.graph_out = m.value("graph_out", c.model.graph_out);
    c.model.state_dim = m.value("state_dim", c.model.state_dim);
    c.model.num_classes = m.value("num_classes", c.model.num_classes);
    c.model.regions = m.value("regions", c.model.regions);
  }
  if (j.contains("distill")) {
    const auto& d = j.at("distill");
    c.distill.kd_temperature = d.value("kd_temperature", c.distill.kd_temperature);
    c.distill.tau = d.value("tau", c.distill.tau);
    c.distill.alpha = d.value("alpha", c.distill.alpha);
    c.distill.beta = d.value("beta", c.distill.beta);
    c.distill.gamma = d.value("gamma", c.distill.gamma);
    c.distill.memory_capacity = d.value("memory_capacity", c.distill.memory_capacity);
  }
  if (j.contains("optimizer")) {
    const auto& o = j.at("optimizer");
    c.optimizer.learning_rate = o.value("learning_rate", c.optimizer.learning_rate);
    c.optimizer.weight_decay = o.value("weight_decay", c.optimizer.weight_decay);
    c.optimizer.batch_size = o.value("batch_size", c.optimizer.batch_size);
  }
  c.epochs_teacher = j.value("epochs_teacher", c.epochs_teacher);
  c.epochs_student = j.value("epochs_student", c.epochs_student);
  c.folds = j.value("folds", c.folds);
  c.seed = j.value("seed", c.seed);
  c.out_dir = j.value("out_dir", c.out_dir);
  return c;
}

// ---------------------------------------------------------------------------
// Training loops

struct TrainLog {
  std::vector<double> train_loss;     // per epoch
  std::vector<double> eval_accuracy;  // per epoch, when an eval split is given
  bool diverged = false;
  std::size_t diverged_epoch = 0;
  bool memory_warned = false;

  nlohmann::json to_json() const {
    return {{"train_loss", train_loss},
            {"eval_accuracy", eval_accuracy},
            {"diverged", diverged},
            {"diverged_epoch", diverged_epoch}};
  }
};

struct Divergence : std::runtime_error {
  explicit Divergence(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {

inline std::vector<std::vector<double>> snapshot_params(const Model& model) {
  std::vector<std::vector<double>> snap;
  for (const auto& [name, p] : model.named_params()) snap.push_back(p.data());
  return snap;
}

inline void restore_params(Model& model, const std::vector<std::vector<double>>& snap) {
  std::size_t i = 0;
  for (auto&& [name, p] : model.named_params()) p.mutable_data() = snap[i++];
}

inline std::vector<std::size_t> epoch_order(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

}  // namespace detail

inline std::pair<ConfusionCounts, std::vector<int>> evaluate_model(const Model& model,
                                                                   const Dataset& dataset,
                                                                   std::size_t batch_size = 32) {
  NoTape guard;
  std::vector<int> predictions;
  predictions.reserve(dataset.size());
  for (std::size_t start = 0; start < dataset.size(); start += batch_size) {
    Dataset batch(dataset.begin() + start,
                  dataset.begin() + std::min(start + batch_size, dataset.size()));
    const ModelOutput out = model.forward(stack_batch(batch));
    const std::size_t k = model.config().num_classes;
    for (std::size_t b = 0; b < batch.size(); ++b) {
      int best = 0;
      for (std::size_t c = 1; c < k; ++c)
        if (out.seq_logits.at({b, c}) > out.seq_logits.at({b, static_cast<std::size_t>(best)}))
          best = static_cast<int>(c);
      predictions.push_back(best);
    }
  }
  return {confusion(predictions, batch_labels(dataset), model.config().num_classes),
          predictions};
}

inline double accuracy_of(const Model& model, const Dataset& dataset) {
  if (dataset.empty()) return 0.0;
  auto [counts, preds] = evaluate_model(model, dataset);
  const auto labels = batch_labels(dataset);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i)
    if (preds[i] == labels[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

// Supervised training on the task loss alone. Used for the teacher and for
// the no-distillation student ablation. On a non-finite loss the model is
// rolled back to the last end-of-epoch state and the log marks divergence.
inline TrainLog train_supervised(Model& model, const Dataset& train, const Dataset& eval,
                                 const OptimizerSettings& opt, std::size_t epochs,
                                 std::uint64_t stream_seed) {
  TrainLog log;
  if (train.empty()) throw ContractError("train_supervised: empty training split");
  Adam adam(
      [&] {
        std::vector<Tensor> params;
        for (auto&& [name, p] : model.named_params()) params.push_back(p);
        return params;
      }(),
      AdamConfig{opt.learning_rate, 0.9, 0.999, 1e-8, opt.weight_decay});
  auto snapshot = detail::snapshot_params(model);
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    std::mt19937_64 rng(mix_seed(stream_seed, epoch));
    const auto order = detail::epoch_order(train.size(), rng);
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += opt.batch_size) {
      Dataset batch;
      for (std::size_t i = start; i < std::min(start + opt.batch_size, order.size()); ++i)
        batch.push_back(train[order[i]]);
      Tape tape;
      const ModelOutput out = model.forward(stack_batch(batch));
      const Tensor loss = loss_task(out.joint_logits, batch_labels(batch));
      if (!loss.all_finite()) {
        detail::restore_params(model, snapshot);
        log.diverged = true;
        log.diverged_epoch = epoch;
        return log;
      }
      adam.zero_grad();
      tape.backward(loss);
      adam.step();
      epoch_loss += loss.value();
      ++batches;
    }
    log.train_loss.push_back(epoch_loss / static_cast<double>(batches));
    if (!eval.empty()) log.eval_accuracy.push_back(accuracy_of(model, eval));
    snapshot = detail::snapshot_params(model);
  }
  return log;
}

// CGRKD distillation: the teacher runs outside any tape and stays frozen; the
// memory bank is updated only after the batch losses are formed.
inline TrainLog train_distill(Model& student, const Model& teacher, const Dataset& train,
                              const Dataset& eval, const OptimizerSettings& opt,
                              const DistillConfig& distill, std::size_t epochs,
                              std::uint64_t stream_seed, MemoryBank* external_bank = nullptr) {
  TrainLog log;
  if (train.empty()) throw ContractError("train_distill: empty training split");
  distill.validate();
  MemoryBank local_bank(distill.memory_capacity);
  MemoryBank& bank = external_bank ? *external_bank : local_bank;
  Adam adam(
      [&] {
        std::vector<Tensor> params;
        for (auto&& [name, p] : student.named_params()) params.push_back(p);
        return params;
      }(),
      AdamConfig{opt.learning_rate, 0.9, 0.999, 1e-8, opt.weight_decay});
  auto snapshot = detail::snapshot_params(student);
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    std::mt19937_64 rng(mix_seed(stream_seed, epoch));
    const auto order = detail::epoch_order(train.size(), rng);
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += opt.batch_size) {
      Dataset batch;
      for (std::size_t i = start; i < std::min(start + opt.batch_size, order.size()); ++i)
        batch.push_back(train[order[i]]);
      const Tensor x = stack_batch(batch);
      const auto labels = batch_labels(batch);

      ModelOutput teacher_out = [&] {
        NoTape guard;
        return teacher.forward(x);
      }();

      Tape tape;
      const ModelOutput student_out = student.forward(x);
      DistillComponents comps;
      comps.task = loss_task(student_out.joint_logits, labels);
      comps.align =
          loss_align(student_out.joint_logits, teacher_out.joint_logits, distill.kd_temperature);
      comps.intra =
          loss_intra(student_out.joint_embeddings, teacher_out.joint_embeddings, distill.tau);
      bool warned = false;
      comps.memory = loss_memory(student_out.joint_embeddings, bank,
                                 teacher_out.joint_embeddings, distill.tau, &warned);
      if (warned) log.memory_warned = true;
      comps.region = loss_region(student_out.joint_embeddings, teacher_out.region_embeddings,
                                 student_out.region_embeddings, distill.tau);
      const Tensor loss = total_cgrkd(comps, distill);
      if (!loss.all_finite()) {
        detail::restore_params(student, snapshot);
        log.diverged = true;
        log.diverged_epoch = epoch;
        return log;
      }
      adam.zero_grad();
      tape.backward(loss);
      adam.step();
      memory_update(bank, teacher_out.joint_embeddings);
      epoch_loss += loss.value();
      ++batches;
    }
    log.train_loss.push_back(epoch_loss / static_cast<double>(batches));
    if (!eval.empty()) log.eval_accuracy.push_back(accuracy_of(student, eval));
    snapshot = detail::snapshot_params(student);
  }
  return log;
}

// ---------------------------------------------------------------------------
// Harness plumbing: dataset preparation, per-fold orchestration, reporting.

inline Dataset prepare_dataset(const RunConfig& config) {
  Dataset base;
  if (config.data.use_synth()) {
    base = synth_gait(config.data.synth, config.seed);
  } else {
    base = load_sequences(config.data.path);
    if (config.data.target_frames > 0) {
      for (auto& seq : base) seq = fit_length(seq, config.data.target_frames);
    }
  }
  if (base.empty()) throw DataError("prepare_dataset: no sequences available");
  if (config.data.augment) base = augment_dataset(base, config.data.augment_scale);
  return base;
}

inline SkeletonTopology run_topology(const RunConfig& config, const Dataset& dataset) {
  if (config.topology) return *config.topology;
  return SkeletonTopology::chain(dataset.front().joint_count());
}

inline ModelConfig make_model_config(const RunConfig& config, const SkeletonTopology& topo,
                                     ModelVariant variant, std::uint64_t init_seed) {
  ModelConfig mc = variant == ModelVariant::teacher ? ModelConfig::teacher_default(topo)
                                                    : ModelConfig::student_default(topo);
  mc.graph_out = config.model.graph_out;
  mc.ssm_channels = topo.joints * config.model.graph_out;
  mc.state_dim = config.model.state_dim;
  mc.num_classes = config.model.num_classes;
  mc.regions = config.model.regions;
  mc.seed = init_seed;
  return mc;
}

// Stream ids: one lane of derived seeds per fold.
enum class StreamLane : std::uint64_t {
  teacher_init = 0,
  teacher_batches = 1,
  student_init = 2,
  student_batches = 3
};

inline std::uint64_t fold_stream(std::uint64_t seed, std::size_t fold, StreamLane lane) {
  return mix_seed(mix_seed(seed, fold), static_cast<std::uint64_t>(lane));
}

struct FoldArtifacts {
  std::size_t fold = 0;
  NormStats stats;
  Model teacher;
  Model student;
  TrainLog teacher_log;
  TrainLog student_log;
  MetricsReport teacher_metrics;
  MetricsReport student_metrics;
  double teacher_accuracy = 0.0;
  double student_accuracy = 0.0;
};

inline FoldArtifacts run_fold(const RunConfig& config, const Dataset& full,
                              const FoldPlan& plan, std::size_t fold) {
  const Dataset train_raw = fold_split(full, plan, fold, true);
  const Dataset test_raw = fold_split(full, plan, fold, false);
  NormStats stats = fit_stats(train_raw);
  const Dataset train = apply_stats(train_raw, stats);
  const Dataset test = apply_stats(test_raw, stats);
  const SkeletonTopology topo = run_topology(config, full);

  Model teacher(make_model_config(config, topo, ModelVariant::teacher,
                                  fold_stream(config.seed, fold, StreamLane::teacher_init)));
  TrainLog teacher_log =
      train_supervised(teacher, train, test, config.optimizer, config.epochs_teacher,
                       fold_stream(config.seed, fold, StreamLane::teacher_batches));
  if (teacher_log.diverged) throw Divergence("teacher diverged in fold " + std::to_string(fold));

  Model student(make_model_config(config, topo, ModelVariant::student,
                                  fold_stream(config.seed, fold, StreamLane::student_init)));
  TrainLog student_log =
      train_distill(student, teacher, train, test, config.optimizer, config.distill,
                    config.epochs_student,
                    fold_stream(config.seed, fold, StreamLane::student_batches));
  if (student_log.diverged) throw Divergence("student diverged in fold " + std::to_string(fold));

  FoldArtifacts art{fold,
                    std::move(stats),
                    std::move(teacher),
                    std::move(student),
                    std::move(teacher_log),
                    std::move(student_log),
                    {},
                    {},
                    0.0,
                    0.0};
  art.teacher_metrics = metrics(evaluate_model(art.teacher, test).first);
  art.student_metrics = metrics(evaluate_model(art.student, test).first);
  art.teacher_accuracy = accuracy_of(art.teacher, test);
  art.student_accuracy = accuracy_of(art.student, test);
  return art;
}

struct RunReport {
  nlohmann::json config_echo;
  FoldPlan plan;
  std::vector<nlohmann::json> fold_rows;
  nlohmann::json averages;
  std::size_t teacher_param_count = 0;
  std::size_t student_param_count = 0;
  std::vector<double> fold_seconds;
  double total_seconds = 0.0;

  nlohmann::json to_json() const {
    nlohmann::json folds = nlohmann::json::array();
    for (const auto& row : fold_rows) folds.push_back(row);
    return {{"format_version", 1},
            {"config", config_echo},
            {"folds", folds},
            {"average", averages},
            {"param_counts",
             {{"teacher", teacher_param_count}, {"student", student_param_count}}},
            {"timings", {{"per_fold_seconds", fold_seconds}, {"total_seconds", total_seconds}}}};
  }
};

inline RunReport run_cv(const RunConfig& config) {
  config.validate();
  const Dataset full = prepare_dataset(config);
  const FoldPlan plan = make_folds(full, config.folds, config.seed);

  RunReport report;
  report.config_echo = run_config_to_json(config);
  report.plan = plan;
  double teacher_acc_sum = 0.0, student_acc_sum = 0.0;
  double teacher_f1_sum = 0.0, student_f1_sum = 0.0;
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t fold = 0; fold < config.folds; ++fold) {
    const auto f0 = std::chrono::steady_clock::now();
    FoldArtifacts art = run_fold(config, full, plan, fold);
    const auto f1 = std::chrono::steady_clock::now();
    report.fold_seconds.push_back(std::chrono::duration<double>(f1 - f0).count());
    if (fold == 0) {
      report.teacher_param_count = art.teacher.param_count();
      report.student_param_count = art.student.param_count();
    }
    report.fold_rows.push_back(
        {{"fold", fold},
         {"teacher",
          {{"accuracy", art.teacher_accuracy},
           {"metrics", art.teacher_metrics.to_json()},
           {"final_train_loss",
            art.teacher_log.train_loss.empty() ? 0.0 : art.teacher_log.train_loss.back()},
           {"loss_curve", art.teacher_log.train_loss},
           {"eval_curve", art.teacher_log.eval_accuracy}}},
         {"student",
          {{"accuracy", art.student_accuracy},
           {"metrics", art.student_metrics.to_json()},
           {"final_train_loss",
            art.student_log.train_loss.empty() ? 0.0 : art.student_log.train_loss.back()},
           {"loss_curve", art.student_log.train_loss},
           {"eval_curve", art.student_log.eval_accuracy}}}});
    teacher_acc_sum += art.teacher_accuracy;
    student_acc_sum += art.student_accuracy;
    teacher_f1_sum += art.teacher_metrics.macro.f1;
    student_f1_sum += art.student_metrics.macro.f1;
  }
  const auto t1 = std::chrono::steady_clock::now();
  report.total_seconds = std::chrono::duration<double>(t1 - t0).count();
  const double k = static_cast<double>(config.folds);
  report.averages = {{"teacher", {{"accuracy", teacher_acc_sum / k}, {"f1", teacher_f1_sum / k}}},
                     {"student", {{"accuracy", student_acc_sum / k}, {"f1", student_f1_sum / k}}}};
  return report;
}

// ---------------------------------------------------------------------------
// Gradient-check runner for the CLI: both full models at desk shapes, every
// parameter tensor listed by name. The fault flag adds a detached term to the
// loss that finite differences can see but the tape cannot; it exists as a
// negative control for the checker itself.

struct ModelGradCheck {
  std::string model;
  GradCheckReport report;
};

inline ModelGradCheck gradcheck_model(ModelVariant variant, std::uint64_t seed,
                                      bool inject_fault = false) {
  SkeletonTopology topo = SkeletonTopology::chain(5);
  ModelConfig mc = variant == ModelVariant::teacher ? ModelConfig::teacher_default(topo)
                                                    : ModelConfig::student_default(topo);
  mc.graph_out = 4;
  mc.ssm_channels = topo.joints * mc.graph_out;
  mc.state_dim = 4;
  mc.num_classes = 2;
  mc.regions = 4;
  mc.seed = mix_seed(seed, variant == ModelVariant::teacher ? 11 : 13);
  Model model(mc);

  std::mt19937_64 rng(mix_seed(seed, 17));
  const Tensor x = Tensor::uniform({2, 8, 5, 3}, -1.0, 1.0, rng);
  std::vector<int> labels = {0, 1};
  const Tensor fault_weight = Tensor::uniform({5, 5}, 0.5, 1.5, rng);

  auto params = model.named_params();
  auto loss_fn = [&model, &x, &labels, inject_fault, &fault_weight]() {
    ModelOutput out = model.forward(x);
    Tensor loss = loss_task(out.joint_logits, labels);
    if (inject_fault) {
      const Tensor at = model.graph_params().temporal_adjacency.detach();
      loss = add(loss, sum(mul(at, fault_weight)));
    }
    return loss;
  };
  ModelGradCheck result;
  result.model = to_string(variant);
  GradCheckOptions opts;
  opts.seed = mix_seed(seed, 23);
  result.report = grad_check(loss_fn, params, opts);
  return result;
}

// ---------------------------------------------------------------------------
// File emission helpers shared by the CLI commands.

inline void write_json(const nlohmann::json& j, const std::string& path) {
  std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot open for writing: " + path);
  out << j.dump(2) << '\n';
}

inline nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("JSON parse error in " + path + ": " + e.what());
  }
  return j;
}

}  // namespace dynstg
