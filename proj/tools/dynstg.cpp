// Command-line harness: synthetic data generation, teacher training, student
// distillation, evaluation, cross-validation, and gradient checking.
//
// Exit codes: 0 success, 1 configuration or data error, 2 check failure,
// 3 training divergence.

#include <iostream>

#include <CLI11.hpp>

#include "dynstg/train.hpp"

namespace {

using namespace dynstg;

struct CommonOpts {
  std::string config_path;
  std::string out_dir;
  std::string profile = "paper";
  std::int64_t seed = -1;  // -1 keeps the config's seed
};

RunConfig load_run_config(const CommonOpts& opts) {
  RunConfig config;
  if (!opts.config_path.empty()) config = run_config_from_json(read_json(opts.config_path));
  config.apply_profile(opts.profile);
  if (opts.seed >= 0) config.seed = static_cast<std::uint64_t>(opts.seed);
  if (!opts.out_dir.empty()) config.out_dir = opts.out_dir;
  config.validate();
  return config;
}

std::string join_path(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

struct FoldContext {
  Dataset full;
  FoldPlan plan;
  NormStats stats;
  Dataset train;
  Dataset test;
  SkeletonTopology topology;
};

FoldContext make_fold_context(const RunConfig& config, std::size_t fold) {
  FoldContext ctx{prepare_dataset(config), {}, {}, {}, {}, {}};
  ctx.plan = make_folds(ctx.full, config.folds, config.seed);
  if (fold >= config.folds)
    throw ConfigError("fold index " + std::to_string(fold) + " out of range for k = " +
                      std::to_string(config.folds));
  const Dataset train_raw = fold_split(ctx.full, ctx.plan, fold, true);
  const Dataset test_raw = fold_split(ctx.full, ctx.plan, fold, false);
  ctx.stats = fit_stats(train_raw);
  ctx.train = apply_stats(train_raw, ctx.stats);
  ctx.test = apply_stats(test_raw, ctx.stats);
  ctx.topology = run_topology(config, ctx.full);
  return ctx;
}

int cmd_synth(const CommonOpts& opts, const SynthSpec& spec, std::uint64_t seed) {
  const std::string dir = opts.out_dir.empty() ? "." : opts.out_dir;
  std::filesystem::create_directories(dir);
  const Dataset data = synth_gait(spec, seed);
  const std::string path = join_path(dir, "synth.jsonl");
  save_sequences(data, path);
  std::cout << "wrote " << data.size() << " sequences to " << path << "\n";
  return 0;
}

int cmd_train_teacher(const CommonOpts& opts, std::size_t fold) {
  const RunConfig config = load_run_config(opts);
  FoldContext ctx = make_fold_context(config, fold);
  std::filesystem::create_directories(config.out_dir);

  Model teacher(make_model_config(config, ctx.topology, ModelVariant::teacher,
                                  fold_stream(config.seed, fold, StreamLane::teacher_init)));
  TrainLog log =
      train_supervised(teacher, ctx.train, ctx.test, config.optimizer, config.epochs_teacher,
                       fold_stream(config.seed, fold, StreamLane::teacher_batches));
  const std::string tag = "fold" + std::to_string(fold);
  write_json(ctx.plan.to_json(), join_path(config.out_dir, "folds.json"));
  write_json(ctx.stats.to_json(), join_path(config.out_dir, "normstats_" + tag + ".json"));
  save_checkpoint(teacher, join_path(config.out_dir, "teacher_" + tag + ".json"));
  write_json(log.to_json(), join_path(config.out_dir, "teacher_" + tag + "_log.json"));
  if (log.diverged) {
    std::cerr << "teacher training diverged at epoch " << log.diverged_epoch
              << "; kept the last finite checkpoint\n";
    return 3;
  }
  std::cout << "teacher " << tag << ": final loss "
            << (log.train_loss.empty() ? 0.0 : log.train_loss.back()) << ", eval accuracy "
            << (log.eval_accuracy.empty() ? 0.0 : log.eval_accuracy.back()) << "\n";
  return 0;
}

int cmd_distill_student(const CommonOpts& opts, const std::string& teacher_path,
                        std::size_t fold) {
  const RunConfig config = load_run_config(opts);
  FoldContext ctx = make_fold_context(config, fold);
  std::filesystem::create_directories(config.out_dir);

  Model teacher = load_checkpoint(teacher_path);
  if (teacher.config().topology.joints != ctx.topology.joints)
    throw DataError("teacher checkpoint topology (" +
                    std::to_string(teacher.config().topology.joints) +
                    " joints) does not match the configured data (" +
                    std::to_string(ctx.topology.joints) + " joints)");

  Model student(make_model_config(config, ctx.topology, ModelVariant::student,
                                  fold_stream(config.seed, fold, StreamLane::student_init)));
  TrainLog log =
      train_distill(student, teacher, ctx.train, ctx.test, config.optimizer, config.distill,
                    config.epochs_student,
                    fold_stream(config.seed, fold, StreamLane::student_batches));
  const std::string tag = "fold" + std::to_string(fold);
  save_checkpoint(student, join_path(config.out_dir, "student_" + tag + ".json"));
  write_json(log.to_json(), join_path(config.out_dir, "student_" + tag + "_log.json"));
  if (log.diverged) {
    std::cerr << "student training diverged at epoch " << log.diverged_epoch << "\n";
    return 3;
  }
  std::cout << "student " << tag << ": final loss "
            << (log.train_loss.empty() ? 0.0 : log.train_loss.back()) << ", eval accuracy "
            << (log.eval_accuracy.empty() ? 0.0 : log.eval_accuracy.back()) << "\n";
  return 0;
}

int cmd_eval(const CommonOpts& opts, const std::string& checkpoint_path, std::size_t fold) {
  const RunConfig config = load_run_config(opts);
  FoldContext ctx = make_fold_context(config, fold);
  Model model = load_checkpoint(checkpoint_path);
  if (model.config().topology.joints != ctx.topology.joints)
    throw DataError("checkpoint topology does not match the configured data");
  auto [counts, preds] = evaluate_model(model, ctx.test);
  MetricsReport report = metrics(counts);
  nlohmann::json out = {{"fold", fold},
                        {"checkpoint", checkpoint_path},
                        {"accuracy", accuracy_of(model, ctx.test)},
                        {"metrics", report.to_json()}};
  std::cout << out.dump(2) << "\n";
  if (!opts.out_dir.empty())
    write_json(out, join_path(config.out_dir, "eval_fold" + std::to_string(fold) + ".json"));
  return 0;
}

int cmd_cv(const CommonOpts& opts) {
  const RunConfig config = load_run_config(opts);
  RunReport report = run_cv(config);
  std::filesystem::create_directories(config.out_dir);
  write_json(report.to_json(), join_path(config.out_dir, "report.json"));
  write_json(report.plan.to_json(), join_path(config.out_dir, "folds.json"));
  std::cout << "cv complete: teacher avg accuracy "
            << report.averages.at("teacher").at("accuracy").get<double>()
            << ", student avg accuracy "
            << report.averages.at("student").at("accuracy").get<double>() << "\n"
            << "report written to " << join_path(config.out_dir, "report.json") << "\n";
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, bool inject_fault) {
  bool all_pass = true;
  for (ModelVariant variant : {ModelVariant::teacher, ModelVariant::student}) {
    ModelGradCheck check = gradcheck_model(variant, seed, inject_fault);
    for (const auto& entry : check.report.per_param)
      std::cout << check.model << "." << entry.name << ": max rel err " << entry.max_rel_error
                << " over " << entry.coords_checked << " coords\n";
    std::cout << check.model << ": " << (check.report.pass ? "PASS" : "FAIL")
              << " (max rel err " << check.report.max_rel_error << ", epsilon "
              << check.report.epsilon << ")";
    if (!check.report.failure.empty()) std::cout << " [" << check.report.failure << "]";
    std::cout << "\n";
    all_pass = all_pass && check.report.pass;
  }
  return all_pass ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dynamic spatio-temporal graph SSM toolkit"};
  app.require_subcommand(1);

  CommonOpts opts;
  SynthSpec synth_spec;
  std::uint64_t synth_seed = 0;
  std::size_t fold = 0;
  std::string teacher_path, checkpoint_path;
  std::uint64_t gradcheck_seed = 0;
  bool inject_fault = false;

  auto add_common = [&](CLI::App* cmd, bool with_config) {
    if (with_config) cmd->add_option("--config", opts.config_path, "run configuration JSON");
    cmd->add_option("--out", opts.out_dir, "output directory");
    cmd->add_option("--seed", opts.seed, "seed override");
    cmd->add_option("--profile", opts.profile, "paper | ci")
        ->check(CLI::IsMember({"paper", "ci"}));
  };

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic gait dataset");
  synth->add_option("--classes", synth_spec.classes, "number of classes");
  synth->add_option("--per-class", synth_spec.per_class, "samples per class");
  synth->add_option("--frames", synth_spec.frames, "frames per sequence");
  synth->add_option("--joints", synth_spec.joints, "joints per frame");
  synth->add_option("--seed", synth_seed, "generator seed");
  synth->add_option("--out", opts.out_dir, "output directory");

  CLI::App* tt = app.add_subcommand("train-teacher", "train the teacher on one fold");
  add_common(tt, true);
  tt->add_option("--fold", fold, "fold index");

  CLI::App* ds = app.add_subcommand("distill-student", "distill the student from a teacher");
  add_common(ds, true);
  ds->add_option("--teacher", teacher_path, "teacher checkpoint")->required();
  ds->add_option("--fold", fold, "fold index");

  CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint on a fold's test split");
  add_common(ev, true);
  ev->add_option("--checkpoint", checkpoint_path, "model checkpoint")->required();
  ev->add_option("--fold", fold, "fold index");

  CLI::App* cv = app.add_subcommand("cv", "full k-fold cross-validation run");
  add_common(cv, true);

  CLI::App* gc = app.add_subcommand("gradcheck", "finite-difference check of both models");
  gc->add_option("--seed", gradcheck_seed, "check seed");
  gc->add_flag("--inject-gradient-fault", inject_fault,
               "negative control: corrupt the loss so the check must fail");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (synth->parsed()) return cmd_synth(opts, synth_spec, synth_seed);
    if (tt->parsed()) return cmd_train_teacher(opts, fold);
    if (ds->parsed()) return cmd_distill_student(opts, teacher_path, fold);
    if (ev->parsed()) return cmd_eval(opts, checkpoint_path, fold);
    if (cv->parsed()) return cmd_cv(opts);
    if (gc->parsed()) return cmd_gradcheck(gradcheck_seed, inject_fault);
  } catch (const dynstg::Divergence& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
