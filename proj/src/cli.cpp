#include "ipart/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "ipart/errors.hpp"
#include "ipart/io.hpp"
#include "ipart/trainer.hpp"

namespace ipart {

namespace {

std::array<double, 3> part_color(Index k, Index parts) {
  // evenly spaced hues at full saturation
  const double h = 6.0 * static_cast<double>(k) / static_cast<double>(std::max<Index>(parts, 1));
  const double x = 1.0 - std::abs(std::fmod(h, 2.0) - 1.0);
  switch (static_cast<int>(h)) {
    case 0: return {1.0, x, 0.0};
    case 1: return {x, 1.0, 0.0};
    case 2: return {0.0, 1.0, x};
    case 3: return {0.0, x, 1.0};
    case 4: return {x, 0.0, 1.0};
    default: return {1.0, 0.0, x};
  }
}

Index winner(const Tensor& assignment, Index y, Index x) {
  Index best = 0;
  for (Index k = 1; k < assignment.dim(0); ++k) {
    if (assignment(k, y, x) > assignment(best, y, x)) best = k;
  }
  return best;
}

void require_image(const Tensor& image, const Tensor& map, const char* where) {
  if (image.rank() != 3 || image.dim(0) != 3 || image.dim(1) % map.dim(map.rank() - 2) != 0 ||
      image.dim(2) % map.dim(map.rank() - 1) != 0) {
    throw std::invalid_argument(std::string(where) + ": image " + shape_string(image.shape()) +
                                " is not an integer upsampling of " + shape_string(map.shape()));
  }
}

Tensor slice(const Tensor& batched, Index i) {
  Shape inner(batched.shape().begin() + 1, batched.shape().end());
  const Index per = shape_size(inner);
  return Tensor(inner, Tensor::Vector(batched.vec().segment(i * per, per)));
}

void prepare_out(const RunConfig& cfg) {
  std::error_code ec;
  std::filesystem::create_directories(cfg.out, ec);
  if (ec) throw IoError("cannot create " + cfg.out.string() + ": " + ec.message());
  write_text(cfg.out / "config.txt", cfg.echo());
}

std::filesystem::path checkpoint_path(const RunConfig& cfg, const RunOptions& opts) {
  return opts.checkpoint.empty() ? cfg.out / "checkpoint.rgt" : opts.checkpoint;
}

Model load_model(const RunConfig& cfg, const RunOptions& opts) {
  const auto path = checkpoint_path(cfg, opts);
  if (!std::filesystem::exists(path)) throw IoError("checkpoint not found: " + path.string());
  Model model = Model::create(cfg.model_config(), cfg.model_seed());
  load_checkpoint(model, path);
  return model;
}

std::function<void(const EpochMetrics&)> progress(std::ostream& log, const std::string& tag) {
  return [&log, tag](const EpochMetrics& m) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%sepoch %td loss %.4f cls %.4f reg %.4f acc %.4f\n", tag.c_str(), m.epoch,
                  m.loss, m.cls_loss, m.reg_loss, m.accuracy);
    log << buf << std::flush;
  };
}

void command_gen(const RunConfig& cfg, std::ostream& log) {
  prepare_out(cfg);
  RunConfig generated = cfg;
  generated.data.clear();
  const Splits s = load_splits(generated, true, true);
  write_dataset(cfg.out / "train", s.train);
  write_dataset(cfg.out / "fit", s.fit);
  write_dataset(cfg.out / "test", s.test);
  log << "wrote " << s.train.size() << "/" << s.fit.size() << "/" << s.test.size() << " samples to " << cfg.out
      << "\n";
}

void command_train(const RunConfig& cfg, std::ostream& log) {
  prepare_out(cfg);
  const Splits s = load_splits(cfg, true, false);
  Model model = Model::create(cfg.model_config(), cfg.model_seed());
  const MetricsLog metrics = train(model, s.train, cfg.train_config(), progress(log, ""));
  write_text(cfg.out / "metrics.csv", metrics.csv());
  save_checkpoint(model, cfg.out / "checkpoint.rgt");
}

void command_eval(const RunConfig& cfg, const RunOptions& opts, std::ostream& log) {
  Model model = load_model(cfg, opts);
  prepare_out(cfg);
  const Splits s = load_splits(cfg, false, true);
  const EvalReport report = evaluate(model, s.fit, s.test, cfg.threads);
  write_text(cfg.out / "eval.txt", report.key_values());
  write_text(cfg.out / "eval.csv", EvalReport::csv_header() + "\n" + report.csv_row() + "\n");
  log << report.key_values();
}

void command_visualize(const RunConfig& cfg, const RunOptions& opts, std::ostream& log) {
  if (opts.samples < 1) throw ConfigError("visualize: --samples must be positive");
  Model model = load_model(cfg, opts);
  prepare_out(cfg);
  Splits s = load_splits(cfg, false, true);
  const Index count = std::min<Index>(opts.samples, static_cast<Index>(s.test.size()));
  s.test.resize(static_cast<std::size_t>(count));
  const ModelOutputs out = infer(model, s.test, count, cfg.threads);
  const auto maps = attribution_maps(out);
  for (Index i = 0; i < count; ++i) {
    const Tensor& image = s.test[static_cast<std::size_t>(i)].image;
    const Tensor q = slice(out.assignment, i);
    const Tensor a = slice(out.attention, i);
    char stem[32];
    std::snprintf(stem, sizeof stem, "sample_%03td", i);
    const std::string base = stem;
    write_ppm(cfg.out / (base + "_image.ppm"), image);
    write_ppm(cfg.out / (base + "_assignment.ppm"), assignment_overlay(image, q));
    write_ppm(cfg.out / (base + "_attention.ppm"), attention_overlay(image, q, a));
    write_ppm(cfg.out / (base + "_attribution.ppm"), attribution_overlay(image, maps[static_cast<std::size_t>(i)]));
    write_tensor_dump(cfg.out / (base + ".rgt"), {{"assignment", q},
                                                   {"attention", a},
                                                   {"occurrence", slice(out.occurrence, i)},
                                                   {"attribution", maps[static_cast<std::size_t>(i)]}});
  }
  log << "wrote overlays for " << count << " samples to " << cfg.out << "\n";
}

void command_ablate(const RunConfig& cfg, std::ostream& log) {
  prepare_out(cfg);
  const auto rows = ablate(cfg, load_splits(cfg, true, true), log);
  write_text(cfg.out / "ablation.csv", ablation_csv(rows));
  log << ablation_csv(rows);
}

}  // namespace

Splits load_splits(const RunConfig& cfg, bool want_train, bool want_eval) {
  Splits s;
  if (!cfg.data.empty()) {
    if (want_train) s.train = read_dataset(cfg.data / "train");
    if (want_eval) {
      s.fit = read_dataset(cfg.data / "fit");
      s.test = read_dataset(cfg.data / "test");
    }
    return s;
  }
  if (want_train) s.train = generate(cfg.scene, cfg.train_samples, cfg.data_seed(0), cfg.threads);
  if (want_eval) {
    s.fit = generate(cfg.scene, cfg.fit_samples, cfg.data_seed(1), cfg.threads);
    s.test = generate(cfg.scene, cfg.test_samples, cfg.data_seed(2), cfg.threads);
  }
  return s;
}

std::vector<AblationRow> ablate(const RunConfig& cfg, const Splits& splits, std::ostream& log) {
  std::vector<AblationRow> rows;
  for (const std::string variant : {"full", "no_regularization", "no_attention"}) {
    RunConfig v = cfg;
    if (variant == "no_regularization") v.train.w_reg = 0.0;
    if (variant == "no_attention") v.model.use_attention = false;
    Model model = Model::create(v.model_config(), v.model_seed());
    train(model, splits.train, v.train_config(), progress(log, variant + " "));
    rows.push_back({variant, evaluate(model, splits.fit, splits.test, v.threads)});
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out = "variant,accuracy,landmark_error\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%.17g,%.17g\n", r.variant.c_str(), r.report.accuracy, r.report.landmark_error);
    out += buf;
  }
  return out;
}

Tensor assignment_overlay(const Tensor& image, const Tensor& assignment) {
  require_image(image, assignment, "assignment_overlay");
  const Index h = image.dim(1), w = image.dim(2), sy = h / assignment.dim(1), sx = w / assignment.dim(2);
  Tensor out = image;
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      const auto color = part_color(winner(assignment, y / sy, x / sx), assignment.dim(0));
      for (Index c = 0; c < 3; ++c) out(c, y, x) = 0.5 * image(c, y, x) + 0.5 * color[static_cast<std::size_t>(c)];
    }
  }
  return out;
}

Tensor attention_overlay(const Tensor& image, const Tensor& assignment, const Tensor& attention) {
  require_image(image, assignment, "attention_overlay");
  const Index h = image.dim(1), w = image.dim(2), sy = h / assignment.dim(1), sx = w / assignment.dim(2);
  const double top = attention.vec().maxCoeff();
  Tensor out = image;
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      const Index k = winner(assignment, y / sy, x / sx);
      const double weight = top > 0.0 ? attention[k] / top : 0.0;
      const auto color = part_color(k, assignment.dim(0));
      for (Index c = 0; c < 3; ++c) {
        out(c, y, x) = 0.4 * image(c, y, x) + 0.6 * weight * color[static_cast<std::size_t>(c)];
      }
    }
  }
  return out;
}

Tensor attribution_overlay(const Tensor& image, const Tensor& attribution) {
  require_image(image, attribution, "attribution_overlay");
  const Index h = image.dim(1), w = image.dim(2), sy = h / attribution.dim(0), sx = w / attribution.dim(1);
  const double lo = attribution.vec().minCoeff(), hi = attribution.vec().maxCoeff();
  Tensor out = image;
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      const double t = hi > lo ? (attribution(y / sy, x / sx) - lo) / (hi - lo) : 0.0;
      const std::array<double, 3> heat{t, 0.2 * t, 1.0 - t};
      for (Index c = 0; c < 3; ++c) out(c, y, x) = 0.5 * image(c, y, x) + 0.5 * heat[static_cast<std::size_t>(c)];
    }
  }
  return out;
}

int run(const std::string& command, const RunConfig& cfg, const RunOptions& opts, std::ostream& log) {
  try {
    cfg.validate();
    if (command == "gen") {
      command_gen(cfg, log);
    } else if (command == "train") {
      command_train(cfg, log);
    } else if (command == "eval") {
      command_eval(cfg, opts, log);
    } else if (command == "visualize") {
      command_visualize(cfg, opts, log);
    } else if (command == "ablate") {
      command_ablate(cfg, log);
    } else {
      log << "unknown command: " << command << "\n";
      return exit_usage;
    }
  } catch (const ConfigError& e) {
    log << "config error: " << e.what() << "\n";
    return exit_config;
  } catch (const IoError& e) {
    log << "i/o error: " << e.what() << "\n";
    return exit_io;
  } catch (const NumericalError& e) {
    log << "numerical error: " << e.what() << "\n";
    return exit_numerical;
  }
  return exit_ok;
}

}  // namespace ipart
