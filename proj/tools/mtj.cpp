// mtj: synthesize phantoms, train the attention U-Net, predict junction
// positions, and evaluate them against specialist labels.

#include <cstdio>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "mtj/pipeline.hpp"

namespace {

using nlohmann::ordered_json;

std::vector<mtj::Instrument> parse_domains(const std::string& list, char sep) {
  std::vector<mtj::Instrument> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, sep))
    if (!item.empty()) {
      try {
        out.push_back(mtj::parse_instrument(item));
      } catch (const mtj::DataError& e) {
        throw mtj::UsageError(e.what());  // a bad flag value, not bad data
      }
    }
  return out;
}

std::vector<std::string> split(const std::string& list) {
  std::vector<std::string> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

ordered_json domain_names(const std::vector<mtj::Instrument>& ds) {
  ordered_json a = ordered_json::array();
  for (auto d : ds) a.push_back(std::string(mtj::to_string(d)));
  return a;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Muscle-tendon junction tracking on ultrasound frames"};
  app.require_subcommand(1);
  app.fallthrough();

  std::uint64_t seed = 0;
  int threads = 1;
  std::string out_dir = ".";
  app.add_option("--seed", seed, "Root seed for every random stream");
  app.add_option("--threads", threads, "Worker threads for per-frame work")->check(CLI::PositiveNumber);
  app.add_option("--out-dir", out_dir, "Output directory");

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic phantom dataset");
  mtj::SynthOptions so;
  std::string synth_domains = "SyntheticA";
  synth->add_option("-n,--n-per-domain", so.n_per_domain, "Frames per domain")->check(CLI::PositiveNumber);
  synth->add_option("--domains", synth_domains, "Comma-separated instrument tags");
  synth->add_option("--frames-per-video", so.frames_per_video)->check(CLI::PositiveNumber);
  synth->add_option("--width", so.width);
  synth->add_option("--height", so.height);
  synth->add_option("--specialists", so.specialists, "Simulated specialist annotators per frame");
  synth->add_option("--specialist-noise", so.specialist_noise_px, "Specialist scatter (px)");

  // train
  auto* train = app.add_subcommand("train", "Train the network with a sequential domain curriculum");
  mtj::TrainOptions to;
  std::string manifest_path, stages = "SyntheticA";
  bool no_augment = false;
  train->add_option("--manifest", manifest_path)->required();
  train->add_option("--stages", stages,
                    "Comma-separated domains added per stage (use + to add several in one stage); "
                    "stage k trains on everything added so far");
  train->add_option("--depth", to.network.depth);
  train->add_option("--base-filters", to.network.base_filters);
  train->add_option("--epochs", to.train.epochs_per_stage);
  train->add_option("--batch-size", to.train.batch_size);
  train->add_option("--lr", to.train.learning_rate);
  train->add_option("--zero-class-weight", to.train.zero_class_weight);
  train->add_option("--annotator", to.annotator, "Annotator whose labels are the targets");
  train->add_flag("--no-augment", no_augment);

  // predict
  auto* predict = app.add_subcommand("predict", "Locate the junction in every sampled frame");
  mtj::PredictOptions po;
  std::string weights_path, out_csv, maps_dir;
  predict->add_option("--weights", weights_path)->required();
  predict->add_option("--manifest", manifest_path)->required();
  predict->add_option("--out", out_csv, "Predictions CSV (default <out-dir>/predictions.csv)");
  predict->add_option("--maps-dir", maps_dir, "Also dump probability maps as .pmap");

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "Filter error cases and compute agreement statistics");
  mtj::EvaluateOptions eo;
  std::string predictions_path, labels_path, specialists;
  evaluate->add_option("--predictions", predictions_path)->required();
  evaluate->add_option("--manifest", manifest_path)->required();
  evaluate->add_option("--labels", labels_path, "Label CSV (default: the manifest's)");
  evaluate->add_option("--specialists", specialists, "Comma-separated specialist annotator ids");

  // report
  auto* report = app.add_subcommand("report", "Re-render figures and summary from report.json");
  std::string report_path;
  report->add_option("--report", report_path)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  ordered_json run;
  run["command"] = app.get_subcommands().front()->get_name();
  run["seed"] = seed;
  run["threads"] = threads;
  run["out_dir"] = out_dir;
  ordered_json args = ordered_json::array();
  for (int i = 0; i < argc; ++i) args.push_back(argv[i]);
  run["argv"] = args;

  try {
    if (synth->parsed()) {
      so.out_dir = out_dir;
      so.seed = seed;
      so.domains = parse_domains(synth_domains, ',');
      run["options"] = {{"n_per_domain", so.n_per_domain}, {"domains", domain_names(so.domains)},
                        {"frames_per_video", so.frames_per_video}, {"width", so.width},
                        {"height", so.height}, {"specialists", so.specialists},
                        {"specialist_noise_px", so.specialist_noise_px}};
      mtj::write_run_json(out_dir, run.dump(2) + "\n");
      const auto s = mtj::cmd_synth(so);
      std::printf("wrote %d frames in %d videos to %s\n", s.frames, s.videos, out_dir.c_str());
    } else if (train->parsed()) {
      to.manifest = manifest_path;
      to.out_dir = out_dir;
      to.network.rng_seed = seed;
      to.train.rng_seed = seed;
      to.train.threads = threads;
      to.train.augment = !no_augment;
      for (const auto& stage : split(stages)) to.stage_additions.push_back(parse_domains(stage, '+'));
      ordered_json st = ordered_json::array();
      for (const auto& s : to.stage_additions) st.push_back(domain_names(s));
      run["options"] = {{"manifest", manifest_path},  {"stage_additions", st},
                        {"depth", to.network.depth},  {"base_filters", to.network.base_filters},
                        {"epochs", to.train.epochs_per_stage}, {"batch_size", to.train.batch_size},
                        {"learning_rate", to.train.learning_rate}, {"beta1", to.train.beta1},
                        {"beta2", to.train.beta2}, {"adam_epsilon", to.train.adam_epsilon},
                        {"zero_class_weight", to.train.zero_class_weight}, {"augment", to.train.augment},
                        {"annotator", to.annotator}};
      mtj::write_run_json(out_dir, run.dump(2) + "\n");
      const auto s = mtj::cmd_train(to);
      for (const auto& c : s.checkpoints) std::printf("checkpoint %s\n", c.string().c_str());
    } else if (predict->parsed()) {
      po.weights = weights_path;
      po.manifest = manifest_path;
      po.out_csv = out_csv.empty() ? std::filesystem::path(out_dir) / "predictions.csv" : std::filesystem::path(out_csv);
      po.maps_dir = maps_dir;
      po.threads = threads;
      run["options"] = {{"weights", weights_path}, {"manifest", manifest_path}, {"out", po.out_csv.string()},
                        {"maps_dir", maps_dir}};
      mtj::write_run_json(out_dir, run.dump(2) + "\n");
      const auto s = mtj::cmd_predict(po);
      std::printf("frames=%zu\n", s.rows.size());
      std::printf("sec_per_frame=%.6f\n", s.sec_per_frame);
    } else if (evaluate->parsed()) {
      eo.predictions = predictions_path;
      eo.manifest = manifest_path;
      eo.labels = labels_path;
      eo.out_dir = out_dir;
      eo.specialists = split(specialists);
      run["options"] = {{"predictions", predictions_path}, {"manifest", manifest_path}, {"labels", labels_path},
                        {"specialists", eo.specialists}};
      mtj::write_run_json(out_dir, run.dump(2) + "\n");
      const auto s = mtj::cmd_evaluate(eo);
      const auto& ex = s.report.exclusions;
      std::printf("excluded border=%d low_confidence_pad=%d specialist_inconsistent=%d\n", ex.border,
                  ex.low_confidence_pad, ex.specialist_inconsistent);
      std::printf("frames total=%d kept=%d\n", s.report.n_total, s.report.n_frames);
      std::fputs(mtj::report_summary(s.report).c_str(), stdout);
    } else if (report->parsed()) {
      run["options"] = {{"report", report_path}};
      mtj::write_run_json(out_dir, run.dump(2) + "\n");
      mtj::cmd_report(report_path, out_dir);
      std::printf("figures written to %s/figures\n", out_dir.c_str());
    }
  } catch (const mtj::UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 1;
  } catch (const mtj::NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return 3;
  } catch (const mtj::DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 2;
  } catch (const std::filesystem::filesystem_error& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 2;
  }
  return 0;
}
