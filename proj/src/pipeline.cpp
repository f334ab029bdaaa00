#include "mtj/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include "mtj/figures.hpp"
#include "mtj/heatmap.hpp"
#include "mtj/imaging.hpp"
#include "mtj/rng.hpp"

namespace mtj {

namespace fs = std::filesystem;

namespace {

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw DataError("cannot create directory '" + dir.string() + "'");
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write '" + path.string() + "'");
  os << text;
  if (!os) throw DataError("write to '" + path.string() + "' failed");
}

std::string read_text(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::string video_name(Instrument d, int v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "_v%04d", v);
  return std::string(to_string(d)) + buf;
}

using LabelIndex = std::map<FrameKey, std::vector<const LabelRecord*>>;

LabelIndex index_labels(const std::vector<LabelRecord>& labels) {
  LabelIndex idx;
  for (const auto& r : labels) idx[{r.video_id, r.frame_idx}].push_back(&r);
  return idx;
}

fs::path labels_path(const DatasetManifest& m) {
  if (m.labels.empty()) throw DataError("manifest does not name a label file");
  return m.resolve(m.labels);
}

}  // namespace

// ---------------------------------------------------------------- synth

SynthSummary cmd_synth(const SynthOptions& o) {
  if (o.n_per_domain < 1) throw UsageError("synth: n must be >= 1");
  if (o.frames_per_video < 1) throw UsageError("synth: frames per video must be >= 1");
  if (o.domains.empty()) throw UsageError("synth: no domains given");
  if (o.specialists < 0) throw UsageError("synth: specialist count must be >= 0");
  if (o.width != 2 * o.height) throw UsageError("synth: width must be twice the height");
  ensure_dir(o.out_dir);

  DatasetManifest manifest;
  manifest.labels = "labels.csv";
  std::vector<LabelRecord> labels;
  SynthSummary summary;
  std::set<Instrument> seen;
  for (Instrument d : o.domains) {
    if (!seen.insert(d).second) throw UsageError("synth: domain listed twice");
    const int videos = (o.n_per_domain + o.frames_per_video - 1) / o.frames_per_video;
    for (int v = 0; v < videos; ++v) {
      VideoEntry e;
      e.video_id = video_name(d, v);
      e.instrument = d;
      e.movement = (v / 2) % 2 == 0 ? Movement::MVC : Movement::PT;
      e.muscle = v % 2 == 0 ? Muscle::MG : Muscle::LG;
      e.subject_group = SubjectGroup::healthy;
      e.frame_dir = "frames/" + e.video_id;
      e.crop = {0, 0, o.width, o.height};
      e.stride = 1;
      e.image_width = o.width;
      e.image_height = o.height;
      ensure_dir(o.out_dir / e.frame_dir);
      for (int f = 0; f < o.frames_per_video && v * o.frames_per_video + f < o.n_per_domain; ++f) {
        const std::uint64_t fseed = derive_seed(o.seed, hash_name("synth"), hash_name(to_string(d)),
                                                static_cast<std::uint64_t>(v), static_cast<std::uint64_t>(f));
        const PhantomParams params = phantom_preset(d, fseed, o.width, o.height);
        auto [frame, truth] = synth_phantom(params);
        write_png(o.out_dir / e.frame_dir / frame_filename(f), frame);
        truth.video_id = e.video_id;
        truth.frame_idx = f;
        truth.annotator_id = std::string(kGroundTruthAnnotator);
        labels.push_back(truth);
        Rng noise(fseed, "specialists");
        for (int k = 1; k <= o.specialists; ++k) {
          const double sd = o.specialist_noise_px * (0.75 + 0.125 * k);
          const double x = std::clamp(truth.position->x + sd * noise.normal(), 0.0, std::nextafter(o.width - 1.0, 0.0));
          const double y = std::clamp(truth.position->y + sd * noise.normal(), 0.0, std::nextafter(o.height - 1.0, 0.0));
          labels.push_back({e.video_id, f, "S" + std::to_string(k), Point{x, y}});
        }
        ++summary.frames;
      }
      manifest.entries.push_back(std::move(e));
      ++summary.videos;
    }
  }
  std::stable_sort(labels.begin(), labels.end(), label_order);
  write_labels(o.out_dir / "labels.csv", labels);
  save_manifest(o.out_dir / "manifest.json", manifest);
  return summary;
}

// ---------------------------------------------------------------- frames

std::vector<LoadedFrame> load_frames(const DatasetManifest& manifest) {
  std::vector<LoadedFrame> out;
  for (const auto& e : manifest.entries) {
    for (int idx : sample_frames(manifest, e, e.stride)) {
      const Frame raw = read_png(manifest.frame_dir(e) / frame_filename(idx));
      LoadedFrame lf;
      lf.key = {e.video_id, idx};
      lf.entry = &e;
      lf.input = normalize(crop_resize(raw, e.crop, e.image_width, e.image_height));
      out.push_back(std::move(lf));
    }
  }
  return out;
}

// ---------------------------------------------------------------- train

TrainSummary cmd_train(const TrainOptions& o) {
  if (o.stage_additions.empty()) throw UsageError("train: no stages given");
  const DatasetManifest manifest = load_manifest(o.manifest);
  if (manifest.entries.empty()) throw DataError("train: manifest has no entries");
  const auto labels = load_labels(labels_path(manifest));
  const auto index = index_labels(labels);

  NetworkConfig net = o.network;
  net.input_w = manifest.entries.front().image_width;
  net.input_h = manifest.entries.front().image_height;
  for (const auto& e : manifest.entries)
    if (e.image_width != net.input_w || e.image_height != net.input_h)
      throw DataError("train: entries use different image sizes");
  net.validate();

  std::vector<TrainingSample> all;
  for (auto& lf : load_frames(manifest)) {
    const auto it = index.find(lf.key);
    const LabelRecord* label = nullptr;
    if (it != index.end())
      for (const LabelRecord* r : it->second)
        if (r->annotator_id == o.annotator) label = r;
    if (!label)
      throw DataError("train: no '" + o.annotator + "' label for " + lf.key.video_id + " frame " +
                      std::to_string(lf.key.frame_idx));
    TrainingSample s;
    s.target = make_soft_label(label->position, net.input_w, net.input_h);
    s.frame = std::move(lf.input);
    s.domain = lf.entry->instrument;
    all.push_back(std::move(s));
  }

  std::vector<CurriculumStage> stages;
  std::vector<Instrument> domains;
  for (std::size_t k = 0; k < o.stage_additions.size(); ++k) {
    for (Instrument d : o.stage_additions[k])
      if (std::find(domains.begin(), domains.end(), d) == domains.end()) domains.push_back(d);
    CurriculumStage st;
    st.stage_id = static_cast<int>(k + 1);
    st.domains = domains;
    for (const auto& s : all)
      if (std::find(domains.begin(), domains.end(), s.domain) != domains.end()) st.dataset.push_back(s);
    if (st.dataset.empty()) throw DataError("train: stage " + std::to_string(k + 1) + " has no frames in the manifest");
    stages.push_back(std::move(st));
  }

  ensure_dir(o.out_dir);
  TrainSummary out;
  out.models = train_curriculum(init_weights(net), stages, o.train, o.out_dir, &out.log);
  for (std::size_t k = 0; k < stages.size(); ++k)
    out.checkpoints.push_back(o.out_dir / ("stage_" + std::to_string(k + 1) + ".mtjw"));
  return out;
}

// ---------------------------------------------------------------- predict

std::vector<PredictionRow> predict_frames(const ModelWeights& weights, const std::vector<LoadedFrame>& frames,
                                          int threads) {
  std::vector<PredictionRow> rows(frames.size());
  for (const auto& f : frames)
    if (f.input.width() != weights.config.input_w || f.input.height() != weights.config.input_h)
      throw DataError("predict: frame " + f.key.video_id + "/" + std::to_string(f.key.frame_idx) + " is " +
                      std::to_string(f.input.width()) + "x" + std::to_string(f.input.height()) +
                      " but the weights expect " + std::to_string(weights.config.input_w) + "x" +
                      std::to_string(weights.config.input_h));
  auto work = [&](std::size_t i) {
    const ProbabilityMap map = forward(weights, frames[i].input);
    PredictionRow& r = rows[i];
    r.video_id = frames[i].key.video_id;
    r.frame_idx = frames[i].key.frame_idx;
    r.prediction = locate(map);
    r.filter_case = filter_prediction(r.prediction, map.width(), map.height()).filter_case;
  };
  threads = std::max(1, threads);
  if (threads == 1 || frames.size() < 2) {
    for (std::size_t i = 0; i < frames.size(); ++i) work(i);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t)
      pool.emplace_back([&, t] {
        for (std::size_t i = static_cast<std::size_t>(t); i < frames.size(); i += static_cast<std::size_t>(threads))
          work(i);
      });
    for (auto& th : pool) th.join();
  }
  return rows;
}

PredictSummary cmd_predict(const PredictOptions& o) {
  const ModelWeights weights = load_weights(o.weights);
  const DatasetManifest manifest = load_manifest(o.manifest);
  const auto frames = load_frames(manifest);
  PredictSummary out;
  const auto t0 = std::chrono::steady_clock::now();
  out.rows = predict_frames(weights, frames, o.threads);
  const auto t1 = std::chrono::steady_clock::now();
  if (!frames.empty())
    out.sec_per_frame = std::chrono::duration<double>(t1 - t0).count() / static_cast<double>(frames.size());
  if (!o.out_csv.parent_path().empty()) ensure_dir(o.out_csv.parent_path());
  write_text(o.out_csv, format_predictions(out.rows));
  if (!o.maps_dir.empty()) {
    ensure_dir(o.maps_dir);
    for (const auto& f : frames)
      save_pmap(o.maps_dir / (f.key.video_id + "_" + frame_filename(f.key.frame_idx) + ".pmap"),
                forward(weights, f.input));
  }
  return out;
}

// ---------------------------------------------------------------- evaluate

EvaluateSummary evaluate(std::vector<PredictionRow> predictions, const std::vector<LabelRecord>& labels,
                         const DatasetManifest& manifest, const std::vector<std::string>& specialist_ids) {
  std::sort(predictions.begin(), predictions.end(), [](const PredictionRow& a, const PredictionRow& b) {
    return std::tie(a.video_id, a.frame_idx) < std::tie(b.video_id, b.frame_idx);
  });
  for (std::size_t i = 1; i < predictions.size(); ++i)
    if (predictions[i].video_id == predictions[i - 1].video_id && predictions[i].frame_idx == predictions[i - 1].frame_idx)
      throw DataError("evaluate: duplicate prediction for " + predictions[i].video_id + " frame " +
                      std::to_string(predictions[i].frame_idx));
  if (predictions.empty()) throw DataError("evaluate: no predictions");

  std::vector<std::string> specialists = specialist_ids;
  if (specialists.empty()) {
    std::set<std::string> ids;
    for (const auto& r : labels)
      if (r.annotator_id != kGroundTruthAnnotator) ids.insert(r.annotator_id);
    specialists.assign(ids.begin(), ids.end());
  }
  if (specialists.size() < 2) throw DataError("evaluate: need at least two specialist annotators");
  const auto index = index_labels(labels);

  struct Item {
    const PredictionRow* pred;
    const VideoEntry* entry;
    FrameAgreement agreement;
    std::vector<int> present;  ///< specialist column of each agreement point
  };
  std::vector<Item> items;
  for (const auto& p : predictions) {
    const VideoEntry* e = manifest.find(p.video_id);
    if (!e) throw DataError("evaluate: video '" + p.video_id + "' is not in the manifest");
    Item it{&p, e, {}, {}};
    std::vector<Point> pts;
    const auto lab = index.find({p.video_id, p.frame_idx});
    for (std::size_t s = 0; s < specialists.size(); ++s) {
      if (lab == index.end()) break;
      for (const LabelRecord* r : lab->second)
        if (r->annotator_id == specialists[s] && r->position) {
          pts.push_back(*r->position);
          it.present.push_back(static_cast<int>(s));
        }
    }
    if (pts.size() < 2)
      throw DataError("evaluate: missing specialist coverage on " + p.video_id + " frame " +
                      std::to_string(p.frame_idx));
    it.agreement = frame_agreement({p.video_id, p.frame_idx}, pts);
    items.push_back(std::move(it));
  }

  EvaluateSummary out;
  EvaluationReport& rep = out.report;
  rep.n_total = static_cast<int>(items.size());
  double sigma_all = 0.0;
  for (const auto& it : items) sigma_all += it.agreement.sigma;
  sigma_all /= static_cast<double>(items.size());
  rep.sigma_bar_all_px = sigma_all;
  if (!(sigma_all > 0.0)) rep.notes.push_back("specialists agree exactly; inconsistency filter skipped");

  std::vector<const Item*> kept;
  for (const auto& it : items) {
    FilterVerdict v = filter_prediction(it.pred->prediction, it.entry->image_width, it.entry->image_height);
    if (v.kept && sigma_all > 0.0)
      v = filter_specialist_frame(it.agreement.specialists, it.agreement.reference, sigma_all);
    if (v.kept) {
      kept.push_back(&it);
      continue;
    }
    out.excluded.push_back({it.agreement.key, v.filter_case});
    switch (v.filter_case) {
      case FilterCase::border:
        ++rep.exclusions.border;
        break;
      case FilterCase::low_confidence_pad:
        ++rep.exclusions.low_confidence_pad;
        break;
      case FilterCase::specialist_inconsistent:
        ++rep.exclusions.specialist_inconsistent;
        break;
      case FilterCase::none:
        break;
    }
  }
  rep.n_frames = static_cast<int>(kept.size());
  if (kept.empty()) throw DataError("evaluate: every frame was excluded");

  std::vector<FrameAgreement> kept_agreements;
  std::vector<EvalFrame> eval;
  std::vector<double> model_px;
  std::vector<std::vector<double>> spec_px(specialists.size());
  std::vector<std::vector<double>> fold_mm(specialists.size());
  std::vector<double> mx, rx, my, ry;
  double extent_x = 0.0, extent_y = 0.0;
  for (const Item* it : kept) {
    const FrameAgreement& a = it->agreement;
    const double sp = it->entry->pixel_spacing_mm;
    kept_agreements.push_back(a);
    EvalFrame f{a.key, it->pred->prediction.position, a.reference, sp, it->entry->instrument, it->entry->muscle,
                it->entry->movement};
    eval.push_back(f);
    rep.model_distances_mm.push_back(distance_mm(f));
    model_px.push_back(std::hypot(f.model.x - f.reference.x, f.model.y - f.reference.y));
    for (std::size_t j = 0; j < it->present.size(); ++j)
      spec_px[static_cast<std::size_t>(it->present[j])].push_back(a.distances[j]);
    if (a.specialists.size() >= 3) {
      const auto loo = loo_specialist_deviation(a.specialists);
      for (std::size_t j = 0; j < it->present.size(); ++j) {
        fold_mm[static_cast<std::size_t>(it->present[j])].push_back(loo.fold_distances[j] * sp);
        rep.specialist_loo_distances_mm.push_back(loo.fold_distances[j] * sp);
      }
    }
    mx.push_back(f.model.x * sp);
    rx.push_back(f.reference.x * sp);
    my.push_back(f.model.y * sp);
    ry.push_back(f.reference.y * sp);
    extent_x += it->entry->image_width * sp;
    extent_y += it->entry->image_height * sp;
  }
  extent_x /= static_cast<double>(kept.size());
  extent_y /= static_cast<double>(kept.size());

  const SpecialistSummary ss = summarize_specialists(kept_agreements);
  rep.sigma_bar_px = ss.sigma_bar;
  rep.d_bar_px = ss.d_bar;
  for (const Item* it : kept) rep.d_bar_mm += it->agreement.loo_deviation * it->entry->pixel_spacing_mm;
  rep.d_bar_mm /= static_cast<double>(kept.size());
  rep.model_mm = error_stats_from_distances(rep.model_distances_mm);

  std::vector<double> fold_rmse;
  for (const auto& f : fold_mm)
    if (!f.empty()) fold_rmse.push_back(error_stats_from_distances(f).rmse);
  if (!fold_rmse.empty()) {
    for (double v : fold_rmse) rep.specialist_rmse_mm_mean += v;
    rep.specialist_rmse_mm_mean /= static_cast<double>(fold_rmse.size());
    if (fold_rmse.size() > 1) {
      double ssq = 0.0;
      for (double v : fold_rmse) ssq += (v - rep.specialist_rmse_mm_mean) * (v - rep.specialist_rmse_mm_mean);
      rep.specialist_rmse_mm_sd = std::sqrt(ssq / static_cast<double>(fold_rmse.size() - 1));
    }
  }

  // ICC over frames rated by every specialist: one column per specialist,
  // each cell that specialist's distance to the frame reference.
  std::vector<const Item*> complete;
  for (const Item* it : kept)
    if (it->present.size() == specialists.size()) complete.push_back(it);
  rep.icc_raters = static_cast<int>(specialists.size());
  if (complete.size() >= 5) {
    Eigen::MatrixXd ratings(static_cast<Eigen::Index>(complete.size()), static_cast<Eigen::Index>(specialists.size()));
    for (std::size_t i = 0; i < complete.size(); ++i)
      for (std::size_t s = 0; s < specialists.size(); ++s)
        ratings(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(s)) = complete[i]->agreement.distances[s];
    try {
      rep.icc = icc_a_k(ratings);
    } catch (const NumericError& e) {
      rep.notes.push_back(std::string("ICC not computed: ") + e.what());
    }
  } else {
    rep.notes.push_back("fewer than 5 fully rated frames; ICC not computed");
  }

  rep.bland_altman_x = bland_altman(mx, rx, extent_x);
  rep.bland_altman_y = bland_altman(my, ry, extent_y);
  if (rep.sigma_bar_px > 0.0)
    rep.tolerance = tolerance_curve(model_px, spec_px, rep.sigma_bar_px, default_tolerance_grid());
  else
    rep.notes.push_back("sigma_bar is zero on kept frames; tolerance curve not computed");
  for (Grouping g : {Grouping::muscle, Grouping::movement, Grouping::instrument})
    rep.breakdowns.push_back(breakdown(eval, g));
  return out;
}

EvaluateSummary cmd_evaluate(const EvaluateOptions& o) {
  const DatasetManifest manifest = load_manifest(o.manifest);
  const auto labels = load_labels(o.labels.empty() ? labels_path(manifest) : o.labels);
  auto preds = parse_predictions(read_text(o.predictions));
  EvaluateSummary out = evaluate(std::move(preds), labels, manifest, o.specialists);
  ensure_dir(o.out_dir);
  std::string ledger = "video_id,frame_idx,filter_case\n";
  for (const auto& e : out.excluded)
    ledger += e.key.video_id + ',' + std::to_string(e.key.frame_idx) + ',' + std::string(to_string(e.filter_case)) + '\n';
  write_text(o.out_dir / "excluded_frames.csv", ledger);
  write_text(o.out_dir / "report.json", report_to_json(out.report));
  write_report_figures(o.out_dir / "figures", out.report);
  write_text(o.out_dir / "summary.txt", report_summary(out.report));
  return out;
}

// ---------------------------------------------------------------- report

std::string report_summary(const EvaluationReport& r) {
  std::ostringstream s;
  s.precision(4);
  s << "frames: " << r.n_total << " total, " << r.n_frames << " kept\n";
  s << "excluded: border " << r.exclusions.border << ", low_confidence_pad " << r.exclusions.low_confidence_pad
    << ", specialist_inconsistent " << r.exclusions.specialist_inconsistent << "\n";
  s << "model: RMSE " << r.model_mm.rmse << " mm, SEM " << r.model_mm.sem << " mm, MAE " << r.model_mm.mae << " mm\n";
  s << "specialists: RMSE " << r.specialist_rmse_mm_mean << " +/- " << r.specialist_rmse_mm_sd << " mm, d_bar "
    << r.d_bar_mm << " mm, sigma_bar " << r.sigma_bar_px << " px\n";
  if (r.icc)
    s << "ICC(A," << r.icc->anova.k << "): " << r.icc->icc << " [" << r.icc->ci_low << ", " << r.icc->ci_high << "]\n";
  s << "Bland-Altman x: bias " << r.bland_altman_x.bias << " mm, LoA [" << r.bland_altman_x.loa_low << ", "
    << r.bland_altman_x.loa_high << "]\n";
  s << "Bland-Altman y: bias " << r.bland_altman_y.bias << " mm, LoA [" << r.bland_altman_y.loa_low << ", "
    << r.bland_altman_y.loa_high << "]\n";
  for (const auto& b : r.breakdowns) {
    s << to_string(b.grouping) << ":";
    for (const auto& g : b.groups) s << " " << g.group << " " << g.stats.rmse << " mm (n=" << g.stats.n << ")";
    if (!b.empty_groups.empty()) {
      s << "; no frames:";
      for (const auto& e : b.empty_groups) s << " " << e;
    }
    s << "\n";
  }
  for (const auto& n : r.notes) s << "note: " << n << "\n";
  return s.str();
}

void cmd_report(const fs::path& report_json, const fs::path& out_dir) {
  const EvaluationReport r = report_from_json(read_text(report_json));
  ensure_dir(out_dir);
  write_report_figures(out_dir / "figures", r);
  write_text(out_dir / "summary.txt", report_summary(r));
}

void write_run_json(const fs::path& out_dir, const std::string& json_text) {
  ensure_dir(out_dir);
  write_text(out_dir / "run.json", json_text);
}

std::vector<DomainError> domain_errors(const std::vector<PredictionRow>& rows, const std::vector<LabelRecord>& labels,
                                       const DatasetManifest& manifest) {
  const auto index = index_labels(labels);
  std::map<Instrument, std::pair<double, std::size_t>> acc;
  for (const auto& r : rows) {
    const VideoEntry* e = manifest.find(r.video_id);
    if (!e) throw DataError("domain errors: unknown video '" + r.video_id + "'");
    const auto it = index.find({r.video_id, r.frame_idx});
    if (it == index.end()) continue;
    for (const LabelRecord* l : it->second)
      if (l->annotator_id == kGroundTruthAnnotator && l->position) {
        const double d = std::hypot(r.prediction.position.x - l->position->x, r.prediction.position.y - l->position->y);
        acc[e->instrument].first += d * d;
        ++acc[e->instrument].second;
      }
  }
  std::vector<DomainError> out;
  for (const auto& [d, v] : acc) out.push_back({d, std::sqrt(v.first / static_cast<double>(v.second)), v.second});
  return out;
}

}  // namespace mtj
