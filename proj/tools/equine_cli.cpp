// equine: command-line front end for dataset preparation, training,
// evaluation, inference and serving.

#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "equine/classifier.hpp"
#include "equine/dataset.hpp"
#include "equine/detector.hpp"
#include "equine/error.hpp"
#include "equine/evaluation.hpp"
#include "equine/image_io.hpp"
#include "equine/pipeline.hpp"
#include "equine/registry.hpp"
#include "equine/serialization.hpp"
#include "equine/service.hpp"
#include "equine/synthetic.hpp"

namespace fs = std::filesystem;
using namespace equine;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    cells.push_back(b == std::string::npos ? "" : cell.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

int parse_int(const std::string& text, const std::string& what) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::logic_error&) {
    throw DataError("bad " + what + " '" + text + "'");
  }
}

// ---- synth -----------------------------------------------------------------

struct SynthOptions {
  fs::path out;
  int per_class = 3;
  int width = 300;
  int height = 200;
  std::uint64_t seed = 0;
  bool rois = false;
};

void run_synth(const SynthOptions& o) {
  fs::create_directories(o.out / "images");
  std::ostringstream labels;
  labels << "file,label,x,y,w,h\n";
  int n = 0;
  auto emit = [&](const Image& image, EmotionLabel label, const BoundingBox& box) {
    std::ostringstream name;
    name << "toy_" << std::setw(4) << std::setfill('0') << n++ << ".png";
    write_png(image, o.out / "images" / name.str());
    labels << name.str() << ',' << to_string(label) << ',' << box.x << ',' << box.y << ',' << box.w << ',' << box.h
           << '\n';
  };
  if (o.rois) {
    std::uint64_t s = o.seed;
    for (EmotionLabel label : kEmotionLabels) {
      for (int i = 0; i < o.per_class; ++i) emit(make_toy_roi(label, kClassifierSide, s++), label, {0, 0, kClassifierSide, kClassifierSide});
    }
  } else {
    for (const auto& scene : make_toy_scenes(o.per_class, o.width, o.height, o.seed)) {
      emit(scene.image, scene.label, scene.box);
    }
  }
  write_text(o.out / "labels.csv", labels.str());
  std::cout << nlohmann::json{{"images", n}, {"dir", (o.out / "images").string()}, {"labels", (o.out / "labels.csv").string()}}.dump()
            << '\n';
}

// ---- ingest ----------------------------------------------------------------

struct IngestOptions {
  fs::path dir;
  fs::path labels;
  fs::path manifest;
};

void run_ingest(const IngestOptions& o) {
  if (!fs::is_directory(o.dir)) throw DataError("image directory not found: " + o.dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(o.dir)) {
    if (!e.is_regular_file()) continue;
    auto ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());

  const fs::path manifest_dir = fs::absolute(o.manifest).parent_path();
  DatasetManifest m;
  std::map<std::string, std::string> id_of_file;
  for (const auto& f : files) {
    const Image image = read_image(f);
    const std::string id = f.stem().string();
    m.records.push_back({id, fs::relative(fs::absolute(f), manifest_dir).generic_string(), image.width, image.height});
    id_of_file[f.filename().string()] = id;
  }

  if (!o.labels.empty()) {
    std::ifstream in(o.labels);
    if (!in) throw DataError("label file not found: " + o.labels.string());
    std::string line;
    std::getline(in, line);
    const auto header = split_csv_line(line);
    if (header.size() < 6 || header[0] != "file" || header[1] != "label") {
      throw DataError("label file must start with header file,label,x,y,w,h");
    }
    const bool with_cues = header.size() >= 10;
    int row = 1;
    while (std::getline(in, line)) {
      ++row;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      const auto cells = split_csv_line(line);
      const std::string where = o.labels.string() + " line " + std::to_string(row) + ": ";
      if (cells.size() < 6) throw DataError(where + "expected at least 6 columns");
      const auto it = id_of_file.find(cells[0]);
      if (it == id_of_file.end()) throw DataError(where + "no image named '" + cells[0] + "'");
      Annotation a;
      a.image_id = it->second;
      a.box = {parse_int(cells[2], "x"), parse_int(cells[3], "y"), parse_int(cells[4], "w"), parse_int(cells[5], "h")};
      if (!cells[1].empty()) {
        const auto label = parse_emotion(cells[1]);
        if (!label) throw DataError(where + "unknown label '" + cells[1] + "'");
        a.label = *label;
      }
      if (with_cues && cells.size() >= 10 && !cells[6].empty()) {
        const auto eyes = parse_eyes(cells[6]);
        const auto ears = parse_ears(cells[7]);
        const auto nose = parse_nose(cells[8]);
        const auto neck = parse_neck(cells[9]);
        if (!eyes || !ears || !nose || !neck) throw DataError(where + "unknown cue value");
        a.cues = CueAnnotation{*eyes, *ears, *nose, *neck};
        a.override_mismatch = a.label && classify_cues(*a.cues).best != *a.label;
      }
      m.annotations.push_back(a);
    }
  }
  save_manifest(m, o.manifest);
  std::cout << nlohmann::json{{"records", m.records.size()}, {"annotations", m.annotations.size()}}.dump() << '\n';
}

// ---- split -----------------------------------------------------------------

struct SplitOptions {
  fs::path manifest;
  int train_per_class = 100;
  int val_per_class = 20;
  int kfold = 0;
  std::uint64_t seed = 0;
};

void run_split(const SplitOptions& o) {
  DatasetManifest m = load_manifest(o.manifest);
  nlohmann::json summary;
  if (o.kfold != 0) {
    const auto folds = kfold_split(m, o.kfold, o.seed);
    m = with_fold_splits(m, folds);
    summary = {{"folds", folds.size()}, {"val_sizes", nlohmann::json::array()}};
    for (const auto& f : folds) summary["val_sizes"].push_back(f.val.size());
  } else {
    m = stratified_split(m, {o.train_per_class, o.val_per_class, o.seed});
    summary = {{"train", m.splits.at("train").size()}, {"val", m.splits.at("val").size()}};
  }
  save_manifest(m, o.manifest);
  std::cout << summary.dump() << '\n';
}

// ---- shared dataset loading -------------------------------------------------

struct LoadedExample {
  std::string id;
  Image image;
  Annotation annotation;
};

std::vector<LoadedExample> load_split(const fs::path& manifest_path, const DatasetManifest& m, const std::string& split,
                                      bool need_label) {
  std::vector<std::string> ids;
  if (split.empty()) {
    for (const auto& a : m.annotations) ids.push_back(a.image_id);
  } else {
    const auto it = m.splits.find(split);
    if (it == m.splits.end()) throw DataError("manifest has no split '" + split + "'");
    ids = it->second;
  }
  std::vector<LoadedExample> out;
  for (const auto& id : ids) {
    const Annotation* a = m.find_annotation(id);
    if (!a) throw DataError("image '" + id + "' has no annotation");
    if (need_label && !a->label) throw DataError("image '" + id + "' has no label");
    const ImageRecord* r = m.find_record(id);
    out.push_back({id, read_image(resolve_uri(manifest_path, r->uri)), *a});
  }
  return out;
}

std::vector<LabeledImage> to_rois(const std::vector<LoadedExample>& examples) {
  std::vector<LabeledImage> out;
  out.reserve(examples.size());
  for (const auto& e : examples) {
    out.push_back({crop_and_resize(e.image, e.annotation.box, kClassifierSide), *e.annotation.label});
  }
  return out;
}

std::vector<DetectorSample> to_detector_samples(const std::vector<LoadedExample>& examples) {
  std::vector<DetectorSample> out;
  out.reserve(examples.size());
  for (const auto& e : examples) {
    auto scaled = rescale_to_height(e.image, kDetectorHeight);
    auto box = clamp_box(scale_box(e.annotation.box, scaled.scale_factor), scaled.image.width, scaled.image.height);
    if (!box) throw DataError("image '" + e.id + "': box vanishes after rescaling");
    out.push_back({std::move(scaled.image), *box});
  }
  return out;
}

// ---- train-detector ---------------------------------------------------------

struct TrainDetectorOptions {
  fs::path manifest;
  std::string split = "train";
  fs::path out;
  fs::path loss_curve;
  std::string version = "v1";
  DetectorConfig config;
};

void run_train_detector(TrainDetectorOptions o) {
  const DatasetManifest m = load_manifest(o.manifest);
  const auto samples = to_detector_samples(load_split(o.manifest, m, o.split, false));
  auto trained = train_detector(samples, o.config);
  trained.model.set_version_tag(o.version);
  save_detector(trained.model, o.out);
  if (!o.loss_curve.empty()) write_text(o.loss_curve, format_loss_curve(trained.loss_curve));
  nlohmann::json summary = {{"model", o.out.string()}, {"version", o.version}, {"epochs", trained.loss_curve.size()}};
  if (!trained.loss_curve.empty()) {
    summary["initial_loss"] = trained.loss_curve.front();
    summary["final_loss"] = trained.loss_curve.back();
  }
  std::cout << summary.dump() << '\n';
}

// ---- train-classifier -------------------------------------------------------

struct TrainClassifierOptions {
  fs::path manifest;
  std::string train_split = "train";
  std::string val_split = "val";
  std::string base = "vgg16";
  fs::path out;
  fs::path report;
  fs::path report_jsonl;
  std::string version = "v1";
  ClassifierConfig config;
};

ClassifierConfig resolve_base(ClassifierConfig config, const std::string& base) {
  const auto parsed = parse_base(base);
  if (!parsed) throw UsageError("unknown base '" + base + "' (vgg16, resnet50v2, xception)");
  config.base = *parsed;
  return config;
}

TrainReport fit_classifier(const ClassifierConfig& config, const std::vector<LabeledImage>& train,
                           const std::vector<LabeledImage>& val, const std::string& version, ClassifierModel* out) {
  ClassifierModel model = build_classifier(config);
  apply_freeze_policy(model);
  model.set_version_tag(version);
  TrainReport report = train_classifier(model, train, val, config);
  if (out) *out = std::move(model);
  return report;
}

void run_train_classifier(const TrainClassifierOptions& o) {
  const ClassifierConfig config = resolve_base(o.config, o.base);
  validate_config(config);
  const DatasetManifest m = load_manifest(o.manifest);
  const auto train = to_rois(load_split(o.manifest, m, o.train_split, true));
  const auto val = to_rois(load_split(o.manifest, m, o.val_split, true));
  ClassifierModel model;
  const TrainReport report = fit_classifier(config, train, val, o.version, &model);
  save_classifier(model, o.out);
  if (!o.report.empty()) write_text(o.report, format_train_report_csv(report));
  if (!o.report_jsonl.empty()) write_text(o.report_jsonl, format_train_report_jsonl(report));
  nlohmann::json summary = {{"model", o.out.string()}, {"version", o.version}, {"epochs", report.epochs.size()}};
  if (!report.epochs.empty()) {
    summary["final_train_accuracy"] = report.epochs.back().train_accuracy;
    summary["final_val_accuracy"] = report.epochs.back().val_accuracy;
  }
  std::cout << summary.dump() << '\n';
}

// ---- evaluate ---------------------------------------------------------------

struct EvaluateOptions {
  fs::path manifest;
  std::string split = "val";
  fs::path classifier;
  fs::path detector;
  double iou_threshold = 0.5;
  fs::path out;
  fs::path confusion_csv;
};

void run_evaluate(const EvaluateOptions& o) {
  if (o.classifier.empty() && o.detector.empty()) throw UsageError("give --classifier and/or --detector");
  const DatasetManifest m = load_manifest(o.manifest);
  const auto examples = load_split(o.manifest, m, o.split, !o.classifier.empty());
  nlohmann::json result = {{"split", o.split}};
  if (!o.classifier.empty()) {
    const ClassifierModel model = load_classifier(o.classifier);
    std::vector<EmotionLabel> predicted, truth;
    for (const auto& roi : to_rois(examples)) {
      predicted.push_back(predict(model, roi.image).label);
      truth.push_back(roi.label);
    }
    const EvaluationReport report = evaluate(predicted, truth);
    result["classifier"] = evaluation_json(report);
    if (!o.confusion_csv.empty()) write_text(o.confusion_csv, format_confusion_csv(report.confusion));
  }
  if (!o.detector.empty()) {
    const DetectorModel model = load_detector(o.detector);
    const auto ev = evaluate_detector(model, to_detector_samples(examples), o.iou_threshold);
    result["detector"] = {{"precision", ev.precision ? nlohmann::json(*ev.precision) : nlohmann::json(nullptr)},
                          {"recall", ev.recall},
                          {"iou_threshold", o.iou_threshold}};
  }
  if (!o.out.empty()) write_text(o.out, result.dump(2) + "\n");
  std::cout << result.dump() << '\n';
}

// ---- cv ---------------------------------------------------------------------

struct CvOptions {
  fs::path manifest;
  int k = 10;
  std::string base = "vgg16";
  fs::path out;
  fs::path reports_dir;
  ClassifierConfig config;
};

void run_cv(const CvOptions& o) {
  const ClassifierConfig config = resolve_base(o.config, o.base);
  validate_config(config);
  const DatasetManifest m = load_manifest(o.manifest);
  const auto folds = kfold_split(m, o.k, config.seed);
  const auto examples = load_split(o.manifest, m, "", true);
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < examples.size(); ++i) index[examples[i].id] = i;
  const auto rois = to_rois(examples);

  std::vector<TrainReport> reports;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    std::vector<LabeledImage> train, val;
    for (const auto& id : folds[f].train) train.push_back(rois[index.at(id)]);
    for (const auto& id : folds[f].val) val.push_back(rois[index.at(id)]);
    reports.push_back(fit_classifier(config, train, val, "fold" + std::to_string(f + 1), nullptr));
    if (!o.reports_dir.empty()) {
      write_text(o.reports_dir / ("fold" + std::to_string(f + 1) + ".csv"), format_train_report_csv(reports.back()));
    }
    std::cerr << "fold " << f + 1 << "/" << folds.size() << " done\n";
  }
  const CvCurves curves = cv_average(reports);
  write_text(o.out, format_cv_curve_csv(curves));
  nlohmann::json summary = {{"folds", folds.size()}, {"epochs", curves.val_accuracy.size()}, {"curve", o.out.string()}};
  if (!curves.val_accuracy.empty()) summary["final_val_accuracy"] = curves.val_accuracy.back();
  std::cout << summary.dump() << '\n';
}

// ---- infer ------------------------------------------------------------------

struct InferOptions {
  fs::path image;
  fs::path detector;
  fs::path classifier;
};

void run_infer(const InferOptions& o) {
  const DetectorModel detector = load_detector(o.detector);
  const ClassifierModel classifier = load_classifier(o.classifier);
  const Image image = read_image(o.image);
  const PipelineResult r = infer(detector, classifier, image);
  nlohmann::json out = prediction_body(r);
  out["timings_ms"] = timings_json(r.timings);
  out["model_versions"] = {{"detector", detector.version_tag()}, {"classifier", classifier.version_tag()}};
  std::cout << out.dump() << '\n';
}

// ---- serve ------------------------------------------------------------------

struct ServeOptions {
  fs::path manifest;
  fs::path models;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string detector_version;
  std::string classifier_version;
  double max_upload_mb = 10.0;
};

HttpServer* g_server = nullptr;

void run_serve(const ServeOptions& o) {
  auto registry = std::make_shared<ModelRegistry>();
  if (!o.models.empty()) registry->scan(o.models);
  if (!o.detector_version.empty()) registry->activate(ModelKind::detector, o.detector_version);
  if (!o.classifier_version.empty()) registry->activate(ModelKind::classifier, o.classifier_version);
  Service service({o.manifest, static_cast<std::size_t>(o.max_upload_mb * 1024 * 1024)}, registry);
  HttpServer server(service, o.host, o.port);
  g_server = &server;
  std::signal(SIGINT, [](int) { if (g_server) g_server->stop(); });
  std::signal(SIGTERM, [](int) { if (g_server) g_server->stop(); });
  std::cout << nlohmann::json{{"listening", o.host + ":" + std::to_string(server.port())}}.dump() << std::endl;
  server.run();
  g_server = nullptr;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Equine emotion recognition: detector + classifier pipeline"};
  app.require_subcommand(1);

  SynthOptions synth;
  auto* c_synth = app.add_subcommand("synth", "Generate toy target-patch scenes and a label file");
  c_synth->add_option("--out", synth.out, "Output directory")->required();
  c_synth->add_option("--per-class", synth.per_class, "Images per emotion")->check(CLI::PositiveNumber);
  c_synth->add_option("--width", synth.width, "Nominal scene width")->check(CLI::PositiveNumber);
  c_synth->add_option("--height", synth.height, "Scene height")->check(CLI::PositiveNumber);
  c_synth->add_option("--seed", synth.seed);
  c_synth->add_flag("--rois", synth.rois, "Emit 150x150 ROI images instead of scenes");

  IngestOptions ingest;
  auto* c_ingest = app.add_subcommand("ingest", "Build a manifest from an image directory and a label file");
  c_ingest->add_option("--dir", ingest.dir, "Image directory")->required();
  c_ingest->add_option("--labels", ingest.labels, "CSV: file,label,x,y,w,h[,eyes,ears,nose,neck]");
  c_ingest->add_option("--manifest", ingest.manifest, "Manifest to write")->required();

  SplitOptions split;
  auto* c_split = app.add_subcommand("split", "Write stratified train/val or k-fold splits into a manifest");
  c_split->add_option("--manifest", split.manifest)->required();
  c_split->add_option("--train-per-class", split.train_per_class)->check(CLI::PositiveNumber);
  c_split->add_option("--val-per-class", split.val_per_class)->check(CLI::PositiveNumber);
  c_split->add_option("--kfold", split.kfold, "Number of folds instead of a train/val split");
  c_split->add_option("--seed", split.seed);

  TrainDetectorOptions tdet;
  auto* c_tdet = app.add_subcommand("train-detector", "Train the ROI detector");
  c_tdet->add_option("--manifest", tdet.manifest)->required();
  c_tdet->add_option("--split", tdet.split, "Split to train on; empty for every annotated image");
  c_tdet->add_option("--out", tdet.out, "Model artifact")->required();
  c_tdet->add_option("--loss-curve", tdet.loss_curve, "CSV of epoch,loss");
  c_tdet->add_option("--version", tdet.version);
  c_tdet->add_option("--epochs", tdet.config.epochs);
  c_tdet->add_option("--lr", tdet.config.learning_rate);
  c_tdet->add_option("--score-threshold", tdet.config.score_threshold);
  c_tdet->add_option("--nms-iou", tdet.config.proposal_nms_iou);
  c_tdet->add_option("--anchor-scales", tdet.config.anchor_scales)->delimiter(',');
  c_tdet->add_option("--anchor-ratios", tdet.config.anchor_ratios)->delimiter(',');
  c_tdet->add_option("--seed", tdet.config.seed);

  TrainClassifierOptions tcls;
  auto* c_tcls = app.add_subcommand("train-classifier", "Fine-tune the emotion classifier");
  c_tcls->add_option("--manifest", tcls.manifest)->required();
  c_tcls->add_option("--train-split", tcls.train_split);
  c_tcls->add_option("--val-split", tcls.val_split);
  c_tcls->add_option("--base", tcls.base, "vgg16, resnet50v2 or xception");
  c_tcls->add_option("--out", tcls.out, "Model artifact")->required();
  c_tcls->add_option("--report", tcls.report, "Per-epoch CSV report");
  c_tcls->add_option("--report-jsonl", tcls.report_jsonl);
  c_tcls->add_option("--version", tcls.version);
  c_tcls->add_option("--epochs", tcls.config.epochs);
  c_tcls->add_option("--lr", tcls.config.learning_rate);
  c_tcls->add_option("--batch-size", tcls.config.batch_size);
  c_tcls->add_option("--width-divisor", tcls.config.width_divisor, "Divide base channel counts (1 = reference)");
  c_tcls->add_option("--seed", tcls.config.seed);

  EvaluateOptions eval;
  auto* c_eval = app.add_subcommand("evaluate", "Accuracy and confusion matrix on a split");
  c_eval->add_option("--manifest", eval.manifest)->required();
  c_eval->add_option("--split", eval.split);
  c_eval->add_option("--classifier", eval.classifier);
  c_eval->add_option("--detector", eval.detector);
  c_eval->add_option("--iou", eval.iou_threshold);
  c_eval->add_option("--out", eval.out, "JSON report");
  c_eval->add_option("--confusion-csv", eval.confusion_csv);

  CvOptions cv;
  auto* c_cv = app.add_subcommand("cv", "k-fold cross-validation with an averaged learning curve");
  c_cv->add_option("--manifest", cv.manifest)->required();
  c_cv->add_option("--k", cv.k);
  c_cv->add_option("--base", cv.base);
  c_cv->add_option("--out", cv.out, "Averaged curve CSV")->required();
  c_cv->add_option("--reports-dir", cv.reports_dir, "Per-fold CSV reports");
  c_cv->add_option("--epochs", cv.config.epochs);
  c_cv->add_option("--lr", cv.config.learning_rate);
  c_cv->add_option("--batch-size", cv.config.batch_size);
  c_cv->add_option("--width-divisor", cv.config.width_divisor);
  c_cv->add_option("--seed", cv.config.seed);

  InferOptions inf;
  auto* c_infer = app.add_subcommand("infer", "Detect and classify one image");
  c_infer->add_option("--image", inf.image)->required();
  c_infer->add_option("--detector", inf.detector)->required();
  c_infer->add_option("--classifier", inf.classifier)->required();

  ServeOptions serve;
  auto* c_serve = app.add_subcommand("serve", "Run the HTTP service");
  c_serve->add_option("--manifest", serve.manifest)->required();
  c_serve->add_option("--models", serve.models, "Directory of model artifacts");
  c_serve->add_option("--host", serve.host);
  c_serve->add_option("--port", serve.port);
  c_serve->add_option("--detector-version", serve.detector_version);
  c_serve->add_option("--classifier-version", serve.classifier_version);
  c_serve->add_option("--max-upload-mb", serve.max_upload_mb);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(ErrorKind::usage);
  }

  try {
    if (*c_synth) run_synth(synth);
    if (*c_ingest) run_ingest(ingest);
    if (*c_split) run_split(split);
    if (*c_tdet) run_train_detector(tdet);
    if (*c_tcls) run_train_classifier(tcls);
    if (*c_eval) run_evaluate(eval);
    if (*c_cv) run_cv(cv);
    if (*c_infer) run_infer(inf);
    if (*c_serve) run_serve(serve);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
