// pybind11 module. Images cross the boundary as H x W x C float32 arrays,
// masks as H x W uint8, configs and reports as JSON text.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "forgeseg/checkpoint.hpp"
#include "forgeseg/config.hpp"
#include "forgeseg/corpus.hpp"
#include "forgeseg/errors.hpp"
#include "forgeseg/forge.hpp"
#include "forgeseg/metrics.hpp"
#include "forgeseg/objective.hpp"
#include "forgeseg/trainer.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace forgeseg;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;
using ByteArray = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;
using IntArray = py::array_t<int, py::array::c_style | py::array::forcecast>;

Image image_from_array(const FloatArray& a) {
  if (a.ndim() != 2 && a.ndim() != 3) throw DimensionError("image must be H x W or H x W x C");
  const int h = static_cast<int>(a.shape(0)), w = static_cast<int>(a.shape(1));
  const int c = a.ndim() == 3 ? static_cast<int>(a.shape(2)) : 1;
  Image img = make_image(h, w, c);
  const float* src = a.data();
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      for (int k = 0; k < c; ++k) img.at(0, k, i, j) = src[(static_cast<std::size_t>(i) * w + j) * c + k];
  return img;
}

FloatArray image_to_array(const Image& img) {
  const Shape s = img.shape();
  FloatArray out({s.h, s.w, s.c});
  float* dst = out.mutable_data();
  for (int i = 0; i < s.h; ++i)
    for (int j = 0; j < s.w; ++j)
      for (int k = 0; k < s.c; ++k) dst[(static_cast<std::size_t>(i) * s.w + j) * s.c + k] = img.at(0, k, i, j);
  return out;
}

ManipulationMask mask_from_array(const ByteArray& a) {
  if (a.ndim() != 2) throw DimensionError("mask must be H x W");
  const int h = static_cast<int>(a.shape(0)), w = static_cast<int>(a.shape(1));
  return ManipulationMask(h, w, std::vector<std::uint8_t>(a.data(), a.data() + a.size()));
}

ByteArray mask_to_array(const ManipulationMask& m) {
  ByteArray out({m.height(), m.width()});
  std::copy(m.values().begin(), m.values().end(), out.mutable_data());
  return out;
}

// N x H x W (or H x W) array as an N x 1 x H x W tensor.
Tensor<double> maps_from_array(const DoubleArray& a) {
  if (a.ndim() != 2 && a.ndim() != 3) throw DimensionError("maps must be H x W or N x H x W");
  const int n = a.ndim() == 3 ? static_cast<int>(a.shape(0)) : 1;
  const int h = static_cast<int>(a.shape(a.ndim() - 2)), w = static_cast<int>(a.shape(a.ndim() - 1));
  return Tensor<double>({n, 1, h, w}, std::vector<double>(a.data(), a.data() + a.size()));
}

RegionDescriptor region_from_dict(const py::dict& d) {
  const std::string kind = py::str(d["shape"]);
  const double jitter = d.contains("jitter") ? d["jitter"].cast<double>() : 0.0;
  if (kind == "ellipse")
    return {Ellipse{d["cx"].cast<double>(), d["cy"].cast<double>(), d["rx"].cast<double>(),
                    d["ry"].cast<double>()},
            jitter};
  if (kind == "rect" || kind == "rectangle")
    return {Rect{d["x"].cast<double>(), d["y"].cast<double>(), d["w"].cast<double>(), d["h"].cast<double>()},
            jitter};
  if (kind == "polygon")
    return {Polygon{d["points"].cast<std::vector<std::pair<double, double>>>()}, jitter};
  throw ValidationError("region shape must be ellipse, rect or polygon, got '" + kind + "'");
}

std::string report_json(const MetricsReport& r) { return r.to_json().dump(); }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "forgeseg native core";

  auto base = py::register_exception<Error>(m, "Error");
  py::register_exception<DimensionError>(m, "DimensionError", base.ptr());
  py::register_exception<ValidationError>(m, "ValidationError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());
  py::register_exception<IntegrityError>(m, "IntegrityError", base.ptr());
  py::register_exception<CapabilityError>(m, "CapabilityError", base.ptr());
  py::register_exception<NumericalError>(m, "NumericalError", base.ptr());
  py::register_exception<DependencyError>(m, "DependencyError", base.ptr());

  // data
  m.def("composite", [](const FloatArray& generated, const FloatArray& target, const ByteArray& mask) {
    return image_to_array(composite(image_from_array(generated), image_from_array(target), mask_from_array(mask)));
  }, py::arg("generated"), py::arg("target"), py::arg("mask"));

  m.def("enlarge_box", [](std::tuple<int, int, int, int> box, double factor, int bounds_h, int bounds_w) {
    const auto [x, y, w, h] = box;
    const BoundingBox b = enlarge_box({x, y, w, h}, factor, bounds_h, bounds_w);
    return std::make_tuple(b.x, b.y, b.w, b.h);
  }, py::arg("box"), py::arg("factor"), py::arg("bounds_h"), py::arg("bounds_w"));

  m.def("synth_component_mask", [](int h, int w, const std::vector<py::dict>& regions, std::uint64_t seed) {
    std::vector<RegionDescriptor> rs;
    for (const auto& d : regions) rs.push_back(region_from_dict(d));
    return mask_to_array(synth_component_mask(h, w, rs, seed));
  }, py::arg("h"), py::arg("w"), py::arg("regions"), py::arg("seed") = 0);

  m.def("synthesize_corpus", [](const std::string& data_json, std::uint64_t seed, const fs::path& out_dir) {
    const CorpusConfig c = corpus_config_from_json(nlohmann::json::parse(data_json));
    const DatasetManifest man = build_desk_corpus(c, seed, out_dir);
    return man.records.size();
  }, py::arg("data_json"), py::arg("seed"), py::arg("out_dir"));

  // objective
  m.def("seg_loss", [](const DoubleArray& S, const DoubleArray& M) {
    return seg_loss(maps_from_array(S), maps_from_array(M));
  }, py::arg("S"), py::arg("M"));
  m.def("det_loss", [](const DoubleArray& p, const IntArray& y) {
    return det_loss<double>(std::span<const double>(p.data(), p.size()), std::span<const int>(y.data(), y.size()));
  }, py::arg("p"), py::arg("y"));
  m.def("total_loss", [](double l_det, double l_seg, double w_det, double w_seg) {
    return total_loss(l_det, l_seg, {w_det, w_seg});
  }, py::arg("l_det"), py::arg("l_seg"), py::arg("w_det") = 1.0, py::arg("w_seg") = 1.0);

  // metrics
  m.def("binarize", [](const DoubleArray& S, double threshold) {
    if (S.ndim() != 2) throw DimensionError("binarize expects an H x W map");
    return mask_to_array(binarize<double>(std::span<const double>(S.data(), S.size()),
                                          static_cast<int>(S.shape(0)), static_cast<int>(S.shape(1)),
                                          threshold));
  }, py::arg("S"), py::arg("threshold") = 0.5);
  m.def("iou", [](const ByteArray& pred, const ByteArray& gt) {
    return iou(mask_from_array(pred), mask_from_array(gt));
  }, py::arg("pred"), py::arg("gt"));
  m.def("accuracy", [](const DoubleArray& p, const IntArray& y, double threshold) {
    return accuracy<double>(std::span<const double>(p.data(), p.size()),
                            std::span<const int>(y.data(), y.size()), threshold);
  }, py::arg("p"), py::arg("y"), py::arg("threshold") = 0.5);

  // config and pipeline
  m.def("load_config", [](const fs::path& path, bool use_env) { return dump_config(load_config(path, use_env)); },
        py::arg("path"), py::arg("use_env") = true);
  m.def("resolve_config", [](const std::string& config_json) {
    return dump_config(run_config_from_json(nlohmann::json::parse(config_json)));
  }, py::arg("config_json"));

  m.def("run_pipeline", [](const std::string& config_json, const std::string& stages, const fs::path& run_dir,
                           std::optional<fs::path> checkpoint) {
    const RunConfig cfg = run_config_from_json(nlohmann::json::parse(config_json));
    PipelineOptions opts;
    opts.quiet = true;
    opts.checkpoint = checkpoint;
    PipelineResult r;
    {
      py::gil_scoped_release release;
      r = run_pipeline(cfg, parse_stages(stages), run_dir, opts);
    }
    nlohmann::ordered_json j;
    j["run_dir"] = r.run_dir.string();
    j["manifest"] = r.manifest.string();
    j["checkpoint"] = r.checkpoint.string();
    j["report"] = r.report ? r.report->to_json() : nlohmann::ordered_json(nullptr);
    j["cam_hit_rate"] = r.cam_hit_rate ? nlohmann::ordered_json(*r.cam_hit_rate) : nlohmann::ordered_json(nullptr);
    return j.dump();
  }, py::arg("config_json"), py::arg("stages"), py::arg("run_dir"), py::arg("checkpoint") = std::nullopt);

  m.def("train", [](const std::string& config_json, const fs::path& manifest, const fs::path& out_dir) {
    const RunConfig cfg = run_config_from_json(nlohmann::json::parse(config_json));
    const DatasetManifest man = read_manifest(manifest);
    const auto tr = load_samples(man, manifest.parent_path(), Split::kTrain);
    const auto va = load_samples(man, manifest.parent_path(), Split::kVal);
    Model<float> model(cfg.model, stage_seed(cfg.seed, "model"));
    Trainer trainer(model, cfg.train);
    TrainResult r;
    {
      py::gil_scoped_release release;
      r = trainer.run(tr, va, out_dir, cfg.eval.options());
    }
    nlohmann::ordered_json j;
    j["checkpoint"] = r.last_checkpoint.string();
    j["log"] = nlohmann::ordered_json::array();
    for (const auto& rec : r.log) j["log"].push_back(rec.to_json());
    return j.dump();
  }, py::arg("config_json"), py::arg("manifest"), py::arg("out_dir"));

  m.def("evaluate", [](const fs::path& checkpoint, const fs::path& manifest, const std::string& split,
                       double threshold_det, double threshold_seg) {
    Checkpoint ck = load_checkpoint(checkpoint);
    const DatasetManifest man = read_manifest(manifest);
    std::optional<Split> s;
    if (split == "auto") s = evaluation_split(man);
    else if (split != "all") s = split_from_string(split);
    const auto samples = load_samples(man, manifest.parent_path(), s);
    EvalOptions o;
    o.threshold_det = threshold_det;
    o.threshold_seg = threshold_seg;
    return report_json(evaluate(ck.model, samples, o));
  }, py::arg("checkpoint"), py::arg("manifest"), py::arg("split") = "auto", py::arg("threshold_det") = 0.5,
     py::arg("threshold_seg") = 0.5);

  m.def("compare_runs", [](const std::vector<std::string>& reports, const std::vector<std::string>& labels) {
    std::vector<MetricsReport> rs;
    for (const auto& r : reports) rs.push_back(MetricsReport::from_json(nlohmann::json::parse(r)));
    const ComparisonTable t = compare_runs(rs, labels);
    return std::make_pair(t.text, t.json.dump());
  }, py::arg("reports"), py::arg("labels"));

  m.def("cam", [](const fs::path& checkpoint, const FloatArray& image) {
    Checkpoint ck = load_checkpoint(checkpoint);
    const CamMap c = cam(ck.model, image_from_array(image));
    DoubleArray out({c.h, c.w});
    std::copy(c.values.begin(), c.values.end(), out.mutable_data());
    return std::make_pair(out, c.degenerate);
  }, py::arg("checkpoint"), py::arg("image"));

  m.def("read_png", [](const fs::path& path) { return image_to_array(read_png(path)); }, py::arg("path"));
  m.def("read_mask_png", [](const fs::path& path) { return mask_to_array(read_mask_png(path)); }, py::arg("path"));
}
