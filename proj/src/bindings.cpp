#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "sslv/core.hpp"
#include "sslv/data.hpp"
#include "sslv/dist.hpp"
#include "sslv/encore.hpp"
#include "sslv/experiment.hpp"
#include "sslv/sampling.hpp"
#include "sslv/semivt.hpp"

namespace py = pybind11;
using namespace sslv;

namespace {

core::SegPrediction seg_prediction_from_array(
    const py::array_t<double, py::array::c_style | py::array::forcecast>& probs) {
  if (probs.ndim() != 3)
    throw InvalidInput("probs must have shape [num_classes, H, W]");
  const int c = static_cast<int>(probs.shape(0));
  const int h = static_cast<int>(probs.shape(1));
  const int w = static_cast<int>(probs.shape(2));
  std::vector<double> flat(probs.data(), probs.data() + probs.size());
  return core::SegPrediction::from_probs(c, h, w, std::move(flat));
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Semi-supervised surgical-video learning primitives";

  py::register_exception<InvalidInput>(m, "InvalidInputError", PyExc_ValueError);
  py::register_exception<IntegrityError>(m, "IntegrityError", PyExc_IOError);
  py::register_exception<ParseError>(m, "ConfigParseError", PyExc_ValueError);

  // --- core ---
  m.def("softmax", [](const std::vector<double>& logits) {
    return core::softmax(logits);
  });
  m.def("argmax_class", [](const std::vector<double>& probs) {
    return core::argmax_class(probs);
  });
  m.def("dice_score", [](const std::vector<int>& pred, const std::vector<int>& gt,
                         int class_id) {
    return core::dice_score(pred, gt, class_id);
  });
  m.def(
      "classification_metrics",
      [](const std::vector<int>& preds, const std::vector<int>& gts,
         int num_classes) {
        const auto r = core::classification_metrics(
            preds, gts, core::LabelSpace::indexed(num_classes));
        py::dict out;
        out["accuracy"] = r.accuracy;
        out["macro_f1"] = r.macro_f1;
        out["per_class_f1"] = r.per_class_f1;
        return out;
      },
      py::arg("preds"), py::arg("gts"), py::arg("num_classes"));
  m.def("percentile", [](std::vector<double> values, double q) {
    return core::percentile(std::move(values), q);
  });

  // --- sampling (seeded wrappers; each call owns its generator) ---
  m.def("uniform_sample", &sampling::uniform_sample, py::arg("clip_length"),
        py::arg("count"));
  m.def(
      "segment_random_sample",
      [](int t, int k, uint64_t seed) {
        rng::Xoshiro256ss gen(seed);
        return sampling::segment_random_sample(t, k, gen);
      },
      py::arg("clip_length"), py::arg("count"), py::arg("seed"));
  m.def(
      "dual_temporal_views",
      [](int t, int k, uint64_t seed) {
        rng::Xoshiro256ss gen(seed);
        return sampling::dual_temporal_views(t, k, gen);
      },
      py::arg("clip_length"), py::arg("count"), py::arg("seed"));
  m.def(
      "long_short_sample",
      [](int t, int k, int w, uint64_t seed) {
        rng::Xoshiro256ss gen(seed);
        return sampling::long_short_sample(t, k, w, gen);
      },
      py::arg("clip_length"), py::arg("count"), py::arg("short_window"),
      py::arg("seed"));

  // --- dist ---
  m.def(
      "reliability_score",
      [](double p_third, double p_two_thirds, const std::vector<double>& p_final) {
        return dist::reliability_score(
            dist::CheckpointTriple::make(p_third, p_two_thirds, p_final));
      },
      py::arg("p_third"), py::arg("p_two_thirds"), py::arg("p_final_vec"));
  m.def("retain_top_half",
        [](const std::vector<std::pair<std::string, double>>& scored) {
          return dist::retain_top_half(scored);
        });

  // --- semivt ---
  py::class_<semivt::PrototypeStore>(m, "PrototypeStore")
      .def(py::init<int, int, double>(), py::arg("num_classes"), py::arg("dim"),
           py::arg("momentum"))
      .def("update",
           [](semivt::PrototypeStore& store, int cls,
              const std::vector<double>& e) { store.update(cls, e); })
      .def("prototype",
           [](const semivt::PrototypeStore& store, int cls) {
             const auto row = store.prototype(cls);
             return std::vector<double>(row.begin(), row.end());
           })
      .def("initialized", &semivt::PrototypeStore::initialized)
      .def("hard_negative",
           [](const semivt::PrototypeStore& store, const std::vector<double>& e,
              int true_class) -> py::object {
             const auto neg = store.hard_negative(e, true_class);
             return neg.has_value() ? py::cast(*neg) : py::none();
           });
  m.def("clp_triplet_loss",
        [](const std::vector<double>& e, const std::vector<double>& pos,
           const std::vector<double>& neg, double margin) {
          return semivt::clp_triplet_loss(e, pos, neg, margin);
        });
  m.def("tcr_loss", [](const std::vector<double>& teacher,
                       const std::vector<double>& student, double tau) {
    return semivt::tcr_loss(teacher, student, tau);
  });

  // --- encore ---
  m.def(
      "cac_thresholds",
      [](const std::vector<std::vector<double>>& tp, double q, double fallback) {
        return encore::cac_thresholds(tp, q, fallback).per_class_threshold;
      },
      py::arg("tp_confidences"), py::arg("percentile_q"), py::arg("fallback_t0"));
  m.def(
      "generate_pseudo_mask",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>&
             probs,
         const std::vector<double>& thresholds) {
        const auto pred = seg_prediction_from_array(probs);
        encore::ThresholdProfile profile;
        profile.per_class_threshold = thresholds;
        const auto pm = encore::generate_pseudo_mask(pred, profile);
        py::array_t<int> mask(
            {static_cast<py::ssize_t>(pred.h), static_cast<py::ssize_t>(pred.w)},
            pm.mask.data());
        return py::make_tuple(mask, pm.accepted_pixel_fraction);
      },
      py::arg("probs"), py::arg("thresholds"));
  m.attr("IGNORE") = encore::kIgnore;

  // --- data ---
  m.def(
      "generate_clip_dataset",
      [](int num_classes, int clips_per_class, int frames, int height, int width,
         double noise_sigma, uint64_t seed) {
        data::SyntheticClipSpec spec;
        spec.num_classes = num_classes;
        spec.clips_per_class = clips_per_class;
        spec.frames = frames;
        spec.height = height;
        spec.width = width;
        spec.noise_sigma = noise_sigma;
        spec.seed = seed;
        const auto dataset = data::generate_clip_dataset(spec);
        const auto n = static_cast<py::ssize_t>(dataset.clips.size());
        std::vector<float> flat;
        std::vector<int> label_values;
        flat.reserve(static_cast<size_t>(n) * frames * height * width * 3);
        for (const auto& clip : dataset.clips) {
          flat.insert(flat.end(), clip.frames.values.begin(),
                      clip.frames.values.end());
          label_values.push_back(clip.label.value());
        }
        py::array_t<float> clips({n, static_cast<py::ssize_t>(frames),
                                  static_cast<py::ssize_t>(height),
                                  static_cast<py::ssize_t>(width),
                                  static_cast<py::ssize_t>(3)},
                                 flat.data());
        py::array_t<int> labels(n, label_values.data());
        return py::make_tuple(clips, labels);
      },
      py::arg("num_classes") = 4, py::arg("clips_per_class") = 32,
      py::arg("frames") = 24, py::arg("height") = 32, py::arg("width") = 32,
      py::arg("noise_sigma") = 0.08, py::arg("seed") = 1);
  m.def(
      "generate_seg_dataset",
      [](int num_images, int height, int width, double noise_sigma,
         uint64_t seed) {
        data::SyntheticSegSpec spec;
        spec.num_images = num_images;
        spec.height = height;
        spec.width = width;
        spec.noise_sigma = noise_sigma;
        spec.seed = seed;
        const auto dataset = data::generate_seg_dataset(spec);
        const auto n = static_cast<py::ssize_t>(dataset.samples.size());
        std::vector<float> flat_images;
        std::vector<int> flat_masks;
        for (const auto& sample : dataset.samples) {
          flat_images.insert(flat_images.end(), sample.image.values.begin(),
                             sample.image.values.end());
          flat_masks.insert(flat_masks.end(), sample.mask.begin(),
                            sample.mask.end());
        }
        py::array_t<float> images({n, static_cast<py::ssize_t>(height),
                                   static_cast<py::ssize_t>(width),
                                   static_cast<py::ssize_t>(3)},
                                  flat_images.data());
        py::array_t<int> masks({n, static_cast<py::ssize_t>(height),
                                static_cast<py::ssize_t>(width)},
                               flat_masks.data());
        return py::make_tuple(images, masks);
      },
      py::arg("num_images") = 64, py::arg("height") = 32, py::arg("width") = 32,
      py::arg("noise_sigma") = 0.05, py::arg("seed") = 1);

  // --- experiments ---
  m.def(
      "run_experiment",
      [](const std::string& config_path, const std::string& out_dir) {
        auto cfg = cli::parse_config_file(config_path);
        if (!out_dir.empty()) cfg.output_dir = out_dir;
        const auto summary = cli::run_experiment(cfg);
        if (!summary.all_ok()) {
          for (const auto& outcome : summary.outcomes)
            if (!outcome.ok) throw std::runtime_error(outcome.error);
        }
        return summary.aggregate_csv_path;
      },
      py::arg("config_path"), py::arg("out_dir") = "");
}
