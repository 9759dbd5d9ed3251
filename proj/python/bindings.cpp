// Python entry points: dataset generation, training, evaluation, sweeps and a few
// array-level helpers (FFT, Fourier swap, CutMix, mIoU) on numpy arrays.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <optional>
#include <string>

#include "pixmatch/config.hpp"
#include "pixmatch/data.hpp"
#include "pixmatch/errors.hpp"
#include "pixmatch/fft.hpp"
#include "pixmatch/metrics.hpp"
#include "pixmatch/perturb.hpp"
#include "pixmatch/trainer.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace pixmatch;

namespace {

using ImageArray = py::array_t<double, py::array::c_style | py::array::forcecast>;
using LabelArray = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

Image to_image(const ImageArray& a) {
  if (a.ndim() != 3 || a.shape(0) != 3) throw ShapeError("expected an image array of shape (3, H, W)");
  Image im(static_cast<std::size_t>(a.shape(1)), static_cast<std::size_t>(a.shape(2)));
  std::copy(a.data(), a.data() + a.size(), im.data.begin());
  return im;
}

ImageArray from_image(const Image& im) {
  ImageArray a({std::size_t{3}, im.height, im.width});
  std::copy(im.data.begin(), im.data.end(), a.mutable_data());
  return a;
}

LabelMap to_labels(const LabelArray& a) {
  if (a.ndim() != 2) throw ShapeError("expected a label array of shape (H, W)");
  LabelMap m(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
  std::copy(a.data(), a.data() + a.size(), m.data.begin());
  return m;
}

LabelArray from_labels(const LabelMap& m) {
  LabelArray a({m.height, m.width});
  std::copy(m.data.begin(), m.data.end(), a.mutable_data());
  return a;
}

py::array_t<std::complex<double>> from_spectrum(const Spectrum& s) {
  py::array_t<std::complex<double>> a({s.height, s.width});
  std::copy(s.data.begin(), s.data.end(), a.mutable_data());
  return a;
}

py::dict report_dict(const IoUReport& r) {
  py::dict d;
  d["miou"] = r.miou;
  py::list per_class;
  for (const auto& v : r.per_class) per_class.append(v ? py::object(py::float_(*v)) : py::none());
  d["per_class"] = per_class;
  return d;
}

TrainConfig load_with_overrides(const fs::path& path, std::optional<std::uint64_t> seed,
                                const std::optional<fs::path>& out) {
  auto cfg = load_train_config(path);
  if (seed) cfg.seed = *seed;
  cfg.model.init_seed = cfg.seed;
  if (out) cfg.out_dir = *out;
  cfg.validate();
  return cfg;
}

}  // namespace

PYBIND11_MODULE(pixmatch, m) {
  m.doc() = "Pixel-level consistency training for domain-adaptive segmentation";

  static py::exception<Error> base(m, "Error", PyExc_RuntimeError);
  static py::exception<ShapeError> shape(m, "ShapeError", base.ptr());
  static py::exception<DomainError> domain(m, "DomainError", base.ptr());
  static py::exception<IoError> io(m, "IoError", base.ptr());
  static py::exception<ValidationError> validation(m, "ValidationError", base.ptr());
  static py::exception<ConfigError> config(m, "ConfigError", base.ptr());
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const ShapeError& e) {
      py::set_error(shape, e.what());
    } catch (const DomainError& e) {
      py::set_error(domain, e.what());
    } catch (const IoError& e) {
      py::set_error(io, e.what());
    } catch (const ValidationError& e) {
      py::set_error(validation, e.what());
    } catch (const ConfigError& e) {
      py::set_error(config, e.what());
    } catch (const Error& e) {
      py::set_error(base, e.what());
    }
  });

  m.def(
      "generate_data",
      [](const fs::path& out, std::uint64_t seed, std::size_t n_source, std::size_t n_target,
         std::size_t image_size, std::size_t num_classes, bool identity_gap, double gap_strength) {
        SceneSpec spec;
        spec.image_size = image_size;
        spec.num_classes = num_classes;
        spec.seed = seed;
        const auto gap = identity_gap ? DomainGap::identity(num_classes) : DomainGap::default_gap(num_classes, gap_strength);
        {
          py::gil_scoped_release release;
          generate_pair_dataset(spec, gap, n_source, n_target, out);
        }
        return py::make_tuple(out / "source.manifest", out / "target.manifest");
      },
      "Renders a source/target dataset pair and returns the two manifest paths.", py::arg("out"),
      py::arg("seed") = 0, py::arg("n_source") = 200, py::arg("n_target") = 200, py::arg("image_size") = 64,
      py::arg("num_classes") = 5, py::arg("identity_gap") = false, py::arg("gap_strength") = 1.0);

  m.def(
      "train",
      [](const fs::path& config, std::optional<std::uint64_t> seed, std::optional<fs::path> out) {
        const auto cfg = load_with_overrides(config, seed, out);
        RunRecord rec;
        {
          py::gil_scoped_release release;
          rec = train(cfg);
        }
        py::dict d;
        d["out_dir"] = cfg.out_dir;
        d["best_miou"] = rec.best_miou;
        d["best_iter"] = rec.best_iter;
        d["final_miou"] = rec.evals.back().report.miou;
        py::list evals;
        for (const auto& e : rec.evals) evals.append(py::make_tuple(e.iter, e.report.miou));
        d["evals"] = evals;
        return d;
      },
      "Trains from a config file; writes checkpoints and logs into the run directory.", py::arg("config"),
      py::arg("seed") = py::none(), py::arg("out") = py::none());

  m.def(
      "evaluate",
      [](const fs::path& checkpoint, const fs::path& manifest) {
        IoUReport r;
        {
          py::gil_scoped_release release;
          r = evaluate_manifest(SegModel::load(checkpoint), manifest);
        }
        return report_dict(r);
      },
      "Per-class IoU and mIoU of a checkpoint on a manifest.", py::arg("checkpoint"), py::arg("manifest"));

  m.def(
      "sweep",
      [](const fs::path& config, const std::string& axis, const std::vector<double>& values,
         std::optional<fs::path> out, std::optional<std::uint64_t> seed) {
        const auto cfg = load_with_overrides(config, seed, std::nullopt);
        const auto ax = parse_sweep_axis(axis);
        py::gil_scoped_release release;
        return sweep(cfg, ax, values, out.value_or(cfg.out_dir)).to_csv();
      },
      "Trains once per value of the axis and returns the CSV table.", py::arg("config"), py::arg("axis"),
      py::arg("values"), py::arg("out") = py::none(), py::arg("seed") = py::none());

  m.def(
      "fft2",
      [](py::array_t<double, py::array::c_style | py::array::forcecast> x) {
        if (x.ndim() != 2) throw ShapeError("fft2 expects a 2-D array");
        return from_spectrum(fft2(std::span(x.data(), static_cast<std::size_t>(x.size())),
                                  static_cast<std::size_t>(x.shape(0)), static_cast<std::size_t>(x.shape(1))));
      },
      "Unnormalised forward 2-D DFT of a real array.", py::arg("x"));

  m.def(
      "ifft2",
      [](py::array_t<std::complex<double>, py::array::c_style | py::array::forcecast> x) {
        if (x.ndim() != 2) throw ShapeError("ifft2 expects a 2-D array");
        Spectrum s{static_cast<std::size_t>(x.shape(0)), static_cast<std::size_t>(x.shape(1)),
                   std::vector<Complex>(x.data(), x.data() + x.size())};
        return from_spectrum(ifft2(std::move(s)));
      },
      "Inverse 2-D DFT including the 1/(H*W) factor.", py::arg("x"));

  m.def(
      "fourier_swap",
      [](const ImageArray& target, const ImageArray& source, double beta) {
        const auto t = to_image(target);
        return from_image(perturb_fourier(t, LabelMap(t.height, t.width), to_image(source), FourierConfig{beta}).image);
      },
      "Replaces the low-frequency amplitude of `target` with that of `source`.", py::arg("target"),
      py::arg("source"), py::arg("beta") = 0.01);

  m.def(
      "cutmix",
      [](const ImageArray& x_t, const LabelArray& y_t, const ImageArray& x_s, const LabelArray& y_s,
         double ratio_min, double ratio_max, std::uint64_t seed) {
        Rng rng(seed);
        const auto r = perturb_cutmix(to_image(x_t), to_labels(y_t), to_image(x_s), to_labels(y_s),
                                      CutMixConfig{ratio_min, ratio_max}, rng);
        return py::make_tuple(from_image(r.image), from_labels(r.label));
      },
      "Pastes a random box of the source pair into the target pair.", py::arg("x_t"), py::arg("y_t"), py::arg("x_s"),
      py::arg("y_s"), py::arg("ratio_min") = 0.1, py::arg("ratio_max") = 0.5, py::arg("seed") = 0);

  m.def(
      "miou",
      [](const LabelArray& pred, const LabelArray& truth, std::size_t num_classes) {
        ConfusionMatrix cm(num_classes);
        cm.accumulate(to_labels(pred), to_labels(truth));
        return report_dict(compute_iou(cm));
      },
      "IoU of a prediction against ground truth; 255 in `truth` is ignored.", py::arg("pred"), py::arg("truth"),
      py::arg("num_classes"));

  m.attr("IGNORE_LABEL") = kIgnoreLabel;
}
