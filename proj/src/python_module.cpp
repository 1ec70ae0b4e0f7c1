// SPDX-License-Identifier: Apache-2.0
//
// effortvae._core: numpy-facing wrappers over the C++ library. Sequences are
// (T, J, 3) float64 arrays; clips are (F, J, 3). Structured values (configs,
// loss reports) cross the boundary as JSON strings and are decoded in Python.
#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "effortvae/diff.hpp"
#include "effortvae/error.hpp"
#include "effortvae/label_store.hpp"
#include "effortvae/metrics.hpp"
#include "effortvae/model.hpp"
#include "effortvae/motion_data.hpp"
#include "effortvae/objective.hpp"
#include "effortvae/synth.hpp"

namespace py = pybind11;
using namespace effortvae;
using nlohmann::json;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::vector<Pose> poses_from(const Array& a, const char* what) {
    if (a.ndim() != 3 || a.shape(2) != 3) throw py::value_error(std::string(what) + " must have shape (n, J, 3)");
    const auto n = static_cast<std::size_t>(a.shape(0)), J = static_cast<std::size_t>(a.shape(1));
    auto r = a.unchecked<3>();
    std::vector<Pose> out(n);
    for (std::size_t t = 0; t < n; ++t) {
        out[t].joints.resize(J);
        for (std::size_t j = 0; j < J; ++j)
            for (int c = 0; c < 3; ++c) out[t].joints[j][static_cast<std::size_t>(c)] = r(t, j, c);
    }
    return out;
}

Array to_array(const std::vector<Pose>& poses) {
    const std::size_t n = poses.size(), J = n ? poses.front().joint_count() : 0;
    Array a({n, J, std::size_t{3}});
    auto w = a.mutable_unchecked<3>();
    for (std::size_t t = 0; t < n; ++t)
        for (std::size_t j = 0; j < J; ++j)
            for (int c = 0; c < 3; ++c) w(t, j, c) = poses[t].joints[j][static_cast<std::size_t>(c)];
    return a;
}

Sequence sequence_from(const Array& a) {
    Sequence s;
    s.poses = poses_from(a, "sequence");
    return s;
}

MotionClip clip_from(const std::string& id, const Array& a, double fps) {
    MotionClip c;
    c.id = id;
    c.fps = fps;
    c.frames = poses_from(a, "clip");
    c.validate();
    return c;
}

py::dict clip_dict(const MotionClip& c) {
    py::dict d;
    d["id"] = c.id;
    d["fps"] = c.fps;
    d["frames"] = to_array(c.frames);
    d["skeleton"] = c.skeleton;
    return d;
}

std::vector<MotionClip> clips_from(const py::dict& clips, double fps) {
    std::vector<MotionClip> out;
    for (const auto& [k, v] : clips) out.push_back(clip_from(py::cast<std::string>(k), py::cast<Array>(v), fps));
    return out;
}

ModelConfig config_from(const std::string& text) {
    ModelConfig c = ModelConfig::desk();
    if (!text.empty()) from_json(json::parse(text), c);
    c.validate();
    return c;
}

std::vector<LabeledExample> labeled_examples(const std::vector<Sequence>& xs, const std::vector<int>& ys) {
    if (xs.size() != ys.size()) throw py::value_error("labeled sequences and labels differ in length");
    std::vector<LabeledExample> out;
    for (std::size_t i = 0; i < xs.size(); ++i) out.push_back({&xs[i], ys[i]});
    return out;
}

std::vector<Sequence> sequences_from(const std::vector<Array>& arrays) {
    std::vector<Sequence> out;
    for (const auto& a : arrays) out.push_back(sequence_from(a));
    return out;
}

std::vector<const Sequence*> pointers(const std::vector<Sequence>& xs) {
    std::vector<const Sequence*> out;
    for (const auto& x : xs) out.push_back(&x);
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Semi-supervised conditional motion VAE (C++ core)";

    // Translators run most-recent first, so the base class goes in first.
    py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<PreconditionError>(m, "PreconditionError", PyExc_ValueError);
    py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

    m.def(
        "synth_dataset",
        [](std::size_t clips, std::size_t frames, std::size_t joints, int classes, std::uint64_t seed) {
            SynthOptions o;
            o.clips = clips;
            o.frames_per_clip = frames;
            o.joints = joints;
            o.classes = classes;
            o.seed = seed;
            const SynthDataset d = synth_dataset(o);
            py::list out;
            for (const auto& c : d.clips) out.append(clip_dict(c));
            py::dict r;
            r["clips"] = out;
            r["frame_classes"] = d.frame_classes;
            r["class_frequencies"] = d.class_frequencies;
            return r;
        },
        py::arg("clips") = 6, py::arg("frames") = 2000, py::arg("joints") = 5, py::arg("classes") = 3,
        py::arg("seed") = 0);

    m.def(
        "normalize",
        [](const py::dict& clips, const std::string& barycenter) {
            const auto raw = clips_from(clips, 35.0);
            auto [norm, spec] = normalize(std::span<const MotionClip>(raw), barycenter_mode_from_string(barycenter));
            py::dict out;
            for (const auto& c : norm) out[py::str(c.id)] = to_array(c.frames);
            return py::make_tuple(out, spec.scale, spec.offset);
        },
        py::arg("clips"), py::arg("barycenter") = "fixed-xy", "Normalize {id: (F, J, 3)} clips into the unit box.");

    m.def(
        "windows",
        [](const Array& clip, std::size_t window, std::size_t stride) {
            const MotionClip c = clip_from("clip", clip, 35.0);
            py::list out;
            for (const auto& s : extract_windows(std::span<const MotionClip>(&c, 1), window, stride))
                out.append(to_array(s.poses));
            return out;
        },
        py::arg("clip"), py::arg("window"), py::arg("stride") = 1);

    m.def(
        "augment",
        [](const std::vector<std::tuple<std::string, std::size_t, int>>& manual, const std::map<std::string, std::size_t>& frames,
           std::size_t window, std::size_t stride, int classes, std::size_t radius) {
            std::vector<MotionClip> clips;
            for (const auto& [id, n] : frames) {
                MotionClip c;
                c.id = id;
                c.frames.assign(n, Pose{{Vec3{0, 0, 0}}});
                clips.push_back(std::move(c));
            }
            const WindowIndex index(clips, window, stride);
            LabelTable t(classes, window);
            for (const auto& [id, start, y] : manual) t = save_label(t, {id, start, window, y, LabelSource::Manual, {}});
            const LabelTable out = augment_dilate(augment_between(t, index), index, radius);
            std::vector<std::tuple<std::string, std::size_t, int, std::string>> rows;
            for (const auto& [k, r] : out.records()) rows.emplace_back(r.clip_id, r.start_frame, r.label, to_string(r.source));
            return rows;
        },
        py::arg("manual"), py::arg("frames"), py::arg("window"), py::arg("stride") = 1, py::arg("classes") = 3,
        py::arg("radius") = 6, "Between-fill then dilation; returns (clip, start, label, source) rows.");

    m.def(
        "ajd", [](const Array& a, const Array& b) { return ajd(sequence_from(a), sequence_from(b)); }, py::arg("a"),
        py::arg("b"));
    m.def(
        "dominant_frequency", [](const Array& x) { return dominant_frequency(sequence_from(x)); }, py::arg("sequence"));
    m.def(
        "kl_gaussian",
        [](const Eigen::VectorXd& mean, const Eigen::VectorXd& log_variance) {
            return kl_gaussian(GaussianPosterior{mean, log_variance});
        },
        py::arg("mean"), py::arg("log_variance"));

    py::class_<Model>(m, "Model")
        .def(py::init([](const std::string& config, std::uint64_t seed) { return Model(config_from(config), seed); }),
             py::arg("config") = "", py::arg("seed") = 0)
        .def_property_readonly("config", [](const Model& self) { return json(self.config()).dump(); })
        .def_property_readonly("parameter_count", [](const Model& self) { return self.params().total_values(); })
        .def(
            "encode",
            [](const Model& self, const Array& x, int y) {
                const GaussianPosterior g = self.encode(sequence_from(x), y);
                return py::make_tuple(g.mean, g.log_variance);
            },
            py::arg("x"), py::arg("y"))
        .def(
            "classify",
            [](const Model& self, const Array& x) { return Eigen::VectorXd(self.classify(sequence_from(x)).probabilities); },
            py::arg("x"))
        .def(
            "decode", [](const Model& self, const Eigen::VectorXd& z, int y) { return to_array(self.decode(z, y).poses); },
            py::arg("z"), py::arg("y"))
        .def(
            "total_loss",
            [](const Model& self, const std::vector<Array>& labeled, const std::vector<int>& labels,
               const std::vector<Array>& unlabeled, double alpha, std::uint64_t seed) {
                const auto lx = sequences_from(labeled), ux = sequences_from(unlabeled);
                const auto ex = labeled_examples(lx, labels);
                const auto up = pointers(ux);
                RngStream rng(seed);
                return json(total_loss(self, ex, up, alpha, rng)).dump();
            },
            py::arg("labeled"), py::arg("labels"), py::arg("unlabeled"), py::arg("alpha"), py::arg("seed") = 0)
        .def(
            "grad_check",
            [](Model& self, const std::vector<Array>& labeled, const std::vector<int>& labels,
               const std::vector<Array>& unlabeled, double alpha, std::uint64_t seed) {
                const auto lx = sequences_from(labeled), ux = sequences_from(unlabeled);
                const auto ex = labeled_examples(lx, labels);
                const auto up = pointers(ux);
                RngStream rng(seed);
                const LossNoise noise = LossNoise::draw(self.config(), ex.size(), up.size(), rng);
                const diff::Objective f = [&](diff::Tape& tape) {
                    Model::Binder bind(tape, self.params());
                    return build_total_loss(bind, self, ex, up, alpha, noise).total;
                };
                diff::GradCheckOptions opts;
                opts.max_entries = 16;
                opts.seed = seed;
                return diff::grad_check(f, self.params(), opts).max_rel_error;
            },
            py::arg("labeled"), py::arg("labels"), py::arg("unlabeled"), py::arg("alpha") = 0.1,
            py::arg("seed") = 0, "Max relative error of the analytic total-loss gradient vs central differences.");
}
