// Python bindings for the incremental keypoint-learning core.  The module
// mirrors the C++ surface at the granularity a notebook or smoke test wants:
// numpy in/out for tensors, plain dicts for configs and record rows, and the
// same driver / harness entry points the CLI uses.

#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstdint>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "kamp/checkpoint.hpp"
#include "kamp/harness.hpp"
#include "kamp/heatmap.hpp"
#include "kamp/kanet.hpp"
#include "kamp/losses.hpp"
#include "kamp/metrics.hpp"
#include "kamp/model.hpp"
#include "kamp/rng.hpp"
#include "kamp/synthdata.hpp"
#include "kamp/taskcreate.hpp"
#include "kamp/trainer.hpp"

namespace py = pybind11;
using nlohmann::json;
using namespace kamp;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

// ---- json <-> python ----

py::object json_to_py(const json& j) {
  switch (j.type()) {
    case json::value_t::null:
      return py::none();
    case json::value_t::boolean:
      return py::bool_(j.get<bool>());
    case json::value_t::number_integer:
      return py::int_(j.get<int64_t>());
    case json::value_t::number_unsigned:
      return py::int_(j.get<uint64_t>());
    case json::value_t::number_float:
      return py::float_(j.get<double>());
    case json::value_t::string:
      return py::str(j.get<std::string>());
    case json::value_t::array: {
      py::list out;
      for (const auto& e : j) out.append(json_to_py(e));
      return out;
    }
    case json::value_t::object: {
      py::dict out;
      for (auto it = j.begin(); it != j.end(); ++it)
        out[py::str(it.key())] = json_to_py(it.value());
      return out;
    }
    default:
      throw std::invalid_argument("unsupported json value type");
  }
}

json py_to_json(py::handle h) {
  if (h.is_none()) return nullptr;
  if (py::isinstance<py::bool_>(h)) return h.cast<bool>();
  if (py::isinstance<py::int_>(h)) return h.cast<int64_t>();
  if (py::isinstance<py::float_>(h)) return h.cast<double>();
  if (py::isinstance<py::str>(h)) return h.cast<std::string>();
  if (py::isinstance<py::dict>(h)) {
    json out = json::object();
    for (auto item : h.cast<py::dict>())
      out[item.first.cast<std::string>()] = py_to_json(item.second);
    return out;
  }
  if (py::isinstance<py::list>(h) || py::isinstance<py::tuple>(h)) {
    json out = json::array();
    for (auto item : h.cast<py::sequence>()) out.push_back(py_to_json(item));
    return out;
  }
  throw std::invalid_argument("cannot convert python object of type " +
                              std::string(py::str(h.get_type())) + " to a record value");
}

// ---- tensor <-> numpy (always copies; tensors are tiny at this scale) ----

Tensor tensor_from_array(const FloatArray& a) {
  std::vector<int> shape(static_cast<size_t>(a.ndim()));
  for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[static_cast<size_t>(i)] = static_cast<int>(a.shape(i));
  Tensor t(shape);
  std::copy(a.data(), a.data() + a.size(), t.data());
  return t;
}

py::array_t<float> array_from_tensor(const Tensor& t) {
  std::vector<py::ssize_t> shape(static_cast<size_t>(t.rank()));
  for (int i = 0; i < t.rank(); ++i) shape[static_cast<size_t>(i)] = t.dim(i);
  py::array_t<float> out(shape);
  std::copy(t.data(), t.data() + t.size(), out.mutable_data());
  return out;
}

// Partial config dict merged over the built-in defaults (deep merge for the
// nested "model" object), validated by the same path the CLI uses.
RunConfig config_from_dict(const py::dict& d) {
  json merged = run_config_json(RunConfig{});
  merged.update(py_to_json(d), /*merge_objects=*/true);
  return run_config_from_json(merged);
}

py::object loss_result(double value, Tensor* grad, bool with_grad) {
  if (!with_grad) return py::float_(value);
  return py::make_tuple(value, array_from_tensor(*grad));
}

KsdAxes axes_from_str(const std::string& s) {
  if (s == "h") return KsdAxes::h;
  if (s == "w") return KsdAxes::w;
  if (s == "hw") return KsdAxes::hw;
  if (s == "full2d") return KsdAxes::full2d;
  throw std::invalid_argument("ksd axes must be h, w, hw, or full2d");
}

MetricKind kind_from_str(const std::string& s) {
  if (s == "pck") return MetricKind::pck;
  if (s == "mre") return MetricKind::mre;
  throw std::invalid_argument("metric kind must be pck or mre");
}

json task_to_json(const KATaskSpec& t) {
  return json{{"target", t.target_old},
              {"sources", {t.sources[0], t.sources[1]}},
              {"source_is_new", {t.source_is_new[0], t.source_is_new[1]}},
              {"mode", t.mode},
              {"seed", t.seed}};
}

RecordEmit wrap_emit(py::object cb) {
  if (cb.is_none()) return [](json&&) {};
  auto fn = std::make_shared<py::object>(std::move(cb));
  return [fn](json&& row) {
    py::gil_scoped_acquire gil;
    (*fn)(json_to_py(row));
  };
}

}  // namespace

PYBIND11_MODULE(_kamp, m) {
  m.doc() = "Incremental keypoint-learning benchmark core";

  // ---- rng ----
  m.def(
      "derive_seed",
      [](uint64_t base, const std::string& tag, uint64_t a, uint64_t b) {
        return derive_seed(base, tag, a, b);
      },
      py::arg("base"), py::arg("tag"), py::arg("a") = 0, py::arg("b") = 0,
      "Stateless named seed stream used by every training phase.");

  // ---- heatmap primitives ----
  py::class_<KeypointLocation>(m, "KeypointLocation")
      .def(py::init<>())
      .def(py::init([](double x, double y, bool visible) {
             return KeypointLocation{x, y, visible};
           }),
           py::arg("x"), py::arg("y"), py::arg("visible") = true)
      .def_readwrite("x", &KeypointLocation::x)
      .def_readwrite("y", &KeypointLocation::y)
      .def_readwrite("visible", &KeypointLocation::visible)
      .def("__repr__", [](const KeypointLocation& k) {
        std::ostringstream os;
        os << "KeypointLocation(x=" << k.x << ", y=" << k.y
           << ", visible=" << (k.visible ? "True" : "False") << ")";
        return os.str();
      });

  m.def(
      "encode_gaussian",
      [](double x, double y, bool visible, int h, int w, double sigma) {
        return array_from_tensor(encode_gaussian<float>(x, y, visible, h, w, sigma));
      },
      py::arg("x"), py::arg("y"), py::arg("visible"), py::arg("h"), py::arg("w"),
      py::arg("sigma"), "Gaussian target heatmap [h,w]; zeros when not visible.");

  m.def(
      "decode_argmax",
      [](const FloatArray& hm, double vis_threshold) {
        return decode_argmax(tensor_from_array(hm), vis_threshold);
      },
      py::arg("heatmap"), py::arg("vis_threshold") = 0.1,
      "Peak cell of a [h,w] heatmap as a KeypointLocation.");

  m.def(
      "spatial_softmax",
      [](const FloatArray& hm, const std::string& axis) {
        SoftmaxAxis a = axis == "height"   ? SoftmaxAxis::height
                        : axis == "width"  ? SoftmaxAxis::width
                        : axis == "full2d" ? SoftmaxAxis::full2d
                                           : throw std::invalid_argument(
                                                 "axis must be height, width, or full2d");
        return array_from_tensor(spatial_softmax(tensor_from_array(hm), a));
      },
      py::arg("heatmap"), py::arg("axis"),
      "Softmax-normalize a [h,w] heatmap along one spatial axis.");

  m.def(
      "channel_softmax",
      [](const FloatArray& stack) {
        return array_from_tensor(channel_softmax(tensor_from_array(stack)));
      },
      py::arg("stack"), "Per-pixel softmax across the channels of a [c,h,w] stack.");

  // ---- losses ----
  m.def(
      "loss_gt",
      [](const FloatArray& pred, const FloatArray& gt, const std::vector<uint8_t>& visible,
         bool with_grad) {
        Tensor p = tensor_from_array(pred), g = tensor_from_array(gt);
        Tensor d(p.shape());
        double v = loss_gt(p, g, visible, with_grad ? &d : nullptr);
        return loss_result(v, &d, with_grad);
      },
      py::arg("pred"), py::arg("gt"), py::arg("visible"), py::arg("with_grad") = false,
      "Supervised heatmap L2 on visible channels of [n,c,h,w] stacks.");

  m.def(
      "loss_ksd",
      [](const FloatArray& student, const FloatArray& teacher, const std::string& axes,
         bool with_grad) {
        Tensor s = tensor_from_array(student), t = tensor_from_array(teacher);
        Tensor d(s.shape());
        double v = loss_ksd(s, t, with_grad ? &d : nullptr, axes_from_str(axes));
        return loss_result(v, &d, with_grad);
      },
      py::arg("student"), py::arg("teacher"), py::arg("axes") = "hw",
      py::arg("with_grad") = false,
      "Keypoint-oriented spatial distillation over [n,c,h,w] stacks.");

  m.def(
      "loss_kd_channel",
      [](const FloatArray& student, const FloatArray& teacher, bool with_grad) {
        Tensor s = tensor_from_array(student), t = tensor_from_array(teacher);
        Tensor d(s.shape());
        double v = loss_kd_channel(s, t, with_grad ? &d : nullptr);
        return loss_result(v, &d, with_grad);
      },
      py::arg("student"), py::arg("teacher"), py::arg("with_grad") = false,
      "Channel-softmax distillation baseline loss.");

  m.def(
      "loss_ka_stage2",
      [](const FloatArray& student, const FloatArray& target, bool with_grad) {
        Tensor s = tensor_from_array(student), t = tensor_from_array(target);
        Tensor d(s.shape());
        double v = loss_ka_stage2(s, t, with_grad ? &d : nullptr);
        return loss_result(v, &d, with_grad);
      },
      py::arg("student"), py::arg("target"), py::arg("with_grad") = false,
      "Stage-II association anchor: MSE to the frozen association net's map.");

  // ---- metrics ----
  m.def(
      "mre", [](const std::vector<KeypointLocation>& p,
                const std::vector<KeypointLocation>& g) { return mre(p, g); },
      py::arg("preds"), py::arg("gts"),
      "Mean Euclidean pixel error over gt-visible pairs.");

  m.def(
      "pck",
      [](const std::vector<KeypointLocation>& p, const std::vector<KeypointLocation>& g,
         double d, double sigma) { return pck(p, g, d, sigma); },
      py::arg("preds"), py::arg("gts"), py::arg("d"), py::arg("sigma") = 0.1,
      "100 x fraction of gt-visible pairs within sigma * d (inclusive).");

  m.def(
      "average_transfer",
      [](const std::vector<std::vector<double>>& a, int t, const std::string& kind) {
        AccuracyMatrix mmat;
        mmat.kind = kind_from_str(kind);
        mmat.a = a;
        return average_transfer(mmat, t);
      },
      py::arg("a"), py::arg("t"), py::arg("kind") = "pck",
      "AT_t from the lower-triangular accuracy history a[i][j].");

  m.def(
      "maximal_transfer",
      [](const std::vector<double>& r_now, const std::vector<double>& gamma,
         const std::string& kind) {
        return maximal_transfer(r_now, gamma, kind_from_str(kind));
      },
      py::arg("r_now"), py::arg("gamma"), py::arg("kind") = "pck",
      "MT from current per-group accuracy vs accuracy at introduction.");

  // ---- synthetic data ----
  py::class_<AnatomyGraph>(m, "AnatomyGraph")
      .def_readonly("names", &AnatomyGraph::names)
      .def_readonly("canonical", &AnatomyGraph::canonical)
      .def_readonly("edges", &AnatomyGraph::edges)
      .def("size", &AnatomyGraph::size);

  py::class_<KeypointSchedule>(m, "KeypointSchedule")
      .def_readonly("groups", &KeypointSchedule::groups)
      .def("num_steps", &KeypointSchedule::num_steps)
      .def("all_keypoints", &KeypointSchedule::all_keypoints);

  m.def("build_default_anatomy", &build_default_anatomy, py::arg("n_keypoints"),
        "Deterministic stick-figure skeleton with n >= 6 joints.");

  m.def("schedule_from_group_sizes", &schedule_from_group_sizes, py::arg("sizes"),
        py::arg("n_keypoints"), "Consecutive index blocks of the given sizes.");

  m.def(
      "render_sample",
      [](const AnatomyGraph& g, uint64_t pose_seed, int img_h, int img_w) {
        Sample s = render_sample(g, pose_seed, img_h, img_w);
        return py::make_tuple(array_from_tensor(s.image), s.locations);
      },
      py::arg("graph"), py::arg("pose_seed"), py::arg("img_h") = 128, py::arg("img_w") = 128,
      "Render one articulated pose: ([1,h,w] image, per-keypoint locations).");

  m.def(
      "generate_bundle",
      [](const AnatomyGraph& g, const KeypointSchedule& s, const std::vector<int>& train_sizes,
         int test_size, uint64_t seed, int img_h, int img_w, const std::string& dir) {
        BundleSizes sizes;
        sizes.train_per_step = train_sizes;
        sizes.test = test_size;
        generate_bundle(g, s, sizes, seed, img_h, img_w, dir);
      },
      py::arg("graph"), py::arg("schedule"), py::arg("train_sizes"), py::arg("test_size"),
      py::arg("seed"), py::arg("img_h"), py::arg("img_w"), py::arg("dir"),
      "Generate and persist a dataset bundle under dir.");

  py::class_<Split>(m, "Split")
      .def_property_readonly("images",
                             [](const Split& s) { return array_from_tensor(s.images); })
      .def_readonly("labeled_kps", &Split::labeled_kps)
      .def_readonly("locations", &Split::locations)
      .def("count", &Split::count);

  py::class_<DatasetBundle>(m, "DatasetBundle")
      .def_static("load", &DatasetBundle::load, py::arg("dir"))
      .def_property_readonly("graph", &DatasetBundle::graph,
                             py::return_value_policy::reference_internal)
      .def_property_readonly(
          "schedule", &DatasetBundle::schedule, py::return_value_policy::reference_internal)
      .def_property_readonly("descriptor", &DatasetBundle::descriptor)
      .def_property_readonly("seed", &DatasetBundle::seed)
      .def_property_readonly("img_h", &DatasetBundle::img_h)
      .def_property_readonly("img_w", &DatasetBundle::img_w)
      .def_property_readonly("num_steps", &DatasetBundle::num_steps)
      .def("train", &DatasetBundle::train, py::arg("step"),
           py::return_value_policy::reference_internal)
      .def("test", &DatasetBundle::test, py::return_value_policy::reference_internal)
      .def("seal_through", &DatasetBundle::seal_through, py::arg("t"))
      .def("sealed_through", &DatasetBundle::sealed_through);

  // ---- task creation ----
  m.def(
      "create_task",
      [](const AnatomyGraph& g, const std::vector<int>& old_set,
         const std::vector<int>& new_set, const std::string& mode, uint64_t seed) {
        TaskMode tm = mode == "deterministic" ? TaskMode::deterministic
                      : mode == "random_tuple"
                          ? TaskMode::random_tuple
                          : throw std::invalid_argument(
                                "task mode must be deterministic or random_tuple");
        return json_to_py(task_to_json(create_task(g, old_set, new_set, tm, seed)));
      },
      py::arg("graph"), py::arg("old_set"), py::arg("new_set"),
      py::arg("mode") = "deterministic", py::arg("seed") = 0,
      "Anatomy-guided association task: nearest old target gated by two sources.");

  m.def(
      "uniform_task",
      [](const std::vector<int>& old_set, const std::vector<int>& new_set, uint64_t seed) {
        return json_to_py(task_to_json(uniform_task(old_set, new_set, seed)));
      },
      py::arg("old_set"), py::arg("new_set"), py::arg("seed"),
      "Anatomy-blind control: target and sources drawn uniformly.");

  // ---- model ----
  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init([](const py::dict& d) {
             json merged = model_config_json(ModelConfig{});
             merged.update(py_to_json(d), true);
             return model_config_from_json(merged);
           }),
           py::arg("overrides") = py::dict())
      .def_readwrite("img_h", &ModelConfig::img_h)
      .def_readwrite("img_w", &ModelConfig::img_w)
      .def_readwrite("hm_h", &ModelConfig::hm_h)
      .def_readwrite("hm_w", &ModelConfig::hm_w)
      .def_readwrite("base_channels", &ModelConfig::base_channels)
      .def_readwrite("head_hidden", &ModelConfig::head_hidden)
      .def_readwrite("kanet_channels", &ModelConfig::kanet_channels)
      .def("to_dict", [](const ModelConfig& c) { return json_to_py(model_config_json(c)); });

  py::class_<IncrementalModel>(m, "IncrementalModel")
      .def(py::init<const ModelConfig&, int, uint64_t>(), py::arg("config"),
           py::arg("group0_size"), py::arg("init_seed"))
      .def_property_readonly("step_index", &IncrementalModel::step_index)
      .def_property_readonly("group_sizes", &IncrementalModel::group_sizes)
      .def_property_readonly("total_channels", &IncrementalModel::total_channels)
      .def_property_readonly("frozen", &IncrementalModel::is_frozen)
      .def("config", &IncrementalModel::config, py::return_value_policy::reference_internal)
      .def(
          "forward",
          [](IncrementalModel& mdl, const FloatArray& images) {
            auto [feat, maps] = mdl.forward(tensor_from_array(images), false);
            return py::make_tuple(array_from_tensor(feat), array_from_tensor(maps));
          },
          py::arg("images"),
          "Inference pass: ([n,f,h,w] features, [n,channels,h,w] heatmaps).")
      .def("snapshot_frozen", &IncrementalModel::snapshot_frozen);

  m.def(
      "save_model_checkpoint",
      [](const std::string& path, IncrementalModel& mdl) {
        save_model_checkpoint(path, mdl);
      },
      py::arg("path"), py::arg("model"));
  m.def("load_model_checkpoint", &load_model_checkpoint, py::arg("path"));

  // ---- trainer ----
  m.def("run_config_defaults",
        []() { return json_to_py(run_config_json(RunConfig{})); },
        "Complete default run configuration as a dict.");

  py::class_<EvalOutcome>(m, "EvalOutcome")
      .def_readonly("keypoints", &EvalOutcome::keypoints)
      .def_readonly("kp_pck", &EvalOutcome::kp_pck)
      .def_readonly("kp_mre", &EvalOutcome::kp_mre)
      .def_readonly("kp_visible", &EvalOutcome::kp_visible)
      .def_readonly("aaa", &EvalOutcome::aaa)
      .def_readonly("a_mre", &EvalOutcome::a_mre);

  m.def(
      "evaluate_model",
      [](IncrementalModel& mdl, const DatasetBundle& b, const std::vector<int>& learned,
         const py::dict& config) {
        return evaluate_model(mdl, b, learned, config_from_dict(config));
      },
      py::arg("model"), py::arg("bundle"), py::arg("learned"), py::arg("config") = py::dict(),
      "Per-keypoint test-set evaluation of the given channel-order keypoint ids.");

  py::class_<ProtocolDriver>(m, "ProtocolDriver")
      .def(py::init([](DatasetBundle& b, const py::dict& config, uint64_t seed,
                       py::object on_record) {
             return std::make_unique<ProtocolDriver>(b, config_from_dict(config), seed,
                                                     wrap_emit(std::move(on_record)));
           }),
           py::arg("bundle"), py::arg("config") = py::dict(), py::arg("seed") = 0,
           py::arg("on_record") = py::none(), py::keep_alive<1, 2>(),
           "One (method, seed) protocol unit over a bundle; record rows go to "
           "on_record as dicts.")
      .def_property_readonly("num_steps", &ProtocolDriver::num_steps)
      .def_property_readonly("seed", &ProtocolDriver::seed)
      .def("config", [](const ProtocolDriver& d) { return json_to_py(run_config_json(d.config())); })
      .def("learned_through", &ProtocolDriver::learned_through, py::arg("t"))
      .def("train_step0", &ProtocolDriver::train_step0,
           py::call_guard<py::gil_scoped_release>())
      .def(
          "train_incremental",
          [](ProtocolDriver& d, IncrementalModel& mdl, int t) {
            StepArtifacts a;
            {
              py::gil_scoped_release nogil;
              a = d.train_incremental(mdl, t);
            }
            py::dict out;
            out["task"] = a.task ? json_to_py(task_to_json(*a.task)) : py::none();
            out["has_kanet"] = a.kanet.has_value();
            return out;
          },
          py::arg("model"), py::arg("t"))
      .def("evaluate_step", &ProtocolDriver::evaluate_step, py::arg("model"), py::arg("t"),
           py::call_guard<py::gil_scoped_release>())
      .def("seal", &ProtocolDriver::seal, py::arg("t"))
      .def("run_joint", &ProtocolDriver::run_joint, py::call_guard<py::gil_scoped_release>())
      .def("run_protocol", &ProtocolDriver::run_protocol,
           py::call_guard<py::gil_scoped_release>())
      .def("state", [](const ProtocolDriver& d) { return json_to_py(d.state().to_json()); });

  // ---- harness ----
  m.def(
      "run_benchmark",
      [](const std::string& data_dir, const std::string& out_dir,
         const std::string& config_text, const std::vector<std::string>& overrides,
         const std::vector<uint64_t>& seeds, bool verbose) {
        RunOptions opts;
        opts.data_dir = data_dir;
        opts.out_dir = out_dir;
        FlatConfig flat = FlatConfig::parse(config_text);
        for (const auto& o : overrides) flat.apply_override(o);
        opts.config = run_config_from_flat(flat);
        opts.seeds = seeds;
        json manifest;
        {
          py::gil_scoped_release nogil;
          manifest = run_benchmark(opts, verbose ? &std::cout : nullptr);
        }
        return json_to_py(manifest);
      },
      py::arg("data_dir"), py::arg("out_dir"), py::arg("config_text") = "",
      py::arg("overrides") = std::vector<std::string>{},
      py::arg("seeds") = std::vector<uint64_t>{0}, py::arg("verbose") = false,
      "Resumable multi-seed benchmark run; returns the final manifest.");

  m.def(
      "build_summary",
      [](const std::string& run_dir) { return json_to_py(build_summary(run_dir)); },
      py::arg("run_dir"), "Aggregate a run directory's records into summary.json.");

  m.def(
      "write_report",
      [](const std::vector<std::string>& run_dirs, const std::string& out_dir) {
        ReportInputs in;
        in.run_dirs = run_dirs;
        in.out_dir = out_dir;
        write_report(in);
      },
      py::arg("run_dirs"), py::arg("out_dir"),
      "Cross-run comparison grid, traceable json, and metric curves.");

  m.def(
      "run_id_for",
      [](const py::dict& config, const std::string& dataset_descriptor,
         const std::vector<uint64_t>& seeds) {
        return run_id_for(config_from_dict(config), dataset_descriptor, seeds);
      },
      py::arg("config"), py::arg("dataset_descriptor"), py::arg("seeds"),
      "Stable 40-hex identity of a (config, dataset, seeds) run.");

  m.def("default_out_root", &default_out_root);
}
