#include "fedssd/checkpoint.hpp"
#include "fedssd/config.hpp"
#include "fedssd/data.hpp"
#include "fedssd/distill.hpp"
#include "fedssd/error.hpp"
#include "fedssd/experiment.hpp"
#include "fedssd/fed.hpp"
#include "fedssd/metrics.hpp"
#include "fedssd/nn.hpp"
#include "fedssd/seeds.hpp"

#include <pybind11/numpy.h>
#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <algorithm>

namespace py = pybind11;
using namespace fedssd;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Matrix to_matrix(const Array& a) {
    if (a.ndim() != 2) throw Error(ErrorCode::dimension_mismatch, "expected a 2-d array");
    const auto rows = static_cast<std::size_t>(a.shape(0));
    const auto cols = static_cast<std::size_t>(a.shape(1));
    return Matrix(rows, cols, std::vector<double>(a.data(), a.data() + rows * cols));
}

Array to_array(const Matrix& m) {
    Array out({m.rows(), m.cols()});
    std::copy(m.values().begin(), m.values().end(), out.mutable_data());
    return out;
}

py::tuple loss_tuple(const LossAndGrad& r) { return py::make_tuple(r.loss, to_array(r.grad)); }

py::dict client_dict(const ClientMetrics& c) {
    py::dict d;
    d["client"] = c.client;
    d["samples"] = c.samples;
    d["acc_local"] = c.acc_local;
    d["ce_loss"] = c.ce_loss;
    d["regularizer_loss"] = c.regularizer_loss;
    return d;
}

py::dict record_dict(const RoundRecord& r) {
    py::dict d;
    d["round"] = r.round;
    d["participants"] = r.participants;
    d["params_digest"] = r.params_digest;
    d["acc_global"] = r.metrics.acc_global;
    d["acc_global_next"] = r.metrics.acc_global_next;
    d["acc_local_mean"] = r.metrics.acc_local_mean;
    d["forgetting_gap"] = r.metrics.forgetting_gap;
    d["forgetting_gap_post"] = r.metrics.forgetting_gap_post;
    d["class_accuracy"] = r.metrics.class_accuracy;
    py::list clients;
    for (const auto& c : r.metrics.clients) clients.append(client_dict(c));
    d["clients"] = clients;
    d["credibility"] = r.credibility ? py::object(to_array(r.credibility->a)) : py::none();
    return d;
}

const AlgorithmChoice& find_algorithm(const ExperimentConfig& cfg, const std::string& name) {
    const auto it = std::ranges::find(cfg.algorithms, name, &AlgorithmChoice::name);
    if (it == cfg.algorithms.end())
        throw Error(ErrorCode::config, "algorithm '" + name + "' is not in the configuration");
    return *it;
}

}  // namespace

PYBIND11_MODULE(_fedssd, m) {
    m.doc() = "Federated training with selective self-distillation";

    static py::exception<Error> error_type(m, "FedssdError");
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const Error& e) {
            py::object exc = py::reinterpret_borrow<py::object>(error_type.ptr())(e.what());
            exc.attr("code") = to_string(e.code());
            exc.attr("layer") = e.layer() ? py::object(py::int_(*e.layer())) : py::none();
            PyErr_SetObject(error_type.ptr(), exc.ptr());
        }
    });

    m.def("derive_seed", &derive_seed, py::arg("base"), py::arg("stream"));

    py::class_<LabeledDataset>(m, "Dataset")
        .def(py::init([](const Array& features, std::vector<int> labels, std::size_t num_classes) {
                 LabeledDataset ds{to_matrix(features), std::move(labels), num_classes, "python"};
                 ds.validate();
                 return ds;
             }),
             py::arg("features"), py::arg("labels"), py::arg("num_classes"))
        .def_property_readonly("features", [](const LabeledDataset& d) { return to_array(d.features); })
        .def_readonly("labels", &LabeledDataset::labels)
        .def_readonly("num_classes", &LabeledDataset::num_classes)
        .def("class_counts", &LabeledDataset::class_counts)
        .def("subset", [](const LabeledDataset& d, std::vector<std::size_t> idx) { return subset(d, idx); })
        .def("__len__", &LabeledDataset::size);

    m.def(
        "generate_synthetic",
        [](std::size_t num_classes, std::size_t dims, std::size_t per_class, double separation,
           std::uint64_t seed) {
            return generate_synthetic({num_classes, dims, per_class, separation}, seed);
        },
        py::arg("num_classes"), py::arg("dims"), py::arg("per_class"), py::arg("separation"),
        py::arg("seed"));
    m.def("load_idx", &load_idx, py::arg("images"), py::arg("labels"));

    m.def(
        "partition_dirichlet",
        [](const LabeledDataset& ds, std::size_t clients, double concentration, std::uint64_t seed) {
            return partition_dirichlet(ds, clients, concentration, seed).client_indices;
        },
        py::arg("dataset"), py::arg("clients"), py::arg("concentration"), py::arg("seed"));
    m.def(
        "partition_quantity",
        [](const LabeledDataset& ds, std::size_t clients, std::size_t labels_per_client,
           std::uint64_t seed) {
            return partition_quantity(ds, clients, labels_per_client, seed).client_indices;
        },
        py::arg("dataset"), py::arg("clients"), py::arg("labels_per_client"), py::arg("seed"));
    m.def(
        "sample_auxiliary",
        [](const LabeledDataset& ds, std::size_t per_class, std::uint64_t seed) {
            auto s = sample_auxiliary(ds, per_class, seed);
            return py::make_tuple(std::move(s.auxiliary), std::move(s.aux_indices),
                                  std::move(s.remaining_indices));
        },
        py::arg("dataset"), py::arg("per_class"), py::arg("seed"));

    py::class_<ModelParams>(m, "Model")
        .def_static(
            "mlp",
            [](std::size_t input_dim, std::vector<std::size_t> hidden, std::size_t num_classes,
               std::uint64_t seed) { return init_mlp(input_dim, hidden, num_classes, seed); },
            py::arg("input_dim"), py::arg("hidden"), py::arg("num_classes"), py::arg("seed"))
        .def_property_readonly("input_dim", &ModelParams::input_dim)
        .def_property_readonly("num_classes", &ModelParams::num_classes)
        .def_property_readonly("parameter_count", &ModelParams::parameter_count)
        .def("flatten",
             [](const ModelParams& p) {
                 const auto v = flatten(p);
                 return py::array_t<double>(static_cast<py::ssize_t>(v.size()), v.data());
             })
        .def("unflatten",
             [](const ModelParams& p, const Array& v) {
                 return unflatten(p, std::span<const double>(v.data(), static_cast<std::size_t>(v.size())));
             })
        .def("logits", [](const ModelParams& p, const Array& x) { return to_array(forward_logits(p, to_matrix(x))); })
        .def("predict", [](const ModelParams& p, const Array& x) { return predict(p, to_matrix(x)); })
        .def("digest", [](const ModelParams& p) { return params_digest(p); })
        .def("to_bytes",
             [](const ModelParams& p) {
                 const auto bytes = encode_checkpoint(p);
                 return py::bytes(reinterpret_cast<const char*>(bytes.data()), bytes.size());
             })
        .def_static("from_bytes",
                    [](const py::bytes& b) {
                        const std::string s = b;
                        std::vector<unsigned char> bytes(s.begin(), s.end());
                        return decode_checkpoint(bytes);
                    })
        .def("save", [](const ModelParams& p, const std::filesystem::path& path) { save_checkpoint(path, p); },
             py::arg("path"))
        .def_static("load", &load_checkpoint, py::arg("path"))
        .def(py::self == py::self);

    m.def(
        "evaluate",
        [](const ModelParams& p, const LabeledDataset& test) {
            const auto e = evaluate(p, test);
            return py::make_tuple(e.accuracy, e.class_accuracy);
        },
        py::arg("model"), py::arg("dataset"));

    m.def(
        "credibility_matrix",
        [](const ModelParams& teacher, const LabeledDataset& aux) {
            return to_array(credibility_matrix(teacher, aux).a);
        },
        py::arg("teacher"), py::arg("auxiliary"));
    m.def(
        "class_weights",
        [](const Array& a) {
            const Matrix mat = to_matrix(a);
            return class_weights(CredibilityMatrix{mat, std::vector<std::size_t>(mat.rows(), 1), -1});
        },
        py::arg("credibility"));
    m.def("sample_weight", &sample_weight, py::arg("p_true"));
    m.def(
        "weight_vector",
        [](std::vector<double> cw, double s, double m_max, double dead_zone) {
            return weight_vector(cw, s, m_max, dead_zone);
        },
        py::arg("class_weights"), py::arg("sample_weight"), py::arg("m_max"),
        py::arg("dead_zone") = kDeadZone);
    m.def(
        "batch_weights",
        [](const Array& teacher_logits, std::vector<int> labels, std::vector<double> cw, double m_max,
           double dead_zone) {
            return to_array(batch_weight_vectors(to_matrix(teacher_logits), labels, cw, m_max, dead_zone));
        },
        py::arg("teacher_logits"), py::arg("labels"), py::arg("class_weights"), py::arg("m_max"),
        py::arg("dead_zone") = kDeadZone);

    m.def(
        "ssd_loss",
        [](const Array& t, const Array& s, const Array& w) {
            return loss_tuple(ssd_loss(to_matrix(t), to_matrix(s), to_matrix(w)));
        },
        py::arg("teacher_logits"), py::arg("student_logits"), py::arg("weights"));
    m.def(
        "kl_loss",
        [](const Array& t, const Array& s, double tau, double alpha) {
            return loss_tuple(kl_distill_loss(to_matrix(t), to_matrix(s), tau, alpha));
        },
        py::arg("teacher_logits"), py::arg("student_logits"), py::arg("temperature"), py::arg("alpha"));
    m.def(
        "mse_loss",
        [](const Array& t, const Array& s, double alpha) {
            return loss_tuple(mse_distill_loss(to_matrix(t), to_matrix(s), alpha));
        },
        py::arg("teacher_logits"), py::arg("student_logits"), py::arg("alpha"));

    m.def(
        "aggregate",
        [](const std::vector<ModelParams>& models, std::vector<std::size_t> sizes) {
            return aggregate(models, sizes);
        },
        py::arg("models"), py::arg("sizes"));
    m.def("rounds_to_target",
          [](std::vector<double> series, double target) { return rounds_to_target(series, target); },
          py::arg("series"), py::arg("target"));

    m.def("preset_names", &preset_names);
    m.def("preset_text", &preset_text, py::arg("name"));

    m.def(
        "run_federation",
        [](const std::string& config_text, const std::string& algorithm, std::uint64_t seed,
           const Overrides& overrides, std::size_t workers) {
            const ExperimentConfig cfg = parse_config(config_text, overrides);
            const SeedSet seeds = SeedSet::from_master(seed);
            FederationConfig fed = cfg.federation;
            fed.algorithm = find_algorithm(cfg, algorithm).loss;
            fed.seeds = seeds;
            fed.workers = workers;
            FederationResult result;
            {
                py::gil_scoped_release release;
                const PreparedData data = prepare_data(cfg, seeds);
                result = run_federation(fed, data.federation);
            }
            py::list records;
            for (const auto& r : result.records) records.append(record_dict(r));
            return py::make_tuple(records, std::move(result.final_params));
        },
        py::arg("config"), py::arg("algorithm"), py::arg("seed"),
        py::arg("overrides") = Overrides{}, py::arg("workers") = 1);

    m.def(
        "run_experiment",
        [](const std::string& config_text, const Overrides& overrides) {
            const ExperimentConfig cfg = parse_config(config_text, overrides);
            ExperimentOutcome out;
            {
                py::gil_scoped_release release;
                out = run_experiment(cfg);
            }
            py::list artifacts, failures;
            for (const auto& a : out.artifacts) {
                py::dict d;
                d["path"] = a.path;
                d["kind"] = a.kind;
                d["sha256"] = a.sha256;
                artifacts.append(d);
            }
            for (const auto& f : out.failures) {
                py::dict d;
                d["algorithm"] = f.algorithm;
                d["seed"] = f.seed;
                d["message"] = f.message;
                failures.append(d);
            }
            py::dict result;
            result["out_dir"] = out.out_dir;
            result["artifacts"] = artifacts;
            result["failures"] = failures;
            return result;
        },
        py::arg("config"), py::arg("overrides") = Overrides{});
}
