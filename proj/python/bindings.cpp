#include "bsde/error_lab.hpp"
#include "bsde/experiment.hpp"

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace bsde;

namespace {

py::array_t<double> to_numpy(const StepArray& a) {
  py::array_t<double> out({static_cast<py::ssize_t>(a.steps()), static_cast<py::ssize_t>(a.paths()),
                           static_cast<py::ssize_t>(a.dim())});
  std::copy(a.data().begin(), a.data().end(), out.mutable_data());
  return out;
}

Partition partition_for(int n, double horizon, int exercise_count) {
  if (exercise_count <= 0) return build_partition(n, horizon);
  return build_partition(n, horizon, ExerciseSchedule::uniform(exercise_count, horizon));
}

py::dict result_dict(const ExperimentResult& r) {
  py::dict d;
  d["config"] = config_to_json(r.config);
  d["price"] = r.price;
  d["std_error"] = r.std_error;
  d["reference"] = r.reference;
  d["relative_error"] = r.relative_error ? py::cast(*r.relative_error) : py::none();
  d["interval"] = r.interval ? py::cast(*r.interval) : py::none();
  d["flag"] = r.flag;
  d["iterations_run"] = r.report.iterations_run;
  d["loss_history"] = r.report.loss_history;
  d["wall_time_seconds"] = r.report.wall_time_seconds;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Backward deep BSDE solver core";

  static py::exception<ConfigError> config_error(m, "ConfigError", PyExc_ValueError);
  static py::exception<TrainingError> training_error(m, "TrainingError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const ConfigError& e) {
      py::object err = py::handle(config_error.ptr())(e.what());
      err.attr("field") = e.field();
      PyErr_SetObject(config_error.ptr(), err.ptr());
    } catch (const TrainingError& e) {
      py::object err = py::handle(training_error.ptr())(e.what());
      err.attr("iteration") = e.iteration();
      PyErr_SetObject(training_error.ptr(), err.ptr());
    }
  });

  py::enum_<PayoffKind>(m, "PayoffKind")
      .value("geometric_put", PayoffKind::geometric_put)
      .value("basket_call", PayoffKind::basket_call);
  py::enum_<Style>(m, "Style").value("european", Style::european).value("bermudan", Style::bermudan);

  py::class_<BlackScholesMarket>(m, "BlackScholesMarket")
      .def_static("uniform", &BlackScholesMarket::uniform, py::arg("dim"), py::arg("rate") = 0.02,
                  py::arg("dividend") = 0.0, py::arg("volatility") = 0.2, py::arg("correlation") = 0.0,
                  py::arg("spot") = 100.0, py::arg("strike") = 100.0, py::arg("maturity") = 1.0)
      .def_readwrite("rate", &BlackScholesMarket::rate)
      .def_readwrite("dividends", &BlackScholesMarket::dividends)
      .def_readwrite("vols", &BlackScholesMarket::vols)
      .def_readwrite("correlation", &BlackScholesMarket::correlation)
      .def_readwrite("spots", &BlackScholesMarket::spots)
      .def_readwrite("strike", &BlackScholesMarket::strike)
      .def_readwrite("maturity", &BlackScholesMarket::maturity)
      .def_property_readonly("dim", &BlackScholesMarket::dim)
      .def("validate", &BlackScholesMarket::validate);

  py::class_<OneDimReduction>(m, "OneDimReduction")
      .def_readonly("mu_hat", &OneDimReduction::mu_hat)
      .def_readonly("sigma_hat", &OneDimReduction::sigma_hat)
      .def_readonly("s_hat0", &OneDimReduction::s_hat0);

  m.def("reduce_to_one_dim", &reduce_to_one_dim);
  m.def("geometric_put_closed_form", &geometric_put_closed_form);
  m.def("geometric_put_value_and_delta", [](const BlackScholesMarket& market, double t, double s) {
    const auto v = geometric_put_value_and_delta(market, t, s);
    return py::make_tuple(v.value, v.delta);
  });
  m.def("geometric_put_z_reference", &geometric_put_z_reference);
  m.def("basket_call_mc_oracle",
        [](const BlackScholesMarket& market, std::int64_t samples, std::uint64_t seed, int workers) {
          const auto e = basket_call_mc_oracle(market, samples, seed, workers);
          return py::make_tuple(e.price, e.std_error);
        },
        py::arg("market"), py::arg("samples"), py::arg("seed"), py::arg("workers") = 1);
  m.def("floored_geometric_mean", [](const Vector& x) { return floored_geometric_mean(x); });

  py::class_<FbsdeProblem>(m, "FbsdeProblem")
      .def_readonly("dim_x", &FbsdeProblem::dim_x)
      .def_readonly("dim_w", &FbsdeProblem::dim_w)
      .def_readonly("horizon", &FbsdeProblem::horizon)
      .def_readonly("x0", &FbsdeProblem::x0)
      .def("terminal", [](const FbsdeProblem& p, const Vector& x) { return p.terminal(x); })
      .def("diffusion", [](const FbsdeProblem& p, double t, const Vector& x) { return p.diffusion_at(t, x); });
  m.def("make_problem", &make_problem, py::arg("payoff"), py::arg("market"));

  py::class_<Partition>(m, "Partition")
      .def_property_readonly("steps", &Partition::steps)
      .def_property_readonly("horizon", &Partition::horizon)
      .def_property_readonly("step_size", &Partition::step_size)
      .def_property_readonly("times", &Partition::times)
      .def_property_readonly("exercise_count", &Partition::exercise_count)
      .def("has_schedule", &Partition::has_schedule);
  m.def("build_partition", &partition_for, py::arg("n"), py::arg("horizon") = 1.0,
        py::arg("exercise_count") = 0, "Uniform grid; exercise_count > 0 attaches N equally spaced dates.");

  m.def("simulate_paths",
        [](const FbsdeProblem& problem, const Partition& partition, std::int64_t paths,
           std::uint64_t seed, int workers) {
          const auto batch = simulate_forward_batch(problem, partition, paths, seed, 0, workers);
          return py::make_tuple(to_numpy(batch.states), to_numpy(batch.increments));
        },
        py::arg("problem"), py::arg("partition"), py::arg("paths"), py::arg("seed"),
        py::arg("workers") = 1, "Returns (states[n+1, M, d1], increments[n, M, d]).");

  py::class_<ControlStack>(m, "ControlStack")
      .def_property_readonly("size", &ControlStack::size)
      .def_property_readonly("parameter_count", &ControlStack::parameter_count)
      .def("flatten", &ControlStack::flatten)
      .def("assign", &ControlStack::assign)
      .def("z", [](const ControlStack& c, int i, const Vector& x) {
        if (i < 0 || i >= c.size()) throw py::index_error("step out of range");
        return Vector(mlp_forward(c.steps[static_cast<std::size_t>(i)], x));
      })
      .def("save", [](const ControlStack& c, const std::string& path) { save_controls(path, c); });
  m.def("load_controls", [](const std::string& path) { return load_controls(path); });
  m.def("init_controls", &init_controls, py::arg("steps"), py::arg("d1"), py::arg("d"),
        py::arg("seed"), py::arg("hidden_width") = -1);
  m.def("zero_controls", &zero_controls, py::arg("steps"), py::arg("d1"), py::arg("d"),
        py::arg("hidden_width") = -1);

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("batch", &TrainConfig::batch)
      .def_readwrite("iterations", &TrainConfig::iterations)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_readwrite("eval_batch", &TrainConfig::eval_batch)
      .def_readwrite("plateau_tolerance", &TrainConfig::plateau_tolerance)
      .def_readwrite("plateau_window", &TrainConfig::plateau_window)
      .def_readwrite("resample_paths", &TrainConfig::resample_paths)
      .def_readwrite("hidden_width", &TrainConfig::hidden_width)
      .def_readwrite("workers", &TrainConfig::workers)
      .def_property(
          "learning_rate", [](const TrainConfig& c) { return c.adam.step_size; },
          [](TrainConfig& c, double v) { c.adam.step_size = v; })
      .def("validate", &TrainConfig::validate);

  py::class_<TrainingReport>(m, "TrainingReport")
      .def_readonly("loss_history", &TrainingReport::loss_history)
      .def_readonly("price", &TrainingReport::price)
      .def_readonly("price_std_error", &TrainingReport::price_std_error)
      .def_readonly("final_variance", &TrainingReport::final_variance)
      .def_readonly("wall_time_seconds", &TrainingReport::wall_time_seconds)
      .def_readonly("iterations_run", &TrainingReport::iterations_run)
      .def_readonly("stopped_on_plateau", &TrainingReport::stopped_on_plateau);

  m.def("train",
        [](const FbsdeProblem& problem, const Partition& partition, const TrainConfig& config, Style style) {
          TrainResult result;
          {
            py::gil_scoped_release release;
            result = train(problem, partition, config, style);
          }
          return py::make_tuple(std::move(result.controls), std::move(result.report));
        },
        py::arg("problem"), py::arg("partition"), py::arg("config") = TrainConfig{},
        py::arg("style") = Style::european, "Returns (controls, report).");

  py::class_<Evaluation>(m, "Evaluation")
      .def_readonly("price", &Evaluation::price)
      .def_readonly("std_error", &Evaluation::std_error)
      .def_readonly("variance", &Evaluation::variance);
  m.def("evaluate", &evaluate, py::arg("controls"), py::arg("problem"), py::arg("partition"),
        py::arg("paths"), py::arg("seed"), py::arg("style") = Style::european, py::arg("workers") = 1);
  m.def("variance_loss", [](const std::vector<double>& y0) { return variance_loss(y0); });

  py::class_<ErrorRecord>(m, "ErrorRecord")
      .def_readonly("n", &ErrorRecord::n)
      .def_readonly("h", &ErrorRecord::h)
      .def_readonly("var_y0", &ErrorRecord::var_y0)
      .def_readonly("y_error_sq", &ErrorRecord::y_error_sq)
      .def_readonly("z_error_sq", &ErrorRecord::z_error_sq)
      .def_readonly("price", &ErrorRecord::price)
      .def_readonly("analytic", &ErrorRecord::analytic)
      .def_readonly("relative_error", &ErrorRecord::relative_error);
  m.def("measure_y_z_errors", &measure_y_z_errors, py::arg("controls"), py::arg("market"),
        py::arg("payoff"), py::arg("partition"), py::arg("paths"), py::arg("seed"),
        py::arg("workers") = 1);

  m.def("default_config", [](const std::vector<std::string>& overrides) {
    return config_to_json(default_config(overrides));
  }, py::arg("overrides") = std::vector<std::string>{}, "Config JSON text with defaults filled in.");
  m.def("run_experiment",
        [](const std::string& config_json, const std::vector<std::string>& overrides) {
          const auto config = parse_config(config_json, overrides);
          ExperimentResult result;
          {
            py::gil_scoped_release release;
            result = run_experiment(config);
          }
          return result_dict(result);
        },
        py::arg("config_json") = "{}", py::arg("overrides") = std::vector<std::string>{});
}
