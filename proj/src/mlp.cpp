#include "bsde/mlp.hpp"

#include "bsde/rng.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <stdexcept>

namespace bsde {

using nlohmann::json;

std::vector<int> MlpParams::layer_sizes() const {
  std::vector<int> sizes{input_dim()};
  for (const auto& layer : layers) sizes.push_back(static_cast<int>(layer.weights.rows()));
  return sizes;
}

std::size_t MlpParams::parameter_count() const {
  std::size_t count = 0;
  for (const auto& layer : layers)
    count += static_cast<std::size_t>(layer.weights.size() + layer.bias.size());
  return count;
}

void MlpParams::validate() const {
  if (layers.empty()) throw std::invalid_argument("mlp: no layers");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    if (layer.bias.size() != layer.weights.rows())
      throw std::invalid_argument("mlp: bias size does not match layer output");
    if (l > 0 && layer.weights.cols() != layers[l - 1].weights.rows())
      throw std::invalid_argument("mlp: layer shapes do not chain");
    if (!layer.weights.allFinite() || !layer.bias.allFinite())
      throw std::invalid_argument("mlp: non-finite parameter");
  }
  if (input_shift.size() != input_dim() || input_scale.size() != input_dim())
    throw std::invalid_argument("mlp: normalization size does not match input");
  if ((input_scale.array() == 0.0).any()) throw std::invalid_argument("mlp: zero input scale");
}

namespace {

MlpParams shaped_mlp(int d1, int d, int hidden_width) {
  if (d1 < 1 || d < 1) throw std::invalid_argument("mlp: dimensions must be >= 1");
  const int width = hidden_width > 0 ? hidden_width : d1 + 10;
  MlpParams p;
  const int sizes[] = {d1, width, width, d};
  for (int l = 0; l < 3; ++l)
    p.layers.push_back({Matrix::Zero(sizes[l + 1], sizes[l]), Vector::Zero(sizes[l + 1])});
  p.input_shift = Vector::Zero(d1);
  p.input_scale = Vector::Ones(d1);
  return p;
}

Matrix standardize(const MlpParams& params, const Eigen::Ref<const Matrix>& x) {
  return ((x.colwise() - params.input_shift).array().colwise() / params.input_scale.array())
      .matrix();
}

}  // namespace

MlpParams init_mlp(int d1, int d, std::uint64_t seed, std::uint32_t index, int hidden_width) {
  MlpParams p = shaped_mlp(d1, d, hidden_width);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    auto& w = p.layers[l].weights;
    const double fan_in = static_cast<double>(w.cols());
    const bool output = l + 1 == p.layers.size();
    const double stddev = std::sqrt((output ? 1.0 : 2.0) / fan_in);
    fill_normals(seed, Stream::init, index, static_cast<std::uint32_t>(l),
                 std::span<double>(w.data(), static_cast<std::size_t>(w.size())));
    w *= stddev;
  }
  return p;
}

MlpParams zero_mlp(int d1, int d, int hidden_width) { return shaped_mlp(d1, d, hidden_width); }

Matrix mlp_forward_batch(const MlpParams& params, const Eigen::Ref<const Matrix>& x) {
  Matrix h = standardize(params, x);
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& layer = params.layers[l];
    Matrix next = layer.weights * h;
    next.colwise() += layer.bias;
    if (l + 1 < params.layers.size()) next = next.cwiseMax(0.0);
    h = std::move(next);
  }
  if (params.output_scale != 1.0) h *= params.output_scale;
  return h;
}

Vector mlp_forward(const MlpParams& params, const Eigen::Ref<const Vector>& x) {
  return mlp_forward_batch(params, x);
}

NodeId record_mlp(Tape& tape, const MlpParams& params, const Eigen::Ref<const Matrix>& x,
                  MlpHandles& handles) {
  handles.weights.clear();
  handles.biases.clear();
  NodeId h = tape.constant(standardize(params, x));
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& layer = params.layers[l];
    const NodeId w = tape.variable(layer.weights);
    const NodeId b = tape.variable(layer.bias);
    handles.weights.push_back(w);
    handles.biases.push_back(b);
    h = tape.affine(w, b, h);
    if (l + 1 < params.layers.size()) h = tape.relu(h);
  }
  if (params.output_scale != 1.0) h = tape.scale(h, params.output_scale);
  return h;
}

void flatten_into(const MlpParams& params, std::vector<double>& out) {
  for (const auto& layer : params.layers) {
    out.insert(out.end(), layer.weights.data(), layer.weights.data() + layer.weights.size());
    out.insert(out.end(), layer.bias.data(), layer.bias.data() + layer.bias.size());
  }
}

void unflatten_from(MlpParams& params, const double*& cursor) {
  for (auto& layer : params.layers) {
    std::copy_n(cursor, layer.weights.size(), layer.weights.data());
    cursor += layer.weights.size();
    std::copy_n(cursor, layer.bias.size(), layer.bias.data());
    cursor += layer.bias.size();
  }
}

void gradients_into(const Tape& tape, const MlpParams& params, const MlpHandles& handles,
                    std::vector<double>& out) {
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const Matrix& gw = tape.gradient(handles.weights[l]);
    const Matrix& gb = tape.gradient(handles.biases[l]);
    out.insert(out.end(), gw.data(), gw.data() + gw.size());
    out.insert(out.end(), gb.data(), gb.data() + gb.size());
  }
}

std::size_t ControlStack::parameter_count() const {
  std::size_t count = 0;
  for (const auto& s : steps) count += s.parameter_count();
  return count;
}

std::vector<double> ControlStack::flatten() const {
  std::vector<double> flat;
  flat.reserve(parameter_count());
  for (const auto& s : steps) flatten_into(s, flat);
  return flat;
}

void ControlStack::assign(const std::vector<double>& flat) {
  if (flat.size() != parameter_count())
    throw std::invalid_argument("ControlStack::assign: parameter count mismatch");
  const double* cursor = flat.data();
  for (auto& s : steps) unflatten_from(s, cursor);
}

ControlStack init_controls(int steps, int d1, int d, std::uint64_t seed, int hidden_width) {
  ControlStack c;
  for (int i = 0; i < steps; ++i)
    c.steps.push_back(init_mlp(d1, d, seed, static_cast<std::uint32_t>(i), hidden_width));
  return c;
}

ControlStack zero_controls(int steps, int d1, int d, int hidden_width) {
  ControlStack c;
  c.steps.assign(static_cast<std::size_t>(steps), zero_mlp(d1, d, hidden_width));
  return c;
}

namespace {

std::vector<double> to_vector(const Eigen::Ref<const Vector>& v) {
  return {v.data(), v.data() + v.size()};
}

Vector from_json_vector(const json& j) {
  const auto values = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
}

}  // namespace

void save_controls(std::ostream& out, const ControlStack& controls) {
  json doc;
  doc["format"] = "bsde-control-stack";
  doc["version"] = 1;
  json steps = json::array();
  for (const auto& p : controls.steps) {
    json s;
    s["layer_sizes"] = p.layer_sizes();
    s["input_shift"] = to_vector(p.input_shift);
    s["input_scale"] = to_vector(p.input_scale);
    s["output_scale"] = p.output_scale;
    std::vector<double> values;
    for (const auto& layer : p.layers) {
      for (Eigen::Index r = 0; r < layer.weights.rows(); ++r)
        for (Eigen::Index c = 0; c < layer.weights.cols(); ++c) values.push_back(layer.weights(r, c));
      values.insert(values.end(), layer.bias.data(), layer.bias.data() + layer.bias.size());
    }
    s["params"] = std::move(values);
    steps.push_back(std::move(s));
  }
  doc["steps"] = std::move(steps);
  out << doc.dump() << '\n';
}

ControlStack load_controls(std::istream& in) {
  const json doc = json::parse(in);
  if (doc.value("format", "") != "bsde-control-stack")
    throw std::runtime_error("load_controls: not a control-stack checkpoint");
  ControlStack controls;
  for (const auto& s : doc.at("steps")) {
    const auto sizes = s.at("layer_sizes").get<std::vector<int>>();
    if (sizes.size() < 2) throw std::runtime_error("load_controls: bad layer sizes");
    MlpParams p;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l)
      p.layers.push_back({Matrix::Zero(sizes[l + 1], sizes[l]), Vector::Zero(sizes[l + 1])});
    p.input_shift = from_json_vector(s.at("input_shift"));
    p.input_scale = from_json_vector(s.at("input_scale"));
    p.output_scale = s.at("output_scale").get<double>();
    const auto values = s.at("params").get<std::vector<double>>();
    if (values.size() != p.parameter_count())
      throw std::runtime_error("load_controls: parameter count does not match layer sizes");
    std::size_t k = 0;
    for (auto& layer : p.layers) {
      for (Eigen::Index r = 0; r < layer.weights.rows(); ++r)
        for (Eigen::Index c = 0; c < layer.weights.cols(); ++c) layer.weights(r, c) = values[k++];
      for (Eigen::Index r = 0; r < layer.bias.size(); ++r) layer.bias[r] = values[k++];
    }
    p.validate();
    controls.steps.push_back(std::move(p));
  }
  return controls;
}

void save_controls(const std::string& path, const ControlStack& controls) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_controls: cannot open " + path);
  out.precision(17);
  save_controls(out, controls);
}

ControlStack load_controls(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_controls: cannot open " + path);
  return load_controls(in);
}

}  // namespace bsde
