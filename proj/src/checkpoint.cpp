#include "divseg/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "divseg/tensor_io.hpp"

namespace divseg {
namespace fs = std::filesystem;
namespace {

void save_net(const TwoLayerNet<float>& net, const fs::path& dir) {
  const auto& h = net.hidden;
  const auto& o = net.output;
  save_raw_tensor({{uint32_t(h.out_dim), uint32_t(h.in_dim)}, h.weight}, dir / "hidden.weight.dstn");
  save_raw_tensor({{uint32_t(h.out_dim)}, h.bias}, dir / "hidden.bias.dstn");
  save_raw_tensor({{uint32_t(o.out_dim), uint32_t(o.in_dim)}, o.weight}, dir / "output.weight.dstn");
  save_raw_tensor({{uint32_t(o.out_dim)}, o.bias}, dir / "output.bias.dstn");
}

void load_layer(Linear<float>& layer, const fs::path& dir, const std::string& name,
                size_t in, size_t out) {
  const Tensor w = load_raw_tensor(dir / (name + ".weight.dstn"));
  const Tensor b = load_raw_tensor(dir / (name + ".bias.dstn"));
  if (w.dims != std::vector<uint32_t>{uint32_t(out), uint32_t(in)} ||
      b.dims != std::vector<uint32_t>{uint32_t(out)}) {
    throw FormatError("checkpoint layer '" + name + "' does not match model.json shapes");
  }
  layer = Linear<float>(in, out);
  layer.weight = w.data;
  layer.bias = b.data;
}

nlohmann::json layer_json(const TwoLayerNet<float>& net) {
  return nlohmann::json::array(
      {{{"name", "hidden"}, {"in", net.in_dim()}, {"out", net.hidden_dim()}, {"activation", "relu"}},
       {{"name", "output"}, {"in", net.hidden_dim()}, {"out", net.out_dim()}}});
}

TwoLayerNet<float> load_net(const fs::path& dir, const nlohmann::json& layers) {
  if (!layers.is_array() || layers.size() != 2) {
    throw FormatError("model.json: expected two layers");
  }
  TwoLayerNet<float> net;
  load_layer(net.hidden, dir, "hidden", layers[0].at("in"), layers[0].at("out"));
  load_layer(net.output, dir, "output", layers[1].at("in"), layers[1].at("out"));
  if (net.output.in_dim != net.hidden.out_dim) throw FormatError("model.json: layer mismatch");
  return net;
}

}  // namespace

nlohmann::json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("invalid JSON in " + path.string() + ": " + e.what());
  }
}

void write_json_file(const fs::path& path, const nlohmann::json& j) {
  const std::string text = j.dump(2) + "\n";
  write_file_bytes(path, {reinterpret_cast<const uint8_t*>(text.data()), text.size()});
}

void write_json_file(const fs::path& path, const nlohmann::ordered_json& j) {
  const std::string text = j.dump(2) + "\n";
  write_file_bytes(path, {reinterpret_cast<const uint8_t*>(text.data()), text.size()});
}

void save_localizer(const LocalizationModel& model, const fs::path& dir,
                    const LocalizerConfig& config) {
  fs::create_directories(dir);
  nlohmann::json j = {
      {"kind", "localizer"},
      {"class_id", model.class_id},
      {"pooling", to_string(model.pooling)},
      {"seed", model.seed},
      {"layers", layer_json(model.net)},
      {"outputs", {"fg", "bg"}},
      {"hyperparameters",
       {{"hidden", config.hidden},
        {"lr", config.lr},
        {"epochs", config.epochs},
        {"decay_lr", config.decay_lr},
        {"decay_epochs", config.decay_epochs},
        {"optimizer", "adam"},
        {"batch_images", 1}}}};
  save_net(model.net, dir);
  write_json_file(dir / "model.json", j);
}

LocalizationModel load_localizer(const fs::path& dir) {
  const auto j = read_json_file(dir / "model.json");
  try {
    if (j.at("kind") != "localizer") throw FormatError("not a localizer checkpoint: " + dir.string());
    LocalizationModel m;
    m.class_id = j.at("class_id");
    m.pooling = parse_pooling(j.at("pooling").get<std::string>());
    m.seed = j.at("seed");
    m.net = load_net(dir, j.at("layers"));
    if (m.net.out_dim() != 2) throw FormatError("localizer must have two outputs");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed localizer checkpoint " + dir.string() + ": " + e.what());
  }
}

void save_norm_stats(const NormStats& stats, const fs::path& path) {
  Tensor t;
  t.dims = {2, static_cast<uint32_t>(stats.depth())};
  t.data = stats.mean;
  t.data.insert(t.data.end(), stats.stddev.begin(), stats.stddev.end());
  save_raw_tensor(t, path);
}

NormStats load_norm_stats(const fs::path& path) {
  const Tensor t = load_raw_tensor(path);
  if (t.dims.size() != 2 || t.dims[0] != 2) throw FormatError("norm stats must be a 2 x D tensor");
  NormStats s;
  const size_t d = t.dims[1];
  s.mean.assign(t.data.begin(), t.data.begin() + static_cast<long>(d));
  s.stddev.assign(t.data.begin() + static_cast<long>(d), t.data.end());
  return s;
}

void save_segmenter(const SegmentationModel& model, const fs::path& dir,
                    const SegmentationConfig& config) {
  fs::create_directories(dir);
  nlohmann::json j = {
      {"kind", "segmenter"},
      {"classes", model.classes},
      {"background_index", model.background_index()},
      {"base_dim", model.base_dim},
      {"global_dim", model.global_dim},
      {"seed", model.seed},
      {"layers", layer_json(model.net)},
      {"norm_epsilon", model.stats.epsilon},
      {"hyperparameters",
       {{"hidden", config.hidden},
        {"lr", config.lr},
        {"epochs", config.epochs},
        {"batch_points", config.batch},
        {"optimizer", "adam"}}}};
  save_net(model.net, dir);
  save_norm_stats(model.stats, dir / "norm_stats.dstn");
  write_json_file(dir / "model.json", j);
}

SegmentationModel load_segmenter(const fs::path& dir) {
  const auto j = read_json_file(dir / "model.json");
  try {
    if (j.at("kind") != "segmenter") throw FormatError("not a segmenter checkpoint: " + dir.string());
    SegmentationModel m;
    m.classes = j.at("classes").get<std::vector<int>>();
    m.base_dim = j.at("base_dim");
    m.global_dim = j.at("global_dim");
    m.seed = j.at("seed");
    m.net = load_net(dir, j.at("layers"));
    m.stats = load_norm_stats(dir / "norm_stats.dstn");
    m.stats.epsilon = j.value("norm_epsilon", 1e-8f);
    if (m.net.out_dim() != m.num_outputs()) {
      throw FormatError("segmenter output width does not match its class list");
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed segmenter checkpoint " + dir.string() + ": " + e.what());
  }
}

nlohmann::ordered_json point_to_json(const SampledPoint& p) {
  nlohmann::ordered_json flags = nlohmann::ordered_json::array();
  if (p.flags & kFlagRandomBackground) flags.push_back("random_bg");
  if (p.flags & kFlagDense) flags.push_back("dense");
  nlohmann::ordered_json j;
  j["image"] = p.image;
  j["loc"] = p.loc;
  j["label"] = p.label;
  j["rank"] = p.rank;
  j["value"] = p.value;
  j["flags"] = flags;
  return j;
}

SampledPoint point_from_json(const nlohmann::json& j) {
  try {
    SampledPoint p;
    p.image = j.at("image");
    p.loc = j.at("loc");
    p.label = j.at("label");
    p.rank = j.at("rank");
    p.value = j.at("value");
    for (const auto& f : j.value("flags", nlohmann::json::array())) {
      if (f == "random_bg") {
        p.flags |= kFlagRandomBackground;
      } else if (f == "dense") {
        p.flags |= kFlagDense;
      } else {
        throw DataError("unknown point flag " + f.dump());
      }
    }
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed point record: ") + e.what());
  }
}

void write_points(const fs::path& path, std::span<const SampledPoint> points) {
  std::ostringstream out;
  for (const auto& p : points) out << point_to_json(p).dump() << '\n';
  const std::string text = out.str();
  write_file_bytes(path, {reinterpret_cast<const uint8_t*>(text.data()), text.size()});
}

std::vector<SampledPoint> read_points(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<SampledPoint> points;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      points.push_back(point_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return points;
}

}  // namespace divseg
