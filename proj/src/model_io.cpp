#include "rlvs/model_io.hpp"

#include <fstream>

#include "json.hpp"

namespace rlvs {
namespace {

using nlohmann::json;

[[noreturn]] void corrupt(const std::filesystem::path& path, const std::string& msg) {
  throw Error(ErrorCode::kCorruptFile, path.string(), msg);
}

}  // namespace

std::filesystem::path model_blob_path(const std::filesystem::path& manifest) {
  auto blob = manifest;
  blob.replace_extension(".bin");
  return blob;
}

void save_model(const Model& model, const std::filesystem::path& path) {
  model.validate();
  std::vector<unsigned char> blob;
  json layers = json::array();
  auto put_floats = [&blob](std::span<const float> values) {
    json ref{{"offset", blob.size()}, {"length", values.size() * 4}};
    for (float v : values) detail::put_f32_le(blob, v);
    return ref;
  };
  for (const Layer& l : model.layers()) {
    json jl{{"name", l.name},
            {"kind", std::string(to_string(l.kind))},
            {"inputs", l.inputs},
            {"kernel", l.kernel},
            {"stride", l.stride},
            {"padding", l.padding},
            {"out_channels", l.out_channels}};
    if (l.has_parameters()) {
      const Shape ws = l.weights.shape();
      json w = put_floats(l.weights.values());
      w["shape"] = {ws.n, ws.c, ws.h, ws.w};
      jl["weights"] = std::move(w);
      jl["bias"] = put_floats(l.bias);
    }
    layers.push_back(std::move(jl));
  }
  const Shape in = model.input_shape();
  const auto blob_path = model_blob_path(path);
  json manifest{{"magic", kModelMagic},
                {"name", model.meta().name},
                {"seed", model.meta().seed},
                {"config", model.meta().config_json},
                {"input_mean", model.meta().input_mean},
                {"input_shape", {in.c, in.h, in.w}},
                {"class_count", model.class_count()},
                {"blob", blob_path.filename().string()},
                {"blob_length", blob.size()},
                {"layers", std::move(layers)}};
  const std::string text = manifest.dump(2) + "\n";
  detail::write_file(path, std::span(reinterpret_cast<const unsigned char*>(text.data()),
                                     text.size()));
  detail::write_file(blob_path, blob);
}

Model load_model(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  json manifest;
  try {
    manifest = json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    corrupt(path, std::string("manifest is not valid JSON: ") + e.what());
  }
  try {
    if (!manifest.is_object() || manifest.value("magic", "") != kModelMagic) {
      corrupt(path, std::string("missing magic ") + kModelMagic);
    }
    const auto blob_path = path.parent_path() / manifest.at("blob").get<std::string>();
    const auto blob = detail::read_file(blob_path);
    const auto declared = manifest.at("blob_length").get<std::size_t>();
    if (declared != blob.size()) {
      corrupt(blob_path, "blob length " + std::to_string(blob.size()) +
                             " does not match declared " + std::to_string(declared));
    }
    auto read_floats = [&](const json& ref, std::size_t expected, const std::string& layer) {
      const auto offset = ref.at("offset").get<std::size_t>();
      const auto length = ref.at("length").get<std::size_t>();
      if (length != expected * 4 || offset > blob.size() || blob.size() - offset < length) {
        corrupt(blob_path, "parameter range for layer '" + layer + "' is inconsistent");
      }
      std::vector<float> out(expected);
      for (std::size_t i = 0; i < expected; ++i) out[i] = detail::get_f32_le(&blob[offset + 4 * i]);
      return out;
    };

    const auto in = manifest.at("input_shape").get<std::vector<std::uint32_t>>();
    if (in.size() != 3) corrupt(path, "input_shape must have 3 entries");
    ModelMeta meta{manifest.at("name").get<std::string>(),
                   manifest.at("seed").get<std::uint64_t>(),
                   manifest.at("config").get<std::string>(),
                   manifest.value("input_mean", std::vector<float>{})};
    Model model(Shape{1, in[0], in[1], in[2]}, manifest.at("class_count").get<std::uint32_t>(),
                std::move(meta));
    for (const json& jl : manifest.at("layers")) {
      Layer l;
      l.name = jl.at("name").get<std::string>();
      const auto kind_name = jl.at("kind").get<std::string>();
      const auto kind = parse_layer_kind(kind_name);
      if (!kind) {
        throw Error(ErrorCode::kUnsupported, l.name, "unsupported layer kind '" + kind_name + "'");
      }
      l.kind = *kind;
      l.inputs = jl.at("inputs").get<std::vector<std::string>>();
      l.kernel = jl.at("kernel").get<std::uint32_t>();
      l.stride = jl.at("stride").get<std::uint32_t>();
      l.padding = jl.at("padding").get<std::uint32_t>();
      l.out_channels = jl.at("out_channels").get<std::uint32_t>();
      if (l.has_parameters()) {
        const auto ws = jl.at("weights").at("shape").get<std::vector<std::uint32_t>>();
        if (ws.size() != 4) corrupt(path, "weight shape of '" + l.name + "' must have 4 entries");
        const Shape shape{ws[0], ws[1], ws[2], ws[3]};
        l.weights = Tensor(shape, read_floats(jl.at("weights"), shape.count(), l.name));
        l.bias = read_floats(jl.at("bias"), l.out_channels, l.name);
      }
      model.add(std::move(l));
    }
    model.validate();
    return model;
  } catch (const json::exception& e) {
    corrupt(path, std::string("malformed manifest: ") + e.what());
  }
}

}  // namespace rlvs
