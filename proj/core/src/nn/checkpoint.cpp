#include "maskshape/nn/checkpoint.hpp"

#include "maskshape/sfmt.hpp"

#include <json.hpp>

#include <map>
#include <stdexcept>

namespace maskshape::nn {

namespace {

using nlohmann::json;

constexpr const char* kManifest = "checkpoint.json";

SfmtBlob to_blob(const Tensor<float>& t)
{
    SfmtBlob blob;
    blob.dtype = SfmtDtype::F32;
    blob.dims.assign(t.shape().begin(), t.shape().end());
    blob.values.assign(t.data(), t.data() + t.size());
    return blob;
}

struct NamedTensor
{
    std::string name;
    std::string role;
    Tensor<float>* tensor;
};

std::vector<NamedTensor> named_tensors(Layer<float>& net)
{
    std::vector<NamedTensor> out;
    for (auto* p : net.parameters()) {
        out.push_back({p->name, "parameter", &p->value});
    }
    for (auto& b : net.buffers()) {
        out.push_back({b.name, "buffer", b.tensor});
    }
    std::map<std::string, int> seen;
    for (const auto& t : out) {
        if (t.name.empty() || seen[t.name]++ > 0) {
            throw std::logic_error("checkpoint tensor names must be unique and non-empty ('" + t.name + "')");
        }
    }
    return out;
}

json read_manifest(const std::filesystem::path& dir)
{
    json manifest = json::parse(read_text_file(dir / kManifest));
    if (manifest.value("format", "") != "maskshape-checkpoint") {
        throw std::runtime_error("not a checkpoint: " + (dir / kManifest).string());
    }
    return manifest;
}

} // namespace

void save_checkpoint(const std::filesystem::path& dir, Layer<float>& net, const std::string& architecture_json)
{
    json manifest;
    manifest["format"] = "maskshape-checkpoint";
    manifest["version"] = 1;
    manifest["architecture"] = json::parse(architecture_json);
    json tensors = json::array();
    for (const auto& t : named_tensors(net)) {
        const std::string file = t.name + ".sfmt";
        write_sfmt(dir / file, to_blob(*t.tensor));
        tensors.push_back({{"name", t.name}, {"role", t.role}, {"file", file}, {"shape", t.tensor->shape()}});
    }
    manifest["tensors"] = tensors;
    write_text_file(dir / kManifest, manifest.dump(2) + "\n");
}

std::string load_checkpoint(const std::filesystem::path& dir, Layer<float>& net)
{
    const json manifest = read_manifest(dir);
    std::map<std::string, json> entries;
    for (const auto& e : manifest.at("tensors")) {
        entries[e.at("name").get<std::string>()] = e;
    }
    const auto targets = named_tensors(net);
    if (entries.size() != targets.size()) {
        throw std::runtime_error("checkpoint holds " + std::to_string(entries.size()) + " tensors, network expects " +
                                 std::to_string(targets.size()));
    }
    for (const auto& t : targets) {
        auto it = entries.find(t.name);
        if (it == entries.end()) {
            throw std::runtime_error("checkpoint is missing tensor " + t.name);
        }
        const SfmtBlob blob = read_sfmt(dir / it->second.at("file").get<std::string>());
        const std::vector<std::size_t> shape(blob.dims.begin(), blob.dims.end());
        if (shape != t.tensor->shape()) {
            throw std::runtime_error("checkpoint tensor " + t.name + " has shape " + shape_string(shape) +
                                     ", network expects " + shape_string(t.tensor->shape()));
        }
        for (std::size_t i = 0; i < blob.values.size(); ++i) {
            (*t.tensor)[i] = static_cast<float>(blob.values[i]);
        }
    }
    return manifest.at("architecture").dump();
}

std::string read_checkpoint_architecture(const std::filesystem::path& dir)
{
    return read_manifest(dir).at("architecture").dump();
}

} // namespace maskshape::nn
