#include "lungsam/model_adapter.hpp"

#include <cstdlib>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>

#include "lungsam/io.hpp"
#include "lungsam/stub_model.hpp"

namespace lungsam {

namespace {
constexpr char kMagic[8] = {'L', 'S', 'A', 'M', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kFormatVersion = 1;
constexpr std::size_t kDigestBytes = 32;

void append_bytes(std::string& out, const void* data, std::size_t n) { out.append(static_cast<const char*>(data), n); }

template <typename T>
T read_le(const std::string& bytes, std::size_t offset) {
  T value{};
  std::memcpy(&value, bytes.data() + offset, sizeof(T));
  return value;
}
}  // namespace

std::string_view to_string(ModelComponent component) {
  switch (component) {
    case ModelComponent::image_encoder: return "image_encoder";
    case ModelComponent::prompt_encoder: return "prompt_encoder";
    case ModelComponent::mask_decoder: return "mask_decoder";
  }
  return "unknown";
}

ModelComponent parse_component(std::string_view name) {
  if (name == "image_encoder") return ModelComponent::image_encoder;
  if (name == "prompt_encoder") return ModelComponent::prompt_encoder;
  if (name == "mask_decoder") return ModelComponent::mask_decoder;
  throw std::invalid_argument("unknown model component '" + std::string(name) + "'");
}

SegModelHandle::SegModelHandle(std::unique_ptr<SegModel> model, std::string checkpoint_id)
    : model_(std::move(model)), checkpoint_id_(std::move(checkpoint_id)) {
  if (!model_) throw std::invalid_argument("SegModelHandle: null model");
}

SegModelHandle::SegModelHandle(const SegModelHandle& other)
    : model_(other.model_->clone()), checkpoint_id_(other.checkpoint_id_) {}

SegModelHandle& SegModelHandle::operator=(const SegModelHandle& other) {
  if (this != &other) {
    model_ = other.model_->clone();
    checkpoint_id_ = other.checkpoint_id_;
  }
  return *this;
}

ParameterCensus SegModelHandle::census() const {
  ParameterCensus census;
  for (const auto& p : model_->parameters()) {
    census.n_total += p.values.size();
    if (p.component == ModelComponent::mask_decoder) census.n_trainable += p.values.size();
  }
  return census;
}

std::string checkpoint_instructions() {
  return "No usable model checkpoint.\n"
         "  * Point SEG_CHECKPOINT (or model.checkpoint in the config) at a lungsam checkpoint file (.lsam),\n"
         "    e.g. one written by `lungsam export-checkpoint --checkpoint stub --out model.lsam`.\n"
         "  * Use the checkpoint id 'stub' (or 'stub:<seed>') for the bundled test model.\n"
         "  * The original SAM ViT-B weights are published at\n"
         "    https://dl.fbaipublicfiles.com/segment_anything/sam_vit_b_01ec64.pth ; this build has no\n"
         "    inference backend for them (see README, 'Model backends').";
}

void save_checkpoint(const SegModelHandle& handle, const fs::path& path, std::string_view metadata_json) {
  const auto& params = handle.model().parameters();
  nlohmann::ordered_json header;
  header["architecture"] = handle.model().architecture();
  header["source"] = handle.checkpoint_id();
  header["metadata"] = nlohmann::json::parse(metadata_json);
  auto& tensors = header["tensors"];
  tensors = nlohmann::ordered_json::array();
  for (const auto& p : params) {
    tensors.push_back({{"name", p.name}, {"component", to_string(p.component)}, {"shape", p.shape}});
  }
  const std::string header_text = header.dump();

  std::string bytes;
  append_bytes(bytes, kMagic, sizeof(kMagic));
  append_bytes(bytes, &kFormatVersion, sizeof(kFormatVersion));
  const std::uint64_t header_len = header_text.size();
  append_bytes(bytes, &header_len, sizeof(header_len));
  bytes += header_text;
  for (const auto& p : params) append_bytes(bytes, p.values.data(), p.values.size() * sizeof(double));
  const std::string digest = sha256_hex({reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size()});
  bytes += digest.substr(0, 2 * kDigestBytes);
  write_text(path, bytes);
}

namespace {

SegModelHandle load_checkpoint_file(const fs::path& path, std::string_view expected_sha256) {
  if (!fs::is_regular_file(path)) {
    throw CheckpointError("checkpoint not found: " + path.string() + "\n" + checkpoint_instructions());
  }
  const std::string bytes = read_text(path);
  if (!expected_sha256.empty()) {
    const std::string actual = sha256_hex({reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size()});
    if (actual != expected_sha256) {
      throw CheckpointError("checkpoint checksum mismatch for " + path.string() + ": expected " + std::string(expected_sha256) +
                            ", got " + actual);
    }
  }
  const std::size_t trailer = 2 * kDigestBytes;
  const std::size_t prefix = sizeof(kMagic) + sizeof(std::uint32_t) + sizeof(std::uint64_t);
  if (bytes.size() < prefix + trailer || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError("not a lungsam checkpoint: " + path.string() + "\n" + checkpoint_instructions());
  }
  const std::string body = bytes.substr(0, bytes.size() - trailer);
  if (sha256_hex({reinterpret_cast<const unsigned char*>(body.data()), body.size()}) != bytes.substr(bytes.size() - trailer)) {
    throw CheckpointError("checkpoint checksum error (file is corrupt): " + path.string());
  }
  if (read_le<std::uint32_t>(body, sizeof(kMagic)) != kFormatVersion) {
    throw CheckpointError("unsupported checkpoint format version in " + path.string());
  }
  const auto header_len = read_le<std::uint64_t>(body, sizeof(kMagic) + sizeof(std::uint32_t));
  if (prefix + header_len > body.size()) throw CheckpointError("truncated checkpoint header: " + path.string());
  const auto header = nlohmann::json::parse(body.substr(prefix, header_len));
  const std::string architecture = header.at("architecture").get<std::string>();
  if (architecture != StubModel::kArchitecture) {
    throw CheckpointError("checkpoint architecture '" + architecture + "' has no backend in this build\n" + checkpoint_instructions());
  }

  std::vector<Parameter> params;
  std::size_t offset = prefix + header_len;
  for (const auto& t : header.at("tensors")) {
    Parameter p;
    p.name = t.at("name").get<std::string>();
    p.component = parse_component(t.at("component").get<std::string>());
    p.shape = t.at("shape").get<std::vector<int>>();
    std::size_t n = 1;
    for (int d : p.shape) n *= static_cast<std::size_t>(d);
    if (offset + n * sizeof(double) > body.size()) throw CheckpointError("truncated checkpoint data: " + path.string());
    p.values.resize(n);
    std::memcpy(p.values.data(), body.data() + offset, n * sizeof(double));
    offset += n * sizeof(double);
    params.push_back(std::move(p));
  }
  if (offset != body.size()) throw CheckpointError("trailing bytes in checkpoint: " + path.string());
  return SegModelHandle(StubModel::from_parameters(std::move(params)), path.string());
}

}  // namespace

SegModelHandle load_model(std::string_view checkpoint_id, std::string_view expected_sha256) {
  std::string id(checkpoint_id);
  if (id.empty()) {
    const char* env = std::getenv("SEG_CHECKPOINT");
    if (!env || !*env) throw CheckpointError(checkpoint_instructions());
    id = env;
  }
  if (id == "stub" || id.rfind("stub:", 0) == 0) {
    std::uint64_t seed = 0;
    if (id.size() > 5) {
      try {
        seed = std::stoull(id.substr(5));
      } catch (const std::exception&) {
        throw CheckpointError("bad stub checkpoint id '" + id + "' (expected stub or stub:<seed>)");
      }
    }
    return SegModelHandle(StubModel::create(seed), id);
  }
  return load_checkpoint_file(id, expected_sha256);
}

std::vector<ParameterView> trainable_parameters(SegModelHandle& handle) {
  std::vector<ParameterView> views;
  for (auto& p : handle.model().parameters()) {
    if (p.component == ModelComponent::mask_decoder) views.push_back({p.name, p.values});
  }
  return views;
}

SoftMask predict(const SegModelHandle& handle, const ImageEmbedding& embedding, const std::string& sample_id,
                 const PromptSet& prompts) {
  if (prompts.empty()) throw std::invalid_argument("predict: empty prompt set (unprompted segmentation is not supported)");
  prompts.validate(handle.input_resolution());
  SoftMask out;
  out.probs = handle.model().forward(embedding, prompts);
  out.sample_id = sample_id;
  out.prompt_mode = prompts.mode;
  return out;
}

SoftMask predict(const SegModelHandle& handle, const ImageSample& sample, const PromptSet& prompts) {
  if (prompts.empty()) throw std::invalid_argument("predict: empty prompt set (unprompted segmentation is not supported)");
  return predict(handle, handle.model().encode(sample.image), sample.id, prompts);
}

}  // namespace lungsam
