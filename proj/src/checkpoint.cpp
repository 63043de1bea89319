#include "gknet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace gknet {

namespace {

constexpr const char* kMagic = "GKNET-CHECKPOINT";
constexpr char kTensorMagic[8] = {'G', 'K', 'T', 'E', 'N', 'S', 'O', 'R'};

static_assert(sizeof(float) == 4);

void write_floats(std::ostream& os, const float* data, std::size_t n) {
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(float)));
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      auto bits = std::bit_cast<std::uint32_t>(data[i]);
      bits = __builtin_bswap32(bits);
      os.write(reinterpret_cast<const char*>(&bits), 4);
    }
  }
}

void read_floats(std::istream& is, float* data, std::size_t n) {
  is.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * sizeof(float)));
  if constexpr (std::endian::native != std::endian::little) {
    for (std::size_t i = 0; i < n; ++i)
      data[i] = std::bit_cast<float>(__builtin_bswap32(std::bit_cast<std::uint32_t>(data[i])));
  }
}

void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4] = {};
  is.read(reinterpret_cast<char*>(b), 4);
  return b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const CheckpointData& data) {
  json header;
  header["format_version"] = kCheckpointVersion;
  header["kind"] = data.kind;
  header["network"] = data.network;
  json list = json::array();
  std::size_t offset = 0;
  for (const auto& [name, t] : data.tensors) {
    list.push_back(json{{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += t.size() * sizeof(float);
  }
  header["tensors"] = std::move(list);
  header["state"] = data.state;
  const std::string text = header.dump(1);

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    GK_CONFIG_CHECK(os.good(), "cannot write checkpoint " << path.string());
    os << kMagic << '\n' << text.size() << '\n' << text << '\n';
    for (const auto& [name, t] : data.tensors) write_floats(os, t.data(), t.size());
    GK_CONFIG_CHECK(os.good(), "failed while writing checkpoint " << path.string());
  }
  std::filesystem::rename(tmp, path);
}

CheckpointData read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  GK_CONFIG_CHECK(is.good(), "checkpoint " << path.string() << " does not exist or is unreadable");
  std::string magic, length_line;
  std::getline(is, magic);
  GK_CONFIG_CHECK(magic == kMagic, path.string() << " is not a checkpoint file");
  std::getline(is, length_line);
  std::size_t length = 0;
  try {
    length = std::stoull(length_line);
  } catch (const std::exception&) {
    throw ConfigError("corrupt checkpoint header length in " + path.string());
  }
  std::string text(length, '\0');
  is.read(text.data(), static_cast<std::streamsize>(length));
  GK_CONFIG_CHECK(is.gcount() == static_cast<std::streamsize>(length) && is.get() == '\n',
                  "truncated checkpoint header in " << path.string());
  json header;
  try {
    header = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError("corrupt checkpoint header in " + path.string() + ": " + e.what());
  }
  const int version = header.value("format_version", -1);
  GK_CONFIG_CHECK(version == kCheckpointVersion, "checkpoint format version " << version << " is not supported (expected "
                                                                             << kCheckpointVersion << ")");
  CheckpointData data;
  data.kind = header.at("kind").get<std::string>();
  data.network = header.at("network").get<NetworkConfig>();
  data.state = header.value("state", json());
  const auto data_start = is.tellg();
  for (const json& entry : header.at("tensors")) {
    Shape shape = entry.at("shape").get<Shape>();
    Tensor<float> t(shape);
    is.seekg(data_start + static_cast<std::streamoff>(entry.at("offset").get<std::size_t>()));
    read_floats(is, t.data(), t.size());
    GK_CONFIG_CHECK(is.good(), "truncated tensor data for " << entry.at("name").get<std::string>() << " in "
                                                           << path.string());
    data.tensors.emplace(entry.at("name").get<std::string>(), std::move(t));
  }
  return data;
}

void require_same_network(const NetworkConfig& expected, const NetworkConfig& found) {
  if (expected == found) return;
  const json a = expected, b = found;
  std::ostringstream os;
  os << "network configuration mismatch:";
  for (const auto& item : a.items())
    if (!b.contains(item.key()) || b.at(item.key()) != item.value())
      os << ' ' << item.key() << " (expected " << item.value().dump() << ", checkpoint "
         << (b.contains(item.key()) ? b.at(item.key()).dump() : "missing") << ")";
  throw ConfigError(os.str());
}

template <typename T>
std::map<std::string, Tensor<float>> export_parameters(const GKNet<T>& model) {
  std::map<std::string, Tensor<float>> out;
  for (const auto& [name, var] : model.parameters().all()) out.emplace(name, var.value().template cast<float>());
  return out;
}

template <typename T>
void import_parameters(GKNet<T>& model, const std::map<std::string, Tensor<float>>& tensors,
                       const std::string& prefix) {
  std::size_t matched = 0;
  for (const auto& [name, var] : model.parameters().all()) {
    auto it = tensors.find(prefix + name);
    GK_CONFIG_CHECK(it != tensors.end(), "checkpoint is missing parameter " << name);
    GK_CONFIG_CHECK(it->second.shape() == var.shape(), "parameter " << name << " has shape "
                                                                    << to_string(it->second.shape())
                                                                    << ", model expects " << to_string(var.shape()));
    Var<T> v = var;
    v.mutable_value() = it->second.template cast<T>();
    ++matched;
  }
  std::size_t available = 0;
  for (const auto& [name, _] : tensors)
    if (name.compare(0, prefix.size(), prefix) == 0) ++available;
  GK_CONFIG_CHECK(available == matched, "checkpoint has " << available - matched << " unexpected parameters");
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const GKNet<T>& model) {
  CheckpointData data;
  data.kind = "model";
  data.network = model.config();
  data.tensors = export_parameters(model);
  write_checkpoint(path, data);
}

template <typename T>
GKNet<T> load_checkpoint(const std::filesystem::path& path, const NetworkConfig* expected) {
  CheckpointData data = read_checkpoint(path);
  if (expected) require_same_network(*expected, data.network);
  GKNet<T> model(data.network, 0);
  if (data.kind == "train") {
    std::map<std::string, Tensor<float>> params;
    for (auto& [name, t] : data.tensors)
      if (name.rfind("adam.", 0) != 0) params.emplace(name, std::move(t));
    import_parameters(model, params);
  } else {
    GK_CONFIG_CHECK(data.kind == "model", "unknown checkpoint kind '" << data.kind << "'");
    import_parameters(model, data.tensors);
  }
  return model;
}

void write_tensor_file(const std::filesystem::path& path, const Tensor<float>& t) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  GK_CONFIG_CHECK(os.good(), "cannot write tensor file " << path.string());
  os.write(kTensorMagic, sizeof kTensorMagic);
  write_u32(os, 1);
  write_u32(os, static_cast<std::uint32_t>(t.rank()));
  for (int d : t.shape()) write_u32(os, static_cast<std::uint32_t>(d));
  write_floats(os, t.data(), t.size());
}

Tensor<float> read_tensor_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  GK_CONFIG_CHECK(is.good(), "cannot read tensor file " << path.string());
  char magic[8];
  is.read(magic, sizeof magic);
  GK_CONFIG_CHECK(is.good() && std::memcmp(magic, kTensorMagic, sizeof magic) == 0,
                  path.string() << " is not a tensor file");
  const std::uint32_t version = read_u32(is);
  GK_CONFIG_CHECK(version == 1, "unsupported tensor file version " << version);
  const std::uint32_t rank = read_u32(is);
  GK_CONFIG_CHECK(rank <= 8, "implausible tensor rank " << rank);
  Shape shape(rank);
  for (auto& d : shape) d = static_cast<int>(read_u32(is));
  Tensor<float> t(shape);
  read_floats(is, t.data(), t.size());
  GK_CONFIG_CHECK(is.good(), "truncated tensor file " << path.string());
  return t;
}

#define GKNET_INSTANTIATE_CHECKPOINT(T)                                                            \
  template void save_checkpoint<T>(const std::filesystem::path&, const GKNet<T>&);                 \
  template GKNet<T> load_checkpoint<T>(const std::filesystem::path&, const NetworkConfig*);        \
  template std::map<std::string, Tensor<float>> export_parameters<T>(const GKNet<T>&);             \
  template void import_parameters<T>(GKNet<T>&, const std::map<std::string, Tensor<float>>&,       \
                                     const std::string&);

GKNET_INSTANTIATE_CHECKPOINT(float)
GKNET_INSTANTIATE_CHECKPOINT(double)

}  // namespace gknet
