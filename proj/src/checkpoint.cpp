#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <fmt/format.h>
#include <json.hpp>
#include <zlib.h>

#include "faithcam/model.hpp"

namespace faithcam {

namespace {

using nlohmann::json;

constexpr std::array<char, 8> kMagic = {'F', 'C', 'A', 'M', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kFormatVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename U>
void put(std::string& out, U value) {
  char bytes[sizeof(U)];
  std::memcpy(bytes, &value, sizeof(U));
  out.append(bytes, sizeof(U));
}

class Reader {
 public:
  Reader(const std::string& buf, const std::filesystem::path& path) : buf_(buf), path_(path) {}

  template <typename U>
  U get(const char* what) {
    U value;
    std::memcpy(&value, take(sizeof(U), what), sizeof(U));
    return value;
  }

  const char* take(std::size_t n, const char* what) {
    if (buf_.size() - pos_ < n) {
      throw CheckpointError(fmt::format("corrupt checkpoint {}: truncated while reading {}", path_.string(), what));
    }
    const char* p = buf_.data() + pos_;
    pos_ += n;
    return p;
  }

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return buf_.size() - pos_; }

 private:
  const std::string& buf_;
  const std::filesystem::path& path_;
  std::size_t pos_ = 0;
};

json config_to_json(const ModelConfig& c) {
  json blocks = json::array();
  for (const auto& b : c.blocks) {
    blocks.push_back({{"out_channels", b.out_channels},
                      {"kernel", b.kernel},
                      {"stride", b.stride},
                      {"padding", b.padding},
                      {"use_pool", b.use_pool}});
  }
  return {{"input_size", c.input_size},
          {"input_channels", c.input_channels},
          {"num_classes", c.num_classes},
          {"seed", c.seed},
          {"blocks", blocks}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.input_size = j.at("input_size").get<std::size_t>();
  c.input_channels = j.at("input_channels").get<std::size_t>();
  c.num_classes = j.at("num_classes").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& b : j.at("blocks")) {
    c.blocks.push_back({b.at("out_channels").get<std::size_t>(), b.at("kernel").get<std::size_t>(),
                        b.at("stride").get<std::size_t>(), b.at("padding").get<std::size_t>(),
                        b.at("use_pool").get<bool>()});
  }
  return c;
}

std::uint32_t crc_of(const char* data, std::size_t n, std::uint32_t crc = 0) {
  return static_cast<std::uint32_t>(::crc32(crc, reinterpret_cast<const Bytef*>(data), static_cast<uInt>(n)));
}

}  // namespace

template <typename T>
void save_checkpoint(const Model<T>& model, const std::filesystem::path& path) {
  json params = json::array();
  std::string payload;
  for (const auto& p : model.parameters()) {
    params.push_back({{"name", p.name}, {"shape", p.tensor.shape().dims()}});
    const auto values = p.tensor.data();
    payload.append(reinterpret_cast<const char*>(values.data()), values.size_bytes());
  }
  const json header_json = {{"config", config_to_json(model.config())},
                            {"class_names", model.class_names()},
                            {"trained_epochs", model.trained_epochs},
                            {"parameters", params}};
  const std::string header = header_json.dump();

  std::string out(kMagic.data(), kMagic.size());
  put<std::uint32_t>(out, kFormatVersion);
  put<std::uint32_t>(out, sizeof(T));
  put<std::uint64_t>(out, header.size());
  out += header;
  put<std::uint64_t>(out, payload.size());
  out += payload;
  put<std::uint32_t>(out, crc_of(payload.data(), payload.size(), crc_of(header.data(), header.size())));

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open checkpoint for writing: " + tmp.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("failed writing checkpoint: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

template <typename T>
Model<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint: " + path.string());
  const std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  Reader r(buf, path);
  if (std::memcmp(r.take(kMagic.size(), "magic"), kMagic.data(), kMagic.size()) != 0) {
    throw CheckpointError("corrupt checkpoint " + path.string() + ": bad magic");
  }
  const auto version = r.get<std::uint32_t>("version");
  if (version != kFormatVersion) {
    throw CheckpointError(fmt::format("checkpoint {} has format version {}, this build reads version {}",
                                      path.string(), version, kFormatVersion));
  }
  const auto scalar_bytes = r.get<std::uint32_t>("scalar size");
  if (scalar_bytes != sizeof(T)) {
    throw CheckpointError(fmt::format("checkpoint {} stores {}-byte scalars, expected {}", path.string(),
                                      scalar_bytes, sizeof(T)));
  }
  const auto header_len = r.get<std::uint64_t>("header length");
  const char* header_ptr = r.take(header_len, "header");
  const auto payload_len = r.get<std::uint64_t>("payload length");
  const char* payload_ptr = r.take(payload_len, "payload");
  const auto stored_crc = r.get<std::uint32_t>("checksum");
  if (r.remaining() != 0) throw CheckpointError("corrupt checkpoint " + path.string() + ": trailing bytes");
  if (crc_of(payload_ptr, payload_len, crc_of(header_ptr, header_len)) != stored_crc) {
    throw CheckpointError("corrupt checkpoint " + path.string() + ": checksum mismatch");
  }

  json header;
  try {
    header = json::parse(header_ptr, header_ptr + header_len);
  } catch (const json::exception& e) {
    throw CheckpointError("corrupt checkpoint " + path.string() + ": " + e.what());
  }

  try {
    Model<T> model(config_from_json(header.at("config")));
    model.set_class_names(header.at("class_names").get<std::vector<std::string>>());
    model.trained_epochs = header.at("trained_epochs").get<std::size_t>();
    const auto& listed = header.at("parameters");
    auto& params = model.parameters();
    if (listed.size() != params.size()) {
      throw CheckpointError(fmt::format("checkpoint {} lists {} parameters, config implies {}", path.string(),
                                        listed.size(), params.size()));
    }
    std::size_t offset = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto name = listed[i].at("name").get<std::string>();
      const auto dims = listed[i].at("shape").get<std::vector<std::size_t>>();
      if (name != params[i].name || Shape(dims) != params[i].tensor.shape()) {
        throw CheckpointError(fmt::format("checkpoint {}: parameter {} ({}) does not match config ({} {})",
                                          path.string(), i, name, params[i].name,
                                          params[i].tensor.shape().str()));
      }
      auto dst = params[i].tensor.data();
      if (offset + dst.size_bytes() > payload_len) {
        throw CheckpointError("corrupt checkpoint " + path.string() + ": payload shorter than parameters");
      }
      std::memcpy(dst.data(), payload_ptr + offset, dst.size_bytes());
      offset += dst.size_bytes();
    }
    if (offset != payload_len) {
      throw CheckpointError("corrupt checkpoint " + path.string() + ": payload longer than parameters");
    }
    return model;
  } catch (const json::exception& e) {
    throw CheckpointError("corrupt checkpoint " + path.string() + ": " + e.what());
  } catch (const ModelError& e) {
    throw CheckpointError("checkpoint " + path.string() + " holds an invalid model: " + e.what());
  }
}

template void save_checkpoint(const Model<float>&, const std::filesystem::path&);
template void save_checkpoint(const Model<double>&, const std::filesystem::path&);
template Model<float> load_checkpoint(const std::filesystem::path&);
template Model<double> load_checkpoint(const std::filesystem::path&);

}  // namespace faithcam
