#include "latentshield/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <stdexcept>

#include "latentshield/version.hpp"

namespace latentshield {

static_assert(std::endian::native == std::endian::little,
              "checkpoint blob layout assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'L', 'S', 'C', 'P'};

struct NamedConstTensors {
  std::vector<std::pair<std::string, const Tensor*>> items;

  void add(const std::string& prefix, const NamedParamsConst& params) {
    for (const auto& [name, t] : params) items.emplace_back(prefix + name, t);
  }
};

std::string serialize(const json& header_in, const NamedConstTensors& tensors) {
  json header = header_in;
  json index = json::array();
  std::size_t offset = 0;
  for (const auto& [name, t] : tensors.items) {
    index.push_back({{"name", name},
                     {"shape", {t->n(), t->c(), t->h(), t->w()}},
                     {"offset", offset},
                     {"count", t->numel()}});
    offset += t->numel();
  }
  header["tensors"] = index;
  header["format_version"] = kCheckpointFormatVersion;
  const std::string htext = header.dump();

  std::string out;
  out.reserve(16 + htext.size() + offset * 4);
  out.append(kMagic, 4);
  const std::uint32_t ver = kCheckpointFormatVersion;
  out.append(reinterpret_cast<const char*>(&ver), 4);
  const std::uint64_t hlen = htext.size();
  out.append(reinterpret_cast<const char*>(&hlen), 8);
  out += htext;
  for (const auto& [name, t] : tensors.items) {
    for (std::size_t i = 0; i < t->numel(); ++i) {
      const float v = static_cast<float>((*t)[i]);
      out.append(reinterpret_cast<const char*>(&v), 4);
    }
  }
  return out;
}

struct ParsedCheckpoint {
  json header;
  std::string blob;  // float32 payload
};

ParsedCheckpoint parse(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw std::runtime_error("corrupt checkpoint (bad magic): " + path.string());
  }
  std::uint32_t ver = 0;
  std::memcpy(&ver, bytes.data() + 4, 4);
  if (ver != kCheckpointFormatVersion) {
    throw std::runtime_error("checkpoint format version mismatch: file has version " +
                             std::to_string(ver) + ", this build reads version " +
                             std::to_string(kCheckpointFormatVersion));
  }
  std::uint64_t hlen = 0;
  std::memcpy(&hlen, bytes.data() + 8, 8);
  if (bytes.size() < 16 + hlen) {
    throw std::runtime_error("corrupt checkpoint (truncated header): " + path.string());
  }
  ParsedCheckpoint out;
  try {
    out.header = json::parse(bytes.substr(16, hlen));
  } catch (const json::parse_error& e) {
    throw std::runtime_error("corrupt checkpoint (bad header JSON): " + path.string() + ": " +
                             e.what());
  }
  out.blob = bytes.substr(16 + hlen);
  return out;
}

void fill_params(const json& index, const std::string& blob, const std::string& prefix,
                 NamedParams params, const std::filesystem::path& path) {
  std::size_t filled = 0;
  for (auto& [name, t] : params) {
    const std::string full = prefix + name;
    const json* entry = nullptr;
    for (const auto& e : index) {
      if (e.at("name").get<std::string>() == full) {
        entry = &e;
        break;
      }
    }
    if (!entry) {
      throw std::runtime_error("corrupt checkpoint (missing tensor " + full + "): " +
                               path.string());
    }
    const auto shape = entry->at("shape").get<std::vector<int>>();
    if (shape.size() != 4 || shape[0] != t->n() || shape[1] != t->c() || shape[2] != t->h() ||
        shape[3] != t->w()) {
      throw std::runtime_error("checkpoint tensor " + full + " shape mismatch in " +
                               path.string());
    }
    const std::size_t offset = entry->at("offset").get<std::size_t>();
    const std::size_t count = entry->at("count").get<std::size_t>();
    if (count != t->numel() || (offset + count) * 4 > blob.size()) {
      throw std::runtime_error("corrupt checkpoint (truncated blob at " + full + "): " +
                               path.string());
    }
    for (std::size_t i = 0; i < count; ++i) {
      float v;
      std::memcpy(&v, blob.data() + (offset + i) * 4, 4);
      (*t)[i] = static_cast<double>(v);
    }
    ++filled;
  }
  // Every indexed tensor under this prefix must map onto a parameter.
  std::size_t indexed = 0;
  for (const auto& e : index) {
    if (e.at("name").get<std::string>().rfind(prefix, 0) == 0) ++indexed;
  }
  if (indexed != filled) {
    throw std::runtime_error("checkpoint has unexpected tensors under '" + prefix + "' in " +
                             path.string());
  }
}

json schedule_to_json(const NoiseSchedule& s) {
  return {{"T", s.T},
          {"kind", to_string(s.kind)},
          {"beta_start", s.beta_start},
          {"beta_end", s.beta_end}};
}

NoiseSchedule schedule_from_json(const json& j) {
  return make_schedule(j.at("T").get<int>(), j.at("beta_start").get<double>(),
                       j.at("beta_end").get<double>(),
                       schedule_kind_from_string(j.at("kind").get<std::string>()));
}

}  // namespace

void save_bundle(const std::filesystem::path& path, const LdmBundle& bundle) {
  json header = {
      {"kind", "ldm_bundle"},
      {"arch",
       {{"autoencoder", bundle.ae_arch.to_json()}, {"denoiser", bundle.dn_arch.to_json()}}},
      {"schedule", schedule_to_json(bundle.schedule)},
      {"latent_stats", bundle.latent_stats.to_json()},
      {"meta", bundle.meta.is_null() ? json::object() : bundle.meta},
  };
  NamedConstTensors tensors;
  tensors.add("encoder.", bundle.encoder.param_list());
  tensors.add("decoder.", bundle.decoder.param_list());
  tensors.add("denoiser.", bundle.denoiser.param_list());
  atomic_write_file(path, serialize(header, tensors));
}

LdmBundle load_bundle(const std::filesystem::path& path) {
  const ParsedCheckpoint pc = parse(path);
  if (pc.header.value("kind", "") != "ldm_bundle") {
    throw std::runtime_error("checkpoint kind is not ldm_bundle: " + path.string());
  }
  LdmBundle b;
  b.ae_arch = AutoencoderArch::from_json(pc.header.at("arch").at("autoencoder"));
  b.dn_arch = DenoiserArch::from_json(pc.header.at("arch").at("denoiser"));
  b.encoder = EncoderNet(b.ae_arch);
  b.decoder = DecoderNet(b.ae_arch);
  b.denoiser = DenoiserNet(b.dn_arch);
  b.schedule = schedule_from_json(pc.header.at("schedule"));
  b.latent_stats = LatentStats::from_json(pc.header.at("latent_stats"));
  b.meta = pc.header.value("meta", json::object());
  const json& index = pc.header.at("tensors");
  fill_params(index, pc.blob, "encoder.", b.encoder.param_list(), path);
  fill_params(index, pc.blob, "decoder.", b.decoder.param_list(), path);
  fill_params(index, pc.blob, "denoiser.", b.denoiser.param_list(), path);
  return b;
}

void save_pixel_bundle(const std::filesystem::path& path, const PixelDmBundle& bundle) {
  json header = {
      {"kind", "pixel_dm"},
      {"arch", {{"denoiser", bundle.arch.to_json()}}},
      {"schedule", schedule_to_json(bundle.schedule)},
      {"meta", bundle.meta.is_null() ? json::object() : bundle.meta},
  };
  NamedConstTensors tensors;
  tensors.add("denoiser.", bundle.denoiser.param_list());
  atomic_write_file(path, serialize(header, tensors));
}

PixelDmBundle load_pixel_bundle(const std::filesystem::path& path) {
  const ParsedCheckpoint pc = parse(path);
  if (pc.header.value("kind", "") != "pixel_dm") {
    throw std::runtime_error("checkpoint kind is not pixel_dm: " + path.string());
  }
  PixelDmBundle b;
  b.arch = DenoiserArch::from_json(pc.header.at("arch").at("denoiser"));
  b.denoiser = DenoiserNet(b.arch);
  b.schedule = schedule_from_json(pc.header.at("schedule"));
  b.meta = pc.header.value("meta", json::object());
  fill_params(pc.header.at("tensors"), pc.blob, "denoiser.", b.denoiser.param_list(), path);
  return b;
}

std::string peek_checkpoint_kind(const std::filesystem::path& path) {
  return parse(path).header.value("kind", "");
}

}  // namespace latentshield
