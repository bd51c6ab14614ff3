#include "forgeseg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "forgeseg/config.hpp"
#include "forgeseg/errors.hpp"
#include "forgeseg/rng.hpp"

namespace forgeseg {

static_assert(std::endian::native == std::endian::little, "checkpoint payload assumes little endian");

namespace {

using ordered_json = nlohmann::ordered_json;

constexpr char kMagic[8] = {'F', 'S', 'G', 'C', 'K', 'P', 'T', '1'};

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << v;
  return os.str();
}

std::uint64_t fnv_bytes(const char* data, std::size_t n) {
  return stable_hash(std::string_view(data, n));
}

struct Entry {
  std::string name;
  Shape shape;
  std::size_t offset = 0;  // in floats
};

ordered_json shape_json(const Shape& s) { return ordered_json::array({s.n, s.c, s.h, s.w}); }

Shape shape_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 4) throw IntegrityError("checkpoint: malformed tensor shape");
  return Shape{j[0].get<int>(), j[1].get<int>(), j[2].get<int>(), j[3].get<int>()};
}

}  // namespace

std::string DataCursor::str() const {
  return hex64(seed) + ":" + std::to_string(epoch) + ":" + std::to_string(position);
}

DataCursor DataCursor::parse(const std::string& s) {
  DataCursor c;
  const auto a = s.find(':');
  const auto b = a == std::string::npos ? a : s.find(':', a + 1);
  if (a == std::string::npos || b == std::string::npos)
    throw IntegrityError("checkpoint: malformed rng state '" + s + "'");
  try {
    c.seed = std::stoull(s.substr(0, a), nullptr, 16);
    c.epoch = std::stoll(s.substr(a + 1, b - a - 1));
    c.position = std::stoll(s.substr(b + 1));
  } catch (const std::exception&) {
    throw IntegrityError("checkpoint: malformed rng state '" + s + "'");
  }
  return c;
}

void save_checkpoint(const std::filesystem::path& path, Model<float>& model,
                     const TrainingState& state) {
  std::vector<Entry> entries;
  std::vector<const Tensor<float>*> tensors;
  std::size_t offset = 0;
  auto push = [&](const std::string& name, const Tensor<float>& t) {
    entries.push_back({name, t.shape(), offset});
    tensors.push_back(&t);
    offset += t.size();
  };
  for (const auto& p : model.parameters()) push("param/" + p.name, *p.value);
  for (const auto& b : model.buffers()) push("buffer/" + b.name, *b.value);
  for (const auto& [name, t] : state.optimizer.m) push("adam.m/" + name, t);
  for (const auto& [name, t] : state.optimizer.v) push("adam.v/" + name, t);

  std::vector<char> payload(offset * sizeof(float));
  for (std::size_t i = 0; i < tensors.size(); ++i)
    std::memcpy(payload.data() + entries[i].offset * sizeof(float), tensors[i]->data(),
                tensors[i]->size() * sizeof(float));

  ordered_json header;
  header["format"] = kCheckpointFormat;
  header["config"] = to_json(model.config());
  header["config_hash"] = model.config().hash();
  header["step"] = state.step;
  header["rng_state"] = state.cursor.str();
  header["optimizer"] = {{"kind", "adam"}, {"t", state.optimizer.t}};
  ordered_json index = ordered_json::array();
  for (const auto& e : entries)
    index.push_back({{"name", e.name}, {"shape", shape_json(e.shape)}, {"offset", e.offset}});
  header["tensors"] = std::move(index);
  header["payload_bytes"] = payload.size();
  header["payload_fnv1a"] = hex64(fnv_bytes(payload.data(), payload.size()));
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  // Write to a sibling temp file first so a crash never leaves a torn checkpoint.
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write checkpoint '" + path.string() + "'");
    const std::uint64_t len = text.size();
    os.write(kMagic, sizeof kMagic);
    os.write(reinterpret_cast<const char*>(&len), sizeof len);
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    os.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!os) throw IoError("failed writing checkpoint '" + path.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path,
                           const std::optional<std::string>& expected_config_hash) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read checkpoint '" + path.string() + "'");
  const std::string where = "checkpoint '" + path.string() + "'";

  char magic[8] = {};
  std::uint64_t len = 0;
  is.read(magic, sizeof magic);
  is.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!is || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw IntegrityError(where + ": not a forgeseg checkpoint");
  if (len > (std::uint64_t{1} << 30)) throw IntegrityError(where + ": implausible header length");
  std::string text(len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(len));
  if (!is) throw IntegrityError(where + ": truncated header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(where + ": unreadable header: " + e.what());
  }

  try {
    if (header.value("format", "") != kCheckpointFormat)
      throw IntegrityError(where + ": unsupported format '" + header.value("format", "") + "'");

    ModelConfig config;
    try {
      config = model_config_from_json(header.at("config"));
    } catch (const ValidationError& e) {
      throw IntegrityError(where + ": stored config is invalid: " + e.what());
    }
    const std::string stored_hash = header.at("config_hash").get<std::string>();
    if (config.hash() != stored_hash)
      throw IntegrityError(where + ": config hash mismatch: header records " + stored_hash +
                           " but the stored config hashes to " + config.hash());
    if (expected_config_hash && *expected_config_hash != stored_hash)
      throw IntegrityError(where + ": config hash mismatch: expected " + *expected_config_hash +
                           ", checkpoint has " + stored_hash);

    const std::size_t n_bytes = header.at("payload_bytes").get<std::size_t>();
    std::vector<char> payload(n_bytes);
    is.read(payload.data(), static_cast<std::streamsize>(n_bytes));
    if (!is || static_cast<std::size_t>(is.gcount()) != n_bytes)
      throw IntegrityError(where + ": truncated payload (config hash " + stored_hash + ")");
    if (is.peek() != std::char_traits<char>::eof())
      throw IntegrityError(where + ": trailing bytes after payload");
    const std::string checksum = hex64(fnv_bytes(payload.data(), payload.size()));
    if (checksum != header.at("payload_fnv1a").get<std::string>())
      throw IntegrityError(where + ": payload checksum mismatch (config hash " + stored_hash + ")");

    Checkpoint ck{config, Model<float>(config, 0), {}};
    ck.state.step = header.at("step").get<std::int64_t>();
    ck.state.cursor = DataCursor::parse(header.at("rng_state").get<std::string>());
    ck.state.optimizer.t = header.at("optimizer").at("t").get<std::int64_t>();

    std::map<std::string, Tensor<float>*> targets;
    for (auto& p : ck.model.parameters()) targets["param/" + p.name] = p.value;
    for (auto& b : ck.model.buffers()) targets["buffer/" + b.name] = b.value;

    std::size_t restored = 0;
    for (const auto& e : header.at("tensors")) {
      const std::string name = e.at("name").get<std::string>();
      const Shape shape = shape_from_json(e.at("shape"));
      const std::size_t off = e.at("offset").get<std::size_t>();
      if ((off + shape.numel()) * sizeof(float) > n_bytes)
        throw IntegrityError(where + ": tensor " + name + " overruns the payload");
      const char* src = payload.data() + off * sizeof(float);

      Tensor<float>* dst = nullptr;
      Tensor<float> fresh(shape);
      if (auto it = targets.find(name); it != targets.end()) {
        dst = it->second;
        if (!(dst->shape() == shape))
          throw IntegrityError(where + ": tensor " + name + " has shape " + shape.str() +
                               ", model expects " + dst->shape().str());
        ++restored;
      } else if (name.rfind("adam.m/", 0) == 0) {
        dst = &ck.state.optimizer.m.emplace(name.substr(7), std::move(fresh)).first->second;
      } else if (name.rfind("adam.v/", 0) == 0) {
        dst = &ck.state.optimizer.v.emplace(name.substr(7), std::move(fresh)).first->second;
      } else {
        throw IntegrityError(where + ": unexpected tensor " + name);
      }
      std::memcpy(dst->data(), src, shape.numel() * sizeof(float));
    }
    if (restored != targets.size())
      throw IntegrityError(where + ": " + std::to_string(targets.size() - restored) +
                           " model tensors missing");
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(where + ": malformed header: " + e.what());
  }
}

}  // namespace forgeseg
