#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "gaisim/harness.hpp"
#include "json.hpp"

namespace gaisim {

namespace {

constexpr char kMagic[4] = {'G', 'A', 'I', '1'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void put_f64(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

double get_f64(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, Tensor*>>& params) {
  nlohmann::json manifest = nlohmann::json::array();
  for (const auto& [name, t] : params) {
    nlohmann::json entry;
    entry["name"] = name;
    entry["dtype"] = "f64";
    entry["dims"] = t->shape;
    manifest.push_back(std::move(entry));
  }
  std::string mtext = manifest.dump();

  std::string blob;
  blob.append(kMagic, 4);
  put_u32(blob, static_cast<std::uint32_t>(mtext.size()));
  blob += mtext;
  for (const auto& [name, t] : params)
    for (double v : t->data) put_f64(blob, v);

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!f) throw std::runtime_error("write failed for " + path);
}

void load_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, Tensor*>>& params) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path);
  std::vector<unsigned char> raw((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  if (raw.size() < 8 || std::memcmp(raw.data(), kMagic, 4) != 0)
    throw std::runtime_error(path + ": not a checkpoint file");
  std::uint32_t mlen = get_u32(raw.data() + 4);
  if (raw.size() < 8 + static_cast<std::size_t>(mlen))
    throw std::runtime_error(path + ": truncated manifest");

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(raw.begin() + 8, raw.begin() + 8 + mlen);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path + ": bad manifest: " + e.what());
  }
  if (!manifest.is_array() || manifest.size() != params.size())
    throw std::runtime_error(path + ": checkpoint holds " + std::to_string(manifest.size()) +
                             " tensors, model has " + std::to_string(params.size()));

  std::size_t offset = 8 + mlen;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& [name, t] = params[i];
    const nlohmann::json& entry = manifest[i];
    if (entry.value("name", "") != name)
      throw std::runtime_error(path + ": tensor " + std::to_string(i) + " is '" +
                               entry.value("name", "") + "', expected '" + name + "'");
    if (entry.value("dtype", "") != "f64")
      throw std::runtime_error(path + ": unsupported dtype for " + name);
    std::vector<int> dims = entry.value("dims", std::vector<int>{});
    if (dims != t->shape)
      throw std::runtime_error(path + ": shape mismatch for " + name);
    std::size_t bytes = t->data.size() * 8;
    if (raw.size() < offset + bytes) throw std::runtime_error(path + ": truncated payload");
    for (std::size_t j = 0; j < t->data.size(); ++j)
      t->data[j] = get_f64(raw.data() + offset + 8 * j);
    offset += bytes;
  }
  if (offset != raw.size()) throw std::runtime_error(path + ": trailing bytes after payload");
}

}  // namespace gaisim
