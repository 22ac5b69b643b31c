#include "cyclead/container.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <openssl/evp.h>

#include "cyclead/error.hpp"

namespace cyclead {

static_assert(std::endian::native == std::endian::little, "container payloads are little-endian");

namespace {

constexpr std::array<char, 8> kMagic{'C', 'Y', 'C', 'L', 'E', 'A', 'D', '\x01'};
constexpr std::uint32_t kContainerVersion = 1;

template <typename U>
void put(std::ostream& out, U v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <typename U>
U get(std::istream& in, const std::filesystem::path& path) {
  U v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(U))) throw DataError("truncated container: " + path.string());
  return v;
}

}  // namespace

const Tensor<float>& Container::tensor(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw DataError("container has no tensor named '" + name + "'");
}

bool Container::has(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return true;
  }
  return false;
}

void write_container(const std::filesystem::path& path, const Container& c) {
  nlohmann::json header = c.meta;
  nlohmann::json index = nlohmann::json::array();
  for (const auto& [name, t] : c.tensors) {
    const Shape& s = t.shape();
    index.push_back({{"name", name}, {"shape", {s.n, s.c, s.h, s.w}}});
  }
  header["tensors"] = index;
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out.write(kMagic.data(), kMagic.size());
    put<std::uint32_t>(out, kContainerVersion);
    put<std::uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, t] : c.tensors) {
      out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
    }
    if (!out) throw DataError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Container read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::array<char, 8> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) {
    throw DataError("not a cyclead container: " + path.string());
  }
  const auto version = get<std::uint32_t>(in, path);
  if (version != kContainerVersion) {
    throw DataError("unsupported container version " + std::to_string(version) + " in " + path.string());
  }
  const auto len = get<std::uint64_t>(in, path);
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw DataError("truncated container: " + path.string());

  Container c;
  try {
    c.meta = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("corrupt container header in " + path.string() + ": " + e.what());
  }
  for (const auto& entry : c.meta.at("tensors")) {
    const auto dims = entry.at("shape").get<std::vector<int>>();
    if (dims.size() != 4) throw DataError("bad tensor shape in " + path.string());
    Tensor<float> t(Shape{dims[0], dims[1], dims[2], dims[3]});
    if (!in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)))) {
      throw DataError("truncated tensor payload in " + path.string());
    }
    c.tensors.emplace_back(entry.at("name").get<std::string>(), std::move(t));
  }
  c.meta.erase("tensors");
  return c;
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int md_len = 0;
  EVP_DigestFinal_ex(ctx, md.data(), &md_len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream hex;
  for (unsigned int i = 0; i < md_len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return hex.str();
}

}  // namespace cyclead
