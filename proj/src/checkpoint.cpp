#include "ban/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "ban/error.hpp"

namespace ban {

namespace {

constexpr char kMagic[] = "BANCKPT1";
constexpr std::size_t kMagicLen = 8;

template <typename T>
void put_le(std::string& out, T value) {
  static_assert(std::is_unsigned_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
}

template <typename T>
T get_le(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw IoError("checkpoint truncated");
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i)
    value |= static_cast<T>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += sizeof(T);
  return value;
}

}  // namespace

std::string encode_checkpoint(const ParamSet& params) {
  std::string out(kMagic, kMagicLen);
  for (const auto& [name, t] : params) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e));
    for (auto v : t.values()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(static_cast<double>(v)));
  }
  return out;
}

ParamSet decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < kMagicLen || bytes.compare(0, kMagicLen, kMagic) != 0)
    throw IoError("not a BANCKPT1 checkpoint");
  ParamSet params;
  std::size_t pos = kMagicLen;
  while (pos < bytes.size()) {
    const auto len = get_le<std::uint32_t>(bytes, pos);
    if (pos + len > bytes.size()) throw IoError("checkpoint truncated");
    std::string name = bytes.substr(pos, len);
    pos += len;
    const auto rank = get_le<std::uint32_t>(bytes, pos);
    Shape shape;
    for (std::uint32_t r = 0; r < rank; ++r) shape.push_back(get_le<std::uint32_t>(bytes, pos));
    std::vector<Scalar> data(shape_numel(shape));
    for (auto& v : data) v = static_cast<Scalar>(std::bit_cast<double>(get_le<std::uint64_t>(bytes, pos)));
    if (!params.emplace(name, Tensor(std::move(shape), std::move(data))).second)
      throw IoError("duplicate parameter in checkpoint: " + name);
  }
  return params;
}

void save_checkpoint(const std::filesystem::path& path, const ParamSet& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  const std::string bytes = encode_checkpoint(params);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("failed writing " + path.string());
}

ParamSet load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return decode_checkpoint(ss.str());
}

}  // namespace ban
