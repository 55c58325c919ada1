#include "avatarforge/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <fmt/format.h>

namespace avatarforge::ad {

namespace {

constexpr char kMagic[4] = {'A', 'V', 'F', 'W'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

class Reader {
 public:
  explicit Reader(std::string bytes) : bytes_(std::move(bytes)) {}
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n)
      throw Error(ErrorCode::kTruncated, fmt::format("checkpoint ends at byte {} (needed {} more)", bytes_.size(), n));
  }
  std::string bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const ParamStore& params, const std::filesystem::path& path) {
  std::string out(kMagic, 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(params.entries().size()));
  for (const auto& [name, t] : params.entries()) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (int d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : t.values()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::kIo, fmt::format("cannot write {}", path.string()));
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw Error(ErrorCode::kIo, fmt::format("write failed for {}", path.string()));
}

std::vector<NamedArray> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::kIo, fmt::format("cannot read {}", path.string()));
  Reader r(std::string(std::istreambuf_iterator<char>(f), {}));
  if (r.str(4) != std::string(kMagic, 4)) throw Error(ErrorCode::kParse, "not a weights.bin checkpoint");
  if (const auto version = r.u32(); version != kCheckpointVersion)
    throw Error(ErrorCode::kUnsupportedFormat, fmt::format("checkpoint version {}", version));
  const std::uint32_t count = r.u32();
  std::vector<NamedArray> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray a;
    a.name = r.str(r.u32());
    const std::uint32_t rank = r.u32();
    for (std::uint32_t d = 0; d < rank; ++d) a.shape.push_back(static_cast<int>(r.u32()));
    a.data.resize(numel(a.shape));
    for (float& v : a.data) v = std::bit_cast<float>(r.u32());
    out.push_back(std::move(a));
  }
  if (!r.done()) throw Error(ErrorCode::kParse, "trailing bytes after checkpoint payload");
  return out;
}

void load_checkpoint(ParamStore& params, const std::filesystem::path& path) {
  const auto arrays = read_checkpoint(path);
  if (arrays.size() != params.entries().size())
    throw Error(ErrorCode::kShapeMismatch,
                fmt::format("checkpoint has {} tensors, model has {}", arrays.size(), params.entries().size()));
  for (std::size_t i = 0; i < arrays.size(); ++i) {
    Tensor t = params.entries()[i].second;
    const auto& name = params.entries()[i].first;
    if (arrays[i].name != name || arrays[i].shape != t.shape())
      throw Error(ErrorCode::kShapeMismatch,
                  fmt::format("checkpoint tensor {} {} does not match {} {}", arrays[i].name,
                              shape_str(arrays[i].shape), name, shape_str(t.shape())));
    auto v = t.mutable_values();
    for (std::size_t k = 0; k < v.size(); ++k) v[k] = arrays[i].data[k];
  }
}

}  // namespace avatarforge::ad
