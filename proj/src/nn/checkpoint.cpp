#include "kdbd/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

namespace kdbd::nn {
namespace {

static_assert(std::numeric_limits<float>::is_iec559, "checkpoint format needs IEEE-754 floats");

constexpr char kMagic[4] = {'K', 'D', 'B', 'L'};

template <typename U>
void put_le(std::string& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out.push_back(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xff));
  }
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  bool done() const { return pos_ == bytes_.size(); }

  template <typename U>
  U get(const char* what) {
    need(sizeof(U), what);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return static_cast<U>(v);
  }

  std::string get_string(const char* what) {
    const auto n = get<std::uint32_t>(what);
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw IoError(std::string("checkpoint truncated while reading ") + what + " at byte " +
                    std::to_string(pos_));
    }
  }

  std::size_t pos() const { return pos_; }
  void skip(std::size_t n) { pos_ += n; }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string checkpoint_bytes(const NetworkParams<float>& params) {
  std::string out(kMagic, 4);
  put_le<std::uint32_t>(out, kCheckpointVersion);
  const std::string desc = params.arch.canonical() + ";role=" + std::string(role_name(params.role));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(desc.size()));
  out += desc;
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    const auto& name = params.names[i];
    const auto& t = params.tensors[i];
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) put_le<std::uint64_t>(out, e);
    for (float v : t.data()) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

NetworkParams<float> parse_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  r.need(4, "magic");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw IoError("not a KDBL checkpoint (bad magic)");
  r.skip(4);
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  }
  std::string desc = r.get_string("descriptor");
  const auto role_pos = desc.rfind(";role=");
  if (role_pos == std::string::npos) throw IoError("checkpoint descriptor lacks a role");
  const Role role = parse_role(std::string_view(desc).substr(role_pos + 6));
  const ArchSpec arch = ArchSpec::parse(std::string_view(desc).substr(0, role_pos));

  auto params = zero_network<float>(arch, role);
  std::size_t index = 0;
  while (!r.done()) {
    if (index >= params.tensors.size()) throw IoError("checkpoint has more tensors than its architecture");
    const std::string name = r.get_string("tensor name");
    if (name != params.names[index]) {
      throw IoError("checkpoint tensor " + std::to_string(index) + " is '" + name + "', expected '" +
                    params.names[index] + "'");
    }
    const auto rank = r.get<std::uint32_t>("rank");
    std::vector<std::size_t> shape(rank);
    for (auto& e : shape) e = static_cast<std::size_t>(r.get<std::uint64_t>("extent"));
    auto& t = params.tensors[index];
    if (shape != t.shape()) {
      throw IoError("checkpoint tensor '" + name + "' has shape " + shape_to_string(shape) +
                    ", expected " + shape_to_string(t.shape()));
    }
    for (float& v : t.data()) v = std::bit_cast<float>(r.get<std::uint32_t>("tensor values"));
    ++index;
  }
  if (index != params.tensors.size()) {
    throw IoError("checkpoint holds " + std::to_string(index) + " tensors, expected " +
                  std::to_string(params.tensors.size()));
  }
  params.touch();
  return params;
}

void save_checkpoint(const NetworkParams<float>& params, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path.string());
  const std::string bytes = checkpoint_bytes(params);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing checkpoint: " + path.string());
}

NetworkParams<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return parse_checkpoint(bytes);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

}  // namespace kdbd::nn
