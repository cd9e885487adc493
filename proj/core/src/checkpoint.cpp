#include "stonet/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

#include "stonet/errors.hpp"

namespace stonet {

namespace {

template <typename U>
void put_le(std::string& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out.push_back(static_cast<char>((value >> (8 * i)) & 0xff));
  }
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename U>
  U get_le() {
    need(sizeof(U));
    U value = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      value |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return value;
  }

  std::string get_bytes(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw DataError("checkpoint truncated");
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_tensors(const ParameterList& params) {
  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  out.push_back(static_cast<char>(kCheckpointVersion));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
    out += p.name;
    const auto& shape = p.tensor.shape();
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(shape.size()));
    for (auto d : shape) put_le<std::uint64_t>(out, d);
    for (double v : p.tensor.data()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

ParameterList deserialize_tensors(const std::string& bytes) {
  Reader in(bytes);
  if (in.get_bytes(sizeof(kCheckpointMagic)) !=
      std::string(kCheckpointMagic, sizeof(kCheckpointMagic))) {
    throw DataError("not a checkpoint: bad magic");
  }
  const auto version = in.get_le<std::uint8_t>();
  if (version != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = in.get_le<std::uint32_t>();
  ParameterList out;
  for (std::uint32_t r = 0; r < count; ++r) {
    std::string name = in.get_bytes(in.get_le<std::uint32_t>());
    const auto rank = in.get_le<std::uint32_t>();
    Shape shape(rank);
    for (auto& d : shape) d = in.get_le<std::uint64_t>();
    std::vector<double> data(shape_numel(shape));
    for (auto& v : data) v = std::bit_cast<double>(in.get_le<std::uint64_t>());
    Tensor t(std::move(shape), std::move(data));
    t.set_name(name);
    out.push_back({std::move(name), std::move(t)});
  }
  if (!in.done()) throw DataError("checkpoint has trailing bytes");
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const ParameterList& params) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write checkpoint " + path.string());
  const std::string bytes = serialize_tensors(params);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw DataError("failed writing checkpoint " + path.string());
}

ParameterList load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot read checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return deserialize_tensors(bytes);
}

void assign_parameters(const ParameterList& target, const ParameterList& source) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& s : source) by_name[s.name] = &s.tensor;
  for (const auto& t : target) {
    auto it = by_name.find(t.name);
    if (it == by_name.end()) throw DataError("checkpoint lacks parameter '" + t.name + "'");
    if (it->second->shape() != t.tensor.shape()) {
      throw DataError("parameter '" + t.name + "' has shape " + shape_str(it->second->shape()) +
                      " in checkpoint, expected " + shape_str(t.tensor.shape()));
    }
    auto dst = Tensor(t.tensor).mutable_data();
    auto src = it->second->data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

ParameterList snapshot(const ParameterList& params) {
  ParameterList out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back({p.name, p.tensor.detach()});
  return out;
}

}  // namespace stonet
