#include "semaforge/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "semaforge/errors.hpp"

namespace semaforge {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

template <class T>
void put(std::string& out, T v) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  out.append(bytes, sizeof(T));
}

class Reader {
 public:
  Reader(std::string data, std::string origin) : data_(std::move(data)), origin_(std::move(origin)) {}

  template <class T>
  T get(const char* what) {
    T v;
    need(sizeof(T), what);
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n, const char* what) {
    if (data_.size() - pos_ < n) {
      throw FormatError(origin_ + ": truncated checkpoint while reading " + what);
    }
  }
  std::string data_;
  std::string origin_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_tensors(const std::vector<NamedTensor>& tensors) {
  std::string out = "SFCK";
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, tensors.size());
  for (const NamedTensor& t : tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    out += t.name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.tensor.rank()));
    for (std::size_t d : t.tensor.shape()) put<std::uint64_t>(out, d);
    auto v = t.tensor.values();
    out.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  const std::string bytes = serialize_tensors(tensors);
  // Write-then-rename so a reader never sees a partial file.
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename '" + tmp.string() + "' to '" + path.string() + "': " + ec.message());
}

std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  Reader r(buf.str(), path.string());

  if (r.bytes(4, "magic") != "SFCK") throw FormatError(path.string() + ": not a checkpoint file");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw FormatError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = r.get<std::uint64_t>("tensor count");
  std::vector<NamedTensor> out;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = r.get<std::uint32_t>("name length");
    std::string name = r.bytes(name_len, "name");
    const auto rank = r.get<std::uint32_t>("rank");
    Shape shape(rank);
    for (auto& d : shape) d = r.get<std::uint64_t>("dimension");
    const std::size_t n = shape_numel(shape);
    const std::string raw = r.bytes(n * sizeof(double), "tensor data");
    std::vector<double> values(n);
    std::memcpy(values.data(), raw.data(), raw.size());
    out.push_back({std::move(name), Tensor(std::move(shape), std::move(values))});
  }
  if (!r.done()) throw FormatError(path.string() + ": trailing bytes after the last tensor");
  return out;
}

void load_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& into) {
  std::map<std::string, Tensor> stored;
  for (NamedTensor& t : read_checkpoint(path)) stored.emplace(t.name, t.tensor);
  for (const NamedTensor& target : into) {
    auto it = stored.find(target.name);
    if (it == stored.end()) {
      throw FormatError(path.string() + ": missing tensor '" + target.name + "'");
    }
    if (it->second.shape() != target.tensor.shape()) {
      throw FormatError(path.string() + ": tensor '" + target.name + "' has shape " +
                        shape_str(it->second.shape()) + ", expected " +
                        shape_str(target.tensor.shape()));
    }
  }
  if (stored.size() != into.size()) {
    throw FormatError(path.string() + ": holds " + std::to_string(stored.size()) +
                      " tensors, model expects " + std::to_string(into.size()));
  }
  for (const NamedTensor& target : into) {
    auto src = stored.at(target.name).values();
    Tensor t = target.tensor;
    auto dst = t.mutable_values();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

}  // namespace semaforge
