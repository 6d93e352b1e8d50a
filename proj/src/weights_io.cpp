#include "ddtr/weights_io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

namespace ddtr {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[4] = {'D', 'D', 'T', 'R'};

template <typename T>
void put(std::string& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(std::begin(bytes), std::end(bytes));
  out.append(reinterpret_cast<const char*>(bytes), sizeof(T));
}

class Reader {
 public:
  Reader(std::string bytes, fs::path file) : bytes_(std::move(bytes)), file_(std::move(file)) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    unsigned char raw[sizeof(T)];
    std::memcpy(raw, bytes_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(std::begin(raw), std::end(raw));
    T value;
    std::memcpy(&value, raw, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::string text(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw WeightsError(file_.string() + ": offset " + std::to_string(pos_) + ": " + what);
  }

  std::size_t pos() const { return pos_; }
  std::size_t size() const { return bytes_.size(); }
  void seek(std::size_t p) { pos_ = p; }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) fail(std::string("truncated while reading ") + what);
  }

  std::string bytes_;
  fs::path file_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_weights(const ParameterSet& params, const fs::path& file) {
  std::string out(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kWeightsVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.items().size()));
  std::uint64_t offset = 0;
  for (const auto& p : params.items()) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
    out += p.name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.tensor.dim()));
    for (auto e : p.tensor.shape()) put<std::uint64_t>(out, e);
    put<std::uint64_t>(out, offset);
    offset += p.tensor.size() * sizeof(double);
  }
  for (const auto& p : params.items()) {
    for (double v : p.tensor.data()) put<double>(out, v);
  }
  std::ofstream f(file, std::ios::binary);
  if (!f) throw WeightsError("cannot write " + file.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw WeightsError("failed writing " + file.string());
}

void load_weights(ParameterSet& params, const fs::path& file) {
  std::ifstream f(file, std::ios::binary);
  if (!f) throw WeightsError("cannot open " + file.string());
  Reader r(std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>()), file);
  if (r.text(4, "magic") != std::string(kMagic, sizeof kMagic)) r.fail("bad magic, not a DDTR weights file");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kWeightsVersion) r.fail("unsupported version " + std::to_string(version));
  const auto count = r.get<std::uint32_t>("entry count");
  auto& items = params.items();
  if (count != items.size()) {
    r.fail("file holds " + std::to_string(count) + " tensors, model expects " + std::to_string(items.size()));
  }
  std::vector<std::uint64_t> offsets;
  for (const auto& p : items) {
    const auto len = r.get<std::uint32_t>("name length");
    const std::string name = r.text(len, "name");
    if (name != p.name) r.fail("entry '" + name + "' where the model expects '" + p.name + "'");
    const auto rank = r.get<std::uint32_t>("rank");
    Shape shape;
    for (std::uint32_t k = 0; k < rank; ++k) shape.push_back(static_cast<std::size_t>(r.get<std::uint64_t>("extent")));
    if (shape != p.tensor.shape()) {
      r.fail("tensor '" + name + "' has shape " + to_string(shape) + ", model expects " + to_string(p.tensor.shape()));
    }
    offsets.push_back(r.get<std::uint64_t>("offset"));
  }
  const std::size_t payload = r.pos();
  std::size_t total = 0;
  for (const auto& p : items) total += p.tensor.size() * sizeof(double);
  if (r.size() - payload != total) r.fail("payload holds " + std::to_string(r.size() - payload) + " bytes, expected " + std::to_string(total));
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (offsets[i] > total) r.fail("offset of '" + items[i].name + "' beyond payload");
    r.seek(payload + offsets[i]);
    for (double& v : items[i].tensor.data()) v = r.get<double>("tensor data");
  }
}

}  // namespace ddtr
