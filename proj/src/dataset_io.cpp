#include "ddtr/dataset_io.hpp"

#include <cctype>
#include <fstream>
#include <iterator>
#include <sstream>

#include <json.hpp>

namespace ddtr {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

[[noreturn]] void fail(const fs::path& file, const std::string& where, const std::string& what) {
  throw DatasetError(file.string() + ":" + where + ": " + what);
}

struct PgmCursor {
  const std::string& bytes;
  const fs::path& file;
  std::size_t pos = 0;

  void skip_space() {
    while (pos < bytes.size()) {
      const char c = bytes[pos];
      if (c == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos;
      } else {
        break;
      }
    }
  }

  std::size_t number(const char* field) {
    skip_space();
    const std::size_t start = pos;
    std::size_t v = 0;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      v = v * 10 + static_cast<std::size_t>(bytes[pos] - '0');
      if (v > 1u << 20) fail(file, "offset " + std::to_string(start), std::string(field) + " is too large");
      ++pos;
    }
    if (pos == start) fail(file, "offset " + std::to_string(start), std::string("expected ") + field);
    return v;
  }
};

}  // namespace

void write_pgm(const RowMatrix& pixels, const fs::path& file) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + file.string());
  out << "P5\n" << pixels.cols() << ' ' << pixels.rows() << "\n255\n";
  std::string row(static_cast<std::size_t>(pixels.cols()), '\0');
  for (Eigen::Index i = 0; i < pixels.rows(); ++i) {
    for (Eigen::Index j = 0; j < pixels.cols(); ++j) {
      row[static_cast<std::size_t>(j)] = static_cast<char>(static_cast<unsigned char>(quantize_pixel(pixels(i, j)) * 255.0 + 0.5));
    }
    out.write(row.data(), static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw std::runtime_error("failed writing " + file.string());
}

RowMatrix read_pgm(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw DatasetError(file.string() + ": cannot open image");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') fail(file, "offset 0", "not a binary PGM (P5) file");
  PgmCursor cur{bytes, file, 2};
  const std::size_t width = cur.number("width");
  const std::size_t height = cur.number("height");
  const std::size_t maxval = cur.number("maxval");
  if (width == 0 || height == 0) fail(file, "offset " + std::to_string(cur.pos), "image extents must be positive");
  if (maxval != 255) fail(file, "offset " + std::to_string(cur.pos), "maxval must be 255, got " + std::to_string(maxval));
  if (cur.pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[cur.pos]))) {
    fail(file, "offset " + std::to_string(cur.pos), "missing whitespace before pixel data");
  }
  ++cur.pos;
  const std::size_t need = width * height;
  if (bytes.size() - cur.pos != need) {
    fail(file, "offset " + std::to_string(cur.pos),
         "expected " + std::to_string(need) + " pixel bytes, found " + std::to_string(bytes.size() - cur.pos));
  }
  RowMatrix pixels(static_cast<Eigen::Index>(height), static_cast<Eigen::Index>(width));
  for (std::size_t k = 0; k < need; ++k) {
    pixels.data()[k] = static_cast<double>(static_cast<unsigned char>(bytes[cur.pos + k])) / 255.0;
  }
  return pixels;
}

void write_dataset(const std::vector<AnnotatedImage>& images, const fs::path& directory) {
  fs::create_directories(directory);
  std::ofstream ann(directory / kAnnotationFile, std::ios::binary);
  if (!ann) throw std::runtime_error("cannot write " + (directory / kAnnotationFile).string());
  for (const auto& image : images) {
    if (image.name.empty() || image.name.find('/') != std::string::npos) {
      throw std::invalid_argument("dataset: image name '" + image.name + "' is not a plain file name");
    }
    write_pgm(image.pixels, directory / image.name);
    json objects = json::array();
    for (const auto& o : image.objects) {
      objects.push_back({{"class", o.cls}, {"box", {o.box(0), o.box(1), o.box(2), o.box(3)}}});
    }
    ann << json{{"image", image.name}, {"objects", objects}}.dump() << '\n';
  }
  if (!ann) throw std::runtime_error("failed writing " + (directory / kAnnotationFile).string());
}

std::vector<AnnotatedImage> read_dataset(const fs::path& directory) {
  if (!fs::is_directory(directory)) throw DatasetError(directory.string() + ": not a dataset directory");
  const fs::path ann_path = directory / kAnnotationFile;
  if (!fs::exists(ann_path)) {
    if (fs::directory_iterator(directory) == fs::directory_iterator()) return {};
    throw DatasetError(ann_path.string() + ": missing annotation file");
  }
  std::ifstream in(ann_path, std::ios::binary);
  if (!in) throw DatasetError(ann_path.string() + ": cannot open");

  std::vector<AnnotatedImage> images;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "line " + std::to_string(line_no);
    json doc;
    try {
      doc = json::parse(line);
    } catch (const json::parse_error& e) {
      fail(ann_path, where, e.what());
    }
    if (!doc.is_object() || !doc.contains("image") || !doc["image"].is_string()) {
      fail(ann_path, where, "expected an object with a string \"image\" field");
    }
    for (const auto& [key, _] : doc.items()) {
      if (key != "image" && key != "objects") fail(ann_path, where, "unknown key \"" + key + "\"");
    }
    AnnotatedImage image;
    image.name = doc["image"].get<std::string>();
    if (image.name.empty() || image.name.find('/') != std::string::npos) fail(ann_path, where, "bad image name");
    const fs::path image_path = directory / image.name;
    if (!fs::exists(image_path)) fail(ann_path, where, "references missing image " + image.name);
    const json objects = doc.value("objects", json::array());
    if (!objects.is_array()) fail(ann_path, where, "\"objects\" must be an array");
    for (const auto& o : objects) {
      if (!o.is_object() || !o.contains("class") || !o.contains("box") || o.size() != 2) {
        fail(ann_path, where, "each object needs exactly \"class\" and \"box\"");
      }
      if (!o["class"].is_number_integer() || o["class"].get<long long>() < 1) {
        fail(ann_path, where, "object class must be an integer ≥ 1");
      }
      const json& box = o["box"];
      if (!box.is_array() || box.size() != 4) fail(ann_path, where, "box must be [cx, cy, w, h]");
      GroundTruth gt;
      gt.cls = static_cast<int>(o["class"].get<long long>());
      for (int t = 0; t < 4; ++t) {
        if (!box[static_cast<std::size_t>(t)].is_number()) fail(ann_path, where, "box entries must be numbers");
        gt.box(t) = box[static_cast<std::size_t>(t)].get<double>();
      }
      if (!(gt.box(2) > 0.0 && gt.box(3) > 0.0)) fail(ann_path, where, "box must have positive area");
      image.objects.push_back(gt);
    }
    image.pixels = read_pgm(image_path);
    images.push_back(std::move(image));
  }
  return images;
}

}  // namespace ddtr
