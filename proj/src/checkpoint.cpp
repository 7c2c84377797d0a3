#include <cstring>
#include <fstream>
#include <sstream>

#include "patchalign/training.hpp"

namespace patchalign {

namespace {

constexpr const char* kMagic = "PALIGN1";

void put_f32_le(std::string& out, float f) {
  uint32_t bits;
  std::memcpy(&bits, &f, 4);
  out.push_back(static_cast<char>(bits & 0xff));
  out.push_back(static_cast<char>((bits >> 8) & 0xff));
  out.push_back(static_cast<char>((bits >> 16) & 0xff));
  out.push_back(static_cast<char>((bits >> 24) & 0xff));
}

float get_f32_le(const unsigned char* p) {
  uint32_t bits = static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
                  (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

struct HeaderEntry {
  std::string name;
  int rows = 0, cols = 0;
  size_t offset = 0;
};

struct Header {
  int stage = 0;
  std::string rng_state;
  std::string config_text;
  std::vector<HeaderEntry> tensors;
  size_t payload_bytes = 0;
};

Header read_header(std::istream& in, const std::string& path) {
  Header h;
  std::string line;
  if (!std::getline(in, line) || line != kMagic)
    fail(ErrorKind::checkpoint, path + ": bad magic");
  if (!std::getline(in, line) || line.rfind("stage ", 0) != 0)
    fail(ErrorKind::checkpoint, path + ": missing stage line");
  h.stage = std::stoi(line.substr(6));
  if (!std::getline(in, line) || line.rfind("rng ", 0) != 0)
    fail(ErrorKind::checkpoint, path + ": missing rng line");
  h.rng_state = line.substr(4);
  if (!std::getline(in, line) || line.rfind("config ", 0) != 0)
    fail(ErrorKind::checkpoint, path + ": missing config count");
  int config_lines = std::stoi(line.substr(7));
  for (int i = 0; i < config_lines; ++i) {
    if (!std::getline(in, line)) fail(ErrorKind::checkpoint, path + ": truncated config");
    h.config_text += line + "\n";
  }
  if (!std::getline(in, line) || line.rfind("tensors ", 0) != 0)
    fail(ErrorKind::checkpoint, path + ": missing tensor count");
  int count = std::stoi(line.substr(8));
  for (int i = 0; i < count; ++i) {
    if (!std::getline(in, line)) fail(ErrorKind::checkpoint, path + ": truncated table");
    HeaderEntry e;
    char name[512], dtype[16];
    unsigned long long off;
    if (std::sscanf(line.c_str(), "%511s %d %d %15s %llu", name, &e.rows, &e.cols, dtype,
                    &off) != 5)
      fail(ErrorKind::checkpoint, path + ": malformed tensor entry: " + line);
    if (std::string(dtype) != "f32")
      fail(ErrorKind::checkpoint, path + ": unsupported dtype " + dtype);
    e.name = name;
    e.offset = off;
    h.tensors.push_back(e);
  }
  if (!std::getline(in, line) || line.rfind("payload ", 0) != 0)
    fail(ErrorKind::checkpoint, path + ": missing payload size");
  h.payload_bytes = std::stoull(line.substr(8));
  if (!std::getline(in, line) || line != "---")
    fail(ErrorKind::checkpoint, path + ": missing header terminator");
  return h;
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& model, int stage,
                     const Rng& rng) {
  std::string config_text = model.config().serialize();
  int config_lines = 0;
  for (char c : config_text) config_lines += c == '\n';

  std::string payload;
  std::ostringstream table;
  size_t offset = 0;
  int count = 0;
  for (const auto& [name, t] : model.params().items()) {
    table << name << " " << t.rows() << " " << t.cols() << " f32 " << offset << "\n";
    for (real v : t.value()) put_f32_le(payload, static_cast<float>(v));
    offset += t.size() * 4;
    ++count;
  }

  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::io, "cannot write checkpoint: " + path);
  out << kMagic << "\n";
  out << "stage " << stage << "\n";
  out << "rng " << rng.serialize() << "\n";
  out << "config " << config_lines << "\n" << config_text;
  out << "tensors " << count << "\n" << table.str();
  out << "payload " << payload.size() << "\n";
  out << "---\n";
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) fail(ErrorKind::io, "short write: " + path);
}

int load_checkpoint(const std::string& path, Model& model, Rng* rng) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open checkpoint: " + path);
  Header h = read_header(in, path);

  std::vector<unsigned char> payload(h.payload_bytes);
  in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
  if (in.gcount() != static_cast<std::streamsize>(payload.size()))
    fail(ErrorKind::checkpoint, path + ": truncated payload");

  const auto& items = model.params().items();
  if (items.size() != h.tensors.size())
    fail(ErrorKind::checkpoint,
         strformat("%s: %zu tensors on disk, model has %zu", path.c_str(),
                   h.tensors.size(), items.size()));
  for (size_t i = 0; i < items.size(); ++i) {
    const auto& [name, handle] = items[i];
    const HeaderEntry& e = h.tensors[i];
    if (e.name != name)
      fail(ErrorKind::checkpoint,
           strformat("%s: tensor %zu is '%s', model expects '%s'", path.c_str(), i,
                     e.name.c_str(), name.c_str()));
    Tensor t = handle;
    if (e.rows != t.rows() || e.cols != t.cols())
      fail(ErrorKind::checkpoint,
           strformat("%s: tensor '%s' is %dx%d on disk but %dx%d in this config",
                     path.c_str(), name.c_str(), e.rows, e.cols, t.rows(), t.cols()));
    size_t need = e.offset + t.size() * 4;
    if (need > payload.size())
      fail(ErrorKind::checkpoint,
           strformat("%s: payload too short for tensor '%s'", path.c_str(), name.c_str()));
    for (size_t j = 0; j < t.size(); ++j)
      t.value()[j] = static_cast<real>(get_f32_le(payload.data() + e.offset + j * 4));
  }
  if (rng) rng->deserialize(h.rng_state);
  return h.stage;
}

int peek_checkpoint_stage(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open checkpoint: " + path);
  return read_header(in, path).stage;
}

}  // namespace patchalign
