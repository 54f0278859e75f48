#include "tma/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iterator>

namespace fs = std::filesystem;

namespace tma {

namespace {

template <class T>
void put(std::string& out, const T& v) {
  const auto* p = reinterpret_cast<const char*>(&v);
  out.append(p, sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& b) : buf_(b) {}

  template <class T>
  T get(const char* what) {
    T v{};
    need(sizeof(T), what);
    std::memcpy(&v, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  void read_into(double* dst, std::size_t count, const char* what) {
    need(count * sizeof(double), what);
    std::memcpy(dst, buf_.data() + pos_, count * sizeof(double));
    pos_ += count * sizeof(double);
  }

  std::string take(std::size_t n, const char* what) {
    need(n, what);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t pos() const { return pos_; }
  std::size_t size() const { return buf_.size(); }

 private:
  void need(std::size_t n, const char* what) const {
    if (buf_.size() - pos_ < n)
      throw SchemaError("checkpoint: truncated at offset " + std::to_string(pos_) +
                        " while reading " + what);
  }
  const std::string& buf_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const ModelState& state, const TrainerConfig& cfg) {
  state.validate();
  const auto r = static_cast<std::uint32_t>(state.rank());
  const auto d = static_cast<std::uint32_t>(state.dim());
  std::string out;
  out.reserve(16 + 6 * sizeof(double) * r * d + 512);
  out.append("TMA1", 4);
  put(out, kCheckpointVersion);
  put(out, d);
  put(out, r);
  for (const Mat* m : {&state.K, &state.P, &state.U, &state.V, &state.Lambda, &state.Psi})
    out.append(reinterpret_cast<const char*>(m->data()),
               sizeof(double) * static_cast<std::size_t>(m->size()));
  const std::string trailer = nlohmann::json(cfg).dump();
  put(out, static_cast<std::uint64_t>(trailer.size()));
  out += trailer;
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  Reader in(bytes);
  if (in.take(4, "magic") != "TMA1") throw SchemaError("checkpoint: bad magic, expected TMA1");
  const auto version = in.get<std::uint32_t>("version");
  if (version != kCheckpointVersion)
    throw SchemaError("checkpoint: unsupported version " + std::to_string(version));
  const auto d = in.get<std::uint32_t>("d");
  const auto r = in.get<std::uint32_t>("r");
  if (d == 0 || r == 0) throw SchemaError("checkpoint: empty matrices");
  Checkpoint ck;
  ck.state = ModelState(r, d);
  for (Mat* m : {&ck.state.K, &ck.state.P, &ck.state.U, &ck.state.V, &ck.state.Lambda,
                 &ck.state.Psi})
    in.read_into(m->data(), static_cast<std::size_t>(m->size()), "matrix data");
  const auto len = in.get<std::uint64_t>("trailer length");
  if (len > in.size() - in.pos())
    throw SchemaError("checkpoint: trailer length " + std::to_string(len) +
                      " runs past end of file");
  const std::string trailer = in.take(static_cast<std::size_t>(len), "trailer");
  if (in.pos() != in.size()) throw SchemaError("checkpoint: trailing bytes after config");
  try {
    ck.config = nlohmann::json::parse(trailer).get<TrainerConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("checkpoint: bad config trailer: ") + e.what());
  }
  try {
    ck.state.validate();
  } catch (const InvalidArgument& e) {
    throw SchemaError(std::string("checkpoint: ") + e.what());
  }
  return ck;
}

void save_checkpoint(const fs::path& path, const ModelState& state, const TrainerConfig& cfg) {
  const std::string bytes = encode_checkpoint(state, cfg);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ParseError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ParseError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFound("cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace tma
