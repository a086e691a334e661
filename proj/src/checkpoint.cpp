#include "idn/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <vector>

#include "idn/errors.hpp"

namespace idn {

namespace {

constexpr char kMagic[8] = {'I', 'D', 'N', 'C', 'K', 'P', 'T', '\0'};

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
  return v;
}

class Writer {
 public:
  template <typename T>
  void put(T v) {
    const T le = to_little(v);
    const auto* p = reinterpret_cast<const char*>(&le);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }
  void put_f64(double v) { put(std::bit_cast<std::uint64_t>(v)); }
  void put_bytes(const std::string& s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  void record(const std::string& name, const Tensor& t) {
    put(static_cast<std::uint32_t>(name.size()));
    put_bytes(name);
    put(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put(static_cast<std::uint64_t>(d));
    for (double v : t.data()) put_f64(v);
    ++records_;
  }
  std::uint64_t records() const { return records_; }
  const std::vector<char>& bytes() const { return buf_; }

 private:
  std::vector<char> buf_;
  std::uint64_t records_ = 0;
};

class Reader {
 public:
  Reader(std::vector<char> data, std::string path) : buf_(std::move(data)), path_(std::move(path)) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return to_little(v);
  }
  double get_f64() { return std::bit_cast<double>(get<std::uint64_t>()); }
  std::string get_bytes(std::size_t n) {
    need(n);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == buf_.size(); }
  [[noreturn]] void fail(const std::string& why) const {
    throw IoError("checkpoint '" + path_ + "': " + why);
  }

 private:
  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n) fail("truncated file");
  }
  std::vector<char> buf_;
  std::size_t pos_ = 0;
  std::string path_;
};

Tensor scalar_record(double v) { return Tensor({1}, {v}); }

}  // namespace

void save_checkpoint(const std::string& path, const RunConfig& config, FlowModel& model, const AdamState* adam,
                     std::uint64_t iteration) {
  Writer body;
  const auto params = model.parameters();
  for (const Parameter* p : params) body.record("param/" + p->name, p->value);
  for (const SpectralWeight* w : model.spectral_weights()) {
    body.record("spectral.u/" + w->raw.name, w->u);
    body.record("spectral.sigma/" + w->raw.name, scalar_record(w->sigma_hat));
  }
  if (adam) {
    if (adam->m.size() != params.size()) throw std::logic_error("optimizer state does not match the model");
    for (std::size_t i = 0; i < params.size(); ++i) {
      body.record("adam.m/" + params[i]->name, adam->m[i]);
      body.record("adam.v/" + params[i]->name, adam->v[i]);
    }
    body.record("adam.step", scalar_record(static_cast<double>(adam->step)));
    const AdamOptions& o = adam->options;
    body.record("adam.options", Tensor({4}, {o.lr, o.beta1, o.beta2, o.eps}));
  }

  Writer head;
  head.put_bytes(std::string(kMagic, sizeof(kMagic)));
  head.put(kCheckpointVersion);
  const std::string cfg = config_to_json(config);
  head.put(static_cast<std::uint64_t>(cfg.size()));
  head.put_bytes(cfg);
  head.put(iteration);
  head.put(body.records());

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp + "' for writing");
    out.write(head.bytes().data(), static_cast<std::streamsize>(head.bytes().size()));
    out.write(body.bytes().data(), static_cast<std::streamsize>(body.bytes().size()));
    if (!out) throw IoError("write to '" + tmp + "' failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at '" + path + "': " + ec.message());
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  std::vector<char> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(std::move(data), path);

  if (r.get_bytes(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) r.fail("bad magic bytes");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) r.fail("unsupported version " + std::to_string(version));
  const auto cfg_len = r.get<std::uint64_t>();
  Checkpoint ck;
  try {
    ck.config = config_from_json(r.get_bytes(cfg_len));
  } catch (const ConfigError& e) {
    r.fail(std::string("embedded config: ") + e.what());
  }
  ck.iteration = r.get<std::uint64_t>();
  const auto count = r.get<std::uint64_t>();

  std::map<std::string, Tensor> records;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name = r.get_bytes(r.get<std::uint32_t>());
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) r.fail("record '" + name + "' has rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& d : shape) d = r.get<std::uint64_t>();
    const std::size_t n = element_count(shape);
    if (n > (std::size_t{1} << 32)) r.fail("record '" + name + "' is implausibly large");
    Tensor t = Tensor::uninitialized(shape);
    for (std::size_t k = 0; k < n; ++k) t[k] = r.get_f64();
    if (!records.emplace(name, std::move(t)).second) r.fail("duplicate record '" + name + "'");
  }
  if (!r.done()) r.fail("trailing bytes after the last record");

  auto take = [&](const std::string& name, const Shape& shape) {
    auto it = records.find(name);
    if (it == records.end()) r.fail("missing record '" + name + "'");
    if (it->second.shape() != shape) {
      r.fail("record '" + name + "' has shape " + to_string(it->second.shape()) + ", expected " + to_string(shape));
    }
    Tensor t = std::move(it->second);
    records.erase(it);
    return t;
  };

  ck.model = build_model(ck.config.model, ck.config.seed);
  const auto params = ck.model->parameters();
  for (Parameter* p : params) p->value = take("param/" + p->name, p->value.shape());
  for (SpectralWeight* w : ck.model->spectral_weights()) {
    w->u = take("spectral.u/" + w->raw.name, w->u.shape());
    w->sigma_hat = take("spectral.sigma/" + w->raw.name, {1})[0];
  }
  if (records.count("adam.step")) {
    AdamState st;
    const Tensor o = take("adam.options", {4});
    st.options = AdamOptions{o[0], o[1], o[2], o[3]};
    st.step = static_cast<std::uint64_t>(take("adam.step", {1})[0]);
    for (Parameter* p : params) {
      st.m.push_back(take("adam.m/" + p->name, p->value.shape()));
      st.v.push_back(take("adam.v/" + p->name, p->value.shape()));
    }
    ck.adam = std::move(st);
  }
  if (!records.empty()) r.fail("unexpected record '" + records.begin()->first + "'");
  return ck;
}

}  // namespace idn
