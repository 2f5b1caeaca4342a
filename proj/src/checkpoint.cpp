#include "saslm/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "saslm/rng.hpp"

namespace saslm {

namespace {

constexpr char kMagic[8] = {'S', 'A', 'S', 'L', 'M', 'C', 'K', '1'};
constexpr std::uint32_t kVersion = 1;

// Serialization happens into a buffer first so the trailing checksum covers
// every preceding byte and truncated files are always detectable.
class Writer {
public:
  void raw(const void* p, std::size_t n) {
    const char* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  template <class T>
  void pod(T v) {
    raw(&v, sizeof(T));
  }
  void str(const std::string& s) {
    pod(static_cast<std::uint16_t>(s.size()));
    raw(s.data(), s.size());
  }
  void mat(const MatF& m) {
    pod(static_cast<std::uint32_t>(m.rows()));
    pod(static_cast<std::uint32_t>(m.cols()));
    raw(m.data(), static_cast<std::size_t>(m.size()) * sizeof(float));
  }
  void finish(const std::string& path) {
    std::uint64_t checksum = fnv1a64(buf_.data(), buf_.size());
    pod(checksum);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
    if (!out) throw std::runtime_error("short write on checkpoint: " + path);
  }

private:
  std::vector<char> buf_;
};

class Reader {
public:
  explicit Reader(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read checkpoint: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    buf_ = ss.str();
    if (buf_.size() < sizeof(kMagic) + sizeof(std::uint64_t))
      throw std::runtime_error("truncated checkpoint: " + path);
    std::uint64_t stored = 0;
    std::memcpy(&stored, buf_.data() + buf_.size() - sizeof(stored), sizeof(stored));
    if (fnv1a64(buf_.data(), buf_.size() - sizeof(stored)) != stored)
      throw std::runtime_error("corrupt or truncated checkpoint: " + path);
    end_ = buf_.size() - sizeof(stored);
  }

  void raw(void* p, std::size_t n) {
    if (pos_ + n > end_) throw std::runtime_error("truncated checkpoint payload");
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
  }
  template <class T>
  T pod() {
    T v;
    raw(&v, sizeof(T));
    return v;
  }
  std::string str() {
    auto n = pod<std::uint16_t>();
    std::string s(n, '\0');
    raw(s.data(), n);
    return s;
  }
  MatF mat() {
    auto r = pod<std::uint32_t>();
    auto c = pod<std::uint32_t>();
    MatF m(r, c);
    raw(m.data(), static_cast<std::size_t>(m.size()) * sizeof(float));
    return m;
  }
  bool exhausted() const { return pos_ == end_; }

private:
  std::string buf_;
  std::size_t pos_ = 0;
  std::size_t end_ = 0;
};

void write_config(Writer& w, const EncoderConfig& c) {
  w.pod<std::int32_t>(c.layers);
  w.pod<std::int32_t>(c.hidden);
  w.pod<std::int32_t>(c.heads);
  w.pod<std::int32_t>(c.ffn);
  w.pod<std::int32_t>(c.vocab_size);
  w.pod<std::int32_t>(c.seq_len);
  w.pod<float>(c.dropout);
  w.pod<std::uint8_t>(c.tied_embeddings ? 1 : 0);
}

EncoderConfig read_config(Reader& r) {
  EncoderConfig c;
  c.layers = r.pod<std::int32_t>();
  c.hidden = r.pod<std::int32_t>();
  c.heads = r.pod<std::int32_t>();
  c.ffn = r.pod<std::int32_t>();
  c.vocab_size = r.pod<std::int32_t>();
  c.seq_len = r.pod<std::int32_t>();
  c.dropout = r.pod<float>();
  c.tied_embeddings = r.pod<std::uint8_t>() != 0;
  return c;
}

void write_model_arrays(Writer& w, ModelState& st, const std::string& prefix) {
  auto regs = st.registry();
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(regs.size()));
  for (auto& ref : regs) {
    w.str(prefix + ref.name);
    w.mat(*ref.mat);
  }
}

void read_model_arrays(Reader& r, ModelState& st, const std::string& prefix) {
  auto regs = st.registry();
  auto count = r.pod<std::uint32_t>();
  if (count != regs.size()) throw std::runtime_error("checkpoint: parameter count mismatch");
  for (auto& ref : regs) {
    std::string name = r.str();
    if (name != prefix + ref.name) throw std::runtime_error("checkpoint: unexpected array '" + name + "'");
    MatF m = r.mat();
    if (m.rows() != ref.mat->rows() || m.cols() != ref.mat->cols())
      throw std::runtime_error("checkpoint: shape mismatch for '" + name + "'");
    *ref.mat = std::move(m);
  }
}

}  // namespace

void save_checkpoint(const TrainCheckpoint& ckpt, const std::string& path) {
  Writer w;
  w.raw(kMagic, sizeof(kMagic));
  w.pod<std::uint32_t>(kVersion);
  write_config(w, ckpt.encoder);
  w.str(strategy_name(ckpt.strategy));
  w.pod<std::uint64_t>(ckpt.root_seed);
  w.pod<std::int32_t>(ckpt.epochs_completed);
  w.pod<std::uint64_t>(ckpt.step);
  w.pod<std::uint64_t>(ckpt.forward_count);
  w.pod<std::uint64_t>(ckpt.cumulative_flops);
  w.pod<std::uint64_t>(ckpt.adam_t);

  auto& model = const_cast<ModelState&>(ckpt.model);
  w.pod<std::uint8_t>(ckpt.generator.has_value() ? 1 : 0);
  if (ckpt.generator) write_config(w, ckpt.generator->config);
  write_model_arrays(w, model, "model.");
  if (ckpt.generator) write_model_arrays(w, const_cast<ModelState&>(*ckpt.generator), "gen.");

  w.pod<std::uint32_t>(static_cast<std::uint32_t>(ckpt.adam_m.size()));
  for (const auto& m : ckpt.adam_m) w.mat(m);
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(ckpt.adam_v.size()));
  for (const auto& v : ckpt.adam_v) w.mat(v);

  w.pod<std::int32_t>(ckpt.cache_epoch_produced);
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(ckpt.cache.entries().size()));
  for (const auto& [id, e] : ckpt.cache.entries()) {
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(id));
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(e.positions.size()));
    for (int p : e.positions) w.pod<std::uint32_t>(static_cast<std::uint32_t>(p));
    for (int t : e.token_ids) w.pod<std::uint32_t>(static_cast<std::uint32_t>(t));
  }
  w.finish(path);
}

TrainCheckpoint load_checkpoint(const std::string& path) {
  Reader r(path);
  char magic[8];
  r.raw(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("not a checkpoint file: " + path);
  auto version = r.pod<std::uint32_t>();
  if (version != kVersion)
    throw std::runtime_error("checkpoint version mismatch: found " + std::to_string(version) + ", expected " +
                             std::to_string(kVersion));
  TrainCheckpoint ckpt;
  ckpt.encoder = read_config(r);
  ckpt.strategy = parse_strategy(r.str());
  ckpt.root_seed = r.pod<std::uint64_t>();
  ckpt.epochs_completed = r.pod<std::int32_t>();
  ckpt.step = r.pod<std::uint64_t>();
  ckpt.forward_count = r.pod<std::uint64_t>();
  ckpt.cumulative_flops = r.pod<std::uint64_t>();
  ckpt.adam_t = r.pod<std::uint64_t>();

  bool has_gen = r.pod<std::uint8_t>() != 0;
  EncoderConfig gen_cfg;
  if (has_gen) gen_cfg = read_config(r);
  ckpt.model = ModelState::init(ckpt.encoder, 0);
  read_model_arrays(r, ckpt.model, "model.");
  if (has_gen) {
    ckpt.generator = ModelState::init(gen_cfg, 0);
    read_model_arrays(r, *ckpt.generator, "gen.");
  }

  auto mcount = r.pod<std::uint32_t>();
  ckpt.adam_m.reserve(mcount);
  for (std::uint32_t i = 0; i < mcount; ++i) ckpt.adam_m.push_back(r.mat());
  auto vcount = r.pod<std::uint32_t>();
  ckpt.adam_v.reserve(vcount);
  for (std::uint32_t i = 0; i < vcount; ++i) ckpt.adam_v.push_back(r.mat());

  ckpt.cache_epoch_produced = r.pod<std::int32_t>();
  auto entries = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < entries; ++i) {
    auto id = r.pod<std::uint32_t>();
    auto n = r.pod<std::uint32_t>();
    CacheEntry e;
    e.epoch_produced = ckpt.cache_epoch_produced;
    e.positions.resize(n);
    e.token_ids.resize(n);
    for (auto& p : e.positions) p = static_cast<int>(r.pod<std::uint32_t>());
    for (auto& t : e.token_ids) t = static_cast<int>(r.pod<std::uint32_t>());
    ckpt.cache.store(static_cast<std::int64_t>(id), std::move(e));
  }
  if (!r.exhausted()) throw std::runtime_error("checkpoint has trailing bytes: " + path);
  return ckpt;
}

}  // namespace saslm
