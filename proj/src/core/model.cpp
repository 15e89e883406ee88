#include "mscaps/model.hpp"

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

#include "mscaps/error.hpp"

namespace mscaps {

bool ModelArtifact::operator==(const ModelArtifact& o) const {
  return network == o.network && params == o.params && di_lo == o.di_lo && di_hi == o.di_hi && eps == o.eps &&
         intensity_scale == o.intensity_scale && seed == o.seed;
}

namespace {

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  template <typename T>
  void le(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out_.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
  }
  void f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    le(bits);
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& in) : in_(in) {}
  const std::uint8_t* take(std::size_t n) {
    require(in_.size() - pos_ >= n, ErrorCode::kCorrupt, "model file is truncated");
    const std::uint8_t* p = in_.data() + pos_;
    pos_ += n;
    return p;
  }
  template <typename T>
  T le() {
    const std::uint8_t* p = take(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(p[i]) << (8 * i));
    return v;
  }
  double f64() {
    const auto bits = le<std::uint64_t>();
    double v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  const std::vector<std::uint8_t>& in_;
  std::size_t pos_ = 0;
};

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string hyperparameters(const ModelArtifact& m) {
  const NetworkConfig& n = m.network;
  std::ostringstream os;
  os << "variant=" << variant_name(n.variant) << '\n'
     << "input=" << input_mode_name(n.input) << '\n'
     << "patch=" << n.patch << '\n'
     << "afc_in_channels=" << n.afc.in_channels << '\n'
     << "afc_branch_channels=" << n.afc.branch_channels << '\n'
     << "afc_fuse_channels=" << n.afc.fuse_channels << '\n'
     << "afc_attention_kernel=" << n.afc.attention_kernel << '\n'
     << "afc_shared_attention=" << n.afc.shared_attention << '\n'
     << "primary_channels=" << n.primary_channels << '\n'
     << "capsule_dim=" << n.capsule_dim << '\n'
     << "conv_caps_kernel=" << n.conv_caps_kernel << '\n'
     << "conv_caps_types=" << n.conv_caps_types << '\n'
     << "conv_caps_dim=" << n.conv_caps_dim << '\n'
     << "classes=" << n.classes << '\n'
     << "class_dim=" << n.class_dim << '\n'
     << "routing_iterations=" << n.routing_iterations << '\n'
     << "route_grad=" << (n.route_grad == caps::RouteGrad::kFull ? "full" : "final_only") << '\n'
     << "shared_capsule_weights=" << n.shared_capsule_weights << '\n'
     << "transform_init=" << num(n.transform_init) << '\n'
     << "di_lo=" << num(m.di_lo) << '\n'
     << "di_hi=" << num(m.di_hi) << '\n'
     << "eps=" << num(m.eps) << '\n'
     << "intensity_scale=" << num(m.intensity_scale) << '\n'
     << "seed=" << m.seed << '\n';
  return os.str();
}

void apply_hyperparameters(ModelArtifact& m, const std::string& block) {
  std::map<std::string, std::string> kv;
  std::istringstream is(block);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    require(eq != std::string::npos, ErrorCode::kCorrupt, "model hyperparameter line without '=': " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto get = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    require(it != kv.end(), ErrorCode::kCorrupt, std::string("model is missing hyperparameter '") + key + "'");
    return it->second;
  };
  auto uint = [&](const char* key) -> std::size_t {
    const std::string& s = get(key);
    char* end = nullptr;
    const unsigned long long v = std::strtoull(s.c_str(), &end, 10);
    require(!s.empty() && *end == '\0', ErrorCode::kCorrupt, std::string("bad integer for '") + key + "'");
    return static_cast<std::size_t>(v);
  };
  auto real = [&](const char* key) -> double {
    const std::string& s = get(key);
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    require(!s.empty() && *end == '\0', ErrorCode::kCorrupt, std::string("bad number for '") + key + "'");
    return v;
  };
  NetworkConfig& n = m.network;
  try {
    n.variant = parse_variant(get("variant"));
    n.input = parse_input_mode(get("input"));
  } catch (const Error& e) {
    fail(ErrorCode::kCorrupt, e.what());
  }
  n.patch = uint("patch");
  n.afc.in_channels = uint("afc_in_channels");
  n.afc.branch_channels = uint("afc_branch_channels");
  n.afc.fuse_channels = uint("afc_fuse_channels");
  n.afc.attention_kernel = uint("afc_attention_kernel");
  n.afc.shared_attention = uint("afc_shared_attention") != 0;
  n.primary_channels = uint("primary_channels");
  n.capsule_dim = uint("capsule_dim");
  n.conv_caps_kernel = uint("conv_caps_kernel");
  n.conv_caps_types = uint("conv_caps_types");
  n.conv_caps_dim = uint("conv_caps_dim");
  n.classes = uint("classes");
  n.class_dim = uint("class_dim");
  n.routing_iterations = uint("routing_iterations");
  const std::string& rg = get("route_grad");
  require(rg == "full" || rg == "final_only", ErrorCode::kCorrupt, "bad route_grad '" + rg + "'");
  n.route_grad = rg == "full" ? caps::RouteGrad::kFull : caps::RouteGrad::kFinalOnly;
  n.shared_capsule_weights = uint("shared_capsule_weights") != 0;
  n.transform_init = real("transform_init");
  m.di_lo = real("di_lo");
  m.di_hi = real("di_hi");
  m.eps = real("eps");
  m.intensity_scale = real("intensity_scale");
  m.seed = uint("seed");
}

}  // namespace

std::vector<std::uint8_t> serialize_model(const ModelArtifact& model) {
  Writer w;
  w.bytes(kModelMagic, sizeof kModelMagic);
  w.le<std::uint8_t>(kModelVersion);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(model.params.size()));
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    const std::string& name = model.params.name(i);
    const Tensor& t = model.params.value(i);
    require(name.size() <= 0xffff && t.rank() <= 0xff, ErrorCode::kInvalidArgument, "tensor '" + name + "' too large to serialize");
    w.le<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.le<std::uint8_t>(static_cast<std::uint8_t>(t.rank()));
    for (auto d : t.shape()) w.le<std::uint32_t>(static_cast<std::uint32_t>(d));
    for (double v : t.data()) w.f64(v);
  }
  const std::string hp = hyperparameters(model);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(hp.size()));
  w.bytes(hp.data(), hp.size());
  return w.take();
}

ModelArtifact deserialize_model(const std::vector<std::uint8_t>& bytes) {
  require(bytes.size() >= sizeof kModelMagic + 1, ErrorCode::kCorrupt, "model file is truncated");
  require(std::memcmp(bytes.data(), kModelMagic, sizeof kModelMagic) == 0, ErrorCode::kVersionMismatch,
          "not an MSCAPS model file (bad magic)");
  require(bytes[sizeof kModelMagic] == kModelVersion, ErrorCode::kVersionMismatch,
          "unsupported model version " + std::to_string(bytes[sizeof kModelMagic]));
  Reader r(bytes);
  r.take(sizeof kModelMagic + 1);
  ModelArtifact m;
  const auto count = r.le<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.le<std::uint16_t>();
    const auto* p = r.take(len);
    std::string name(reinterpret_cast<const char*>(p), len);
    const auto rank = r.le<std::uint8_t>();
    require(rank >= 1, ErrorCode::kCorrupt, "tensor '" + name + "' has rank 0");
    Shape shape;
    std::size_t numel = 1;
    for (std::uint8_t d = 0; d < rank; ++d) {
      const auto e = r.le<std::uint32_t>();
      require(e > 0 && numel * e <= (std::size_t{1} << 28), ErrorCode::kCorrupt, "tensor '" + name + "' has a bad shape");
      shape.push_back(e);
      numel *= e;
    }
    std::vector<double> data(numel);
    for (auto& v : data) v = r.f64();
    require(!m.params.contains(name), ErrorCode::kCorrupt, "duplicate tensor '" + name + "'");
    m.params.add(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  const auto hp_len = r.le<std::uint32_t>();
  const auto* hp = r.take(hp_len);
  require(r.done(), ErrorCode::kCorrupt, "trailing bytes after model data");
  apply_hyperparameters(m, std::string(reinterpret_cast<const char*>(hp), hp_len));
  try {
    m.network.validate();
  } catch (const Error& e) {
    fail(ErrorCode::kCorrupt, std::string("model hyperparameters are invalid: ") + e.what());
  }
  // Parameter names and shapes must match the architecture.
  Rng dummy(0);
  const Parameters expected = init_network(m.network, dummy);
  require(expected.size() == m.params.size(), ErrorCode::kCorrupt, "model tensor list does not match its architecture");
  for (std::size_t i = 0; i < expected.size(); ++i)
    require(expected.name(i) == m.params.name(i) && expected.value(i).shape() == m.params.value(i).shape(),
            ErrorCode::kCorrupt, "model tensor '" + m.params.name(i) + "' does not match its architecture");
  return m;
}

void save_model(const ModelArtifact& model, const std::string& path) {
  const auto bytes = serialize_model(model);
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorCode::kIo, "failed writing " + path);
}

ModelArtifact load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_model(bytes);
}

}  // namespace mscaps
