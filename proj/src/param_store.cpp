#include "skelfuse/param_store.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "skelfuse/errors.hpp"

namespace skelfuse {

namespace {

constexpr char kMagic[8] = {'S', 'K', 'F', 'C', 'K', 'P', 'T', '1'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <class T>
void put(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::ifstream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw ParseError("truncated checkpoint");
  return v;
}

}  // namespace

ad::Tensor& ParamStore::add(const std::string& name, ad::Tensor value) {
  if (entries_.contains(name)) throw ArgumentError("duplicate parameter " + name);
  auto node = value.node();
  node->requires_grad = true;
  const std::size_t n = value.numel();
  auto& e = entries_[name];
  e.param = std::move(value);
  e.m.assign(n, 0.0);
  e.v.assign(n, 0.0);
  return e.param;
}

ad::Tensor& ParamStore::add_xavier(const std::string& name, std::size_t rows, std::size_t cols, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::vector<double> values(rows * cols);
  for (double& v : values) v = rng.uniform(-bound, bound);
  return add(name, ad::Tensor::matrix(rows, cols, std::move(values)));
}

ad::Tensor& ParamStore::add_constant(const std::string& name, ad::Shape shape, double value) {
  return add(name, ad::Tensor::full(std::move(shape), value));
}

ad::Tensor& ParamStore::get(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ArgumentError("unknown parameter " + name);
  return it->second.param;
}

const ad::Tensor& ParamStore::get(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ArgumentError("unknown parameter " + name);
  return it->second.param;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  for (const auto& [name, e] : entries_) out.push_back(name);
  return out;
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, e] : entries_) n += e.param.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [name, e] : entries_) e.param.zero_grad();
}

void adam_step(ParamStore& store, const AdamConfig& config) {
  for (const auto& [name, e] : store.entries())
    if (!e.param.has_grad()) throw MissingGrad("parameter " + name + " has no gradient");
  store.set_step(store.step() + 1);
  const double t = static_cast<double>(store.step());
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (auto& [name, e] : store.entries()) {
    auto values = e.param.mutable_data();
    const auto grad = e.param.grad();
    for (std::size_t i = 0; i < values.size(); ++i) {
      e.m[i] = config.beta1 * e.m[i] + (1.0 - config.beta1) * grad[i];
      e.v[i] = config.beta2 * e.v[i] + (1.0 - config.beta2) * grad[i] * grad[i];
      values[i] -= config.lr * (e.m[i] / c1) / (std::sqrt(e.v[i] / c2) + config.eps);
    }
  }
}

void save_checkpoint(const ParamStore& store, const std::filesystem::path& path,
                     const nlohmann::json& config) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(store.size()));

  nlohmann::json manifest;
  manifest["format"] = "skelfuse-checkpoint-1";
  manifest["dtype"] = "float64";
  manifest["endianness"] = "little";
  manifest["config"] = config;
  manifest["tensors"] = nlohmann::json::array();
  for (const auto& [name, e] : store.entries()) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.param.rank()));
    for (std::size_t d : e.param.shape()) put<std::uint64_t>(out, d);
    const std::uint64_t offset = static_cast<std::uint64_t>(out.tellp());
    const auto values = e.param.data();
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size() * sizeof(double)));
    manifest["tensors"].push_back({{"name", name}, {"shape", e.param.shape()}, {"offset", offset}});
  }
  if (!out) throw IoError("write failed for " + path.string());

  std::ofstream meta(path.string() + ".json");
  if (!meta) throw IoError("cannot write " + path.string() + ".json");
  meta << manifest.dump(1) << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[sizeof kMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw ParseError("not a checkpoint: " + path.string());
  Checkpoint ck;
  const auto count = get<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name(get<std::uint32_t>(in), '\0');
    in.read(name.data(), static_cast<std::streamsize>(name.size()));
    const auto rank = get<std::uint32_t>(in);
    if (rank > 2) throw ParseError("checkpoint tensor of rank > 2");
    ad::Shape shape(rank);
    for (auto& d : shape) d = get<std::uint64_t>(in);
    std::vector<double> values(ad::numel_of(shape));
    in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)));
    if (!in) throw ParseError("truncated checkpoint " + path.string());
    ck.params.add(name, ad::Tensor::from(std::move(shape), std::move(values)));
  }

  std::ifstream meta(path.string() + ".json");
  if (meta) {
    try {
      nlohmann::json manifest;
      meta >> manifest;
      ck.config = manifest.value("config", nlohmann::json::object());
    } catch (const nlohmann::json::exception& ex) {
      throw ParseError(std::string("malformed checkpoint manifest: ") + ex.what());
    }
  }
  return ck;
}

void copy_params(const ParamStore& from, ParamStore& into) {
  for (auto& [name, e] : into.entries()) {
    if (!from.contains(name)) throw ShapeError("checkpoint lacks parameter " + name);
    const ad::Tensor& src = from.get(name);
    if (src.shape() != e.param.shape())
      throw ShapeError("parameter " + name + " has shape " + ad::shape_string(src.shape()) + ", expected " +
                       ad::shape_string(e.param.shape()));
    std::copy(src.data().begin(), src.data().end(), e.param.mutable_data().begin());
  }
}

}  // namespace skelfuse
