#include "form/nn/serialize.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <sstream>

#include "form/grid.hpp"

namespace form::nn {

namespace {

constexpr char kMagic[4] = {'F', 'N', 'E', 'T'};
constexpr std::uint8_t kVersion = 0x01;

std::array<std::uint32_t, 256> make_crc_table() {
  std::array<std::uint32_t, 256> t{};
  for (std::uint32_t i = 0; i < 256; ++i) {
    std::uint32_t c = i;
    for (int k = 0; k < 8; ++k)
      c = (c & 1) ? 0xedb88320U ^ (c >> 1) : c >> 1;
    t[i] = c;
  }
  return t;
}

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
T get(std::istream& is) {
  T v;
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw IoError("model file truncated");
  return v;
}

}  // namespace

std::uint32_t crc32(const unsigned char* data, std::size_t n,
                    std::uint32_t seed) {
  static const auto table = make_crc_table();
  std::uint32_t c = seed ^ 0xffffffffU;
  for (std::size_t i = 0; i < n; ++i) c = table[(c ^ data[i]) & 0xff] ^ (c >> 8);
  return c ^ 0xffffffffU;
}

void save_model(const std::string& path, Sequential<float>& net,
                const std::vector<int>& input_dims) {
  std::ostringstream body;
  put<std::uint8_t>(body, static_cast<std::uint8_t>(input_dims.size()));
  for (int d : input_dims) put<std::uint32_t>(body, static_cast<std::uint32_t>(d));

  auto specs = net.specs();
  put<std::uint32_t>(body, static_cast<std::uint32_t>(specs.size()));
  for (const auto& s : specs) {
    put<std::uint8_t>(body, static_cast<std::uint8_t>(s.kind));
    put<std::int32_t>(body, s.channels_out);
    put<std::int32_t>(body, s.kernel);
    put<std::int32_t>(body, s.stride);
    put<std::int32_t>(body, s.n_out);
    put<double>(body, s.rate);
  }

  auto params = net.params();
  put<std::uint32_t>(body, static_cast<std::uint32_t>(params.size()));
  for (auto* p : params) {
    // parameter tensors are stored as flat 2D FGRID payloads (1 x numel)
    write_fgrid_stream(body, {1, static_cast<std::uint32_t>(p->value.numel())},
                       p->value.v.data(), p->value.numel());
  }

  std::string payload = body.str();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for write: " + path);
  os.write(kMagic, 4);
  put<std::uint8_t>(os, kVersion);
  os.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  put<std::uint32_t>(
      os, crc32(reinterpret_cast<const unsigned char*>(payload.data()),
                payload.size()));
  if (!os) throw IoError("model write failed: " + path);
}

LoadedModel load_model(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw IoError("not a model file: " + path);
  if (get<std::uint8_t>(is) != kVersion)
    throw IoError("unsupported model version: " + path);

  std::ostringstream rest;
  rest << is.rdbuf();
  std::string buf = rest.str();
  if (buf.size() < 4) throw IoError("model file truncated: " + path);
  std::string payload = buf.substr(0, buf.size() - 4);
  std::uint32_t stored;
  std::memcpy(&stored, buf.data() + buf.size() - 4, 4);
  std::uint32_t actual =
      crc32(reinterpret_cast<const unsigned char*>(payload.data()),
            payload.size());
  if (stored != actual) throw IoError("model checksum mismatch: " + path);

  std::istringstream body(payload);
  LoadedModel out;
  int ndim = get<std::uint8_t>(body);
  for (int i = 0; i < ndim; ++i)
    out.input_dims.push_back(static_cast<int>(get<std::uint32_t>(body)));

  std::uint32_t n_layers = get<std::uint32_t>(body);
  std::vector<LayerSpec> specs;
  for (std::uint32_t i = 0; i < n_layers; ++i) {
    LayerSpec s;
    s.kind = static_cast<LayerSpec::Kind>(get<std::uint8_t>(body));
    s.channels_out = get<std::int32_t>(body);
    s.kernel = get<std::int32_t>(body);
    s.stride = get<std::int32_t>(body);
    s.n_out = get<std::int32_t>(body);
    s.rate = get<double>(body);
    specs.push_back(s);
  }

  Rng rng(0);
  out.net = build_network<float>(specs, out.input_dims, rng);

  std::uint32_t n_params = get<std::uint32_t>(body);
  auto params = out.net.params();
  if (n_params != params.size())
    throw IoError("model parameter count mismatch: " + path);
  for (auto* p : params) {
    std::vector<std::uint32_t> dims;
    auto data = read_fgrid_stream(body, dims);
    if (data.size() != p->value.numel())
      throw IoError("model parameter size mismatch: " + path);
    p->value.v = std::move(data);
  }
  return out;
}

}  // namespace form::nn
