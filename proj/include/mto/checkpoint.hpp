#pragma once

// Checkpoint container (little-endian):
//
//   char[4]  magic "MTOC"
//   u32      format version (1)
//   u32      routing (0 = encoder_masked, 1 = decoder_masked)
//   u32      image_size, patch_size, channels, width, heads,
//            encoder_layers, decoder_layers, mlp_hidden
//   u32      parameter count
//   per parameter, in ModelParameters::visit order:
//     u32 name length, name bytes (ASCII, no terminator)
//     u32 rows, u32 cols
//     f32 values[rows * cols], row-major

#include "mto/backbone.hpp"
#include "mto/dataset.hpp"

#include <fstream>
#include <map>
#include <string>

namespace mto {

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void save_checkpoint(const ModelParameters<T>& params, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint '" + path + "'");
  out.write("MTOC", 4);
  const ModelConfig& c = params.config;
  detail::write_le_u32(out, kCheckpointVersion);
  detail::write_le_u32(out, c.routing == Routing::encoder_masked ? 0u : 1u);
  for (Index v : {c.image_size, c.patch_size, c.channels, c.width, c.heads, c.encoder_layers, c.decoder_layers, c.mlp_hidden})
    detail::write_le_u32(out, static_cast<std::uint32_t>(v));
  std::uint32_t count = 0;
  params.visit([&](const std::string&, const Mat<T>&) { ++count; });
  detail::write_le_u32(out, count);
  params.visit([&](const std::string& name, const Mat<T>& m) {
    detail::write_le_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_le_u32(out, static_cast<std::uint32_t>(m.rows()));
    detail::write_le_u32(out, static_cast<std::uint32_t>(m.cols()));
    for (Index i = 0; i < m.size(); ++i) detail::write_le_f32(out, static_cast<float>(m.data()[i]));
  });
  if (!out) throw IoError("write failed for checkpoint '" + path + "'");
}

inline ModelConfig read_checkpoint_config(std::istream& in, const std::string& path) {
  char magic[4] = {};
  if (!in.read(magic, 4) || std::string(magic, 4) != "MTOC") throw IoError("'" + path + "' is not a checkpoint");
  const auto version = detail::read_le_u32(in, "version");
  if (version != kCheckpointVersion)
    throw IoError("checkpoint '" + path + "' has unsupported version " + std::to_string(version));
  ModelConfig c;
  c.routing = detail::read_le_u32(in, "routing") == 0 ? Routing::encoder_masked : Routing::decoder_masked;
  for (Index* f : {&c.image_size, &c.patch_size, &c.channels, &c.width, &c.heads, &c.encoder_layers, &c.decoder_layers, &c.mlp_hidden})
    *f = static_cast<Index>(detail::read_le_u32(in, "config"));
  return c;
}

template <typename T = double>
ModelParameters<T> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  const ModelConfig cfg = read_checkpoint_config(in, path);
  ModelParameters<T> params = shaped_parameters<T>(cfg);
  std::map<std::string, Mat<T>> loaded;
  const auto count = detail::read_le_u32(in, "parameter count");
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto len = detail::read_le_u32(in, "name length");
    if (len > 4096) throw IoError("checkpoint '" + path + "' has a corrupt parameter name");
    std::string name(len, '\0');
    if (!in.read(name.data(), len)) throw IoError("truncated checkpoint '" + path + "'");
    const auto rows = detail::read_le_u32(in, "rows");
    const auto cols = detail::read_le_u32(in, "cols");
    Mat<T> m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(detail::read_le_f32(in, name));
    loaded.emplace(std::move(name), std::move(m));
  }
  params.visit([&](const std::string& name, Mat<T>& m) {
    auto it = loaded.find(name);
    if (it == loaded.end()) throw IoError("checkpoint '" + path + "' lacks parameter " + name);
    if (it->second.rows() != m.rows() || it->second.cols() != m.cols())
      throw IoError("checkpoint '" + path + "' parameter " + name + " has the wrong shape");
    m = std::move(it->second);
  });
  return params;
}

}  // namespace mto
