#include "mocap/nn/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "mocap/errors.hpp"

namespace mocap::nn {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

void write_checkpoint(const std::filesystem::path& path, nlohmann::json header, const std::vector<VecX>& blocks) {
  std::size_t count = 0;
  for (const VecX& b : blocks) count += static_cast<std::size_t>(b.size());
  header["float_count"] = count;
  const std::string text = header.dump();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const VecX& b : blocks)
    for (Eigen::Index i = 0; i < b.size(); ++i) {
      const float f = static_cast<float>(b(i));
      out.write(reinterpret_cast<const char*>(&f), sizeof(f));
    }
  if (!out) throw Error("failed writing " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingCheckpoint("missing checkpoint " + path.string());
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || len > (1u << 26)) throw FormatError(path.string() + ": bad header length");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw FormatError(path.string() + ": truncated header");
  Checkpoint c;
  try {
    c.header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  const auto count = c.header.value("float_count", std::size_t{0});
  std::vector<float> raw(count);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(count * sizeof(float)));
  if (!in) throw FormatError(path.string() + ": truncated payload");
  c.values.assign(raw.begin(), raw.end());
  return c;
}

}  // namespace mocap::nn
