#pragma once

// Attention-map diagnostics: PCA of self-attention rows rendered as RGB, and
// the binary dump format used to persist captured maps.
//
// Dump layout, one file per record:
//   "HPAT" | u32 version = 1 | u32 rank | rank x u32 dims | float32 payload
// all little-endian, payload row-major. A UTF-8 sidecar `index.txt` lists
// one record per line: `layer step kind HxW filename`.

#include "harmonpaint/attention.hpp"
#include "harmonpaint/image.hpp"

#include <Eigen/Eigenvalues>

#include <array>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace harmonpaint {

struct PcaImage {
  Resolution resolution;
  std::array<Matrix, 3> channels;  // H x W, each min-max normalized to [0, 1]
  std::array<double, 3> explained_variance{};
  std::array<bool, 3> degenerate{};
  Matrix components;   // 3 x HW, principal directions by descending variance
  Matrix projections;  // HW x 3, centered rows projected on each component

  [[nodiscard]] bool any_degenerate() const { return degenerate[0] || degenerate[1] || degenerate[2]; }
};

/// PCA over the rows of a self-attention map (each row is one patch's
/// attention distribution). Components are sign-fixed so their
/// largest-magnitude loading is positive. Components whose variance is
/// negligible relative to the total are flagged degenerate and rendered as
/// zero channels.
inline PcaImage pca_rgb(const Matrix& map, Resolution resolution) {
  const Eigen::Index n = map.rows();
  require(map.rows() == map.cols(), "self-attention payload must be square");
  require(n == resolution.patches(), "payload size does not match " + to_string(resolution));
  require(n >= 3, "PCA needs at least 3 patches");
  require(map.allFinite(), "PCA input must be finite");

  const RowVector mean = map.colwise().mean();
  const Matrix centered = map.rowwise() - mean;
  const Matrix covariance = (centered.transpose() * centered) / static_cast<double>(n - 1);
  const Eigen::SelfAdjointEigenSolver<Matrix> solver(covariance);
  if (solver.info() != Eigen::Success) throw std::runtime_error("eigendecomposition failed");

  const double total = std::max(covariance.trace(), 0.0);
  PcaImage out;
  out.resolution = resolution;
  out.components = Matrix::Zero(3, n);
  out.projections = Matrix::Zero(n, 3);
  for (int c = 0; c < 3; ++c) {
    const Eigen::Index idx = n - 1 - c;  // eigenvalues ascend
    const double variance = std::max(solver.eigenvalues()[idx], 0.0);
    Vector direction = solver.eigenvectors().col(idx);
    Eigen::Index peak = 0;
    direction.cwiseAbs().maxCoeff(&peak);
    if (direction[peak] < 0.0) direction = -direction;

    out.explained_variance[c] = variance;
    out.degenerate[c] = !(total > 0.0) || variance <= 1e-10 * total;
    out.components.row(c) = direction.transpose();
    if (!out.degenerate[c]) out.projections.col(c) = centered * direction;

    Matrix channel = Matrix::Zero(resolution.height, resolution.width);
    const Vector p = out.projections.col(c);
    const double lo = p.minCoeff(), hi = p.maxCoeff();
    if (!out.degenerate[c] && hi > lo)
      for (Eigen::Index i = 0; i < n; ++i) channel.data()[i] = (p[i] - lo) / (hi - lo);
    out.channels[static_cast<std::size_t>(c)] = std::move(channel);
  }
  return out;
}

inline RgbImage pca_to_image(const PcaImage& pca, int scale = 1) {
  require(scale >= 1, "scale must be >= 1");
  const Resolution r = pca.resolution;
  RgbImage img(r.width * scale, r.height * scale);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) {
        const double v = pca.channels[static_cast<std::size_t>(c)](y / scale, x / scale);
        img.at(y, x, c) = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
      }
  return img;
}

struct DumpRecord {
  int layer_index = 0;
  int timestep = 0;  // sampler step index
  MapKind kind = MapKind::self;
  Resolution resolution;
  int rows = 0;
  int cols = 0;
  std::vector<float> payload;  // row-major

  [[nodiscard]] Matrix matrix() const {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = payload[static_cast<std::size_t>(i)];
    return m;
  }

  bool operator==(const DumpRecord&) const = default;
};

inline DumpRecord make_dump_record(const AttentionCapture& capture) {
  DumpRecord r{capture.layer_index, capture.step_index, capture.kind, capture.resolution,
               static_cast<int>(capture.weights.rows()), static_cast<int>(capture.weights.cols()), {}};
  r.payload.resize(static_cast<std::size_t>(capture.weights.size()));
  for (Eigen::Index i = 0; i < capture.weights.size(); ++i)
    r.payload[static_cast<std::size_t>(i)] = static_cast<float>(capture.weights.data()[i]);
  return r;
}

inline std::string dump_filename(const DumpRecord& r) {
  char buf[96];
  std::snprintf(buf, sizeof(buf), "L%03d_S%04d_%s.hpat", r.layer_index, r.timestep,
                std::string(to_string(r.kind)).c_str());
  return buf;
}

namespace detail {

inline constexpr char kDumpMagic[4] = {'H', 'P', 'A', 'T'};
inline constexpr std::uint32_t kDumpVersion = 1;

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

inline std::uint32_t get_u32(const std::string& in, std::size_t offset) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[offset + i])) << (8 * i);
  return v;
}

inline void check_record_shape(const DumpRecord& r, const std::string& where) {
  const int hw = r.resolution.patches();
  const bool ok = r.kind == MapKind::cross ? (r.rows == hw && r.cols >= 1) : (r.rows == hw && r.cols == hw);
  if (!ok)
    throw FormatError(where + ": payload " + std::to_string(r.rows) + "x" + std::to_string(r.cols) +
                      " inconsistent with kind " + std::string(to_string(r.kind)) + " at " +
                      to_string(r.resolution));
}

}  // namespace detail

/// Single writer per directory. Records are written as they arrive; the
/// sidecar index is written by finish() (or the destructor).
class DumpWriter {
 public:
  explicit DumpWriter(std::filesystem::path dir) : dir_(std::move(dir)) { std::filesystem::create_directories(dir_); }
  DumpWriter(const DumpWriter&) = delete;
  DumpWriter& operator=(const DumpWriter&) = delete;
  ~DumpWriter() {
    try {
      finish();
    } catch (...) {
    }
  }

  /// Returns the file name written.
  std::string write(const DumpRecord& r) {
    const std::string name = dump_filename(r);
    require(r.payload.size() == static_cast<std::size_t>(r.rows) * static_cast<std::size_t>(r.cols),
            name + ": payload length does not match its dimensions");
    for (float v : r.payload) require(std::isfinite(v), name + ": dump payloads must be finite");
    detail::check_record_shape(r, name);

    std::string bytes(detail::kDumpMagic, 4);
    detail::put_u32(bytes, detail::kDumpVersion);
    detail::put_u32(bytes, 2);
    detail::put_u32(bytes, static_cast<std::uint32_t>(r.rows));
    detail::put_u32(bytes, static_cast<std::uint32_t>(r.cols));
    bytes.reserve(bytes.size() + r.payload.size() * 4);
    for (float v : r.payload) detail::put_u32(bytes, std::bit_cast<std::uint32_t>(v));

    std::ofstream out(dir_ / name, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write dump file " + (dir_ / name).string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    index_ += std::to_string(r.layer_index) + " " + std::to_string(r.timestep) + " " +
              std::string(to_string(r.kind)) + " " + to_string(r.resolution) + " " + name + "\n";
    files_.push_back(name);
    finished_ = false;
    return name;
  }

  void finish() {
    if (finished_) return;
    std::ofstream out(dir_ / "index.txt", std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write dump index in " + dir_.string());
    out << "# layer step kind resolution file\n" << index_;
    finished_ = true;
  }

  [[nodiscard]] const std::vector<std::string>& files() const { return files_; }

 private:
  std::filesystem::path dir_;
  std::string index_;
  std::vector<std::string> files_;
  bool finished_ = false;
};

inline std::vector<std::string> write_dump(const std::filesystem::path& dir, const std::vector<DumpRecord>& records) {
  DumpWriter writer(dir);
  for (const auto& r : records) writer.write(r);
  writer.finish();
  return writer.files();
}

inline DumpRecord read_dump_file(const std::filesystem::path& path, int layer, int step, MapKind kind,
                                 Resolution res) {
  const std::string where = path.string();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(where + ": cannot open dump file");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || bytes.compare(0, 4, detail::kDumpMagic, 4) != 0)
    throw FormatError(where + ": bad header magic (expected HPAT)");
  const std::uint32_t version = detail::get_u32(bytes, 4);
  if (version != detail::kDumpVersion) throw FormatError(where + ": unsupported version " + std::to_string(version));
  const std::uint32_t rank = detail::get_u32(bytes, 8);
  if (rank != 2) throw FormatError(where + ": expected rank 2, got " + std::to_string(rank));
  if (bytes.size() < 20) throw FormatError(where + ": truncated header");
  DumpRecord r{layer, step, kind, res, static_cast<int>(detail::get_u32(bytes, 12)),
               static_cast<int>(detail::get_u32(bytes, 16)), {}};
  const std::size_t count = static_cast<std::size_t>(r.rows) * static_cast<std::size_t>(r.cols);
  if (bytes.size() != 20 + 4 * count)
    throw FormatError(where + ": truncated payload (expected " + std::to_string(20 + 4 * count) + " bytes, found " +
                      std::to_string(bytes.size()) + ")");
  detail::check_record_shape(r, where);
  r.payload.resize(count);
  for (std::size_t i = 0; i < count; ++i) r.payload[i] = std::bit_cast<float>(detail::get_u32(bytes, 20 + 4 * i));
  return r;
}

/// Reads every record listed in `dir/index.txt`, in index order.
inline std::vector<DumpRecord> read_dump(const std::filesystem::path& dir) {
  const auto index_path = dir / "index.txt";
  std::ifstream in(index_path);
  if (!in) throw FormatError(index_path.string() + ": missing dump index");
  std::vector<DumpRecord> records;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    int layer = 0, step = 0;
    std::string kind, res, file;
    if (!(fields >> layer >> step >> kind >> res >> file))
      throw FormatError(index_path.string() + ":" + std::to_string(number) + ": malformed index entry");
    const auto x = res.find('x');
    if (x == std::string::npos) throw FormatError(index_path.string() + ": bad resolution '" + res + "'");
    Resolution r{std::stoi(res.substr(0, x)), std::stoi(res.substr(x + 1))};
    MapKind k;
    try {
      k = parse_map_kind(kind);
    } catch (const InvalidArgument& e) {
      throw FormatError(index_path.string() + ": " + e.what());
    }
    records.push_back(read_dump_file(dir / file, layer, step, k, r));
  }
  return records;
}

}  // namespace harmonpaint
