#include "fusionrank/sparse.hpp"

#include "binio.hpp"

namespace fusionrank {

namespace {
constexpr std::uint32_t kSprwVersion = 1;
}

std::string encode_sparse(const SparseRowMatrix& m) {
  detail::ByteWriter w;
  w.reserve(20 + m.offsets().size() * 8 + m.nnz() * 8);
  w.magic("SPRW");
  w.u32(kSprwVersion);
  w.u64(m.rows());
  w.u32(static_cast<std::uint32_t>(m.cols()));
  for (std::uint64_t off : m.offsets()) w.u64(off);
  for (std::size_t k = 0; k < m.nnz(); ++k) {
    w.u32(m.columns()[k]);
    w.f32(m.values()[k]);
  }
  return w.bytes();
}

SparseRowMatrix decode_sparse(std::string_view bytes, const std::string& context) {
  detail::ByteReader r(bytes, context);
  r.expect_magic("SPRW");
  const std::uint32_t version = r.u32();
  if (version != kSprwVersion) {
    throw FormatError(context + ": unsupported version " + std::to_string(version));
  }
  const std::uint64_t rows = r.u64();
  const std::uint32_t cols = r.u32();
  if (rows >= r.remaining() / 8) {
    throw TruncationError(context + ": offsets table truncated");
  }
  std::vector<std::uint64_t> offsets(rows + 1);
  for (auto& o : offsets) o = r.u64();
  const std::uint64_t nnz = offsets.back();
  if (nnz > r.remaining() / 8) throw TruncationError(context + ": entry payload truncated");
  r.expect_remaining(nnz * 8);
  std::vector<std::uint32_t> columns(nnz);
  std::vector<float> values(nnz);
  for (std::uint64_t k = 0; k < nnz; ++k) {
    columns[k] = r.u32();
    values[k] = r.f32();
  }
  try {
    return SparseRowMatrix(rows, cols, std::move(offsets), std::move(columns), std::move(values));
  } catch (const FormatError& e) {
    throw FormatError(context + ": " + e.what());
  }
}

void save_sparse(const SparseRowMatrix& m, const std::filesystem::path& path) {
  detail::write_file(path, encode_sparse(m));
}

SparseRowMatrix load_sparse(const std::filesystem::path& path) {
  return decode_sparse(detail::read_file(path), path.string());
}

}  // namespace fusionrank
