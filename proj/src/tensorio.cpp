#include "fusionrank/tensorio.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "binio.hpp"
#include "fusionrank/error.hpp"

namespace fusionrank {

namespace {

constexpr std::uint32_t kFeatVersion = 1;

// Above float rounding of a freshly normalized row (|norm - 1| <= 2^-24).
constexpr double kUnitNormSlack = 1e-7;

std::vector<std::string> split_lines(std::string_view text) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.emplace_back(line);
    start = end + 1;
  }
  return lines;
}

void check_id_text(const std::string& id) {
  if (id.empty()) throw DataError("empty identifier");
  if (id.find_first_of("\r\n") != std::string::npos) {
    throw DataError("identifier contains a line break: '" + id + "'");
  }
}

}  // namespace

FeatureMatrix::FeatureMatrix(std::size_t rows, std::size_t dim, std::vector<float> data,
                             std::vector<std::string> ids)
    : rows_(rows), dim_(dim), data_(std::move(data)), ids_(std::move(ids)) {
  if (ids_.size() != rows_) {
    throw DataError("id count " + std::to_string(ids_.size()) + " does not match rows " +
                    std::to_string(rows_));
  }
  if (data_.size() != rows_ * dim_) {
    throw DataError("data length " + std::to_string(data_.size()) + " does not match " +
                    std::to_string(rows_) + "x" + std::to_string(dim_));
  }
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (!std::isfinite(data_[i])) {
      throw DataError("non-finite value at row " + std::to_string(i / std::max<std::size_t>(dim_, 1)) +
                      ", column " + std::to_string(i % std::max<std::size_t>(dim_, 1)));
    }
  }
  std::unordered_set<std::string_view> seen;
  seen.reserve(ids_.size());
  for (const auto& id : ids_) {
    check_id_text(id);
    if (!seen.insert(id).second) throw DataError("duplicate id '" + id + "'");
  }
}

const std::string& LabelMap::at(const std::string& id) const {
  auto it = entries_.find(id);
  if (it == entries_.end()) throw DataError("no label for id '" + id + "'");
  return it->second;
}

std::filesystem::path ids_path_for(const std::filesystem::path& feat_path) {
  return feat_path.string() + ".ids";
}

std::string encode_features(const FeatureMatrix& m) {
  detail::ByteWriter w;
  w.reserve(kFeatHeaderBytes + m.data().size() * 4);
  w.magic("FEAT");
  w.u32(kFeatVersion);
  w.u64(m.rows());
  w.u32(static_cast<std::uint32_t>(m.dim()));
  for (float v : m.data()) w.f32(v);
  return w.bytes();
}

std::string encode_ids(const std::vector<std::string>& ids) {
  std::string out;
  for (const auto& id : ids) {
    out += id;
    out += '\n';
  }
  return out;
}

FeatureMatrix decode_features(std::string_view feat_bytes, std::string_view ids_text,
                              const std::string& context) {
  detail::ByteReader r(feat_bytes, context);
  r.expect_magic("FEAT");
  const std::uint32_t version = r.u32();
  if (version != kFeatVersion) {
    throw FormatError(context + ": unsupported version " + std::to_string(version));
  }
  const std::uint64_t rows = r.u64();
  const std::uint32_t dim = r.u32();
  if (dim != 0 && rows > r.remaining() / (std::uint64_t{dim} * 4)) {
    throw TruncationError(context + ": header declares " + std::to_string(rows) + "x" +
                          std::to_string(dim) + " but payload has only " +
                          std::to_string(r.remaining()) + " bytes");
  }
  r.expect_remaining(rows * dim * 4);
  std::vector<float> data(rows * dim);
  for (auto& v : data) v = r.f32();

  std::vector<std::string> ids = split_lines(ids_text);
  if (ids.size() != rows) {
    throw DataError(context + ": id sidecar has " + std::to_string(ids.size()) +
                    " lines, expected " + std::to_string(rows));
  }
  return FeatureMatrix(rows, dim, std::move(data), std::move(ids));
}

FeatureMatrix load_features(const std::filesystem::path& path) {
  const std::string bytes = detail::read_file(path);
  const std::string ids = detail::read_file(ids_path_for(path));
  return decode_features(bytes, ids, path.string());
}

void save_features(const FeatureMatrix& m, const std::filesystem::path& path) {
  detail::write_file(path, encode_features(m));
  detail::write_file(ids_path_for(path), encode_ids(m.ids()));
}

FeatureMatrix load_features_csv(const std::filesystem::path& path) {
  const auto lines = split_lines(detail::read_file(path));
  std::vector<std::string> ids;
  std::vector<float> data;
  std::size_t dim = 0;
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    const std::string& line = lines[ln];
    if (line.empty()) continue;
    std::size_t comma = line.find(',');
    if (comma == std::string::npos) {
      throw FormatError(path.string() + ":" + std::to_string(ln + 1) + ": missing values");
    }
    ids.push_back(line.substr(0, comma));
    std::size_t count = 0;
    std::size_t pos = comma + 1;
    while (pos <= line.size()) {
      std::size_t next = line.find(',', pos);
      if (next == std::string::npos) next = line.size();
      float v = 0.0f;
      const char* first = line.data() + pos;
      const char* last = line.data() + next;
      auto res = std::from_chars(first, last, v);
      if (res.ec != std::errc() || res.ptr != last) {
        throw FormatError(path.string() + ":" + std::to_string(ln + 1) + ": bad number '" +
                          std::string(first, last) + "'");
      }
      data.push_back(v);
      ++count;
      pos = next + 1;
    }
    if (ids.size() == 1) {
      dim = count;
    } else if (count != dim) {
      throw FormatError(path.string() + ":" + std::to_string(ln + 1) + ": expected " +
                        std::to_string(dim) + " values, found " + std::to_string(count));
    }
  }
  const std::size_t rows = ids.size();
  return FeatureMatrix(rows, dim, std::move(data), std::move(ids));
}

void save_features_csv(const FeatureMatrix& m, const std::filesystem::path& path) {
  std::ostringstream out;
  out.precision(9);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    out << m.ids()[i];
    for (float v : m.row(i)) out << ',' << v;
    out << '\n';
  }
  detail::write_file(path, out.str());
}

FeatureMatrix l2_normalize(const FeatureMatrix& m) {
  std::vector<float> data(m.data().begin(), m.data().end());
  const std::size_t dim = m.dim();
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double sq = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
      const double v = data[i * dim + j];
      sq += v * v;
    }
    const double norm = std::sqrt(sq);
    if (norm < 1e-12) {
      throw NormalizationError(i, "cannot normalize zero vector at row " + std::to_string(i));
    }
    if (std::abs(norm - 1.0) <= kUnitNormSlack) continue;
    for (std::size_t j = 0; j < dim; ++j) {
      data[i * dim + j] = static_cast<float>(data[i * dim + j] / norm);
    }
  }
  return FeatureMatrix(m.rows(), dim, std::move(data), m.ids());
}

FeatureMatrix normalize_accumulated(std::size_t rows, std::size_t dim,
                                    const std::vector<double>& acc,
                                    std::vector<std::string> ids) {
  std::vector<float> data(rows * dim);
  for (std::size_t i = 0; i < rows; ++i) {
    double sq = 0.0;
    for (std::size_t j = 0; j < dim; ++j) sq += acc[i * dim + j] * acc[i * dim + j];
    const double norm = std::sqrt(sq);
    if (norm < 1e-12) {
      throw NormalizationError(i, "cannot normalize zero vector at row " + std::to_string(i));
    }
    for (std::size_t j = 0; j < dim; ++j) {
      data[i * dim + j] = static_cast<float>(acc[i * dim + j] / norm);
    }
  }
  return FeatureMatrix(rows, dim, std::move(data), std::move(ids));
}

std::string encode_submission(const std::vector<RankedResult>& results) {
  std::string out = "Id,Predicted\n";
  for (const auto& r : results) {
    if (r.query_id.find_first_of(", \r\n") != std::string::npos) {
      throw ContractError("query id '" + r.query_id + "' cannot be written to a submission");
    }
    std::unordered_set<std::string_view> seen;
    out += r.query_id;
    out += ',';
    for (std::size_t i = 0; i < r.entries.size(); ++i) {
      const std::string& g = r.entries[i].first;
      if (g.empty() || g.find_first_of(", \r\n") != std::string::npos) {
        throw ContractError("gallery id '" + g + "' cannot be written to a submission");
      }
      if (!seen.insert(g).second) {
        throw ContractError("duplicate gallery id '" + g + "' for query '" + r.query_id + "'");
      }
      if (i > 0) out += ' ';
      out += g;
    }
    out += '\n';
  }
  return out;
}

void write_submission(const std::vector<RankedResult>& results,
                      const std::filesystem::path& path) {
  detail::write_file(path, encode_submission(results));
}

std::vector<RankedResult> load_submission(const std::filesystem::path& path) {
  const auto lines = split_lines(detail::read_file(path));
  if (lines.empty() || lines[0] != "Id,Predicted") {
    throw FormatError(path.string() + ": missing 'Id,Predicted' header");
  }
  std::vector<RankedResult> out;
  for (std::size_t ln = 1; ln < lines.size(); ++ln) {
    const std::string& line = lines[ln];
    if (line.empty()) continue;
    const std::size_t comma = line.find(',');
    if (comma == std::string::npos || line.find(',', comma + 1) != std::string::npos) {
      throw FormatError(path.string() + ":" + std::to_string(ln + 1) +
                        ": expected exactly one comma");
    }
    RankedResult r;
    r.query_id = line.substr(0, comma);
    std::string_view rest(line);
    rest.remove_prefix(comma + 1);
    std::size_t pos = 0;
    while (pos < rest.size()) {
      std::size_t next = rest.find(' ', pos);
      if (next == std::string_view::npos) next = rest.size();
      if (next == pos) {
        throw FormatError(path.string() + ":" + std::to_string(ln + 1) + ": empty gallery id");
      }
      r.entries.emplace_back(std::string(rest.substr(pos, next - pos)), 0.0f);
      pos = next + 1;
    }
    out.push_back(std::move(r));
  }
  return out;
}

LabelMap load_labels(const std::filesystem::path& path) {
  const auto lines = split_lines(detail::read_file(path));
  if (lines.empty() || lines[0] != "id,label") {
    throw FormatError(path.string() + ": missing 'id,label' header");
  }
  std::unordered_map<std::string, std::string> entries;
  for (std::size_t ln = 1; ln < lines.size(); ++ln) {
    const std::string& line = lines[ln];
    if (line.empty()) continue;
    const std::size_t comma = line.find(',');
    if (comma == std::string::npos || comma == 0) {
      throw FormatError(path.string() + ":" + std::to_string(ln + 1) + ": expected 'id,label'");
    }
    std::string id = line.substr(0, comma);
    if (!entries.emplace(id, line.substr(comma + 1)).second) {
      throw DataError(path.string() + ": duplicate id '" + id + "'");
    }
  }
  return LabelMap(std::move(entries));
}

void save_labels(const std::vector<std::pair<std::string, std::string>>& rows,
                 const std::filesystem::path& path) {
  std::string out = "id,label\n";
  for (const auto& [id, label] : rows) {
    out += id;
    out += ',';
    out += label;
    out += '\n';
  }
  detail::write_file(path, out);
}

}  // namespace fusionrank
