#pragma once

// File formats.
//
// Matrix file: one JSON header line
//   {"magic":"LATA-MAT","version":1,"rows":R,"cols":C,"dtype":"f32","layout":"row-major","endianness":"little"}
// terminated by a single '\n', followed by R*C little-endian IEEE-754 binary32 values.
//
// Labels file: newline-delimited JSON, one {"index":i,"label":y,"split":"cal"|"test"} per row.
// "label" may be null for unlabeled test rows.
//
// ViLU bundle: JSON manifest naming matrix files relative to the manifest directory:
//   {"attention_scale":s,"query":"q.mat","key":"k.mat","value":"v.mat",
//    "mlp":[{"weight":"w0.mat","bias":"b0.mat","activation":"relu"}, ...]}
// attention_scale defaults to sqrt(D). Biases are stored as 1 x out matrices.

#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lata/core.hpp"
#include "lata/error.hpp"
#include "lata/failure_signals.hpp"
#include "lata/matrix.hpp"

namespace lata {

namespace fs = std::filesystem;

inline constexpr const char* kMatrixMagic = "LATA-MAT";
inline constexpr int kMatrixVersion = 1;

inline std::string matrix_header(std::size_t rows, std::size_t cols) {
  nlohmann::ordered_json h;
  h["magic"] = kMatrixMagic;
  h["version"] = kMatrixVersion;
  h["rows"] = rows;
  h["cols"] = cols;
  h["dtype"] = "f32";
  h["layout"] = "row-major";
  h["endianness"] = "little";
  return h.dump();
}

inline void write_matrix(const Matrix& m, const fs::path& path) {
  for (double x : m.data())
    detail::require(std::isfinite(x), ErrorCode::validation, "matrix contains non-finite values");
  std::string bytes = matrix_header(m.rows(), m.cols());
  bytes.push_back('\n');
  bytes.reserve(bytes.size() + m.data().size() * 4);
  for (double x : m.data()) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(x));
    for (int b = 0; b < 4; ++b) bytes.push_back(static_cast<char>((bits >> (8 * b)) & 0xFFu));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  detail::require(static_cast<bool>(out), ErrorCode::io_failure, "cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  detail::require(static_cast<bool>(out), ErrorCode::io_failure, "write failed for '" + path.string() + "'");
}

inline Matrix read_matrix(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  detail::require(static_cast<bool>(in), ErrorCode::io_failure, "cannot open '" + path.string() + "'");
  std::string header;
  detail::require(static_cast<bool>(std::getline(in, header)) && !in.eof(), ErrorCode::malformed_header,
                  "missing header line in '" + path.string() + "'");
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::malformed_header, "header is not JSON: " + std::string(e.what()));
  }
  auto field = [&](const char* key) -> const nlohmann::json& {
    detail::require(h.is_object() && h.contains(key), ErrorCode::malformed_header,
                    std::string("header lacks '") + key + "'");
    return h.at(key);
  };
  detail::require(field("magic") == kMatrixMagic, ErrorCode::malformed_header, "wrong magic");
  detail::require(field("version") == kMatrixVersion, ErrorCode::malformed_header, "unsupported version");
  detail::require(field("dtype") == "f32", ErrorCode::malformed_header, "unsupported dtype");
  detail::require(field("layout") == "row-major", ErrorCode::malformed_header, "unsupported layout");
  detail::require(field("endianness") == "little", ErrorCode::malformed_header, "unsupported endianness");
  const auto& jr = field("rows");
  const auto& jc = field("cols");
  detail::require(jr.is_number_unsigned() && jc.is_number_unsigned(), ErrorCode::malformed_header,
                  "rows/cols must be non-negative integers");
  const auto rows = jr.get<std::size_t>();
  const auto cols = jc.get<std::size_t>();
  detail::require(rows > 0 && cols > 0, ErrorCode::empty_matrix, "matrix has zero rows or columns");

  const std::string payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  detail::require(payload.size() == rows * cols * 4, ErrorCode::length_mismatch,
                  "payload holds " + std::to_string(payload.size()) + " bytes, expected " +
                      std::to_string(rows * cols * 4));
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < rows * cols; ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b)
      bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(payload[i * 4 + b])) << (8 * b);
    m.data()[i] = static_cast<double>(std::bit_cast<float>(bits));
  }
  return m;
}

enum class Split { cal, test };

struct LabelRecord {
  std::size_t index = 0;
  std::optional<std::size_t> label;
  Split split = Split::test;
};

inline void write_labels(const std::vector<LabelRecord>& records, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  detail::require(static_cast<bool>(out), ErrorCode::io_failure, "cannot open '" + path.string() + "' for writing");
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["index"] = r.index;
    j["label"] = r.label ? nlohmann::ordered_json(*r.label) : nlohmann::ordered_json(nullptr);
    j["split"] = r.split == Split::cal ? "cal" : "test";
    out << j.dump() << '\n';
  }
  detail::require(static_cast<bool>(out), ErrorCode::io_failure, "write failed for '" + path.string() + "'");
}

/// Records in file order; indices must be unique and dense in [0, N).
inline std::vector<LabelRecord> read_labels(const fs::path& path) {
  std::ifstream in(path);
  detail::require(static_cast<bool>(in), ErrorCode::io_failure, "cannot open '" + path.string() + "'");
  std::vector<LabelRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      throw Error(ErrorCode::data, "invalid JSON at " + where);
    }
    detail::require(j.is_object() && j.contains("index") && j["index"].is_number_unsigned(), ErrorCode::data,
                    "missing or invalid index at " + where);
    LabelRecord r;
    r.index = j["index"].get<std::size_t>();
    if (j.contains("label") && !j["label"].is_null()) {
      detail::require(j["label"].is_number_unsigned(), ErrorCode::data, "invalid label at " + where);
      r.label = j["label"].get<std::size_t>();
    }
    detail::require(j.contains("split") && j["split"].is_string(), ErrorCode::data, "missing split at " + where);
    const auto s = j["split"].get<std::string>();
    detail::require(s == "cal" || s == "test", ErrorCode::data, "split must be cal or test at " + where);
    r.split = s == "cal" ? Split::cal : Split::test;
    out.push_back(r);
  }
  std::vector<char> seen(out.size(), 0);
  for (const auto& r : out) {
    detail::require(r.index < out.size(), ErrorCode::data, "label indices are not dense");
    detail::require(!seen[r.index], ErrorCode::data, "duplicate index " + std::to_string(r.index));
    seen[r.index] = 1;
  }
  return out;
}

inline std::vector<std::string> read_class_names(const fs::path& path) {
  std::ifstream in(path);
  detail::require(static_cast<bool>(in), ErrorCode::io_failure, "cannot open '" + path.string() + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception&) {
    throw Error(ErrorCode::data, "class names file is not JSON");
  }
  detail::require(j.is_array(), ErrorCode::data, "class names must be a JSON array of strings");
  std::vector<std::string> names;
  for (const auto& n : j) {
    detail::require(n.is_string(), ErrorCode::data, "class names must be strings");
    names.push_back(n.get<std::string>());
  }
  return names;
}

inline void write_class_names(const std::vector<std::string>& names, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  detail::require(static_cast<bool>(out), ErrorCode::io_failure, "cannot open '" + path.string() + "' for writing");
  out << nlohmann::json(names).dump() << '\n';
}

/// Embeddings, labels and class bank of one task. Rows of `embeddings` are unit norm.
struct Dataset {
  Matrix embeddings;
  std::vector<std::optional<std::size_t>> labels;
  std::vector<Split> split;
  PrototypeBank bank;

  std::size_t size() const noexcept { return embeddings.rows(); }
  std::size_t classes() const noexcept { return bank.classes(); }

  std::vector<std::size_t> rows_in(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < split.size(); ++i)
      if (split[i] == s) out.push_back(i);
    return out;
  }

  std::vector<LabeledExample> labeled(Split s) const {
    std::vector<LabeledExample> out;
    for (auto i : rows_in(s))
      if (labels[i]) out.push_back({Embedding::normalize(embeddings.row(i)), *labels[i]});
    return out;
  }
};

struct DatasetPaths {
  fs::path embeddings;
  fs::path prototypes;
  fs::path labels;
  fs::path class_names;
};

inline DatasetPaths dataset_paths_in(const fs::path& dir) {
  return {dir / "embeddings.mat", dir / "prototypes.mat", dir / "labels.jsonl", dir / "classes.json"};
}

/// Loads and validates a dataset; embeddings and prototypes are normalized on load.
/// In-memory order follows the labels file.
inline Dataset load_dataset(const DatasetPaths& paths) {
  const Matrix raw = read_matrix(paths.embeddings);
  const Matrix protos = read_matrix(paths.prototypes);
  detail::require(raw.cols() == protos.cols(), ErrorCode::data,
                  "embedding dimension " + std::to_string(raw.cols()) + " differs from prototype dimension " +
                      std::to_string(protos.cols()));
  auto names = read_class_names(paths.class_names);
  detail::require(names.size() == protos.rows(), ErrorCode::data, "missing class names");
  const auto records = read_labels(paths.labels);
  detail::require(records.size() == raw.rows(), ErrorCode::data, "labels file does not cover every embedding");

  Dataset ds;
  try {
    ds.bank = PrototypeBank(protos, std::move(names));
  } catch (const Error& e) {
    throw Error(ErrorCode::data, e.what());
  }
  ds.embeddings = Matrix(raw.rows(), raw.cols());
  for (std::size_t r = 0; r < records.size(); ++r) {
    const auto& rec = records[r];
    if (rec.label)
      detail::require(*rec.label < ds.bank.classes(), ErrorCode::data,
                      "label " + std::to_string(*rec.label) + " out of range");
    Embedding e;
    try {
      e = Embedding::normalize(raw.row(rec.index));
    } catch (const Error& err) {
      throw Error(ErrorCode::data, "embedding " + std::to_string(rec.index) + ": " + err.what());
    }
    std::copy(e.values().begin(), e.values().end(), ds.embeddings.row(r).begin());
    ds.labels.push_back(rec.label);
    ds.split.push_back(rec.split);
  }
  return ds;
}

inline void write_dataset(const Dataset& ds, const fs::path& dir) {
  fs::create_directories(dir);
  const auto p = dataset_paths_in(dir);
  write_matrix(ds.embeddings, p.embeddings);
  write_matrix(ds.bank.matrix(), p.prototypes);
  write_class_names(ds.bank.class_names(), p.class_names);
  std::vector<LabelRecord> recs;
  for (std::size_t i = 0; i < ds.size(); ++i) recs.push_back({i, ds.labels[i], ds.split[i]});
  write_labels(recs, p.labels);
}

inline ViluWeights load_vilu_bundle(const fs::path& manifest_path) {
  std::ifstream in(manifest_path);
  detail::require(static_cast<bool>(in), ErrorCode::io_failure, "cannot open '" + manifest_path.string() + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception&) {
    throw Error(ErrorCode::validation, "bundle manifest is not JSON");
  }
  const fs::path base = manifest_path.parent_path();
  auto mat = [&](const nlohmann::json& node, const char* key) {
    detail::require(node.contains(key) && node[key].is_string(), ErrorCode::validation,
                    std::string("bundle lacks '") + key + "'");
    return read_matrix(base / node[key].get<std::string>());
  };
  ViluWeights w;
  w.query_proj = mat(j, "query");
  // sqrt(D) unless the manifest says otherwise.
  w.attention_scale = std::sqrt(static_cast<double>(w.query_proj.rows()));
  if (j.contains("attention_scale")) {
    detail::require(j["attention_scale"].is_number(), ErrorCode::validation, "attention_scale must be a number");
    w.attention_scale = j["attention_scale"].get<double>();
  }
  w.key_proj = mat(j, "key");
  w.value_proj = mat(j, "value");
  detail::require(j.contains("mlp") && j["mlp"].is_array(), ErrorCode::validation, "bundle lacks mlp layers");
  for (const auto& layer : j["mlp"]) {
    DenseLayer d;
    d.weight = mat(layer, "weight");
    const Matrix b = mat(layer, "bias");
    d.bias = b.data();
    d.activation = parse_activation(layer.value("activation", std::string("identity")));
    w.mlp.push_back(std::move(d));
  }
  w.validate();
  return w;
}

inline void write_vilu_bundle(const ViluWeights& w, const fs::path& dir) {
  w.validate();
  fs::create_directories(dir);
  nlohmann::ordered_json j;
  j["attention_scale"] = w.attention_scale;
  write_matrix(w.query_proj, dir / "query.mat");
  write_matrix(w.key_proj, dir / "key.mat");
  write_matrix(w.value_proj, dir / "value.mat");
  j["query"] = "query.mat";
  j["key"] = "key.mat";
  j["value"] = "value.mat";
  j["mlp"] = nlohmann::ordered_json::array();
  for (std::size_t l = 0; l < w.mlp.size(); ++l) {
    const std::string wn = "mlp" + std::to_string(l) + "_weight.mat";
    const std::string bn = "mlp" + std::to_string(l) + "_bias.mat";
    write_matrix(w.mlp[l].weight, dir / wn);
    write_matrix(Matrix(1, w.mlp[l].bias.size(), w.mlp[l].bias), dir / bn);
    nlohmann::ordered_json layer;
    layer["weight"] = wn;
    layer["bias"] = bn;
    layer["activation"] = to_string(w.mlp[l].activation);
    j["mlp"].push_back(layer);
  }
  std::ofstream out(dir / "bundle.json", std::ios::trunc);
  detail::require(static_cast<bool>(out), ErrorCode::io_failure, "cannot write bundle manifest");
  out << j.dump(2) << '\n';
}

}  // namespace lata
