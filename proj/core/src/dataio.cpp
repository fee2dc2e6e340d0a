#include "mater/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "mater/errors.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace mater {
namespace {

std::string resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  if (path.is_absolute()) return path.string();
  return (base / path).lexically_normal().string();
}

[[noreturn]] void line_error(const std::string& path, std::size_t line,
                             const std::string& msg) {
  throw ValidationError(path + ":" + std::to_string(line) + ": " + msg);
}

Sample parse_sample(const json& j, const fs::path& base,
                    const std::string& path, std::size_t line) {
  Sample s;
  if (!j.is_object()) line_error(path, line, "expected a JSON object");
  if (!j.contains("id") || !j["id"].is_string()) {
    line_error(path, line, "missing string field 'id'");
  }
  s.id = j["id"].get<std::string>();
  if (!j.contains("wav") || !j["wav"].is_string()) {
    line_error(path, line, "missing string field 'wav'");
  }
  s.wav = resolve(base, j["wav"].get<std::string>());
  s.transcript = j.value("transcript", std::string{});

  if (j.contains("words")) {
    double prev_end = -1.0;
    for (const auto& w : j["words"]) {
      WordAlignment a;
      a.token = w.value("token", std::string{});
      a.start = w.value("start", 0.0);
      a.end = w.value("end", 0.0);
      if (a.end <= a.start) {
        line_error(path, line, "word '" + a.token + "' has end <= start");
      }
      if (a.start < prev_end) {
        line_error(path, line, "word alignments overlap or are unordered");
      }
      prev_end = a.end;
      s.words.push_back(std::move(a));
    }
  }

  if (j.contains("label")) {
    const auto label = j["label"].get<std::string>();
    if (category_index(label) < 0) {
      line_error(path, line, "invalid category '" + label + "'");
    }
    s.label = label;
  }
  if (j.contains("votes")) {
    for (const auto& [cat, count] : j["votes"].items()) {
      if (!count.is_number_integer() || count.get<int>() < 0) {
        line_error(path, line, "vote count for '" + cat + "' must be >= 0");
      }
      s.votes[cat] = count.get<int>();
    }
  }
  if (j.contains("attributes")) {
    const auto& a = j["attributes"];
    Attributes attrs;
    attrs.valence = a.value("valence", 0.0);
    attrs.arousal = a.value("arousal", 0.0);
    attrs.dominance = a.value("dominance", 0.0);
    for (double v : {attrs.valence, attrs.arousal, attrs.dominance}) {
      if (v < 1.0 || v > 7.0) {
        line_error(path, line, "attribute value " + std::to_string(v) +
                                   " outside [1, 7]");
      }
    }
    s.attributes = attrs;
  }
  if (j.contains("embeddings")) {
    for (const auto& [name, p] : j["embeddings"].items()) {
      s.embeddings[name] = resolve(base, p.get<std::string>());
    }
  }
  return s;
}

}  // namespace

std::vector<Sample> load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw RuntimeFailure("cannot open manifest: " + path);
  const fs::path base = fs::path(path).parent_path();

  std::vector<Sample> samples;
  std::set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      line_error(path, line_no, std::string("malformed JSON: ") + e.what());
    }
    Sample s = parse_sample(j, base, path, line_no);
    if (!seen.insert(s.id).second) {
      line_error(path, line_no, "duplicate sample id '" + s.id + "'");
    }
    samples.push_back(std::move(s));
  }
  return samples;
}

void save_manifest(const std::string& path, const std::vector<Sample>& samples) {
  std::ofstream out(path);
  if (!out) throw RuntimeFailure("cannot write manifest: " + path);
  const fs::path base = fs::path(path).parent_path();
  for (const auto& s : samples) {
    json j;
    j["id"] = s.id;
    j["wav"] = fs::path(s.wav).lexically_proximate(base).string();
    j["transcript"] = s.transcript;
    json words = json::array();
    for (const auto& w : s.words) {
      words.push_back({{"token", w.token}, {"start", w.start}, {"end", w.end}});
    }
    j["words"] = words;
    if (!s.votes.empty()) j["votes"] = s.votes;
    if (s.label) j["label"] = *s.label;
    if (s.attributes) {
      j["attributes"] = {{"valence", s.attributes->valence},
                         {"arousal", s.attributes->arousal},
                         {"dominance", s.attributes->dominance}};
    }
    if (!s.embeddings.empty()) {
      json embs = json::object();
      for (const auto& [name, p] : s.embeddings) {
        embs[name] = fs::path(p).lexically_proximate(base).string();
      }
      j["embeddings"] = embs;
    }
    out << j.dump() << "\n";
  }
}

namespace {

constexpr uint32_t kMatrixVersion = 1;

void put_u32(std::ostream& out, uint32_t v) {
  uint8_t b[4] = {uint8_t(v), uint8_t(v >> 8), uint8_t(v >> 16),
                  uint8_t(v >> 24)};
  out.write(reinterpret_cast<char*>(b), 4);
}

uint32_t get_u32(std::istream& in, const std::string& path) {
  uint8_t b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) {
    throw ValidationError("truncated matrix file: " + path);
  }
  return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 |
         uint32_t(b[3]) << 24;
}

}  // namespace

Eigen::MatrixXf read_matrix(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RuntimeFailure("cannot open matrix file: " + path);
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "MLEV", 4) != 0) {
    throw ValidationError("bad matrix magic in: " + path);
  }
  const uint32_t version = get_u32(in, path);
  if (version != kMatrixVersion) {
    throw ValidationError("unsupported matrix version in: " + path);
  }
  const uint32_t rows = get_u32(in, path);
  const uint32_t cols = get_u32(in, path);
  if (rows > 0 && cols > uint32_t(1) << 24) {
    throw ValidationError("matrix dimension overflow in: " + path);
  }
  const std::size_t expect = std::size_t(rows) * cols * 4;
  std::vector<char> payload(expect);
  in.read(payload.data(), std::streamsize(expect));
  if (std::size_t(in.gcount()) != expect) {
    throw ValidationError("truncated matrix payload in " + path + ": expected " +
                          std::to_string(expect) + " bytes, got " +
                          std::to_string(in.gcount()));
  }
  Eigen::MatrixXf m(rows, cols);
  for (uint32_t i = 0; i < rows; ++i) {
    for (uint32_t j = 0; j < cols; ++j) {
      uint32_t u = 0;
      const auto* p =
          reinterpret_cast<const uint8_t*>(payload.data()) +
          (std::size_t(i) * cols + j) * 4;
      u = uint32_t(p[0]) | uint32_t(p[1]) << 8 | uint32_t(p[2]) << 16 |
          uint32_t(p[3]) << 24;
      float f;
      std::memcpy(&f, &u, 4);
      m(i, j) = f;
    }
  }
  return m;
}

void write_matrix(const std::string& path, const Eigen::MatrixXf& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write matrix file: " + path);
  out.write("MLEV", 4);
  put_u32(out, kMatrixVersion);
  put_u32(out, uint32_t(m.rows()));
  put_u32(out, uint32_t(m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      uint32_t u;
      float f = m(i, j);
      std::memcpy(&u, &f, 4);
      uint8_t b[4] = {uint8_t(u), uint8_t(u >> 8), uint8_t(u >> 16),
                      uint8_t(u >> 24)};
      out.write(reinterpret_cast<char*>(b), 4);
    }
  }
}

namespace {

std::string task1_header() {
  std::string h = "id";
  for (const auto& c : category_order()) h += ",p_" + c;
  return h + ",pred";
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

}  // namespace

void write_predictions(const std::string& path, const ProbMatrix& preds,
                       const std::vector<int>* labels) {
  std::ofstream out(path);
  if (!out) throw RuntimeFailure("cannot write predictions: " + path);
  out << task1_header() << "\n";
  char buf[64];
  for (Eigen::Index i = 0; i < preds.probs.rows(); ++i) {
    const std::string id = i < Eigen::Index(preds.sample_ids.size())
                               ? preds.sample_ids[std::size_t(i)]
                               : std::to_string(i);
    out << id;
    int best = 0;
    for (int c = 0; c < kNumCategories; ++c) {
      std::snprintf(buf, sizeof(buf), "%.12g", preds.probs(i, c));
      out << "," << buf;
      if (preds.probs(i, c) > preds.probs(i, best)) best = c;
    }
    if (labels) best = labels->at(std::size_t(i));
    out << "," << category_order()[std::size_t(best)] << "\n";
  }
}

ProbMatrix read_predictions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw RuntimeFailure("cannot open predictions: " + path);
  std::string line;
  if (!std::getline(in, line) || line != task1_header()) {
    throw ValidationError("prediction header mismatch in: " + path);
  }
  std::vector<std::vector<double>> rows;
  ProbMatrix out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split_csv(line);
    if (fields.size() != kNumCategories + 2) {
      line_error(path, line_no, "expected 10 columns");
    }
    out.sample_ids.push_back(fields[0]);
    std::vector<double> row(kNumCategories);
    double sum = 0.0;
    for (int c = 0; c < kNumCategories; ++c) {
      row[std::size_t(c)] = std::stod(fields[std::size_t(c) + 1]);
      sum += row[std::size_t(c)];
      if (row[std::size_t(c)] < -1e-6) {
        line_error(path, line_no, "negative probability");
      }
    }
    if (std::abs(sum - 1.0) > 1e-6) {
      line_error(path, line_no, "probability row off the simplex");
    }
    const int label = category_index(fields.back());
    if (label < 0) line_error(path, line_no, "invalid pred label");
    out.pred_labels.push_back(label);
    rows.push_back(std::move(row));
  }
  out.probs.resize(Eigen::Index(rows.size()), kNumCategories);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (int c = 0; c < kNumCategories; ++c) {
      out.probs(Eigen::Index(i), c) = rows[i][std::size_t(c)];
    }
  }
  return out;
}

void write_attribute_predictions(const std::string& path,
                                 const AttributePredictions& preds) {
  std::ofstream out(path);
  if (!out) throw RuntimeFailure("cannot write predictions: " + path);
  out << "id,valence,arousal,dominance\n";
  char buf[64];
  for (Eigen::Index i = 0; i < preds.values.rows(); ++i) {
    const std::string id = i < Eigen::Index(preds.sample_ids.size())
                               ? preds.sample_ids[std::size_t(i)]
                               : std::to_string(i);
    out << id;
    for (int c = 0; c < 3; ++c) {
      std::snprintf(buf, sizeof(buf), "%.12g", preds.values(i, c));
      out << "," << buf;
    }
    out << "\n";
  }
}

AttributePredictions read_attribute_predictions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw RuntimeFailure("cannot open predictions: " + path);
  std::string line;
  if (!std::getline(in, line) || line != "id,valence,arousal,dominance") {
    throw ValidationError("prediction header mismatch in: " + path);
  }
  AttributePredictions out;
  std::vector<std::array<double, 3>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split_csv(line);
    if (fields.size() != 4) line_error(path, line_no, "expected 4 columns");
    out.sample_ids.push_back(fields[0]);
    rows.push_back({std::stod(fields[1]), std::stod(fields[2]),
                    std::stod(fields[3])});
  }
  out.values.resize(Eigen::Index(rows.size()), 3);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (int c = 0; c < 3; ++c) out.values(Eigen::Index(i), c) = rows[i][std::size_t(c)];
  }
  return out;
}

Eigen::VectorXd soft_targets(const std::map<std::string, int>& votes) {
  Eigen::VectorXd dist = Eigen::VectorXd::Zero(kNumCategories);
  for (const auto& [cat, count] : votes) {
    const int idx = category_index(cat);
    if (idx >= 0) dist[idx] += double(count);
  }
  const double total = dist.sum();
  if (total <= 0.0) {
    throw ValidationError("soft_targets: no usable votes among the 8 categories");
  }
  return dist / total;
}

std::vector<std::vector<int>> balanced_splits(const std::vector<Sample>& samples,
                                              const SplitSpec& spec) {
  if (spec.per_class < 1 || spec.n_sets < 1) {
    throw ValidationError("balanced_splits: n_sets and per_class must be >= 1");
  }
  std::array<std::vector<int>, kNumCategories> by_class;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!samples[i].label) continue;
    const int c = category_index(*samples[i].label);
    if (c >= 0) by_class[std::size_t(c)].push_back(int(i));
  }
  for (int c = 0; c < kNumCategories; ++c) {
    if (int(by_class[std::size_t(c)].size()) < spec.per_class) {
      throw ValidationError(
          "balanced_splits: class '" + category_order()[std::size_t(c)] +
          "' has only " + std::to_string(by_class[std::size_t(c)].size()) +
          " samples, need " + std::to_string(spec.per_class));
    }
  }

  std::mt19937_64 rng(spec.seed);
  std::vector<std::vector<int>> sets;
  for (int s = 0; s < spec.n_sets; ++s) {
    std::vector<int> set;
    set.reserve(std::size_t(spec.per_class) * kNumCategories);
    for (int c = 0; c < kNumCategories; ++c) {
      std::vector<int> pool = by_class[std::size_t(c)];
      std::shuffle(pool.begin(), pool.end(), rng);
      set.insert(set.end(), pool.begin(), pool.begin() + spec.per_class);
    }
    std::sort(set.begin(), set.end());
    sets.push_back(std::move(set));
  }
  return sets;
}

std::map<std::string, std::vector<Eigen::VectorXd>> load_syntax_sidecar(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw RuntimeFailure("cannot open syntax sidecar: " + path);
  std::map<std::string, std::vector<Eigen::VectorXd>> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      line_error(path, line_no, std::string("malformed JSON: ") + e.what());
    }
    std::vector<Eigen::VectorXd> vecs;
    for (const auto& arr : j.at("vectors")) {
      Eigen::VectorXd v(arr.size());
      for (std::size_t k = 0; k < arr.size(); ++k) v[Eigen::Index(k)] = arr[k];
      vecs.push_back(std::move(v));
    }
    out[j.at("id").get<std::string>()] = std::move(vecs);
  }
  return out;
}

std::map<std::string, Eigen::VectorXd> load_sentiment_sidecar(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw RuntimeFailure("cannot open sentiment sidecar: " + path);
  std::map<std::string, Eigen::VectorXd> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      line_error(path, line_no, std::string("malformed JSON: ") + e.what());
    }
    const auto& arr = j.at("vector");
    Eigen::VectorXd v(arr.size());
    for (std::size_t k = 0; k < arr.size(); ++k) v[Eigen::Index(k)] = arr[k];
    out[j.at("id").get<std::string>()] = std::move(v);
  }
  return out;
}

}  // namespace mater
