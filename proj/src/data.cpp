#include "headsmith/data.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "headsmith/rng.hpp"

namespace headsmith {

void FeatureMatrix::validate() const {
  const std::size_t z = values.rows();
  if (values.cols() < 1) throw DataError("feature matrix must have width >= 1");
  if (sample_ids.size() != z || patient_ids.size() != z || labels.size() != z)
    throw DataError("sample_ids/patient_ids/labels length must equal sample count");
  for (int lbl : labels)
    if (lbl < 0) throw DataError("labels must be non-negative");
  for (double v : values.values())
    if (!std::isfinite(v)) throw DataError("non-finite feature value");
}

int FeatureMatrix::num_classes() const {
  if (labels.empty()) throw DataError("empty feature matrix has no classes");
  int k = 0;
  for (int lbl : labels)
    if (lbl >= k) k = lbl + 1;
  return k;
}

FeatureMatrix FeatureMatrix::select_rows(const std::vector<std::size_t>& rows) const {
  FeatureMatrix out;
  out.values = Matrix(rows.size(), values.cols());
  out.sample_ids.reserve(rows.size());
  out.patient_ids.reserve(rows.size());
  out.labels.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::size_t r = rows[i];
    if (r >= values.rows()) throw ShapeError("select_rows: row index out of range");
    for (std::size_t c = 0; c < values.cols(); ++c) out.values(i, c) = values(r, c);
    out.sample_ids.push_back(sample_ids[r]);
    out.patient_ids.push_back(patient_ids[r]);
    out.labels.push_back(labels[r]);
  }
  return out;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  fields.push_back(cur);
  return fields;
}

double parse_double(const std::string& s, const std::string& origin, std::size_t line_no) {
  double value = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last)
    throw DataError(origin + ":" + std::to_string(line_no) + ": bad numeric value '" + s + "'");
  if (!std::isfinite(value))
    throw DataError(origin + ":" + std::to_string(line_no) + ": non-finite value '" + s + "'");
  return value;
}

int parse_label(const std::string& s, const std::string& origin, std::size_t line_no) {
  int value = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size() || value < 0)
    throw DataError(origin + ":" + std::to_string(line_no) + ": bad label '" + s + "'");
  return value;
}

}  // namespace

FeatureMatrix parse_feature_csv(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw DataError(origin + ": empty file");

  const auto header = split_csv_line(line);
  if (header.size() < 4 || header[0] != "sample_id" || header[1] != "patient_id" ||
      header[2] != "label")
    throw DataError(origin + ": header must be 'sample_id,patient_id,label,f0,...'");
  const std::size_t width = header.size() - 3;

  FeatureMatrix data;
  std::vector<double> flat;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || (line.size() == 1 && line[0] == '\r')) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != header.size())
      throw DataError(origin + ":" + std::to_string(line_no) + ": expected " +
                      std::to_string(header.size()) + " fields, got " +
                      std::to_string(fields.size()));
    if (fields[0].empty() || fields[1].empty())
      throw DataError(origin + ":" + std::to_string(line_no) + ": empty id field");
    data.sample_ids.push_back(fields[0]);
    data.patient_ids.push_back(fields[1]);
    data.labels.push_back(parse_label(fields[2], origin, line_no));
    for (std::size_t c = 0; c < width; ++c) {
      if (fields[3 + c].empty())
        throw DataError(origin + ":" + std::to_string(line_no) + ": missing value");
      flat.push_back(parse_double(fields[3 + c], origin, line_no));
    }
  }
  const std::size_t z = data.sample_ids.size();
  if (z == 0) throw DataError(origin + ": no data rows");
  data.values = Matrix(z, width);
  std::copy(flat.begin(), flat.end(), data.values.data());
  data.validate();
  return data;
}

FeatureMatrix read_feature_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_feature_csv(buf.str(), path.string());
}

std::string format_feature_csv(const FeatureMatrix& data) {
  std::string out = "sample_id,patient_id,label";
  for (std::size_t c = 0; c < data.values.cols(); ++c) out += ",f" + std::to_string(c);
  out += "\n";
  char buf[64];
  for (std::size_t r = 0; r < data.values.rows(); ++r) {
    out += data.sample_ids[r];
    out += ',';
    out += data.patient_ids[r];
    out += ',';
    out += std::to_string(data.labels[r]);
    for (std::size_t c = 0; c < data.values.cols(); ++c) {
      std::snprintf(buf, sizeof buf, ",%.17g", data.values(r, c));
      out += buf;
    }
    out += '\n';
  }
  return out;
}

void write_feature_csv(const std::filesystem::path& path, const FeatureMatrix& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << format_feature_csv(data);
  if (!out) throw DataError("write failed for '" + path.string() + "'");
}

FeatureMatrix make_blobs(std::size_t samples, std::size_t features,
                         std::size_t classes, std::size_t patients,
                         std::uint64_t seed) {
  if (samples == 0 || features == 0 || classes < 2 || patients == 0)
    throw std::invalid_argument("make_blobs: need samples>0, features>0, classes>=2, patients>0");
  SplitMix64 rng(seed);
  // Feature 0 separates the classes on its own (unit spacing, sigma 0.03) and
  // has the largest variance of any column. Later features repeat the class
  // signal with geometrically decaying amplitude over the same noise floor,
  // so per-feature variance strictly decreases with the column index and
  // variance-ranked selection keeps the most informative features first.
  // Spreading the signal across many columns keeps the classes well separated
  // even after per-feature standardization (which would otherwise inflate
  // pure-noise columns to unit scale and drown a lone signal column), and the
  // unit overall scale keeps unstandardized inputs friendly to training.
  std::vector<double> amp(features, 0.0);
  for (std::size_t c = 1; c < features; ++c)
    amp[c] = 0.85 * std::pow(0.9, static_cast<double>(c));
  FeatureMatrix data;
  data.values = Matrix(samples, features);
  for (std::size_t i = 0; i < samples; ++i) {
    const std::size_t patient = i % patients;
    // Patients are class-pure so patient-wise splits keep classes separable.
    const int label = static_cast<int>(patient % classes);
    const double centered = label - 0.5 * static_cast<double>(classes - 1);
    data.sample_ids.push_back("s" + std::to_string(i));
    data.patient_ids.push_back("p" + std::to_string(patient));
    data.labels.push_back(label);
    data.values(i, 0) = centered + 0.03 * rng.normal();
    for (std::size_t c = 1; c < features; ++c) {
      data.values(i, c) = amp[c] * centered + 0.03 * rng.normal();
    }
  }
  return data;
}

}  // namespace headsmith
