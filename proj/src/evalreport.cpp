#include "tdvcl/evalreport.hpp"

#include "tdvcl/errors.hpp"

#include "json.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

namespace tdvcl {

namespace {

constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

// Row-wise softmax, accumulated into `acc` with weight `w`.
void accumulate_softmax(const Tensor& logits, double w, Tensor& acc) {
  const std::size_t c = logits.cols();
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    double peak = logits.at(r, 0);
    for (std::size_t k = 1; k < c; ++k) peak = std::max(peak, logits.at(r, k));
    double total = 0.0;
    for (std::size_t k = 0; k < c; ++k) total += std::exp(logits.at(r, k) - peak);
    for (std::size_t k = 0; k < c; ++k) acc.at(r, k) += w * std::exp(logits.at(r, k) - peak) / total;
  }
}

void check_text_field(const std::string& s, const char* what) {
  if (s.find_first_of(",\n\r\"") != std::string::npos) {
    throw ContractError(std::string("accuracy matrix: ") + what + " must not contain commas, quotes or newlines");
  }
}

}  // namespace

Tensor predictive(const MeanFieldGaussian& q, const Tensor& inputs, Head head, int samples,
                  SeededRng& rng) {
  if (samples < 1) throw ContractError("predictive: samples must be >= 1");
  Tensor acc;
  for (int s = 0; s < samples; ++s) {
    const std::vector<double> theta = sample(q, rng);
    const Tensor logits = forward(theta, q.layers(), inputs, head);
    if (!logits.all_finite()) throw NumericError("predictive: non-finite logits");
    if (acc.empty()) acc = Tensor({logits.rows(), logits.cols()});
    accumulate_softmax(logits, 1.0 / samples, acc);
  }
  return acc;
}

Tensor predictive_at_mean(const MeanFieldGaussian& q, const Tensor& inputs, Head head) {
  const Tensor logits = forward(q.mu(), q.layers(), inputs, head);
  if (!logits.all_finite()) throw NumericError("predictive: non-finite logits");
  Tensor acc({logits.rows(), logits.cols()});
  accumulate_softmax(logits, 1.0, acc);
  return acc;
}

double accuracy(const MeanFieldGaussian& q, const TaskDataset& data, int samples, SeededRng& rng) {
  if (data.size() == 0) throw ContractError("accuracy: empty dataset");
  const Tensor probs = samples == 0 ? predictive_at_mean(q, data.inputs, data.head)
                                    : predictive(q, data.inputs, data.head, samples, rng);
  std::size_t hits = 0;
  for (std::size_t r = 0; r < data.size(); ++r) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < probs.cols(); ++k) {
      if (probs.at(r, k) > probs.at(r, best)) best = k;
    }
    hits += static_cast<int>(best) == data.labels[r];
  }
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

AccuracyMatrix::AccuracyMatrix(std::string run_id, std::uint64_t seed, std::string method)
    : run_id_(std::move(run_id)), seed_(seed), method_(std::move(method)) {
  check_text_field(run_id_, "run id");
  check_text_field(method_, "method");
}

void AccuracyMatrix::record(int t, int k, double value) {
  if (k < 1 || k > t) throw ContractError("accuracy matrix: need 1 <= task <= t");
  if (!(value >= 0.0 && value <= 1.0)) throw ContractError("accuracy matrix: accuracy outside [0, 1]");
  while (rows_.size() < static_cast<std::size_t>(t)) {
    rows_.emplace_back(rows_.size() + 1, kMissing);
  }
  rows_[static_cast<std::size_t>(t - 1)][static_cast<std::size_t>(k - 1)] = value;
}

bool AccuracyMatrix::has(int t, int k) const {
  if (t < 1 || k < 1 || k > t || t > steps()) return false;
  return !std::isnan(rows_[static_cast<std::size_t>(t - 1)][static_cast<std::size_t>(k - 1)]);
}

double AccuracyMatrix::at(int t, int k) const {
  if (!has(t, k)) {
    throw ContractError("accuracy matrix: no entry for t=" + std::to_string(t) + ", task=" + std::to_string(k));
  }
  return rows_[static_cast<std::size_t>(t - 1)][static_cast<std::size_t>(k - 1)];
}

bool AccuracyMatrix::row_complete(int t) const {
  for (int k = 1; k <= t; ++k) {
    if (!has(t, k)) return false;
  }
  return t >= 1;
}

double avg_accuracy(const AccuracyMatrix& matrix, int t) {
  if (!matrix.row_complete(t)) throw ContractError("avg_accuracy: row " + std::to_string(t) + " is incomplete");
  double total = 0.0;
  for (int k = 1; k <= t; ++k) total += matrix.at(t, k);
  return total / t;
}

std::vector<AggregateRow> aggregate(std::span<const AccuracyMatrix> matrices) {
  std::map<std::pair<std::string, int>, std::vector<double>> groups;
  for (const auto& m : matrices) {
    for (int t = 1; t <= m.steps(); ++t) {
      if (m.row_complete(t)) groups[{m.method(), t}].push_back(avg_accuracy(m, t));
    }
  }
  std::vector<AggregateRow> rows;
  for (const auto& [key, values] : groups) {
    AggregateRow row{key.first, key.second, static_cast<int>(values.size())};
    for (double v : values) row.mean += v;
    row.mean /= static_cast<double>(values.size());
    if (values.size() > 1) {
      double ss = 0.0;
      for (double v : values) ss += (v - row.mean) * (v - row.mean);
      row.two_sigma = 2.0 * std::sqrt(ss / static_cast<double>(values.size() - 1));
    }
    rows.push_back(row);
  }
  return rows;
}

namespace {

std::string shortest(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

template <typename T>
T parse_number(const std::string& s, std::size_t line_no) {
  T v{};
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw FormatError("accuracy csv: bad number '" + s + "' on line " + std::to_string(line_no));
  }
  return v;
}

constexpr const char* kCsvHeader = "run_id,seed,method,t,task,accuracy";

}  // namespace

void write_accuracy_csv(std::ostream& out, std::span<const AccuracyMatrix> matrices) {
  out << kCsvHeader << '\n';
  for (const auto& m : matrices) {
    for (int t = 1; t <= m.steps(); ++t) {
      for (int k = 1; k <= t; ++k) {
        if (!m.has(t, k)) continue;
        out << m.run_id() << ',' << m.seed() << ',' << m.method() << ',' << t << ',' << k << ','
            << shortest(m.at(t, k)) << '\n';
      }
    }
  }
}

std::vector<AccuracyMatrix> read_accuracy_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) throw FormatError("accuracy csv: missing header");
  std::vector<AccuracyMatrix> out;
  std::map<std::string, std::size_t> index;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != 6) throw FormatError("accuracy csv: expected 6 columns on line " + std::to_string(line_no));
    const auto seed = parse_number<std::uint64_t>(cells[1], line_no);
    auto it = index.find(cells[0]);
    if (it == index.end()) {
      it = index.emplace(cells[0], out.size()).first;
      out.emplace_back(cells[0], seed, cells[2]);
    }
    out[it->second].record(parse_number<int>(cells[3], line_no), parse_number<int>(cells[4], line_no),
                           parse_number<double>(cells[5], line_no));
  }
  return out;
}

namespace {

struct Series {
  std::string label;
  std::vector<std::pair<double, double>> points;
};

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

// One panel at (x0, y0) of size w x h; accuracy axis fixed to [0, 1].
void svg_panel(std::ostream& svg, double x0, double y0, double w, double h, const std::string& title,
               const std::vector<Series>& series, int max_t) {
  const double left = x0 + 40, top = y0 + 24, pw = w - 55, ph = h - 60;
  auto px = [&](double t) { return left + (max_t > 1 ? (t - 1) / (max_t - 1) : 0.5) * pw; };
  auto py = [&](double a) { return top + (1.0 - a) * ph; };
  svg << "<text x=\"" << x0 + w / 2 << "\" y=\"" << y0 + 16 << "\" text-anchor=\"middle\" font-size=\"13\">"
      << title << "</text>\n";
  svg << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"#444\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double a = i / 4.0;
    svg << "<line x1=\"" << left << "\" x2=\"" << left + pw << "\" y1=\"" << py(a) << "\" y2=\"" << py(a)
        << "\" stroke=\"#ddd\"/><text x=\"" << left - 4 << "\" y=\"" << py(a) + 4
        << "\" text-anchor=\"end\" font-size=\"10\">" << a << "</text>\n";
  }
  for (int t = 1; t <= max_t; ++t) {
    svg << "<text x=\"" << px(t) << "\" y=\"" << top + ph + 14 << "\" text-anchor=\"middle\" font-size=\"10\">" << t
        << "</text>\n";
  }
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* colour = kPalette[s % std::size(kPalette)];
    svg << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"2\" points=\"";
    for (auto [t, a] : series[s].points) svg << px(t) << ',' << py(a) << ' ';
    svg << "\"/>\n";
    for (auto [t, a] : series[s].points) {
      svg << "<circle cx=\"" << px(t) << "\" cy=\"" << py(a) << "\" r=\"2.5\" fill=\"" << colour << "\"/>\n";
    }
  }
}

void svg_legend(std::ostream& svg, double x, double y, const std::vector<std::string>& labels) {
  for (std::size_t s = 0; s < labels.size(); ++s) {
    const double yy = y + 16.0 * static_cast<double>(s);
    svg << "<rect x=\"" << x << "\" y=\"" << yy - 9 << "\" width=\"10\" height=\"10\" fill=\""
        << kPalette[s % std::size(kPalette)] << "\"/><text x=\"" << x + 14 << "\" y=\"" << yy
        << "\" font-size=\"11\">" << labels[s] << "</text>\n";
  }
}

std::vector<std::string> methods_of(std::span<const AccuracyMatrix> matrices) {
  std::vector<std::string> methods;
  for (const auto& m : matrices) {
    if (std::find(methods.begin(), methods.end(), m.method()) == methods.end()) methods.push_back(m.method());
  }
  return methods;
}

void write_average_svg(const std::string& path, std::span<const AccuracyMatrix> matrices,
                       const std::vector<AggregateRow>& rows) {
  const auto methods = methods_of(matrices);
  int max_t = 1;
  std::vector<Series> series;
  for (const auto& method : methods) {
    Series s{method, {}};
    for (const auto& r : rows) {
      if (r.method == method) {
        s.points.emplace_back(r.t, r.mean);
        max_t = std::max(max_t, r.t);
      }
    }
    series.push_back(std::move(s));
  }
  std::ofstream svg(path);
  if (!svg) throw IoError("report: cannot write " + path);
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"560\" height=\"340\" font-family=\"sans-serif\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg_panel(svg, 0, 0, 420, 340, "Average accuracy vs tasks observed", series, max_t);
  svg_legend(svg, 420, 40, methods);
  svg << "</svg>\n";
}

void write_task_svg(const std::string& path, std::span<const AccuracyMatrix> matrices) {
  const auto methods = methods_of(matrices);
  int max_t = 1;
  for (const auto& m : matrices) max_t = std::max(max_t, m.steps());
  const int cols = std::min(max_t, 5);
  const int panel_rows = (max_t + cols - 1) / cols;
  const double pw = 240, ph = 200;
  std::ofstream svg(path);
  if (!svg) throw IoError("report: cannot write " + path);
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << cols * pw + 140 << "\" height=\""
      << panel_rows * ph << "\" font-family=\"sans-serif\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (int k = 1; k <= max_t; ++k) {
    std::vector<Series> series;
    for (const auto& method : methods) {
      Series s{method, {}};
      for (int t = k; t <= max_t; ++t) {
        double total = 0.0;
        int count = 0;
        for (const auto& m : matrices) {
          if (m.method() == method && m.has(t, k)) {
            total += m.at(t, k);
            ++count;
          }
        }
        if (count > 0) s.points.emplace_back(t, total / count);
      }
      series.push_back(std::move(s));
    }
    svg_panel(svg, ((k - 1) % cols) * pw, ((k - 1) / cols) * ph, pw, ph, "Task " + std::to_string(k), series,
              max_t);
  }
  svg_legend(svg, cols * pw + 10, 40, methods);
  svg << "</svg>\n";
}

}  // namespace

ReportFiles emit_report(std::span<const AccuracyMatrix> matrices, const std::string& out_dir, bool write_svg) {
  namespace fs = std::filesystem;
  if (matrices.empty()) throw ContractError("emit_report: no accuracy matrices");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir)) throw IoError("report: cannot create directory " + out_dir);

  ReportFiles files;
  files.csv = (fs::path(out_dir) / "accuracy.csv").string();
  {
    std::ofstream csv(files.csv);
    if (!csv) throw IoError("report: cannot write " + files.csv);
    write_accuracy_csv(csv, matrices);
    if (!csv) throw IoError("report: write failed for " + files.csv);
  }

  const auto rows = aggregate(matrices);
  nlohmann::json doc;
  doc["schema_version"] = 1;
  doc["metric"] = "average accuracy over observed tasks";
  doc["spread"] = "two sample standard deviations across runs";
  doc["rows"] = nlohmann::json::array();
  for (const auto& r : rows) {
    doc["rows"].push_back({{"method", r.method}, {"t", r.t}, {"runs", r.runs}, {"mean", r.mean},
                           {"two_sigma", r.two_sigma}});
  }
  files.json = (fs::path(out_dir) / "aggregate.json").string();
  {
    std::ofstream json(files.json);
    if (!json) throw IoError("report: cannot write " + files.json);
    json << doc.dump(2) << '\n';
  }

  if (write_svg) {
    files.svg.push_back((fs::path(out_dir) / "average_accuracy.svg").string());
    write_average_svg(files.svg.back(), matrices, rows);
    files.svg.push_back((fs::path(out_dir) / "task_accuracy.svg").string());
    write_task_svg(files.svg.back(), matrices);
  }
  return files;
}

std::string format_aggregate_table(std::span<const AggregateRow> rows) {
  std::map<std::string, const AggregateRow*> last;
  for (const auto& r : rows) {
    auto& slot = last[r.method];
    if (slot == nullptr || r.t > slot->t) slot = &r;
  }
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(4);
  for (const auto& [method, r] : last) {
    out << method << "  t=" << r->t << "  " << r->mean << " +/- " << r->two_sigma << "  (" << r->runs
        << " runs)\n";
  }
  return out.str();
}

}  // namespace tdvcl
