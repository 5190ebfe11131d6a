#include "cardiseg/report.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace cardiseg {

std::string gap_table_csv(const GapReport& report) {
  std::string out = "training_dataset,evaluation_dataset,modality,label,mean,sd\n";
  char line[256];
  for (const auto& row : report.rows) {
    for (const auto& label : kReportLabels) {
      auto it = row.mean.find(label);
      if (it == row.mean.end()) continue;
      std::snprintf(line, sizeof(line), "%s,%s,%s,%s,%.6f,%.6f\n", row.training_dataset.c_str(),
                    row.evaluation_dataset.c_str(), row.modality.c_str(), label.c_str(), it->second,
                    row.sd.at(label));
      out += line;
    }
  }
  return out;
}

CsvTable CsvTable::parse(const std::string& text) {
  CsvTable t;
  std::istringstream in(text);
  std::string line;
  auto split = [](const std::string& s) {
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = s.find(',', start);
      cells.push_back(s.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    return cells;
  };
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (first) {
      t.header = split(line);
      first = false;
      continue;
    }
    auto cells = split(line);
    if (cells.size() != t.header.size()) {
      throw ParseError("CSV row has " + std::to_string(cells.size()) + " cells, header " +
                       std::to_string(t.header.size()));
    }
    t.rows.push_back(std::move(cells));
  }
  if (first) throw ParseError("CSV without header row");
  return t;
}

std::size_t CsvTable::column(const std::string& name) const {
  auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw ParseError("CSV has no column '" + name + "'");
  return static_cast<std::size_t>(it - header.begin());
}

namespace {

const char* kSeriesColours[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728"};

std::string fmt(const char* format, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), format, v);
  return buf;
}

// Three decimals of the six-decimal CSV value, so SVG and CSV agree even
// where rounding twice differs from rounding once.
std::string printed(double v) { return fmt("%.3f", std::stod(fmt("%.6f", v))); }

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

class Svg {
 public:
  Svg(double width, double height) {
    out_ << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
         << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << width << "\" height=\"" << height
         << "\" viewBox=\"0 0 " << width << ' ' << height << "\" font-family=\"sans-serif\" font-size=\"11\">\n"
         << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  }

  void text(double x, double y, const std::string& s, const std::string& anchor = "middle",
            const std::string& cls = {}) {
    out_ << "<text x=\"" << x << "\" y=\"" << y << "\" text-anchor=\"" << anchor << '"';
    if (!cls.empty()) out_ << " class=\"" << cls << '"';
    out_ << '>' << escape(s) << "</text>\n";
  }
  void line(double x1, double y1, double x2, double y2, const std::string& stroke, double width = 1.0) {
    out_ << "<line x1=\"" << x1 << "\" y1=\"" << y1 << "\" x2=\"" << x2 << "\" y2=\"" << y2 << "\" stroke=\""
         << stroke << "\" stroke-width=\"" << width << "\"/>\n";
  }
  void rect(double x, double y, double w, double h, const std::string& fill, const std::string& stroke = "none",
            const std::string& cls = {}) {
    out_ << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << w << "\" height=\"" << h << "\" fill=\"" << fill
         << "\" stroke=\"" << stroke << '"';
    if (!cls.empty()) out_ << " class=\"" << cls << '"';
    out_ << "/>\n";
  }
  void circle(double cx, double cy, double r, const std::string& fill, const std::string& cls,
              const std::string& title) {
    out_ << "<circle cx=\"" << cx << "\" cy=\"" << cy << "\" r=\"" << r << "\" fill=\"" << fill << "\" class=\""
         << cls << "\"><title>" << escape(title) << "</title></circle>\n";
  }
  void polyline(const std::vector<std::pair<double, double>>& pts, const std::string& stroke) {
    out_ << "<polyline fill=\"none\" stroke=\"" << stroke << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < pts.size(); ++i) out_ << (i ? " " : "") << pts[i].first << ',' << pts[i].second;
    out_ << "\"/>\n";
  }
  std::string finish() {
    out_ << "</svg>\n";
    return out_.str();
  }

 private:
  std::ostringstream out_;
};

// Vertical axis with ticks over [lo, hi] for a panel spanning y0 (top) to y1.
void y_axis(Svg& svg, double x, double y0, double y1, double lo, double hi, int ticks) {
  svg.line(x, y0, x, y1, "black");
  for (int i = 0; i <= ticks; ++i) {
    const double v = lo + (hi - lo) * i / ticks;
    const double y = y1 - (y1 - y0) * i / ticks;
    svg.line(x - 3, y, x, y, "black");
    svg.text(x - 5, y + 4, fmt("%.1f", v), "end");
  }
}

double quantile_sorted(const std::vector<double>& v, double q) {
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

std::string render_gap_boxplot(const GapReport& report) {
  const double panel_w = 60.0 + 70.0 * static_cast<double>(report.rows.size()), panel_h = 260.0;
  const double top = 40.0, left = 50.0;
  const double width = left + panel_w * kReportLabels.size() + 20.0, height = top + panel_h + 70.0;
  Svg svg(width, height);
  svg.text(width / 2, 20, "Dice per fold: " + report.training_dataset + " models");
  auto ymap = [&](double v) { return top + panel_h * (1.0 - v); };
  for (std::size_t li = 0; li < kReportLabels.size(); ++li) {
    const std::string& label = kReportLabels[li];
    const double x0 = left + panel_w * static_cast<double>(li);
    y_axis(svg, x0 + 10, top, top + panel_h, 0.0, 1.0, 5);
    svg.text(x0 + panel_w / 2, top + panel_h + 45, label == "Labels" ? "DSC_labels" : label);
    for (std::size_t r = 0; r < report.rows.size(); ++r) {
      const GapRow& row = report.rows[r];
      auto it = row.fold_values.find(label);
      if (it == row.fold_values.end() || it->second.empty()) continue;
      std::vector<double> v = it->second;
      std::sort(v.begin(), v.end());
      const double cx = x0 + 50.0 + 70.0 * static_cast<double>(r);
      const std::string colour = kSeriesColours[r % 4];
      const double q1 = quantile_sorted(v, 0.25), med = quantile_sorted(v, 0.5), q3 = quantile_sorted(v, 0.75);
      svg.line(cx, ymap(v.front()), cx, ymap(v.back()), colour);
      svg.rect(cx - 15, ymap(q3), 30, std::max(ymap(q1) - ymap(q3), 0.5), "white", colour, "box");
      svg.line(cx - 15, ymap(med), cx + 15, ymap(med), colour, 2.0);
      for (double x : it->second) svg.circle(cx, ymap(x), 2.5, colour, "point", printed(x));
      const std::string tag = row.modality == "all" ? row.evaluation_dataset : row.modality;
      svg.text(cx, top + panel_h + 15, tag);
      svg.text(cx, top + panel_h + 28, printed(row.mean.at(label)), "middle", "value");
    }
  }
  return svg.finish();
}

std::string render_sweep_curves(const CsvTable& curves, const std::string& method) {
  const std::size_t cm = curves.column("method"), cn = curves.column("n"), cs = curves.column("evaluation_set"),
                    cl = curves.column("label"), cd = curves.column("dice");
  // label -> set -> [(n, dice, printed)]
  std::map<std::string, std::map<std::string, std::vector<std::tuple<double, double, std::string>>>> series;
  std::vector<std::string> set_order;
  double n_min = 1e300, n_max = -1e300;
  for (const auto& row : curves.rows) {
    if (row[cm] != method) continue;
    const double n = std::stod(row[cn]);
    const double d = std::stod(row[cd]);
    n_min = std::min(n_min, n);
    n_max = std::max(n_max, n);
    if (std::find(set_order.begin(), set_order.end(), row[cs]) == set_order.end()) set_order.push_back(row[cs]);
    series[row[cl]][row[cs]].emplace_back(n, d, fmt("%.3f", d));
  }
  if (n_max <= n_min) n_max = n_min + 1.0;

  const double panel_w = 240.0, panel_h = 220.0, top = 40.0, left = 50.0;
  const double width = left + panel_w * kReportLabels.size() + 20.0, height = top + panel_h + 80.0;
  Svg svg(width, height);
  svg.text(width / 2, 20, "Finetuning method " + method + ": dice over added patients");
  for (std::size_t li = 0; li < kReportLabels.size(); ++li) {
    const std::string& label = kReportLabels[li];
    const double x0 = left + panel_w * static_cast<double>(li) + 10.0, plot_w = panel_w - 40.0;
    auto xmap = [&](double n) { return x0 + plot_w * (n - n_min) / (n_max - n_min); };
    auto ymap = [&](double v) { return top + panel_h * (1.0 - v); };
    y_axis(svg, x0, top, top + panel_h, 0.0, 1.0, 5);
    svg.line(x0, top + panel_h, x0 + plot_w, top + panel_h, "black");
    svg.text(x0, top + panel_h + 14, fmt("%.0f", n_min));
    svg.text(x0 + plot_w, top + panel_h + 14, fmt("%.0f", n_max));
    svg.text(x0 + plot_w / 2, top + panel_h + 30, (label == "Labels" ? std::string("DSC_labels") : label) + " vs n");
    auto it = series.find(label);
    if (it == series.end()) continue;
    for (std::size_t si = 0; si < set_order.size(); ++si) {
      auto sit = it->second.find(set_order[si]);
      if (sit == it->second.end()) continue;
      auto pts = sit->second;
      std::sort(pts.begin(), pts.end());
      const std::string colour = kSeriesColours[si % 4];
      std::vector<std::pair<double, double>> xy;
      for (const auto& [n, d, printed] : pts) xy.emplace_back(xmap(n), ymap(d));
      svg.polyline(xy, colour);
      for (const auto& [n, d, printed] : pts) {
        svg.circle(xmap(n), ymap(d), 3.0, colour, "marker", set_order[si] + " n=" + fmt("%.0f", n) + ": " + printed);
      }
    }
  }
  for (std::size_t si = 0; si < set_order.size(); ++si) {
    const double x = left + 10.0 + 120.0 * static_cast<double>(si), y = height - 15.0;
    svg.rect(x, y - 9, 10, 10, kSeriesColours[si % 4]);
    svg.text(x + 14, y, set_order[si], "start");
  }
  return svg.finish();
}

std::string render_delta_bars(const CsvTable& deltas) {
  const std::size_t cl = deltas.column("label"), cm = deltas.column("modality"), cd = deltas.column("delta");
  std::vector<std::string> modalities;
  std::map<std::string, std::map<std::string, std::pair<double, std::string>>> values;
  double extent = 0.05;
  for (const auto& row : deltas.rows) {
    if (std::find(modalities.begin(), modalities.end(), row[cm]) == modalities.end()) modalities.push_back(row[cm]);
    const double d = std::stod(row[cd]);
    extent = std::max(extent, std::abs(d));
    values[row[cl]][row[cm]] = {d, fmt("%.3f", d)};
  }
  extent = std::ceil(extent * 20.0) / 20.0;
  const double group_w = 40.0 + 46.0 * static_cast<double>(modalities.size());
  const double top = 40.0, left = 60.0, plot_h = 240.0;
  const double width = left + group_w * kReportLabels.size() + 20.0, height = top + plot_h + 70.0;
  Svg svg(width, height);
  svg.text(width / 2, 20, "Dice change after finetuning");
  auto ymap = [&](double v) { return top + plot_h * (0.5 - 0.5 * v / extent); };
  svg.line(left, top, left, top + plot_h, "black");
  for (int i = -2; i <= 2; ++i) {
    const double v = extent * i / 2.0;
    svg.line(left - 3, ymap(v), left, ymap(v), "black");
    svg.text(left - 5, ymap(v) + 4, fmt("%.3f", v), "end");
  }
  svg.line(left, ymap(0), width - 20, ymap(0), "black");
  for (std::size_t li = 0; li < kReportLabels.size(); ++li) {
    const std::string& label = kReportLabels[li];
    const double gx = left + group_w * static_cast<double>(li) + 20.0;
    svg.text(gx + 23.0 * static_cast<double>(modalities.size()), top + plot_h + 20,
             label == "Labels" ? "DSC_labels" : label);
    auto it = values.find(label);
    if (it == values.end()) continue;
    for (std::size_t mi = 0; mi < modalities.size(); ++mi) {
      auto vit = it->second.find(modalities[mi]);
      if (vit == it->second.end()) continue;
      const double d = vit->second.first;
      const double x = gx + 46.0 * static_cast<double>(mi);
      const double y = std::min(ymap(d), ymap(0));
      svg.rect(x, y, 30, std::max(std::abs(ymap(d) - ymap(0)), 0.5), kSeriesColours[mi % 4], "none", "bar");
      svg.text(x + 15, d >= 0 ? y - 3 : y + std::abs(ymap(d) - ymap(0)) + 11, vit->second.second, "middle", "value");
    }
  }
  for (std::size_t mi = 0; mi < modalities.size(); ++mi) {
    const double x = left + 120.0 * static_cast<double>(mi), y = height - 15.0;
    svg.rect(x, y - 9, 10, 10, kSeriesColours[mi % 4]);
    svg.text(x + 14, y, modalities[mi], "start");
  }
  return svg.finish();
}

namespace {

bool read_file(const std::filesystem::path& path, std::string& out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return false;
  std::ostringstream ss;
  ss << in.rdbuf();
  out = ss.str();
  return true;
}

void write_file(const std::filesystem::path& path, const std::string& text, RenderSummary& summary) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) {
    summary.warnings.push_back("cannot write " + path.string());
    return;
  }
  summary.written.push_back(path);
}

}  // namespace

RenderSummary render_plots(const std::filesystem::path& dir) {
  RenderSummary summary;
  auto warn = [&](const std::string& msg) {
    spdlog::warn("{}", msg);
    summary.warnings.push_back(msg);
  };
  std::string text;
  if (read_file(dir / "gap_report.json", text)) {
    try {
      write_file(dir / "gap_boxplot.svg", render_gap_boxplot(GapReport::from_json(text)), summary);
    } catch (const std::exception& e) {
      warn(std::string("gap_report.json: ") + e.what());
    }
  } else {
    warn("no gap_report.json in " + dir.string() + "; skipping the boxplot");
  }
  if (read_file(dir / "sweep_curves.csv", text)) {
    try {
      const CsvTable curves = CsvTable::parse(text);
      std::set<std::string> methods;
      for (const auto& row : curves.rows) methods.insert(row[curves.column("method")]);
      for (const auto& m : methods) {
        write_file(dir / ("sweep_method" + m + ".svg"), render_sweep_curves(curves, m), summary);
      }
    } catch (const std::exception& e) {
      warn(std::string("sweep_curves.csv: ") + e.what());
    }
  } else {
    warn("no sweep_curves.csv in " + dir.string() + "; skipping the sweep curves");
  }
  if (read_file(dir / "deltas.csv", text)) {
    try {
      write_file(dir / "delta_bars.svg", render_delta_bars(CsvTable::parse(text)), summary);
    } catch (const std::exception& e) {
      warn(std::string("deltas.csv: ") + e.what());
    }
  } else {
    warn("no deltas.csv in " + dir.string() + "; skipping the delta bars");
  }
  return summary;
}

}  // namespace cardiseg
