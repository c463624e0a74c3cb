#include "shadeadapt/report.hpp"

#include "shadeadapt/errors.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace shadeadapt {

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fixed(double v, int digits = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string opt(const std::optional<double>& v) { return v ? fixed(*v) : "-"; }

nlohmann::json opt_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

std::string pad(const std::string& s, size_t w) {
  return s.size() >= w ? s : s + std::string(w - s.size(), ' ');
}

}  // namespace

std::string eval_csv(const EvalResult& r) {
  std::string out = "filename,Tp,Tn,Np,Nn,ber\n";
  for (const auto& row : r.rows) {
    const auto& c = row.report.counts;
    out += row.id + "," + std::to_string(c.tp) + "," + std::to_string(c.tn) + "," +
           std::to_string(c.np) + "," + std::to_string(c.nn) + "," + fmt(row.report.ber) + "\n";
  }
  const auto& c = r.summary.counts;
  out += "summary," + std::to_string(c.tp) + "," + std::to_string(c.tn) + "," +
         std::to_string(c.np) + "," + std::to_string(c.nn) + "," + fmt(r.summary.ber) + "\n";
  return out;
}

std::string eval_json(const EvalResult& r) {
  nlohmann::json j;
  j["images"] = r.rows.size();
  j["ber"] = r.summary.ber;
  j["ber_s"] = opt_json(r.summary.ber_s);
  j["ber_ns"] = opt_json(r.summary.ber_ns);
  j["degenerate_images"] = r.degenerate_images;
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows) {
    const auto& c = row.report.counts;
    rows.push_back({{"filename", row.id},
                    {"Tp", c.tp},
                    {"Tn", c.tn},
                    {"Np", c.np},
                    {"Nn", c.nn},
                    {"ber", row.report.ber}});
  }
  j["rows"] = rows;
  return j.dump(2) + "\n";
}

std::string eval_table(const EvalResult& r) {
  size_t w = 8;
  for (const auto& row : r.rows) w = std::max(w, row.id.size() + 2);
  std::ostringstream os;
  os << pad("image", w) << pad("BER", 8) << pad("BER_S", 8) << "BER_NS\n";
  for (const auto& row : r.rows) {
    os << pad(row.id, w) << pad(fixed(row.report.ber), 8) << pad(opt(row.report.ber_s), 8)
       << opt(row.report.ber_ns) << "\n";
  }
  os << pad("mean", w) << pad(fixed(r.summary.ber), 8) << pad(opt(r.summary.ber_s), 8)
     << opt(r.summary.ber_ns) << "\n";
  if (r.degenerate_images > 0) {
    os << r.degenerate_images << " image(s) lack one class; their BER uses the other term only\n";
  }
  return os.str();
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out = "label,overrides,eval_set,steps,ber,ber_s,ber_ns\n";
  for (const auto& r : rows) {
    out += r.label + ",\"" + r.overrides + "\"," + r.eval_set + "," + std::to_string(r.steps) +
           "," + fmt(r.ber) + "," + (r.ber_s ? fmt(*r.ber_s) : "") + "," +
           (r.ber_ns ? fmt(*r.ber_ns) : "") + "\n";
  }
  return out;
}

std::string ablation_json(const std::vector<AblationRow>& rows) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : rows) {
    j.push_back({{"label", r.label},
                 {"overrides", r.overrides},
                 {"eval_set", r.eval_set},
                 {"steps", r.steps},
                 {"ber", r.ber},
                 {"ber_s", opt_json(r.ber_s)},
                 {"ber_ns", opt_json(r.ber_ns)}});
  }
  return j.dump(2) + "\n";
}

std::string ablation_table(const std::vector<AblationRow>& rows) {
  size_t lw = 7, ow = 11;
  for (const auto& r : rows) {
    lw = std::max(lw, r.label.size() + 2);
    ow = std::max(ow, r.overrides.size() + 2);
  }
  std::ostringstream os;
  os << pad("cell", lw) << pad("overrides", ow) << pad("BER", 8) << pad("BER_S", 8) << "BER_NS\n";
  for (const auto& r : rows) {
    os << pad(r.label, lw) << pad(r.overrides, ow) << pad(fixed(r.ber), 8) << pad(opt(r.ber_s), 8)
       << opt(r.ber_ns) << "\n";
  }
  return os.str();
}

std::string points_json(const std::vector<PointPrompt>& points) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& p : points) {
    j.push_back({{"x", p.x}, {"y", p.y}, {"label", p.label}, {"score", p.score}});
  }
  return j.dump(2) + "\n";
}

torch::Tensor probmap_to_gray(const ProbMap& coarse) {
  torch::Tensor g = torch::empty({coarse.height(), coarse.width()}, torch::kUInt8);
  auto a = g.accessor<uint8_t, 2>();
  for (int64_t y = 0; y < coarse.height(); ++y) {
    for (int64_t x = 0; x < coarse.width(); ++x) {
      a[y][x] = static_cast<uint8_t>(std::lround(255.0 * coarse.at(y, x)));
    }
  }
  return g;
}

ProbMap gray_to_probmap(const torch::Tensor& gray) {
  if (gray.dim() != 2) throw RequestError("coarse mask image must be single-channel");
  torch::Tensor f = gray.to(torch::kFloat32).div(255.0).contiguous();
  std::vector<float> v(f.data_ptr<float>(), f.data_ptr<float>() + f.numel());
  return ProbMap(gray.size(0), gray.size(1), std::move(v));
}

torch::Tensor prompt_overlay(const ProbMap& coarse, const std::vector<PointPrompt>& points) {
  torch::Tensor rgb = probmap_to_gray(coarse).unsqueeze(2).repeat({1, 1, 3}).contiguous();
  auto a = rgb.accessor<uint8_t, 3>();
  for (const auto& p : points) {
    if (p.x < 0 || p.y < 0 || p.x >= coarse.width() || p.y >= coarse.height()) {
      throw RequestError("prompt point lies outside the coarse mask");
    }
    a[p.y][p.x][0] = p.label == 1 ? 255 : 0;
    a[p.y][p.x][1] = p.label == 1 ? 0 : 255;
    a[p.y][p.x][2] = 0;
  }
  return rgb;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("cannot write " + path.string());
}

}  // namespace shadeadapt
