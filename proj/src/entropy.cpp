#include "entlab/entropy.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "entlab/errors.hpp"
#include "entlab/io_util.hpp"

namespace entlab {

double EntropyMatrix::max_theoretical() const {
  return context ? std::log(static_cast<double>(context)) : max_observed();
}

double EntropyMatrix::max_observed() const {
  return values.empty() ? 0.0 : *std::max_element(values.begin(), values.end());
}

double EntropyMatrix::min_observed() const {
  return values.empty() ? 0.0 : *std::min_element(values.begin(), values.end());
}

double EntropyMatrix::layer_mean(std::size_t l) const {
  double s = 0.0;
  for (std::size_t h = 0; h < heads; ++h) s += at(l, h);
  return heads ? s / static_cast<double>(heads) : 0.0;
}

double head_entropy(const Tensor& probs, double eps) {
  if (probs.rank() != 2) throw DimensionError("head_entropy expects a matrix, got " + shape_str(probs.shape()));
  const std::size_t rows = probs.rows(), cols = probs.cols();
  double total = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    double e = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      const double a = probs(i, j);
      if (a < 0.0) throw InputError("negative probability in attention matrix");
      if (a > 0.0) e -= a * std::log(a + eps);
    }
    total += e;
  }
  return total / static_cast<double>(rows);
}

EntropyMatrix model_entropy(const ForwardTrace& trace) { return model_entropy(std::span<const ForwardTrace>(&trace, 1)); }

EntropyMatrix model_entropy(std::span<const ForwardTrace> traces) {
  if (traces.empty() || traces[0].attention.empty() || traces[0].batch == 0)
    throw UsageError("model_entropy needs a non-empty trace");
  const ForwardTrace& first = traces[0];
  EntropyMatrix em;
  em.layers = first.layers;
  em.heads = first.heads;
  em.context = first.seq_len;
  em.values.assign(em.layers * em.heads, 0.0);
  std::size_t count = 0;
  for (const ForwardTrace& t : traces) {
    if (t.layers != em.layers || t.heads != em.heads || t.seq_len != em.context)
      throw UsageError("model_entropy: traces have different shapes");
    for (std::size_t b = 0; b < t.batch; ++b) {
      for (std::size_t l = 0; l < t.layers; ++l)
        for (std::size_t h = 0; h < t.heads; ++h) em.at(l, h) += head_entropy(t.at(b, l, h));
      ++count;
    }
  }
  for (double& v : em.values) v /= static_cast<double>(count);
  return em;
}

BucketSummary bucket_fractions(const EntropyMatrix& em) {
  BucketSummary s;
  s.reference_max = em.max_observed();
  if (em.values.empty()) throw UsageError("bucket_fractions of an empty entropy matrix");
  std::array<std::size_t, 3> counts{};
  const double mx = s.reference_max;
  for (double v : em.values) {
    if (mx <= 0.0 || v < mx / 4.0)
      ++counts[0];
    else if (v < 3.0 * mx / 4.0)
      ++counts[1];
    else
      ++counts[2];
  }
  const double n = static_cast<double>(em.values.size());
  for (int k = 0; k < 3; ++k) s.fractions[k] = static_cast<double>(counts[k]) / n;
  return s;
}

namespace {
template <class Pred>
HeadFlags flag_heads(const EntropyMatrix& em, Pred pred) {
  HeadFlags f;
  f.per_layer.assign(em.layers, 0);
  for (std::size_t l = 0; l < em.layers; ++l)
    for (std::size_t h = 0; h < em.heads; ++h)
      if (pred(em.at(l, h))) {
        f.heads.emplace_back(l, h);
        ++f.per_layer[l];
      }
  return f;
}
}  // namespace

HeadFlags detect_collapse(const EntropyMatrix& em, double fraction_threshold) {
  const double cut = fraction_threshold * em.max_theoretical();
  return flag_heads(em, [cut](double v) { return v < cut; });
}

HeadFlags detect_overload(const EntropyMatrix& em, double fraction_threshold) {
  const double cut = fraction_threshold * em.max_observed();
  return flag_heads(em, [cut](double v) { return v > cut; });
}

std::string entropy_csv(const EntropyMatrix& em) {
  std::string out = "layer,head,entropy\n";
  char buf[64];
  for (std::size_t l = 0; l < em.layers; ++l)
    for (std::size_t h = 0; h < em.heads; ++h) {
      std::snprintf(buf, sizeof buf, "%zu,%zu,%.9g\n", l, h, em.at(l, h));
      out += buf;
    }
  return out;
}

namespace {

struct Rgb {
  double r, g, b;
};

// Five-stop approximation of the viridis ramp.
constexpr Rgb kRamp[5] = {
    {68, 1, 84}, {59, 82, 139}, {33, 145, 140}, {94, 201, 98}, {253, 231, 37},
};

std::string ramp_color(double x) {
  x = std::clamp(x, 0.0, 1.0) * 4.0;
  const int k = std::min(static_cast<int>(x), 3);
  const double f = x - k;
  const Rgb& a = kRamp[k];
  const Rgb& b = kRamp[k + 1];
  char buf[16];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", static_cast<int>(std::lround(a.r + f * (b.r - a.r))),
                static_cast<int>(std::lround(a.g + f * (b.g - a.g))),
                static_cast<int>(std::lround(a.b + f * (b.b - a.b))));
  return buf;
}

}  // namespace

std::string entropy_svg(const EntropyMatrix& em) {
  constexpr int cell = 28, margin = 60, legend_w = 200;
  const int w = margin + static_cast<int>(em.heads) * cell + 20;
  const int grid_h = static_cast<int>(em.layers) * cell;
  const int h = margin + grid_h + 70;
  const double top = em.max_theoretical();
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << std::max(w, margin + legend_w + 20) << "\" height=\""
     << h << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<text x=\"" << margin << "\" y=\"20\">attention entropy (nats), layers x heads</text>\n";
  for (std::size_t hd = 0; hd < em.heads; ++hd)
    os << "<text x=\"" << margin + static_cast<int>(hd) * cell + cell / 2 << "\" y=\"" << margin - 6
       << "\" text-anchor=\"middle\">" << hd << "</text>\n";
  char val[32];
  for (std::size_t l = 0; l < em.layers; ++l) {
    const int y = margin + static_cast<int>(l) * cell;
    os << "<text x=\"" << margin - 6 << "\" y=\"" << y + cell / 2 + 4 << "\" text-anchor=\"end\">" << l << "</text>\n";
    for (std::size_t hd = 0; hd < em.heads; ++hd) {
      const double v = em.at(l, hd);
      std::snprintf(val, sizeof val, "%.4f", v);
      os << "<rect class=\"cell\" x=\"" << margin + static_cast<int>(hd) * cell << "\" y=\"" << y << "\" width=\""
         << cell << "\" height=\"" << cell << "\" fill=\"" << ramp_color(top > 0 ? v / top : 0.0)
         << "\"><title>layer " << l << " head " << hd << ": " << val << "</title></rect>\n";
    }
  }
  const int ly = margin + grid_h + 20;
  os << "<defs><linearGradient id=\"ramp\">";
  for (int k = 0; k < 5; ++k) os << "<stop offset=\"" << k * 25 << "%\" stop-color=\"" << ramp_color(k / 4.0) << "\"/>";
  os << "</linearGradient></defs>\n";
  os << "<rect class=\"legend\" x=\"" << margin << "\" y=\"" << ly << "\" width=\"" << legend_w
     << "\" height=\"12\" fill=\"url(#ramp)\"/>\n";
  std::snprintf(val, sizeof val, "%.4f", top);
  os << "<text x=\"" << margin << "\" y=\"" << ly + 26 << "\">0</text>\n";
  os << "<text x=\"" << margin + legend_w << "\" y=\"" << ly + 26 << "\" text-anchor=\"end\">" << val << "</text>\n";
  char mm[96];
  std::snprintf(mm, sizeof mm, "min %.4f  max %.4f", em.min_observed(), em.max_observed());
  os << "<text x=\"" << margin << "\" y=\"" << ly + 42 << "\">" << mm << "</text>\n";
  os << "</svg>\n";
  return os.str();
}

void export_heatmap(const EntropyMatrix& em, const std::filesystem::path& path, HeatmapFormat format) {
  write_file_atomic(path, format == HeatmapFormat::csv ? entropy_csv(em) : entropy_svg(em));
}

EntropyMatrix parse_entropy_csv(const std::string& text, std::size_t context) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != "layer,head,entropy")
    throw InputError("entropy CSV must start with the header 'layer,head,entropy'");
  std::map<std::pair<std::size_t, std::size_t>, double> cells;
  std::size_t L = 0, H = 0, lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::size_t l = 0, h = 0;
    double v = 0.0;
    int consumed = 0;
    if (std::sscanf(line.c_str(), "%zu,%zu,%lf%n", &l, &h, &v, &consumed) != 3 ||
        static_cast<std::size_t>(consumed) != line.size())
      throw InputError("malformed entropy CSV line " + std::to_string(lineno) + ": '" + line + "'");
    if (!cells.emplace(std::make_pair(l, h), v).second)
      throw InputError("duplicate cell (" + std::to_string(l) + "," + std::to_string(h) + ") in entropy CSV");
    L = std::max(L, l + 1);
    H = std::max(H, h + 1);
  }
  if (cells.empty() || cells.size() != L * H) throw InputError("entropy CSV does not describe a complete grid");
  EntropyMatrix em;
  em.layers = L;
  em.heads = H;
  em.context = context;
  em.values.resize(L * H);
  for (const auto& [key, v] : cells) em.at(key.first, key.second) = v;
  return em;
}

EntropyMatrix read_entropy_csv(const std::filesystem::path& path, std::size_t context) {
  return parse_entropy_csv(read_file(path), context);
}

}  // namespace entlab
