#include "ndpann/dfloat.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace ndpann {

int DfloatFormat::max_biased_exponent() const {
  return std::min((1 << n_exp) - 1, 254 - 127 + bias());
}

void DfloatFormat::validate() const {
  if (n_exp < 2 || n_exp > 8) throw Error("exponent width must lie in [2, 8]");
  if (n_man < 1 || n_man > 23) throw Error("mantissa width must lie in [1, 23]");
}

std::uint32_t dfloat_encode(float x, DfloatFormat fmt) {
  if (!std::isfinite(x)) throw Error("cannot encode a non-finite value");
  const std::uint32_t bits = std::bit_cast<std::uint32_t>(x);
  const std::uint32_t sign = bits >> 31;
  const std::uint32_t mag = bits & 0x7fffffffu;
  if ((mag >> 23) == 0) return 0;  // zero or fp32 subnormal

  // Round-to-nearest-even on the exponent:mantissa field; a carry out of
  // the mantissa bumps the exponent naturally.
  const int shift = 23 - fmt.n_man;
  std::uint32_t rounded = mag;
  if (shift > 0) {
    const std::uint32_t half = (1u << (shift - 1)) - 1u;
    rounded = (mag + half + ((mag >> shift) & 1u)) >> shift;
  }
  const std::uint32_t man_mask = (1u << fmt.n_man) - 1u;
  const int e32 = static_cast<int>(rounded >> fmt.n_man);
  std::uint32_t man = rounded & man_mask;

  int biased = e32 - 127 + fmt.bias();
  if (biased < 1) return 0;
  if (biased > fmt.max_biased_exponent()) {
    biased = fmt.max_biased_exponent();
    man = man_mask;
  }
  return (sign << (fmt.n_exp + fmt.n_man)) | (static_cast<std::uint32_t>(biased) << fmt.n_man) | man;
}

float dfloat_decode(std::uint32_t word, DfloatFormat fmt) {
  const std::uint32_t man_mask = (1u << fmt.n_man) - 1u;
  const std::uint32_t exp_mask = (1u << fmt.n_exp) - 1u;
  const std::uint32_t biased = (word >> fmt.n_man) & exp_mask;
  if (biased == 0) return 0.0f;
  const std::uint32_t sign = (word >> (fmt.n_exp + fmt.n_man)) & 1u;
  const std::uint32_t e32 = static_cast<std::uint32_t>(static_cast<int>(biased) - fmt.bias() + 127);
  const std::uint32_t bits = (sign << 31) | (e32 << 23) | ((word & man_mask) << (23 - fmt.n_man));
  return std::bit_cast<float>(bits);
}

DfloatConfig::DfloatConfig(std::vector<DfloatSegment> segments, std::uint32_t burst_bits,
                           std::uint32_t devices)
    : segments_(std::move(segments)), burst_bits_(burst_bits), devices_(devices) {
  if (segments_.empty()) throw Error("Dfloat config has no segments");
  if (burst_bits_ == 0 || burst_bits_ % 32 != 0) throw Error("burst bits must be a positive multiple of 32");
  if (devices_ == 0) throw Error("device count must be positive");
  std::uint32_t next = 1;
  for (const auto& s : segments_) {
    s.format.validate();
    if (s.dim_start != next || s.dim_end < s.dim_start) {
      throw Error("Dfloat segments must cover dimensions contiguously from 1");
    }
    if (s.format.width() > static_cast<int>(burst_bits_)) throw Error("feature wider than a burst");
    next = s.dim_end + 1;
  }
  segment_of_dim_.resize(dim());
  for (std::size_t si = 0; si < segments_.size(); ++si) {
    for (std::uint32_t d = segments_[si].dim_start; d <= segments_[si].dim_end; ++d) {
      segment_of_dim_[d - 1] = static_cast<std::uint32_t>(si);
    }
  }
}

DfloatConfig DfloatConfig::full_precision(std::uint32_t dim, std::uint32_t burst_bits,
                                          std::uint32_t devices) {
  return DfloatConfig({DfloatSegment{1, dim, DfloatFormat{8, 23}}}, burst_bits, devices);
}

std::uint32_t DfloatConfig::features_per_burst(std::size_t segment) const {
  return burst_bits_ / static_cast<std::uint32_t>(segments_.at(segment).format.width());
}

std::uint32_t DfloatConfig::bursts_in_segment(std::size_t segment) const {
  const std::uint32_t per = features_per_burst(segment);
  return (segments_.at(segment).count() + per - 1) / per;
}

std::uint32_t DfloatConfig::total_bursts() const {
  std::uint32_t total = 0;
  for (std::size_t i = 0; i < segments_.size(); ++i) total += bursts_in_segment(i);
  return total;
}

std::uint32_t DfloatConfig::steps() const { return (total_bursts() + devices_ - 1) / devices_; }

bool DfloatConfig::is_full_precision() const {
  return std::all_of(segments_.begin(), segments_.end(), [](const DfloatSegment& s) {
    return s.format == DfloatFormat{8, 23};
  });
}

const DfloatFormat& DfloatConfig::format_of(std::uint32_t dim_index) const {
  return segments_[segment_of_dim_.at(dim_index)].format;
}

std::vector<std::uint32_t> DfloatConfig::step_boundaries() const {
  // Features available after each burst, then sampled at step ends.
  std::vector<std::uint32_t> after_burst;
  std::uint32_t done = 0;
  for (std::size_t si = 0; si < segments_.size(); ++si) {
    const std::uint32_t per = features_per_burst(si);
    std::uint32_t left = segments_[si].count();
    while (left > 0) {
      const std::uint32_t take = std::min(per, left);
      done += take;
      left -= take;
      after_burst.push_back(done);
    }
  }
  std::vector<std::uint32_t> steps;
  for (std::size_t b = devices_ - 1; b < after_burst.size(); b += devices_) steps.push_back(after_burst[b]);
  if (steps.empty() || steps.back() != done) steps.push_back(done);
  return steps;
}

bool DfloatConfig::satisfies_rules(std::string* why) const {
  auto fail = [&](const std::string& msg) {
    if (why != nullptr) *why = msg;
    return false;
  };
  for (std::size_t i = 0; i < segments_.size(); ++i) {
    const int w = segments_[i].format.width();
    if (w < 12 || w > 32) return fail("segment width outside [12, 32]");
    if (i > 0 && w > segments_[i - 1].format.width()) return fail("segment widths increase");
  }
  if (total_bursts() % devices_ != 0) return fail("burst count is not a multiple of the device count");
  return true;
}

std::string DfloatConfig::to_text() const {
  std::ostringstream out;
  out << "burst_bits=" << burst_bits_ << " devices=" << devices_ << "\n";
  for (const auto& s : segments_) {
    out << "dims=" << s.dim_start << ".." << s.dim_end << " exp=" << int(s.format.n_exp)
        << " man=" << int(s.format.n_man) << "\n";
  }
  return out.str();
}

DfloatConfig DfloatConfig::from_text(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::uint32_t burst_bits = 0, devices = 0;
  bool header = false;
  std::vector<DfloatSegment> segs;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string tok;
    std::map<std::string, std::string> kv;
    while (ls >> tok) {
      const auto eq = tok.find('=');
      if (eq == std::string::npos) throw FormatError("line " + std::to_string(line_no) + ": expected key=value");
      kv[tok.substr(0, eq)] = tok.substr(eq + 1);
    }
    try {
      if (!header) {
        burst_bits = static_cast<std::uint32_t>(std::stoul(kv.at("burst_bits")));
        devices = static_cast<std::uint32_t>(std::stoul(kv.at("devices")));
        header = true;
        continue;
      }
      const auto& dims = kv.at("dims");
      const auto dots = dims.find("..");
      if (dots == std::string::npos) throw FormatError("dims must be a..b");
      DfloatSegment s;
      s.dim_start = static_cast<std::uint32_t>(std::stoul(dims.substr(0, dots)));
      s.dim_end = static_cast<std::uint32_t>(std::stoul(dims.substr(dots + 2)));
      s.format.n_exp = static_cast<std::uint8_t>(std::stoul(kv.at("exp")));
      s.format.n_man = static_cast<std::uint8_t>(std::stoul(kv.at("man")));
      segs.push_back(s);
    } catch (const std::out_of_range&) {
      throw FormatError("line " + std::to_string(line_no) + ": missing field in Dfloat config");
    } catch (const std::invalid_argument&) {
      throw FormatError("line " + std::to_string(line_no) + ": malformed number in Dfloat config");
    }
  }
  if (!header) throw FormatError("Dfloat config lacks a header line");
  return DfloatConfig(std::move(segs), burst_bits, devices);
}

void save_dfloat_config(const std::filesystem::path& path, const DfloatConfig& cfg) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << cfg.to_text();
}

DfloatConfig load_dfloat_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return DfloatConfig::from_text(ss.str());
}

std::uint32_t steps_for_dims(std::span<const std::uint32_t> step_boundaries, std::uint32_t dims) {
  if (dims == 0) return 0;
  auto it = std::lower_bound(step_boundaries.begin(), step_boundaries.end(), dims);
  if (it == step_boundaries.end()) throw Error("dimension count beyond the vector layout");
  return static_cast<std::uint32_t>(it - step_boundaries.begin()) + 1;
}

std::span<const std::uint32_t> PackedVector::burst(std::uint32_t b) const {
  const auto devices = static_cast<std::uint32_t>(device_streams.size());
  const auto& stream = device_streams.at(b % devices);
  return std::span<const std::uint32_t>(stream).subspan((b / devices) * burst_words, burst_words);
}

namespace {

void put_bits(std::vector<std::uint32_t>& words, std::size_t bit, std::uint32_t value, int width) {
  const std::uint64_t v = static_cast<std::uint64_t>(value) << (bit % 32);
  words[bit / 32] |= static_cast<std::uint32_t>(v);
  if ((bit % 32) + static_cast<std::size_t>(width) > 32) words[bit / 32 + 1] |= static_cast<std::uint32_t>(v >> 32);
}

std::uint32_t get_bits(std::span<const std::uint32_t> words, std::size_t bit, int width) {
  std::uint64_t v = words[bit / 32];
  if ((bit % 32) + static_cast<std::size_t>(width) > 32) v |= static_cast<std::uint64_t>(words[bit / 32 + 1]) << 32;
  v >>= (bit % 32);
  return static_cast<std::uint32_t>(v & ((width == 32) ? 0xffffffffULL : ((1ULL << width) - 1)));
}

}  // namespace

PackedVector pack_vector(std::span<const float> v, const DfloatConfig& cfg) {
  if (v.size() != cfg.dim()) {
    throw MismatchError("vector dimension " + std::to_string(v.size()) +
                        " does not match Dfloat config dimension " + std::to_string(cfg.dim()));
  }
  PackedVector out;
  out.burst_words = cfg.burst_bits() / 32;
  const std::uint32_t total = cfg.total_bursts();
  const std::uint32_t devices = cfg.devices();
  out.device_streams.assign(devices, {});
  for (std::uint32_t d = 0; d < devices; ++d) {
    const std::uint32_t count = total / devices + (d < total % devices ? 1 : 0);
    out.device_streams[d].assign(static_cast<std::size_t>(count) * out.burst_words, 0u);
  }
  std::uint32_t burst = 0;
  for (std::size_t si = 0; si < cfg.segments().size(); ++si) {
    const auto& seg = cfg.segments()[si];
    const std::uint32_t per = cfg.features_per_burst(si);
    const int w = seg.format.width();
    for (std::uint32_t i = 0; i < seg.count(); ++i) {
      const std::uint32_t b = burst + i / per;
      auto& stream = out.device_streams[b % devices];
      std::vector<std::uint32_t> view;  // scratch for one burst
      const std::size_t base = static_cast<std::size_t>(b / devices) * out.burst_words;
      view.assign(stream.begin() + static_cast<std::ptrdiff_t>(base),
                  stream.begin() + static_cast<std::ptrdiff_t>(base + out.burst_words));
      view.push_back(0u);
      put_bits(view, static_cast<std::size_t>(i % per) * static_cast<std::size_t>(w),
               dfloat_encode(v[seg.dim_start - 1 + i], seg.format), w);
      std::copy(view.begin(), view.begin() + out.burst_words,
                stream.begin() + static_cast<std::ptrdiff_t>(base));
    }
    burst += cfg.bursts_in_segment(si);
  }
  return out;
}

std::vector<float> unpack_vector(const PackedVector& packed, const DfloatConfig& cfg) {
  if (packed.device_streams.size() != cfg.devices()) throw MismatchError("packed vector device count mismatch");
  std::vector<float> out(cfg.dim());
  std::uint32_t burst = 0;
  std::vector<std::uint32_t> scratch;
  for (std::size_t si = 0; si < cfg.segments().size(); ++si) {
    const auto& seg = cfg.segments()[si];
    const std::uint32_t per = cfg.features_per_burst(si);
    const int w = seg.format.width();
    for (std::uint32_t i = 0; i < seg.count(); ++i) {
      const auto words = packed.burst(burst + i / per);
      scratch.assign(words.begin(), words.end());
      scratch.push_back(0u);
      const auto bits = get_bits(scratch, static_cast<std::size_t>(i % per) * static_cast<std::size_t>(w), w);
      out[seg.dim_start - 1 + i] = dfloat_decode(bits, seg.format);
    }
    burst += cfg.bursts_in_segment(si);
  }
  return out;
}

std::vector<float> mask_emulate(std::span<const float> v, const DfloatConfig& cfg) {
  if (v.size() != cfg.dim()) throw MismatchError("vector dimension does not match Dfloat config");
  std::vector<float> out(v.size());
  for (const auto& seg : cfg.segments()) {
    for (std::uint32_t d = seg.dim_start - 1; d < seg.dim_end; ++d) {
      out[d] = dfloat_round_trip(v[d], seg.format);
    }
  }
  return out;
}

Matrix mask_emulate_rows(const Matrix& rows, const DfloatConfig& cfg) {
  if (rows.cols() != cfg.dim()) throw MismatchError("row dimension does not match Dfloat config");
  Matrix out(rows.rows(), rows.cols());
  for (std::size_t r = 0; r < rows.rows(); ++r) {
    const auto src = rows.row(r);
    auto dst = out.row(r);
    for (const auto& seg : cfg.segments()) {
      for (std::uint32_t d = seg.dim_start - 1; d < seg.dim_end; ++d) {
        dst[d] = dfloat_round_trip(src[d], seg.format);
      }
    }
  }
  return out;
}

DfloatFormat default_exponent_policy(std::uint32_t, std::uint32_t, int width) {
  if (width == 32) return {8, 23};
  const int e = std::min(5, width - 2);
  return {static_cast<std::uint8_t>(e), static_cast<std::uint8_t>(width - 1 - e)};
}

ExponentPolicy make_data_exponent_policy(const Matrix& data) {
  const std::size_t d = data.cols();
  std::vector<int> hi(d, -126), lo(d, 127);
  const std::size_t stride = std::max<std::size_t>(1, data.rows() / 4096);
  std::vector<float> mags;
  for (std::size_t j = 0; j < d; ++j) {
    mags.clear();
    float mx = 0.0f;
    for (std::size_t r = 0; r < data.rows(); ++r) mx = std::max(mx, std::fabs(data(r, j)));
    for (std::size_t r = 0; r < data.rows(); r += stride) {
      const float a = std::fabs(data(r, j));
      if (a > 0.0f) mags.push_back(a);
    }
    if (mx > 0.0f) hi[j] = std::ilogb(mx);
    if (!mags.empty()) {
      const std::size_t q = mags.size() / 100;
      std::nth_element(mags.begin(), mags.begin() + static_cast<std::ptrdiff_t>(q), mags.end());
      lo[j] = std::ilogb(mags[q]);
    }
  }
  return [hi = std::move(hi), lo = std::move(lo)](std::uint32_t start, std::uint32_t end,
                                                  int width) -> DfloatFormat {
    if (width == 32) return {8, 23};
    int e_hi = -126, e_lo = 127;
    for (std::uint32_t k = start; k <= end; ++k) {
      e_hi = std::max(e_hi, hi[k - 1]);
      e_lo = std::min(e_lo, lo[k - 1]);
    }
    const int cap = std::min(8, width - 2);
    for (int n = 2; n <= cap; ++n) {
      const DfloatFormat f{static_cast<std::uint8_t>(n), static_cast<std::uint8_t>(width - 1 - n)};
      const int top = f.max_biased_exponent() - f.bias();
      const int bottom = 1 - f.bias();
      if (e_hi <= top && e_lo >= bottom) return f;
    }
    return {static_cast<std::uint8_t>(cap), static_cast<std::uint8_t>(width - 1 - cap)};
  };
}

std::pair<std::uint32_t, std::uint32_t> burst_search_bounds(std::uint32_t dim,
                                                            std::uint32_t burst_bits,
                                                            std::uint32_t devices) {
  auto ceil_div = [](std::uint64_t a, std::uint64_t b) { return (a + b - 1) / b; };
  auto round_up = [&](std::uint64_t v) {
    return static_cast<std::uint32_t>(ceil_div(v, devices) * devices);
  };
  return {round_up(ceil_div(std::uint64_t{dim} * 12, burst_bits)),
          round_up(ceil_div(std::uint64_t{dim} * 32, burst_bits))};
}

namespace {

struct RawCandidate {
  std::vector<int> widths;
  std::vector<std::uint32_t> counts;  // dims per segment
};

bool dominates(const RawCandidate& a, const RawCandidate& b, std::uint32_t dim) {
  // Width at each dimension through a merge walk over both segment lists.
  std::size_t ia = 0, ib = 0;
  std::uint32_t ra = a.counts[0], rb = b.counts[0];
  bool strict = false;
  for (std::uint32_t d = 0; d < dim; ++d) {
    if (ra == 0) ra = a.counts[++ia];
    if (rb == 0) rb = b.counts[++ib];
    if (a.widths[ia] < b.widths[ib]) return false;
    if (a.widths[ia] > b.widths[ib]) strict = true;
    --ra;
    --rb;
  }
  return strict;
}

}  // namespace

std::vector<DfloatConfig> cfg_validate(std::uint32_t n_burst, std::uint32_t dim,
                                       std::uint32_t burst_bits, std::uint32_t devices,
                                       const CandidateOptions& options) {
  std::vector<DfloatConfig> result;
  if (dim == 0 || devices == 0 || n_burst == 0 || n_burst % devices != 0) return result;

  // For each features-per-burst count keep only the widest width.
  std::map<std::uint32_t, int> widest;
  for (int w : options.width_ladder) {
    if (w < 12 || w > 32 || w > static_cast<int>(burst_bits)) continue;
    const std::uint32_t per = burst_bits / static_cast<std::uint32_t>(w);
    widest[per] = std::max(widest[per], w);
  }
  std::vector<int> widths;
  for (const auto& [per, w] : widest) widths.push_back(w);
  std::sort(widths.rbegin(), widths.rend());

  std::vector<RawCandidate> raw;
  std::vector<int> chosen;
  std::vector<std::uint32_t> counts;
  // Non-final segments fill whole bursts; the last takes the remainder.
  std::function<void(std::size_t, std::uint32_t, std::uint32_t)> extend =
      [&](std::size_t next_width, std::uint32_t dims_left, std::uint32_t bursts_left) {
        for (std::size_t wi = next_width; wi < widths.size(); ++wi) {
          const int w = widths[wi];
          const std::uint32_t per = burst_bits / static_cast<std::uint32_t>(w);
          // Final segment with this width.
          if ((dims_left + per - 1) / per == bursts_left) {
            chosen.push_back(w);
            counts.push_back(dims_left);
            raw.push_back({chosen, counts});
            chosen.pop_back();
            counts.pop_back();
          }
          if (chosen.size() + 1 >= options.max_segments) continue;
          for (std::uint32_t b = 1; b < bursts_left; ++b) {
            const std::uint32_t take = b * per;
            if (take >= dims_left) break;
            chosen.push_back(w);
            counts.push_back(take);
            extend(wi + 1, dims_left - take, bursts_left - b);
            chosen.pop_back();
            counts.pop_back();
          }
        }
      };
  extend(0, dim, n_burst);

  std::vector<bool> dominated(raw.size(), false);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    for (std::size_t j = 0; j < raw.size() && !dominated[i]; ++j) {
      if (i != j && dominates(raw[j], raw[i], dim)) dominated[i] = true;
    }
  }
  std::vector<std::pair<std::uint64_t, std::size_t>> order;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (dominated[i]) continue;
    std::uint64_t bits = 0;
    for (std::size_t s = 0; s < raw[i].widths.size(); ++s) bits += std::uint64_t(raw[i].widths[s]) * raw[i].counts[s];
    order.emplace_back(bits, i);
  }
  std::stable_sort(order.begin(), order.end(), [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return raw[a.second].widths > raw[b.second].widths;  // lexicographic, wider leading first
  });
  for (const auto& [bits, i] : order) {
    std::vector<DfloatSegment> segs;
    std::uint32_t start = 1;
    for (std::size_t s = 0; s < raw[i].widths.size(); ++s) {
      const std::uint32_t end = start + raw[i].counts[s] - 1;
      DfloatFormat f = options.exponent_policy(start, end, raw[i].widths[s]);
      if (f.width() != raw[i].widths[s]) throw Error("exponent policy changed the segment width");
      segs.push_back({start, end, f});
      start = end + 1;
    }
    DfloatConfig cfg(std::move(segs), burst_bits, devices);
    if (cfg.satisfies_rules() && cfg.total_bursts() == n_burst) result.push_back(std::move(cfg));
  }
  return result;
}

}  // namespace ndpann
