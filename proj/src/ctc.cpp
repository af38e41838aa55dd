#include "fctc/ctc.hpp"

#include "fctc/binio.hpp"

#include <cmath>
#include <limits>
#include <optional>
#include <set>

namespace fctc {

Vocab Vocab::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open vocab file: " + path);
  Vocab v;
  std::set<std::string> seen;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (!seen.insert(line).second) throw DataError("duplicate token in vocab: " + line);
    v.tokens.push_back(line);
  }
  return v;
}

void Vocab::save(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open vocab file for writing: " + path);
  for (const auto& t : tokens) os << t << "\n";
}

Posteriorgram Posteriorgram::read(const std::string& path) {
  auto is = binio::open_in(path);
  binio::Reader r(is, path);
  r.expect_magic("PGRM");
  const std::uint32_t t = r.read_u32();
  const std::uint32_t vp = r.read_u32();
  if (t == 0 || vp == 0) throw FormatError(path + ": zero dimension");
  Posteriorgram p;
  p.log_probs.resize(t, vp);
  r.read_f64_block(p.log_probs.data(), static_cast<std::size_t>(t) * vp);
  return p;
}

void Posteriorgram::write(const std::string& path) const {
  auto os = binio::open_out(path);
  binio::write_magic(os, "PGRM");
  binio::write_u32(os, static_cast<std::uint32_t>(log_probs.rows()));
  binio::write_u32(os, static_cast<std::uint32_t>(log_probs.cols()));
  binio::write_bytes(os, log_probs.data(), sizeof(double) * log_probs.size());
}

TokenSequence collapse(const Alignment& a) {
  TokenSequence out;
  int prev = -1;
  for (int id : a) {
    if (id != prev && id != kBlankId) out.push_back(id);
    prev = id;
  }
  return out;
}

int min_alignment_length(const TokenSequence& y) {
  int len = static_cast<int>(y.size());
  for (std::size_t i = 1; i < y.size(); ++i) {
    if (y[i] == y[i - 1]) ++len;
  }
  return len;
}

ag::Node ctc_neg_log_likelihood(ag::Node z, const TokenSequence& y) {
  const Eigen::Index t_len = z.rows();
  const Eigen::Index vp = z.cols();
  for (int id : y) {
    if (id < 1 || id >= vp) throw DimensionError("ctc: target id out of vocabulary");
  }
  if (t_len < min_alignment_length(y)) {
    throw InfeasibleTargetError("ctc: target needs " +
                                std::to_string(min_alignment_length(y)) +
                                " frames, got " + std::to_string(t_len));
  }
  ag::Node logz = ag::log_n(z);
  const int l = static_cast<int>(y.size());
  const int s_count = 2 * l + 1;
  auto label = [&](int s) { return s % 2 == 0 ? kBlankId : y[s / 2]; };

  std::vector<std::optional<ag::Node>> alpha(s_count);
  alpha[0] = ag::gather(logz, 0, kBlankId);
  if (s_count > 1) alpha[1] = ag::gather(logz, 0, label(1));

  for (Eigen::Index t = 1; t < t_len; ++t) {
    std::vector<std::optional<ag::Node>> next(s_count);
    for (int s = 0; s < s_count; ++s) {
      std::vector<ag::Node> terms;
      if (alpha[s]) terms.push_back(*alpha[s]);
      if (s >= 1 && alpha[s - 1]) terms.push_back(*alpha[s - 1]);
      if (s >= 2 && label(s) != kBlankId && label(s) != label(s - 2) && alpha[s - 2]) {
        terms.push_back(*alpha[s - 2]);
      }
      if (terms.empty()) continue;
      ag::Node acc = terms.size() == 1 ? terms[0] : ag::logsumexp(terms);
      next[s] = ag::add(acc, ag::gather(logz, t, label(s)));
    }
    alpha = std::move(next);
  }

  std::vector<ag::Node> finals;
  if (alpha[s_count - 1]) finals.push_back(*alpha[s_count - 1]);
  if (s_count > 1 && alpha[s_count - 2]) finals.push_back(*alpha[s_count - 2]);
  if (finals.empty()) {
    // Unreachable given the feasibility precondition.
    throw NumericalError("ctc: no terminal lattice state reached");
  }
  ag::Node ll = finals.size() == 1 ? finals[0] : ag::logsumexp(finals);
  return ag::scale(ll, -1.0);
}

double brute_force_ctc_prob(const Mat& log_probs, const TokenSequence& y) {
  const Eigen::Index t_len = log_probs.rows();
  const Eigen::Index vp = log_probs.cols();
  double combos = std::pow(static_cast<double>(vp), static_cast<double>(t_len));
  if (combos > 1e7) throw DimensionError("brute_force_ctc: |V'|^T exceeds guard");
  Mat probs = log_probs.array().exp();
  Alignment a(t_len, 0);
  double total = 0.0;
  while (true) {
    if (collapse(a) == y) {
      double p = 1.0;
      for (Eigen::Index t = 0; t < t_len; ++t) p *= probs(t, a[t]);
      total += p;
    }
    // odometer increment
    Eigen::Index pos = t_len - 1;
    while (pos >= 0) {
      if (++a[pos] < vp) break;
      a[pos] = 0;
      --pos;
    }
    if (pos < 0) break;
  }
  return total;
}

double brute_force_ctc_neg_log(const Mat& log_probs, const TokenSequence& y) {
  const double p = brute_force_ctc_prob(log_probs, y);
  if (p <= 0.0) return std::numeric_limits<double>::infinity();
  return -std::log(p);
}

TokenSequence best_path_decode(const Mat& log_probs) {
  Alignment a(log_probs.rows());
  for (Eigen::Index t = 0; t < log_probs.rows(); ++t) {
    int best = 0;
    double best_val = log_probs(t, 0);
    for (Eigen::Index c = 1; c < log_probs.cols(); ++c) {
      if (log_probs(t, c) > best_val) {  // strict: ties keep the lowest index
        best_val = log_probs(t, c);
        best = static_cast<int>(c);
      }
    }
    a[t] = best;
  }
  return collapse(a);
}

}  // namespace fctc
