#pragma once

// Second BLEU implementation for cross-checking: n-grams are joined into
// strings and counted per sentence, then the geometric mean is taken as a
// product of powers rather than a sum of logs.

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

namespace oracle {

inline std::unordered_map<std::string, int> grams(const std::vector<std::string>& s, std::size_t n) {
  std::unordered_map<std::string, int> out;
  for (std::size_t i = 0; i + n <= s.size(); ++i) {
    std::string key;
    for (std::size_t j = i; j < i + n; ++j) key += s[j] + '\x1f';
    out[key]++;
  }
  return out;
}

inline double bleu(const std::vector<std::vector<std::string>>& hyp, const std::vector<std::vector<std::string>>& ref,
                   bool smooth = true) {
  double match[4] = {0, 0, 0, 0}, total[4] = {0, 0, 0, 0};
  double c = 0, r = 0;
  for (std::size_t s = 0; s < hyp.size(); ++s) {
    c += static_cast<double>(hyp[s].size());
    r += static_cast<double>(ref[s].size());
    for (std::size_t n = 1; n <= 4; ++n) {
      auto hg = grams(hyp[s], n);
      auto rg = grams(ref[s], n);
      for (auto& [k, v] : hg) {
        total[n - 1] += v;
        auto it = rg.find(k);
        if (it != rg.end()) match[n - 1] += std::min(v, it->second);
      }
    }
  }
  double prod = 1.0;
  for (int n = 0; n < 4; ++n) {
    double p;
    if (match[n] > 0) p = match[n] / total[n];
    else if (smooth && n > 0) p = 1.0 / (total[n] + 1.0);
    else return 0.0;
    prod *= std::pow(p, 0.25);
  }
  if (c == 0) return 0.0;
  const double bp = c < r ? std::exp(1.0 - r / c) : 1.0;
  return 100.0 * bp * prod;
}

}  // namespace oracle
