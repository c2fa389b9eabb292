#include "sdba/defenses.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <sstream>

#include "sdba/errors.hpp"

namespace sdba {

namespace {

std::vector<std::size_t> ids_of(const std::vector<Update>& updates) {
  std::vector<std::size_t> ids;
  for (const auto& u : updates) ids.push_back(u.client_id);
  return ids;
}

DefenseDiagnostics admit_all(const std::vector<Update>& updates) {
  DefenseDiagnostics d;
  d.admitted_ids = ids_of(updates);
  return d;
}

std::string format_number(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

void add_noise(ParamVector& delta, double sigma, Rng& rng) {
  if (sigma <= 0.0) return;
  std::normal_distribution<double> noise(0.0, sigma);
  for (double& v : delta.values()) v += noise(rng);
}

}  // namespace

void validate(const DefensePipeline& pipeline) {
  for (const auto& stage : pipeline.stages) {
    std::visit(
        [](const auto& s) {
          using T = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<T, MultiKrumStage>) {
            if (s.m && *s.m == 0) throw ConfigError("multi_krum: m must be at least 1");
          } else if constexpr (std::is_same_v<T, NormClipStage>) {
            if (!(s.bound > 0.0)) throw ConfigError("norm_clip: bound must be positive");
          } else if constexpr (std::is_same_v<T, WeakDpStage>) {
            if (!(s.bound > 0.0)) throw ConfigError("weak_dp: bound must be positive");
            if (!(s.sigma >= 0.0)) throw ConfigError("weak_dp: sigma must be non-negative");
          } else {
            if (!(s.lambda >= 0.0)) throw ConfigError("flame: lambda must be non-negative");
          }
        },
        stage);
  }
}

std::string to_string(const DefensePipeline& pipeline) {
  if (pipeline.stages.empty()) return "none";
  std::string out;
  for (const auto& stage : pipeline.stages) {
    if (!out.empty()) out += '+';
    std::visit(
        [&](const auto& s) {
          using T = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<T, MultiKrumStage>)
            out += "multi_krum(" + std::to_string(s.f) + (s.m ? "," + std::to_string(*s.m) : "") + ")";
          else if constexpr (std::is_same_v<T, NormClipStage>)
            out += "norm_clip(" + format_number(s.bound) + ")";
          else if constexpr (std::is_same_v<T, WeakDpStage>)
            out += "weak_dp(" + format_number(s.bound) + "," + format_number(s.sigma) + ")";
          else
            out += "flame(" + format_number(s.lambda) + ")";
        },
        stage);
  }
  return out;
}

DefensePipeline parse_pipeline(const std::string& text) {
  DefensePipeline p;
  std::string compact;
  for (char c : text)
    if (!std::isspace(static_cast<unsigned char>(c))) compact += c;
  if (compact.empty() || compact == "none") return p;

  std::stringstream ss(compact);
  std::string item;
  while (std::getline(ss, item, '+')) {
    const auto open = item.find('(');
    if (open == std::string::npos || item.back() != ')') throw ConfigError("defense stage '" + item + "': expected name(args)");
    const std::string name = item.substr(0, open);
    std::vector<double> args;
    std::stringstream as(item.substr(open + 1, item.size() - open - 2));
    std::string a;
    while (std::getline(as, a, ',')) {
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(a.data(), a.data() + a.size(), v);
      if (ec != std::errc() || ptr != a.data() + a.size())
        throw ConfigError("defense stage '" + item + "': bad number '" + a + "'");
      args.push_back(v);
    }
    const auto count = [&](std::size_t lo, std::size_t hi) {
      if (args.size() < lo || args.size() > hi) throw ConfigError("defense stage '" + item + "': wrong argument count");
    };
    const auto as_count = [&](double v) {
      if (v < 0.0 || v != std::floor(v)) throw ConfigError("defense stage '" + item + "': expected an integer");
      return static_cast<std::size_t>(v);
    };
    if (name == "multi_krum") {
      count(1, 2);
      MultiKrumStage s{as_count(args[0]), std::nullopt};
      if (args.size() == 2) s.m = as_count(args[1]);
      p.stages.emplace_back(s);
    } else if (name == "norm_clip") {
      count(1, 1);
      p.stages.emplace_back(NormClipStage{args[0]});
    } else if (name == "weak_dp") {
      count(2, 2);
      p.stages.emplace_back(WeakDpStage{args[0], args[1]});
    } else if (name == "flame") {
      count(1, 1);
      p.stages.emplace_back(FlameStage{args[0]});
    } else {
      throw ConfigError("unknown defense stage '" + name + "'");
    }
  }
  validate(p);
  return p;
}

std::vector<double> krum_scores(const std::vector<Update>& updates, std::size_t f) {
  const std::size_t n = updates.size();
  if (n < f + 3) throw ConfigError("krum_scores: need at least f + 3 updates");
  std::vector<std::vector<double>> dist(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      dist[i][j] = dist[j][i] = updates[i].delta.squared_distance(updates[j].delta);
  const std::size_t neighbours = n - f - 2;
  std::vector<double> scores(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> row;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) row.push_back(dist[i][j]);
    std::sort(row.begin(), row.end());
    scores[i] = std::accumulate(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(neighbours), 0.0);
  }
  return scores;
}

DefenseResult multi_krum(std::vector<Update> updates, std::size_t f, std::optional<std::size_t> m) {
  const std::size_t n = updates.size();
  const std::size_t keep = m.value_or(n >= f + 1 ? n - f - 1 : 0);
  if (n < 2 * f + 3 || keep == 0 || keep > n - f) {
    DefenseResult r{std::move(updates), {}};
    r.diag = admit_all(r.updates);
    r.diag.krum_skipped = true;
    return r;
  }
  const auto scores = krum_scores(updates, f);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] < scores[b];
    return updates[a].client_id < updates[b].client_id;
  });
  std::vector<bool> survives(n, false);
  for (std::size_t i = 0; i < keep; ++i) survives[order[i]] = true;

  DefenseResult r;
  r.diag.krum_scores = scores;
  for (std::size_t i = 0; i < n; ++i) {
    if (survives[i]) {
      r.diag.admitted_ids.push_back(updates[i].client_id);
      r.updates.push_back(std::move(updates[i]));
    } else {
      r.diag.filtered_ids.push_back(updates[i].client_id);
    }
  }
  return r;
}

DefenseResult norm_clip(std::vector<Update> updates, double bound) {
  if (!(bound > 0.0)) throw ConfigError("norm_clip: bound must be positive");
  DefenseResult r{std::move(updates), {}};
  r.diag = admit_all(r.updates);
  for (auto& u : r.updates) {
    const double n = u.delta.norm();
    if (n > bound) {
      u.delta.scale(bound / n);
      ++r.diag.clip_count;
    }
  }
  return r;
}

DefenseResult weak_dp(std::vector<Update> updates, double bound, double sigma, Rng& server_rng) {
  if (!(sigma >= 0.0)) throw ConfigError("weak_dp: sigma must be non-negative");
  DefenseResult r = norm_clip(std::move(updates), bound);
  for (auto& u : r.updates) add_noise(u.delta, sigma, server_rng);
  r.diag.noise_sigma_applied = sigma;
  return r;
}

DefenseResult flame(std::vector<Update> updates, double lambda, Rng& server_rng) {
  if (!(lambda >= 0.0)) throw ConfigError("flame: lambda must be non-negative");
  const std::size_t n = updates.size();
  DefenseResult r;
  if (n < 3) {
    r.updates = std::move(updates);
    r.diag = admit_all(r.updates);
    r.diag.flame_degraded = true;
    return r;
  }

  // (1) pairwise cosine distances
  std::vector<double> sq(n);
  for (std::size_t i = 0; i < n; ++i) sq[i] = updates[i].delta.dot(updates[i].delta);
  std::vector<std::vector<double>> dist(n, std::vector<double>(n, 0.0));
  std::vector<double> pairs;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double denom = std::sqrt(sq[i] * sq[j]);
      const double cos = denom > 0.0 ? std::clamp(updates[i].delta.dot(updates[j].delta) / denom, -1.0, 1.0) : 0.0;
      dist[i][j] = dist[j][i] = 1.0 - cos;
      pairs.push_back(1.0 - cos);
    }
  }

  // (2) single linkage cut at the median distance: connected components of
  // the graph with edges dist <= cut.
  const double cut = median(pairs);
  std::vector<std::size_t> comp(n, n);
  std::size_t next = 0;
  for (std::size_t s = 0; s < n; ++s) {
    if (comp[s] != n) continue;
    std::vector<std::size_t> stack{s};
    comp[s] = next;
    while (!stack.empty()) {
      const auto i = stack.back();
      stack.pop_back();
      for (std::size_t j = 0; j < n; ++j)
        if (comp[j] == n && dist[i][j] <= cut) {
          comp[j] = next;
          stack.push_back(j);
        }
    }
    ++next;
  }
  std::vector<std::size_t> sizes(next, 0);
  for (auto c : comp) ++sizes[c];
  // Components are numbered by their lowest member, so max_element breaks
  // ties toward the lowest position.
  const auto largest = static_cast<std::size_t>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
  const bool majority = sizes[largest] >= n / 2 + 1;
  r.diag.flame_degraded = !majority;

  for (std::size_t i = 0; i < n; ++i) {
    if (!majority || comp[i] == largest) {
      r.diag.admitted_ids.push_back(updates[i].client_id);
      r.updates.push_back(std::move(updates[i]));
    } else {
      r.diag.filtered_ids.push_back(updates[i].client_id);
    }
  }

  // (3) clip to the median admitted norm, (4) adaptive noise.
  std::vector<double> norms;
  for (const auto& u : r.updates) norms.push_back(u.delta.norm());
  const double s = median(norms);
  for (std::size_t i = 0; i < r.updates.size(); ++i) {
    if (norms[i] > s && norms[i] > 0.0) {
      r.updates[i].delta.scale(s / norms[i]);
      ++r.diag.clip_count;
    }
    add_noise(r.updates[i].delta, lambda * s, server_rng);
  }
  r.diag.noise_sigma_applied = lambda * s;
  return r;
}

DefenseResult apply_pipeline(std::vector<Update> updates, const DefensePipeline& pipeline, Rng& server_rng) {
  validate(pipeline);
  std::sort(updates.begin(), updates.end(), [](const Update& a, const Update& b) { return a.client_id < b.client_id; });
  DefenseDiagnostics merged;
  for (const auto& stage : pipeline.stages) {
    DefenseResult r = std::visit(
        [&](const auto& s) -> DefenseResult {
          using T = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<T, MultiKrumStage>) return multi_krum(std::move(updates), s.f, s.m);
          else if constexpr (std::is_same_v<T, NormClipStage>) return norm_clip(std::move(updates), s.bound);
          else if constexpr (std::is_same_v<T, WeakDpStage>) return weak_dp(std::move(updates), s.bound, s.sigma, server_rng);
          else return flame(std::move(updates), s.lambda, server_rng);
        },
        stage);
    updates = std::move(r.updates);
    merged.filtered_ids.insert(merged.filtered_ids.end(), r.diag.filtered_ids.begin(), r.diag.filtered_ids.end());
    merged.clip_count += r.diag.clip_count;
    merged.noise_sigma_applied = std::max(merged.noise_sigma_applied, r.diag.noise_sigma_applied);
    merged.krum_skipped = merged.krum_skipped || r.diag.krum_skipped;
    merged.flame_degraded = merged.flame_degraded || r.diag.flame_degraded;
    if (!r.diag.krum_scores.empty()) merged.krum_scores = r.diag.krum_scores;
  }
  merged.admitted_ids = ids_of(updates);
  merged.filtered_all = updates.empty();
  std::sort(merged.filtered_ids.begin(), merged.filtered_ids.end());
  return DefenseResult{std::move(updates), std::move(merged)};
}

}  // namespace sdba
