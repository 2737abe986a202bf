#pragma once

// Central finite-difference checks against the analytic backward passes.

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "pneumanet/network.hpp"
#include "pneumanet/training.hpp"

namespace gradcheck {

using pneumanet::Tensor64;
namespace nn = pneumanet::nn;

struct Report {
  double max_rel = 0;
  std::size_t checked = 0;
  std::string worst;
  // Gradients below this magnitude are compared in absolute terms.
  double floor = 1e-6;

  void add(double analytic, double numeric, const std::string& where) {
    const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
    const double rel = std::abs(analytic - numeric) / scale;
    ++checked;
    if (rel > max_rel) {
      max_rel = rel;
      worst = where + " analytic=" + std::to_string(analytic) +
              " numeric=" + std::to_string(numeric);
    }
  }

  void merge(const Report& other) {
    checked += other.checked;
    if (other.max_rel > max_rel) {
      max_rel = other.max_rel;
      worst = other.worst;
    }
  }
};

inline Tensor64 random_tensor(const pneumanet::Shape& shape, std::mt19937_64& rng,
                              double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor64 t(shape);
  for (double& v : t.values()) v = u(rng);
  return t;
}

inline double weighted_sum(const Tensor64& a, const Tensor64& w) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * w[i];
  return s;
}

// Loss = sum(upstream * layer(x)) in train mode. Every parameter element and
// every input element is perturbed.
inline Report check_layer(nn::Layer<double>& layer, const Tensor64& x, std::mt19937_64& rng,
                          double step = 1e-5) {
  Tensor64 out = layer.forward(x, nn::Mode::train);
  const Tensor64 upstream = random_tensor(out.shape(), rng);
  for (Tensor64* g : layer.gradients()) g->fill(0);
  const Tensor64 dx = layer.backward(upstream, true);
  std::vector<Tensor64> dparams;
  for (Tensor64* g : layer.gradients()) dparams.push_back(*g);

  auto loss = [&](const Tensor64& input) {
    return weighted_sum(layer.forward(input, nn::Mode::train), upstream);
  };

  Report r;
  auto params = layer.parameters();
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor64& p = *params[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double saved = p[i];
      p[i] = saved + step;
      const double up = loss(x);
      p[i] = saved - step;
      const double down = loss(x);
      p[i] = saved;
      r.add(dparams[k][i], (up - down) / (2 * step),
            layer.type() + " param " + std::to_string(k) + "[" + std::to_string(i) + "]");
    }
  }
  Tensor64 xp = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    xp[i] = x[i] + step;
    const double up = loss(xp);
    xp[i] = x[i] - step;
    const double down = loss(xp);
    xp[i] = x[i];
    r.add(dx[i], (up - down) / (2 * step), layer.type() + " input[" + std::to_string(i) + "]");
  }
  return r;
}

// BCE through the whole network in train mode. Samples up to
// `per_group` coordinates from each parameter tensor.
inline Report check_network(nn::Network<double>& net, const Tensor64& x,
                            const std::vector<int>& labels, std::size_t per_group,
                            std::mt19937_64& rng, double step = 1e-5, double floor = 1e-6) {
  auto loss = [&]() {
    return pneumanet::bce_loss<double>(net.forward(x, nn::Mode::train), labels).value;
  };
  const auto res = pneumanet::bce_loss<double>(net.forward(x, nn::Mode::train), labels);
  net.zero_grad();
  net.backward(res.grad);
  std::vector<Tensor64> grads;
  for (Tensor64* g : net.gradients()) grads.push_back(*g);

  Report r;
  r.floor = floor;
  auto params = net.parameters();
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor64& p = *params[k];
    std::vector<std::size_t> idx(p.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::min(per_group, idx.size()));
    for (std::size_t i : idx) {
      const double saved = p[i];
      p[i] = saved + step;
      const double up = loss();
      p[i] = saved - step;
      const double down = loss();
      p[i] = saved;
      r.add(grads[k][i], (up - down) / (2 * step),
            "group " + std::to_string(k) + "[" + std::to_string(i) + "]");
    }
  }
  return r;
}

// Inputs kept away from activation kinks.
inline Tensor64 away_from_zero(const pneumanet::Shape& s, std::mt19937_64& rng) {
  Tensor64 t = random_tensor(s, rng, 0.05, 1.0);
  std::bernoulli_distribution sign(0.5);
  for (double& v : t.values())
    if (sign(rng)) v = -v;
  return t;
}

// Pairwise distinct values, so max-pooling has no ties.
inline Tensor64 distinct_values(const pneumanet::Shape& s, std::mt19937_64& rng) {
  Tensor64 t(s);
  std::vector<double> v(t.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = -1.0 + 0.01 * static_cast<double>(i);
  std::shuffle(v.begin(), v.end(), rng);
  std::copy(v.begin(), v.end(), t.data());
  return t;
}

inline void randomize(nn::Layer<double>& layer, std::mt19937_64& rng) {
  for (Tensor64* p : layer.parameters()) *p = random_tensor(p->shape(), rng);
}

}  // namespace gradcheck
