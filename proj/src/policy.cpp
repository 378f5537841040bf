#include "ctxalign/policy.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <stdexcept>

#include "ctxalign/rng.hpp"

namespace ctxalign::policy {

namespace {

double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

double log_sum_exp(const double* z, std::size_t n) {
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) m = std::max(m, z[i]);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += std::exp(z[i] - m);
  return m + std::log(s);
}

std::size_t class_index(TokenClass c) { return static_cast<std::size_t>(c); }

constexpr const char* kMagic = "CTXALIGN-CHECKPOINT";

}  // namespace

// ---------------------------------------------------------------- config

void ModelConfig::validate() const {
  if (dim == 0 || query_roles == 0 || doc_roles == 0) throw std::invalid_argument("ModelConfig: zero dimension");
  if (max_seq_len == 0) throw std::invalid_argument("ModelConfig: max_seq_len must be positive");
  if (!(embed_scale > 0.0)) throw std::invalid_argument("ModelConfig: embed_scale must be positive");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"dim", dim},
          {"query_roles", query_roles},
          {"doc_roles", doc_roles},
          {"max_seq_len", max_seq_len},
          {"embed_scale", embed_scale},
          {"query_memory", query_memory}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.dim = j.value("dim", c.dim);
  c.query_roles = j.value("query_roles", c.query_roles);
  c.doc_roles = j.value("doc_roles", c.doc_roles);
  c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
  c.embed_scale = j.value("embed_scale", c.embed_scale);
  c.query_memory = j.value("query_memory", c.query_memory);
  return c;
}

// ---------------------------------------------------------------- layout

std::size_t SegmentSpec::size() const {
  std::size_t n = 1;
  for (std::size_t s : shape) n *= s;
  return n;
}

Layout::Layout(std::vector<SegmentSpec> segments) : segments_(std::move(segments)) {
  for (auto& s : segments_) {
    s.offset = total_;
    total_ += s.size();
  }
}

const SegmentSpec& Layout::segment(std::string_view name) const {
  for (const auto& s : segments_) {
    if (s.name == name) return s;
  }
  throw std::out_of_range("no parameter segment named '" + std::string(name) + "'");
}

nlohmann::json Layout::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& s : segments_) arr.push_back({{"name", s.name}, {"shape", s.shape}, {"offset", s.offset}});
  return arr;
}

Layout Layout::from_json(const nlohmann::json& j) {
  std::vector<SegmentSpec> segs;
  for (const auto& js : j) {
    segs.push_back({js.at("name").get<std::string>(), js.at("shape").get<std::vector<std::size_t>>(), 0});
  }
  Layout layout(std::move(segs));
  for (std::size_t i = 0; i < layout.segments_.size(); ++i) {
    if (j[i].contains("offset") && j[i].at("offset").get<std::size_t>() != layout.segments_[i].offset) {
      throw std::runtime_error("layout descriptor has inconsistent offsets");
    }
  }
  return layout;
}

// ---------------------------------------------------------------- parameters

ParameterVector::ParameterVector(std::shared_ptr<const Layout> layout)
    : layout_(std::move(layout)), values_(layout_ ? layout_->total() : 0, 0.0) {}

std::span<double> ParameterVector::segment(std::string_view name) {
  const auto& s = layout_->segment(name);
  return std::span<double>(values_).subspan(s.offset, s.size());
}

std::span<const double> ParameterVector::segment(std::string_view name) const {
  const auto& s = layout_->segment(name);
  return std::span<const double>(values_).subspan(s.offset, s.size());
}

bool ParameterVector::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double x) { return std::isfinite(x); });
}

bool ParameterVector::same_layout(const ParameterVector& other) const {
  if (!layout_ || !other.layout_) return layout_ == other.layout_;
  return layout_ == other.layout_ || *layout_ == *other.layout_;
}

ParameterVector& ParameterVector::operator+=(const ParameterVector& other) {
  add_scaled(other, 1.0);
  return *this;
}

ParameterVector& ParameterVector::operator*=(double s) {
  for (double& v : values_) v *= s;
  return *this;
}

void ParameterVector::add_scaled(const ParameterVector& other, double s) {
  if (!same_layout(other)) throw std::invalid_argument("parameter layouts differ");
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += s * other.values_[i];
}

bool ParameterVector::bit_identical(const ParameterVector& other) const {
  return same_layout(other) && values_.size() == other.values_.size() &&
         std::memcmp(values_.data(), other.values_.data(), values_.size() * sizeof(double)) == 0;
}

std::string to_string(SnapshotTag tag) { return tag == SnapshotTag::Reference ? "reference" : "old"; }

PolicySnapshot snapshot(const ParameterVector& params, SnapshotTag tag) { return PolicySnapshot(params, tag); }

PolicySnapshot snapshot(const PolicySnapshot& source) { return PolicySnapshot(source.parameters(), source.tag()); }

// ---------------------------------------------------------------- model

PolicyModel::PolicyModel(Vocabulary vocab, ModelConfig config) : vocab_(std::move(vocab)), config_(config) {
  config_.validate();
  const std::size_t V = vocab_.size(), d = config_.dim, Rq = config_.query_roles, R = config_.doc_roles;
  layout_ = std::make_shared<const Layout>(std::vector<SegmentSpec>{
      {"embed", {V, d}},
      {"match_alpha", {Rq, R}},
      {"match_w", {R, d}},
      {"match_T", {Rq, R, d, d}},
      {"read_gamma", {R}},
      {"out_O", {V, d}},
      {"out_H", {V, d}},
      {"out_class", {kTokenClassCount, V}},
      {"out_bias", {V}},
      {"out_gate", {kTokenClassCount}},
      {"rel_m", {V}},
      {"mem_M", {V, d}},
      {"mem_gate", {kTokenClassCount}},
  });
  off_.embed = layout_->segment("embed").offset;
  off_.alpha = layout_->segment("match_alpha").offset;
  off_.w = layout_->segment("match_w").offset;
  off_.T = layout_->segment("match_T").offset;
  off_.gamma = layout_->segment("read_gamma").offset;
  off_.out_O = layout_->segment("out_O").offset;
  off_.out_H = layout_->segment("out_H").offset;
  off_.out_class = layout_->segment("out_class").offset;
  off_.out_bias = layout_->segment("out_bias").offset;
  off_.gate = layout_->segment("out_gate").offset;
  off_.rel_m = layout_->segment("rel_m").offset;
  off_.mem = layout_->segment("mem_M").offset;
  off_.mem_gate = layout_->segment("mem_gate").offset;
}

ParameterVector PolicyModel::init_parameters(std::uint64_t seed) const {
  ParameterVector p(layout_);
  Rng rng(derive_seed(seed, "policy-init"));
  for (double& x : p.segment("embed")) x = config_.embed_scale * rng.normal();
  for (double& x : p.segment("read_gamma")) x = 1.0 / static_cast<double>(config_.doc_roles);
  for (double& x : p.segment("out_gate")) x = 1.0;
  for (double& x : p.segment("mem_gate")) x = config_.query_memory ? 1.0 : 0.0;
  return p;
}

void PolicyModel::check_inputs(std::span<const TokenId> prompt, std::span<const TokenId> response) const {
  if (prompt.size() + response.size() > config_.max_seq_len) {
    throw std::length_error("sequence of " + std::to_string(prompt.size() + response.size()) +
                            " tokens exceeds max_seq_len " + std::to_string(config_.max_seq_len));
  }
  for (auto seq : {prompt, response}) {
    for (TokenId t : seq) {
      if (!vocab_.contains(t)) throw std::out_of_range("token id " + std::to_string(t) + " out of vocabulary");
    }
  }
}

Encoding PolicyModel::encode(const ParameterVector& params, std::span<const TokenId> prompt) const {
  const std::size_t d = config_.dim, Rq = config_.query_roles, R = config_.doc_roles, V = vocab_.size();
  const double* p = params.values().data();
  const double* E = p + off_.embed;

  Encoding enc;
  enc.query_role_tokens.assign(Rq, {});
  std::size_t i = 0;
  if (!prompt.empty() && prompt[0] == vocab_.bos()) i = 1;
  std::size_t pos = 0;
  for (; i < prompt.size() && prompt[i] != vocab_.sep(); ++i, ++pos) {
    enc.query_role_tokens[std::min(pos, Rq - 1)].push_back(prompt[i]);
  }
  for (; i < prompt.size(); ++i) {
    if (prompt[i] == vocab_.sep()) {
      enc.doc_role_tokens.emplace_back(R);
      pos = 0;
      continue;
    }
    enc.doc_role_tokens.back()[std::min(pos, R - 1)].push_back(prompt[i]);
    ++pos;
  }
  const std::size_t K = enc.doc_role_tokens.size();
  enc.n_docs = K;

  auto mean_embed = [&](const std::vector<TokenId>& toks, double* out) {
    if (toks.empty()) return;
    const double inv = 1.0 / static_cast<double>(toks.size());
    for (TokenId t : toks) axpy(inv, E + t * d, out, d);
  };

  enc.psi.assign(Rq * d, 0.0);
  for (std::size_t a = 0; a < Rq; ++a) mean_embed(enc.query_role_tokens[a], &enc.psi[a * d]);
  enc.phi.assign(K * R * d, 0.0);
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t b = 0; b < R; ++b) mean_embed(enc.doc_role_tokens[k][b], &enc.phi[(k * R + b) * d]);
  }

  // chi_b = w_b + sum_a (alpha_ab psi_a + T_ab^T psi_a) / d
  const double inv_d = 1.0 / static_cast<double>(d);
  enc.chi.assign(R * d, 0.0);
  for (std::size_t b = 0; b < R; ++b) {
    double* chi = &enc.chi[b * d];
    axpy(1.0, p + off_.w + b * d, chi, d);
    for (std::size_t a = 0; a < Rq; ++a) {
      const double* psi = &enc.psi[a * d];
      axpy(p[off_.alpha + a * R + b] * inv_d, psi, chi, d);
      const double* T = p + off_.T + (a * R + b) * d * d;
      for (std::size_t m = 0; m < d; ++m) {
        if (psi[m] != 0.0) axpy(psi[m] * inv_d, T + m * d, chi, d);
      }
    }
  }

  enc.scores.assign(K, 0.0);
  enc.attn.assign(K, 0.0);
  enc.vdoc.assign(K * d, 0.0);
  enc.readout.assign(d, 0.0);
  const double* gamma = p + off_.gamma;
  for (std::size_t k = 0; k < K; ++k) {
    double s = 0.0;
    for (std::size_t b = 0; b < R; ++b) {
      const double* phi = &enc.phi[(k * R + b) * d];
      s += dot(&enc.chi[b * d], phi, d);
      axpy(gamma[b], phi, &enc.vdoc[k * d], d);
    }
    enc.scores[k] = s;
  }
  if (K > 0) {
      const double lse = log_sum_exp(enc.scores.data(), K);
      for (std::size_t k = 0; k < K; ++k) {
        enc.attn[k] = std::exp(enc.scores[k] - lse);
        axpy(enc.attn[k], &enc.vdoc[k * d], enc.readout.data(), d);
      }
    }
    enc.out_readout.assign(V, 0.0);
    const double* O = p + off_.out_O;
    for (std::size_t v = 0; v < V; ++v) enc.out_readout[v] = dot(O + v * d, enc.readout.data(), d);

    // Query memory feature u = psi_0 * psi_1 (elementwise), or psi_0 alone.
    enc.mem_feature.assign(enc.psi.begin(), enc.psi.begin() + static_cast<std::ptrdiff_t>(d));
    if (Rq > 1) {
      for (std::size_t m = 0; m < d; ++m) enc.mem_feature[m] *= enc.psi[d + m];
    }
    enc.out_memory.assign(V, 0.0);
    const double* M = p + off_.mem;
    for (std::size_t v = 0; v < V; ++v) enc.out_memory[v] = dot(M + v * d, enc.mem_feature.data(), d);
    return enc;
  }

  void PolicyModel::position_logits(std::span<const double> params, const Encoding& enc, TokenId prev,
                                    double* z) const {
    const std::size_t d = config_.dim, V = vocab_.size();
    const double* p = params.data();
    const std::size_t c = class_index(vocab_.cls(prev));
    const double* E = p + off_.embed + prev * d;
    const double* H = p + off_.out_H;
    const double* crow = p + off_.out_class + c * V;
    const double* bias = p + off_.out_bias;
    const double gate = p[off_.gate + c];
    const double mgate = p[off_.mem_gate + c];
    for (std::size_t v = 0; v < V; ++v) {
      z[v] = bias[v] + crow[v] + dot(H + v * d, E, d) + gate * enc.out_readout[v] + mgate * enc.out_memory[v];
    }
    if (auto j = vocab_.doc_index(prev); j && *j < enc.n_docs) {
      const double s = enc.scores[*j];
      const double* m = p + off_.rel_m;
      for (std::size_t v = 0; v < V; ++v) z[v] += s * m[v];
    }
  }

  Forward PolicyModel::forward(const ParameterVector& params, std::span<const TokenId> prompt,
                               std::span<const TokenId> response) const {
    check_inputs(prompt, response);
    const std::size_t V = vocab_.size(), T = response.size();
    Forward f;
    f.enc = encode(params, prompt);
    f.prev.resize(T);
    f.logprobs.resize(T * V);
    f.token_logprobs.resize(T);
    for (std::size_t t = 0; t < T; ++t) {
      const TokenId prev = t == 0 ? (prompt.empty() ? vocab_.bos() : prompt.back()) : response[t - 1];
      f.prev[t] = prev;
      double* z = &f.logprobs[t * V];
      position_logits(params.values(), f.enc, prev, z);
      const double lse = log_sum_exp(z, V);
      for (std::size_t v = 0; v < V; ++v) z[v] -= lse;
      f.token_logprobs[t] = z[response[t]];
    }
    return f;
  }

  void PolicyModel::backward(const ParameterVector& params, const Forward& fwd, std::span<const double> dlogits,
                             ParameterVector& grad) const {
    const std::size_t d = config_.dim, Rq = config_.query_roles, R = config_.doc_roles, V = vocab_.size();
    const std::size_t T = fwd.positions();
    if (dlogits.size() != T * V) throw std::invalid_argument("backward: dlogits has wrong size");
    if (!grad.same_layout(params)) throw std::invalid_argument("backward: gradient layout mismatch");
    const double* p = params.values().data();
    double* g = grad.values().data();
    const Encoding& enc = fwd.enc;
    const std::size_t K = enc.n_docs;

    std::vector<double> d_out_readout(V, 0.0), d_out_memory(V, 0.0);
    std::vector<double> dscores(K, 0.0);
    std::vector<double> dE_prev(d);

    for (std::size_t t = 0; t < T; ++t) {
      const double* dz = &dlogits[t * V];
      const TokenId prev = fwd.prev[t];
      const std::size_t c = class_index(vocab_.cls(prev));
      const double* E = p + off_.embed + prev * d;
      const double* H = p + off_.out_H;
      const double gate = p[off_.gate + c];
      const double mgate = p[off_.mem_gate + c];
      std::fill(dE_prev.begin(), dE_prev.end(), 0.0);
      double dgate = 0.0, dmgate = 0.0;
      for (std::size_t v = 0; v < V; ++v) {
        const double dv = dz[v];
        if (dv == 0.0) continue;
        g[off_.out_bias + v] += dv;
        g[off_.out_class + c * V + v] += dv;
        axpy(dv, E, g + off_.out_H + v * d, d);
        axpy(dv, H + v * d, dE_prev.data(), d);
        dgate += dv * enc.out_readout[v];
        d_out_readout[v] += gate * dv;
        dmgate += dv * enc.out_memory[v];
        d_out_memory[v] += mgate * dv;
      }
      g[off_.gate + c] += dgate;
      g[off_.mem_gate + c] += dmgate;
      axpy(1.0, dE_prev.data(), g + off_.embed + prev * d, d);
      if (auto j = vocab_.doc_index(prev); j && *j < K) {
        const double s = enc.scores[*j];
        const double* m = p + off_.rel_m;
        axpy(s, dz, g + off_.rel_m, V);
        dscores[*j] += dot(dz, m, V);
      }
    }

    // out_readout = O r
    std::vector<double> dr(d, 0.0);
    const double* O = p + off_.out_O;
    for (std::size_t v = 0; v < V; ++v) {
      if (d_out_readout[v] == 0.0) continue;
      axpy(d_out_readout[v], enc.readout.data(), g + off_.out_O + v * d, d);
      axpy(d_out_readout[v], O + v * d, dr.data(), d);
    }
    // out_memory = M u
    std::vector<double> du(d, 0.0), dpsi(Rq * d, 0.0);
    const double* M = p + off_.mem;
    for (std::size_t v = 0; v < V; ++v) {
      if (d_out_memory[v] == 0.0) continue;
      axpy(d_out_memory[v], enc.mem_feature.data(), g + off_.mem + v * d, d);
      axpy(d_out_memory[v], M + v * d, du.data(), d);
    }
    if (Rq > 1) {
      for (std::size_t m = 0; m < d; ++m) {
        dpsi[m] += du[m] * enc.psi[d + m];
        dpsi[d + m] += du[m] * enc.psi[m];
      }
    } else {
      axpy(1.0, du.data(), dpsi.data(), d);
    }

    if (K > 0) {
    // r = sum_k a_k vdoc_k, vdoc_k = sum_b gamma_b phi_kb
    const double* gamma = p + off_.gamma;
    std::vector<double> dphi(K * R * d, 0.0);
    std::vector<double> da(K, 0.0);
    for (std::size_t k = 0; k < K; ++k) {
      da[k] = dot(dr.data(), &enc.vdoc[k * d], d);
      for (std::size_t b = 0; b < R; ++b) {
        const double* phi = &enc.phi[(k * R + b) * d];
        g[off_.gamma + b] += enc.attn[k] * dot(dr.data(), phi, d);
        axpy(enc.attn[k] * gamma[b], dr.data(), &dphi[(k * R + b) * d], d);
      }
    }
    double da_mean = 0.0;
    for (std::size_t k = 0; k < K; ++k) da_mean += enc.attn[k] * da[k];
    for (std::size_t k = 0; k < K; ++k) dscores[k] += enc.attn[k] * (da[k] - da_mean);

    // s_k = sum_b <chi_b, phi_kb>
    std::vector<double> dchi(R * d, 0.0);
    for (std::size_t k = 0; k < K; ++k) {
      if (dscores[k] == 0.0) continue;
      for (std::size_t b = 0; b < R; ++b) {
        axpy(dscores[k], &enc.phi[(k * R + b) * d], &dchi[b * d], d);
        axpy(dscores[k], &enc.chi[b * d], &dphi[(k * R + b) * d], d);
      }
    }

    // chi_b = w_b + sum_a (alpha_ab psi_a + T_ab^T psi_a) / d
    const double inv_d = 1.0 / static_cast<double>(d);
    for (std::size_t b = 0; b < R; ++b) {
      const double* dc = &dchi[b * d];
      axpy(1.0, dc, g + off_.w + b * d, d);
      for (std::size_t a = 0; a < Rq; ++a) {
        const double* psi = &enc.psi[a * d];
        const double alpha = p[off_.alpha + a * R + b];
        g[off_.alpha + a * R + b] += dot(psi, dc, d) * inv_d;
        axpy(alpha * inv_d, dc, &dpsi[a * d], d);
        const double* Tm = p + off_.T + (a * R + b) * d * d;
        double* gT = g + off_.T + (a * R + b) * d * d;
        for (std::size_t m = 0; m < d; ++m) {
          if (psi[m] != 0.0) axpy(psi[m] * inv_d, dc, gT + m * d, d);
          dpsi[a * d + m] += dot(Tm + m * d, dc, d) * inv_d;
        }
      }
    }

    // Document role means back to embedding rows.
    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t b = 0; b < R; ++b) {
        const auto& toks = enc.doc_role_tokens[k][b];
        if (toks.empty()) continue;
        const double inv = 1.0 / static_cast<double>(toks.size());
        for (TokenId t : toks) axpy(inv, &dphi[(k * R + b) * d], g + off_.embed + t * d, d);
      }
    }
  }

  for (std::size_t a = 0; a < Rq; ++a) {
    const auto& toks = enc.query_role_tokens[a];
    if (toks.empty()) continue;
    const double inv = 1.0 / static_cast<double>(toks.size());
    for (TokenId t : toks) axpy(inv, &dpsi[a * d], g + off_.embed + t * d, d);
  }
}

std::vector<double> PolicyModel::token_logprobs(const ParameterVector& params, std::span<const TokenId> prompt,
                                                std::span<const TokenId> response) const {
  return forward(params, prompt, response).token_logprobs;
}

double PolicyModel::sequence_logprob(const ParameterVector& params, std::span<const TokenId> prompt,
                                     std::span<const TokenId> response) const {
  if (response.empty() || response.back() != vocab_.eos()) {
    throw std::invalid_argument("sequence_logprob: response must end with EOS");
  }
  double total = 0.0;
  for (double lp : token_logprobs(params, prompt, response)) total += lp;
  return total;
}

double PolicyModel::conditional_logprob(const ParameterVector& params, std::span<const TokenId> prompt,
                                        std::span<const TokenId> prefix,
                                        std::span<const TokenId> continuation) const {
  TokenSeq full(prefix.begin(), prefix.end());
  full.insert(full.end(), continuation.begin(), continuation.end());
  const auto lps = token_logprobs(params, prompt, full);
  double total = 0.0;
  for (std::size_t t = prefix.size(); t < lps.size(); ++t) total += lps[t];
  return total;
}

double PolicyModel::accumulate_logprob_gradient(const ParameterVector& params, std::span<const TokenId> prompt,
                                                std::span<const TokenId> response, double scale,
                                                ParameterVector& grad) const {
  const Forward f = forward(params, prompt, response);
  const std::size_t V = vocab_.size(), T = response.size();
  std::vector<double> dz(T * V);
  double total = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    total += f.token_logprobs[t];
    for (std::size_t v = 0; v < V; ++v) dz[t * V + v] = -scale * std::exp(f.logprobs[t * V + v]);
    dz[t * V + response[t]] += scale;
  }
  backward(params, f, dz, grad);
  return total;
}

ParameterVector PolicyModel::logprob_gradient(const ParameterVector& params, std::span<const TokenId> prompt,
                                              std::span<const TokenId> response) const {
  ParameterVector grad = params.zeros_like();
  accumulate_logprob_gradient(params, prompt, response, 1.0, grad);
  return grad;
}

SampleOutput PolicyModel::sample(const ParameterVector& params, std::span<const TokenId> prompt, double temperature,
                                 std::size_t max_new, std::uint64_t seed, const DecodeConstraint* constraint) const {
  if (!(temperature > 0.0)) throw std::invalid_argument("sample: temperature must be positive");
  if (max_new == 0) throw std::invalid_argument("sample: max_new must be >= 1");
  check_inputs(prompt, {});
  const std::size_t V = vocab_.size();
  const std::size_t budget = std::min(max_new, config_.max_seq_len - std::min(config_.max_seq_len, prompt.size()));
  const Encoding enc = encode(params, prompt);
  Rng rng(seed);
  SampleOutput out;
  std::vector<double> z(V), weights(V);
  std::vector<std::uint8_t> allowed(V, 1);
  for (std::size_t t = 0; t < budget; ++t) {
    const TokenId prev = t == 0 ? (prompt.empty() ? vocab_.bos() : prompt.back()) : out.tokens.back();
    position_logits(params.values(), enc, prev, z.data());
    const double lse = log_sum_exp(z.data(), V);
    if (constraint) {
      std::fill(allowed.begin(), allowed.end(), 0);
      (*constraint)(out.tokens, allowed);
    }
    TokenId choice = 0;
    bool any = false;
    if (temperature <= kGreedyTemperature) {
      double best = -std::numeric_limits<double>::infinity();
      for (std::size_t v = 0; v < V; ++v) {
        if (allowed[v] && (!any || z[v] > best)) {
          best = z[v];
          choice = static_cast<TokenId>(v);
          any = true;
        }
      }
    } else {
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t v = 0; v < V; ++v) {
        if (allowed[v]) m = std::max(m, z[v] / temperature);
      }
      double total = 0.0;
      for (std::size_t v = 0; v < V; ++v) {
        weights[v] = allowed[v] ? std::exp(z[v] / temperature - m) : 0.0;
        total += weights[v];
      }
      const double u = rng.uniform() * total;
      double acc = 0.0;
      for (std::size_t v = 0; v < V; ++v) {
        if (!allowed[v]) continue;
        acc += weights[v];
        choice = static_cast<TokenId>(v);
        any = true;
        if (u < acc) break;
      }
    }
    if (!any) throw std::logic_error("sample: decoding constraint allows no token");
    out.tokens.push_back(choice);
    out.token_logprobs.push_back(z[choice] - lse);
    out.total_logprob += z[choice] - lse;
    if (choice == vocab_.eos()) return out;
  }
  out.truncated = true;
  return out;
}

// ---------------------------------------------------------------- checkpoints

void write_checkpoint(std::ostream& out, const PolicyModel& model, const ParameterVector& params) {
  if (!params.same_layout(ParameterVector(model.layout()))) {
    throw std::invalid_argument("write_checkpoint: parameters do not match the model layout");
  }
  const nlohmann::json header = {{"format_version", kCheckpointVersion},
                                 {"vocabulary", model.vocab().to_json()},
                                 {"model_config", model.config().to_json()},
                                 {"layout", model.layout()->to_json()},
                                 {"count", params.size()}};
  out << kMagic << ' ' << kCheckpointVersion << '\n' << header.dump() << '\n';
  std::vector<char> buf(params.size() * 8);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto bits = std::bit_cast<std::uint64_t>(params[i]);
    for (std::size_t k = 0; k < 8; ++k) buf[i * 8 + k] = static_cast<char>((bits >> (8 * k)) & 0xff);
  }
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw std::runtime_error("write_checkpoint: stream write failed");
}

Checkpoint read_checkpoint(std::istream& in) {
  std::string magic_line, header_line;
  if (!std::getline(in, magic_line) || magic_line.rfind(kMagic, 0) != 0) {
    throw std::runtime_error("read_checkpoint: bad magic");
  }
  const auto version = static_cast<std::uint32_t>(std::stoul(magic_line.substr(std::strlen(kMagic) + 1)));
  if (version != kCheckpointVersion) throw std::runtime_error("read_checkpoint: unsupported format version");
  if (!std::getline(in, header_line)) throw std::runtime_error("read_checkpoint: missing header");
  const auto header = nlohmann::json::parse(header_line);
  PolicyModel model(Vocabulary::from_json(header.at("vocabulary")),
                    ModelConfig::from_json(header.at("model_config")));
  if (!(Layout::from_json(header.at("layout")) == *model.layout())) {
    throw std::runtime_error("read_checkpoint: layout descriptor does not match the model");
  }
  ParameterVector params(model.layout());
  const auto count = header.at("count").get<std::size_t>();
  if (count != params.size()) throw std::runtime_error("read_checkpoint: parameter count mismatch");
  std::vector<char> buf(count * 8);
  in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (in.gcount() != static_cast<std::streamsize>(buf.size())) throw std::runtime_error("read_checkpoint: truncated");
  for (std::size_t i = 0; i < count; ++i) {
    std::uint64_t bits = 0;
    for (std::size_t k = 0; k < 8; ++k) {
      bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[i * 8 + k])) << (8 * k);
    }
    params[i] = std::bit_cast<double>(bits);
  }
  return {std::move(model), std::move(params)};
}

void save_checkpoint(const std::string& path, const PolicyModel& model, const ParameterVector& params) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  write_checkpoint(out, model, params);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint '" + path + "'");
  return read_checkpoint(in);
}

}  // namespace ctxalign::policy
