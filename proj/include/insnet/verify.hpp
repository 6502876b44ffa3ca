#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "insnet/model.hpp"
#include "insnet/tensor.hpp"

// Independent reference paths for equivalence checks. Everything here is
// plain double-loop arithmetic over raw vectors: no Tensor ops, no tape, no
// shared helpers with the model code. Parameters are read by name so the
// reference consumes the exact same numbers as the model under test.

namespace insnet {
namespace refimpl {

using Mat = std::vector<std::vector<double>>;

// offset_fn(i, j) must return the signed offset for valid cells j <= i.
using OffsetFn = std::function<int64_t(int64_t, int64_t)>;

// True-identity insertion: token j sits j - i away from token i.
inline OffsetFn identity_offsets() {
    return [](int64_t i, int64_t j) { return j - i; };
}

// Generation-form left-to-right order (BOS, EOS, then 1,2,...): closed form
// of the compressed offsets, derived by simulating the insertions by hand.
inline OffsetFn genform_l2r_offsets() {
    return [](int64_t i, int64_t j) -> int64_t {
        if (i <= 1 || j >= 2) return j == 0 && i == 1 ? -1 : (i == j ? 0 : j - i);
        return j == 0 ? -(i - 1) : 1;  // col 0 is BOS, col 1 is EOS
    };
}

inline std::vector<double> ref_sinusoid(int64_t offset, int64_t d) {
    std::vector<double> e(static_cast<size_t>(d));
    for (int64_t k = 0; 2 * k < d; ++k) {
        const double x = static_cast<double>(offset) *
                         std::pow(10000.0, -2.0 * static_cast<double>(k) /
                                               static_cast<double>(d));
        e[2 * k] = std::sin(x);
        e[2 * k + 1] = std::cos(x);
    }
    return e;
}

inline Mat ref_matmul(const Mat& a, const std::vector<double>& flat, int64_t rows,
                      int64_t cols) {
    Mat out(a.size(), std::vector<double>(static_cast<size_t>(cols), 0.0));
    for (size_t i = 0; i < a.size(); ++i)
        for (int64_t l = 0; l < rows; ++l) {
            const double ail = a[i][static_cast<size_t>(l)];
            for (int64_t j = 0; j < cols; ++j)
                out[i][static_cast<size_t>(j)] += ail * flat[l * cols + j];
        }
    return out;
}

inline void ref_layer_norm(std::vector<double>& row, const std::vector<double>& gain,
                           const std::vector<double>& bias, double eps) {
    const size_t d = row.size();
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (size_t k = 0; k < d; ++k) row[k] = (row[k] - mean) * inv * gain[k] + bias[k];
}

// Relative-position causal encoder over the first t steps, written from
// scratch. Must agree with InsNetModel::encode given the same offsets.
inline Mat ref_encode(const ParamStore<double>& params, const ModelConfig& cfg,
                      const std::vector<int64_t>& step_ids, const OffsetFn& offset_of,
                      int64_t t) {
    const int64_t d = cfg.d_model;
    const int64_t dh = cfg.d_head();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const auto& embed = params.at("embed.tokens").val();
    Mat h(static_cast<size_t>(t), std::vector<double>(static_cast<size_t>(d)));
    for (int64_t i = 0; i < t; ++i)
        for (int64_t k = 0; k < d; ++k) h[i][k] = embed[step_ids[i] * d + k];

    for (int64_t l = 0; l < cfg.n_layers; ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        const auto q = ref_matmul(h, params.at(p + "attn.W_q").val(), d, d);
        const auto k = ref_matmul(h, params.at(p + "attn.W_kE").val(), d, d);
        const auto v = ref_matmul(h, params.at(p + "attn.W_v").val(), d, d);
        const auto& wkr = params.at(p + "attn.W_kR").val();
        const auto& u = params.at(p + "attn.u").val();
        const auto& vv = params.at(p + "attn.v").val();

        Mat attn(static_cast<size_t>(t), std::vector<double>(static_cast<size_t>(d), 0.0));
        for (int64_t i = 0; i < t; ++i) {
            // relative key rows for this query row
            Mat prow(static_cast<size_t>(i + 1));
            for (int64_t j = 0; j <= i; ++j) {
                const auto r = ref_sinusoid(offset_of(i, j), d);
                prow[j].assign(static_cast<size_t>(d), 0.0);
                for (int64_t a = 0; a < d; ++a)
                    for (int64_t b = 0; b < d; ++b) prow[j][b] += r[a] * wkr[a * d + b];
            }
            for (int64_t hd = 0; hd < cfg.n_heads; ++hd) {
                const int64_t base = hd * dh;
                std::vector<double> score(static_cast<size_t>(i + 1));
                double mx = -1e300;
                for (int64_t j = 0; j <= i; ++j) {
                    double s = 0.0;
                    for (int64_t a = base; a < base + dh; ++a) {
                        s += (q[i][a] + u[a]) * k[j][a];
                        s += (q[i][a] + vv[a]) * prow[j][a];
                    }
                    score[j] = s * scale;
                    mx = std::max(mx, score[j]);
                }
                double z = 0.0;
                for (int64_t j = 0; j <= i; ++j) {
                    score[j] = std::exp(score[j] - mx);
                    z += score[j];
                }
                for (int64_t j = 0; j <= i; ++j) {
                    const double w = score[j] / z;
                    for (int64_t a = base; a < base + dh; ++a) attn[i][a] += w * v[j][a];
                }
            }
        }
        const auto& g1 = params.at(p + "ln1.gain").val();
        const auto& b1 = params.at(p + "ln1.bias").val();
        for (int64_t i = 0; i < t; ++i) {
            for (int64_t a = 0; a < d; ++a) h[i][a] += attn[i][a];
            ref_layer_norm(h[i], g1, b1, 1e-5);
        }
        const auto& w1 = params.at(p + "ffn.w1").val();
        const auto& fb1 = params.at(p + "ffn.b1").val();
        const auto& w2 = params.at(p + "ffn.w2").val();
        const auto& fb2 = params.at(p + "ffn.b2").val();
        const auto& g2 = params.at(p + "ln2.gain").val();
        const auto& b2 = params.at(p + "ln2.bias").val();
        for (int64_t i = 0; i < t; ++i) {
            std::vector<double> hid(static_cast<size_t>(cfg.d_ff), 0.0);
            for (int64_t a = 0; a < d; ++a)
                for (int64_t f = 0; f < cfg.d_ff; ++f)
                    hid[f] += h[i][a] * w1[a * cfg.d_ff + f];
            for (int64_t f = 0; f < cfg.d_ff; ++f) {
                const double x = hid[f] + fb1[f];
                hid[f] = 0.5 * x * (1.0 + std::erf(x * 0.70710678118654752440));
            }
            std::vector<double> outv(static_cast<size_t>(d), 0.0);
            for (int64_t f = 0; f < cfg.d_ff; ++f)
                for (int64_t a = 0; a < d; ++a) outv[a] += hid[f] * w2[f * d + a];
            for (int64_t a = 0; a < d; ++a) h[i][a] += outv[a] + fb2[a];
            ref_layer_norm(h[i], g2, b2, 1e-5);
        }
    }
    return h;
}

// can_attend(i, j): whether row i may look at column j. Input rows must
// already carry their position information (absolute embeddings).
inline Mat ref_standard_encode(const ParamStore<double>& params,
                               const ModelConfig& cfg, Mat h,
                               const std::function<bool(int64_t, int64_t)>& can_attend) {
    const int64_t t = static_cast<int64_t>(h.size());
    const int64_t d = cfg.d_model;
    const int64_t dh = cfg.d_head();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    for (int64_t l = 0; l < cfg.n_layers; ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        const auto q = ref_matmul(h, params.at(p + "attn.W_q").val(), d, d);
        const auto k = ref_matmul(h, params.at(p + "attn.W_k").val(), d, d);
        const auto v = ref_matmul(h, params.at(p + "attn.W_v").val(), d, d);
        Mat attn(static_cast<size_t>(t), std::vector<double>(static_cast<size_t>(d), 0.0));
        for (int64_t hd = 0; hd < cfg.n_heads; ++hd) {
            const int64_t base = hd * dh;
            for (int64_t i = 0; i < t; ++i) {
                std::vector<double> score(static_cast<size_t>(t),
                                          -std::numeric_limits<double>::infinity());
                double mx = -std::numeric_limits<double>::infinity();
                for (int64_t j = 0; j < t; ++j) {
                    if (!can_attend(i, j)) continue;
                    double s = 0.0;
                    for (int64_t a = base; a < base + dh; ++a) s += q[i][a] * k[j][a];
                    score[j] = s * scale;
                    mx = std::max(mx, score[j]);
                }
                double z = 0.0;
                for (int64_t j = 0; j < t; ++j) {
                    if (!can_attend(i, j)) continue;
                    score[j] = std::exp(score[j] - mx);
                    z += score[j];
                }
                for (int64_t j = 0; j < t; ++j) {
                    if (!can_attend(i, j)) continue;
                    const double w = score[j] / z;
                    for (int64_t a = base; a < base + dh; ++a) attn[i][a] += w * v[j][a];
                }
            }
        }
        const auto& g1 = params.at(p + "ln1.gain").val();
        const auto& b1 = params.at(p + "ln1.bias").val();
        for (int64_t i = 0; i < t; ++i) {
            for (int64_t a = 0; a < d; ++a) h[i][a] += attn[i][a];
            ref_layer_norm(h[i], g1, b1, 1e-5);
        }
        const auto& w1 = params.at(p + "ffn.w1").val();
        const auto& fb1 = params.at(p + "ffn.b1").val();
        const auto& w2 = params.at(p + "ffn.w2").val();
        const auto& fb2 = params.at(p + "ffn.b2").val();
        const auto& g2 = params.at(p + "ln2.gain").val();
        const auto& b2 = params.at(p + "ln2.bias").val();
        for (int64_t i = 0; i < t; ++i) {
            std::vector<double> hid(static_cast<size_t>(cfg.d_ff), 0.0);
            for (int64_t a = 0; a < d; ++a)
                for (int64_t f = 0; f < cfg.d_ff; ++f)
                    hid[f] += h[i][a] * w1[a * cfg.d_ff + f];
            for (int64_t f = 0; f < cfg.d_ff; ++f) {
                const double x = hid[f] + fb1[f];
                hid[f] = 0.5 * x * (1.0 + std::erf(x * 0.70710678118654752440));
            }
            std::vector<double> outv(static_cast<size_t>(d), 0.0);
            for (int64_t f = 0; f < cfg.d_ff; ++f)
                for (int64_t a = 0; a < d; ++a) outv[a] += hid[f] * w2[f * d + a];
            for (int64_t a = 0; a < d; ++a) h[i][a] += outv[a] + fb2[a];
            ref_layer_norm(h[i], g2, b2, 1e-5);
        }
    }
    return h;
}

struct RefTokenPrediction {
    double nll = 0.0;
    int64_t argmax_id = -1;
};

// Next-token predictions of the reference path under the generation-form
// left-to-right order: at step t the new token lands in the last interior
// slot, whose neighbors are the previous token (step t-1) and EOS (step 1).
inline std::vector<RefTokenPrediction> ref_l2r_token_predictions(
    const ParamStore<double>& params, const ModelConfig& cfg,
    const std::vector<int64_t>& tokens) {
    const int64_t n = static_cast<int64_t>(tokens.size());
    std::vector<int64_t> step_ids(static_cast<size_t>(n));
    step_ids[0] = tokens[0];
    step_ids[1] = tokens[n - 1];
    for (int64_t t = 2; t < n; ++t) step_ids[t] = tokens[t - 1];

    const int64_t d = cfg.d_model;
    const auto& w_slot = params.at("heads.slot.weight").val();
    const auto& b_slot = params.at("heads.slot.bias").val();
    const auto& w_tok = params.at("heads.token.weight").val();
    const auto& b_tok = params.at("heads.token.bias").val();

    std::vector<RefTokenPrediction> out;
    for (int64_t t = 2; t < n; ++t) {
        // prefix encode; prefix stability is NOT assumed here, recompute
        const auto e = ref_encode(params, cfg, step_ids, genform_l2r_offsets(), t);
        // left neighbor is BOS for the first insertion, else the newest token
        const auto& left = e[static_cast<size_t>(t == 2 ? 0 : t - 1)];
        const auto& right = e[1];
        const auto& enew = e[static_cast<size_t>(t - 1)];
        std::vector<double> slot(static_cast<size_t>(d));
        for (int64_t b = 0; b < d; ++b) {
            double s = b_slot[b];
            for (int64_t a = 0; a < d; ++a) {
                s += left[a] * w_slot[a * d + b];
                s += right[a] * w_slot[(d + a) * d + b];
                s += enew[a] * w_slot[(2 * d + a) * d + b];
            }
            slot[b] = s;
        }
        std::vector<double> logits(static_cast<size_t>(cfg.vocab_size));
        for (int64_t j = 0; j < cfg.vocab_size; ++j) {
            double s = b_tok[j];
            for (int64_t a = 0; a < d; ++a) s += slot[a] * w_tok[a * cfg.vocab_size + j];
            logits[j] = s;
        }
        double mx = logits[0];
        int64_t best = 0;
        for (int64_t j = 1; j < cfg.vocab_size; ++j)
            if (logits[j] > mx) {
                mx = logits[j];
                best = j;
            }
        double z = 0.0;
        for (double s : logits) z += std::exp(s - mx);
        RefTokenPrediction pred;
        pred.nll = -(logits[static_cast<size_t>(tokens[t - 1])] - mx - std::log(z));
        pred.argmax_id = best;
        out.push_back(pred);
    }
    return out;
}

}  // namespace refimpl
}  // namespace insnet
