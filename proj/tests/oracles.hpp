#pragma once

// Independent brute-force reference implementations used only by tests.
// Plain nested loops over std::vector<std::vector<double>>, no autodiff, no
// shared code with the library's forward paths.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "vtr/layers.hpp"
#include "vtr/tensor.hpp"

namespace oracle {

using Mat = std::vector<std::vector<double>>;

inline Mat from_tensor(const vtr::Tensor& t) {
    Mat m(t.rows(), std::vector<double>(t.cols()));
    for (std::size_t i = 0; i < t.rows(); ++i)
        for (std::size_t j = 0; j < t.cols(); ++j) m[i][j] = t.at(i, j);
    return m;
}

inline vtr::Tensor to_tensor(const Mat& m) {
    std::vector<double> d;
    for (const auto& row : m) d.insert(d.end(), row.begin(), row.end());
    return vtr::Tensor({m.size(), m[0].size()}, std::move(d));
}

inline Mat matmul(const Mat& a, const Mat& b) {
    Mat c(a.size(), std::vector<double>(b[0].size(), 0.0));
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < b[0].size(); ++j)
            for (std::size_t k = 0; k < b.size(); ++k) c[i][j] += a[i][k] * b[k][j];
    return c;
}

inline Mat transpose(const Mat& a) {
    Mat c(a[0].size(), std::vector<double>(a.size()));
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < a[0].size(); ++j) c[j][i] = a[i][j];
    return c;
}

inline std::vector<double> softmax(const std::vector<double>& x) {
    const double mx = *std::max_element(x.begin(), x.end());
    std::vector<double> out(x.size());
    double z = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) z += out[i] = std::exp(x[i] - mx);
    for (auto& v : out) v /= z;
    return out;
}

inline double max_abs_diff(const Mat& a, const Mat& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < a[0].size(); ++j)
            m = std::max(m, std::abs(a[i][j] - b[i][j]));
    return m;
}

inline double max_abs_diff(const vtr::Tensor& a, const Mat& b) {
    return max_abs_diff(from_tensor(a), b);
}

inline double max_abs_diff(const vtr::Tensor& a, const vtr::Tensor& b) {
    return max_abs_diff(from_tensor(a), from_tensor(b));
}

// y = x W^T + b with an optional low-rank delta, reproducing LoraLinear.
inline Mat lora_linear(const Mat& x, const vtr::LoraLinear& p, bool with_lora = true) {
    Mat w = from_tensor(p.w);
    Mat y = matmul(x, transpose(w));
    if (with_lora) {
        Mat delta = matmul(matmul(x, transpose(from_tensor(p.down))), transpose(from_tensor(p.up)));
        for (std::size_t i = 0; i < y.size(); ++i)
            for (std::size_t j = 0; j < y[0].size(); ++j) y[i][j] += p.scaling * delta[i][j];
    }
    for (std::size_t i = 0; i < y.size(); ++i)
        for (std::size_t j = 0; j < y[0].size(); ++j) y[i][j] += p.b.at(0, j);
    return y;
}

inline Mat linear(const Mat& x, const vtr::LinearParams& p) {
    Mat y = matmul(x, transpose(from_tensor(p.w)));
    for (std::size_t i = 0; i < y.size(); ++i)
        for (std::size_t j = 0; j < y[0].size(); ++j) y[i][j] += p.b.at(0, j);
    return y;
}

inline Mat mha(const Mat& q_in, const Mat& kv_in, const vtr::TransformerLayer& layer, bool causal,
               bool with_lora = true) {
    const std::size_t d = q_in[0].size();
    const std::size_t dh = d / layer.heads;
    Mat q = lora_linear(q_in, layer.q_proj, with_lora);
    Mat k = linear(kv_in, layer.k_proj);
    Mat v = lora_linear(kv_in, layer.v_proj, with_lora);
    Mat out(q.size(), std::vector<double>(d, 0.0));
    for (std::size_t h = 0; h < layer.heads; ++h) {
        for (std::size_t i = 0; i < q.size(); ++i) {
            std::vector<double> scores(k.size());
            for (std::size_t j = 0; j < k.size(); ++j) {
                double acc = 0.0;
                for (std::size_t c = 0; c < dh; ++c)
                    acc += q[i][h * dh + c] * k[j][h * dh + c];
                scores[j] = acc / std::sqrt(double(dh));
                if (causal && j > i) scores[j] = -1e30;
            }
            auto w = softmax(scores);
            for (std::size_t j = 0; j < k.size(); ++j)
                for (std::size_t c = 0; c < dh; ++c)
                    out[i][h * dh + c] += w[j] * v[j][h * dh + c];
        }
    }
    return linear(out, layer.o_proj);
}

inline Mat adapter(const Mat& x, const vtr::FusionAdapter& a) {
    Mat h = matmul(x, from_tensor(a.down));
    for (auto& row : h)
        for (auto& v : row) v = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
    return matmul(h, from_tensor(a.up));
}

// Reference for the fused two-branch attention stage over normalized inputs.
inline std::vector<Mat> attention_stage(const vtr::TransformerLayer& layer,
                                        const std::vector<Mat>& pre,
                                        const std::vector<std::size_t>& summary, bool causal,
                                        bool with_lora = true) {
    const std::size_t f = pre.size();
    std::vector<Mat> out(f);
    if (layer.scheme == vtr::AttnScheme::ImageLevel) {
        for (std::size_t i = 0; i < f; ++i) out[i] = mha(pre[i], pre[i], layer, causal, with_lora);
        return out;
    }
    if (layer.scheme == vtr::AttnScheme::VideoLevel) {
        Mat joint;
        for (const auto& s : pre) joint.insert(joint.end(), s.begin(), s.end());
        Mat y = mha(joint, joint, layer, causal && f == 1, with_lora);
        std::size_t off = 0;
        for (std::size_t i = 0; i < f; ++i) {
            out[i] = Mat(y.begin() + off, y.begin() + off + pre[i].size());
            off += pre[i].size();
        }
        return out;
    }
    // fused schemes
    std::vector<Mat> branch1(f);
    for (std::size_t i = 0; i < f; ++i) branch1[i] = mha(pre[i], pre[i], layer, causal, with_lora);
    Mat queries, all;
    for (std::size_t i = 0; i < f; ++i) queries.push_back(pre[i][summary[i]]);
    for (const auto& s : pre) all.insert(all.end(), s.begin(), s.end());
    Mat c2 = mha(queries, all, layer, false, with_lora);
    for (std::size_t i = 0; i < f; ++i) {
        out[i] = branch1[i];
        Mat c1{branch1[i][summary[i]]};
        if (layer.scheme == vtr::AttnScheme::IVFusion) {
            Mat ad = adapter(c1, *layer.adapter);
            for (std::size_t j = 0; j < c1[0].size(); ++j)
                out[i][summary[i]][j] = c2[0 + i][j] + ad[0][j];
        } else {
            for (std::size_t j = 0; j < c1[0].size(); ++j)
                out[i][summary[i]][j] = 0.5 * (c1[0][j] + c2[i][j]);
        }
    }
    return out;
}

inline vtr::Tensor random_tensor(std::mt19937_64& rng, vtr::Shape shape, double stddev = 1.0,
                                 bool requires_grad = false) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<double> d(vtr::numel(shape));
    for (auto& v : d) v = dist(rng);
    return vtr::Tensor(std::move(shape), std::move(d), requires_grad);
}

inline vtr::Tensor random_unit_rows(std::mt19937_64& rng, std::size_t m, std::size_t n) {
    vtr::Tensor t = random_tensor(rng, {m, n});
    auto& d = t.mutable_data();
    for (std::size_t i = 0; i < m; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += d[i * n + j] * d[i * n + j];
        s = std::sqrt(s);
        for (std::size_t j = 0; j < n; ++j) d[i * n + j] /= s;
    }
    return t;
}

}  // namespace oracle
