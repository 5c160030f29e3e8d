#pragma once

// Ranking metrics over similarity matrices and dual-softmax re-ranking.

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "vtr/alignment.hpp"
#include "vtr/tensor.hpp"

namespace vtr {

enum class Direction { T2V, V2T };

inline std::string to_string(Direction d) { return d == Direction::T2V ? "t2v" : "v2t"; }

struct RetrievalMetrics {
    std::map<int, double> r_at;  // K -> percentage, K in {1,5,10}
    double mnr = 0.0;            // mean rank, 1-based
    double r_sum = 0.0;

    std::string report(const std::string& label) const {
        std::ostringstream os;
        os.setf(std::ios::fixed);
        os.precision(1);
        os << label << ".R@1=" << r_at.at(1) << "\n"
           << label << ".R@5=" << r_at.at(5) << "\n"
           << label << ".R@10=" << r_at.at(10) << "\n"
           << label << ".Rsum=" << r_sum << "\n"
           << label << ".MnR=" << mnr << "\n";
        return os.str();
    }
};

// Rank of the diagonal item per query under descending score; ties broken by
// lower index first.
inline std::vector<std::size_t> match_ranks(const SimilarityMatrix& sim, Direction dir) {
    if (!sim.square()) throw TensorError("rank_and_metrics: square matrix required");
    const std::size_t b = sim.n_text();
    std::vector<std::size_t> ranks(b);
    for (std::size_t q = 0; q < b; ++q) {
        const Scalar own = sim.values.at(q, q);
        std::size_t rank = 1;
        for (std::size_t j = 0; j < b; ++j) {
            if (j == q) continue;
            const Scalar s = dir == Direction::T2V ? sim.values.at(q, j) : sim.values.at(j, q);
            if (s > own || (s == own && j < q)) ++rank;
        }
        ranks[q] = rank;
    }
    return ranks;
}

inline RetrievalMetrics rank_and_metrics(const SimilarityMatrix& sim, Direction dir) {
    const auto ranks = match_ranks(sim, dir);
    const double b = static_cast<double>(ranks.size());
    RetrievalMetrics m;
    for (int k : {1, 5, 10}) {
        std::size_t hits = 0;
        for (auto r : ranks)
            if (r <= static_cast<std::size_t>(k)) ++hits;
        m.r_at[k] = 100.0 * double(hits) / b;
    }
    double acc = 0.0;
    for (auto r : ranks) acc += double(r);
    m.mnr = acc / b;
    m.r_sum = m.r_at[1] + m.r_at[5] + m.r_at[10];
    return m;
}

// Reweights each score by the softmax along the opposite axis before ranking.
// values'(i,j) = values(i,j) * softmax_i(values(.,j)/T) for t2v; the caller
// ranks v2t from the transposed form.
inline SimilarityMatrix dual_softmax_postprocess(const SimilarityMatrix& sim,
                                                 Scalar temperature) {
    if (!(temperature > 0.0)) throw TensorError("dual_softmax_postprocess: temperature > 0");
    Tensor col_softmax = transpose(softmax_rows(transpose(sim.values), temperature));
    return {mul(sim.values, col_softmax), sim.level};
}

}  // namespace vtr
