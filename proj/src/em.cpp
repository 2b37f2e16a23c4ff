#include "patchspn/em.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "patchspn/errors.hpp"
#include "patchspn/logspace.hpp"
#include "patchspn/parallel.hpp"

namespace patchspn {

EmAccumulators EmAccumulators::zeros(const Circuit& c) {
    EmAccumulators acc;
    acc.edge_counts.resize(c.nodes.size());
    for (std::size_t i = 0; i < c.nodes.size(); ++i) {
        if (c.nodes[i].kind == NodeKind::sum) {
            acc.edge_counts[i].assign(c.nodes[i].children.size(), 0.0);
        }
    }
    acc.leaf_sx.assign(c.nodes.size(), 0.0);
    acc.leaf_sxx.assign(c.nodes.size(), 0.0);
    acc.leaf_sr.assign(c.nodes.size(), 0.0);
    return acc;
}

void EmAccumulators::merge(const EmAccumulators& other) {
    for (std::size_t i = 0; i < edge_counts.size(); ++i) {
        for (std::size_t k = 0; k < edge_counts[i].size(); ++k) {
            edge_counts[i][k] += other.edge_counts[i][k];
        }
    }
    for (std::size_t i = 0; i < leaf_sx.size(); ++i) {
        leaf_sx[i] += other.leaf_sx[i];
        leaf_sxx[i] += other.leaf_sxx[i];
        leaf_sr[i] += other.leaf_sr[i];
    }
    n_samples += other.n_samples;
}

namespace {

// One sample's bottom-up values followed by the top-down posterior pass.
// resp[i] = d log p(z) / d log value(i), the posterior mass reaching node i.
void sample_pass(const Circuit& c, std::span<const double> z, std::vector<double>& logv,
                 std::vector<double>& resp, EmAccumulators& acc) {
    logv.assign(c.nodes.size(), 0.0);
    std::vector<double> terms;
    for (std::size_t i = 0; i < c.nodes.size(); ++i) {
        const CircuitNode& node = c.nodes[i];
        switch (node.kind) {
            case NodeKind::leaf:
                logv[i] = gaussian_log_pdf(z[node.var], node.mean, node.variance);
                break;
            case NodeKind::product: {
                double s = 0.0;
                for (const std::size_t ch : node.children) s += logv[ch];
                logv[i] = s;
                break;
            }
            case NodeKind::sum: {
                terms.resize(node.children.size());
                for (std::size_t k = 0; k < node.children.size(); ++k) {
                    terms[k] = node.log_weights[k] + logv[node.children[k]];
                }
                logv[i] = log_sum_exp(terms);
                break;
            }
        }
        if (std::isnan(logv[i])) {
            throw NumericalError("e_step: non-finite value at node " + std::to_string(i));
        }
    }

    resp.assign(c.nodes.size(), 0.0);
    std::vector<double> root_vals(c.roots.size());
    for (std::size_t i = 0; i < c.roots.size(); ++i) root_vals[i] = logv[c.roots[i]];
    const double lse = log_sum_exp(root_vals);
    if (!std::isfinite(lse)) {
        throw NumericalError("e_step: sample has zero density under every root");
    }
    for (std::size_t i = 0; i < c.roots.size(); ++i) {
        resp[c.roots[i]] += std::exp(root_vals[i] - lse);
    }

    for (std::size_t i = c.nodes.size(); i-- > 0;) {
        const CircuitNode& node = c.nodes[i];
        const double r = resp[i];
        if (r == 0.0 && node.kind != NodeKind::leaf) continue;
        switch (node.kind) {
            case NodeKind::sum: {
                for (std::size_t k = 0; k < node.children.size(); ++k) {
                    const std::size_t ch = node.children[k];
                    const double edge = logv[i] == kNegInf
                                            ? 0.0
                                            : r * std::exp(node.log_weights[k] + logv[ch] - logv[i]);
                    acc.edge_counts[i][k] += edge;
                    resp[ch] += edge;
                }
                break;
            }
            case NodeKind::product:
                for (const std::size_t ch : node.children) resp[ch] += r;
                break;
            case NodeKind::leaf: {
                const double x = z[node.var];
                acc.leaf_sr[i] += r;
                acc.leaf_sx[i] += r * x;
                acc.leaf_sxx[i] += r * x * x;
                break;
            }
        }
    }
    acc.n_samples += 1;
}

void check_batch(const Circuit& c, const Tensor& batch) {
    if (batch.rank() != 2 || batch.dim(1) != c.n_vars) {
        throw ShapeError("e_step: expected (n, " + std::to_string(c.n_vars) + "), got " +
                         Tensor::shape_str(batch.shape()));
    }
    if (batch.dim(0) == 0) throw ValueError("e_step: empty batch");
}

}  // namespace

std::vector<double> node_responsibilities(const Circuit& c, std::span<const double> z) {
    EmAccumulators acc = EmAccumulators::zeros(c);
    std::vector<double> logv, resp;
    sample_pass(c, z, logv, resp, acc);
    return resp;
}

EmAccumulators e_step(const Circuit& c, const Tensor& batch) {
    check_batch(c, batch);
    const std::size_t n = batch.dim(0);
    const std::size_t shards = std::max<std::size_t>(parallel_chunks(n), 1);
    std::vector<EmAccumulators> partial(shards, EmAccumulators::zeros(c));

    // Static sharding: shard boundaries depend only on n and the thread cap,
    // and partials are merged in shard order.
    const std::size_t base = n / shards, extra = n % shards;
    std::vector<std::pair<std::size_t, std::size_t>> ranges(shards);
    std::size_t begin = 0;
    for (std::size_t s = 0; s < shards; ++s) {
        const std::size_t len = base + (s < extra ? 1 : 0);
        ranges[s] = {begin, begin + len};
        begin += len;
    }
    parallel_for(shards, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t s = lo; s < hi; ++s) {
            std::vector<double> logv, resp;
            for (std::size_t r = ranges[s].first; r < ranges[s].second; ++r) {
                sample_pass(c, {batch.data() + r * c.n_vars, c.n_vars}, logv, resp, partial[s]);
            }
        }
    });

    EmAccumulators acc = std::move(partial[0]);
    for (std::size_t s = 1; s < shards; ++s) acc.merge(partial[s]);
    return acc;
}

void m_step(Circuit& c, const EmAccumulators& acc, double step_size) {
    if (acc.n_samples == 0) throw ValueError("m_step: accumulators hold no samples");
    if (!(step_size >= 0.0 && step_size <= 1.0)) throw ValueError("m_step: step_size must be in [0, 1]");
    constexpr double kLeafSmoothing = 1e-8;

    for (std::size_t i = 0; i < c.nodes.size(); ++i) {
        CircuitNode& node = c.nodes[i];
        if (node.kind == NodeKind::sum) {
            const auto& counts = acc.edge_counts[i];
            double total = 0.0;
            for (const double v : counts) total += v;
            if (total <= 0.0) continue;  // no responsibility collected: keep old weights
            double norm = 0.0;
            std::vector<double> blended(counts.size());
            for (std::size_t k = 0; k < counts.size(); ++k) {
                const double cand = counts[k] / total;
                blended[k] = (1.0 - step_size) * std::exp(node.log_weights[k]) + step_size * cand;
                norm += blended[k];
            }
            for (std::size_t k = 0; k < counts.size(); ++k) {
                node.log_weights[k] = std::log(blended[k] / norm);
            }
        } else if (node.kind == NodeKind::leaf) {
            const double sr = acc.leaf_sr[i];
            if (sr <= 0.0) continue;
            const double denom = sr + kLeafSmoothing;
            const double cand_mean = acc.leaf_sx[i] / denom;
            double cand_var = acc.leaf_sxx[i] / denom - cand_mean * cand_mean;
            cand_var = std::max(cand_var, Circuit::kVarianceFloor);
            node.mean = (1.0 - step_size) * node.mean + step_size * cand_mean;
            node.variance = (1.0 - step_size) * node.variance + step_size * cand_var;
            node.variance = std::max(node.variance, Circuit::kVarianceFloor);
        }
    }
}

void init_circuit_from_data(Circuit& c, const Tensor& data, std::uint64_t seed) {
    check_batch(c, data);
    const std::size_t n = data.dim(0);
    std::vector<double> dim_var(c.n_vars, 0.0);
    for (std::size_t v = 0; v < c.n_vars; ++v) {
        double mean = 0.0;
        for (std::size_t r = 0; r < n; ++r) mean += data[r * c.n_vars + v];
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
            const double d = data[r * c.n_vars + v] - mean;
            var += d * d;
        }
        dim_var[v] = std::max(var / static_cast<double>(n), Circuit::kVarianceFloor);
    }
    Rng rng(seed);
    for (auto& node : c.nodes) {
        if (node.kind == NodeKind::leaf) {
            node.mean = data[rng.uniform_index(n) * c.n_vars + node.var];
            node.variance = dim_var[node.var];
        } else if (node.kind == NodeKind::sum) {
            double total = 0.0;
            std::vector<double> w(node.children.size());
            for (auto& wi : w) {
                wi = rng.uniform(1e-3, 1.0);
                total += wi;
            }
            for (std::size_t k = 0; k < w.size(); ++k) node.log_weights[k] = std::log(w[k] / total);
        }
    }
}

double mean_log_likelihood(const Circuit& c, const Tensor& data) {
    const std::vector<double> ll = log_likelihood(c, data);
    double acc = 0.0;
    for (const double v : ll) acc += v;
    return acc / static_cast<double>(ll.size());
}

EmTrace em_fit(Circuit& c, const Tensor& train, const Tensor* val, const EmConfig& cfg) {
    check_batch(c, train);
    if (cfg.epochs == 0) throw ValueError("em_fit: epochs must be >= 1");
    const double step = cfg.mode == EmMode::full_batch ? 1.0 : cfg.step_size;
    if (!(step > 0.0 && step <= 1.0)) throw ValueError("em_fit: step_size must be in (0, 1]");

    if (cfg.init_from_data) init_circuit_from_data(c, train, derive_seed(cfg.seed, 0));

    EmTrace trace;
    const auto record = [&]() {
        const double ll = mean_log_likelihood(c, train);
        if (!std::isfinite(ll)) {
            throw NumericalError("em_fit diverged: mean train log-likelihood is not finite");
        }
        trace.train_ll.push_back(ll);
        trace.val_ll.push_back(val != nullptr ? mean_log_likelihood(c, *val)
                                              : std::numeric_limits<double>::quiet_NaN());
    };
    record();

    const std::size_t n = train.dim(0);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        if (cfg.mode == EmMode::full_batch) {
            const EmAccumulators acc = e_step(c, train);
            m_step(c, acc, 1.0);
        } else {
            Rng shuffle_rng(derive_seed(cfg.seed, 1000 + epoch));
            for (std::size_t i = n; i > 1; --i) {
                std::swap(order[i - 1], order[shuffle_rng.uniform_index(i)]);
            }
            for (std::size_t lo = 0; lo < n; lo += cfg.batch_size) {
                const std::size_t hi = std::min(n, lo + cfg.batch_size);
                Tensor batch({hi - lo, c.n_vars});
                for (std::size_t r = lo; r < hi; ++r) {
                    const double* src = train.data() + order[r] * c.n_vars;
                    std::copy(src, src + c.n_vars, batch.data() + (r - lo) * c.n_vars);
                }
                const EmAccumulators acc = e_step(c, batch);
                m_step(c, acc, step);
            }
        }
        record();
    }
    return trace;
}

void write_em_trace_csv(const std::filesystem::path& path, const EmTrace& trace) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    os << "epoch,mean_train_ll,mean_val_ll\n";
    char buf[64];
    for (std::size_t e = 0; e < trace.train_ll.size(); ++e) {
        os << e << ',';
        std::snprintf(buf, sizeof buf, "%.17g", trace.train_ll[e]);
        os << buf << ',';
        std::snprintf(buf, sizeof buf, "%.17g", trace.val_ll[e]);
        os << buf << '\n';
    }
}

}  // namespace patchspn
