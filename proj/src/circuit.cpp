#include "patchspn/circuit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "patchspn/errors.hpp"
#include "patchspn/logspace.hpp"
#include "patchspn/parallel.hpp"
#include "patchspn/tensor_io.hpp"

namespace patchspn {

std::vector<double> Circuit::standardized(std::span<const double> row) const {
    std::vector<double> out(row.begin(), row.end());
    if (standardize_mean.empty()) return out;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = (out[i] - standardize_mean[i]) / standardize_std[i];
    }
    return out;
}

void Circuit::set_standardization(std::vector<double> mean, std::vector<double> stddev) {
    if (mean.size() != n_vars || stddev.size() != n_vars) {
        throw ShapeError("standardization stats must have length " + std::to_string(n_vars));
    }
    for (auto& s : stddev) s = std::max(s, 1e-6);  // dead feature guard
    standardize_mean = std::move(mean);
    standardize_std = std::move(stddev);
}

// ------------------------------------------------------------- materialize

Circuit materialize(const RegionGraph& rg, std::size_t roots, std::size_t sums, std::size_t inputs,
                    std::uint64_t weight_seed) {
    if (roots == 0 || sums == 0 || inputs == 0) {
        throw ValueError("materialize: roots, sums and inputs must all be >= 1");
    }
    Circuit c;
    c.n_vars = rg.n_vars;
    c.graph_depth = rg.depth;
    c.replicas = rg.replicas;
    c.n_roots = roots;
    c.sums_per_region = sums;
    c.inputs_per_leaf = inputs;
    c.graph_seed = rg.seed;
    c.weight_seed = weight_seed;

    Rng rng(weight_seed);

    // Region nodes are created bottom-up (children before parents).
    std::vector<std::vector<std::size_t>> region_nodes(rg.regions.size());

    std::vector<std::size_t> region_order(rg.regions.size());
    for (std::size_t i = 0; i < region_order.size(); ++i) region_order[i] = i;
    std::stable_sort(region_order.begin(), region_order.end(), [&](std::size_t a, std::size_t b) {
        return rg.regions[a].depth > rg.regions[b].depth;
    });

    const auto add_input_distributions = [&](std::size_t region_idx) {
        const auto& scope = rg.regions[region_idx].scope;
        for (std::size_t i = 0; i < inputs; ++i) {
            if (scope.size() == 1) {
                CircuitNode leaf;
                leaf.kind = NodeKind::leaf;
                leaf.var = scope[0];
                leaf.scope = scope;
                c.nodes.push_back(std::move(leaf));
                region_nodes[region_idx].push_back(c.nodes.size() - 1);
            } else {
                CircuitNode prod;
                prod.kind = NodeKind::product;
                prod.scope = scope;
                for (const std::size_t v : scope) {
                    CircuitNode leaf;
                    leaf.kind = NodeKind::leaf;
                    leaf.var = v;
                    leaf.scope = {v};
                    c.nodes.push_back(std::move(leaf));
                    prod.children.push_back(c.nodes.size() - 1);
                }
                c.nodes.push_back(std::move(prod));
                region_nodes[region_idx].push_back(c.nodes.size() - 1);
            }
        }
    };

    const auto add_sum_nodes = [&](std::size_t region_idx, std::size_t count) {
        const Region& region = rg.regions[region_idx];
        std::vector<std::size_t> products;
        for (const std::size_t part_idx : region.partitions) {
            const auto& part = rg.partitions[part_idx];
            for (const std::size_t a : region_nodes[part.children[0]]) {
                for (const std::size_t b : region_nodes[part.children[1]]) {
                    CircuitNode prod;
                    prod.kind = NodeKind::product;
                    prod.children = {a, b};
                    prod.scope = region.scope;
                    c.nodes.push_back(std::move(prod));
                    products.push_back(c.nodes.size() - 1);
                }
            }
        }
        for (std::size_t s = 0; s < count; ++s) {
            CircuitNode sum;
            sum.kind = NodeKind::sum;
            sum.children = products;
            sum.scope = region.scope;
            std::vector<double> w(products.size());
            double total = 0.0;
            for (auto& wi : w) {
                wi = rng.uniform(1e-3, 1.0);
                total += wi;
            }
            sum.log_weights.resize(w.size());
            for (std::size_t i = 0; i < w.size(); ++i) sum.log_weights[i] = std::log(w[i] / total);
            c.nodes.push_back(std::move(sum));
            region_nodes[region_idx].push_back(c.nodes.size() - 1);
        }
    };

    for (const std::size_t region_idx : region_order) {
        const Region& region = rg.regions[region_idx];
        const bool is_leaf_region = region.depth == rg.depth;
        const bool is_root = region_idx == 0;
        if (is_leaf_region) {
            add_input_distributions(region_idx);
            if (is_root) {
                // Depth 0: the root sums directly mix the input distributions.
                std::vector<std::size_t> dists = region_nodes[region_idx];
                region_nodes[region_idx].clear();
                for (std::size_t s = 0; s < roots; ++s) {
                    CircuitNode sum;
                    sum.kind = NodeKind::sum;
                    sum.children = dists;
                    sum.scope = region.scope;
                    std::vector<double> w(dists.size());
                    double total = 0.0;
                    for (auto& wi : w) {
                        wi = rng.uniform(1e-3, 1.0);
                        total += wi;
                    }
                    sum.log_weights.resize(w.size());
                    for (std::size_t i = 0; i < w.size(); ++i) sum.log_weights[i] = std::log(w[i] / total);
                    c.nodes.push_back(std::move(sum));
                    region_nodes[region_idx].push_back(c.nodes.size() - 1);
                }
            }
        } else {
            add_sum_nodes(region_idx, is_root ? roots : sums);
        }
    }

    c.roots = region_nodes[0];
    return c;
}

// ---------------------------------------------------------------- validate

std::string ValidationReport::str() const {
    std::string s;
    for (const auto& issue : issues) {
        s += "node " + std::to_string(issue.node) + ": " + issue.what + "\n";
    }
    return s;
}

ValidationReport validate_structure(const Circuit& c) {
    ValidationReport report;
    const auto flag = [&](std::size_t node, std::string what) {
        report.issues.push_back({node, std::move(what)});
    };

    std::vector<std::size_t> full(c.n_vars);
    for (std::size_t i = 0; i < c.n_vars; ++i) full[i] = i;

    for (std::size_t i = 0; i < c.nodes.size(); ++i) {
        const CircuitNode& node = c.nodes[i];
        for (const std::size_t ch : node.children) {
            if (ch >= i) {
                flag(i, "child " + std::to_string(ch) + " does not precede its parent (cycle or bad order)");
            }
        }
        switch (node.kind) {
            case NodeKind::leaf: {
                if (!node.children.empty()) flag(i, "leaf with children");
                if (node.var >= c.n_vars) flag(i, "leaf variable out of range");
                if (node.scope != std::vector<std::size_t>{node.var}) flag(i, "leaf scope != {var}");
                if (node.variance < Circuit::kVarianceFloor - 1e-12) {
                    flag(i, "leaf variance below floor");
                }
                if (!std::isfinite(node.mean) || !std::isfinite(node.variance)) {
                    flag(i, "non-finite leaf parameters");
                }
                break;
            }
            case NodeKind::product: {
                if (node.children.empty()) flag(i, "product without children");
                std::set<std::size_t> seen;
                std::size_t total = 0;
                bool overlap = false;
                for (const std::size_t ch : node.children) {
                    if (ch >= i) continue;
                    for (const std::size_t v : c.nodes[ch].scope) {
                        if (!seen.insert(v).second) overlap = true;
                        ++total;
                    }
                }
                if (overlap) flag(i, "decomposability violation: child scopes overlap");
                std::vector<std::size_t> merged(seen.begin(), seen.end());
                if (merged != node.scope || total != node.scope.size()) {
                    flag(i, "product scope is not the disjoint union of child scopes");
                }
                break;
            }
            case NodeKind::sum: {
                if (node.children.empty()) flag(i, "sum without children");
                if (node.log_weights.size() != node.children.size()) {
                    flag(i, "sum weights/children size mismatch");
                    break;
                }
                for (const std::size_t ch : node.children) {
                    if (ch >= i) continue;
                    if (c.nodes[ch].scope != node.scope) {
                        flag(i, "smoothness violation: child " + std::to_string(ch) +
                                    " scope differs from sum scope");
                    }
                }
                const double lse = log_sum_exp(node.log_weights);
                if (!(std::fabs(lse) <= 1e-9)) {
                    flag(i, "sum weights not normalized (log-sum-exp = " + std::to_string(lse) + ")");
                }
                break;
            }
        }
    }

    if (c.roots.empty()) flag(0, "circuit has no roots");
    for (const std::size_t r : c.roots) {
        if (r >= c.nodes.size()) {
            flag(r, "root index out of range");
            continue;
        }
        if (c.nodes[r].kind != NodeKind::sum) flag(r, "root is not a sum node");
        if (c.nodes[r].scope != full) flag(r, "root scope does not cover all variables");
    }
    return report;
}

// --------------------------------------------------------------- inference

namespace {

void bottom_up(const Circuit& c, std::span<const double> z, const std::vector<bool>* observed,
               std::vector<double>& logv) {
    logv.resize(c.nodes.size());
    std::vector<double> child_terms;
    for (std::size_t i = 0; i < c.nodes.size(); ++i) {
        const CircuitNode& node = c.nodes[i];
        switch (node.kind) {
            case NodeKind::leaf:
                if (observed != nullptr && !(*observed)[node.var]) {
                    logv[i] = 0.0;  // integrates to one
                } else {
                    logv[i] = gaussian_log_pdf(z[node.var], node.mean, node.variance);
                }
                break;
            case NodeKind::product: {
                double acc = 0.0;
                for (const std::size_t ch : node.children) acc += logv[ch];
                logv[i] = acc;
                break;
            }
            case NodeKind::sum: {
                child_terms.resize(node.children.size());
                for (std::size_t k = 0; k < node.children.size(); ++k) {
                    child_terms[k] = node.log_weights[k] + logv[node.children[k]];
                }
                logv[i] = log_sum_exp(child_terms);
                break;
            }
        }
    }
}

double combine_roots(const Circuit& c, const std::vector<double>& logv) {
    std::vector<double> roots(c.roots.size());
    for (std::size_t i = 0; i < c.roots.size(); ++i) roots[i] = logv[c.roots[i]];
    return log_sum_exp(roots) - std::log(static_cast<double>(c.roots.size()));
}

}  // namespace

double log_likelihood_one(const Circuit& c, std::span<const double> z) {
    if (z.size() != c.n_vars) {
        throw ShapeError("log_likelihood: expected " + std::to_string(c.n_vars) + " variables, got " +
                         std::to_string(z.size()));
    }
    std::vector<double> logv;
    bottom_up(c, z, nullptr, logv);
    return combine_roots(c, logv);
}

std::vector<double> log_likelihood(const Circuit& c, const Tensor& batch) {
    if (batch.rank() != 2 || batch.dim(1) != c.n_vars) {
        throw ShapeError("log_likelihood: expected (n, " + std::to_string(c.n_vars) + "), got " +
                         Tensor::shape_str(batch.shape()));
    }
    const std::size_t n = batch.dim(0);
    std::vector<double> out(n);
    parallel_for(n, [&](std::size_t lo, std::size_t hi) {
        std::vector<double> logv;
        for (std::size_t r = lo; r < hi; ++r) {
            bottom_up(c, {batch.data() + r * c.n_vars, c.n_vars}, nullptr, logv);
            out[r] = combine_roots(c, logv);
        }
    });
    return out;
}

Evidence Evidence::all_marginalized(std::size_t n_vars) {
    Evidence e;
    e.values.assign(n_vars, 0.0);
    e.observed.assign(n_vars, false);
    return e;
}

void Evidence::observe(std::size_t var, double value) {
    values.at(var) = value;
    observed.at(var) = true;
}

double marginal_log_likelihood(const Circuit& c, const Evidence& evidence) {
    if (evidence.values.size() != c.n_vars || evidence.observed.size() != c.n_vars) {
        throw ShapeError("marginal_log_likelihood: evidence length must be " + std::to_string(c.n_vars));
    }
    std::vector<double> logv;
    bottom_up(c, evidence.values, &evidence.observed, logv);
    return combine_roots(c, logv);
}

Tensor sample(const Circuit& c, Rng& rng, std::size_t n) {
    Tensor out({n, c.n_vars});
    std::vector<std::size_t> stack;
    for (std::size_t s = 0; s < n; ++s) {
        double* row = out.data() + s * c.n_vars;
        stack.clear();
        stack.push_back(c.roots.size() == 1 ? c.roots[0] : c.roots[rng.uniform_index(c.roots.size())]);
        while (!stack.empty()) {
            const CircuitNode& node = c.nodes[stack.back()];
            stack.pop_back();
            switch (node.kind) {
                case NodeKind::leaf:
                    row[node.var] = rng.normal(node.mean, std::sqrt(node.variance));
                    break;
                case NodeKind::product:
                    for (const std::size_t ch : node.children) stack.push_back(ch);
                    break;
                case NodeKind::sum: {
                    const double u = rng.uniform();
                    double cum = 0.0;
                    std::size_t pick = node.children.size() - 1;
                    for (std::size_t k = 0; k < node.children.size(); ++k) {
                        cum += std::exp(node.log_weights[k]);
                        if (u < cum) {
                            pick = k;
                            break;
                        }
                    }
                    stack.push_back(node.children[pick]);
                    break;
                }
            }
        }
    }
    return out;
}

std::vector<double> analytic_mean(const Circuit& c) {
    // mean[i][v] = E[Z_v | subtree i] for v in scope(i); propagate upward.
    std::vector<std::vector<double>> node_mean(c.nodes.size());
    const auto scope_pos = [](const CircuitNode& node, std::size_t v) {
        return static_cast<std::size_t>(
            std::lower_bound(node.scope.begin(), node.scope.end(), v) - node.scope.begin());
    };
    for (std::size_t i = 0; i < c.nodes.size(); ++i) {
        const CircuitNode& node = c.nodes[i];
        node_mean[i].assign(node.scope.size(), 0.0);
        switch (node.kind) {
            case NodeKind::leaf:
                node_mean[i][0] = node.mean;
                break;
            case NodeKind::product:
                for (const std::size_t ch : node.children) {
                    for (std::size_t j = 0; j < c.nodes[ch].scope.size(); ++j) {
                        node_mean[i][scope_pos(node, c.nodes[ch].scope[j])] = node_mean[ch][j];
                    }
                }
                break;
            case NodeKind::sum:
                for (std::size_t k = 0; k < node.children.size(); ++k) {
                    const double w = std::exp(node.log_weights[k]);
                    const std::size_t ch = node.children[k];
                    for (std::size_t j = 0; j < c.nodes[ch].scope.size(); ++j) {
                        node_mean[i][scope_pos(node, c.nodes[ch].scope[j])] += w * node_mean[ch][j];
                    }
                }
                break;
        }
    }
    std::vector<double> out(c.n_vars, 0.0);
    const double wroot = 1.0 / static_cast<double>(c.roots.size());
    for (const std::size_t r : c.roots) {
        for (std::size_t j = 0; j < c.nodes[r].scope.size(); ++j) {
            out[c.nodes[r].scope[j]] += wroot * node_mean[r][j];
        }
    }
    return out;
}

// ------------------------------------------------------------ persistence

void save_circuit(const std::filesystem::path& path, const Circuit& c) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    os << "CIRCUIT v1\n";
    os << "n_vars=" << c.n_vars << "\n";
    os << "depth=" << c.graph_depth << "\n";
    os << "replicas=" << c.replicas << "\n";
    os << "roots=" << c.n_roots << "\n";
    os << "sums=" << c.sums_per_region << "\n";
    os << "inputs=" << c.inputs_per_leaf << "\n";
    os << "graph_seed=" << c.graph_seed << "\n";
    os << "weight_seed=" << c.weight_seed << "\n";
    os << "end-header\n";

    std::size_t n_weights = 0, n_leaves = 0;
    for (const auto& node : c.nodes) {
        if (node.kind == NodeKind::sum) n_weights += node.log_weights.size();
        if (node.kind == NodeKind::leaf) ++n_leaves;
    }
    Tensor weights({std::max<std::size_t>(n_weights, 1)});
    Tensor means({std::max<std::size_t>(n_leaves, 1)});
    Tensor variances({std::max<std::size_t>(n_leaves, 1)});
    std::size_t wi = 0, li = 0;
    for (const auto& node : c.nodes) {
        if (node.kind == NodeKind::sum) {
            for (const double lw : node.log_weights) weights[wi++] = lw;
        } else if (node.kind == NodeKind::leaf) {
            means[li] = node.mean;
            variances[li] = node.variance;
            ++li;
        }
    }
    write_named_tensor(os, "sum_log_weights", weights, DType::f64);
    write_named_tensor(os, "leaf_mean", means, DType::f64);
    write_named_tensor(os, "leaf_variance", variances, DType::f64);
    Tensor smean({std::max<std::size_t>(c.n_vars, 1)});
    Tensor sstd({std::max<std::size_t>(c.n_vars, 1)});
    sstd.fill(1.0);
    if (!c.standardize_mean.empty()) {
        for (std::size_t i = 0; i < c.n_vars; ++i) {
            smean[i] = c.standardize_mean[i];
            sstd[i] = c.standardize_std[i];
        }
    }
    write_named_tensor(os, "standardize_mean", smean, DType::f64);
    write_named_tensor(os, "standardize_std", sstd, DType::f64);
    if (!os) throw IoError("failed while writing circuit " + path.string());
}

Circuit load_circuit(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open for reading: " + path.string());
    std::string line;
    if (!std::getline(is, line) || line != "CIRCUIT v1") {
        throw IoError("not a CIRCUIT v1 file: " + path.string());
    }
    std::size_t n_vars = 0, depth = 0, replicas = 0, roots = 0, sums = 0, inputs = 0;
    std::uint64_t graph_seed = 0, weight_seed = 0;
    while (std::getline(is, line)) {
        if (line == "end-header") break;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw IoError("malformed circuit header line: " + line);
        const std::string key = line.substr(0, eq);
        const std::string val = line.substr(eq + 1);
        if (key == "n_vars") n_vars = std::stoull(val);
        else if (key == "depth") depth = std::stoull(val);
        else if (key == "replicas") replicas = std::stoull(val);
        else if (key == "roots") roots = std::stoull(val);
        else if (key == "sums") sums = std::stoull(val);
        else if (key == "inputs") inputs = std::stoull(val);
        else if (key == "graph_seed") graph_seed = std::stoull(val);
        else if (key == "weight_seed") weight_seed = std::stoull(val);
        else throw IoError("unknown circuit header key: " + key);
    }
    const RegionGraph rg = build_region_graph(n_vars, depth, replicas, graph_seed);
    Circuit c = materialize(rg, roots, sums, inputs, weight_seed);

    Tensor weights, means, variances, smean, sstd;
    for (int rec = 0; rec < 5; ++rec) {
        auto [name, tensor] = read_named_tensor(is);
        if (name == "sum_log_weights") weights = std::move(tensor);
        else if (name == "leaf_mean") means = std::move(tensor);
        else if (name == "leaf_variance") variances = std::move(tensor);
        else if (name == "standardize_mean") smean = std::move(tensor);
        else if (name == "standardize_std") sstd = std::move(tensor);
        else throw IoError("unexpected circuit record '" + name + "'");
    }
    std::size_t wi = 0, li = 0;
    for (auto& node : c.nodes) {
        if (node.kind == NodeKind::sum) {
            for (auto& lw : node.log_weights) lw = weights[wi++];
        } else if (node.kind == NodeKind::leaf) {
            node.mean = means[li];
            node.variance = variances[li];
            ++li;
        }
    }
    c.standardize_mean.assign(smean.data(), smean.data() + c.n_vars);
    c.standardize_std.assign(sstd.data(), sstd.data() + c.n_vars);
    return c;
}

}  // namespace patchspn
