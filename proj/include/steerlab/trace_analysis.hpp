#ifndef STEERLAB_TRACE_ANALYSIS_HPP
#define STEERLAB_TRACE_ANALYSIS_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Eigenvalues>
#include "json.hpp"

#include "steerlab/core_lm.hpp"
#include "steerlab/error.hpp"
#include "steerlab/format.hpp"
#include "steerlab/numeric.hpp"

namespace steerlab {

// Hidden states captured around one injected prompt: h_context before it, h_prompted after.
struct TraceRecord {
    std::string sample_id;
    int round = 0;
    std::string condition;
    Vector h_context;
    Vector h_prompted;
    std::string model_name;
    std::string prompt_hash;

    Vector shift() const { return h_prompted - h_context; }
};

struct TraceSet {
    std::vector<TraceRecord> records;
    Eigen::Index dim = 0;
    std::map<std::pair<std::string, int>, std::size_t> counts;  // (condition, round) -> records
};

namespace detail {

// Python's json module writes NaN / Infinity / -Infinity as bare words. Rewrite them
// to null outside string literals so the record parses and the offending sample can
// be named.
inline std::string nonfinite_literals_to_null(std::string_view line) {
    std::string out;
    out.reserve(line.size());
    bool in_string = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (in_string) {
            out += c;
            if (c == '\\' && i + 1 < line.size()) out += line[++i];
            else if (c == '"') in_string = false;
            continue;
        }
        if (c == '"') {
            in_string = true;
            out += c;
            continue;
        }
        bool replaced = false;
        for (std::string_view word : {"-Infinity", "Infinity", "NaN"}) {
            if (line.substr(i, word.size()) == word) {
                out += "null";
                i += word.size() - 1;
                replaced = true;
                break;
            }
        }
        if (!replaced) out += c;
    }
    return out;
}

inline Vector parse_state_vector(const nlohmann::json& obj, const char* field, const std::string& sample, long line) {
    if (!obj.contains(field) || !obj[field].is_array()) throw ParseError("missing or non-array vector", field, line);
    const auto& arr = obj[field];
    Vector v(static_cast<Eigen::Index>(arr.size()));
    for (std::size_t i = 0; i < arr.size(); ++i) {
        if (!arr[i].is_number())
            throw ParseError("non-finite or non-numeric entry in sample '" + sample + "'", field, line);
        v(static_cast<Eigen::Index>(i)) = arr[i].get<double>();
    }
    if (!v.allFinite()) throw ParseError("non-finite entry in sample '" + sample + "'", field, line);
    return v;
}

inline std::string string_field(const nlohmann::json& obj, const char* field, long line, bool required) {
    if (!obj.contains(field)) {
        if (required) throw ParseError("missing field", field, line);
        return {};
    }
    if (!obj[field].is_string()) throw ParseError("expected a string", field, line);
    return obj[field].get<std::string>();
}

} // namespace detail

/// Reads a JSON-lines trace stream. An optional first line without "sample_id"
/// acts as a header and may declare "dim". Blank lines are skipped.
inline TraceSet load_traces(std::istream& in) {
    TraceSet set;
    std::optional<Eigen::Index> declared_dim;
    std::string raw;
    long line_no = 0;
    bool first_object = true;

    while (std::getline(in, raw)) {
        ++line_no;
        if (raw.find_first_not_of(" \t\r") == std::string::npos) continue;

        nlohmann::json obj;
        try {
            obj = nlohmann::json::parse(detail::nonfinite_literals_to_null(raw));
        } catch (const nlohmann::json::parse_error& e) {
            throw ParseError(std::string("invalid JSON: ") + e.what(), "", line_no);
        }
        if (!obj.is_object()) throw ParseError("expected a JSON object", "", line_no);
        if (!obj.contains("v") || !obj["v"].is_number_integer() || obj["v"].get<int>() != 1)
            throw ParseError("unsupported schema version", "v", line_no);

        const bool is_header = first_object && !obj.contains("sample_id");
        first_object = false;
        if (is_header) {
            if (obj.contains("dim")) {
                if (!obj["dim"].is_number_integer() || obj["dim"].get<long>() <= 0)
                    throw ParseError("dim must be a positive integer", "dim", line_no);
                declared_dim = obj["dim"].get<Eigen::Index>();
            }
            continue;
        }

        TraceRecord rec;
        rec.sample_id = detail::string_field(obj, "sample_id", line_no, true);
        if (!obj.contains("round") || !obj["round"].is_number_integer() || obj["round"].get<long>() < 0)
            throw ParseError("round must be a non-negative integer", "round", line_no);
        rec.round = obj["round"].get<int>();
        rec.condition = detail::string_field(obj, "condition", line_no, true);
        rec.model_name = detail::string_field(obj, "model", line_no, false);
        rec.prompt_hash = detail::string_field(obj, "prompt_hash", line_no, false);
        rec.h_context = detail::parse_state_vector(obj, "h_context", rec.sample_id, line_no);
        rec.h_prompted = detail::parse_state_vector(obj, "h_prompted", rec.sample_id, line_no);

        const Eigen::Index expect = declared_dim ? *declared_dim : (set.records.empty() ? rec.h_context.size() : set.dim);
        if (rec.h_context.size() != expect || rec.h_prompted.size() != expect || expect == 0)
            throw ParseError("dimension mismatch in sample '" + rec.sample_id + "' (expected " +
                                 std::to_string(expect) + ")",
                             "h_context", line_no);
        set.dim = expect;
        ++set.counts[{rec.condition, rec.round}];
        set.records.push_back(std::move(rec));
    }
    if (set.records.empty() && declared_dim) set.dim = *declared_dim;
    return set;
}

inline TraceSet load_traces(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open trace file '" + path + "'");
    return load_traces(in);
}

// Shift rows (h_prompted - h_context) ordered by sample_id.
struct ShiftMatrix {
    std::vector<std::string> sample_ids;
    Matrix rows;  // n x d
};

inline ShiftMatrix shift_vectors(std::span<const TraceRecord> records, const std::string& condition, int round) {
    std::vector<const TraceRecord*> picked;
    for (const auto& r : records)
        if (r.condition == condition && r.round == round) picked.push_back(&r);
    if (picked.empty())
        throw ContractViolation("no trace records for condition '" + condition + "' round " + std::to_string(round));
    std::stable_sort(picked.begin(), picked.end(),
                     [](const TraceRecord* a, const TraceRecord* b) { return a->sample_id < b->sample_id; });

    ShiftMatrix out;
    out.rows.resize(static_cast<Eigen::Index>(picked.size()), picked.front()->h_context.size());
    for (std::size_t i = 0; i < picked.size(); ++i) {
        out.sample_ids.push_back(picked[i]->sample_id);
        out.rows.row(static_cast<Eigen::Index>(i)) = picked[i]->shift().transpose();
    }
    return out;
}

/// Unembedding columns for a subset of vocabulary ids, as exported from a real model.
class UnembeddingSubset {
public:
    UnembeddingSubset(std::vector<TokenId> ids, Matrix columns, std::vector<std::string> labels = {})
        : ids_(std::move(ids)), U_(std::move(columns)), labels_(std::move(labels)) {
        STEERLAB_REQUIRE(static_cast<Eigen::Index>(ids_.size()) == U_.cols(), "one unembedding column per id");
        STEERLAB_REQUIRE(U_.allFinite(), "unembedding entries must be finite");
        for (std::size_t i = 0; i < ids_.size(); ++i) {
            const bool inserted = index_.emplace(ids_[i], static_cast<Eigen::Index>(i)).second;
            STEERLAB_REQUIRE(inserted, "duplicate token id " + std::to_string(ids_[i]));
        }
    }

    Eigen::Index dim() const noexcept { return U_.rows(); }
    std::size_t size() const noexcept { return ids_.size(); }
    const std::vector<TokenId>& ids() const noexcept { return ids_; }
    const std::vector<std::string>& labels() const noexcept { return labels_; }
    const Matrix& columns() const noexcept { return U_; }

    // d x |group| matrix of the requested ids' unembeddings.
    Matrix gather(std::span<const TokenId> group) const {
        Matrix out(U_.rows(), static_cast<Eigen::Index>(group.size()));
        for (std::size_t j = 0; j < group.size(); ++j) {
            const auto it = index_.find(group[j]);
            STEERLAB_REQUIRE(it != index_.end(), "token id " + std::to_string(group[j]) + " not in unembedding subset");
            out.col(static_cast<Eigen::Index>(j)) = U_.col(it->second);
        }
        return out;
    }

private:
    std::vector<TokenId> ids_;
    Matrix U_;
    std::vector<std::string> labels_;
    std::unordered_map<TokenId, Eigen::Index> index_;
};

// sum over samples and group tokens of U(v)^T delta, pairwise-summed in
// (sample, token) order.
inline double group_inner_product_sum(const Matrix& group_unembeddings, const Matrix& shifts) {
    STEERLAB_REQUIRE(group_unembeddings.cols() > 0, "token group must be non-empty");
    STEERLAB_REQUIRE(shifts.cols() == group_unembeddings.rows(), "shift dimension must equal unembedding dimension");
    const Matrix products = shifts * group_unembeddings;  // n x |group|
    std::vector<double> terms;
    terms.reserve(static_cast<std::size_t>(products.size()));
    for (Eigen::Index i = 0; i < products.rows(); ++i)
        for (Eigen::Index j = 0; j < products.cols(); ++j) terms.push_back(products(i, j));
    return pairwise_sum(terms);
}

inline double group_inner_product_sum(const UnembeddingModel& model, const Matrix& shifts, std::span<const TokenId> group) {
    STEERLAB_REQUIRE(!group.empty(), "token group must be non-empty");
    model.check_tokens(group);
    Matrix cols(model.embed_dim(), static_cast<Eigen::Index>(group.size()));
    for (std::size_t j = 0; j < group.size(); ++j) cols.col(static_cast<Eigen::Index>(j)) = model.unembedding_of(group[j]);
    return group_inner_product_sum(cols, shifts);
}

inline double group_inner_product_sum(const UnembeddingSubset& subset, const Matrix& shifts, std::span<const TokenId> group) {
    STEERLAB_REQUIRE(!group.empty(), "token group must be non-empty");
    return group_inner_product_sum(subset.gather(group), shifts);
}

struct PcaResult {
    Matrix components;                // d x 3, one principal direction per column
    Vector variances;                 // 3 eigenvalues of the sample covariance
    Vector explained_variance_ratio;  // 3 ratios of total variance
    Matrix projected;                 // n x 3
    double total_variance = 0.0;
    Eigen::Index rank = 0;            // components with nonzero variance (at most 3)
    Eigen::Index padded = 0;          // trailing components that carry zero variance
    bool normalized = false;
    std::size_t zero_rows = 0;        // rows left unnormalized because their norm is zero
};

namespace detail {

// Largest-magnitude entry positive; the first such entry wins ties.
inline void fix_sign(Eigen::Ref<Vector> v) {
    Eigen::Index idx = 0;
    for (Eigen::Index i = 1; i < v.size(); ++i)
        if (std::abs(v(i)) > std::abs(v(idx))) idx = i;
    if (v.size() > 0 && v(idx) < 0) v = -v;
}

// Extends orthonormal columns [0, have) of `basis` with standard basis vectors,
// choosing the one with the largest residual each time.
inline void complete_orthonormal(Matrix& basis, Eigen::Index have) {
    const Eigen::Index d = basis.rows();
    for (Eigen::Index k = have; k < basis.cols(); ++k) {
        Vector best;
        double best_norm = -1.0;
        for (Eigen::Index j = 0; j < d; ++j) {
            Vector e = Vector::Unit(d, j);
            for (Eigen::Index m = 0; m < k; ++m) e -= basis.col(m).dot(e) * basis.col(m);
            const double n = e.norm();
            if (n > best_norm + 1e-12) {
                best_norm = n;
                best = e;
            }
        }
        basis.col(k) = best_norm > 1e-8 ? Vector(best / best_norm) : Vector::Zero(d);
    }
}

} // namespace detail

/// Three-component PCA of the rows of `data`.
///
/// Rows are optionally scaled to unit L2 norm, then mean-centered. Directions come
/// from a symmetric eigendecomposition of the sample covariance (or of the Gram
/// matrix when there are fewer rows than columns).
inline PcaResult pca3(const Matrix& data, bool normalize) {
    constexpr Eigen::Index kComponents = 3;
    STEERLAB_REQUIRE(data.rows() >= 3, "pca3 needs at least 3 rows");
    STEERLAB_REQUIRE(data.cols() >= 1, "pca3 needs at least one column");
    STEERLAB_REQUIRE(data.allFinite(), "pca3 input must be finite");

    PcaResult out;
    out.normalized = normalize;
    Matrix x = data;
    if (normalize) {
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            const double n = x.row(i).norm();
            if (n > 0.0) x.row(i) /= n;
            else ++out.zero_rows;
        }
    }
    const Eigen::RowVectorXd mean = x.colwise().mean();
    x.rowwise() -= mean;

    const Eigen::Index n = x.rows();
    const Eigen::Index d = x.cols();
    const double denom = static_cast<double>(n - 1);
    const Eigen::Index avail = std::min<Eigen::Index>(kComponents, std::min(n, d));

    Vector eigvals;    // descending
    Matrix eigvecs;    // d x avail
    if (n <= d) {
        const Matrix gram = x * x.transpose() / denom;
        Eigen::SelfAdjointEigenSolver<Matrix> es(gram);
        eigvals = es.eigenvalues().reverse();
        eigvecs.resize(d, avail);
        for (Eigen::Index k = 0; k < avail; ++k) {
            const Vector u = es.eigenvectors().col(n - 1 - k);
            eigvecs.col(k) = x.transpose() * u;
        }
    } else {
        const Matrix cov = x.transpose() * x / denom;
        Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
        eigvals = es.eigenvalues().reverse();
        eigvecs = es.eigenvectors().rowwise().reverse().leftCols(avail);
    }
    eigvals = eigvals.cwiseMax(0.0);
    out.total_variance = eigvals.sum();

    const double tol = static_cast<double>(std::max(n, d)) * std::numeric_limits<double>::epsilon() *
                       (eigvals.size() ? eigvals(0) : 0.0);
    out.rank = 0;
    for (Eigen::Index k = 0; k < avail; ++k)
        if (eigvals(k) > tol && eigvals(k) > 0.0) ++out.rank;

    // Gram-route directions X^T u lose orthogonality as variance shrinks, so they
    // are re-orthonormalized in order.
    out.components = Matrix::Zero(d, kComponents);
    for (Eigen::Index k = 0; k < out.rank; ++k) {
        Vector c = eigvecs.col(k);
        for (Eigen::Index m = 0; m < k; ++m) c -= out.components.col(m).dot(c) * out.components.col(m);
        c.normalize();
        out.components.col(k) = c;
    }
    if (n > d) {
        // Covariance eigenvectors are already orthonormal; keep them for zero-variance slots.
        for (Eigen::Index k = out.rank; k < avail; ++k) out.components.col(k) = eigvecs.col(k);
        detail::complete_orthonormal(out.components, avail);
    } else {
        detail::complete_orthonormal(out.components, out.rank);
    }
    for (Eigen::Index k = 0; k < kComponents; ++k) detail::fix_sign(out.components.col(k));

    out.variances = Vector::Zero(kComponents);
    out.explained_variance_ratio = Vector::Zero(kComponents);
    for (Eigen::Index k = 0; k < out.rank; ++k) {
        out.variances(k) = eigvals(k);
        out.explained_variance_ratio(k) = out.total_variance > 0.0 ? eigvals(k) / out.total_variance : 0.0;
    }
    out.padded = kComponents - out.rank;
    out.projected = x * out.components;
    return out;
}

struct GroupScore {
    std::string condition;
    std::string group;
    int round = 0;
    double score = 0.0;       // sum over samples and group tokens
    std::size_t samples = 0;

    double mean() const { return samples ? score / static_cast<double>(samples) : 0.0; }
};

struct ReportTable {
    std::string csv;
    std::vector<std::string> warnings;
};

/// Rows keyed by (condition, group) in lexicographic order, a sum and a per-sample
/// mean column for every round seen. Duplicate (condition, group, round) entries
/// keep the last one and emit a warning.
inline ReportTable report_table(std::span<const GroupScore> scores) {
    ReportTable out;
    std::map<std::pair<std::string, std::string>, std::map<int, const GroupScore*>> cells;
    std::set<int> rounds;
    for (const auto& s : scores) {
        auto& slot = cells[{s.condition, s.group}][s.round];
        if (slot)
            out.warnings.push_back("duplicate score for (" + s.condition + ", " + s.group + ", round " +
                                   std::to_string(s.round) + "); keeping the last one");
        slot = &s;
        rounds.insert(s.round);
    }

    std::vector<std::string> header{"condition", "group"};
    for (int r : rounds) {
        header.push_back("round_" + std::to_string(r) + "_sum");
        header.push_back("round_" + std::to_string(r) + "_mean");
    }
    out.csv = join(header, ",") + "\n";
    for (const auto& [key, by_round] : cells) {
        std::vector<std::string> row{csv_field(key.first), csv_field(key.second)};
        for (int r : rounds) {
            const auto it = by_round.find(r);
            if (it == by_round.end()) {
                row.emplace_back();
                row.emplace_back();
            } else {
                row.push_back(fixed4(it->second->score));
                row.push_back(fixed4(it->second->mean()));
            }
        }
        out.csv += join(row, ",") + "\n";
    }
    return out;
}

} // namespace steerlab

#endif // STEERLAB_TRACE_ANALYSIS_HPP
