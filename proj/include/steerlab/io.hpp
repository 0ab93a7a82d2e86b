#ifndef STEERLAB_IO_HPP
#define STEERLAB_IO_HPP

#include <cstddef>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "steerlab/attention_lab.hpp"
#include "steerlab/concept_space.hpp"
#include "steerlab/core_lm.hpp"
#include "steerlab/error.hpp"
#include "steerlab/trace_analysis.hpp"

namespace steerlab::io {

using json = nlohmann::json;

inline json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open '" + path + "'");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ParseError("invalid JSON in '" + path + "': " + e.what());
    }
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("cannot write '" + path + "'");
    out << text;
}

inline void require_version(const json& doc, const char* key) {
    if (!doc.is_object()) throw ParseError("expected a JSON object");
    if (!doc.contains(key) || !doc[key].is_number_integer() || doc[key].get<int>() != 1)
        throw ParseError("unsupported or missing schema version", key);
}

inline const json& field(const json& doc, const char* key) {
    if (!doc.contains(key)) throw ParseError("missing field", key);
    return doc[key];
}

inline double number_field(const json& doc, const char* key) {
    const json& v = field(doc, key);
    if (!v.is_number()) throw ParseError("expected a number", key);
    return v.get<double>();
}

inline long integer_field(const json& doc, const char* key) {
    const json& v = field(doc, key);
    if (!v.is_number_integer()) throw ParseError("expected an integer", key);
    return v.get<long>();
}

inline Vector vector_from_json(const json& arr, const char* name) {
    if (!arr.is_array()) throw ParseError("expected an array of numbers", name);
    Vector v(static_cast<Eigen::Index>(arr.size()));
    for (std::size_t i = 0; i < arr.size(); ++i) {
        if (!arr[i].is_number()) throw ParseError("non-numeric entry", name);
        v(static_cast<Eigen::Index>(i)) = arr[i].get<double>();
    }
    if (!v.allFinite()) throw ParseError("non-finite entry", name);
    return v;
}

// Row-major nested array; every row must have the same length.
inline Matrix matrix_from_json(const json& arr, const char* name) {
    if (!arr.is_array() || arr.empty()) throw ParseError("expected a non-empty array of rows", name);
    const std::size_t cols = arr[0].is_array() ? arr[0].size() : 0;
    if (cols == 0) throw ParseError("rows must be non-empty arrays", name);
    Matrix m(static_cast<Eigen::Index>(arr.size()), static_cast<Eigen::Index>(cols));
    for (std::size_t i = 0; i < arr.size(); ++i) {
        if (!arr[i].is_array() || arr[i].size() != cols) throw ParseError("ragged matrix", name);
        for (std::size_t j = 0; j < cols; ++j) {
            if (!arr[i][j].is_number()) throw ParseError("non-numeric entry", name);
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = arr[i][j].get<double>();
        }
    }
    if (!m.allFinite()) throw ParseError("non-finite entry", name);
    return m;
}

inline json to_json(const Vector& v) {
    json arr = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
    return arr;
}

inline json to_json(const Matrix& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline TokenSet token_set_from_json(const json& arr, const char* name) {
    if (!arr.is_array()) throw ParseError("expected an array of token indices", name);
    TokenSet out;
    out.reserve(arr.size());
    for (const auto& x : arr) {
        if (!x.is_number_integer() || x.get<long long>() < 0) throw ParseError("token index must be a non-negative integer", name);
        out.push_back(x.get<TokenId>());
    }
    return out;
}

// ---- model files ----------------------------------------------------------

inline UnembeddingModel model_from_json(const json& doc) {
    require_version(doc, "version");
    const long vocab = integer_field(doc, "vocab_size");
    const long dim = integer_field(doc, "embed_dim");
    if (vocab <= 0 || dim <= 0) throw ParseError("vocab_size and embed_dim must be positive");
    Matrix E = matrix_from_json(field(doc, "E"), "E");
    Matrix U = matrix_from_json(field(doc, "U"), "U");
    if (E.rows() != dim || E.cols() != vocab) throw ParseError("E must be embed_dim x vocab_size", "E");
    if (U.rows() != dim || U.cols() != vocab) throw ParseError("U must be embed_dim x vocab_size", "U");
    std::vector<std::string> labels;
    if (doc.contains("labels")) {
        if (!doc["labels"].is_array()) throw ParseError("expected an array of strings", "labels");
        for (const auto& l : doc["labels"]) {
            if (!l.is_string()) throw ParseError("expected an array of strings", "labels");
            labels.push_back(l.get<std::string>());
        }
        if (!labels.empty() && labels.size() != static_cast<std::size_t>(vocab))
            throw ParseError("labels must have vocab_size entries", "labels");
    }
    return UnembeddingModel(std::move(E), std::move(U), std::move(labels));
}

inline json model_to_json(const UnembeddingModel& m) {
    json doc;
    doc["version"] = 1;
    doc["vocab_size"] = m.vocab_size();
    doc["embed_dim"] = m.embed_dim();
    doc["E"] = to_json(m.embedding());
    doc["U"] = to_json(m.unembedding());
    doc["labels"] = m.labels();
    return doc;
}

inline UnembeddingModel load_model(const std::string& path) { return model_from_json(read_json_file(path)); }

// ---- head files -----------------------------------------------------------

inline AttentionHead head_from_json(const json& doc) {
    require_version(doc, "version");
    const long d_emb = integer_field(doc, "d_emb");
    const long d_attn = integer_field(doc, "d_attn");
    const long d_out = integer_field(doc, "d_out");
    Matrix wv = matrix_from_json(field(doc, "W_v"), "W_v");
    Matrix wk = matrix_from_json(field(doc, "W_k"), "W_k");
    Matrix wq = matrix_from_json(field(doc, "W_q"), "W_q");
    if (wv.rows() != d_out || wv.cols() != d_emb) throw ParseError("W_v must be d_out x d_emb", "W_v");
    if (wk.rows() != d_attn || wk.cols() != d_emb) throw ParseError("W_k must be d_attn x d_emb", "W_k");
    if (wq.rows() != d_attn || wq.cols() != d_emb) throw ParseError("W_q must be d_attn x d_emb", "W_q");
    return AttentionHead(std::move(wv), std::move(wk), std::move(wq));
}

inline json head_to_json(const AttentionHead& h) {
    json doc;
    doc["version"] = 1;
    doc["d_emb"] = h.d_emb();
    doc["d_attn"] = h.d_attn();
    doc["d_out"] = h.d_out();
    doc["W_v"] = to_json(h.value());
    doc["W_k"] = to_json(h.key());
    doc["W_q"] = to_json(h.query());
    return doc;
}

inline AttentionHead load_head(const std::string& path) { return head_from_json(read_json_file(path)); }

// ---- concept files --------------------------------------------------------

inline ConceptSpec concept_from_json(const json& doc) {
    require_version(doc, "version");
    ConceptSpec spec;
    const json& name = field(doc, "name");
    if (!name.is_string()) throw ParseError("expected a string", "name");
    spec.name = name.get<std::string>();
    spec.c1 = token_set_from_json(field(doc, "c1"), "c1");
    spec.c2 = token_set_from_json(field(doc, "c2"), "c2");
    spec.p = number_field(doc, "p");
    spec.d = number_field(doc, "d");
    spec.ell = vector_from_json(field(doc, "ell"), "ell");
    if (doc.contains("partial")) {
        if (!doc["partial"].is_boolean()) throw ParseError("expected a boolean", "partial");
        spec.partial = doc["partial"].get<bool>();
    }
    if (doc.contains("tol_align")) spec.tol_align = number_field(doc, "tol_align");
    if (!(spec.p > 0.0) || !(spec.d > 0.0)) throw ParseError("p and d must be positive");
    return spec;
}

inline json concept_to_json(const ConceptSpec& spec) {
    json doc;
    doc["version"] = 1;
    doc["name"] = spec.name;
    doc["c1"] = spec.c1;
    doc["c2"] = spec.c2;
    doc["p"] = spec.p;
    doc["d"] = spec.d;
    doc["ell"] = to_json(spec.ell);
    doc["partial"] = spec.partial;
    doc["tol_align"] = spec.tol_align;
    return doc;
}

inline ConceptSpec load_concept(const std::string& path) { return concept_from_json(read_json_file(path)); }

// ---- unembedding subset and token group files ------------------------------

inline UnembeddingSubset subset_from_json(const json& doc) {
    require_version(doc, "v");
    const long dim = integer_field(doc, "dim");
    if (dim <= 0) throw ParseError("dim must be positive", "dim");
    const json& tokens = field(doc, "tokens");
    if (!tokens.is_array()) throw ParseError("expected an array", "tokens");

    std::vector<TokenId> ids;
    std::vector<std::string> labels;
    Matrix cols(dim, static_cast<Eigen::Index>(tokens.size()));
    for (std::size_t j = 0; j < tokens.size(); ++j) {
        const json& t = tokens[j];
        if (!t.is_object()) throw ParseError("token entries must be objects", "tokens");
        const long id = integer_field(t, "id");
        if (id < 0) throw ParseError("token id must be non-negative", "id");
        ids.push_back(static_cast<TokenId>(id));
        labels.push_back(t.contains("label") && t["label"].is_string() ? t["label"].get<std::string>() : "");
        const Vector u = vector_from_json(field(t, "u"), "u");
        if (u.size() != dim) throw ParseError("unembedding length differs from dim for id " + std::to_string(id), "u");
        cols.col(static_cast<Eigen::Index>(j)) = u;
    }
    return UnembeddingSubset(std::move(ids), std::move(cols), std::move(labels));
}

inline json subset_to_json(const UnembeddingSubset& s) {
    json doc;
    doc["v"] = 1;
    doc["dim"] = s.dim();
    json tokens = json::array();
    for (std::size_t j = 0; j < s.size(); ++j) {
        json t;
        t["id"] = s.ids()[j];
        t["label"] = j < s.labels().size() ? s.labels()[j] : "";
        t["u"] = to_json(Vector(s.columns().col(static_cast<Eigen::Index>(j))));
        tokens.push_back(std::move(t));
    }
    doc["tokens"] = std::move(tokens);
    return doc;
}

inline UnembeddingSubset load_unembedding_subset(const std::string& path) { return subset_from_json(read_json_file(path)); }

struct TokenGroup {
    std::string name;
    TokenSet ids;
    std::string provenance;
};

inline TokenGroup group_from_json(const json& doc) {
    require_version(doc, "v");
    TokenGroup g;
    const json& name = field(doc, "name");
    if (!name.is_string()) throw ParseError("expected a string", "name");
    g.name = name.get<std::string>();
    g.ids = token_set_from_json(field(doc, "ids"), "ids");
    if (g.ids.empty()) throw ParseError("token group must be non-empty", "ids");
    if (doc.contains("provenance") && doc["provenance"].is_string()) g.provenance = doc["provenance"].get<std::string>();
    return g;
}

inline TokenGroup load_group(const std::string& path) { return group_from_json(read_json_file(path)); }

} // namespace steerlab::io

#endif // STEERLAB_IO_HPP
