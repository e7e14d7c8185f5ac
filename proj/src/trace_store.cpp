#include "bestn/trace_store.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include <json.hpp>

#include "bestn/blob.hpp"
#include "bestn/error.hpp"

namespace bestn {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr const char* kFormatName = "bestn-traces";
constexpr int kFormatVersion = 1;
constexpr double kMassTolerance = 1e-6;

// Returns a description of what is wrong with one top-k row, if anything.
std::optional<std::string> check_token(TokenTopK lp) {
    std::string problems;
    auto add = [&](const std::string& s) {
        if (!problems.empty()) problems += "; ";
        problems += s;
    };
    bool finite = true;
    double mass = 0.0;
    for (std::size_t j = 0; j < lp.size(); ++j) {
        if (!std::isfinite(lp[j])) {
            finite = false;
            continue;
        }
        if (lp[j] > 0.0f) add("logprob[" + std::to_string(j) + "] > 0");
        mass += std::exp(static_cast<double>(lp[j]));
    }
    if (!finite) add("non-finite logprob");
    for (std::size_t j = 1; j < lp.size(); ++j) {
        if (lp[j] > lp[j - 1]) {
            add("logprobs not sorted descending at " + std::to_string(j));
            break;
        }
    }
    if (finite && mass > 1.0 + kMassTolerance) add("probability mass " + std::to_string(mass) + " > 1");
    if (problems.empty()) return std::nullopt;
    return problems;
}

Violation make_violation(std::string kind, std::string message, std::size_t line = 0,
                         std::string problem_id = {}, std::optional<std::uint64_t> rollout_id = {},
                         std::optional<std::size_t> token = {}) {
    Violation v;
    v.kind = std::move(kind);
    v.line = line;
    v.problem_id = std::move(problem_id);
    v.rollout_id = rollout_id;
    v.token = token;
    v.message = std::move(message);
    return v;
}

std::string blob_file_name(std::size_t layer_index) {
    return "emb_" + std::to_string(layer_index) + ".bin";
}

// Decodes the header record; throws std::exception subclasses on bad shape.
DatasetManifest decode_header(const json& h) {
    if (h.value("record", "") != "header") throw std::runtime_error("first manifest line is not a header record");
    if (h.value("format", "") != kFormatName) throw std::runtime_error("unknown format tag");
    if (h.at("version").get<int>() != kFormatVersion) throw std::runtime_error("unsupported manifest version");
    DatasetManifest m;
    m.k = h.at("k").get<std::uint32_t>();
    m.embedding_dim = h.at("embedding_dim").get<std::uint32_t>();
    m.layer_tags = h.at("layer_tags").get<std::vector<std::string>>();
    m.problem_count = h.at("problems").get<std::size_t>();
    m.rollout_count = h.at("rollouts").get<std::size_t>();
    for (const auto& [size, n] : h.at("rollouts_per_problem").items()) {
        m.rollouts_per_problem[std::stoul(size)] = n.get<std::size_t>();
    }
    for (const auto& b : h.at("blobs")) {
        m.blobs.push_back({b.at("name").get<std::string>(), b.at("role").get<std::string>(), b.value("layer", ""),
                           b.at("dim").get<std::uint32_t>(), b.at("count").get<std::uint64_t>(),
                           b.value("checksum", "")});
    }
    if (h.contains("metadata")) {
        for (const auto& [key, value] : h["metadata"].items()) {
            m.metadata[key] = value.is_string() ? value.get<std::string>() : value.dump();
        }
    }
    return m;
}

// Streams through a manifest, reporting violations to `sink`. When the sink
// returns false the scan stops. Loaded rollouts are appended to `out` when
// it is non-null.
class ManifestScanner {
public:
    using Sink = std::function<bool(Violation)>;

    ManifestScanner(fs::path manifest, Sink sink) : manifest_(std::move(manifest)), sink_(std::move(sink)) {}

    void run(std::vector<RolloutTrace>* out, ValidationReport* counts);

private:
    bool report(Violation v) {
        if (!sink_(std::move(v))) {
            stopped_ = true;
        }
        return !stopped_;
    }

    bool parse_header(const std::string& line);
    bool open_blobs();
    void scan_record(const std::string& line, std::size_t line_no, std::vector<RolloutTrace>* out,
                     ValidationReport* counts);
    void check_blobs_after_records();

    fs::path manifest_;
    Sink sink_;
    bool stopped_ = false;

    DatasetManifest header_;
    std::map<std::string, Blob> blobs_;  // by file name
    std::map<std::string, std::string> checksums_;
    std::set<std::pair<std::string, std::uint64_t>> seen_;
};

bool ManifestScanner::parse_header(const std::string& line) {
    json h;
    try {
        h = json::parse(line);
    } catch (const json::exception& e) {
        return report(make_violation("header", std::string("header is not valid JSON: ") + e.what(), 1));
    }
    try {
        header_ = decode_header(h);
    } catch (const std::exception& e) {
        return report(make_violation("header", std::string("malformed header: ") + e.what(), 1));
    }
    if (header_.k == 0) return report(make_violation("header", "k must be positive", 1));
    if (header_.embedding_dim == 0) return report(make_violation("header", "embedding_dim must be positive", 1));
    return true;
}

bool ManifestScanner::open_blobs() {
    const fs::path dir = manifest_.parent_path();
    for (const auto& ref : header_.blobs) {
        if (ref.name.empty() || fs::path(ref.name).is_absolute() || ref.name.find("..") != std::string::npos) {
            if (!report(make_violation("blob", "blob name must be a plain relative path: " + ref.name))) return false;
            continue;
        }
        try {
            Blob blob = Blob::read(dir / ref.name);
            const std::uint32_t want = ref.role == "logprobs" ? header_.k : header_.embedding_dim;
            if (blob.header().version != kBlobVersionF32) {
                if (!report(make_violation("blob", ref.name + ": trace blobs must hold f32 rows"))) return false;
                continue;
            }
            if (blob.header().dim != want || ref.dim != want) {
                if (!report(make_violation("blob", ref.name + ": dim " + std::to_string(blob.header().dim) +
                                                       " does not match declared " + std::to_string(want)))) {
                    return false;
                }
                continue;
            }
            blobs_.emplace(ref.name, std::move(blob));
            checksums_[ref.name] = ref.checksum;
        } catch (const Error& e) {
            if (!report(make_violation(dynamic_cast<const IoError*>(&e) ? "io" : "blob", e.what()))) return false;
        }
    }
    return true;
}

void ManifestScanner::scan_record(const std::string& line, std::size_t line_no, std::vector<RolloutTrace>* out,
                                  ValidationReport* counts) {
    json r;
    try {
        r = json::parse(line);
    } catch (const json::exception& e) {
        report(make_violation("format", std::string("record is not valid JSON: ") + e.what(), line_no));
        return;
    }
    RolloutTrace trace;
    trace.k = header_.k;
    std::string tokens_blob;
    std::uint64_t tokens_offset = 0;
    std::uint64_t token_count = 0;
    try {
        if (r.value("record", "rollout") != "rollout") {
            report(make_violation("record", "unexpected record type", line_no));
            return;
        }
        trace.problem_id = r.at("problem_id").get<std::string>();
        trace.rollout_id = r.at("rollout_id").get<std::uint64_t>();
    } catch (const std::exception& e) {
        report(make_violation("record", std::string("record lacks ids: ") + e.what(), line_no));
        return;
    }
    const auto pid = trace.problem_id;
    const auto rid = trace.rollout_id;
    auto violation = [&](std::string kind, std::string msg, std::optional<std::size_t> token = {}) {
        return report(make_violation(std::move(kind), std::move(msg), line_no, pid, rid, token));
    };
    if (pid.empty() && !violation("record", "empty problem_id")) return;
    if (!seen_.emplace(pid, rid).second) {
        violation("duplicate", "duplicate (problem_id, rollout_id)");
        return;
    }
    bool valid = true;
    try {
        const auto& label = r.at("label");
        if (!label.is_number_integer() || (label.get<long long>() != 0 && label.get<long long>() != 1)) {
            valid = false;
            if (!violation("label", "label must be 0 or 1, got " + label.dump())) return;
        } else {
            trace.label = label.get<int>();
        }
        if (r.contains("final_answer") && !r["final_answer"].is_null()) {
            trace.final_answer = r["final_answer"].get<std::string>();
        }
        const auto& tok = r.at("tokens");
        tokens_blob = tok.at("blob").get<std::string>();
        tokens_offset = tok.at("offset").get<std::uint64_t>();
        token_count = tok.at("count").get<std::uint64_t>();
    } catch (const std::exception& e) {
        violation("record", std::string("malformed record: ") + e.what());
        return;
    }

    if (token_count == 0) {
        valid = false;
        if (!violation("record", "rollout has no tokens")) return;
    }
    auto blob_it = blobs_.find(tokens_blob);
    if (blob_it == blobs_.end()) {
        violation("record", "tokens reference unknown or unreadable blob " + tokens_blob);
        return;
    }
    if (!blob_it->second.contains(tokens_offset, token_count)) {
        violation("record", "token offset " + std::to_string(tokens_offset) + " (+" + std::to_string(token_count) +
                                " rows) outside blob " + tokens_blob);
        return;
    }
    trace.logprobs = blob_it->second.floats(tokens_offset, token_count);
    for (std::size_t t = 0; t < trace.token_count(); ++t) {
        if (auto problem = check_token(trace.token(t))) {
            valid = false;
            if (!violation("token", *problem, t)) return;
        }
    }

    json emb;
    try {
        emb = r.at("embeddings");
        if (!emb.is_object()) throw std::runtime_error("embeddings must be an object");
    } catch (const std::exception& e) {
        violation("record", std::string("malformed embeddings: ") + e.what());
        return;
    }
    for (const auto& tag : header_.layer_tags) {
        if (!emb.contains(tag)) {
            valid = false;
            if (!violation("embedding", "missing embedding for layer " + tag)) return;
            continue;
        }
        std::string name;
        std::uint64_t offset = 0;
        try {
            name = emb[tag].at("blob").get<std::string>();
            offset = emb[tag].at("offset").get<std::uint64_t>();
        } catch (const std::exception& e) {
            valid = false;
            if (!violation("embedding", "malformed embedding reference for " + tag)) return;
            continue;
        }
        auto it = blobs_.find(name);
        if (it == blobs_.end() || !it->second.contains(offset, 1)) {
            valid = false;
            if (!violation("embedding", "embedding offset " + std::to_string(offset) + " outside blob " + name)) return;
            continue;
        }
        auto values = it->second.floats(offset, 1);
        if (!std::all_of(values.begin(), values.end(), [](float x) { return std::isfinite(x); })) {
            valid = false;
            if (!violation("embedding", "non-finite embedding value in layer " + tag)) return;
        }
        trace.embeddings.emplace(tag, std::move(values));
    }
    for (const auto& [tag, _] : emb.items()) {
        if (std::find(header_.layer_tags.begin(), header_.layer_tags.end(), tag) == header_.layer_tags.end()) {
            valid = false;
            if (!violation("embedding", "layer " + tag + " not declared in header")) return;
        }
    }
    if (counts) {
        ++counts->rollouts;
        counts->tokens += token_count;
    }
    if (out && valid) out->push_back(std::move(trace));
}

void ManifestScanner::check_blobs_after_records() {
    for (const auto& [name, blob] : blobs_) {
        if (!blob.size_consistent()) {
            if (!report(make_violation("blob", name + ": file size " + std::to_string(blob.file_size()) +
                                                   " inconsistent with header row count"))) {
                return;
            }
        }
        const auto& expected = checksums_[name];
        if (!expected.empty() && blob.checksum() != expected) {
            if (!report(make_violation("blob", name + ": checksum mismatch"))) return;
        }
    }
}

void ManifestScanner::run(std::vector<RolloutTrace>* out, ValidationReport* counts) {
    std::ifstream in(manifest_);
    if (!in) {
        report(make_violation("io", "cannot open manifest " + manifest_.string()));
        return;
    }
    std::string line;
    if (!std::getline(in, line)) {
        report(make_violation("header", "manifest is empty"));
        return;
    }
    if (!parse_header(line) || stopped_) return;
    if (!open_blobs() || stopped_) return;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        scan_record(line, line_no, out, counts);
        if (stopped_) return;
    }
    if (seen_.size() != header_.rollout_count &&
        !report(make_violation("header", "header declares " + std::to_string(header_.rollout_count) +
                                             " rollouts, found " + std::to_string(seen_.size())))) {
        return;
    }
    std::set<std::string> problems;
    for (const auto& [pid, _] : seen_) problems.insert(pid);
    if (problems.size() != header_.problem_count &&
        !report(make_violation("header", "header declares " + std::to_string(header_.problem_count) +
                                             " problems, found " + std::to_string(problems.size())))) {
        return;
    }
    if (counts) counts->problems = problems.size();
    check_blobs_after_records();
}

Dataset group_rollouts(std::vector<RolloutTrace> rollouts) {
    std::sort(rollouts.begin(), rollouts.end(), [](const RolloutTrace& a, const RolloutTrace& b) {
        return std::tie(a.problem_id, a.rollout_id) < std::tie(b.problem_id, b.rollout_id);
    });
    Dataset groups;
    for (auto& r : rollouts) {
        if (groups.empty() || groups.back().problem_id != r.problem_id) {
            groups.push_back(ProblemGroup{r.problem_id, {}});
        }
        groups.back().rollouts.push_back(std::move(r));
    }
    return groups;
}

}  // namespace

const std::vector<float>& RolloutTrace::embedding(const std::string& layer_tag) const {
    auto it = embeddings.find(layer_tag);
    if (it == embeddings.end()) {
        throw UsageError("rollout (" + problem_id + ", " + std::to_string(rollout_id) + ") has no layer '" +
                         layer_tag + "'");
    }
    return it->second;
}

std::string Violation::to_string() const {
    std::ostringstream os;
    os << kind;
    if (line) os << " line " << line;
    if (!problem_id.empty() || rollout_id) {
        os << " (" << problem_id;
        if (rollout_id) os << ", " << *rollout_id;
        os << ")";
    }
    if (token) os << " token " << *token;
    os << ": " << message;
    return os.str();
}

std::string ValidationReport::to_string() const {
    std::ostringstream os;
    os << "problems=" << problems << " rollouts=" << rollouts << " tokens=" << tokens
       << " violations=" << violations.size() << "\n";
    for (const auto& v : violations) os << v.to_string() << "\n";
    return os.str();
}

std::vector<Violation> find_violations(const Dataset& groups) {
    std::vector<Violation> out;
    std::set<std::string> problem_ids;
    std::optional<std::uint32_t> k;
    std::optional<std::size_t> dim;
    std::optional<std::set<std::string>> tags;
    for (const auto& g : groups) {
        if (!problem_ids.insert(g.problem_id).second) {
            out.push_back(make_violation("duplicate", "problem_id appears in two groups", 0, g.problem_id));
        }
        if (g.rollouts.empty()) out.push_back(make_violation("group", "group has no rollouts", 0, g.problem_id));
        std::set<std::uint64_t> ids;
        for (const auto& r : g.rollouts) {
            auto violation = [&](std::string kind, std::string msg, std::optional<std::size_t> token = {}) {
                out.push_back(make_violation(std::move(kind), std::move(msg), 0, r.problem_id, r.rollout_id, token));
            };
            if (r.problem_id != g.problem_id) violation("group", "rollout problem_id differs from its group");
            if (!ids.insert(r.rollout_id).second) violation("duplicate", "duplicate rollout_id within group");
            if (r.label != 0 && r.label != 1) violation("label", "label must be 0 or 1, got " + std::to_string(r.label));
            if (r.k == 0) {
                violation("record", "k must be positive");
                continue;
            }
            if (k && *k != r.k) violation("record", "heterogeneous k across rollouts");
            k = r.k;
            if (r.logprobs.size() % r.k != 0) violation("record", "logprob count is not a multiple of k");
            if (r.token_count() == 0) violation("record", "rollout has no tokens");
            for (std::size_t t = 0; t < r.token_count(); ++t) {
                if (auto problem = check_token(r.token(t))) violation("token", *problem, t);
            }
            std::set<std::string> mine;
            for (const auto& [tag, vec] : r.embeddings) {
                mine.insert(tag);
                if (vec.empty()) violation("embedding", "empty embedding for layer " + tag);
                if (dim && *dim != vec.size()) violation("embedding", "embedding dims differ across the dataset");
                dim = vec.size();
                if (!std::all_of(vec.begin(), vec.end(), [](float x) { return std::isfinite(x); })) {
                    violation("embedding", "non-finite embedding value in layer " + tag);
                }
            }
            if (tags && *tags != mine) violation("embedding", "layer tags differ across rollouts");
            if (!tags) tags = std::move(mine);
        }
    }
    return out;
}

DatasetManifest write_dataset(const Dataset& groups, const fs::path& out_dir, const WriteOptions& options) {
    if (!options.skip_validation) {
        auto violations = find_violations(groups);
        if (!violations.empty()) {
            throw InvariantError("refusing to write invalid dataset: " + violations.front().to_string());
        }
    }
    std::vector<const RolloutTrace*> ordered;
    for (const auto& g : groups) {
        for (const auto& r : g.rollouts) ordered.push_back(&r);
    }
    std::sort(ordered.begin(), ordered.end(), [](const RolloutTrace* a, const RolloutTrace* b) {
        return std::tie(a->problem_id, a->rollout_id) < std::tie(b->problem_id, b->rollout_id);
    });

    DatasetManifest m;
    m.k = ordered.empty() ? options.k : ordered.front()->k;
    m.embedding_dim = options.embedding_dim;
    if (!ordered.empty() && !ordered.front()->embeddings.empty()) {
        m.embedding_dim = static_cast<std::uint32_t>(ordered.front()->embeddings.begin()->second.size());
    }
    if (!ordered.empty()) {
        for (const auto& [tag, _] : ordered.front()->embeddings) m.layer_tags.push_back(tag);
    }
    m.problem_count = groups.size();
    m.rollout_count = ordered.size();
    for (const auto& g : groups) ++m.rollouts_per_problem[g.rollouts.size()];
    m.metadata = options.metadata;

    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

    BlobWriter tokens(out_dir / "logprobs.bin", m.k);
    std::vector<std::unique_ptr<BlobWriter>> emb;
    for (std::size_t i = 0; i < m.layer_tags.size(); ++i) {
        emb.push_back(std::make_unique<BlobWriter>(out_dir / blob_file_name(i), m.embedding_dim));
    }

    std::vector<std::string> lines;
    lines.reserve(ordered.size());
    for (const RolloutTrace* r : ordered) {
        json rec;
        rec["record"] = "rollout";
        rec["problem_id"] = r->problem_id;
        rec["rollout_id"] = r->rollout_id;
        rec["label"] = r->label;
        if (r->final_answer) rec["final_answer"] = *r->final_answer;
        const auto offset = tokens.append(std::span<const float>(r->logprobs));
        rec["tokens"] = {{"blob", "logprobs.bin"}, {"offset", offset}, {"count", r->token_count()}};
        json e = json::object();
        for (std::size_t i = 0; i < m.layer_tags.size(); ++i) {
            const auto& vec = r->embeddings.at(m.layer_tags[i]);
            const auto off = emb[i]->append(std::span<const float>(vec));
            e[m.layer_tags[i]] = {{"blob", blob_file_name(i)}, {"offset", off}};
        }
        rec["embeddings"] = std::move(e);
        lines.push_back(rec.dump());
    }
    tokens.close();
    m.blobs.push_back({"logprobs.bin", "logprobs", "", m.k, tokens.count(), tokens.checksum()});
    for (std::size_t i = 0; i < emb.size(); ++i) {
        emb[i]->close();
        m.blobs.push_back({blob_file_name(i), "embedding", m.layer_tags[i], m.embedding_dim, emb[i]->count(),
                           emb[i]->checksum()});
    }

    json header;
    header["record"] = "header";
    header["format"] = kFormatName;
    header["version"] = kFormatVersion;
    header["k"] = m.k;
    header["embedding_dim"] = m.embedding_dim;
    header["layer_tags"] = m.layer_tags;
    header["problems"] = m.problem_count;
    header["rollouts"] = m.rollout_count;
    json hist = json::object();
    for (const auto& [size, n] : m.rollouts_per_problem) hist[std::to_string(size)] = n;
    header["rollouts_per_problem"] = hist;
    json blobs = json::array();
    for (const auto& b : m.blobs) {
        json jb = {{"name", b.name}, {"role", b.role}, {"dim", b.dim}, {"count", b.count}, {"checksum", b.checksum}};
        if (!b.layer.empty()) jb["layer"] = b.layer;
        blobs.push_back(jb);
    }
    header["blobs"] = blobs;
    header["metadata"] = m.metadata;

    std::ofstream out(out_dir / kManifestName, std::ios::trunc);
    if (!out) throw IoError("cannot write manifest in " + out_dir.string());
    out << header.dump() << "\n";
    for (const auto& l : lines) out << l << "\n";
    out.close();
    if (!out) throw IoError("failed writing manifest in " + out_dir.string());
    return m;
}

Dataset load_dataset(const fs::path& manifest_path) {
    const fs::path path = resolve_manifest(manifest_path);
    if (!fs::exists(path)) throw IoError("manifest not found: " + path.string());
    std::optional<Violation> first;
    ManifestScanner scanner(path, [&](Violation v) {
        first = std::move(v);
        return false;
    });
    std::vector<RolloutTrace> rollouts;
    scanner.run(&rollouts, nullptr);
    if (first) {
        const std::string msg = first->to_string();
        if (first->kind == "io") throw IoError(msg);
        if (first->kind == "format" || first->kind == "blob" || first->kind == "header" || first->kind == "record") {
            throw FormatError(msg);
        }
        throw InvariantError(msg);
    }
    return group_rollouts(std::move(rollouts));
}

DatasetManifest read_manifest(const fs::path& manifest_path) {
    const fs::path path = resolve_manifest(manifest_path);
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest " + path.string());
    std::string line;
    std::getline(in, line);
    try {
        return decode_header(json::parse(line));
    } catch (const std::exception& e) {
        throw FormatError(std::string("malformed manifest header: ") + e.what());
    }
}

ValidationReport validate_dataset(const fs::path& manifest_path) {
    ValidationReport report;
    fs::path path;
    try {
        path = resolve_manifest(manifest_path);
    } catch (const std::exception& e) {
        report.violations.push_back(make_violation("io", e.what()));
        return report;
    }
    ManifestScanner scanner(path, [&](Violation v) {
        report.violations.push_back(std::move(v));
        return true;
    });
    try {
        scanner.run(nullptr, &report);
    } catch (const std::exception& e) {
        report.violations.push_back(make_violation("io", e.what()));
    }
    return report;
}

fs::path resolve_manifest(const fs::path& path) {
    std::error_code ec;
    if (fs::is_directory(path, ec)) return path / kManifestName;
    return path;
}

}  // namespace bestn
