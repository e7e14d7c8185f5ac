#include "bestn/scorer_io.hpp"

#include <fstream>
#include <sstream>

#include "bestn/blob.hpp"
#include "bestn/error.hpp"
#include "bestn/kv_config.hpp"

namespace bestn {

namespace fs = std::filesystem;

namespace {

constexpr const char* kScorerFormat = "bestn-scorer";
constexpr const char* kScorerVersion = "1";

fs::path sibling(const fs::path& header, const std::string& suffix) {
    return header.parent_path() / (header.stem().string() + suffix);
}

std::string join_sizes(const std::vector<std::size_t>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
    return out;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    out.close();
    if (!out) throw IoError("failed writing " + path.string());
}

KvConfig read_header(const fs::path& path) {
    KvConfig kv = KvConfig::read(path);
    if (kv.get_or("format", "") != kScorerFormat) throw FormatError(path.string() + ": not a scorer header");
    if (kv.get_or("version", "") != kScorerVersion) throw FormatError(path.string() + ": unsupported scorer version");
    return kv;
}

}  // namespace

std::vector<fs::path> save_scorer(const TrainedScorer& s, const fs::path& header_path) {
    if (!header_path.parent_path().empty()) fs::create_directories(header_path.parent_path());
    const fs::path blob_path = sibling(header_path, ".bin");
    const fs::path log_path = sibling(header_path, ".log.tsv");

    std::vector<double> row(s.network.params().begin(), s.network.params().end());
    row.insert(row.end(), s.network.buffers().begin(), s.network.buffers().end());
    row.insert(row.end(), s.feature_mean.begin(), s.feature_mean.end());
    row.insert(row.end(), s.feature_scale.begin(), s.feature_scale.end());
    {
        BlobWriter writer(blob_path, static_cast<std::uint32_t>(row.size()), kBlobVersionF64);
        writer.append(std::span<const double>(row));
        writer.close();
    }

    std::ostringstream log;
    log << "epoch\ttrain_loss\tval_loss\tlearning_rate\tbest_val_loss\timproved\n";
    for (const auto& e : s.training_log) {
        log << e.epoch << "\t" << format_double(e.train_loss) << "\t" << format_double(e.val_loss) << "\t"
            << format_double(e.learning_rate) << "\t" << format_double(e.best_val_loss) << "\t" << (e.improved ? 1 : 0)
            << "\n";
    }
    write_text(log_path, log.str());

    std::ostringstream h;
    h << "# learned correctness scorer\n"
      << "format = " << kScorerFormat << "\n"
      << "version = " << kScorerVersion << "\n"
      << "kind = mlp\n"
      << "layer_tag = " << s.layer_tag << "\n"
      << "input_dim = " << s.spec.input_dim << "\n"
      << "hidden_dims = " << join_sizes(s.spec.hidden_dims) << "\n"
      << "dropout = " << format_double(s.spec.dropout) << "\n"
      << "input_dropout = " << format_double(s.spec.input_dropout) << "\n"
      << "use_batch_norm = " << (s.spec.use_batch_norm ? 1 : 0) << "\n"
      << "learning_rate = " << format_double(s.spec.learning_rate) << "\n"
      << "weight_decay = " << format_double(s.spec.weight_decay) << "\n"
      << "batch_size = " << s.spec.batch_size << "\n"
      << "seed = " << s.spec.seed << "\n"
      << "standardize = " << (s.spec.standardize ? 1 : 0) << "\n"
      << "param_count = " << s.network.params().size() << "\n"
      << "buffer_count = " << s.network.buffers().size() << "\n"
      << "feature_count = " << s.feature_mean.size() << "\n"
      << "best_val_loss = " << format_double(s.best_val_loss) << "\n"
      << "best_epoch = " << s.best_epoch << "\n"
      << "epochs = " << s.training_log.size() << "\n"
      << "weights = " << blob_path.filename().string() << "\n"
      << "training_log = " << log_path.filename().string() << "\n";
    write_text(header_path, h.str());
    return {header_path, blob_path, log_path};
}

TrainedScorer load_scorer(const fs::path& header_path) {
    KvConfig kv = read_header(header_path);
    if (kv.require("kind") != "mlp") throw FormatError(header_path.string() + ": not an mlp scorer");
    TrainedScorer s;
    s.layer_tag = kv.require("layer_tag");
    s.spec.input_dim = parse_uint(kv.require("input_dim"), "input_dim");
    s.spec.hidden_dims = parse_size_list(kv.require("hidden_dims"), "hidden_dims");
    s.spec.dropout = parse_double(kv.require("dropout"), "dropout");
    s.spec.input_dropout = parse_double(kv.require("input_dropout"), "input_dropout");
    s.spec.use_batch_norm = parse_bool(kv.require("use_batch_norm"), "use_batch_norm");
    s.spec.learning_rate = parse_double(kv.require("learning_rate"), "learning_rate");
    s.spec.weight_decay = parse_double(kv.require("weight_decay"), "weight_decay");
    s.spec.batch_size = parse_uint(kv.require("batch_size"), "batch_size");
    s.spec.seed = parse_uint(kv.require("seed"), "seed");
    s.spec.standardize = parse_bool(kv.require("standardize"), "standardize");
    s.spec.validate();
    const auto n_params = parse_uint(kv.require("param_count"), "param_count");
    const auto n_buffers = parse_uint(kv.require("buffer_count"), "buffer_count");
    const auto n_features = parse_uint(kv.require("feature_count"), "feature_count");
    s.best_val_loss = parse_double(kv.require("best_val_loss"), "best_val_loss");
    s.best_epoch = parse_uint(kv.require("best_epoch"), "best_epoch");
    const auto epochs = parse_uint(kv.require("epochs"), "epochs");
    const fs::path blob_path = header_path.parent_path() / kv.require("weights");
    const fs::path log_path = header_path.parent_path() / kv.require("training_log");
    kv.reject_unknown();

    s.network = Mlp(s.spec.shape());
    if (s.network.params().size() != n_params || s.network.buffers().size() != n_buffers) {
        throw FormatError(header_path.string() + ": weight counts do not match the architecture");
    }
    const Blob blob = Blob::read(blob_path);
    const auto total = n_params + n_buffers + 2 * n_features;
    if (blob.header().dim != total || blob.header().count != 1 || !blob.size_consistent()) {
        throw FormatError(blob_path.string() + ": unexpected weight blob shape");
    }
    const auto row = blob.doubles(kBlobHeaderSize, 1);
    auto it = row.begin();
    std::copy_n(it, n_params, s.network.params().begin());
    it += static_cast<std::ptrdiff_t>(n_params);
    std::copy_n(it, n_buffers, s.network.buffers().begin());
    it += static_cast<std::ptrdiff_t>(n_buffers);
    s.feature_mean.assign(it, it + static_cast<std::ptrdiff_t>(n_features));
    it += static_cast<std::ptrdiff_t>(n_features);
    s.feature_scale.assign(it, it + static_cast<std::ptrdiff_t>(n_features));

    std::ifstream log(log_path);
    if (!log) throw IoError("cannot read training log " + log_path.string());
    std::string line;
    std::getline(log, line);
    while (std::getline(log, line)) {
        if (line.empty()) continue;
        const auto f = split_list(line, '\t');
        if (f.size() != 6) throw FormatError(log_path.string() + ": malformed log line");
        EpochLog e;
        e.epoch = parse_uint(f[0], "epoch");
        e.train_loss = parse_double(f[1], "train_loss");
        e.val_loss = parse_double(f[2], "val_loss");
        e.learning_rate = parse_double(f[3], "learning_rate");
        e.best_val_loss = parse_double(f[4], "best_val_loss");
        e.improved = parse_bool(f[5], "improved");
        s.training_log.push_back(e);
    }
    if (s.training_log.size() != epochs) throw FormatError(log_path.string() + ": epoch count mismatch");
    return s;
}

std::vector<fs::path> save_ensemble(const EnsembleScorer& e, const fs::path& header_path) {
    if (e.members.size() != e.alphas.size()) throw UsageError("ensemble members and weights differ in length");
    if (!header_path.parent_path().empty()) fs::create_directories(header_path.parent_path());
    std::vector<fs::path> written;
    std::ostringstream h;
    h << "# convex ensemble of per-layer scorers\n"
      << "format = " << kScorerFormat << "\n"
      << "version = " << kScorerVersion << "\n"
      << "kind = ensemble\n"
      << "members = " << e.members.size() << "\n";
    for (std::size_t t = 0; t < e.members.size(); ++t) {
        const fs::path member = sibling(header_path, ".m" + std::to_string(t) + ".txt");
        auto files = save_scorer(e.members[t], member);
        written.insert(written.end(), files.begin(), files.end());
        h << "member." << t << " = " << member.filename().string() << "\n"
          << "alpha." << t << " = " << format_double(e.alphas[t]) << "\n";
    }
    write_text(header_path, h.str());
    written.insert(written.begin(), header_path);
    return written;
}

EnsembleScorer load_ensemble(const fs::path& header_path) {
    KvConfig kv = read_header(header_path);
    if (kv.require("kind") != "ensemble") throw FormatError(header_path.string() + ": not an ensemble");
    EnsembleScorer e;
    const auto n = parse_uint(kv.require("members"), "members");
    for (std::size_t t = 0; t < n; ++t) {
        e.members.push_back(load_scorer(header_path.parent_path() / kv.require("member." + std::to_string(t))));
        e.alphas.push_back(parse_double(kv.require("alpha." + std::to_string(t)), "alpha"));
    }
    kv.reject_unknown();
    return e;
}

std::shared_ptr<const RolloutScorer> load_any_scorer(const fs::path& header_path) {
    const std::string kind = read_header(header_path).get_or("kind", "");
    if (kind == "mlp") return std::make_shared<TrainedScorer>(load_scorer(header_path));
    if (kind == "ensemble") return std::make_shared<EnsembleScorer>(load_ensemble(header_path));
    throw FormatError(header_path.string() + ": unknown scorer kind '" + kind + "'");
}

}  // namespace bestn
