#include "mlcil/dataio.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "mlcil/errors.hpp"
#include "mlcil/rng.hpp"

namespace mlcil {

namespace {

using ordered_json = nlohmann::ordered_json;

void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

void put_f64(std::string& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u64(out, bits);
}

// bounds-checked little-endian reader
class Cursor {
  public:
    Cursor(const std::string& bytes, const std::string& what) : b_(bytes), what_(what) {}

    std::uint16_t u16() { return static_cast<std::uint16_t>(byte() | (byte() << 8)); }

    std::uint32_t u32() {
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(byte()) << (8 * i);
        return v;
    }

    std::uint64_t u64() {
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(byte()) << (8 * i);
        return v;
    }

    float f32() {
        std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }

    double f64() {
        std::uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }

    std::string bytes(std::size_t n) {
        require_data(off_ + n <= b_.size(), what_ + ": truncated file");
        std::string s = b_.substr(off_, n);
        off_ += n;
        return s;
    }

    std::size_t remaining() const { return b_.size() - off_; }

  private:
    std::uint32_t byte() {
        require_data(off_ < b_.size(), what_ + ": truncated file");
        return static_cast<unsigned char>(b_[off_++]);
    }

    const std::string& b_;
    std::string what_;
    std::size_t off_ = 0;
};

constexpr std::uint16_t kFeatureVersion = 1;
constexpr std::uint16_t kCheckpointVersion = 1;

}  // namespace

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require_data(in.good(), "cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void atomic_write_file(const std::string& path, const std::string& bytes) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        require_data(out.good(), "cannot write '" + tmp + "'");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        require_data(out.good(), "short write to '" + tmp + "'");
    }
    require_data(std::rename(tmp.c_str(), path.c_str()) == 0,
                 "cannot move '" + tmp + "' into place");
}

std::uint64_t file_hash(const std::string& path) {
    const std::string bytes = read_file(path);
    return fnv1a(bytes.data(), bytes.size());
}

// ---- features ----------------------------------------------------------------

void write_features(const std::string& path, const Tensor& features) {
    require(features.defined() && features.rank() == 3, "write_features: need [N, L, D]");
    const std::size_t n = features.dim(0), l = features.dim(1), d = features.dim(2);
    require_data(n <= 0xffffffffULL && l <= 0xffffULL && d <= 0xffffULL,
                 "write_features: dimensions exceed the format");
    std::string out;
    out.reserve(14 + 4 * features.size());
    out += "CLF1";
    put_u16(out, kFeatureVersion);
    put_u32(out, static_cast<std::uint32_t>(n));
    put_u16(out, static_cast<std::uint16_t>(l));
    put_u16(out, static_cast<std::uint16_t>(d));
    for (double v : features.data()) put_f32(out, static_cast<float>(v));
    atomic_write_file(path, out);
}

Tensor read_features(const std::string& path) {
    const std::string bytes = read_file(path);
    Cursor cur(bytes, "features '" + path + "'");
    require_data(cur.bytes(4) == "CLF1", "features '" + path + "': bad magic");
    require_data(cur.u16() == kFeatureVersion, "features '" + path + "': unsupported version");
    const std::size_t n = cur.u32();
    const std::size_t l = cur.u16();
    const std::size_t d = cur.u16();
    require_data(n > 0 && l > 0 && d > 0, "features '" + path + "': empty dimensions");
    require_data(bytes.size() == 14 + 4 * n * l * d,
                 "features '" + path + "': length does not match header");
    std::vector<double> values(n * l * d);
    for (auto& v : values) v = static_cast<double>(cur.f32());
    return Tensor::from_data({n, l, d}, std::move(values));
}

// ---- annotations ---------------------------------------------------------------

void write_annotations(const std::string& path, const Annotations& ann) {
    std::string out;
    for (std::size_t i = 0; i < ann.size(); ++i) {
        out += std::to_string(i);
        for (auto c : ann[i]) out += " " + std::to_string(c);
        out += "\n";
    }
    atomic_write_file(path, out);
}

Annotations read_annotations(const std::string& path) {
    std::istringstream in(read_file(path));
    Annotations ann;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ls(line);
        long long id = -1;
        require_data(static_cast<bool>(ls >> id) && id == static_cast<long long>(ann.size()),
                     "annotations '" + path + "' line " + std::to_string(lineno) +
                         ": ids must be consecutive from 0");
        std::vector<std::size_t> classes;
        long long c;
        while (ls >> c) {
            require_data(c >= 0, "annotations '" + path + "' line " + std::to_string(lineno) +
                                     ": negative class");
            classes.push_back(static_cast<std::size_t>(c));
        }
        require_data(ls.eof(), "annotations '" + path + "' line " + std::to_string(lineno) +
                                   ": trailing garbage");
        ann.push_back(std::move(classes));
    }
    return ann;
}

// ---- checkpoints ----------------------------------------------------------------

void save_checkpoint(const std::string& path, const IncrementalModel& model,
                     std::size_t session) {
    ordered_json meta;
    meta["kind"] = model.kind();
    const CinetConfig& cfg = model.kind() == "cinet"
                                 ? static_cast<const CinetModel&>(model).config()
                                 : static_cast<const BaselineModel&>(model).config();
    meta["feature_dim"] = cfg.feature_dim;
    meta["model_dim"] = cfg.model_dim;
    meta["heads"] = cfg.heads;
    meta["proj_dim"] = cfg.proj_dim;
    meta["token_init"] = cfg.token_init;
    meta["session"] = session;
    meta["session_classes"] = model.session_classes();
    ordered_json trainable = ordered_json::object();
    for (const auto& [name, e] : model.params().entries()) trainable[name] = e.trainable;
    meta["trainable"] = trainable;
    const std::string meta_str = meta.dump();

    std::string out;
    out += "CLC1";
    put_u16(out, kCheckpointVersion);
    put_u32(out, static_cast<std::uint32_t>(meta_str.size()));
    out += meta_str;
    put_u32(out, static_cast<std::uint32_t>(model.params().size()));
    for (const auto& [name, e] : model.params().entries()) {
        put_u16(out, static_cast<std::uint16_t>(name.size()));
        out += name;
        const Tensor& t = e.tensor;
        out.push_back(static_cast<char>(t.rank()));
        for (std::size_t i = 0; i < t.rank(); ++i)
            put_u32(out, static_cast<std::uint32_t>(t.dim(i)));
        for (double v : t.data()) put_f64(out, v);
    }
    atomic_write_file(path, out);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    const std::string bytes = read_file(path);
    Cursor cur(bytes, "checkpoint '" + path + "'");
    require_data(cur.bytes(4) == "CLC1", "checkpoint '" + path + "': bad magic");
    require_data(cur.u16() == kCheckpointVersion,
                 "checkpoint '" + path + "': unsupported version");
    const std::size_t meta_len = cur.u32();
    ordered_json meta;
    try {
        meta = ordered_json::parse(cur.bytes(meta_len));
    } catch (const std::exception& e) {
        throw DataError("checkpoint '" + path + "': bad metadata: " + e.what());
    }

    CinetConfig cfg;
    LoadedCheckpoint out;
    std::string kind;
    std::vector<std::size_t> session_classes;
    try {
        kind = meta.at("kind").get<std::string>();
        cfg.feature_dim = meta.at("feature_dim").get<std::size_t>();
        cfg.model_dim = meta.at("model_dim").get<std::size_t>();
        cfg.heads = meta.at("heads").get<std::size_t>();
        cfg.proj_dim = meta.at("proj_dim").get<std::size_t>();
        cfg.token_init = meta.at("token_init").get<double>();
        out.session = meta.at("session").get<std::size_t>();
        session_classes = meta.at("session_classes").get<std::vector<std::size_t>>();
    } catch (const std::exception& e) {
        throw DataError("checkpoint '" + path + "': missing metadata: " + e.what());
    }

    std::unique_ptr<IncrementalModel> model;
    try {
        model = make_model(kind, cfg, session_classes, 0);
    } catch (const std::invalid_argument& e) {
        throw DataError("checkpoint '" + path + "': " + e.what());
    }

    const std::size_t count = cur.u32();
    require_data(count == model->params().size(),
                 "checkpoint '" + path + "': tensor count does not match topology");
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t name_len = cur.u16();
        const std::string name = cur.bytes(name_len);
        require_data(model->params().has(name),
                     "checkpoint '" + path + "': unknown tensor '" + name + "'");
        Tensor& t = model->params().get(name);
        const std::size_t rank = static_cast<unsigned char>(cur.bytes(1)[0]);
        Shape shape(rank);
        for (auto& d : shape) d = cur.u32();
        require_data(shape == t.shape(), "checkpoint '" + path + "': tensor '" + name +
                                             "' has shape " + shape_str(shape) + ", expected " +
                                             shape_str(t.shape()));
        for (auto& v : t.data()) v = cur.f64();
    }
    require_data(cur.remaining() == 0, "checkpoint '" + path + "': trailing bytes");

    const auto& trainable = meta.at("trainable");
    for (auto& [name, e] : model->params().entries()) {
        require_data(trainable.contains(name),
                     "checkpoint '" + path + "': no trainable flag for '" + name + "'");
        e.trainable = trainable.at(name).get<bool>();
    }
    out.model = std::move(model);
    return out;
}

// ---- synthetic stream -------------------------------------------------------------

GeneratedData generate_stream(const GenConfig& cfg) {
    require_data(cfg.classes >= 2, "generate_stream: need at least two classes");
    require_data(cfg.train_per_class > 0 && cfg.test_per_class > 0,
                 "generate_stream: per-class sample counts must be positive");
    require_data(cfg.feature_dim > 0 && cfg.patches > 0 && cfg.signal_patches > 0,
                 "generate_stream: dimensions must be positive");
    const std::size_t max_labels = cfg.co_rate > 0.0 ? 2 : 1;
    require_data(cfg.signal_patches * max_labels <= cfg.patches,
                 "generate_stream: patches cannot hold " + std::to_string(max_labels) +
                     " label slots of " + std::to_string(cfg.signal_patches));
    require_data(cfg.co_rate >= 0.0 && cfg.co_rate <= 1.0,
                 "generate_stream: co_rate must be in [0, 1]");

    const std::size_t D = cfg.feature_dim, L = cfg.patches, C = cfg.classes;

    // unit prototype per class
    Rng proto_rng(mix_seed(cfg.seed, fnv1a("prototypes")));
    std::vector<std::vector<double>> proto(C, std::vector<double>(D));
    for (auto& p : proto) {
        double n2 = 0.0;
        for (auto& v : p) {
            v = proto_rng.normal();
            n2 += v * v;
        }
        const double inv = 1.0 / std::sqrt(n2);
        for (auto& v : p) v *= inv;
    }

    struct Raw {
        std::vector<double> patches;
        std::vector<std::size_t> labels;
    };

    GeneratedData out;
    out.classes = C;
    std::vector<double> train_feat, test_feat;
    for (std::size_t k = 0; k < C; ++k) {
        Rng rng(mix_seed(cfg.seed, fnv1a("class" + std::to_string(k))));
        const std::size_t total = cfg.train_per_class + cfg.test_per_class;
        std::vector<Raw> rows(total);
        for (auto& row : rows) {
            row.labels.push_back(k);
            if (rng.uniform() < cfg.co_rate) {
                std::size_t extra = rng.integer(C - 1);
                if (extra >= k) ++extra;  // distinct from the origin class
                row.labels.push_back(extra);
            }
            row.patches.assign(L * D, 0.0);
            for (auto& v : row.patches) v = rng.normal(cfg.noise_std);
            // each label claims its own patch slots
            auto slots = rng.sample_without_replacement(L, cfg.signal_patches * row.labels.size());
            for (std::size_t li = 0; li < row.labels.size(); ++li) {
                const auto& p = proto[row.labels[li]];
                for (std::size_t s = 0; s < cfg.signal_patches; ++s) {
                    double* dst = row.patches.data() + slots[li * cfg.signal_patches + s] * D;
                    for (std::size_t d = 0; d < D; ++d) dst[d] += p[d];
                }
            }
        }
        rng.shuffle(rows);
        for (std::size_t i = 0; i < total; ++i) {
            auto& dst_feat = i < cfg.train_per_class ? train_feat : test_feat;
            auto& dst_lab = i < cfg.train_per_class ? out.train.labels : out.test.labels;
            dst_feat.insert(dst_feat.end(), rows[i].patches.begin(), rows[i].patches.end());
            dst_lab.push_back(rows[i].labels);
        }
    }

    out.train.features =
        Tensor::from_data({C * cfg.train_per_class, L, D}, std::move(train_feat));
    out.test.features = Tensor::from_data({C * cfg.test_per_class, L, D}, std::move(test_feat));
    return out;
}

}  // namespace mlcil
