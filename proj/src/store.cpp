#include "tilesearch/store.hpp"

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <fstream>
#include <sstream>

#include "tilesearch/error.hpp"

namespace tilesearch {

namespace fs = std::filesystem;

StorePaths StorePaths::for_base(const fs::path& base) {
    const std::string b = base.string();
    return {b + ".feat", b + ".ids", b + ".meta", b + ".lsh", b + ".scenes.json", b + ".thumbs", b + ".ckpt"};
}

/// Read-only private mapping of a whole file.
class MappedFile {
public:
    explicit MappedFile(const fs::path& path) {
        fd_ = ::open(path.c_str(), O_RDONLY | O_CLOEXEC);
        if (fd_ < 0) {
            throw Error(ErrorCode::kIo, "cannot open " + path.string() + ": " + std::strerror(errno));
        }
        struct stat st {};
        if (::fstat(fd_, &st) != 0) {
            ::close(fd_);
            throw Error(ErrorCode::kIo, "cannot stat " + path.string());
        }
        size_ = static_cast<std::size_t>(st.st_size);
        if (size_ > 0) {
            data_ = ::mmap(nullptr, size_, PROT_READ, MAP_PRIVATE, fd_, 0);
            if (data_ == MAP_FAILED) {
                ::close(fd_);
                throw Error(ErrorCode::kIo, "cannot map " + path.string() + ": " + std::strerror(errno));
            }
        }
    }
    MappedFile(const MappedFile&) = delete;
    MappedFile& operator=(const MappedFile&) = delete;
    ~MappedFile() {
        if (data_ && data_ != MAP_FAILED) ::munmap(data_, size_);
        if (fd_ >= 0) ::close(fd_);
    }

    const std::uint8_t* data() const { return static_cast<const std::uint8_t*>(data_); }
    std::size_t size() const { return size_; }

private:
    int fd_ = -1;
    void* data_ = nullptr;
    std::size_t size_ = 0;
};

void write_file_atomic(const fs::path& path, std::span<const std::uint8_t> data) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorCode::kIo, "cannot create " + tmp.string());
        out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
        out.flush();
        if (!out) throw Error(ErrorCode::kIo, "write failed on " + tmp.string());
    }
    fs::rename(tmp, path);
}

namespace {

void write_text_atomic(const fs::path& path, const std::string& text) {
    write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

constexpr std::string_view kMetaTag = "tilesearch-store";
constexpr int kMetaVersion = 1;

struct StoreMeta {
    int version = 0;
    std::uint64_t count = 0;
    std::uint64_t bits = 0;
};

StoreMeta read_meta(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
    std::string tag;
    in >> tag;
    if (tag != kMetaTag) throw Error(ErrorCode::kCorruptFile, path.string() + ": not a store meta file");
    StoreMeta meta;
    std::string key;
    bool have_version = false, have_count = false, have_bits = false;
    while (in >> key) {
        if (key == "version") {
            have_version = static_cast<bool>(in >> meta.version);
        } else if (key == "count") {
            have_count = static_cast<bool>(in >> meta.count);
        } else if (key == "bits") {
            have_bits = static_cast<bool>(in >> meta.bits);
        } else {
            std::string ignored;
            in >> ignored;
        }
    }
    if (!have_version || !have_count || !have_bits) {
        throw Error(ErrorCode::kCorruptFile, path.string() + ": incomplete meta file");
    }
    return meta;
}

std::uint64_t mix64(std::uint64_t x) {
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ULL;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebULL;
    x ^= x >> 31;
    return x;
}

} // namespace

FeatureStore::FeatureStore() = default;
FeatureStore::FeatureStore(FeatureStore&&) noexcept = default;
FeatureStore& FeatureStore::operator=(FeatureStore&&) noexcept = default;
FeatureStore::~FeatureStore() = default;

void FeatureStore::index_ids() {
    rows_.clear();
    rows_.reserve(ids_.size());
    for (std::size_t i = 0; i < ids_.size(); ++i) {
        if (!rows_.emplace(ids_[i], static_cast<std::uint32_t>(i)).second) {
            throw Error(ErrorCode::kDuplicateId, "duplicate tile id '" + ids_[i] + "'");
        }
    }
}

FeatureStore FeatureStore::open(const fs::path& base) {
    const auto paths = StorePaths::for_base(base);
    const StoreMeta meta = read_meta(paths.meta);
    if (meta.version != kMetaVersion) {
        throw Error(ErrorCode::kCorruptFile, paths.meta.string() + ": unsupported version");
    }
    if (meta.bits != kFeatureBits) {
        throw Error(ErrorCode::kCorruptFile, paths.meta.string() + ": vector width is not 512 bits");
    }

    FeatureStore store;
    store.base_ = base;
    store.mapping_ = std::make_unique<MappedFile>(paths.feat);
    const std::size_t bytes = store.mapping_->size();
    if (bytes % kFeatureBytes != 0) {
        throw Error(ErrorCode::kCorruptFile, paths.feat.string() + ": length " + std::to_string(bytes) +
                                                 " is not a multiple of 64");
    }
    const std::size_t n = bytes / kFeatureBytes;
    if (n != meta.count) {
        throw Error(ErrorCode::kCorruptFile, paths.feat.string() + ": holds " + std::to_string(n) +
                                                 " vectors but meta declares " + std::to_string(meta.count));
    }
    if (n > 0) {
        // mmap returns page-aligned memory, which satisfies alignof(BinaryFeature).
        store.vectors_ = std::span(reinterpret_cast<const BinaryFeature*>(store.mapping_->data()), n);
    }

    std::ifstream in(paths.ids);
    if (!in) throw Error(ErrorCode::kIo, "cannot open " + paths.ids.string());
    store.ids_.reserve(n);
    std::string line;
    while (std::getline(in, line)) {
        store.ids_.push_back(line);
    }
    if (store.ids_.size() != n) {
        throw Error(ErrorCode::kCorruptFile, paths.ids.string() + ": " + std::to_string(store.ids_.size()) +
                                                 " ids for " + std::to_string(n) + " vectors");
    }
    store.index_ids();
    return store;
}

FeatureStore FeatureStore::from_memory(std::vector<std::string> ids, std::vector<BinaryFeature> vectors) {
    if (ids.size() != vectors.size()) {
        throw Error(ErrorCode::kLengthMismatch, "id and vector counts differ");
    }
    FeatureStore store;
    store.ids_ = std::move(ids);
    store.owned_ = std::move(vectors);
    store.vectors_ = store.owned_;
    store.index_ids();
    return store;
}

std::optional<std::uint32_t> FeatureStore::find(std::string_view id) const {
    auto it = rows_.find(std::string(id));
    if (it == rows_.end()) return std::nullopt;
    return it->second;
}

std::uint32_t FeatureStore::row_of(std::string_view id) const {
    if (auto row = find(id)) return *row;
    throw Error(ErrorCode::kNotFound, "unknown tile id '" + std::string(id) + "'");
}

std::uint64_t FeatureStore::fingerprint() const {
    std::uint64_t h = mix64(vectors_.size() + 0x9e3779b97f4a7c15ULL);
    for (const auto& v : vectors_) {
        for (auto w : v.words) {
            h = mix64(h ^ w) + 0x9e3779b97f4a7c15ULL;
        }
    }
    return h;
}

void FeatureStoreBuilder::put(std::string id, const BinaryFeature& v) {
    if (sealed_) throw Error(ErrorCode::kSealed, "store is sealed");
    if (id.empty() || id.find('\n') != std::string::npos || id.find('\r') != std::string::npos) {
        throw Error(ErrorCode::kInvalidArgument, "tile id must be a non-empty single line");
    }
    const auto row = static_cast<std::uint32_t>(ids_.size());
    auto [it, inserted] = rows_.emplace(id, row);
    if (!inserted) throw Error(ErrorCode::kDuplicateId, "duplicate tile id '" + id + "'");
    ids_.push_back(std::move(id));
    vectors_.push_back(v);
}

const BinaryFeature& FeatureStoreBuilder::get(std::string_view id) const {
    auto it = rows_.find(std::string(id));
    if (it == rows_.end()) throw Error(ErrorCode::kNotFound, "unknown tile id '" + std::string(id) + "'");
    return vectors_[it->second];
}

FeatureStore FeatureStoreBuilder::seal(const fs::path& base) {
    if (sealed_) throw Error(ErrorCode::kSealed, "store is already sealed");
    const auto paths = StorePaths::for_base(base);
    if (base.has_parent_path()) fs::create_directories(base.parent_path());

    write_file_atomic(paths.feat,
                      std::span(reinterpret_cast<const std::uint8_t*>(vectors_.data()),
                                vectors_.size() * kFeatureBytes));
    std::string ids_text;
    for (const auto& id : ids_) {
        ids_text += id;
        ids_text += '\n';
    }
    write_text_atomic(paths.ids, ids_text);
    std::ostringstream meta;
    meta << kMetaTag << "\nversion " << kMetaVersion << "\ncount " << ids_.size() << "\nbits " << kFeatureBits
         << '\n';
    write_text_atomic(paths.meta, meta.str());

    sealed_ = true;
    rows_.clear();
    FeatureStore store = FeatureStore::from_memory(std::move(ids_), std::move(vectors_));
    store.base_ = base;
    ids_.clear();
    vectors_.clear();
    return store;
}

} // namespace tilesearch
