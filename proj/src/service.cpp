// SPDX-License-Identifier: Apache-2.0
#include "effortvae/service.hpp"

#include <cstdlib>

#include <httplib.h>

#include "effortvae/error.hpp"

namespace effortvae {

using nlohmann::json;

namespace {

Reply error_reply(int status, const std::string& code, const std::string& message) {
    return {status, {{"schema_version", kSchemaVersion}, {"error", {{"code", code}, {"message", message}}}}};
}

Reply ok(int status, json body) {
    body["schema_version"] = kSchemaVersion;
    return {status, std::move(body)};
}

std::optional<long long> parse_int(const std::string& s) {
    if (s.empty() || s.size() > 18) return std::nullopt;
    std::size_t i = s[0] == '-' ? 1 : 0;
    if (i == s.size()) return std::nullopt;
    long long v = 0;
    for (; i < s.size(); ++i) {
        if (s[i] < '0' || s[i] > '9') return std::nullopt;
        v = v * 10 + (s[i] - '0');
    }
    return s[0] == '-' ? -v : v;
}

json frames_json(const std::vector<Pose>& poses) {
    json frames = json::array();
    for (const auto& p : poses) {
        json joints = json::array();
        for (const auto& j : p.joints) joints.push_back({j[0], j[1], j[2]});
        frames.push_back(std::move(joints));
    }
    return frames;
}

json skeleton_json(std::span<const Edge> edges) {
    json out = json::array();
    for (const auto& [a, b] : edges) out.push_back({a, b});
    return out;
}

json label_stats(const LabelTable& table) {
    const ClassHistogram h = class_histogram(table);
    json by_source = json::object();
    for (auto s : {LabelSource::Manual, LabelSource::BetweenFill, LabelSource::Dilation})
        by_source[to_string(s)] = table.count(s);
    return {{"counts", h.counts},
            {"total", h.total},
            {"fractions", h.fractions ? json(*h.fractions) : json(nullptr)},
            {"by_source", std::move(by_source)}};
}

json record_json(const LabelRecord& r) {
    return {{"clip", r.clip_id},     {"start", r.start_frame},           {"len", r.seq_len},
            {"label", r.label},      {"source", to_string(r.source)},    {"created_at", r.created_at}};
}

std::optional<std::size_t> env_size(const char* name) {
    const char* v = std::getenv(name);
    if (!v) return std::nullopt;
    const auto n = parse_int(v);
    if (!n || *n < 0) throw ConfigError(std::string(name) + " must be a non-negative integer");
    return static_cast<std::size_t>(*n);
}

}  // namespace

json dataset_summary(std::span<const MotionClip> clips, std::size_t window, std::size_t stride, const LabelTable* labels) {
    const WindowIndex windows(clips, window, stride);
    json per_clip = json::array();
    std::size_t frames = 0;
    for (const auto& c : clips) {
        per_clip.push_back({{"id", c.id}, {"frames", c.frame_count()}, {"windows", windows.count(c.id)}});
        frames += c.frame_count();
    }
    json out = {{"clips", std::move(per_clip)},
                {"clip_count", clips.size()},
                {"frames", frames},
                {"J", clips.empty() ? 0 : clips.front().joint_count()},
                {"fps", clips.empty() ? 0.0 : clips.front().fps},
                {"T", window},
                {"stride", stride},
                {"window_count", windows.total()}};
    out["label_stats"] = labels ? label_stats(*labels) : json(nullptr);
    return out;
}

void ServiceConfig::apply_env() {
    if (const char* h = std::getenv("EFFORT_HOST")) host = h;
    if (auto p = env_size("EFFORT_PORT")) port = static_cast<int>(*p);
    if (auto w = env_size("EFFORT_WINDOW")) window = *w;
    if (auto s = env_size("EFFORT_STRIDE")) stride = *s;
    if (auto k = env_size("EFFORT_CLASSES")) classes = static_cast<int>(*k);
    if (auto m = env_size("EFFORT_MAX_GENERATE")) max_generate = *m;
}

Service::FifoGate::Ticket::Ticket(FifoGate& gate) : gate_(gate) {
    std::unique_lock lock(gate_.mutex_);
    const std::uint64_t mine = gate_.next_ticket_++;
    gate_.cv_.wait(lock, [&] { return gate_.serving_ == mine; });
}

Service::FifoGate::Ticket::~Ticket() {
    {
        std::lock_guard lock(gate_.mutex_);
        ++gate_.serving_;
    }
    gate_.cv_.notify_all();
}

Service::Service(ServiceConfig config) : config_(std::move(config)) {
    if (config_.window < 2) throw ConfigError("service window must be >= 2");
    if (config_.stride < 1) throw ConfigError("service stride must be >= 1");
    if (config_.classes < 2) throw ConfigError("service needs at least 2 classes");
}

Service::~Service() { stop(); }

void Service::load_dataset(std::vector<MotionClip> clips) {
    auto d = std::make_shared<Dataset>();
    for (const auto& c : clips) c.validate();
    d->windows = WindowIndex(clips, config_.window, config_.stride);
    for (std::size_t i = 0; i < clips.size(); ++i) d->by_id[clips[i].id] = i;
    d->clips = std::move(clips);
    std::lock_guard lock(state_mutex_);
    if (dataset_) throw PreconditionError("a dataset is already loaded");
    dataset_ = std::move(d);
}

void Service::open_labels(const std::filesystem::path& csv) {
    auto store = std::make_unique<LabelStore>(csv, config_.classes, config_.window);
    std::lock_guard lock(state_mutex_);
    labels_ = std::move(store);
}

void Service::load_model(Model model, LatentAtlas atlas, std::string checkpoint_hash) {
    if (model.config().classes != config_.classes) throw ConfigError("model class count differs from the service's");
    auto l = std::make_shared<Loaded>(Loaded{std::move(model), std::move(atlas), std::move(checkpoint_hash), {}});
    l->atlas_hash = l->atlas.hash();
    std::lock_guard lock(state_mutex_);
    model_ = std::move(l);
}

Reply Service::handle(const std::string& method, const std::string& path,
                      const std::map<std::string, std::string>& query, const std::string& body) {
    try {
        if (path == "/api/dataset/info") {
            if (method != "GET") return error_reply(405, "method_not_allowed", "use GET");
            return dataset_info();
        }
        if (path == "/api/sequence") {
            if (method != "GET") return error_reply(405, "method_not_allowed", "use GET");
            return sequence(query);
        }
        if (path == "/api/label") {
            if (method != "POST") return error_reply(405, "method_not_allowed", "use POST");
            return post_label(body);
        }
        if (path == "/api/generate") {
            if (method != "POST") return error_reply(405, "method_not_allowed", "use POST");
            return generate(body);
        }
        return error_reply(404, "not_found", "no route for " + path);
    } catch (const json::exception& e) {
        return error_reply(400, "bad_request", e.what());
    } catch (const ConflictError& e) {
        return error_reply(409, "conflict", e.what());
    } catch (const PreconditionError& e) {
        return error_reply(400, "bad_request", e.what());
    } catch (const std::exception& e) {
        return error_reply(500, "internal", e.what());
    }
}

Reply Service::dataset_info() const {
    std::shared_ptr<const Dataset> d;
    LabelStore* store = nullptr;
    {
        std::lock_guard lock(state_mutex_);
        d = dataset_;
        store = labels_.get();
    }
    if (!d) return error_reply(503, "no_dataset", "no dataset loaded");
    std::shared_ptr<const LabelTable> table = store ? store->snapshot() : nullptr;
    return ok(200, dataset_summary(d->clips, config_.window, config_.stride, table.get()));
}

Reply Service::sequence(const std::map<std::string, std::string>& query) const {
    std::shared_ptr<const Dataset> d;
    {
        std::lock_guard lock(state_mutex_);
        d = dataset_;
    }
    if (!d) return error_reply(503, "no_dataset", "no dataset loaded");
    const auto clip_it = query.find("clip");
    if (clip_it == query.end()) return error_reply(400, "bad_request", "missing 'clip'");
    const auto it = d->by_id.find(clip_it->second);
    if (it == d->by_id.end()) return error_reply(404, "unknown_clip", "no clip '" + clip_it->second + "'");
    const MotionClip& clip = d->clips[it->second];

    auto get = [&](const char* key, long long fallback) -> std::optional<long long> {
        const auto q = query.find(key);
        return q == query.end() ? std::optional(fallback) : parse_int(q->second);
    };
    const auto start = get("start", 0);
    const auto len = get("len", static_cast<long long>(config_.window));
    if (!start || !len) return error_reply(400, "bad_request", "start and len must be integers");
    const auto n = static_cast<long long>(clip.frame_count());
    if (*start < 0 || *len < 1 || *start + *len > n)
        return error_reply(416, "out_of_range",
                           "frames [" + std::to_string(*start) + ", " + std::to_string(*start + *len) +
                               ") outside clip of " + std::to_string(n) + " frames");
    const std::vector<Pose> poses(clip.frames.begin() + *start, clip.frames.begin() + *start + *len);
    return ok(200, {{"clip", clip.id},
                    {"start", *start},
                    {"len", *len},
                    {"J", clip.joint_count()},
                    {"fps", clip.fps},
                    {"frames", frames_json(poses)},
                    {"skeleton", skeleton_json(clip.skeleton)}});
}

Reply Service::post_label(const std::string& body) {
    std::shared_ptr<const Dataset> d;
    LabelStore* store = nullptr;
    {
        std::lock_guard lock(state_mutex_);
        d = dataset_;
        store = labels_.get();
    }
    if (!d) return error_reply(503, "no_dataset", "no dataset loaded");
    if (!store) return error_reply(503, "no_label_store", "no label store open");

    const json req = json::parse(body);
    if (!req.is_object()) return error_reply(400, "bad_request", "body must be a JSON object");
    const std::string clip = req.at("clip").get<std::string>();
    const auto start = req.at("start").get<long long>();
    const auto len = req.value("len", static_cast<long long>(config_.window));
    int label = -1;
    const json& l = req.at("label");
    if (l.is_number_integer()) {
        label = l.get<int>();
    } else if (l.is_string()) {
        try {
            label = LabelNames(config_.classes).parse(l.get<std::string>());
        } catch (const Error&) {
            label = -1;
        }
    }
    if (label < 0 || label >= config_.classes)
        return error_reply(400, "invalid_label", "label must be in [0, " + std::to_string(config_.classes) + ")");
    if (len != static_cast<long long>(config_.window))
        return error_reply(400, "bad_request", "len must equal the window length " + std::to_string(config_.window));
    if (!d->by_id.count(clip)) return error_reply(404, "unknown_clip", "no clip '" + clip + "'");
    if (start < 0 || !d->windows.contains(clip, static_cast<std::size_t>(start)))
        return error_reply(416, "out_of_range", "no window starts at " + clip + ":" + std::to_string(start));

    LabelRecord rec{clip, static_cast<std::size_t>(start), config_.window, label, LabelSource::Manual, {}};
    const auto result = store->save(std::move(rec), req.value("overwrite", false), &d->windows);
    json out = record_json(result.record);
    out["replaced"] = result.replaced;
    if (req.contains("annotator")) out["annotator"] = req.at("annotator");
    return ok(result.replaced ? 200 : 201, {{"record", std::move(out)}});
}

Reply Service::generate(const std::string& body) {
    std::shared_ptr<const Loaded> m;
    std::shared_ptr<const Dataset> d;
    {
        std::lock_guard lock(state_mutex_);
        m = model_;
        d = dataset_;
    }
    if (!m) return error_reply(503, "no_model", "no checkpoint loaded");
    const json req = body.empty() ? json::object() : json::parse(body);
    if (!req.is_object()) return error_reply(400, "bad_request", "body must be a JSON object");
    int label = -1;
    const LabelNames names(config_.classes);
    const json& l = req.at("label");
    if (l.is_number_integer()) {
        label = l.get<int>();
    } else if (l.is_string()) {
        try {
            label = names.parse(l.get<std::string>());
        } catch (const Error&) {
            label = -1;
        }
    }
    if (label < 0 || label >= config_.classes || label >= m->atlas.classes())
        return error_reply(400, "invalid_label", "unknown label");
    const auto count = req.value("count", 1LL);
    if (count < 0 || static_cast<std::size_t>(count) > config_.max_generate)
        return error_reply(400, "bad_request", "count must be in [0, " + std::to_string(config_.max_generate) + "]");
    const std::uint64_t seed =
        req.contains("seed") ? req.at("seed").get<std::uint64_t>() : 0x5eedULL + generation_counter_.fetch_add(1);

    std::vector<Sequence> seqs;
    {
        FifoGate::Ticket ticket(generation_gate_);
        RngStream rng(seed);
        seqs = sample_conditional(m->atlas, m->model, label, static_cast<std::size_t>(count), rng);
    }
    const std::vector<Edge> skeleton = d && !d->clips.empty() ? d->clips.front().skeleton : std::vector<Edge>{};
    json sequences = json::array();
    for (const auto& s : seqs)
        sequences.push_back({{"len", s.length()},
                             {"J", s.joint_count()},
                             {"frames", frames_json(s.poses)},
                             {"skeleton", skeleton_json(skeleton)}});
    GenerationManifest manifest{label, names.name(label), seed, seqs.size(), m->atlas_hash, m->checkpoint_hash};
    return ok(200, {{"label", label},
                    {"label_name", names.name(label)},
                    {"sequences", std::move(sequences)},
                    {"manifest", manifest}});
}

void Service::install_routes() {
    server_ = std::make_unique<httplib::Server>();
    auto route = [this](const httplib::Request& req, httplib::Response& res) {
        std::map<std::string, std::string> query;
        for (const auto& [k, v] : req.params) query.emplace(k, v);
        const Reply r = handle(req.method, req.path, query, req.body);
        res.status = r.status;
        res.set_content(r.body.dump(), "application/json");
    };
    const std::string any = R"(/.*)";
    server_->Get(any, route);
    server_->Post(any, route);
    server_->Put(any, route);
    server_->Delete(any, route);
}

bool Service::listen() {
    install_routes();
    return server_->listen(config_.host, config_.port);
}

int Service::bind_any_port() {
    install_routes();
    return server_->bind_to_any_port(config_.host);
}

void Service::serve() {
    if (!server_) throw PreconditionError("serve() before bind");
    server_->listen_after_bind();
}

void Service::stop() {
    if (server_) server_->stop();
}

}  // namespace effortvae
