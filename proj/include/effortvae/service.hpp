// SPDX-License-Identifier: Apache-2.0
//
// HTTP JSON API for the labeling / generation studio:
//
//   GET  /api/dataset/info
//   GET  /api/sequence?clip=&start=&len=
//   POST /api/label      {clip, start, len, label, overwrite?}
//   POST /api/generate   {label, count, seed?}
//
// Every response body is a JSON object carrying "schema_version". Handlers are
// plain functions of (method, path, query, body) so they can be exercised
// without a socket; Server wraps them in cpp-httplib.
#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "effortvae/generator.hpp"
#include "effortvae/label_store.hpp"
#include "effortvae/model.hpp"
#include "effortvae/motion_data.hpp"

namespace httplib {
class Server;
}

namespace effortvae {

inline constexpr int kSchemaVersion = 1;

/// Dataset summary shared by `ingest` and GET /api/dataset/info.
nlohmann::json dataset_summary(std::span<const MotionClip> clips, std::size_t window, std::size_t stride,
                               const LabelTable* labels);

struct ServiceConfig {
    std::string host = "127.0.0.1";
    int port = 8080;
    std::size_t window = 40;
    std::size_t stride = 1;
    int classes = 3;
    std::size_t max_generate = 256;

    /// Overrides from EFFORT_HOST, EFFORT_PORT, EFFORT_WINDOW, EFFORT_STRIDE,
    /// EFFORT_CLASSES and EFFORT_MAX_GENERATE.
    void apply_env();
};

struct Reply {
    int status = 200;
    nlohmann::json body;
};

/// Session state: dataset (immutable once loaded), label store, and at most one
/// model with its atlas.
class Service {
public:
    explicit Service(ServiceConfig config);
    ~Service();

    const ServiceConfig& config() const noexcept { return config_; }

    void load_dataset(std::vector<MotionClip> clips);
    void open_labels(const std::filesystem::path& csv);
    void load_model(Model model, LatentAtlas atlas, std::string checkpoint_hash);

    Reply handle(const std::string& method, const std::string& path, const std::map<std::string, std::string>& query,
                 const std::string& body);

    /// Binds and serves until stop(). Returns false if the socket cannot be bound.
    bool listen();
    /// Binds to an ephemeral port and returns it (-1 on failure); call serve() next.
    int bind_any_port();
    void serve();
    void stop();

private:
    Reply dataset_info() const;
    Reply sequence(const std::map<std::string, std::string>& query) const;
    Reply post_label(const std::string& body);
    Reply generate(const std::string& body);
    void install_routes();

    struct Dataset {
        std::vector<MotionClip> clips;
        std::map<std::string, std::size_t> by_id;
        WindowIndex windows;
    };
    struct Loaded {
        Model model;
        LatentAtlas atlas;
        std::string checkpoint_hash;
        std::string atlas_hash;
    };

    // FIFO admission for model evaluation: one at a time, in arrival order.
    class FifoGate {
    public:
        class Ticket {
        public:
            explicit Ticket(FifoGate& gate);
            ~Ticket();

        private:
            FifoGate& gate_;
        };

    private:
        std::mutex mutex_;
        std::condition_variable cv_;
        std::uint64_t next_ticket_ = 0;
        std::uint64_t serving_ = 0;
    };

    ServiceConfig config_;
    std::shared_ptr<const Dataset> dataset_;
    std::unique_ptr<LabelStore> labels_;
    std::shared_ptr<const Loaded> model_;
    mutable std::mutex state_mutex_;
    FifoGate generation_gate_;
    std::atomic<std::uint64_t> generation_counter_{0};
    std::unique_ptr<httplib::Server> server_;
};

}  // namespace effortvae
