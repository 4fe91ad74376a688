#pragma once

// TCP front end for lab sessions. Each frame is a 4-byte big-endian length
// followed by that many bytes of UTF-8 JSON. One connection = one session.

#include <filesystem>
#include <fstream>
#include <list>

#include <boost/asio.hpp>

#include "lab_service.hpp"

namespace trap::net {

using boost::asio::ip::tcp;

inline constexpr std::uint32_t max_frame_bytes = 16u << 20;

inline std::string encode_frame(const nlohmann::json& j) {
    const std::string body = j.dump();
    if (body.size() > max_frame_bytes) throw invalid_input("frame too large");
    const auto n = static_cast<std::uint32_t>(body.size());
    std::string out{static_cast<char>(n >> 24), static_cast<char>(n >> 16), static_cast<char>(n >> 8), static_cast<char>(n)};
    return out + body;
}

inline void write_frame(tcp::socket& s, const nlohmann::json& j) { boost::asio::write(s, boost::asio::buffer(encode_frame(j))); }

/// Next frame body, or nullopt when the peer closed cleanly between frames.
inline std::optional<std::string> read_frame_text(tcp::socket& s) {
    std::array<unsigned char, 4> hdr{};
    boost::system::error_code ec;
    boost::asio::read(s, boost::asio::buffer(hdr), ec);
    if (ec == boost::asio::error::eof) return std::nullopt;
    if (ec) throw boost::system::system_error(ec);
    const std::uint32_t n = (std::uint32_t{hdr[0]} << 24) | (std::uint32_t{hdr[1]} << 16) | (std::uint32_t{hdr[2]} << 8) | hdr[3];
    if (n > max_frame_bytes) throw invalid_input("frame length " + std::to_string(n) + " exceeds limit");
    std::string body(n, '\0');
    boost::asio::read(s, boost::asio::buffer(body));
    return body;
}

inline std::optional<nlohmann::json> read_frame(tcp::socket& s) {
    auto t = read_frame_text(s);
    if (!t) return std::nullopt;
    return nlohmann::json::parse(*t);
}

/// Greeting sent once per connection before any state.
inline nlohmann::json hello_message(const LabSession& s, double rate_hz) {
    const auto& l = s.config().limits;
    return {{"v", protocol_version},
            {"type", "hello"},
            {"rate_hz", rate_hz},
            {"y_null_mm", s.y_null() * 1e3},
            {"config", s.config()},
            {"limits",
             {{"central_v", {l.central_min, l.central_max}},
              {"variac_rms", {l.variac_min, l.variac_max}},
              {"endcap_v", {l.endcap_min, l.endcap_max}},
              {"speed", {l.speed_min, l.speed_max}},
              {"max_particles", l.max_load}}}};
}

struct ServerOptions {
    SessionConfig session{};
    unsigned short port = 7070;  // 0 picks a free port
    double rate_hz = 60.0;
    std::size_t subscriber_capacity = 8;
    std::filesystem::path log_dir;  // empty: no session logs
};

class Server {
public:
    explicit Server(ServerOptions opt)
        : opt_(std::move(opt)), acceptor_(io_, tcp::endpoint(boost::asio::ip::address_v4::loopback(), opt_.port)) {
        if (!opt_.log_dir.empty()) std::filesystem::create_directories(opt_.log_dir);
    }
    ~Server() { stop(); }

    unsigned short port() const { return acceptor_.local_endpoint().port(); }

    /// Blocks until stop().
    void run() {
        accept_next();
        io_.run();
        std::list<std::thread> workers;
        {
            std::lock_guard lk(m_);
            for (auto& c : conns_) shutdown(*c->socket);
            workers.swap(workers_);
        }
        for (auto& t : workers) t.join();
    }

    void stop() {
        boost::asio::post(io_, [this] {
            boost::system::error_code ec;
            acceptor_.close(ec);
        });
    }

private:
    struct Conn {
        std::unique_ptr<tcp::socket> socket;
    };

    static void shutdown(tcp::socket& s) {
        boost::system::error_code ec;
        s.shutdown(tcp::socket::shutdown_both, ec);
    }

    void accept_next() {
        acceptor_.async_accept([this](boost::system::error_code ec, tcp::socket sock) {
            if (ec) return;  // acceptor closed
            auto c = std::make_shared<Conn>(Conn{std::make_unique<tcp::socket>(std::move(sock))});
            std::lock_guard lk(m_);
            conns_.push_back(c);
            workers_.emplace_back([this, c, n = count_++] { serve(c, n); });
            accept_next();
        });
    }

    void serve(std::shared_ptr<Conn> c, int n) {
        auto& sock = *c->socket;
        std::ofstream log;
        if (!opt_.log_dir.empty()) log.open(opt_.log_dir / ("session-" + std::to_string(n) + ".jsonl"));
        std::mutex write_m;
        auto send = [&](const nlohmann::json& j) {
            std::lock_guard lk(write_m);
            write_frame(sock, j);
        };
        try {
            SessionRunner runner(opt_.session, log.is_open() ? &log : nullptr, opt_.rate_hz);
            send(hello_message(runner.session(), opt_.rate_hz));
            auto sub = runner.subscribe(opt_.subscriber_capacity);
            std::atomic<bool> alive{true};
            runner.start();
            std::thread writer([&] {
                try {
                    while (alive) {
                        if (auto st = sub->pop(std::chrono::milliseconds(100))) send(*st);
                    }
                } catch (const std::exception&) {
                    alive = false;
                    shutdown(sock);
                }
            });
            try {
                while (alive) {
                    auto text = read_frame_text(sock);
                    if (!text) break;
                    nlohmann::json msg;
                    try {
                        msg = nlohmann::json::parse(*text);
                    } catch (const nlohmann::json::parse_error& e) {
                        send({{"v", protocol_version}, {"type", "ack"}, {"id", nullptr}, {"ok", false},
                              {"error", {{"code", "bad_command"}, {"message", e.what()}}}});
                        continue;
                    }
                    send(runner.submit(std::move(msg)).get());
                }
            } catch (const std::exception&) {
                // peer vanished or sent an oversized frame
            }
            alive = false;
            runner.stop();
            writer.join();
            runner.close_log();
        } catch (const std::exception&) {
        }
        shutdown(sock);
        std::lock_guard lk(m_);
        std::erase(conns_, c);
    }

    ServerOptions opt_;
    boost::asio::io_context io_;
    tcp::acceptor acceptor_;
    std::mutex m_;
    std::vector<std::shared_ptr<Conn>> conns_;
    std::list<std::thread> workers_;
    int count_ = 0;
};

/// Minimal blocking client.
class Client {
public:
    Client(const std::string& host, unsigned short port) : sock_(io_) {
        tcp::resolver r(io_);
        boost::asio::connect(sock_, r.resolve(host, std::to_string(port)));
    }
    void send(const nlohmann::json& j) { write_frame(sock_, j); }
    void send_raw(const std::string& bytes) { boost::asio::write(sock_, boost::asio::buffer(bytes)); }
    nlohmann::json recv() {
        auto j = read_frame(sock_);
        if (!j) throw std::runtime_error("server closed the connection");
        return *j;
    }
    /// Reads until a message of the given type arrives.
    nlohmann::json recv_type(const std::string& type) {
        for (;;) {
            auto j = recv();
            if (j.value("type", "") == type) return j;
        }
    }
    void close() {
        boost::system::error_code ec;
        sock_.shutdown(tcp::socket::shutdown_both, ec);
        sock_.close(ec);
    }

private:
    boost::asio::io_context io_;
    tcp::socket sock_;
};

}  // namespace trap::net
