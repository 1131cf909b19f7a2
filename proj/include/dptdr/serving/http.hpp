#pragma once

#include <memory>
#include <string>
#include <thread>

#include <httplib.h>

#include "dptdr/serving/service.hpp"

namespace dptdr::serving {

inline constexpr const char* kBinaryVectorType = "application/octet-stream";

/// HTTP/1.1 front end for an EncoderService.
///   GET  /health   -> {status, fingerprint}
///   GET  /model    -> {fingerprint, config, registered_prompts}
///   POST /prompts  -> {prompt_id}; body is a prompt file (JSON), a JSON
///                     object {"payload_base64": ...}, or multipart with a
///                     "prompts" file part
///   POST /encode   -> EncodeResponse as JSON, or raw f32 little-endian with
///                     "Accept: application/octet-stream"
class HttpServer {
  public:
    explicit HttpServer(EncoderService& service) : m_service(service) { routes(); }

    ~HttpServer() { stop(); }

    HttpServer(const HttpServer&) = delete;
    HttpServer& operator=(const HttpServer&) = delete;

    /// Binds and serves on a background thread. Port 0 picks a free port.
    int start(const std::string& host, int port)
    {
        const int bound = port == 0 ? m_server.bind_to_any_port(host) : (m_server.bind_to_port(host, port) ? port : -1);
        if (bound < 0) {
            throw Error("bind_failed", "serve: cannot bind " + host + ":" + std::to_string(port));
        }
        m_thread = std::thread([this] { m_server.listen_after_bind(); });
        m_server.wait_until_ready();
        return bound;
    }

    /// Serves on the calling thread until stopped.
    void run(const std::string& host, int port)
    {
        if (!m_server.listen(host, port)) {
            throw Error("bind_failed", "serve: cannot bind " + host + ":" + std::to_string(port));
        }
    }

    void stop()
    {
        m_server.stop();
        if (m_thread.joinable()) {
            m_thread.join();
        }
    }

  private:
    static void send_error(httplib::Response& res, const ServiceError& e)
    {
        res.status = e.status();
        res.set_content(e.body().dump(), "application/json");
    }

    template <class F>
    void guarded(httplib::Response& res, F&& f)
    {
        try {
            f();
        } catch (const ServiceError& e) {
            send_error(res, e);
        } catch (const Error& e) {
            send_error(res, ServiceError(400, e.code(), e.what()));
        } catch (const std::exception& e) {
            send_error(res, ServiceError(500, "internal", e.what()));
        }
    }

    static json parse_body(const std::string& body)
    {
        try {
            return json::parse(body);
        } catch (const json::exception& e) {
            throw ServiceError(400, "bad_request", std::string("body is not valid JSON: ") + e.what());
        }
    }

    void routes()
    {
        m_server.Get("/health", [this](const httplib::Request&, httplib::Response& res) {
            res.set_content(m_service.health().dump(), "application/json");
        });
        m_server.Get("/model", [this](const httplib::Request&, httplib::Response& res) {
            res.set_content(m_service.model_info().dump(), "application/json");
        });
        m_server.Post("/prompts", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                json payload;
                if (req.is_multipart_form_data()) {
                    if (!req.has_file("prompts")) {
                        throw ServiceError(400, "bad_request", "multipart body needs a 'prompts' part");
                    }
                    payload = parse_body(req.get_file_value("prompts").content);
                } else {
                    payload = parse_body(req.body);
                    if (payload.is_object() && payload.contains("payload_base64")) {
                        payload = parse_body(io::base64_decode(payload.at("payload_base64").get<std::string>()));
                    }
                }
                const auto id = m_service.register_prompts(payload);
                res.status = 201;
                res.set_content(json{{"prompt_id", id}}.dump(), "application/json");
            });
        });
        m_server.Post("/encode", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                const auto r = m_service.encode(parse_encode_request(parse_body(req.body)));
                if (req.get_header_value("Accept") == kBinaryVectorType) {
                    res.set_header("X-Model-Fingerprint", r.fingerprint);
                    res.set_header("X-Timing-Ms", render_number(r.timing_ms, Precision::f64));
                    res.set_content(encode_response_binary(r), kBinaryVectorType);
                } else {
                    res.set_content(encode_response_json(r), "application/json");
                }
            });
        });
        m_server.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
            if (res.body.empty()) {
                ServiceError e(res.status, res.status == 404 ? "not_found" : "http_error",
                               "no handler for " + req.method + " " + req.path);
                res.set_content(e.body().dump(), "application/json");
            }
        });
    }

    EncoderService& m_service;
    httplib::Server m_server;
    std::thread m_thread;
};

}  // namespace dptdr::serving
