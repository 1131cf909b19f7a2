#include <cmath>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <gtest/gtest.h>

#include "dptdr/serving/http.hpp"

using namespace dptdr;
using namespace dptdr::serving;

namespace {

const std::vector<std::string> kWords{"alpha", "beta", "gamma", "delta", "river", "stone", "cloud", "ember",
                                      "north", "south", "quiet", "loud",  "green", "amber", "swift", "slow"};

encoder::EncoderModel make_model(bool separate = false)
{
    encoder::EncoderConfig c;
    c.num_layers = 2;
    c.hidden_size = 16;
    c.num_heads = 2;
    c.ffn_size = 32;
    c.max_seq_len = 12;
    c.prompt_length = 3;
    c.separate_prompts = separate;
    std::string all;
    for (const auto& w : kWords) {
        all += w + " ";
    }
    return encoder::EncoderModel::initialize(c, text::Vocabulary::build({all}), 3, 0.2);
}

std::string random_text(std::mt19937_64& rng, std::size_t max_words)
{
    const std::size_t n = 1 + rng() % max_words;
    std::string s;
    for (std::size_t i = 0; i < n; ++i) {
        s += (i ? " " : "") + (rng() % 10 == 0 ? std::string("unseen") : kWords[rng() % kWords.size()]);
    }
    return s;
}

class ServingTest : public ::testing::Test {
  protected:
    void SetUp() override
    {
        service = std::make_unique<EncoderService>(make_model());
        server = std::make_unique<HttpServer>(*service);
        port = server->start("127.0.0.1", 0);
        client = std::make_unique<httplib::Client>("127.0.0.1", port);
    }
    void TearDown() override { server->stop(); }

    httplib::Result post(const std::string& path, const json& body, const httplib::Headers& h = {})
    {
        return client->Post(path, h, body.dump(), "application/json");
    }

    std::string register_prompts(const encoder::DualPrompts& p)
    {
        auto res = post("/prompts", encoder::dual_prompts_to_json(p));
        EXPECT_EQ(res->status, 201) << res->body;
        return json::parse(res->body).at("prompt_id").get<std::string>();
    }

    json encode(const json& req)
    {
        auto res = post("/encode", req);
        EXPECT_EQ(res->status, 200) << res->body;
        return json::parse(res->body);
    }

    std::unique_ptr<EncoderService> service;
    std::unique_ptr<HttpServer> server;
    std::unique_ptr<httplib::Client> client;
    int port = 0;
};

}  // namespace

TEST_F(ServingTest, HealthAndModel)
{
    auto h = client->Get("/health");
    ASSERT_TRUE(h);
    auto hj = json::parse(h->body);
    EXPECT_EQ(hj["status"], "ok");
    EXPECT_EQ(hj["fingerprint"], encoder::fingerprint(service->model()));
    auto m = json::parse(client->Get("/model")->body);
    EXPECT_EQ(m["config"]["hidden_size"], 16);
    EXPECT_EQ(m["fingerprint"], hj["fingerprint"]);
    auto missing = client->Get("/nope");
    EXPECT_EQ(missing->status, 404);
    EXPECT_EQ(json::parse(missing->body)["code"], "not_found");
}

TEST_F(ServingTest, DifferentialAgainstLibrary)
{
    std::mt19937_64 rng(42);
    std::vector<encoder::DualPrompts> sets;
    std::vector<std::string> ids;
    for (std::uint64_t s = 0; s < 5; ++s) {
        sets.push_back(encoder::DualPrompts::initialize(service->model().config(), "t" + std::to_string(s), s));
        ids.push_back(register_prompts(sets.back()));
    }
    const auto& model = service->model();
    const std::string fp = encoder::fingerprint(model);
    for (int i = 0; i < 1000; ++i) {
        const std::size_t k = rng() % sets.size();
        const auto text = random_text(rng, 8);
        const auto tokens = model.vocab().encode(text, 12, false);
        const auto expected = encoder::encode_vector(model, &sets[k].for_query(), tokens);
        json req{{"prompt_id", ids[k]}};
        if (i % 2 == 0) {
            req["text"] = text;
        } else {
            req["token_ids"] = tokens;
        }
        req["precision"] = "f64";
        auto r64 = encode(req);
        ASSERT_EQ(r64["fingerprint"], fp);
        auto v64 = r64["vector"].get<std::vector<double>>();
        ASSERT_EQ(v64.size(), expected.size());
        for (std::size_t j = 0; j < v64.size(); ++j) {
            ASSERT_EQ(v64[j], expected[j]) << "case " << i;
        }
        req["precision"] = "f32";
        auto v32 = encode(req)["vector"].get<std::vector<double>>();
        for (std::size_t j = 0; j < v32.size(); ++j) {
            ASSERT_LE(std::abs(v32[j] - expected[j]), 1e-6) << "case " << i;
        }
    }
}

TEST_F(ServingTest, BinaryTransport)
{
    auto p = encoder::DualPrompts::initialize(service->model().config(), "b", 1);
    const auto id = register_prompts(p);
    json req{{"prompt_id", id}, {"text", "alpha beta river"}};
    auto res = post("/encode", req, {{"Accept", kBinaryVectorType}});
    ASSERT_EQ(res->status, 200);
    EXPECT_EQ(res->get_header_value("X-Model-Fingerprint"), service->fingerprint());
    auto v = decode_binary_vector(res->body);
    auto expected = encoder::encode_vector(service->model(), &p.for_query(),
                                           service->model().vocab().encode("alpha beta river", 12));
    ASSERT_EQ(v.size(), expected.size());
    for (std::size_t j = 0; j < v.size(); ++j) {
        EXPECT_EQ(v[j], static_cast<float>(expected[j]));
    }
}

TEST_F(ServingTest, RegisteredEqualsInlineAndRepeatable)
{
    auto p = encoder::DualPrompts::initialize(service->model().config(), "x", 5);
    const auto a = register_prompts(p);
    const auto b = register_prompts(p);
    EXPECT_NE(a, b);
    json req{{"text", "cloud ember north"}, {"precision", "f64"}};
    req["prompt_id"] = a;
    auto va = encode(req)["vector"];
    req["prompt_id"] = b;
    auto vb = encode(req)["vector"];
    req.erase("prompt_id");
    req["prompts"] = encoder::dual_prompts_to_json(p);
    auto vi = encode(req)["vector"];
    EXPECT_EQ(va, vb);
    EXPECT_EQ(va, vi);
    req["role"] = "passage";
    EXPECT_EQ(encode(req)["vector"], va);
}

TEST_F(ServingTest, SeparatePromptsDifferByRole)
{
    auto c = service->model().config();
    c.separate_prompts = true;
    auto p = encoder::DualPrompts::initialize(c, "sep", 8);
    ASSERT_TRUE(p.passage.has_value());
    const auto id = register_prompts(p);
    json req{{"prompt_id", id}, {"text", "quiet green stone"}, {"precision", "f64"}};
    auto q = encode(req)["vector"];
    req["role"] = "passage";
    auto d = encode(req)["vector"];
    EXPECT_NE(q, d);
    auto lib = encoder::encode_vector(service->model(), &*p.passage,
                                      service->model().vocab().encode("quiet green stone", 12));
    EXPECT_EQ(d.get<std::vector<double>>(), lib);
}

TEST_F(ServingTest, ProtocolErrors)
{
    auto expect_error = [&](const json& body, const std::string& path, int status, const std::string& code) -> json {
        auto res = post(path, body);
        if (!res) {
            ADD_FAILURE() << "no response";
            return {};
        }
        EXPECT_EQ(res->status, status) << res->body;
        auto j = json::parse(res->body);
        EXPECT_EQ(j["code"], code);
        EXPECT_TRUE(j.contains("message"));
        EXPECT_TRUE(j.contains("detail"));
        return j;
    };
    auto cfg = service->model().config();
    cfg.prompt_length = 4;
    auto wrong_l = encoder::DualPrompts::initialize(cfg, "bad", 1);
    auto j = expect_error(encoder::dual_prompts_to_json(wrong_l), "/prompts", 422, "prompt_mismatch");
    EXPECT_EQ(j["detail"]["field"], "l");
    EXPECT_EQ(j["detail"]["expected"], 3);
    EXPECT_EQ(j["detail"]["actual"], 4);
    cfg = service->model().config();
    cfg.hidden_size = 8;
    cfg.ffn_size = 16;
    auto wrong_d = encoder::DualPrompts::initialize(cfg, "bad", 1);
    EXPECT_EQ(expect_error(encoder::dual_prompts_to_json(wrong_d), "/prompts", 422, "prompt_mismatch")["detail"]["field"],
              "d");
    expect_error(json{{"arrays", 3}}, "/prompts", 400, "bad_prompts");

    expect_error(json{{"prompt_id", "p999"}, {"text", "alpha"}}, "/encode", 404, "unknown_prompt");
    expect_error(json{{"text", "alpha"}}, "/encode", 400, "bad_request");
    expect_error(json{{"prompt_id", "p1"}}, "/encode", 400, "bad_request");
    expect_error(json{{"prompt_id", "p1"}, {"text", "a"}, {"colour", 1}}, "/encode", 400, "bad_request");
    auto p = encoder::DualPrompts::initialize(service->model().config(), "ok", 1);
    const auto id = register_prompts(p);
    std::string long_text;
    for (int i = 0; i < 20; ++i) {
        long_text += "alpha ";
    }
    expect_error(json{{"prompt_id", id}, {"text", long_text}}, "/encode", 413, "sequence_too_long");
    expect_error(json{{"prompt_id", id}, {"token_ids", {5, 6}}}, "/encode", 400, "bad_request");
    expect_error(json{{"prompt_id", id}, {"token_ids", {0, 100000}}}, "/encode", 400, "bad_request");
    expect_error(json{{"prompt_id", id}, {"text", "a"}, {"role", "doc"}}, "/encode", 400, "bad_request");
    auto raw = client->Post("/encode", "{not json", "application/json");
    EXPECT_EQ(raw->status, 400);
}

TEST_F(ServingTest, PayloadUploadVariants)
{
    auto p = encoder::DualPrompts::initialize(service->model().config(), "up", 2);
    const auto text = encoder::dual_prompts_to_json(p).dump();
    auto b64 = post("/prompts", json{{"payload_base64", io::base64_encode(text)}});
    EXPECT_EQ(b64->status, 201) << b64->body;
    httplib::MultipartFormDataItems items{{"prompts", text, "prompts.json", "application/json"}};
    auto mp = client->Post("/prompts", items);
    EXPECT_EQ(mp->status, 201) << mp->body;
    json req{{"text", "swift slow"}, {"precision", "f64"}};
    req["prompt_id"] = json::parse(b64->body)["prompt_id"];
    auto a = encode(req)["vector"];
    req["prompt_id"] = json::parse(mp->body)["prompt_id"];
    EXPECT_EQ(encode(req)["vector"], a);
}

TEST_F(ServingTest, InterleavedTenantsMatchSerialized)
{
    std::vector<std::string> ids;
    for (std::uint64_t s = 0; s < 4; ++s) {
        ids.push_back(register_prompts(
            encoder::DualPrompts::initialize(service->model().config(), "tenant" + std::to_string(s), 100 + s)));
    }
    std::mt19937_64 rng(7);
    struct Job {
        json req;
        json serial;
        json concurrent;
    };
    std::vector<Job> jobs;
    for (int i = 0; i < 200; ++i) {
        json req{{"prompt_id", ids[rng() % ids.size()]}, {"text", random_text(rng, 8)}, {"precision", "f64"}};
        jobs.push_back({req, encode(req)["vector"], {}});
    }
    std::vector<std::thread> threads;
    const std::size_t n_threads = 4;
    for (std::size_t t = 0; t < n_threads; ++t) {
        threads.emplace_back([&, t] {
            httplib::Client c("127.0.0.1", port);
            for (std::size_t i = t; i < jobs.size(); i += n_threads) {
                auto res = c.Post("/encode", jobs[i].req.dump(), "application/json");
                jobs[i].concurrent = json::parse(res->body)["vector"];
            }
        });
    }
    for (auto& th : threads) {
        th.join();
    }
    for (const auto& j : jobs) {
        EXPECT_EQ(j.serial, j.concurrent);
    }
}
