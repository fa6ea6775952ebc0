#include <gtest/gtest.h>

#include <chrono>
#include <thread>

#include "mordal/external_oracle.hpp"
#include "mordal/parallel.hpp"

using mordal::Candidate;
using mordal::ErrorKind;
using mordal::ExternalOracle;
using namespace std::chrono_literals;

namespace {

std::vector<std::string> trainer(const std::string& mode) { return {ECHO_TRAINER, mode}; }

const Candidate kC{"ve", "llm"};

template <typename F>
const mordal::OracleError expect_oracle_error(F&& f, ErrorKind kind) {
  try {
    f();
  } catch (const mordal::OracleError& e) {
    EXPECT_EQ(e.kind(), kind) << e.what();
    return e;
  }
  ADD_FAILURE() << "no oracle error";
  return mordal::OracleError(ErrorKind::kIo, "none");
}

}  // namespace

TEST(ExternalOracle, EchoTrainerReturnsVerbatim) {
  ExternalOracle o(trainer("ok"));
  const auto rec = o.query(kC, 0.25);
  EXPECT_EQ(rec.error, 0.5);
  EXPECT_EQ(rec.cost, 0.25);
  EXPECT_EQ(rec.candidate, kC);
  // No checkpoint accounting on our side.
  EXPECT_EQ(o.query(kC, 0.25).cost, 0.25);
}

TEST(ExternalOracle, ZeroErrorIsProtocolError) {
  ExternalOracle o(trainer("zero-error"));
  const auto e = expect_oracle_error([&] { o.query(kC, 0.5); }, ErrorKind::kProtocol);
  EXPECT_NE(e.payload().find("\"error\":0.0"), std::string::npos) << e.payload();
}

TEST(ExternalOracle, IdMismatch) {
  ExternalOracle o(trainer("bad-id"));
  expect_oracle_error([&] { o.query(kC, 0.5); }, ErrorKind::kProtocol);
}

TEST(ExternalOracle, MalformedResponseCarriesPayload) {
  ExternalOracle o(trainer("malformed"));
  const auto e = expect_oracle_error([&] { o.query(kC, 0.5); }, ErrorKind::kProtocol);
  EXPECT_EQ(e.payload(), "this is not json");
}

TEST(ExternalOracle, ExitIsOracleFailure) {
  ExternalOracle o(trainer("exit"));
  const auto e = expect_oracle_error([&] { o.query(kC, 0.5); }, ErrorKind::kOracle);
  EXPECT_NE(std::string(e.what()).find("exit status 3"), std::string::npos) << e.what();
}

TEST(ExternalOracle, Timeout) {
  ExternalOracle o(trainer("hang"), 200ms);
  const auto start = std::chrono::steady_clock::now();
  const auto e = expect_oracle_error([&] { o.query(kC, 0.5); }, ErrorKind::kOracle);
  EXPECT_NE(std::string(e.what()).find("timed out"), std::string::npos);
  EXPECT_LT(std::chrono::steady_clock::now() - start, 5s);
}

TEST(ExternalOracle, HandshakeFailures) {
  expect_oracle_error([] { ExternalOracle o(trainer("bad-hello")); }, ErrorKind::kProtocol);
  expect_oracle_error([] { ExternalOracle o({"/nonexistent/trainer"}); }, ErrorKind::kOracle);
  EXPECT_THROW(ExternalOracle(std::vector<std::string>{}), mordal::Error);
}

TEST(ExternalOracle, RatioValidatedBeforeSending) {
  ExternalOracle o(trainer("ok"));
  try {
    o.query(kC, 1.5);
    FAIL();
  } catch (const mordal::Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kUnsupportedRatio);
  }
  EXPECT_EQ(o.query(kC, 0.5).error, 0.5);
}

TEST(ExternalOracle, PoolServesConcurrentQueries) {
  ExternalOracle o(trainer("ok"), 10s, 3);
  std::vector<double> costs(12);
  mordal::parallel_for(
      costs.size(), [&](std::size_t i) { costs[i] = o.query(kC, 0.01 * static_cast<double>(i + 1)).cost; }, 3);
  for (std::size_t i = 0; i < costs.size(); ++i) EXPECT_EQ(costs[i], 0.01 * static_cast<double>(i + 1));
  auto f = o.fresh();
  EXPECT_EQ(f->query(kC, 0.5).error, 0.5);
}

TEST(ExternalOracle, FailedWorkerIsReplaced) {
  ExternalOracle o(trainer("ok"));
  EXPECT_EQ(o.query(kC, 0.5).error, 0.5);
  EXPECT_THROW(o.query(kC, 2.0), mordal::Error);
  EXPECT_EQ(o.query(kC, 0.25).cost, 0.25);
}
