#include "promptleak/datasets.hpp"
#include "promptleak/jsonl.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include <unistd.h>

using namespace promptleak;
namespace fs = std::filesystem;

namespace {

/// A scratch file removed at scope exit.
struct TempFile {
    fs::path path;
    explicit TempFile(const std::string& content, const std::string& ext = ".txt") {
        static int counter = 0;
        path = fs::temp_directory_path() /
               ("promptleak_ds_" + std::to_string(::getpid()) + "_" + std::to_string(counter++) + ext);
        std::ofstream(path, std::ios::binary) << content;
    }
    ~TempFile() { fs::remove(path); }
    std::string str() const { return path.string(); }
};

std::string words(std::size_t n) {
    std::string s;
    for (std::size_t i = 0; i < n; ++i) s += (i ? " w" : "w") + std::to_string(i);
    return s;
}

ConversationRecord conv(std::string id, std::vector<Turn> turns) { return {std::move(id), std::move(turns)}; }

} // namespace

TEST(LoadShareGpt, WellFormedEmptyAndBroken) {
    TempFile three(R"([{"id":"a","conversations":[{"from":"human","value":"hi"},{"from":"gpt","value":"yo"}]},
                      {"id":"b","conversations":[]},
                      {"conversations":[{"from":"user","value":"x"}]}])");
    const auto recs = load_sharegpt(three.str());
    ASSERT_EQ(recs.size(), 3u);
    EXPECT_EQ(recs[0].turns[0].role, "user");
    EXPECT_EQ(recs[0].turns[1].role, "assistant");
    EXPECT_EQ(recs[2].id, "sharegpt-2");

    TempFile empty("[]");
    EXPECT_TRUE(load_sharegpt(empty.str()).empty());

    TempFile missing(R"([{"id":"a","conversations":[]},{"id":"b"}])");
    try {
        load_sharegpt(missing.str());
        FAIL() << "expected IngestionError";
    } catch (const IngestionError& e) {
        EXPECT_EQ(e.record_index(), 1);
    }
    TempFile garbage("{not json");
    EXPECT_THROW(load_sharegpt(garbage.str()), IngestionError);
    TempFile object(R"({"id":"a"})");
    EXPECT_THROW(load_sharegpt(object.str()), IngestionError);
    EXPECT_THROW(load_sharegpt("/nonexistent.json"), IngestionError);
}

TEST(FilterPrompts, IncompleteAndLengthRules) {
    const std::vector<ConversationRecord> recs = {
        conv("assistant-first", {{"assistant", "hello"}, {"user", "q"}}),
        conv("ok", {{"user", "first"}, {"assistant", "a"}, {"user", "second"}}),
        conv("system-then-user", {{"system", "sys"}, {"user", "u"}}),
        conv("blank", {{"user", "  \n"}}),
        conv("none", {}),
        conv("len400", {{"user", words(400)}}),
        conv("len401", {{"user", words(401)}}),
    };
    const auto out = filter_prompts(recs);
    std::vector<std::string> ids;
    for (const auto& p : out) ids.push_back(p.id);
    EXPECT_EQ(ids, (std::vector<std::string>{"ok", "system-then-user", "len400"}));
    EXPECT_EQ(out[0].text, "first");
    EXPECT_EQ(out[0].source, PromptSource::sharegpt);
}

TEST(FilterPrompts, PluggableCounterAndDuplicateIds) {
    FilterOptions opt;
    opt.count_tokens = [](const std::string& s) { return s.size(); };
    opt.max_tokens = 3;
    const auto out = filter_prompts({conv("a", {{"user", "abc"}}), conv("b", {{"user", "abcd"}})}, opt);
    ASSERT_EQ(out.size(), 1u);

    log::ScopedCapture capture;
    const auto dup = filter_prompts({conv("x", {{"user", "1"}}), conv("x", {{"user", "2"}}), conv("x", {{"user", "3"}})});
    ASSERT_EQ(dup.size(), 3u);
    EXPECT_EQ(dup[1].id, "x#2");
    EXPECT_EQ(dup[2].id, "x#3");
    EXPECT_EQ(capture.warnings().size(), 2u);
}

TEST(FilterPrompts, IsAFixedPoint) {
    const auto first = filter_prompts(load_sharegpt(PROMPTLEAK_DATA_DIR "/prompts/sharegpt_sample.json"));
    std::vector<ConversationRecord> rewrapped;
    for (const auto& p : first) rewrapped.push_back(conv(p.id, {{"user", p.text}}));
    const auto second = filter_prompts(rewrapped);
    EXPECT_EQ(first, second);
    for (const auto& p : first) EXPECT_FALSE(p.text.empty());
}

TEST(FilterPrompts, ShippedSampleKeepsEnoughPrompts) {
    const auto prompts = filter_prompts(load_sharegpt(PROMPTLEAK_DATA_DIR "/prompts/sharegpt_sample.json"));
    EXPECT_EQ(prompts.size(), 54u);
    std::set<std::string> ids;
    for (const auto& p : prompts) EXPECT_TRUE(ids.insert(p.id).second);
}

TEST(LoadPromptList, ShippedListHas153Prompts) {
    const auto prompts = load_prompt_list(PROMPTLEAK_DATA_DIR "/prompts/awesome_prompts.csv");
    ASSERT_EQ(prompts.size(), 153u);
    EXPECT_EQ(prompts.front().id, "awesome-001");
    EXPECT_EQ(prompts.back().id, "awesome-153");
    for (const auto& p : prompts) EXPECT_EQ(p.source, PromptSource::awesome);
}

TEST(LoadPromptList, QuotingAndEmptyCells) {
    TempFile f("\xEF\xBB\xBF" "act,prompt\r\n"
               "\"Chef\",\"Cook, taste, and \"\"plate\"\" it\"\r\n"
               "Empty,\n"
               "Poet,\"Line one\nline two\"\n",
               ".csv");
    log::ScopedCapture capture;
    const auto p = load_prompt_list(f.str());
    ASSERT_EQ(p.size(), 2u);
    EXPECT_EQ(p[0].text, "Cook, taste, and \"plate\" it");
    EXPECT_EQ(p[1].text, "Line one\nline two");
    EXPECT_EQ(p[1].id, "awesome-003");
    ASSERT_EQ(capture.warnings().size(), 1u);
    EXPECT_NE(capture.warnings()[0].find("Empty"), std::string::npos);
}

TEST(LoadPromptList, MalformedCsv) {
    TempFile no_header("name,text\na,b\n", ".csv");
    EXPECT_THROW(load_prompt_list(no_header.str()), IngestionError);
    TempFile ragged("act,prompt\na,b,c\n", ".csv");
    EXPECT_THROW(load_prompt_list(ragged.str()), IngestionError);
    TempFile unterminated("act,prompt\na,\"b\n", ".csv");
    EXPECT_THROW(load_prompt_list(unterminated.str()), IngestionError);
    TempFile stray("act,prompt\na,b\"c\n", ".csv");
    EXPECT_THROW(load_prompt_list(stray.str()), IngestionError);
    TempFile empty("", ".csv");
    EXPECT_THROW(load_prompt_list(empty.str()), IngestionError);
}

TEST(SampleSplit, DeterministicDisjointAndSized) {
    std::vector<PromptRecord> prompts;
    for (int i = 0; i < 1000; ++i) prompts.push_back({"p" + std::to_string(i), "text " + std::to_string(i)});
    const auto a = sample_split(prompts, {200, 200, 7}), b = sample_split(prompts, {200, 200, 7});
    EXPECT_EQ(a.test, b.test);
    EXPECT_EQ(a.dev, b.dev);
    ASSERT_EQ(a.test.size(), 200u);
    ASSERT_EQ(a.dev.size(), 200u);
    std::set<std::string> test_ids;
    for (const auto& p : a.test) {
        EXPECT_EQ(p.split, Split::test);
        test_ids.insert(p.id);
    }
    for (const auto& p : a.dev) {
        EXPECT_EQ(p.split, Split::dev);
        EXPECT_FALSE(test_ids.contains(p.id));
    }
    EXPECT_NE(sample_split(prompts, {200, 200, 8}).test, a.test);
}

TEST(SampleSplit, FullPartitionAndErrors) {
    std::vector<PromptRecord> prompts;
    for (int i = 0; i < 400; ++i) prompts.push_back({"p" + std::to_string(i), "t"});
    const auto s = sample_split(prompts, {200, 200, 1});
    std::set<std::string> all;
    for (const auto& p : s.test) all.insert(p.id);
    for (const auto& p : s.dev) all.insert(p.id);
    EXPECT_EQ(all.size(), 400u);
    EXPECT_THROW(sample_split(prompts, {300, 101, 1}), SplitError);
}

TEST(Jsonl, PromptsRoundTrip) {
    const std::vector<PromptRecord> prompts = {{"a", "x\ny", PromptSource::awesome, Split::dev},
                                               {"b", "z", PromptSource::sharegpt, Split::test}};
    TempFile f("", ".jsonl");
    jsonl::write(f.str(), prompts);
    EXPECT_EQ(jsonl::read<PromptRecord>(f.str()), prompts);
    std::ofstream(f.path, std::ios::app) << "{broken\n";
    EXPECT_THROW(jsonl::read<PromptRecord>(f.str()), IngestionError);
}
