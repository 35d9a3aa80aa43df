// promptleak: ingest prompts, attack a service, verify and evaluate.
//
//   promptleak ingest   --source sharegpt --input data.json --out prompts.jsonl
//   promptleak attack   --prompts prompts.jsonl --script leak.json --out ext.jsonl
//   promptleak verify   --extractions ext.jsonl --method p_bleu --out conf.jsonl
//   promptleak evaluate --extractions ext.jsonl --prompts prompts.jsonl --out report/
//   promptleak serve-mock --script leak.json --port 8080
//
// Options can also come from a TOML file via --config, one [section] per
// subcommand. API keys are read from the environment only.

#include "promptleak/cli.hpp"
#include "promptleak/mock_server.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <iostream>
#include <pthread.h>

namespace pl = promptleak;

namespace {

enum Exit { ok = 0, runtime_failure = 1, config_failure = 2 };

int serve_mock(const std::string& script, const std::string& host, int port) {
    auto backend = std::make_shared<pl::ScriptedBackend>(pl::ScriptedBehavior::load(script));

    // Block the stop signals before any thread exists so only sigwait sees them.
    sigset_t signals;
    sigemptyset(&signals);
    sigaddset(&signals, SIGINT);
    sigaddset(&signals, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &signals, nullptr);

    pl::MockChatServer server(backend);
    const int bound = server.bind(host, port);
    server.start_background();
    std::cout << "listening on http://" << host << ":" << bound << std::endl;

    int sig = 0;
    sigwait(&signals, &sig);
    server.stop();
    return ok;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Prompt extraction attack and evaluation harness"};
    app.require_subcommand(1);
    app.set_config("--config", "", "TOML file with option defaults, one [section] per subcommand");

    const std::map<std::string, pl::Evasion> evasions = {
        {"none", pl::Evasion::none}, {"interleave", pl::Evasion::interleave}, {"caesar", pl::Evasion::caesar}};
    const std::map<std::string, pl::ServiceMode> modes = {{"system_message", pl::ServiceMode::system_message},
                                                          {"concatenation", pl::ServiceMode::concatenation}};
    const std::map<std::string, pl::ConfidenceMethod> methods = {{"p_bleu", pl::ConfidenceMethod::p_bleu},
                                                                 {"p_cls", pl::ConfidenceMethod::p_cls}};

    pl::cli::IngestOptions ingest;
    std::size_t n_test = 0, n_dev = 0;
    auto* ingest_cmd = app.add_subcommand("ingest", "Load a prompt corpus, filter it and write prompts JSONL");
    ingest_cmd->add_option("--source", ingest.source, "Corpus format")
        ->required()
        ->check(CLI::IsMember({"sharegpt", "awesome"}));
    ingest_cmd->add_option("--input", ingest.input, "Corpus file")->required();
    ingest_cmd->add_option("--out", ingest.out, "Prompts JSONL to write")->required();
    ingest_cmd->add_option("--max-tokens", ingest.max_tokens, "Drop ShareGPT prompts longer than this")
        ->capture_default_str();
    auto* n_test_opt = ingest_cmd->add_option("--n-test", n_test, "Sample this many test prompts");
    auto* n_dev_opt = ingest_cmd->add_option("--n-dev", n_dev, "Sample this many dev prompts");
    ingest_cmd->add_option("--seed", ingest.seed, "Split sampling seed")->capture_default_str();

    pl::cli::AttackOptions attack;
    auto* attack_cmd = app.add_subcommand("attack", "Run the attack queries against every prompt");
    attack_cmd->add_option("--prompts", attack.prompts, "Prompts JSONL")->required();
    attack_cmd->add_option("--split", attack.split, "Which split to attack")
        ->check(CLI::IsMember({"test", "dev", "all"}))
        ->capture_default_str();
    auto* script_opt = attack_cmd->add_option("--script", attack.script, "Scripted backend behavior file");
    auto* endpoint_opt =
        attack_cmd->add_option("--endpoint", attack.endpoint, "Chat-completions base URL, e.g. http://127.0.0.1:8080");
    script_opt->excludes(endpoint_opt);
    attack_cmd->add_option("--model", attack.model, "Model name sent to the endpoint")->capture_default_str();
    attack_cmd->add_option("--api-key-env", attack.api_key_env, "Environment variable holding the API key")
        ->capture_default_str();
    attack_cmd->add_option("--rpm", attack.requests_per_minute, "Requests per minute cap (0 = none)");
    attack_cmd->add_option("--max-retries", attack.max_retries, "Retries per request")->capture_default_str();
    attack_cmd->add_option("--mode", attack.mode, "How prompt and query are assembled")
        ->transform(CLI::CheckedTransformer(modes, CLI::ignore_case));
    attack_cmd->add_option("--separator", attack.separator, "Prompt/query separator in concatenation mode");
    attack_cmd->add_flag("--defense", attack.defense, "Enable the n-gram output filter");
    attack_cmd->add_option("--defense-n", attack.defense_n, "n of the output filter")->capture_default_str();
    attack_cmd->add_option("--evasion", attack.evasion, "Built-in query set variant")
        ->transform(CLI::CheckedTransformer(evasions, CLI::ignore_case));
    attack_cmd->add_option("--queries", attack.queries, "Query set file; overrides --evasion");
    attack_cmd->add_option("--budget", attack.budget, "Queries per prompt (1-19)")
        ->check(CLI::Range(1, 19))
        ->capture_default_str();
    attack_cmd->add_option("--concurrency", attack.concurrency, "Prompts attacked in parallel")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    attack_cmd->add_option("--temperature", attack.temperature, "Generation temperature")->capture_default_str();
    attack_cmd->add_option("--max-new-tokens", attack.max_tokens, "Generation length cap")->capture_default_str();
    attack_cmd->add_option("--model-id", attack.model_id, "Report label for the model (default: backend name)");
    attack_cmd->add_option("--dataset-id", attack.dataset_id, "Report label for the dataset (default: prompt source)");
    attack_cmd->add_option("--condition", attack.condition, "Report label for the condition (default: from flags)");
    attack_cmd->add_option("--out", attack.out, "Extractions JSONL; appended to when resuming")->required();

    pl::cli::VerifyOptions verify;
    double verify_threshold = 0.0;
    auto* verify_cmd = app.add_subcommand("verify", "Score every extraction's confidence without groundtruth");
    verify_cmd->add_option("--extractions", verify.extractions, "Extractions JSONL")->required();
    verify_cmd->add_option("--method", verify.method, "Confidence method")
        ->transform(CLI::CheckedTransformer(methods, CLI::ignore_case));
    verify_cmd->add_option("--endpoint", verify.endpoint, "Classifier scoring base URL (p_cls)");
    auto* threshold_opt = verify_cmd->add_option("--threshold", verify_threshold, "Decision threshold override");
    verify_cmd->add_option("--samples", verify.monte_carlo_samples, "Monte Carlo orderings when k-1 > 5")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    verify_cmd->add_option("--seed", verify.seed, "Monte Carlo seed")->capture_default_str();
    verify_cmd->add_option("--out", verify.out, "Confidences JSONL")->required();

    pl::cli::EvaluateOptions evaluate;
    auto* evaluate_cmd = app.add_subcommand("evaluate", "Judge extractions and write reports");
    evaluate_cmd->add_option("--extractions", evaluate.extractions, "Extractions JSONL (repeatable)")->required();
    evaluate_cmd->add_option("--prompts", evaluate.prompts, "Groundtruth prompts JSONL (repeatable)")->required();
    evaluate_cmd->add_option("--confidences", evaluate.confidences, "Confidences JSONL (repeatable)");
    evaluate_cmd->add_option("--baseline", evaluate.baseline, "Condition label to compute deltas against");
    evaluate_cmd->add_option("--threshold", evaluate.success_threshold, "BLEU success threshold")
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();
    evaluate_cmd->add_option("--out", evaluate.out, "Report directory")->required();

    std::string serve_script, serve_host = "127.0.0.1";
    int serve_port = 0;
    auto* serve_cmd = app.add_subcommand("serve-mock", "Serve a scripted backend over the chat-completions API");
    serve_cmd->add_option("--script", serve_script, "Scripted backend behavior file")->required();
    serve_cmd->add_option("--host", serve_host, "Bind address")->capture_default_str();
    serve_cmd->add_option("--port", serve_port, "Port; 0 picks a free one")
        ->check(CLI::Range(0, 65535))
        ->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (ingest_cmd->parsed()) {
            if (n_test_opt->count() || n_dev_opt->count()) {
                ingest.n_test = n_test;
                ingest.n_dev = n_dev;
            }
            const auto n = pl::cli::cmd_ingest(ingest);
            std::cerr << "wrote " << n << " prompts to " << ingest.out << '\n';
        } else if (attack_cmd->parsed()) {
            if (!script_opt->count() && !endpoint_opt->count()) throw pl::ConfigError("attack needs --script or --endpoint");
            const auto s = pl::cli::cmd_attack(attack);
            std::cerr << "attacked " << s.attacked << " prompts, skipped " << s.skipped << " already done, "
                      << s.failed_queries << " failed queries\n";
        } else if (verify_cmd->parsed()) {
            if (threshold_opt->count()) verify.threshold = verify_threshold;
            const auto n = pl::cli::cmd_verify(verify);
            std::cerr << "scored " << n << " extractions\n";
        } else if (evaluate_cmd->parsed()) {
            const auto report = pl::cli::cmd_evaluate(evaluate);
            std::cout << pl::report_csv(report);
        } else if (serve_cmd->parsed()) {
            return serve_mock(serve_script, serve_host, serve_port);
        }
    } catch (const pl::ConfigError& e) {
        std::cerr << "promptleak: configuration error: " << e.what() << '\n';
        return config_failure;
    } catch (const pl::InvalidInput& e) {
        std::cerr << "promptleak: invalid input: " << e.what() << '\n';
        return config_failure;
    } catch (const std::exception& e) {
        std::cerr << "promptleak: " << e.what() << '\n';
        return runtime_failure;
    }
    return ok;
}
