mod args;
mod commands;
mod error;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenDomain(a) => commands::gen_domain(a),
        Command::GenCorpus(a) => commands::gen_corpus(a),
        Command::BuildVocab(a) => commands::build_vocab_cmd(a),
        Command::Init(a) => commands::init(a),
        Command::Pretrain(a) => commands::pretrain(a),
        Command::Distill(a) => commands::distill_cmd(a),
        Command::Train(a) => commands::train(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Track(a) => commands::track(a),
        Command::SizeReport(a) => commands::size_report(a),
        Command::Bench(a) => commands::bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
